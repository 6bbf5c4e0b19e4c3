use ndarray::{Array, ArrayD, Dimension};
use rand::Rng;

use crate::error::{NnError, Result};

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)` during
/// training so inference is the identity.
#[derive(Debug, Clone)]
pub struct Dropout {
    rate: f64,
    mask: Option<ArrayD<f64>>,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NnError::Config(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        Ok(Self { rate, mask: None })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Whether this layer draws random numbers in training mode.
    pub fn is_stochastic(&self) -> bool {
        self.rate > 0.0
    }

    pub fn forward<D: Dimension, R: Rng>(
        &mut self,
        x: &Array<f64, D>,
        training: bool,
        rng: &mut R,
    ) -> Array<f64, D> {
        if !training || self.rate == 0.0 {
            self.mask = None;
            return x.clone();
        }
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        let mask = x.map(|_| if rng.gen::<f64>() < keep { scale } else { 0.0 });
        let out = x * &mask;
        self.mask = Some(mask.into_dyn());
        out
    }

    pub fn backward<D: Dimension>(&mut self, dy: &Array<f64, D>) -> Array<f64, D> {
        match self.mask.take() {
            None => dy.clone(),
            Some(mask) => {
                let mask = mask
                    .into_dimensionality::<D>()
                    .expect("dropout mask matches upstream gradient rank");
                dy * &mask
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_rate_and_inference_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Array2::from_shape_fn((3, 4), |(i, j)| (i * 4 + j) as f64);
        let mut d0 = Dropout::new(0.0).unwrap();
        assert_eq!(d0.forward(&x, true, &mut rng), x);
        let mut d = Dropout::new(0.6).unwrap();
        assert_eq!(d.forward(&x, false, &mut rng), x);
    }

    #[test]
    fn keep_fraction_is_binomial() {
        // Binomial(10^4, 0.5): sd = 50, so 2% (200) is four standard deviations.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut d = Dropout::new(0.5).unwrap();
        let y = d.forward(&Array2::ones((100, 100)), true, &mut rng);
        let kept = y.iter().filter(|&&v| v != 0.0).count() as f64 / 1e4;
        assert!((kept - 0.5).abs() < 0.02, "kept fraction {kept}");
        assert!(y.iter().all(|&v| v == 0.0 || (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn rate_one_rejected() {
        assert!(Dropout::new(1.0).is_err());
    }
}
