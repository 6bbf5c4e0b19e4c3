use ndarray::{Array2, Axis, Zip};
use serde::{Deserialize, Serialize};

/// Elementwise (or row-wise, for softmax) output non-linearity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Softmax,
    LeakyRelu { alpha: f64 },
}

impl Activation {
    pub fn apply(&self, z: &Array2<f64>) -> Array2<f64> {
        match *self {
            Activation::Identity => z.clone(),
            Activation::Relu => z.mapv(|v| v.max(0.0)),
            Activation::Tanh => z.mapv(f64::tanh),
            Activation::LeakyRelu { alpha } => z.mapv(|v| if v > 0.0 { v } else { alpha * v }),
            Activation::Softmax => softmax_rows(z),
        }
    }

    /// Gradient with respect to the pre-activation `z`, given output `y` and upstream `dy`.
    pub fn backward(&self, z: &Array2<f64>, y: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
        match *self {
            Activation::Identity => dy.clone(),
            Activation::Relu => {
                let mut dz = dy.clone();
                Zip::from(&mut dz).and(z).for_each(|d, &zv| {
                    if zv <= 0.0 {
                        *d = 0.0
                    }
                });
                dz
            }
            Activation::LeakyRelu { alpha } => {
                let mut dz = dy.clone();
                Zip::from(&mut dz).and(z).for_each(|d, &zv| {
                    if zv <= 0.0 {
                        *d *= alpha
                    }
                });
                dz
            }
            Activation::Tanh => {
                let mut dz = dy.clone();
                Zip::from(&mut dz).and(y).for_each(|d, &yv| *d *= 1.0 - yv * yv);
                dz
            }
            Activation::Softmax => {
                let mut dz = dy.clone();
                for (mut drow, yrow) in dz.axis_iter_mut(Axis(0)).zip(y.axis_iter(Axis(0))) {
                    let dot: f64 = drow.iter().zip(yrow.iter()).map(|(a, b)| a * b).sum();
                    Zip::from(&mut drow).and(&yrow).for_each(|d, &yv| *d = yv * (*d - dot));
                }
                dz
            }
        }
    }
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let y = Activation::Softmax.apply(&array![[0.0, 0.0]]);
        assert_eq!(y, array![[0.5, 0.5]]);
    }

    #[test]
    fn leaky_relu_slope() {
        let y = Activation::LeakyRelu { alpha: 0.1 }.apply(&array![[-2.0, 3.0]]);
        assert!((y[[0, 0]] + 0.2).abs() < 1e-15);
        assert_eq!(y[[0, 1]], 3.0);
    }

    #[test]
    fn softmax_backward_matches_finite_difference() {
        let z = array![[0.3, -1.2, 2.0]];
        let dy = array![[0.7, -0.4, 0.1]];
        let act = Activation::Softmax;
        let y = act.apply(&z);
        let dz = act.backward(&z, &y, &dy);
        let eps = 1e-6;
        for j in 0..3 {
            let mut zp = z.clone();
            zp[[0, j]] += eps;
            let mut zm = z.clone();
            zm[[0, j]] -= eps;
            let fp: f64 = (act.apply(&zp) * &dy).sum();
            let fm: f64 = (act.apply(&zm) * &dy).sum();
            assert!(((fp - fm) / (2.0 * eps) - dz[[0, j]]).abs() < 1e-8);
        }
    }
}
