use ndarray::{Array2, Axis};

use crate::error::{check_shape, NnError, Result};
use crate::param::{HasParams, Param};

/// Batch normalization over the rows of a `(samples, features)` matrix.
///
/// Running statistics follow `running = momentum * running + (1 - momentum) * batch`
/// and use the biased batch variance.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Array2<f64>,
    pub running_var: Array2<f64>,
    pub momentum: f64,
    pub epsilon: f64,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    x_hat: Array2<f64>,
    inv_std: Array2<f64>,
    training: bool,
}

impl BatchNorm {
    pub fn new(features: usize, momentum: f64, epsilon: f64) -> Result<Self> {
        if epsilon <= 0.0 {
            return Err(NnError::Config(format!("batch norm epsilon must be > 0, got {epsilon}")));
        }
        if !(0.0..=1.0).contains(&momentum) {
            return Err(NnError::Config(format!("batch norm momentum must be in [0, 1], got {momentum}")));
        }
        Ok(Self {
            gamma: Param::new("bn.gamma", Array2::ones((1, features))),
            beta: Param::zeros("bn.beta", 1, features),
            running_mean: Array2::zeros((1, features)),
            running_var: Array2::ones((1, features)),
            momentum,
            epsilon,
            cache: None,
        })
    }

    pub fn features(&self) -> usize {
        self.gamma.value.ncols()
    }

    pub fn forward(&mut self, x: &Array2<f64>, training: bool) -> Result<Array2<f64>> {
        check_shape("batch norm input", &[x.nrows(), self.features()], x.shape())?;
        let n = x.nrows();
        let (mean, var) = if training && n > 0 {
            let mean = x.mean_axis(Axis(0)).expect("non-empty").insert_axis(Axis(0));
            let centered = x - &mean;
            let var = (&centered * &centered).mean_axis(Axis(0)).expect("non-empty").insert_axis(Axis(0));
            let m = self.momentum;
            self.running_mean = &self.running_mean * m + &mean * (1.0 - m);
            self.running_var = &self.running_var * m + &var * (1.0 - m);
            (mean, var)
        } else {
            (self.running_mean.clone(), self.running_var.clone())
        };
        let inv_std = var.mapv(|v| 1.0 / (v + self.epsilon).sqrt());
        let x_hat = (x - &mean) * &inv_std;
        let y = &x_hat * &self.gamma.value + &self.beta.value;
        self.cache = Some(BnCache {
            x_hat,
            inv_std,
            training: training && n > 0,
        });
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Array2<f64>) -> Result<Array2<f64>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| NnError::Config("batch norm backward without forward".into()))?;
        check_shape("batch norm upstream gradient", cache.x_hat.shape(), dy.shape())?;
        let n = dy.nrows() as f64;
        self.gamma
            .grad
            .row_mut(0)
            .scaled_add(1.0, &(dy * &cache.x_hat).sum_axis(Axis(0)));
        self.beta.grad.row_mut(0).scaled_add(1.0, &dy.sum_axis(Axis(0)));
        let dx_hat = dy * &self.gamma.value;
        if !cache.training {
            return Ok(dx_hat * &cache.inv_std);
        }
        let sum_d = dx_hat.sum_axis(Axis(0)).insert_axis(Axis(0));
        let sum_dx = (&dx_hat * &cache.x_hat).sum_axis(Axis(0)).insert_axis(Axis(0));
        let dx = (&dx_hat * n - &sum_d - &cache.x_hat * &sum_dx) * &cache.inv_std / n;
        Ok(dx)
    }
}

impl HasParams for BatchNorm {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }

    fn buffers_mut(&mut self) -> Vec<(&str, &mut Array2<f64>)> {
        vec![("bn.running_mean", &mut self.running_mean), ("bn.running_var", &mut self.running_var)]
    }
}
