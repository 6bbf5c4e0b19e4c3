use ndarray::{Array2, Axis};
use rand::Rng;

use crate::activation::Activation;
use crate::error::{check_shape, NnError, Result};
use crate::init::glorot_uniform;
use crate::param::{HasParams, Param};

/// Fully connected layer `y = act(x W + b)`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
    pub activation: Activation,
    cache: Option<DenseCache>,
}

#[derive(Debug, Clone)]
struct DenseCache {
    x: Array2<f64>,
    z: Array2<f64>,
    y: Array2<f64>,
}

impl Dense {
    pub fn new<R: Rng>(rng: &mut R, input: usize, output: usize, activation: Activation) -> Self {
        Self::from_weights(glorot_uniform(rng, input, output), Array2::zeros((1, output)), activation)
    }

    pub fn from_weights(weight: Array2<f64>, bias: Array2<f64>, activation: Activation) -> Self {
        Self {
            weight: Param::new("dense.weight", weight),
            bias: Param::new("dense.bias", bias),
            activation,
            cache: None,
        }
    }

    pub fn input_width(&self) -> usize {
        self.weight.value.nrows()
    }

    pub fn output_width(&self) -> usize {
        self.weight.value.ncols()
    }

    /// Stateless evaluation.
    pub fn apply(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.activation.apply(&self.pre_activation(x)?))
    }

    fn pre_activation(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_width() {
            return Err(NnError::Shape {
                context: "dense input",
                expected: vec![x.nrows(), self.input_width()],
                actual: x.shape().to_vec(),
            });
        }
        Ok(x.dot(&self.weight.value) + &self.bias.value.row(0))
    }

    pub fn forward(&mut self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let z = self.pre_activation(x)?;
        let y = self.activation.apply(&z);
        self.cache = Some(DenseCache { x: x.clone(), z, y: y.clone() });
        Ok(y)
    }

    /// Accumulates parameter gradients and returns the gradient for the input.
    pub fn backward(&mut self, dy: &Array2<f64>) -> Result<Array2<f64>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| NnError::Config("dense backward without forward".into()))?;
        check_shape("dense upstream gradient", cache.y.shape(), dy.shape())?;
        let dz = self.activation.backward(&cache.z, &cache.y, dy);
        self.weight.grad += &cache.x.t().dot(&dz);
        self.bias.grad.row_mut(0).scaled_add(1.0, &dz.sum_axis(Axis(0)));
        Ok(dz.dot(&self.weight.value.t()))
    }
}

impl HasParams for Dense {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
}
