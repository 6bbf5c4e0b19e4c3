use ndarray::Array2;

/// A trainable matrix with its gradient accumulator.
///
/// Vectors (biases, batch-norm scale and shift) are stored as `1 x n` rows so
/// that every parameter shares one representation for optimizers and
/// checkpoints.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
    /// L2 coefficient; the penalty is `l2 * sum(value^2)`.
    pub l2: f64,
    /// Rows that never receive gradient (padding and reserved embedding rows).
    pub frozen_rows: Vec<usize>,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Array2<f64>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Self {
            name: name.into(),
            value,
            grad,
            l2: 0.0,
            frozen_rows: Vec::new(),
        }
    }

    pub fn with_l2(mut self, l2: f64) -> Self {
        self.l2 = l2;
        self
    }

    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Self::new(name, Array2::zeros((rows, cols)))
    }

    pub fn shape(&self) -> [usize; 2] {
        let s = self.value.shape();
        [s[0], s[1]]
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// Whether the flat (row-major) entry `idx` lies in a frozen row.
    pub fn is_frozen_entry(&self, idx: usize) -> bool {
        let cols = self.value.ncols().max(1);
        self.frozen_rows.contains(&(idx / cols))
    }

    pub fn l2_penalty(&self) -> f64 {
        if self.l2 == 0.0 {
            return 0.0;
        }
        self.l2 * self.value.iter().map(|v| v * v).sum::<f64>()
    }

    /// Adds `2 * l2 * value` to the gradient.
    pub fn add_l2_grad(&mut self) {
        if self.l2 == 0.0 {
            return;
        }
        let k = 2.0 * self.l2;
        self.grad.zip_mut_with(&self.value, |g, v| *g += k * v);
    }
}

/// Total L2 penalty over a parameter set.
pub fn l2_penalty<'a>(params: impl IntoIterator<Item = &'a Param>) -> f64 {
    params.into_iter().map(Param::l2_penalty).sum()
}

/// Layers expose their parameters and non-trainable buffers through this trait.
pub trait HasParams {
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn params(&self) -> Vec<&Param>;

    /// Non-trainable state that still belongs in a checkpoint (running statistics).
    fn buffers_mut(&mut self) -> Vec<(&str, &mut Array2<f64>)> {
        Vec::new()
    }

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}
