//! The seven LSTM variants built from a [`HyperParams`] record, plus the
//! trainer (mini-batches, early stopping, resumable budgets) and checkpoints.
//!
//! Tensors inside the graph are time-major: `(time, batch, features)`.
//! Every variant ends in `Z = [v_S', v_S]` followed by the dense head and an
//! identity output layer whose logits go through softmax cross-entropy.

use std::io::{Read, Write};

use ndarray::{concatenate, s, Array2, Array3, Axis};
use pbpm_nn::activation::softmax_rows;
use pbpm_nn::container::{read_container, write_container, TensorRecord};
use pbpm_nn::loss::{inverse_frequency_weights, softmax_cross_entropy};
use pbpm_nn::{
    Activation, BatchNorm, Dense, Dropout, Embedding, HasParams, Lstm, LstmState, LrSchedule, Objective, Optimizer,
    OptimizerKind, Param,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};
use crate::eval;
use crate::vectorize::{DatasetMeta, EncodedDataset, Variant, ABSENT_INDEX, PAD_INDEX};

const CHECKPOINT_MAGIC: &[u8; 8] = b"PBPMCKPT";
const PREDICT_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchNormSpec {
    pub momentum: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayerSpec {
    pub units: usize,
    pub l2: f64,
    pub batchnorm: Option<BatchNormSpec>,
    pub dropout: Option<f64>,
}

impl LstmLayerSpec {
    pub fn plain(units: usize) -> Self {
        Self {
            units,
            l2: 0.0,
            batchnorm: None,
            dropout: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayerSpec {
    pub units: usize,
    pub l2: f64,
    pub dropout: Option<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StackRole {
    Event,
    Bin,
    Cor,
    Text,
    Fusion,
}

impl StackRole {
    pub fn name(self) -> &'static str {
        match self {
            StackRole::Event => "event",
            StackRole::Bin => "bin",
            StackRole::Cor => "cor",
            StackRole::Text => "text",
            StackRole::Fusion => "fusion",
        }
    }
}

/// Stacks a variant instantiates, in parameter order.
pub fn required_stacks(variant: Variant) -> Vec<StackRole> {
    let mut out = vec![StackRole::Event];
    if variant.needs_bin() {
        out.push(StackRole::Bin);
    }
    if variant.needs_cor() {
        out.push(StackRole::Cor);
    }
    if variant.needs_text() {
        out.push(StackRole::Text);
    }
    if variant.has_fusion() {
        out.push(StackRole::Fusion);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub event_stack: Vec<LstmLayerSpec>,
    #[serde(default)]
    pub bin_stack: Vec<LstmLayerSpec>,
    #[serde(default)]
    pub cor_stack: Vec<LstmLayerSpec>,
    #[serde(default)]
    pub text_stack: Vec<LstmLayerSpec>,
    #[serde(default)]
    pub fusion_stack: Vec<LstmLayerSpec>,
    pub dense: Vec<DenseLayerSpec>,
    pub schedule: LrSchedule,
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub verb_dim: usize,
    #[serde(default)]
    pub desc_dim: usize,
    pub batch_size: usize,
}

fn in_range(v: f64, lo: f64, hi: f64) -> bool {
    v >= lo * (1.0 - 1e-12) && v <= hi * (1.0 + 1e-12)
}

impl HyperParams {
    pub fn stack(&self, role: StackRole) -> &[LstmLayerSpec] {
        match role {
            StackRole::Event => &self.event_stack,
            StackRole::Bin => &self.bin_stack,
            StackRole::Cor => &self.cor_stack,
            StackRole::Text => &self.text_stack,
            StackRole::Fusion => &self.fusion_stack,
        }
    }

    pub fn stack_mut(&mut self, role: StackRole) -> &mut Vec<LstmLayerSpec> {
        match role {
            StackRole::Event => &mut self.event_stack,
            StackRole::Bin => &mut self.bin_stack,
            StackRole::Cor => &mut self.cor_stack,
            StackRole::Text => &mut self.text_stack,
            StackRole::Fusion => &mut self.fusion_stack,
        }
    }

    /// Plain architecture: one layer of `units` in every stack the variant
    /// needs, one ReLU dense layer, Adam at a constant rate, no regularization.
    pub fn simple(variant: Variant, units: usize, dense_units: usize, lr: f64, batch_size: usize) -> Self {
        let mut hp = HyperParams {
            event_stack: Vec::new(),
            bin_stack: Vec::new(),
            cor_stack: Vec::new(),
            text_stack: Vec::new(),
            fusion_stack: Vec::new(),
            dense: vec![DenseLayerSpec {
                units: dense_units,
                l2: 0.0,
                dropout: None,
                activation: Activation::Relu,
            }],
            schedule: LrSchedule::constant(lr),
            optimizer: OptimizerKind::adam(0.9, 0.999),
            verb_dim: if variant.needs_text() { units } else { 0 },
            desc_dim: if variant.needs_text() { units } else { 0 },
            batch_size,
        };
        for role in required_stacks(variant) {
            hp.stack_mut(role).push(LstmLayerSpec::plain(units));
        }
        hp
    }

    /// B-LSTM row of the published architecture table (Patients data).
    /// Exponential decay rate and steps are not published; 0.9 per 1000 steps
    /// is our choice.
    pub fn published_b() -> Self {
        HyperParams {
            event_stack: vec![
                LstmLayerSpec {
                    units: 160,
                    l2: 1.956e-4,
                    batchnorm: Some(BatchNormSpec {
                        momentum: 0.81,
                        epsilon: 3.345e-4,
                    }),
                    dropout: Some(0.4914),
                },
                LstmLayerSpec {
                    units: 48,
                    l2: 4.433e-3,
                    batchnorm: None,
                    dropout: Some(0.3156),
                },
            ],
            bin_stack: Vec::new(),
            cor_stack: Vec::new(),
            text_stack: Vec::new(),
            fusion_stack: Vec::new(),
            dense: vec![DenseLayerSpec {
                units: 144,
                l2: 2.017e-4,
                dropout: Some(0.4581),
                activation: Activation::Relu,
            }],
            schedule: LrSchedule::Exponential {
                initial_lr: 2.718e-3,
                decay_rate: 0.9,
                decay_steps: 1000.0,
            },
            optimizer: OptimizerKind::adam(0.93, 0.992),
            verb_dim: 0,
            desc_dim: 0,
            batch_size: 32,
        }
    }

    /// T-LSTM row under our reading of the architecture table: one event
    /// layer, three text layers after the verb/descriptor embeddings (10/40),
    /// three duration layers, one correlation layer, two fusion layers.
    pub fn published_t() -> Self {
        let l = |units, dropout, l2, bn: Option<(f64, f64)>| LstmLayerSpec {
            units,
            l2,
            batchnorm: bn.map(|(momentum, epsilon)| BatchNormSpec { momentum, epsilon }),
            dropout: Some(dropout),
        };
        HyperParams {
            event_stack: vec![l(32, 0.3215, 7.91e-5, Some((0.61, 6.057e-5)))],
            text_stack: vec![
                l(192, 0.2307, 7.738e-3, Some((0.01, 3.343e-4))),
                l(128, 0.3076, 6.582e-3, None),
                l(64, 0.2456, 1.522e-4, None),
            ],
            bin_stack: vec![
                l(64, 0.4809, 1.248e-4, None),
                l(96, 0.2327, 6.854e-5, Some((0.81, 8.913e-3))),
                l(256, 0.2903, 1.375e-3, None),
            ],
            cor_stack: vec![l(224, 0.408, 1.413e-4, Some((0.11, 1.464e-4)))],
            fusion_stack: vec![
                l(96, 0.3111, 1.632e-5, None),
                l(96, 0.2668, 2.825e-5, Some((0.51, 5.048e-4))),
            ],
            dense: vec![DenseLayerSpec {
                units: 96,
                l2: 9.832e-4,
                dropout: Some(0.4837),
                activation: Activation::Tanh,
            }],
            schedule: LrSchedule::Polynomial {
                initial_lr: 3.611e-3,
                end_lr: 3.611e-5,
                power: 1.0,
                total_steps: 10_000.0,
            },
            optimizer: OptimizerKind::adam(0.99, 0.996),
            verb_dim: 10,
            desc_dim: 40,
            batch_size: 32,
        }
    }

    /// Structural validity for building a graph (any widths allowed).
    pub fn check_structure(&self, variant: Variant) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        for role in required_stacks(variant) {
            let stack = self.stack(role);
            if stack.is_empty() {
                return bad(format!("{} needs a non-empty {} stack", variant.display_name(), role.name()));
            }
            for l in stack {
                if l.units == 0 {
                    return bad(format!("{} stack has a zero-unit layer", role.name()));
                }
                if let Some(d) = l.dropout {
                    if !(0.0..1.0).contains(&d) {
                        return bad(format!("{} stack dropout {d} outside [0, 1)", role.name()));
                    }
                }
                if l.l2 < 0.0 {
                    return bad(format!("{} stack has negative l2", role.name()));
                }
            }
        }
        if self.dense.is_empty() {
            return bad("the dense head needs at least one layer".into());
        }
        for d in &self.dense {
            if d.units == 0 || d.l2 < 0.0 || d.dropout.is_some_and(|r| !(0.0..1.0).contains(&r)) {
                return bad(format!("invalid dense layer {d:?}"));
            }
        }
        if variant.needs_text() && (self.verb_dim == 0 || self.desc_dim == 0) {
            return bad("T-LSTM needs verb and descriptor embedding widths".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        self.schedule.validate()?;
        Ok(())
    }

    /// Every field checked against the published tuning ranges; returns one
    /// message per violation.
    pub fn search_space_violations(&self, variant: Variant) -> Vec<String> {
        let mut out = Vec::new();
        for role in required_stacks(variant) {
            let stack = self.stack(role);
            if !(1..=3).contains(&stack.len()) {
                out.push(format!("{} stack has {} layers (1-3)", role.name(), stack.len()));
            }
            for (i, l) in stack.iter().enumerate() {
                let at = format!("{} layer {i}", role.name());
                if !(16..=512).contains(&l.units) || l.units % 16 != 0 {
                    out.push(format!("{at}: units {} (16-512 step 16)", l.units));
                }
                if !in_range(l.l2, 1e-5, 1e-2) {
                    out.push(format!("{at}: l2 {}", l.l2));
                }
                if let Some(bn) = l.batchnorm {
                    if !in_range(bn.momentum, 0.01, 0.999) || !in_range(bn.epsilon, 1e-5, 1e-2) {
                        out.push(format!("{at}: batch norm {bn:?}"));
                    }
                }
                if let Some(d) = l.dropout {
                    if !in_range(d, 0.2, 0.7) {
                        out.push(format!("{at}: dropout {d}"));
                    }
                }
            }
        }
        if !(1..=3).contains(&self.dense.len()) {
            out.push(format!("dense head has {} layers (1-3)", self.dense.len()));
        }
        for (i, d) in self.dense.iter().enumerate() {
            if !(16..=256).contains(&d.units) || d.units % 16 != 0 {
                out.push(format!("dense {i}: units {}", d.units));
            }
            if !in_range(d.l2, 1e-5, 1e-2) {
                out.push(format!("dense {i}: l2 {}", d.l2));
            }
            if let Some(r) = d.dropout {
                if !in_range(r, 0.2, 0.7) {
                    out.push(format!("dense {i}: dropout {r}"));
                }
            }
            match d.activation {
                Activation::Relu | Activation::Tanh | Activation::Softmax => {}
                Activation::LeakyRelu { alpha } if in_range(alpha, 0.01, 0.3) => {}
                other => out.push(format!("dense {i}: activation {other:?}")),
            }
        }
        if !in_range(self.schedule.initial_lr(), 1e-4, 1e-2) {
            out.push(format!("initial learning rate {}", self.schedule.initial_lr()));
        }
        match self.optimizer {
            OptimizerKind::Adam { beta1, beta2, .. } => {
                if !in_range(beta1, 0.85, 0.99) || !in_range(beta2, 0.99, 0.999) {
                    out.push(format!("adam betas ({beta1}, {beta2})"));
                }
            }
            OptimizerKind::Sgd { momentum } => {
                if !in_range(momentum, 0.0, 0.9) {
                    out.push(format!("sgd momentum {momentum}"));
                }
            }
            OptimizerKind::RmsProp { rho, momentum, epsilon } => {
                if !in_range(rho, 0.9, 0.999) || !in_range(momentum, 0.01, 0.9) || !in_range(epsilon, 1e-10, 1e-6) {
                    out.push(format!("rmsprop ({rho}, {momentum}, {epsilon})"));
                }
            }
        }
        if variant.needs_text() {
            for (what, d) in [("verb", self.verb_dim), ("descriptor", self.desc_dim)] {
                if !(10..=250).contains(&d) || d % 10 != 0 {
                    out.push(format!("{what} embedding width {d} (10-250 step 10)"));
                }
            }
        }
        if ![16, 31, 64, 128].contains(&self.batch_size) {
            out.push(format!("batch size {} (16, 31, 64, 128)", self.batch_size));
        }
        out
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("hyperparameters serialize");
        let hash = Sha256::digest(json.as_bytes());
        hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone)]
struct RecurrentLayer {
    lstm: Lstm,
    bn: Option<BatchNorm>,
    dropout: Option<Dropout>,
}

/// Rows of a `(time, batch)` mask that hold real events.
fn valid_rows(mask: &Array2<bool>) -> Vec<(usize, usize)> {
    mask.indexed_iter().filter(|(_, &v)| v).map(|(ix, _)| ix).collect()
}

fn gather(x: &Array3<f64>, rows: &[(usize, usize)]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), x.dim().2));
    for (r, &(t, b)) in rows.iter().enumerate() {
        out.row_mut(r).assign(&x.slice(s![t, b, ..]));
    }
    out
}

fn scatter(y: &Array2<f64>, rows: &[(usize, usize)], steps: usize, batch: usize) -> Array3<f64> {
    let mut out = Array3::zeros((steps, batch, y.ncols()));
    for (r, &(t, b)) in rows.iter().enumerate() {
        out.slice_mut(s![t, b, ..]).assign(&y.row(r));
    }
    out
}

/// Stacked LSTM layers with optional per-layer batch norm and dropout.
/// A final-state stack hands on the last layer's final `h`; otherwise the
/// full hidden sequence (zero at masked steps) is returned.
#[derive(Debug, Clone)]
pub struct LstmStack {
    layers: Vec<RecurrentLayer>,
    final_state: bool,
    mask: Option<Array2<bool>>,
}

enum StackOut {
    Seq(Array3<f64>),
    Final(Array2<f64>),
}

impl LstmStack {
    fn new(rng: &mut ChaCha8Rng, input: usize, specs: &[LstmLayerSpec], final_state: bool) -> Result<Self> {
        let mut layers = Vec::with_capacity(specs.len());
        let mut width = input;
        for spec in specs {
            let mut lstm = Lstm::new(rng, width, spec.units);
            lstm.kernel.l2 = spec.l2;
            let bn = spec
                .batchnorm
                .map(|b| BatchNorm::new(spec.units, b.momentum, b.epsilon))
                .transpose()?;
            let dropout = spec.dropout.filter(|&r| r > 0.0).map(Dropout::new).transpose()?;
            layers.push(RecurrentLayer { lstm, bn, dropout });
            width = spec.units;
        }
        Ok(Self {
            layers,
            final_state,
            mask: None,
        })
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.lstm.units())
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    fn forward(&mut self, x: &Array3<f64>, mask: &Array2<bool>, training: bool, rng: &mut ChaCha8Rng) -> Result<StackOut> {
        let n = self.layers.len();
        let rows = valid_rows(mask);
        let (steps, batch) = mask.dim();
        self.mask = Some(mask.clone());
        let mut h: Option<Array3<f64>> = None;
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let out = layer.lstm.forward(h.as_ref().unwrap_or(x), mask, None)?;
            if i + 1 == n && self.final_state {
                let mut f = out.state.h;
                if let Some(bn) = &mut layer.bn {
                    f = bn.forward(&f, training)?;
                }
                if let Some(d) = &mut layer.dropout {
                    f = d.forward(&f, training, rng);
                }
                return Ok(StackOut::Final(f));
            }
            let mut seq = out.hidden;
            if let Some(bn) = &mut layer.bn {
                // statistics over real events only; padding stays exactly zero
                seq = scatter(&bn.forward(&gather(&seq, &rows), training)?, &rows, steps, batch);
            }
            if let Some(d) = &mut layer.dropout {
                seq = d.forward(&seq, training, rng);
            }
            h = Some(seq);
        }
        Ok(StackOut::Seq(h.expect("stack has layers")))
    }

    /// Returns the gradient with respect to the stack input.
    fn backward(&mut self, grad: StackOut) -> Result<Array3<f64>> {
        let mask = self
            .mask
            .take()
            .ok_or_else(|| CoreError::Config("stack backward without forward".into()))?;
        let rows = valid_rows(&mask);
        let (steps, batch) = mask.dim();
        let n = self.layers.len();
        let (mut d_seq, mut d_fin) = match grad {
            StackOut::Seq(g) => (Some(g), None),
            StackOut::Final(g) => (None, Some(g)),
        };
        for i in (0..n).rev() {
            let layer = &mut self.layers[i];
            let units = layer.lstm.units();
            let grads = if i + 1 == n && self.final_state {
                let mut g = d_fin.take().expect("final-state gradient");
                if let Some(d) = &mut layer.dropout {
                    g = d.backward(&g);
                }
                if let Some(bn) = &mut layer.bn {
                    g = bn.backward(&g)?;
                }
                let c = Array2::zeros(g.raw_dim());
                layer
                    .lstm
                    .backward(&Array3::zeros((steps, batch, units)), Some(&LstmState { h: g, c }))?
            } else {
                let mut g = d_seq.take().expect("sequence gradient");
                if let Some(d) = &mut layer.dropout {
                    g = d.backward(&g);
                }
                if let Some(bn) = &mut layer.bn {
                    g = scatter(&bn.backward(&gather(&g, &rows))?, &rows, steps, batch);
                }
                layer.lstm.backward(&g, None)?
            };
            d_seq = Some(grads.input);
        }
        Ok(d_seq.expect("stack has layers"))
    }

    fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.lstm.params());
            if let Some(bn) = &l.bn {
                out.extend(bn.params());
            }
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.extend(l.lstm.params_mut());
            if let Some(bn) = &mut l.bn {
                out.extend(bn.params_mut());
            }
        }
        out
    }

    fn buffers_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            if let Some(bn) = &mut l.bn {
                out.push(&mut bn.running_mean);
                out.push(&mut bn.running_var);
            }
        }
        out
    }

    fn buffers(&self) -> Vec<&Array2<f64>> {
        let mut out = Vec::new();
        for l in &self.layers {
            if let Some(bn) = &l.bn {
                out.push(&bn.running_mean);
                out.push(&bn.running_var);
            }
        }
        out
    }

    fn has_active_dropout(&self) -> bool {
        self.layers.iter().any(|l| l.dropout.as_ref().is_some_and(Dropout::is_stochastic))
    }
}

#[derive(Debug, Clone)]
struct HeadLayer {
    dense: Dense,
    dropout: Option<Dropout>,
}

/// One time-major mini-batch. Categoricals are already one-hot expanded
/// except the T-LSTM text indices, which feed embedding tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub event: Array3<f64>,
    pub mask: Array2<bool>,
    pub seq: Array2<f64>,
    pub bin: Option<Array3<f64>>,
    pub cor: Option<Array3<f64>>,
    /// `(time, batch)` verb indices.
    pub verb: Option<Array2<usize>>,
    /// `(time, batch * k)` descriptor indices, slot-minor.
    pub desc: Option<Array2<usize>>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Writes the one-hot block for `indices` starting at `out[0]`. Padding and
/// absent values leave their block at zero.
fn one_hot_into(out: &mut [f64], indices: impl Iterator<Item = usize>, sizes: &[usize]) {
    let mut offset = 0;
    for (idx, &size) in indices.zip(sizes) {
        if idx != PAD_INDEX && idx != ABSENT_INDEX && idx < size {
            out[offset + idx] = 1.0;
        }
        offset += size;
    }
}

/// Builds a batch from the cases at `idx`, trimmed to the longest of them.
pub fn make_batch(ds: &EncodedDataset, idx: &[usize]) -> Batch {
    let meta = &ds.meta;
    let b = idx.len();
    let t_max = idx.iter().map(|&i| ds.lengths[i]).max().unwrap_or(0);
    let cat_w: usize = meta.event_cat_sizes.iter().sum();
    let ew = meta.event_width();
    let mut event = Array3::zeros((t_max, b, ew));
    let mut mask = Array2::from_elem((t_max, b), false);
    let mut seq = Array2::zeros((b, meta.seq_width()));
    let seq_cat_w: usize = meta.seq_cat_sizes.iter().sum();
    let mut bin = ds.bin.as_ref().map(|m| Array3::zeros((t_max, b, m.dim().2)));
    let mut cor = ds.cor.as_ref().map(|m| Array3::zeros((t_max, b, m.dim().2)));
    let k = meta.n_descriptors;
    let mut verb = ds.text.as_ref().map(|_| Array2::zeros((t_max, b)));
    let mut desc = ds.text.as_ref().map(|_| Array2::zeros((t_max, b * k)));
    for (j, &n) in idx.iter().enumerate() {
        for t in 0..ds.lengths[n].min(t_max) {
            mask[[t, j]] = true;
            let mut row = event.slice_mut(s![t, j, ..]);
            let row = row.as_slice_mut().expect("standard layout");
            one_hot_into(&mut row[..cat_w], ds.event_cat.slice(s![n, t, ..]).iter().copied(), &meta.event_cat_sizes);
            for (c, &v) in ds.event_num.slice(s![n, t, ..]).iter().enumerate() {
                row[cat_w + c] = v;
            }
            if let (Some(dst), Some(src)) = (bin.as_mut(), ds.bin.as_ref()) {
                dst.slice_mut(s![t, j, ..]).assign(&src.slice(s![n, t, ..]));
            }
            if let (Some(dst), Some(src)) = (cor.as_mut(), ds.cor.as_ref()) {
                dst.slice_mut(s![t, j, ..]).assign(&src.slice(s![n, t, ..]));
            }
            if let (Some(v), Some(d), Some(src)) = (verb.as_mut(), desc.as_mut(), ds.text.as_ref()) {
                v[[t, j]] = src[[n, t, 0]];
                for slot in 0..k {
                    d[[t, j * k + slot]] = src[[n, t, 1 + slot]];
                }
            }
        }
        let mut srow = seq.row_mut(j);
        let srow = srow.as_slice_mut().expect("standard layout");
        one_hot_into(&mut srow[..seq_cat_w], ds.seq_cat.row(n).iter().copied(), &meta.seq_cat_sizes);
        for (c, &v) in ds.seq_num.row(n).iter().enumerate() {
            srow[seq_cat_w + c] = v;
        }
    }
    Batch {
        event,
        mask,
        seq,
        bin,
        cor,
        verb,
        desc,
        labels: idx.iter().map(|&i| ds.labels[i]).collect(),
    }
}

/// A built variant: input stacks, optional fusion stack, dense head.
#[derive(Debug, Clone)]
pub struct Model {
    pub variant: Variant,
    pub hp: HyperParams,
    pub meta: DatasetMeta,
    pub seed: u64,
    event: LstmStack,
    bin: Option<LstmStack>,
    cor: Option<LstmStack>,
    verb_emb: Option<Embedding>,
    desc_emb: Option<Embedding>,
    text: Option<LstmStack>,
    fusion: Option<LstmStack>,
    dense: Vec<HeadLayer>,
    output: Dense,
    rng: ChaCha8Rng,
}

fn channel_error(variant: Variant, channel: &str) -> CoreError {
    CoreError::Config(format!(
        "{} requires {channel}, which the dataset does not provide",
        variant.display_name()
    ))
}

/// Instantiates `variant` for datasets described by `meta`.
pub fn build_model(variant: Variant, hp: &HyperParams, meta: &DatasetMeta, seed: u64) -> Result<Model> {
    hp.check_structure(variant)?;
    if meta.n_classes < 2 {
        return Err(CoreError::Config(format!("need at least 2 classes, got {}", meta.n_classes)));
    }
    if variant.needs_bin() && meta.bin_width == 0 {
        return Err(channel_error(variant, "bin_inputs"));
    }
    if variant.needs_cor() && meta.cor_width == 0 {
        return Err(channel_error(variant, "cor_inputs"));
    }
    if variant.needs_text() && (meta.verb_size == 0 || meta.desc_size == 0 || meta.n_descriptors == 0) {
        return Err(channel_error(variant, "text_inputs"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fused = variant.has_fusion();
    let event = LstmStack::new(&mut rng, meta.event_width(), &hp.event_stack, !fused)?;
    let mut psi = event.output_width();
    let bin = if variant.needs_bin() {
        let s = LstmStack::new(&mut rng, meta.bin_width, &hp.bin_stack, false)?;
        psi += s.output_width();
        Some(s)
    } else {
        None
    };
    let cor = if variant.needs_cor() {
        let s = LstmStack::new(&mut rng, meta.cor_width, &hp.cor_stack, false)?;
        psi += s.output_width();
        Some(s)
    } else {
        None
    };
    let reserved = [PAD_INDEX, ABSENT_INDEX];
    let (verb_emb, desc_emb, text) = if variant.needs_text() {
        let v = Embedding::new(&mut rng, meta.verb_size, hp.verb_dim, &reserved)?;
        let d = Embedding::new(&mut rng, meta.desc_size, hp.desc_dim, &reserved)?;
        let width = hp.verb_dim + meta.n_descriptors * hp.desc_dim;
        let s = LstmStack::new(&mut rng, width, &hp.text_stack, false)?;
        psi += s.output_width();
        (Some(v), Some(d), Some(s))
    } else {
        (None, None, None)
    };
    let fusion = if fused {
        Some(LstmStack::new(&mut rng, psi, &hp.fusion_stack, true)?)
    } else {
        None
    };
    let final_width = fusion.as_ref().unwrap_or(&event).output_width();
    let mut width = final_width + meta.seq_width();
    let mut dense = Vec::with_capacity(hp.dense.len());
    for spec in &hp.dense {
        let mut d = Dense::new(&mut rng, width, spec.units, spec.activation);
        d.weight.l2 = spec.l2;
        let dropout = spec.dropout.filter(|&r| r > 0.0).map(Dropout::new).transpose()?;
        dense.push(HeadLayer { dense: d, dropout });
        width = spec.units;
    }
    let output = Dense::new(&mut rng, width, meta.n_classes, Activation::Identity);
    Ok(Model {
        variant,
        hp: hp.clone(),
        meta: meta.clone(),
        seed,
        event,
        bin,
        cor,
        verb_emb,
        desc_emb,
        text,
        fusion,
        dense,
        output,
        rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d20f_0u64),
    })
}

/// Per-case class probabilities and their argmax.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probabilities: Array2<f64>,
    pub labels: Vec<usize>,
}

fn argmax_rows(p: &Array2<f64>) -> Vec<usize> {
    p.rows()
        .into_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
                .0
        })
        .collect()
}

impl Model {
    pub fn event_stack(&self) -> &LstmStack {
        &self.event
    }

    pub fn fusion_stack(&self) -> Option<&LstmStack> {
        self.fusion.as_ref()
    }

    /// Stack names and output widths in Ψ order (text, event, bin, cor);
    /// empty for variants without fusion.
    pub fn fusion_plan(&self) -> Vec<(&'static str, usize)> {
        if self.fusion.is_none() {
            return Vec::new();
        }
        let mut plan = Vec::new();
        if let Some(t) = &self.text {
            plan.push(("text", t.output_width()));
        }
        plan.push(("event", self.event.output_width()));
        if let Some(b) = &self.bin {
            plan.push(("bin", b.output_width()));
        }
        if let Some(c) = &self.cor {
            plan.push(("cor", c.output_width()));
        }
        plan
    }

    /// Verb and descriptor embedding widths (T-LSTM only).
    pub fn embedding_widths(&self) -> Option<(usize, usize)> {
        Some((self.verb_emb.as_ref()?.dim(), self.desc_emb.as_ref()?.dim()))
    }

    /// Width of `Z = [v_S', v_S]`.
    pub fn z_width(&self) -> usize {
        self.fusion.as_ref().unwrap_or(&self.event).output_width() + self.meta.seq_width()
    }

    pub fn n_classes(&self) -> usize {
        self.meta.n_classes
    }

    /// Zeroes the output layer so every case gets uniform probabilities.
    pub fn zero_output_head(&mut self) {
        self.output.weight.value.fill(0.0);
        self.output.bias.value.fill(0.0);
    }

    pub fn has_active_dropout(&self) -> bool {
        self.event.has_active_dropout()
            || [&self.bin, &self.cor, &self.text, &self.fusion]
                .iter()
                .any(|s| s.as_ref().is_some_and(LstmStack::has_active_dropout))
            || self.dense.iter().any(|h| h.dropout.as_ref().is_some_and(Dropout::is_stochastic))
    }

    pub fn check_compatible(&self, meta: &DatasetMeta) -> Result<()> {
        let m = &self.meta;
        let same = m.variant == meta.variant
            && m.n_classes == meta.n_classes
            && m.event_cat_sizes == meta.event_cat_sizes
            && m.event_num_width == meta.event_num_width
            && m.seq_cat_sizes == meta.seq_cat_sizes
            && m.seq_num_width == meta.seq_num_width
            && m.bin_width == meta.bin_width
            && m.cor_width == meta.cor_width
            && m.verb_size == meta.verb_size
            && m.desc_size == meta.desc_size
            && m.n_descriptors == meta.n_descriptors;
        if same {
            Ok(())
        } else {
            Err(CoreError::Config(format!(
                "dataset channels do not match the {} model (encode it with the model's encoders)",
                self.variant.display_name()
            )))
        }
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        let missing = |c: &str| Err(channel_error(self.variant, c));
        if self.bin.is_some() && batch.bin.is_none() {
            return missing("bin_inputs");
        }
        if self.cor.is_some() && batch.cor.is_none() {
            return missing("cor_inputs");
        }
        if self.text.is_some() && (batch.verb.is_none() || batch.desc.is_none()) {
            return missing("text_inputs");
        }
        Ok(())
    }

    /// Logits for a batch.
    pub fn forward(&mut self, batch: &Batch, training: bool) -> Result<Array2<f64>> {
        self.check_batch(batch)?;
        let mask = &batch.mask;
        let rng = &mut self.rng;
        let v_s_prime = if let Some(fusion) = &mut self.fusion {
            let mut parts: Vec<Array3<f64>> = Vec::new();
            if let (Some(text), Some(ve), Some(de)) = (&mut self.text, &mut self.verb_emb, &mut self.desc_emb) {
                let verb = ve.forward(batch.verb.as_ref().expect("checked"))?;
                let desc = de.forward(batch.desc.as_ref().expect("checked"))?;
                let (t, b, _) = verb.dim();
                let desc = desc
                    .into_shape_with_order((t, b, self.meta.n_descriptors * de.dim()))
                    .map_err(|e| CoreError::Config(e.to_string()))?;
                let e = concatenate(Axis(2), &[verb.view(), desc.view()]).expect("matching shapes");
                match text.forward(&e, mask, training, rng)? {
                    StackOut::Seq(x) => parts.push(x),
                    StackOut::Final(_) => unreachable!("text stack returns sequences"),
                }
            }
            let mut seq_of = |stack: &mut LstmStack, x: &Array3<f64>| -> Result<Array3<f64>> {
                match stack.forward(x, mask, training, rng)? {
                    StackOut::Seq(s) => Ok(s),
                    StackOut::Final(_) => unreachable!("input stacks return sequences under fusion"),
                }
            };
            parts.push(seq_of(&mut self.event, &batch.event)?);
            if let Some(bin) = &mut self.bin {
                parts.push(seq_of(bin, batch.bin.as_ref().expect("checked"))?);
            }
            if let Some(cor) = &mut self.cor {
                parts.push(seq_of(cor, batch.cor.as_ref().expect("checked"))?);
            }
            let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
            let psi = concatenate(Axis(2), &views).expect("matching shapes");
            match fusion.forward(&psi, mask, training, rng)? {
                StackOut::Final(f) => f,
                StackOut::Seq(_) => unreachable!("fusion stack returns its final state"),
            }
        } else {
            match self.event.forward(&batch.event, mask, training, rng)? {
                StackOut::Final(f) => f,
                StackOut::Seq(_) => unreachable!("event stack returns its final state"),
            }
        };
        let mut h = concatenate(Axis(1), &[v_s_prime.view(), batch.seq.view()]).expect("matching batch");
        for layer in &mut self.dense {
            h = layer.dense.forward(&h)?;
            if let Some(d) = &mut layer.dropout {
                h = d.forward(&h, training, rng);
            }
        }
        Ok(self.output.forward(&h)?)
    }

    /// Backpropagates logits gradients through the whole graph.
    pub fn backward(&mut self, d_logits: &Array2<f64>) -> Result<()> {
        let mut d = self.output.backward(d_logits)?;
        for layer in self.dense.iter_mut().rev() {
            if let Some(dr) = &mut layer.dropout {
                d = dr.backward(&d);
            }
            d = layer.dense.backward(&d)?;
        }
        let hf = self.fusion.as_ref().unwrap_or(&self.event).output_width();
        let d_final = d.slice(s![.., ..hf]).to_owned();
        let Some(fusion) = &mut self.fusion else {
            self.event.backward(StackOut::Final(d_final))?;
            return Ok(());
        };
        let d_psi = fusion.backward(StackOut::Final(d_final))?;
        let mut offset = 0;
        let mut take = |w: usize| {
            let part = d_psi.slice(s![.., .., offset..offset + w]).to_owned();
            offset += w;
            part
        };
        if let (Some(text), Some(ve), Some(de)) = (&mut self.text, &mut self.verb_emb, &mut self.desc_emb) {
            let d_e = text.backward(StackOut::Seq(take(text.output_width())))?;
            let (t, b, _) = d_e.dim();
            let vd = ve.dim();
            ve.backward(&d_e.slice(s![.., .., ..vd]).to_owned())?;
            let d_desc = d_e
                .slice(s![.., .., vd..])
                .to_owned()
                .into_shape_with_order((t, b * self.meta.n_descriptors, de.dim()))
                .map_err(|e| CoreError::Config(e.to_string()))?;
            de.backward(&d_desc)?;
        }
        let w = self.event.output_width();
        self.event.backward(StackOut::Seq(take(w)))?;
        if let Some(bin) = &mut self.bin {
            bin.backward(StackOut::Seq(take(bin.output_width())))?;
        }
        if let Some(cor) = &mut self.cor {
            cor.backward(StackOut::Seq(take(cor.output_width())))?;
        }
        Ok(())
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = self.event.params();
        for s in [&self.bin, &self.cor].into_iter().flatten() {
            out.extend(s.params());
        }
        for e in [&self.verb_emb, &self.desc_emb].into_iter().flatten() {
            out.extend(e.params());
        }
        for s in [&self.text, &self.fusion].into_iter().flatten() {
            out.extend(s.params());
        }
        for h in &self.dense {
            out.extend(h.dense.params());
        }
        out.extend(self.output.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.event.params_mut();
        for s in [&mut self.bin, &mut self.cor].into_iter().flatten() {
            out.extend(s.params_mut());
        }
        for e in [&mut self.verb_emb, &mut self.desc_emb].into_iter().flatten() {
            out.extend(e.params_mut());
        }
        for s in [&mut self.text, &mut self.fusion].into_iter().flatten() {
            out.extend(s.params_mut());
        }
        for h in &mut self.dense {
            out.extend(h.dense.params_mut());
        }
        out.extend(self.output.params_mut());
        out
    }

    fn buffers(&self) -> Vec<&Array2<f64>> {
        let mut out = self.event.buffers();
        for s in [&self.bin, &self.cor, &self.text, &self.fusion].into_iter().flatten() {
            out.extend(s.buffers());
        }
        out
    }

    fn buffers_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = self.event.buffers_mut();
        for s in [&mut self.bin, &mut self.cor, &mut self.text, &mut self.fusion].into_iter().flatten() {
            out.extend(s.buffers_mut());
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn n_parameters(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn l2_penalty(&self) -> f64 {
        self.params().iter().map(|p| p.l2_penalty()).sum()
    }

    /// Forward, cross-entropy plus L2, backward. Gradients are accumulated,
    /// so call [`Model::zero_grad`] first.
    pub fn loss_and_backward(&mut self, batch: &Batch, class_weights: Option<&[f64]>, training: bool) -> Result<f64> {
        let logits = self.forward(batch, training)?;
        let (ce, d_logits) = softmax_cross_entropy(&logits, &batch.labels, class_weights)?;
        self.backward(&d_logits)?;
        for p in self.params_mut() {
            p.add_l2_grad();
        }
        Ok(ce + self.l2_penalty())
    }

    /// Inference-mode class probabilities for a batch.
    pub fn forward_probs(&mut self, batch: &Batch) -> Result<Array2<f64>> {
        let logits = self.forward(batch, false)?;
        Ok(softmax_rows(&logits))
    }

    pub fn predict(&mut self, ds: &EncodedDataset) -> Result<Prediction> {
        self.check_compatible(&ds.meta)?;
        let mut probabilities = Array2::zeros((ds.len(), self.meta.n_classes));
        let idx: Vec<usize> = (0..ds.len()).collect();
        for (c, chunk) in idx.chunks(PREDICT_CHUNK).enumerate() {
            let p = self.forward_probs(&make_batch(ds, chunk))?;
            let lo = c * PREDICT_CHUNK;
            probabilities.slice_mut(s![lo..lo + chunk.len(), ..]).assign(&p);
        }
        let labels = argmax_rows(&probabilities);
        Ok(Prediction { probabilities, labels })
    }

    pub fn save<W: Write>(&self, w: &mut W) -> Result<()> {
        let header = serde_json::json!({
            "format": 1,
            "variant": self.variant,
            "seed": self.seed,
            "hyperparameters": self.hp,
            "meta": self.meta,
            "fusion": self.fusion_plan(),
        });
        let mut tensors: Vec<TensorRecord> = self
            .params()
            .iter()
            .enumerate()
            .map(|(i, p)| TensorRecord::new(format!("p{i}:{}", p.name), p.value.shape().to_vec(), p.value.iter().copied().collect()))
            .collect();
        for (i, b) in self.buffers().iter().enumerate() {
            tensors.push(TensorRecord::new(format!("b{i}"), b.shape().to_vec(), b.iter().copied().collect()));
        }
        write_container(w, CHECKPOINT_MAGIC, &header, &tensors)?;
        Ok(())
    }

    pub fn load<R: Read>(r: &mut R) -> Result<Model> {
        let (header, tensors) = read_container(r, CHECKPOINT_MAGIC)?;
        if header["format"] != 1 {
            return Err(CoreError::Format(format!("unsupported checkpoint format {}", header["format"])));
        }
        let variant: Variant = serde_json::from_value(header["variant"].clone())?;
        let hp: HyperParams = serde_json::from_value(header["hyperparameters"].clone())?;
        let meta: DatasetMeta = serde_json::from_value(header["meta"].clone())?;
        let seed: u64 = serde_json::from_value(header["seed"].clone())?;
        let mut model = build_model(variant, &hp, &meta, seed)?;
        let (params, buffers): (Vec<_>, Vec<_>) = tensors.into_iter().partition(|t| t.name.starts_with('p'));
        let mut slots: Vec<&mut Array2<f64>> = Vec::new();
        let n_params = model.params().len();
        if params.len() != n_params {
            return Err(CoreError::Format(format!(
                "checkpoint holds {} parameters, the graph has {n_params}",
                params.len()
            )));
        }
        {
            let mut ps = model.params_mut();
            for (p, t) in ps.iter_mut().zip(&params) {
                if p.value.shape() != t.shape.as_slice() {
                    return Err(CoreError::Format(format!("shape mismatch for {}", t.name)));
                }
                p.value.as_slice_mut().expect("standard layout").copy_from_slice(&t.values);
            }
        }
        slots.extend(model.buffers_mut());
        if slots.len() != buffers.len() {
            return Err(CoreError::Format("batch-norm statistics do not match the graph".into()));
        }
        for (b, t) in slots.into_iter().zip(&buffers) {
            if b.shape() != t.shape.as_slice() {
                return Err(CoreError::Format(format!("shape mismatch for {}", t.name)));
            }
            b.as_slice_mut().expect("standard layout").copy_from_slice(&t.values);
        }
        Ok(model)
    }
}

/// Tuning objective on the validation split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuneObjective {
    Accuracy,
    WeightedF1,
}

impl TuneObjective {
    /// Accuracy when the largest class is at most 1.5x the smallest,
    /// weighted F1 otherwise.
    pub fn for_labels(labels: &[usize], n_classes: usize) -> Self {
        let mut counts = vec![0usize; n_classes];
        for &l in labels {
            counts[l] += 1;
        }
        let max = counts.iter().copied().max().unwrap_or(0);
        let min = counts.iter().copied().min().unwrap_or(0);
        if min > 0 && max as f64 <= 1.5 * min as f64 {
            TuneObjective::Accuracy
        } else {
            TuneObjective::WeightedF1
        }
    }

    pub fn score(self, y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<f64> {
        match self {
            TuneObjective::Accuracy => Ok(eval::accuracy(y_true, y_pred)),
            TuneObjective::WeightedF1 => eval::weighted_f1(y_true, y_pred, n_classes),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TuneObjective::Accuracy => "accuracy",
            TuneObjective::WeightedF1 => "weighted_f1",
        }
    }
}

impl std::str::FromStr for TuneObjective {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "accuracy" | "acc" => Ok(TuneObjective::Accuracy),
            "weighted_f1" | "f1" => Ok(TuneObjective::WeightedF1),
            _ => Err(CoreError::Config(format!("unknown objective {s:?} (accuracy, weighted_f1)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub objective: TuneObjective,
    /// Inverse-frequency loss weights; `None` enables them exactly for the
    /// weighted-F1 objective.
    pub class_weights: Option<bool>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(objective: TuneObjective, seed: u64) -> Self {
        Self {
            max_epochs: 300,
            patience: 20,
            objective,
            class_weights: None,
            seed,
        }
    }

    pub fn uses_class_weights(&self) -> bool {
        self.class_weights.unwrap_or(self.objective == TuneObjective::WeightedF1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_objective: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    EarlyStopped,
    MaxEpochs,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub history: Vec<EpochRecord>,
    /// 1-based; 0 until an epoch completes.
    pub best_epoch: usize,
    pub best_objective: f64,
    pub patience: usize,
    pub seed: u64,
    pub status: RunStatus,
}

impl TrainRun {
    pub fn failed(&self) -> bool {
        matches!(self.status, RunStatus::Failed(_))
    }

    /// Best validation objective, or `-inf` for failed runs.
    pub fn objective(&self) -> f64 {
        if self.failed() || self.history.is_empty() {
            f64::NEG_INFINITY
        } else {
            self.best_objective
        }
    }

    /// Tab-separated history with a header row.
    pub fn history_tsv(&self) -> String {
        let mut out = String::from("epoch\ttrain_loss\tval_loss\tval_objective\tlearning_rate\n");
        for r in &self.history {
            out.push_str(&format!(
                "{}\t{:.10}\t{:.10}\t{:.10}\t{:.6e}\n",
                r.epoch, r.train_loss, r.val_loss, r.val_objective, r.learning_rate
            ));
        }
        out
    }
}

/// Resumable trainer: `train_epochs` can be called repeatedly with further
/// budget and continues where it stopped (optimizer state included).
#[derive(Debug, Clone)]
pub struct Trainer {
    model: Model,
    best: Option<Model>,
    optimizer: Optimizer,
    config: TrainConfig,
    shuffle_rng: ChaCha8Rng,
    class_weights: Option<Vec<f64>>,
    since_best: usize,
    run: TrainRun,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig, train: &EncodedDataset) -> Self {
        let class_weights = config
            .uses_class_weights()
            .then(|| inverse_frequency_weights(&train.labels, model.n_classes()));
        Self {
            optimizer: Optimizer::new(model.hp.optimizer),
            shuffle_rng: ChaCha8Rng::seed_from_u64(config.seed),
            class_weights,
            since_best: 0,
            run: TrainRun {
                history: Vec::new(),
                best_epoch: 0,
                best_objective: f64::NEG_INFINITY,
                patience: config.patience,
                seed: config.seed,
                status: RunStatus::Running,
            },
            config,
            model,
            best: None,
        }
    }

    pub fn run(&self) -> &TrainRun {
        &self.run
    }

    pub fn epochs_done(&self) -> usize {
        self.run.history.len()
    }

    pub fn is_finished(&self) -> bool {
        self.run.status != RunStatus::Running
    }

    /// Best weights seen so far (the current ones before any epoch).
    pub fn best_model(&self) -> &Model {
        self.best.as_ref().unwrap_or(&self.model)
    }

    pub fn into_best_model(self) -> Model {
        self.best.unwrap_or(self.model)
    }

    fn fail(&mut self, why: String) {
        log::warn!("training failed: {why}");
        self.run.status = RunStatus::Failed(why);
    }

    /// Trains up to `epochs` more epochs; returns how many actually ran.
    pub fn train_epochs(&mut self, train: &EncodedDataset, val: &EncodedDataset, epochs: usize) -> Result<usize> {
        self.model.check_compatible(&train.meta)?;
        self.model.check_compatible(&val.meta)?;
        if train.is_empty() {
            return Err(CoreError::Config("training split is empty".into()));
        }
        let mut ran = 0;
        while ran < epochs && !self.is_finished() {
            self.one_epoch(train, val)?;
            ran += 1;
        }
        Ok(ran)
    }

    fn one_epoch(&mut self, train: &EncodedDataset, val: &EncodedDataset) -> Result<()> {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.shuffle_rng);
        let mut total = 0.0;
        let mut lr = self.model.hp.schedule.value(self.optimizer.steps());
        for chunk in order.chunks(self.model.hp.batch_size) {
            let batch = make_batch(train, chunk);
            self.model.zero_grad();
            let loss = self
                .model
                .loss_and_backward(&batch, self.class_weights.as_deref(), true)?;
            if !loss.is_finite() {
                self.fail(format!("non-finite training loss at epoch {}", self.epochs_done() + 1));
                return Ok(());
            }
            lr = self.model.hp.schedule.value(self.optimizer.steps());
            self.optimizer.step(&mut self.model.params_mut(), lr);
            total += loss * chunk.len() as f64;
        }
        if self.model.params().iter().any(|p| p.value.iter().any(|v| !v.is_finite())) {
            self.fail("weights became non-finite".into());
            return Ok(());
        }
        let pred = self.model.predict(val)?;
        if pred.probabilities.iter().any(|v| !v.is_finite()) {
            self.fail("non-finite validation output".into());
            return Ok(());
        }
        let val_loss = if val.is_empty() {
            0.0
        } else {
            val.labels
                .iter()
                .enumerate()
                .map(|(i, &y)| -pred.probabilities[[i, y]].max(1e-300).ln())
                .sum::<f64>()
                / val.len() as f64
        };
        let score = self.config.objective.score(&val.labels, &pred.labels, self.model.n_classes())?;
        let epoch = self.epochs_done() + 1;
        self.run.history.push(EpochRecord {
            epoch,
            train_loss: total / train.len() as f64,
            val_loss,
            val_objective: score,
            learning_rate: lr,
        });
        if score > self.run.best_objective {
            self.run.best_objective = score;
            self.run.best_epoch = epoch;
            self.best = Some(self.model.clone());
            self.since_best = 0;
        } else {
            self.since_best += 1;
            if self.since_best >= self.config.patience {
                self.run.status = RunStatus::EarlyStopped;
            }
        }
        if self.run.status == RunStatus::Running && epoch >= self.config.max_epochs {
            self.run.status = RunStatus::MaxEpochs;
        }
        Ok(())
    }
}

/// Trains for at most `budget_epochs` and returns the best-weights model.
pub fn train(
    model: Model,
    train_set: &EncodedDataset,
    val_set: &EncodedDataset,
    config: &TrainConfig,
    budget_epochs: usize,
) -> Result<(Model, TrainRun)> {
    if budget_epochs > config.max_epochs {
        return Err(CoreError::Config(format!(
            "budget of {budget_epochs} epochs exceeds the maximum of {}",
            config.max_epochs
        )));
    }
    let mut trainer = Trainer::new(model, config.clone(), train_set);
    trainer.train_epochs(train_set, val_set, budget_epochs)?;
    let run = trainer.run().clone();
    Ok((trainer.into_best_model(), run))
}

/// Deterministic loss over a fixed batch, for gradient checks of whole graphs.
pub struct GraphObjective<'a> {
    pub model: &'a mut Model,
    pub batch: Batch,
    pub class_weights: Option<Vec<f64>>,
}

impl Objective for GraphObjective<'_> {
    fn parameters(&mut self) -> Vec<&mut Param> {
        self.model.params_mut()
    }

    fn is_stochastic(&self) -> bool {
        self.model.has_active_dropout()
    }

    fn loss(&mut self) -> pbpm_nn::Result<f64> {
        let logits = self.model.forward(&self.batch, true).map_err(to_nn)?;
        let (ce, _) = softmax_cross_entropy(&logits, &self.batch.labels, self.class_weights.as_deref())?;
        Ok(ce + self.model.l2_penalty())
    }

    fn loss_and_grad(&mut self) -> pbpm_nn::Result<f64> {
        self.model.zero_grad();
        self.model
            .loss_and_backward(&self.batch, self.class_weights.as_deref(), true)
            .map_err(to_nn)
    }
}

fn to_nn(e: CoreError) -> pbpm_nn::NnError {
    match e {
        CoreError::Nn(inner) => inner,
        other => pbpm_nn::NnError::Config(other.to_string()),
    }
}
