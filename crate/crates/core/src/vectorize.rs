//! Tensor assembly for the model variants: categorical indices, median
//! imputation, time differences, co-embedding of simultaneous events,
//! padding and masking.
//!
//! Categorical index layout, shared by every channel:
//! `0` padding, `1` absent (`<NO_DESC>` or missing), `2..` fitted values in
//! lexicographic order, last index unknown.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::str::FromStr;

use ndarray::{Array2, Array3};
use pbpm_nn::container::{read_container, write_container, TensorRecord};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::event_log::{detect_simultaneous, Case, EventLog};
use crate::featurize::NO_DESC;
use crate::pseudo_embed::{EmbeddingConfig, EmbeddingMatrix, FittedEmbeddings};

pub const PAD_INDEX: usize = 0;
pub const ABSENT_INDEX: usize = 1;

const DATASET_MAGIC: &[u8; 8] = b"PBPMDATA";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    B,
    FB,
    MB,
    D,
    FD,
    DC,
    T,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::B,
        Variant::FB,
        Variant::MB,
        Variant::D,
        Variant::FD,
        Variant::DC,
        Variant::T,
    ];

    pub fn needs_bin(self) -> bool {
        matches!(self, Variant::D | Variant::FD | Variant::DC | Variant::T)
    }

    pub fn needs_cor(self) -> bool {
        matches!(self, Variant::DC | Variant::T)
    }

    pub fn needs_text(self) -> bool {
        self == Variant::T
    }

    pub fn uses_delta_t(self) -> bool {
        matches!(self, Variant::FB | Variant::FD)
    }

    pub fn groups_simultaneous(self) -> bool {
        self == Variant::MB
    }

    /// Variants that fuse several per-timestep streams through an extra stack.
    pub fn has_fusion(self) -> bool {
        self.needs_bin()
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Variant::B => "B-LSTM",
            Variant::FB => "F-B-LSTM",
            Variant::MB => "M-B-LSTM",
            Variant::D => "D-LSTM",
            Variant::FD => "F-D-LSTM",
            Variant::DC => "DC-LSTM",
            Variant::T => "T-LSTM",
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Variant::B => "B",
            Variant::FB => "FB",
            Variant::MB => "MB",
            Variant::D => "D",
            Variant::FD => "FD",
            Variant::DC => "DC",
            Variant::T => "T",
        }
    }

    pub fn requirements(self) -> &'static str {
        match self {
            Variant::B | Variant::MB => "event and sequence attributes",
            Variant::FB => "event and sequence attributes plus start times",
            Variant::D => "duration bins (completion timestamps)",
            Variant::FD => "duration bins (completion timestamps) and start times",
            Variant::DC => "duration bins (completion timestamps) and a universal attribute",
            Variant::T => "duration bins, a universal attribute and featurized labels",
        }
    }
}

impl FromStr for Variant {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .to_ascii_uppercase()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect();
        let norm = norm.strip_suffix("LSTM").unwrap_or(&norm);
        Ok(match norm {
            "B" => Variant::B,
            "FB" => Variant::FB,
            "MB" => Variant::MB,
            "D" => Variant::D,
            "FD" => Variant::FD,
            "DC" => Variant::DC,
            "T" => Variant::T,
            _ => return Err(CoreError::Config(format!("unknown variant {s:?} (B, FB, MB, D, FD, DC, T)"))),
        })
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.short_name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub values: Vec<String>,
}

impl Vocab {
    /// Distinct present values, excluding `<NO_DESC>`, sorted.
    pub fn fit<'a>(values: impl IntoIterator<Item = Option<&'a str>>) -> Self {
        let set: BTreeSet<&str> = values.into_iter().flatten().filter(|v| *v != NO_DESC).collect();
        Self {
            values: set.into_iter().map(str::to_string).collect(),
        }
    }

    pub fn unk_index(&self) -> usize {
        self.values.len() + 2
    }

    /// Table rows including padding, absent and unknown.
    pub fn size(&self) -> usize {
        self.values.len() + 3
    }

    pub fn encode(&self, value: Option<&str>) -> usize {
        match value {
            None => ABSENT_INDEX,
            Some(v) if v == NO_DESC => ABSENT_INDEX,
            Some(v) => self
                .values
                .binary_search_by(|x| x.as_str().cmp(v))
                .map_or(self.unk_index(), |i| i + 2),
        }
    }
}

pub fn encode_categorical(values: &[Option<&str>], vocab: &Vocab) -> Vec<usize> {
    values.iter().map(|v| vocab.encode(*v)).collect()
}

/// Lower median of the present values.
pub fn lower_median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(v[(v.len() - 1) / 2])
}

/// Fills missing entries with the lower median of the present ones.
pub fn impute_median(column: &[Option<f64>], attribute: &str) -> Result<(Vec<f64>, f64)> {
    let present: Vec<f64> = column.iter().flatten().copied().collect();
    let median = lower_median(&present).ok_or_else(|| {
        CoreError::Config(format!("numeric attribute {attribute:?} has no values in the training split"))
    })?;
    Ok((column.iter().map(|v| v.unwrap_or(median)).collect(), median))
}

/// `ΔT_i = start_i - start_{i-1}`, with `ΔT_0 = 0`.
pub fn time_difference(case: &Case) -> Vec<i64> {
    let mut out = Vec::with_capacity(case.events.len());
    for (i, e) in case.events.iter().enumerate() {
        out.push(if i == 0 { 0 } else { e.start - case.events[i - 1].start });
    }
    out
}

/// Concatenates the group's vectors and zero-pads to `k_max` slots.
pub fn co_embed<T: Copy + Default>(group: &[Vec<T>], width: usize, k_max: usize) -> Result<Vec<T>> {
    if group.len() > k_max {
        return Err(CoreError::GroupTooLarge {
            size: group.len(),
            k_max,
        });
    }
    let mut out = vec![T::default(); width * k_max];
    for (slot, v) in group.iter().enumerate() {
        if v.len() != width {
            return Err(CoreError::Config(format!(
                "co-embedding expects width {width}, got {}",
                v.len()
            )));
        }
        out[slot * width..(slot + 1) * width].copy_from_slice(v);
    }
    Ok(out)
}

/// Per-class shuffled split; each class contributes `round(fraction * n_c)`
/// cases to validation. Both index lists are returned in ascending order.
pub fn stratified_split(labels: &[usize], val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for c in 0..n_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let n_val = (val_fraction * idx.len() as f64).round() as usize;
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericEncoder {
    pub name: String,
    pub median: f64,
    /// Max-abs scale of the imputed training values (1 when all zero).
    pub scale: f64,
}

impl NumericEncoder {
    fn fit(name: &str, column: &[Option<f64>]) -> Result<Self> {
        let (filled, median) = impute_median(column, name)?;
        let m = filled.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        Ok(Self {
            name: name.to_string(),
            median,
            scale: if m > 0.0 { m } else { 1.0 },
        })
    }

    pub fn encode(&self, v: Option<f64>) -> f64 {
        v.unwrap_or(self.median) / self.scale
    }
}

/// Everything fitted on the training split and reused for any other split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoders {
    pub variant: Variant,
    pub class_names: Vec<String>,
    /// Activity token first, then the schema's event categoricals.
    pub event_vocabs: Vec<Vocab>,
    /// Schema's event numericals, then ΔT for time-augmented variants.
    pub event_numeric: Vec<NumericEncoder>,
    pub seq_vocabs: Vec<Vocab>,
    pub seq_numeric: Vec<NumericEncoder>,
    pub verb_vocab: Option<Vocab>,
    pub desc_vocab: Option<Vocab>,
    pub n_descriptors: usize,
    pub embeddings: FittedEmbeddings,
    /// Slots per timestep; above 1 only for simultaneity grouping.
    pub k_max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub variant: Variant,
    pub n_classes: usize,
    pub class_names: Vec<String>,
    /// Vocabulary size of each event categorical column (all slots).
    pub event_cat_sizes: Vec<usize>,
    pub event_num_width: usize,
    pub seq_cat_sizes: Vec<usize>,
    pub seq_num_width: usize,
    pub bin_width: usize,
    pub cor_width: usize,
    pub verb_size: usize,
    pub desc_size: usize,
    pub n_descriptors: usize,
    pub k_max: usize,
}

impl DatasetMeta {
    /// Event input width after one-hot expansion of the categoricals.
    pub fn event_width(&self) -> usize {
        self.event_cat_sizes.iter().sum::<usize>() + self.event_num_width
    }

    pub fn seq_width(&self) -> usize {
        self.seq_cat_sizes.iter().sum::<usize>() + self.seq_num_width
    }
}

/// Padded case-major tensors; `mask[[n, t]]` is true for real timesteps.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDataset {
    pub meta: DatasetMeta,
    pub case_ids: Vec<String>,
    pub labels: Vec<usize>,
    pub lengths: Vec<usize>,
    pub mask: Array2<bool>,
    pub event_cat: Array3<usize>,
    pub event_num: Array3<f64>,
    pub seq_cat: Array2<usize>,
    pub seq_num: Array2<f64>,
    pub bin: Option<Array3<f64>>,
    pub cor: Option<Array3<f64>>,
    /// `[verb, descriptor_1..k]` indices per timestep.
    pub text: Option<Array3<usize>>,
}

impl EncodedDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn t_max(&self) -> usize {
        self.mask.ncols()
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        let header = serde_json::json!({
            "meta": self.meta,
            "case_ids": self.case_ids,
            "labels": self.labels,
            "lengths": self.lengths,
        });
        let t3 = |name: &str, a: &Array3<f64>| TensorRecord::new(name, a.shape().to_vec(), a.iter().copied().collect());
        let u3 = |name: &str, a: &Array3<usize>| {
            TensorRecord::new(name, a.shape().to_vec(), a.iter().map(|&v| v as f64).collect())
        };
        let mut tensors = vec![
            TensorRecord::new(
                "mask",
                self.mask.shape().to_vec(),
                self.mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
            ),
            u3("event_cat", &self.event_cat),
            t3("event_num", &self.event_num),
            TensorRecord::new(
                "seq_cat",
                self.seq_cat.shape().to_vec(),
                self.seq_cat.iter().map(|&v| v as f64).collect(),
            ),
            TensorRecord::new("seq_num", self.seq_num.shape().to_vec(), self.seq_num.iter().copied().collect()),
        ];
        if let Some(b) = &self.bin {
            tensors.push(t3("bin", b));
        }
        if let Some(c) = &self.cor {
            tensors.push(t3("cor", c));
        }
        if let Some(t) = &self.text {
            tensors.push(u3("text", t));
        }
        write_container(w, DATASET_MAGIC, &header, &tensors)?;
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let (header, tensors) = read_container(r, DATASET_MAGIC)?;
        let get = |name: &str| tensors.iter().find(|t| t.name == name);
        let need = |name: &str| get(name).ok_or_else(|| CoreError::Format(format!("dataset lacks tensor {name:?}")));
        let f3 = |t: &TensorRecord| -> Result<Array3<f64>> {
            match t.shape.as_slice() {
                &[a, b, c] => Ok(Array3::from_shape_vec((a, b, c), t.values.clone())
                    .map_err(|e| CoreError::Format(e.to_string()))?),
                _ => Err(CoreError::Format(format!("tensor {} is not 3-d", t.name))),
            }
        };
        let f2 = |t: &TensorRecord| -> Result<Array2<f64>> {
            match t.shape.as_slice() {
                &[a, b] => Ok(Array2::from_shape_vec((a, b), t.values.clone())
                    .map_err(|e| CoreError::Format(e.to_string()))?),
                _ => Err(CoreError::Format(format!("tensor {} is not 2-d", t.name))),
            }
        };
        let as_idx = |v: f64| v as usize;
        Ok(Self {
            meta: serde_json::from_value(header["meta"].clone())?,
            case_ids: serde_json::from_value(header["case_ids"].clone())?,
            labels: serde_json::from_value(header["labels"].clone())?,
            lengths: serde_json::from_value(header["lengths"].clone())?,
            mask: f2(need("mask")?)?.mapv(|v| v != 0.0),
            event_cat: f3(need("event_cat")?)?.mapv(as_idx),
            event_num: f3(need("event_num")?)?,
            seq_cat: f2(need("seq_cat")?)?.mapv(as_idx),
            seq_num: f2(need("seq_num")?)?,
            bin: get("bin").map(f3).transpose()?,
            cor: get("cor").map(f3).transpose()?,
            text: get("text").map(f3).transpose()?.map(|a| a.mapv(as_idx)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssembleConfig {
    pub embedding: EmbeddingConfig,
    pub val_fraction: f64,
    /// Slots per grouped timestep; defaults to the largest training group.
    pub k_max: Option<usize>,
}

impl Default for AssembleConfig {
    fn default() -> Self {
        Self {
            embedding: EmbeddingConfig::default(),
            val_fraction: 0.2,
            k_max: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Assembled {
    pub train: EncodedDataset,
    pub val: EncodedDataset,
    pub encoders: Encoders,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

fn check_requirements(variant: Variant, log: &EventLog) -> Result<()> {
    let missing = |what: &str| {
        Err(CoreError::Config(format!(
            "{} needs {}; {what}",
            variant.display_name(),
            variant.requirements()
        )))
    };
    if variant.needs_bin() && !log.has_end_times {
        return missing("the log has no completion timestamps, so durations are unavailable");
    }
    if variant.needs_cor() && log.schema.universal_positions().is_empty() {
        return missing("the schema declares no universal categorical attribute");
    }
    if variant.needs_text() && log.cases.iter().flat_map(|c| &c.events).any(|e| e.label.is_none()) {
        return missing("the log has not been featurized");
    }
    Ok(())
}

/// Splits `log` 80/20 (stratified), fits every encoder on the training part
/// and encodes both parts for `variant`.
pub fn assemble(variant: Variant, log: &EventLog, config: &AssembleConfig, split_seed: u64) -> Result<Assembled> {
    let (train_idx, val_idx) = stratified_split(&log.labels(), config.val_fraction, split_seed);
    if train_idx.is_empty() {
        return Err(CoreError::Config("training split is empty".into()));
    }
    let train_log = log.subset(&train_idx);
    let val_log = log.subset(&val_idx);
    let encoders = fit_encoders(variant, &train_log, config)?;
    Ok(Assembled {
        train: encode(&train_log, &encoders)?,
        val: encode(&val_log, &encoders)?,
        encoders,
        train_indices: train_idx,
        val_indices: val_idx,
    })
}

pub fn fit_encoders(variant: Variant, train: &EventLog, config: &AssembleConfig) -> Result<Encoders> {
    check_requirements(variant, train)?;
    let schema = &train.schema;
    let events = || train.cases.iter().flat_map(|c| c.events.iter());

    let mut event_vocabs = vec![Vocab::fit(events().map(|e| Some(e.token())))];
    for p in 0..schema.event_categoricals().len() {
        event_vocabs.push(Vocab::fit(events().map(|e| e.categorical[p].as_deref())));
    }
    let mut event_numeric = Vec::new();
    for (p, a) in schema.event_numericals().iter().enumerate() {
        let col: Vec<Option<f64>> = events().map(|e| e.numeric[p]).collect();
        event_numeric.push(NumericEncoder::fit(&a.name, &col)?);
    }
    if variant.uses_delta_t() {
        let col: Vec<Option<f64>> = train
            .cases
            .iter()
            .flat_map(|c| time_difference(c).into_iter().map(|d| Some(d as f64)))
            .collect();
        event_numeric.push(NumericEncoder::fit("delta_t", &col)?);
    }
    let mut seq_vocabs = Vec::new();
    for p in 0..schema.sequence_categoricals().len() {
        seq_vocabs.push(Vocab::fit(train.cases.iter().map(|c| c.sequence_categorical[p].as_deref())));
    }
    let mut seq_numeric = Vec::new();
    for (p, a) in schema.sequence_numericals().iter().enumerate() {
        let col: Vec<Option<f64>> = train.cases.iter().map(|c| c.sequence_numeric[p]).collect();
        seq_numeric.push(NumericEncoder::fit(&a.name, &col)?);
    }

    let (verb_vocab, desc_vocab, n_descriptors) = if variant.needs_text() {
        let labels: Vec<_> = events().filter_map(|e| e.label.as_ref()).collect();
        let n_desc = labels.iter().map(|l| l.descriptors.len()).max().unwrap_or(1);
        (
            Some(Vocab::fit(labels.iter().map(|l| Some(l.verb.as_str())))),
            Some(Vocab::fit(labels.iter().flat_map(|l| l.descriptors.iter().map(|d| Some(d.as_str()))))),
            n_desc,
        )
    } else {
        (None, None, 0)
    };

    let embeddings = FittedEmbeddings::fit(train, &config.embedding, variant.needs_bin(), variant.needs_cor())?;

    let k_max = if variant.groups_simultaneous() {
        let observed = train
            .cases
            .iter()
            .flat_map(|c| detect_simultaneous(c).into_iter().map(|g| g.len()))
            .max()
            .unwrap_or(1);
        config.k_max.unwrap_or(observed).max(1)
    } else {
        1
    };

    Ok(Encoders {
        variant,
        class_names: train.schema.outcome_labels.clone(),
        event_vocabs,
        event_numeric,
        seq_vocabs,
        seq_numeric,
        verb_vocab,
        desc_vocab,
        n_descriptors,
        embeddings,
        k_max,
    })
}

impl Encoders {
    pub fn meta(&self) -> DatasetMeta {
        let k = self.k_max;
        let per_slot: Vec<usize> = self.event_vocabs.iter().map(Vocab::size).collect();
        DatasetMeta {
            variant: self.variant,
            n_classes: self.class_names.len(),
            class_names: self.class_names.clone(),
            event_cat_sizes: (0..k).flat_map(|_| per_slot.iter().copied()).collect(),
            event_num_width: k * self.event_numeric.len(),
            seq_cat_sizes: self.seq_vocabs.iter().map(Vocab::size).collect(),
            seq_num_width: self.seq_numeric.len(),
            bin_width: self.embeddings.bin_model.as_ref().map_or(0, |m| m.width()),
            cor_width: self.embeddings.cor_model.as_ref().map_or(0, |m| m.width()),
            verb_size: self.verb_vocab.as_ref().map_or(0, Vocab::size),
            desc_size: self.desc_vocab.as_ref().map_or(0, Vocab::size),
            n_descriptors: self.n_descriptors,
            k_max: k,
        }
    }
}

fn copy_rows(dst: &mut Array3<f64>, n: usize, src: ndarray::ArrayView2<'_, f64>) {
    for (t, row) in src.rows().into_iter().enumerate() {
        dst.slice_mut(ndarray::s![n, t, ..]).assign(&row);
    }
}

/// Encodes any log with already-fitted encoders (no refitting).
pub fn encode(log: &EventLog, enc: &Encoders) -> Result<EncodedDataset> {
    let meta = enc.meta();
    let variant = enc.variant;
    let n = log.cases.len();
    let n_cat = enc.event_vocabs.len();
    let n_num = enc.event_numeric.len();
    let n_schema_num = log.schema.event_numericals().len();
    if n_schema_num + usize::from(variant.uses_delta_t()) != n_num || n_cat != log.schema.event_categoricals().len() + 1 {
        return Err(CoreError::Config("log schema does not match the fitted encoders".into()));
    }

    let groups: Vec<Vec<Vec<usize>>> = log
        .cases
        .iter()
        .map(|c| {
            if variant.groups_simultaneous() {
                detect_simultaneous(c)
            } else {
                (0..c.events.len()).map(|i| vec![i]).collect()
            }
        })
        .collect();
    let lengths: Vec<usize> = groups.iter().map(Vec::len).collect();
    let t_max = lengths.iter().copied().max().unwrap_or(0);
    let k = enc.k_max;

    let mut mask = Array2::from_elem((n, t_max), false);
    let mut event_cat = Array3::zeros((n, t_max, k * n_cat));
    let mut event_num = Array3::zeros((n, t_max, k * n_num));
    let bin_m: Option<EmbeddingMatrix> = enc.embeddings.bin_matrix(log);
    let cor_m: Option<EmbeddingMatrix> = enc.embeddings.cor_matrix(log)?;
    let mut bin = bin_m.as_ref().map(|m| Array3::zeros((n, t_max, m.terms.len())));
    let mut cor = cor_m.as_ref().map(|m| Array3::zeros((n, t_max, m.terms.len())));
    let n_desc = enc.n_descriptors;
    let mut text = enc.verb_vocab.as_ref().map(|_| Array3::zeros((n, t_max, 1 + n_desc)));

    for (ci, case) in log.cases.iter().enumerate() {
        let dts = time_difference(case);
        let mut cats: Vec<Vec<usize>> = Vec::with_capacity(case.events.len());
        let mut nums: Vec<Vec<f64>> = Vec::with_capacity(case.events.len());
        for (ei, e) in case.events.iter().enumerate() {
            let mut c = Vec::with_capacity(n_cat);
            c.push(enc.event_vocabs[0].encode(Some(e.token())));
            for (p, v) in e.categorical.iter().enumerate() {
                c.push(enc.event_vocabs[p + 1].encode(v.as_deref()));
            }
            let mut x = Vec::with_capacity(n_num);
            for (p, v) in e.numeric.iter().enumerate() {
                x.push(enc.event_numeric[p].encode(*v));
            }
            if variant.uses_delta_t() {
                x.push(enc.event_numeric[n_schema_num].encode(Some(dts[ei] as f64)));
            }
            cats.push(c);
            nums.push(x);
        }
        for (t, g) in groups[ci].iter().enumerate() {
            mask[[ci, t]] = true;
            let gc: Vec<Vec<usize>> = g.iter().map(|&i| cats[i].clone()).collect();
            let gn: Vec<Vec<f64>> = g.iter().map(|&i| nums[i].clone()).collect();
            let c = co_embed(&gc, n_cat, k).map_err(|e| match e {
                CoreError::GroupTooLarge { size, k_max } => CoreError::Config(format!(
                    "case {} has {size} simultaneous events but k_max is {k_max}; raise k_max",
                    case.case_id
                )),
                other => other,
            })?;
            let x = co_embed(&gn, n_num, k)?;
            for (j, v) in c.into_iter().enumerate() {
                event_cat[[ci, t, j]] = v;
            }
            for (j, v) in x.into_iter().enumerate() {
                event_num[[ci, t, j]] = v;
            }
        }
        if let (Some(dst), Some(m)) = (bin.as_mut(), bin_m.as_ref()) {
            copy_rows(dst, ci, m.doc_rows(ci));
        }
        if let (Some(dst), Some(m)) = (cor.as_mut(), cor_m.as_ref()) {
            copy_rows(dst, ci, m.doc_rows(ci));
        }
        if let (Some(dst), Some(vv), Some(dv)) = (text.as_mut(), enc.verb_vocab.as_ref(), enc.desc_vocab.as_ref()) {
            for (t, e) in case.events.iter().enumerate() {
                let label = e.label.as_ref().ok_or_else(|| {
                    CoreError::Config(format!("case {} is not featurized", case.case_id))
                })?;
                dst[[ci, t, 0]] = vv.encode(Some(&label.verb));
                for j in 0..n_desc {
                    dst[[ci, t, 1 + j]] = dv.encode(label.descriptors.get(j).map(String::as_str));
                }
            }
        }
    }

    let mut seq_cat = Array2::zeros((n, enc.seq_vocabs.len()));
    let mut seq_num = Array2::zeros((n, enc.seq_numeric.len()));
    for (ci, case) in log.cases.iter().enumerate() {
        for (p, v) in case.sequence_categorical.iter().enumerate() {
            seq_cat[[ci, p]] = enc.seq_vocabs[p].encode(v.as_deref());
        }
        for (p, v) in case.sequence_numeric.iter().enumerate() {
            seq_num[[ci, p]] = enc.seq_numeric[p].encode(*v);
        }
    }

    Ok(EncodedDataset {
        meta,
        case_ids: log.cases.iter().map(|c| c.case_id.clone()).collect(),
        labels: log.labels(),
        lengths,
        mask,
        event_cat,
        event_num,
        seq_cat,
        seq_num,
        bin,
        cor,
        text,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocab_indices() {
        let v = Vocab::fit([Some("b"), Some("a"), None, Some(NO_DESC), Some("a")]);
        assert_eq!(v.values, vec!["a", "b"]);
        assert_eq!(encode_categorical(&[Some("a"), Some("b"), Some("a")], &v), vec![2, 3, 2]);
        assert_eq!(v.encode(Some(NO_DESC)), 1);
        assert_eq!(v.encode(None), 1);
        assert_eq!(v.encode(Some("z")), v.unk_index());
        assert_eq!(v.size(), 5);
    }

    #[test]
    fn median_imputation() {
        let (filled, m) = impute_median(&[Some(1.0), None, Some(3.0)], "x").unwrap();
        assert_eq!((filled, m), (vec![1.0, 1.0, 3.0], 1.0));
        let (filled, _) = impute_median(&[Some(5.0), None], "x").unwrap();
        assert_eq!(filled, vec![5.0, 5.0]);
        assert_eq!(lower_median(&[1.0, 2.0, 3.0, 4.0]), Some(2.0));
        assert_eq!(lower_median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert!(impute_median(&[None, None], "x").is_err());
    }

    #[test]
    fn co_embedding() {
        let two = co_embed(&[vec![1, 2, 3], vec![4, 5, 6]], 3, 2).unwrap();
        assert_eq!(two, vec![1, 2, 3, 4, 5, 6]);
        let one = co_embed(&[vec![1.0, 2.0]], 2, 3).unwrap();
        assert_eq!(one, vec![1.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
        let four = vec![vec![0u8]; 4];
        assert!(matches!(co_embed(&four, 1, 3), Err(CoreError::GroupTooLarge { size: 4, k_max: 3 })));
    }

    #[test]
    fn split_arithmetic() {
        let labels: Vec<usize> = (0..100).map(|i| usize::from(i >= 60)).collect();
        let (train, val) = stratified_split(&labels, 0.2, 3);
        let count = |idx: &[usize], c| idx.iter().filter(|&&i| labels[i] == c).count();
        assert_eq!((count(&train, 0), count(&train, 1)), (48, 32));
        assert_eq!((count(&val, 0), count(&val, 1)), (12, 8));
        let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(stratified_split(&labels, 0.2, 3), (train, val));
    }

    #[test]
    fn variant_names_parse() {
        for v in Variant::ALL {
            assert_eq!(v.short_name().parse::<Variant>().unwrap(), v);
            assert_eq!(v.display_name().parse::<Variant>().unwrap(), v);
        }
        assert!("X".parse::<Variant>().is_err());
    }
}
