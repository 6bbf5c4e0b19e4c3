//! tf-idf pseudo-embeddings of attribute correlations and duration bins.
//!
//! Each case is a document and each event contributes one term; an event's
//! vector is zero except for its own term's column, which carries that term's
//! tf-idf score within the event's document.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use log::warn;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::event_log::EventLog;

/// Constant value used for the synthetic universal attribute.
pub const DUMMY_VALUE: &str = "dummy";

/// One document (token list) per case, one token per event, in event order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub docs: Vec<Vec<String>>,
}

impl Corpus {
    pub fn n_tokens(&self) -> usize {
        self.docs.iter().map(Vec::len).sum()
    }
}

/// Tokens `A'|U1_U2_..` from each event's universal categorical values in
/// schema order. With `add_dummy`, a log with exactly one universal attribute
/// gets a constant second value so every token is a genuine combination.
pub fn build_correlation_corpus(log: &EventLog, add_dummy: bool) -> Result<Corpus> {
    let positions = log.schema.universal_positions();
    if positions.is_empty() {
        return Err(CoreError::Config(
            "correlation embedding needs at least one universal categorical attribute".into(),
        ));
    }
    let names: Vec<String> = log
        .schema
        .event_categoricals()
        .iter()
        .map(|a| a.name.clone())
        .collect();
    let dummy = add_dummy && positions.len() == 1;
    let mut docs = Vec::with_capacity(log.cases.len());
    for case in &log.cases {
        let mut doc = Vec::with_capacity(case.events.len());
        for (i, e) in case.events.iter().enumerate() {
            let mut parts = Vec::with_capacity(positions.len() + 1);
            for &p in &positions {
                match &e.categorical[p] {
                    Some(v) => parts.push(v.as_str()),
                    None => {
                        return Err(CoreError::Event {
                            case_id: case.case_id.clone(),
                            index: i,
                            message: format!("universal attribute {:?} has no value", names[p]),
                        })
                    }
                }
            }
            if dummy {
                parts.push(DUMMY_VALUE);
            }
            doc.push(format!("{}|{}", e.token(), parts.join("_")));
        }
        docs.push(doc);
    }
    Ok(Corpus { docs })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DurationUnit {
    Seconds,
    /// Seconds converted to minutes and rounded up.
    MinutesCeil,
}

impl DurationUnit {
    pub fn convert(self, seconds: i64) -> f64 {
        match self {
            DurationUnit::Seconds => seconds as f64,
            DurationUnit::MinutesCeil => (seconds as f64 / 60.0).ceil(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinLabelStyle {
    /// `u{value}` for short bins, `q{k}` (1-based) for quantile bins.
    Indexed,
    /// `zero` / `nonzero`.
    ZeroNonZero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub iterations: usize,
    /// `max |f - mean| / mean` over quantile-bin frequencies.
    pub imbalance: f64,
    pub balanced: bool,
    pub requested_q: usize,
    pub requested_t_cut: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationBinning {
    pub unit: DurationUnit,
    pub style: BinLabelStyle,
    pub t_cut: f64,
    /// Distinct short values (`< t_cut`), ascending.
    pub unique_bins: Vec<f64>,
    /// `q + 1` increasing boundaries; first is `t_cut`, last is the largest
    /// fitted value. Empty when no value reached `t_cut`.
    pub quantile_edges: Vec<f64>,
    /// Counts per bin: short bins first, then quantile bins.
    pub frequencies: Vec<usize>,
    pub balance_tol: f64,
    pub max_iter: usize,
    pub report: BalanceReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BinId {
    Short(usize),
    Long(usize),
}

impl DurationBinning {
    pub fn n_quantile_bins(&self) -> usize {
        self.quantile_edges.len().saturating_sub(1)
    }

    pub fn total_bins(&self) -> usize {
        self.unique_bins.len() + self.n_quantile_bins()
    }

    pub fn quantile_frequencies(&self) -> &[usize] {
        &self.frequencies[self.unique_bins.len()..]
    }

    pub fn flat_index(&self, id: BinId) -> usize {
        match id {
            BinId::Short(i) => i,
            BinId::Long(i) => self.unique_bins.len() + i,
        }
    }

    pub fn label(&self, id: BinId) -> String {
        match (self.style, id) {
            (BinLabelStyle::ZeroNonZero, BinId::Short(_)) => "zero".into(),
            (BinLabelStyle::ZeroNonZero, BinId::Long(_)) => "nonzero".into(),
            (BinLabelStyle::Indexed, BinId::Short(i)) => {
                let v = self.unique_bins[i];
                if v.fract() == 0.0 {
                    format!("u{}", v as i64)
                } else {
                    format!("u{v}")
                }
            }
            (BinLabelStyle::Indexed, BinId::Long(i)) => format!("q{}", i + 1),
        }
    }
}

/// Linear-interpolation quantile of a sorted slice.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

struct Candidate {
    t_cut: f64,
    unique: Vec<f64>,
    edges: Vec<f64>,
    freqs: Vec<usize>,
}

fn imbalance(freqs: &[usize]) -> f64 {
    if freqs.len() <= 1 {
        return 0.0;
    }
    let mean = freqs.iter().sum::<usize>() as f64 / freqs.len() as f64;
    if mean == 0.0 {
        return 0.0;
    }
    freqs
        .iter()
        .map(|&f| (f as f64 - mean).abs() / mean)
        .fold(0.0, f64::max)
}

fn distinct_at_least(sorted: &[f64], t_cut: f64) -> usize {
    let mut n = 0;
    let mut last = None;
    for &v in sorted.iter().filter(|&&v| v >= t_cut) {
        if last != Some(v) {
            n += 1;
            last = Some(v);
        }
    }
    n
}

/// Short/long partition for one `(t_cut, q)`; `sorted` is ascending.
fn partition(sorted: &[f64], t_cut: f64, q: usize) -> Candidate {
    let split = sorted.partition_point(|&v| v < t_cut);
    let (short, long) = sorted.split_at(split);
    let mut unique: Vec<f64> = short.to_vec();
    unique.dedup();
    let mut freqs: Vec<usize> = unique
        .iter()
        .map(|u| short.iter().filter(|&&v| v == *u).count())
        .collect();
    let mut edges = Vec::new();
    if !long.is_empty() {
        let q_eff = q.clamp(1, distinct_at_least(long, t_cut));
        for k in 0..=q_eff {
            let e = quantile(long, k as f64 / q_eff as f64);
            if edges.last().is_none_or(|&last| e > last) {
                edges.push(e);
            }
        }
        if edges.len() < 2 {
            edges = vec![t_cut, long[long.len() - 1]];
        } else {
            edges[0] = t_cut;
        }
        let mut counts = vec![0usize; edges.len() - 1];
        for &v in long {
            counts[long_bin(&edges, v)] += 1;
        }
        freqs.extend(counts);
    }
    Candidate {
        t_cut,
        unique,
        edges,
        freqs,
    }
}

/// Interval index for `v >= edges[0]`: half-open, last interval closed, values
/// above the last edge clamp into it.
fn long_bin(edges: &[f64], v: f64) -> usize {
    let n = edges.len() - 1;
    let idx = edges.partition_point(|&e| e <= v);
    idx.saturating_sub(1).min(n - 1)
}

fn finish(
    c: Candidate,
    unit: DurationUnit,
    style: BinLabelStyle,
    balance_tol: f64,
    max_iter: usize,
    report: BalanceReport,
) -> DurationBinning {
    DurationBinning {
        unit,
        style,
        t_cut: c.t_cut,
        unique_bins: c.unique,
        quantile_edges: c.edges,
        frequencies: c.freqs,
        balance_tol,
        max_iter,
        report,
    }
}

fn sorted_checked(durations: &[f64]) -> Result<Vec<f64>> {
    if durations.is_empty() {
        return Err(CoreError::Binning("no durations to fit".into()));
    }
    if durations.iter().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(CoreError::Binning("durations must be finite and non-negative".into()));
    }
    let mut sorted = durations.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted)
}

/// Fits short unique-value bins below `t_cut` and `q` quantile bins above it,
/// then searches neighbouring `(t_cut, q)` settings until every quantile-bin
/// frequency is within `balance_tol` (relative) of their mean.
///
/// Each iteration moves to the best unvisited neighbour among `q - 1`,
/// `q + 1`, `t_cut + 1`, `t_cut - 1` if it improves the imbalance, otherwise
/// to `q - 1`. A single quantile bin is balanced by definition, so the search
/// always has a balanced fallback. If `max_iter` runs out, the best setting
/// seen is returned with `report.balanced == false`.
pub fn fit_duration_binning(
    durations: &[f64],
    t_cut: f64,
    q: usize,
    balance_tol: f64,
    max_iter: usize,
) -> Result<DurationBinning> {
    if q == 0 {
        return Err(CoreError::Binning("q must be at least 1".into()));
    }
    let sorted = sorted_checked(durations)?;
    let score = |c: &Candidate| imbalance(&c.freqs[c.unique.len()..]);
    let distinct_long = distinct_at_least(&sorted, t_cut);
    if q > distinct_long && distinct_long > 0 {
        warn!("q = {q} exceeds the {distinct_long} distinct long durations; clamping");
    }
    let q0 = q.min(distinct_long.max(1));

    let mut visited = std::collections::HashSet::new();
    let key = |t: f64, q: usize| (t.to_bits(), q);
    let mut cur = (t_cut, q0);
    let mut cur_c = partition(&sorted, cur.0, cur.1);
    let mut cur_s = score(&cur_c);
    visited.insert(key(cur.0, cur.1));
    let mut best = (cur_s, cur);
    let mut iterations = 0;

    while cur_s > balance_tol && iterations < max_iter {
        iterations += 1;
        let (t, q) = cur;
        let mut neighbours = Vec::new();
        if q > 1 {
            neighbours.push((t, q - 1));
        }
        if q < distinct_at_least(&sorted, t) {
            neighbours.push((t, q + 1));
        }
        neighbours.push((t + 1.0, q));
        if t >= 1.0 {
            neighbours.push((t - 1.0, q));
        }
        let mut pick: Option<((f64, usize), Candidate, f64)> = None;
        for (nt, nq) in neighbours {
            if visited.contains(&key(nt, nq)) {
                continue;
            }
            let nq = nq.min(distinct_at_least(&sorted, nt).max(1));
            let c = partition(&sorted, nt, nq);
            let s = score(&c);
            if s < cur_s && pick.as_ref().is_none_or(|p| s < p.2) {
                pick = Some(((nt, nq), c, s));
            }
        }
        let (next, c, s) = match pick {
            Some(p) => p,
            None => {
                let next = (t, q.saturating_sub(1).max(1));
                let c = partition(&sorted, next.0, next.1);
                let s = score(&c);
                (next, c, s)
            }
        };
        visited.insert(key(next.0, next.1));
        cur = next;
        cur_c = c;
        cur_s = s;
        if cur_s < best.0 {
            best = (cur_s, cur);
        }
    }
    let balanced = cur_s <= balance_tol;
    let (final_s, final_c) = if balanced {
        (cur_s, cur_c)
    } else {
        warn!(
            "duration binning not balanced after {iterations} iterations (imbalance {:.3}); using best setting",
            best.0
        );
        (best.0, partition(&sorted, best.1 .0, best.1 .1))
    };
    let report = BalanceReport {
        iterations,
        imbalance: final_s,
        balanced,
        requested_q: q,
        requested_t_cut: t_cut,
    };
    Ok(finish(
        final_c,
        DurationUnit::Seconds,
        BinLabelStyle::Indexed,
        balance_tol,
        max_iter,
        report,
    ))
}

/// Fixes the total bin count: `q = total_bins - |short unique values|`, no
/// balance search.
pub fn fit_duration_binning_total(durations: &[f64], t_cut: f64, total_bins: usize) -> Result<DurationBinning> {
    let sorted = sorted_checked(durations)?;
    let mut short: Vec<f64> = sorted.iter().copied().filter(|&v| v < t_cut).collect();
    short.dedup();
    if total_bins <= short.len() {
        return Err(CoreError::Binning(format!(
            "{} short values already use {} of the {total_bins} requested bins",
            short.len(),
            short.len()
        )));
    }
    let q = total_bins - short.len();
    let distinct_long = distinct_at_least(&sorted, t_cut);
    if q > distinct_long {
        warn!("q = {q} exceeds the {distinct_long} distinct long durations; clamping");
    }
    let c = partition(&sorted, t_cut, q);
    let report = BalanceReport {
        iterations: 0,
        imbalance: imbalance(&c.freqs[c.unique.len()..]),
        balanced: true,
        requested_q: q,
        requested_t_cut: t_cut,
    };
    Ok(finish(c, DurationUnit::Seconds, BinLabelStyle::Indexed, 0.0, 0, report))
}

/// Exact lookup below `t_cut`, interval search above it.
pub fn assign_bin(duration: f64, binning: &DurationBinning) -> BinId {
    let nearest_short = |d: f64| {
        let mut best = 0;
        for (i, u) in binning.unique_bins.iter().enumerate() {
            if (u - d).abs() < (binning.unique_bins[best] - d).abs() {
                best = i;
            }
        }
        BinId::Short(best)
    };
    if duration < binning.t_cut || binning.quantile_edges.len() < 2 {
        if let Ok(i) = binning.unique_bins.binary_search_by(|u| u.total_cmp(&duration)) {
            return BinId::Short(i);
        }
        if binning.unique_bins.is_empty() {
            return BinId::Long(0);
        }
        warn!("duration {duration} was not seen when fitting; using nearest short bin");
        return nearest_short(duration);
    }
    BinId::Long(long_bin(&binning.quantile_edges, duration))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BinningConfig {
    /// Start from `(t_cut, q)` and run the balance search.
    Balanced {
        unit: DurationUnit,
        t_cut: f64,
        q: usize,
        balance_tol: f64,
        max_iter: usize,
    },
    /// Fixed total number of bins (short + quantile).
    TotalBins {
        unit: DurationUnit,
        t_cut: f64,
        total_bins: usize,
    },
    /// Two bins: zero duration and non-zero duration.
    ZeroNonZero,
}

impl BinningConfig {
    /// Minutes rounded up, 5-minute cut, 24 bins in total.
    pub fn patients() -> Self {
        BinningConfig::TotalBins {
            unit: DurationUnit::MinutesCeil,
            t_cut: 5.0,
            total_bins: 24,
        }
    }

    pub fn unit(&self) -> DurationUnit {
        match self {
            BinningConfig::Balanced { unit, .. } | BinningConfig::TotalBins { unit, .. } => *unit,
            BinningConfig::ZeroNonZero => DurationUnit::Seconds,
        }
    }

    /// Fits on durations given in seconds.
    pub fn fit(&self, seconds: &[i64]) -> Result<DurationBinning> {
        let unit = self.unit();
        let values: Vec<f64> = seconds.iter().map(|&s| unit.convert(s)).collect();
        let mut b = match self {
            BinningConfig::Balanced {
                t_cut,
                q,
                balance_tol,
                max_iter,
                ..
            } => fit_duration_binning(&values, *t_cut, *q, *balance_tol, *max_iter)?,
            BinningConfig::TotalBins { t_cut, total_bins, .. } => {
                fit_duration_binning_total(&values, *t_cut, *total_bins)?
            }
            BinningConfig::ZeroNonZero => {
                let mut b = fit_duration_binning(&values, 1.0, 1, f64::INFINITY, 0)?;
                b.style = BinLabelStyle::ZeroNonZero;
                b
            }
        };
        b.unit = unit;
        Ok(b)
    }
}

/// Tokens `A'|bin` with the bin label of each event's duration.
pub fn build_duration_corpus(log: &EventLog, binning: &DurationBinning) -> Corpus {
    Corpus {
        docs: log
            .cases
            .iter()
            .map(|case| {
                case.events
                    .iter()
                    .map(|e| {
                        let id = assign_bin(binning.unit.convert(e.duration), binning);
                        format!("{}|{}", e.token(), binning.label(id))
                    })
                    .collect()
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfIdfModel {
    /// Vocabulary in lexicographic order; a term's column is its position.
    pub terms: Vec<String>,
    pub doc_freq: Vec<usize>,
    pub n_docs: usize,
}

impl TfIdfModel {
    pub fn width(&self) -> usize {
        self.terms.len()
    }

    pub fn column(&self, term: &str) -> Option<usize> {
        self.terms.binary_search_by(|t| t.as_str().cmp(term)).ok()
    }

    /// Smoothed idf: `ln((1 + N) / (1 + df)) + 1`.
    pub fn idf(&self, column: usize) -> f64 {
        ((1.0 + self.n_docs as f64) / (1.0 + self.doc_freq[column] as f64)).ln() + 1.0
    }
}

pub fn tfidf_fit(corpus: &Corpus) -> Result<TfIdfModel> {
    if corpus.docs.is_empty() {
        return Err(CoreError::Config("tf-idf needs a non-empty corpus".into()));
    }
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in &corpus.docs {
        let mut seen: Vec<&str> = doc.iter().map(String::as_str).collect();
        seen.sort_unstable();
        seen.dedup();
        for t in seen {
            *df.entry(t).or_default() += 1;
        }
    }
    Ok(TfIdfModel {
        terms: df.keys().map(|t| t.to_string()).collect(),
        doc_freq: df.values().copied().collect(),
        n_docs: corpus.docs.len(),
    })
}

/// Per-event-occurrence tf-idf rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMatrix {
    pub terms: Vec<String>,
    /// `(document, position)` of each row.
    pub rows: Vec<(usize, usize)>,
    pub values: Array2<f64>,
}

impl EmbeddingMatrix {
    /// Rows belonging to document `doc`, as a `(len, width)` matrix. Rows
    /// are stored document-major, so this is a contiguous range.
    pub fn doc_rows(&self, doc: usize) -> ndarray::ArrayView2<'_, f64> {
        let lo = self.rows.partition_point(|&(d, _)| d < doc);
        let hi = self.rows.partition_point(|&(d, _)| d <= doc);
        self.values.slice(ndarray::s![lo..hi, ..])
    }
}

/// Raw-count tf times smoothed idf; one row per token occurrence. Terms unseen
/// by the model get an all-zero row.
pub fn tfidf_matrix(corpus: &Corpus, model: &TfIdfModel) -> EmbeddingMatrix {
    let n = corpus.n_tokens();
    let mut values = Array2::zeros((n, model.width()));
    let mut rows = Vec::with_capacity(n);
    let mut unknown = 0usize;
    let mut r = 0;
    for (d, doc) in corpus.docs.iter().enumerate() {
        let mut tf: BTreeMap<&str, usize> = BTreeMap::new();
        for t in doc {
            *tf.entry(t.as_str()).or_default() += 1;
        }
        for (p, t) in doc.iter().enumerate() {
            match model.column(t) {
                Some(c) => values[[r, c]] = tf[t.as_str()] as f64 * model.idf(c),
                None => unknown += 1,
            }
            rows.push((d, p));
            r += 1;
        }
    }
    if unknown > 0 {
        warn!("{unknown} token occurrences are outside the tf-idf vocabulary; their rows are zero");
    }
    EmbeddingMatrix {
        terms: model.terms.clone(),
        rows,
        values,
    }
}

/// Largest value of each column.
pub fn column_max(matrix: &EmbeddingMatrix) -> Vec<f64> {
    matrix
        .values
        .columns()
        .into_iter()
        .map(|c| c.iter().copied().fold(0.0, f64::max))
        .collect()
}

/// Divides each column by `maxima[c]`; zero maxima leave the column as is.
pub fn scale_columns(mut matrix: EmbeddingMatrix, maxima: &[f64]) -> EmbeddingMatrix {
    for (mut col, &m) in matrix.values.columns_mut().into_iter().zip(maxima) {
        if m > 0.0 {
            col.mapv_inplace(|v| v / m);
        }
    }
    matrix
}

/// Per-column min-max scaling; the minimum is 0 by construction.
pub fn minmax_normalize(matrix: EmbeddingMatrix) -> EmbeddingMatrix {
    let maxima = column_max(&matrix);
    scale_columns(matrix, &maxima)
}

/// Columnar text format:
///
/// ```text
/// pbpm-embedding v1
/// terms <n>
/// <one term per line>
/// rows <r>
/// <doc> <pos> <v_1> ... <v_n>
/// ```
pub fn write_embedding_matrix<W: Write>(m: &EmbeddingMatrix, mut w: W) -> Result<()> {
    writeln!(w, "pbpm-embedding v1")?;
    writeln!(w, "terms {}", m.terms.len())?;
    for t in &m.terms {
        writeln!(w, "{t}")?;
    }
    writeln!(w, "rows {}", m.rows.len())?;
    let mut line = String::new();
    for (i, (d, p)) in m.rows.iter().enumerate() {
        line.clear();
        write!(line, "{d} {p}").expect("string write");
        for v in m.values.row(i) {
            write!(line, " {v}").expect("string write");
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_embedding_matrix<R: BufRead>(r: R) -> Result<EmbeddingMatrix> {
    let bad = |m: &str| CoreError::Format(format!("embedding matrix: {m}"));
    let mut lines = r.lines();
    let mut next = || -> Result<String> { lines.next().ok_or_else(|| bad("unexpected end of input"))?.map_err(Into::into) };
    if next()? != "pbpm-embedding v1" {
        return Err(bad("missing header"));
    }
    let count = |line: String, key: &str| -> Result<usize> {
        line.strip_prefix(key)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad(&format!("expected `{key} <n>`")))
    };
    let n_terms = count(next()?, "terms")?;
    let terms = (0..n_terms).map(|_| next()).collect::<Result<Vec<_>>>()?;
    let n_rows = count(next()?, "rows")?;
    let mut rows = Vec::with_capacity(n_rows);
    let mut values = Array2::zeros((n_rows, n_terms));
    for i in 0..n_rows {
        let line = next()?;
        let mut parts = line.split_whitespace();
        let mut int = || parts.next().and_then(|s| s.parse::<usize>().ok()).ok_or_else(|| bad("bad row index"));
        rows.push((int()?, int()?));
        let vals: Vec<f64> = parts
            .map(|s| s.parse::<f64>().map_err(|_| bad("bad value")))
            .collect::<Result<_>>()?;
        if vals.len() != n_terms {
            return Err(bad(&format!("row {i} has {} values, expected {n_terms}", vals.len())));
        }
        values.row_mut(i).assign(&ndarray::Array1::from(vals));
    }
    Ok(EmbeddingMatrix { terms, rows, values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub binning: BinningConfig,
    /// Append a constant universal attribute when the log has only one.
    pub add_dummy: bool,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            binning: BinningConfig::Balanced {
                unit: DurationUnit::Seconds,
                t_cut: 5.0,
                q: 4,
                balance_tol: 0.2,
                max_iter: 50,
            },
            add_dummy: true,
        }
    }
}

/// Binning, vocabularies, idf and column maxima fitted on a training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedEmbeddings {
    pub binning: Option<DurationBinning>,
    pub bin_model: Option<TfIdfModel>,
    pub bin_max: Vec<f64>,
    pub cor_model: Option<TfIdfModel>,
    pub cor_max: Vec<f64>,
    pub add_dummy: bool,
}

impl FittedEmbeddings {
    pub fn fit(train: &EventLog, config: &EmbeddingConfig, want_bin: bool, want_cor: bool) -> Result<Self> {
        let mut out = FittedEmbeddings {
            binning: None,
            bin_model: None,
            bin_max: Vec::new(),
            cor_model: None,
            cor_max: Vec::new(),
            add_dummy: config.add_dummy,
        };
        if want_bin {
            if !train.has_end_times {
                return Err(CoreError::Config(
                    "duration bins need completion timestamps, but the log has none".into(),
                ));
            }
            let durations: Vec<i64> = train.cases.iter().flat_map(|c| c.events.iter().map(|e| e.duration)).collect();
            let binning = config.binning.fit(&durations)?;
            let corpus = build_duration_corpus(train, &binning);
            let model = tfidf_fit(&corpus)?;
            out.bin_max = column_max(&tfidf_matrix(&corpus, &model));
            out.binning = Some(binning);
            out.bin_model = Some(model);
        }
        if want_cor {
            let corpus = build_correlation_corpus(train, config.add_dummy)?;
            let model = tfidf_fit(&corpus)?;
            out.cor_max = column_max(&tfidf_matrix(&corpus, &model));
            out.cor_model = Some(model);
        }
        Ok(out)
    }

    /// Normalized duration-bin matrix for `log` (train-fitted scaling, no clamping).
    pub fn bin_matrix(&self, log: &EventLog) -> Option<EmbeddingMatrix> {
        let (b, m) = (self.binning.as_ref()?, self.bin_model.as_ref()?);
        Some(scale_columns(tfidf_matrix(&build_duration_corpus(log, b), m), &self.bin_max))
    }

    pub fn cor_matrix(&self, log: &EventLog) -> Result<Option<EmbeddingMatrix>> {
        let Some(m) = self.cor_model.as_ref() else {
            return Ok(None);
        };
        let corpus = build_correlation_corpus(log, self.add_dummy)?;
        Ok(Some(scale_columns(tfidf_matrix(&corpus, m), &self.cor_max)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(docs: &[&[&str]]) -> Corpus {
        Corpus {
            docs: docs.iter().map(|d| d.iter().map(|s| s.to_string()).collect()).collect(),
        }
    }

    #[test]
    fn idf_examples() {
        let c = corpus(&[&["a", "b"], &["a"]]);
        let m = tfidf_fit(&c).unwrap();
        assert_eq!(m.terms, vec!["a", "b"]);
        assert!((m.idf(0) - 1.0).abs() < 1e-15);
        assert!((m.idf(1) - ((3.0f64 / 2.0).ln() + 1.0)).abs() < 1e-15);
        assert!((m.idf(1) - 1.405465).abs() < 1e-6);

        let single = corpus(&[&["a"]]);
        let mm = tfidf_matrix(&single, &tfidf_fit(&single).unwrap());
        assert_eq!(mm.values[[0, 0]], 1.0);

        let rep = corpus(&[&["a", "a"], &["b"]]);
        let model = tfidf_fit(&rep).unwrap();
        let mm = tfidf_matrix(&rep, &model);
        assert_eq!(mm.values[[0, 0]], 2.0 * model.idf(0));
        assert_eq!(mm.values[[0, 1]], 0.0);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(tfidf_fit(&corpus(&[])).is_err());
    }

    #[test]
    fn unknown_terms_give_zero_rows() {
        let model = tfidf_fit(&corpus(&[&["a"]])).unwrap();
        let m = tfidf_matrix(&corpus(&[&["z", "a"]]), &model);
        assert_eq!(m.values.row(0).sum(), 0.0);
        assert_eq!(m.values[[1, 0]], 1.0);
    }

    fn matrix(col: &[f64]) -> EmbeddingMatrix {
        EmbeddingMatrix {
            terms: vec!["t".into()],
            rows: (0..col.len()).map(|i| (0, i)).collect(),
            values: Array2::from_shape_vec((col.len(), 1), col.to_vec()).unwrap(),
        }
    }

    #[test]
    fn minmax_examples() {
        let m = minmax_normalize(matrix(&[0.0, 2.0, 4.0]));
        assert_eq!(m.values.column(0).to_vec(), vec![0.0, 0.5, 1.0]);
        assert_eq!(minmax_normalize(matrix(&[3.0])).values[[0, 0]], 1.0);
        assert_eq!(minmax_normalize(matrix(&[0.0, 0.0])).values.column(0).to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn small_binning_example() {
        let d = [1.0, 1.0, 2.0, 7.0, 8.0, 9.0, 10.0];
        let b = fit_duration_binning(&d, 5.0, 2, 0.2, 10).unwrap();
        assert_eq!(b.unique_bins, vec![1.0, 2.0]);
        assert_eq!(b.quantile_edges, vec![5.0, 8.5, 10.0]);
        assert_eq!(b.frequencies, vec![2, 1, 2, 2]);
        assert_eq!(assign_bin(8.0, &b), BinId::Long(0));
        assert_eq!(assign_bin(10.0, &b), BinId::Long(1));
        assert_eq!(assign_bin(1.0, &b), BinId::Short(0));
        assert_eq!(b.label(BinId::Long(1)), "q2");
        assert_eq!(b.label(BinId::Short(1)), "u2");
    }

    #[test]
    fn identical_durations_make_one_bin() {
        let b = fit_duration_binning(&[7.0; 5], 5.0, 3, 0.2, 10).unwrap();
        assert_eq!(b.total_bins(), 1);
        assert_eq!(b.report.iterations, 0);
        let b = fit_duration_binning(&[3.0; 5], 5.0, 3, 0.2, 10).unwrap();
        assert_eq!(b.total_bins(), 1);
        assert_eq!(assign_bin(3.0, &b), BinId::Short(0));
    }

    #[test]
    fn empty_durations_error() {
        assert!(fit_duration_binning(&[], 5.0, 2, 0.2, 10).is_err());
    }

    #[test]
    fn zero_nonzero_style() {
        let b = BinningConfig::ZeroNonZero.fit(&[0, 0, 5, 100, 0]).unwrap();
        assert_eq!(b.total_bins(), 2);
        assert_eq!(b.label(assign_bin(0.0, &b)), "zero");
        assert_eq!(b.label(assign_bin(42.0, &b)), "nonzero");
    }

    #[test]
    fn minutes_round_up() {
        assert_eq!(DurationUnit::MinutesCeil.convert(61), 2.0);
        assert_eq!(DurationUnit::MinutesCeil.convert(0), 0.0);
        assert_eq!(DurationUnit::MinutesCeil.convert(60), 1.0);
    }

    #[test]
    fn unseen_short_value_goes_to_nearest() {
        let b = fit_duration_binning(&[1.0, 3.0, 9.0], 5.0, 1, 0.2, 5).unwrap();
        assert_eq!(assign_bin(2.9, &b), BinId::Short(1));
    }

    #[test]
    fn embedding_text_round_trip() {
        let c = corpus(&[&["a", "b", "a"], &["c"]]);
        let m = minmax_normalize(tfidf_matrix(&c, &tfidf_fit(&c).unwrap()));
        let mut buf = Vec::new();
        write_embedding_matrix(&m, &mut buf).unwrap();
        assert_eq!(read_embedding_matrix(buf.as_slice()).unwrap(), m);
    }
}
