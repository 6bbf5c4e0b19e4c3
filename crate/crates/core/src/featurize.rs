//! Table-driven decomposition of activity labels into a verb and a fixed
//! number of descriptor tokens.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::event_log::EventLog;

pub const NO_DESC: &str = "<NO_DESC>";

const PATIENTS_TABLE: &str = include_str!("../data/featurization/patients.csv");
const PATIENTS_EXTENDED_TABLE: &str = include_str!("../data/featurization/patients_extended.csv");
const BPIC12_TABLE: &str = include_str!("../data/featurization/bpic12.csv");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeaturizedLabel {
    pub verb: String,
    /// Exactly `k_max` entries, padded with [`NO_DESC`].
    pub descriptors: Vec<String>,
    /// Verb and present descriptors joined by `_`.
    pub relabeled: String,
}

/// Persisted as CSV (see [`FeaturizationTable::to_csv_string`]).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeaturizationTable {
    /// `(label, verb, descriptors)` in file order.
    entries: Vec<(String, String, Vec<String>)>,
    index: HashMap<String, usize>,
    k_max: usize,
}

impl FeaturizationTable {
    /// Reads `label,verb,descriptor1..k` CSV. Empty cells and `<NO_DESC>`
    /// mark absent descriptors; `k_max` is the largest descriptor count found.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let label = rec.get(0).unwrap_or("").to_string();
            if label.is_empty() {
                return Err(CoreError::Table(format!("line {line}: empty label")));
            }
            let verb = rec.get(1).unwrap_or("").to_lowercase();
            if verb.is_empty() || verb == NO_DESC.to_lowercase() {
                return Err(CoreError::Table(format!("line {line}: empty verb for {label:?}")));
            }
            let descriptors: Vec<String> = rec
                .iter()
                .skip(2)
                .filter(|d| !d.is_empty() && !d.eq_ignore_ascii_case(NO_DESC))
                .map(str::to_lowercase)
                .collect();
            for tok in std::iter::once(&verb).chain(&descriptors) {
                if tok.contains(char::is_whitespace) || tok.contains('_') {
                    return Err(CoreError::Table(format!(
                        "line {line}: token {tok:?} must be a single word"
                    )));
                }
            }
            rows.push((label, verb, descriptors));
        }
        Self::from_entries(rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }

    pub fn from_entries(rows: Vec<(String, String, Vec<String>)>) -> Result<Self> {
        let k_max = rows.iter().map(|(_, _, d)| d.len()).max().unwrap_or(0).max(1);
        let mut index = HashMap::new();
        let mut entries = Vec::with_capacity(rows.len());
        for (label, verb, mut descriptors) in rows {
            if index.insert(label.clone(), entries.len()).is_some() {
                return Err(CoreError::Table(format!("duplicate label {label:?}")));
            }
            descriptors.resize(k_max, NO_DESC.to_string());
            entries.push((label, verb, descriptors));
        }
        Ok(Self { entries, index, k_max })
    }

    /// Table III, Patients block.
    pub fn patients() -> Self {
        Self::from_csv_str(PATIENTS_TABLE).expect("bundled table is valid")
    }

    /// Patients table with the two-descriptor labels used in the worked
    /// examples (`check_insurance_history`, `check_insurance_payment`).
    pub fn patients_extended() -> Self {
        Self::from_csv_str(PATIENTS_EXTENDED_TABLE).expect("bundled table is valid")
    }

    /// Table III, BPIC12 block.
    pub fn bpic12() -> Self {
        Self::from_csv_str(BPIC12_TABLE).expect("bundled table is valid")
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(l, _, _)| l.as_str())
    }

    pub fn to_csv_string(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["label".to_string(), "verb".to_string()];
        header.extend((1..=self.k_max).map(|k| format!("descriptor{k}")));
        w.write_record(&header).expect("in-memory write");
        for (label, verb, desc) in &self.entries {
            let mut row = vec![label.clone(), verb.clone()];
            row.extend(desc.iter().cloned());
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
    }

    fn lookup(&self, label: &str) -> Option<&(String, String, Vec<String>)> {
        self.index.get(label).map(|&i| &self.entries[i])
    }

    /// Up to three known labels closest to `label` by normalized Levenshtein.
    pub fn nearest(&self, label: &str) -> Vec<String> {
        let mut scored: Vec<(f64, &str)> = self
            .labels()
            .map(|l| (strsim::normalized_levenshtein(&l.to_lowercase(), &label.to_lowercase()), l))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        scored.into_iter().take(3).map(|(_, l)| l.to_string()).collect()
    }
}

pub fn featurize_label(label: &str, table: &FeaturizationTable) -> Result<FeaturizedLabel> {
    let (_, verb, descriptors) = table.lookup(label).ok_or_else(|| CoreError::UnknownLabel {
        label: label.to_string(),
        case_id: None,
        nearest: table.nearest(label),
    })?;
    let mut relabeled = verb.clone();
    for d in descriptors.iter().filter(|d| d.as_str() != NO_DESC) {
        relabeled.push('_');
        relabeled.push_str(d);
    }
    Ok(FeaturizedLabel {
        verb: verb.clone(),
        descriptors: descriptors.clone(),
        relabeled,
    })
}

/// Attaches a [`FeaturizedLabel`] to every event; the raw label is kept in
/// `Event::activity`.
pub fn relabel_log(mut log: EventLog, table: &FeaturizationTable) -> Result<EventLog> {
    let mut cache: HashMap<String, FeaturizedLabel> = HashMap::new();
    for case in &mut log.cases {
        for e in &mut case.events {
            let f = match cache.get(&e.activity) {
                Some(f) => f.clone(),
                None => {
                    let f = featurize_label(&e.activity, table).map_err(|err| match err {
                        CoreError::UnknownLabel { label, nearest, .. } => CoreError::UnknownLabel {
                            label,
                            case_id: Some(case.case_id.clone()),
                            nearest,
                        },
                        other => other,
                    })?;
                    cache.insert(e.activity.clone(), f.clone());
                    f
                }
            };
            e.label = Some(f);
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_examples() {
        let t = FeaturizationTable::patients_extended();
        assert_eq!(t.k_max(), 2);
        let low = featurize_label("Initiate Low Application Check", &t).unwrap();
        assert_eq!(low.verb, "check");
        assert_eq!(low.descriptors, vec!["low", NO_DESC]);
        assert_eq!(low.relabeled, "check_low");
        let hist = featurize_label("Check Insurance History", &t).unwrap();
        assert_eq!(hist.descriptors, vec!["insurance", "history"]);
        assert_eq!(hist.relabeled, "check_insurance_history");
        let pay = featurize_label("Check Insurance Payment", &t).unwrap();
        assert_eq!(pay.relabeled, "check_insurance_payment");
    }

    #[test]
    fn bpic_partial_submission() {
        let f = featurize_label("PARTLYSUBMITTED", &FeaturizationTable::bpic12()).unwrap();
        assert_eq!((f.verb.as_str(), f.relabeled.as_str()), ("submit", "submit_partial"));
        assert_eq!(FeaturizationTable::bpic12().k_max(), 1);
        assert_eq!(FeaturizationTable::patients().k_max(), 1);
    }

    #[test]
    fn duplicate_rows_rejected() {
        let err = FeaturizationTable::from_csv_str("label,verb\nArchive,archive\nArchive,archive\n");
        assert!(matches!(err, Err(CoreError::Table(m)) if m.contains("Archive")));
    }

    #[test]
    fn empty_verb_rejected() {
        assert!(FeaturizationTable::from_csv_str("label,verb\nArchive,\n").is_err());
    }

    #[test]
    fn tokens_are_lowercased() {
        let t = FeaturizationTable::from_csv_str("label,verb,d1\nX,Check,LOW\n").unwrap();
        assert_eq!(featurize_label("X", &t).unwrap().relabeled, "check_low");
    }

    #[test]
    fn unknown_label_lists_neighbours() {
        match featurize_label("Archiv", &FeaturizationTable::patients()) {
            Err(CoreError::UnknownLabel { nearest, .. }) => assert_eq!(nearest[0], "Archive"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn relabeled_round_trips_by_splitting() {
        for t in [
            FeaturizationTable::patients(),
            FeaturizationTable::patients_extended(),
            FeaturizationTable::bpic12(),
        ] {
            for label in t.labels() {
                let f = featurize_label(label, &t).unwrap();
                let parts: Vec<&str> = f.relabeled.split('_').collect();
                let mut want = vec![f.verb.as_str()];
                want.extend(f.descriptors.iter().map(String::as_str).filter(|d| *d != NO_DESC));
                assert_eq!(parts, want);
            }
        }
    }

    #[test]
    fn csv_round_trip() {
        let t = FeaturizationTable::patients_extended();
        let again = FeaturizationTable::from_csv_str(&t.to_csv_string()).unwrap();
        assert_eq!(again, t);
    }
}
