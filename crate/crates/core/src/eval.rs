//! Confusion matrices and classification reports.
//!
//! Undefined precision or recall (zero denominator) is reported as 0 and
//! flagged on the class row.

use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// `cm[[i, j]]` counts cases of true class `i` predicted as `j`.
pub fn confusion_matrix(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<Array2<u64>> {
    if y_true.len() != y_pred.len() {
        return Err(CoreError::Config(format!(
            "confusion matrix: {} true labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut cm = Array2::zeros((n_classes, n_classes));
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= n_classes || p >= n_classes {
            return Err(CoreError::Config(format!(
                "confusion matrix: label {} out of range for {n_classes} classes",
                t.max(p)
            )));
        }
        cm[[t, p]] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Nothing was predicted as this class.
    pub precision_undefined: bool,
    /// The class has no true cases.
    pub recall_undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub classes: Vec<ClassMetrics>,
    pub total: u64,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn classification_report(cm: &Array2<u64>, class_names: Option<&[String]>) -> Result<ClassificationReport> {
    let n = cm.nrows();
    if cm.ncols() != n {
        return Err(CoreError::Config(format!("confusion matrix must be square, got {:?}", cm.shape())));
    }
    if let Some(names) = class_names {
        if names.len() != n {
            return Err(CoreError::Config(format!("{} class names for {n} classes", names.len())));
        }
    }
    let total: u64 = cm.sum();
    let mut classes = Vec::with_capacity(n);
    for c in 0..n {
        let tp = cm[[c, c]];
        let support: u64 = cm.row(c).sum();
        let predicted: u64 = cm.column(c).sum();
        let (precision, p_undef) = ratio(tp, predicted);
        let (recall, r_undef) = ratio(tp, support);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        classes.push(ClassMetrics {
            name: class_names.map_or_else(|| c.to_string(), |names| names[c].clone()),
            precision,
            recall,
            f1,
            support,
            precision_undefined: p_undef,
            recall_undefined: r_undef,
        });
    }
    let trace: u64 = (0..n).map(|c| cm[[c, c]]).sum();
    let accuracy = ratio(trace, total).0;
    let mean = |f: fn(&ClassMetrics) -> f64| {
        if n == 0 {
            0.0
        } else {
            classes.iter().map(f).sum::<f64>() / n as f64
        }
    };
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        if total == 0 {
            0.0
        } else {
            classes.iter().map(|m| m.support as f64 * f(m)).sum::<f64>() / total as f64
        }
    };
    Ok(ClassificationReport {
        total,
        accuracy,
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        weighted_precision: weighted(|m| m.precision),
        weighted_recall: weighted(|m| m.recall),
        weighted_f1: weighted(|m| m.f1),
        classes,
    })
}

/// Micro-averaged F1 (pooled true positives, false positives and negatives).
pub fn micro_f1(cm: &Array2<u64>) -> f64 {
    let n = cm.nrows();
    let tp: u64 = (0..n).map(|c| cm[[c, c]]).sum();
    let total: u64 = cm.sum();
    let fp = total - tp;
    let fn_ = total - tp;
    if tp == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2.0 * tp as f64 + fp as f64 + fn_ as f64)
}

pub fn accuracy(y_true: &[usize], y_pred: &[usize]) -> f64 {
    if y_true.is_empty() {
        return 0.0;
    }
    y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count() as f64 / y_true.len() as f64
}

pub fn weighted_f1(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<f64> {
    let cm = confusion_matrix(y_true, y_pred, n_classes)?;
    Ok(classification_report(&cm, None)?.weighted_f1)
}

fn fmt_score(v: f64) -> String {
    if v == 1.0 {
        "1".to_string()
    } else {
        format!("{v:.4}")
    }
}

impl ClassificationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Plain-text table: one row per class (precision, recall, F1, support),
    /// then accuracy, macro and weighted rows.
    pub fn render(&self) -> String {
        render_side_by_side(&[("model".to_string(), self.clone())])
    }
}

/// Several reports over the same classes, one P/R/F1 column group per model.
/// Footer rows: `A` accuracy (in the F1 column), `M` macro, `W` weighted.
pub fn render_side_by_side(reports: &[(String, ClassificationReport)]) -> String {
    let mut out = String::new();
    let Some((_, first)) = reports.first() else {
        return out;
    };
    let name_w = first.classes.iter().map(|c| c.name.len()).max().unwrap_or(1).max(5);
    let cell = 8;
    let _ = write!(out, "{:<name_w$}", "class");
    for (model, _) in reports {
        let _ = write!(out, " | {:^w$}", model, w = 3 * cell + 2);
    }
    let _ = writeln!(out, " | {:>7}", "support");
    let _ = write!(out, "{:<name_w$}", "");
    for _ in reports {
        let _ = write!(out, " | {:>cell$} {:>cell$} {:>cell$}", "P", "R", "F1");
    }
    let _ = writeln!(out, " |");
    let rule_len = out.lines().next().map_or(0, str::len);
    let _ = writeln!(out, "{}", "-".repeat(rule_len));
    for (c, row) in first.classes.iter().enumerate() {
        let mut flagged = false;
        let _ = write!(out, "{:<name_w$}", row.name);
        for (_, r) in reports {
            let m = &r.classes[c];
            flagged |= m.precision_undefined || m.recall_undefined;
            let _ = write!(
                out,
                " | {:>cell$} {:>cell$} {:>cell$}",
                fmt_score(m.precision),
                fmt_score(m.recall),
                fmt_score(m.f1)
            );
        }
        let _ = writeln!(out, " | {:>7}{}", row.support, if flagged { " *" } else { "" });
    }
    let _ = writeln!(out, "{}", "-".repeat(rule_len));
    let footer = |out: &mut String, label: &str, f: &dyn Fn(&ClassificationReport) -> [Option<f64>; 3]| {
        let _ = write!(out, "{label:<name_w$}");
        for (_, r) in reports {
            let v = f(r).map(|x| x.map_or(String::new(), fmt_score));
            let _ = write!(out, " | {:>cell$} {:>cell$} {:>cell$}", v[0], v[1], v[2]);
        }
        let _ = writeln!(out, " | {:>7}", first.total);
    };
    footer(&mut out, "A", &|r| [None, None, Some(r.accuracy)]);
    footer(&mut out, "M", &|r| [Some(r.macro_precision), Some(r.macro_recall), Some(r.macro_f1)]);
    footer(&mut out, "W", &|r| {
        [Some(r.weighted_precision), Some(r.weighted_recall), Some(r.weighted_f1)]
    });
    if reports.iter().any(|(_, r)| r.classes.iter().any(|m| m.precision_undefined || m.recall_undefined)) {
        let _ = writeln!(out, "* precision or recall undefined (reported as 0)");
    }
    out
}

/// Per-class accuracy (recall) with an `avg` row of overall accuracy; one
/// column per model.
pub fn render_accuracy_table(reports: &[(String, ClassificationReport)]) -> String {
    let mut out = String::new();
    let Some((_, first)) = reports.first() else {
        return out;
    };
    let name_w = first.classes.iter().map(|c| c.name.len()).max().unwrap_or(3).max(7);
    let col_w = reports.iter().map(|(m, _)| m.len()).max().unwrap_or(4).max(6);
    let _ = write!(out, "{:<name_w$}", "");
    for (m, _) in reports {
        let _ = write!(out, "  {m:>col_w$}");
    }
    out.push('\n');
    for (c, row) in first.classes.iter().enumerate() {
        let _ = write!(out, "{:<name_w$}", row.name);
        for (_, r) in reports {
            let _ = write!(out, "  {:>col_w$.2}", r.classes[c].recall);
        }
        out.push('\n');
    }
    let _ = write!(out, "{:<name_w$}", "avg");
    for (_, r) in reports {
        let _ = write!(out, "  {:>col_w$.2}", r.accuracy);
    }
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn confusion_examples() {
        assert_eq!(confusion_matrix(&[0, 1], &[0, 1], 2).unwrap(), array![[1, 0], [0, 1]]);
        assert_eq!(confusion_matrix(&[0, 0, 1], &[0, 1, 1], 2).unwrap(), array![[1, 1], [0, 1]]);
        assert_eq!(confusion_matrix(&[], &[], 3).unwrap(), Array2::<u64>::zeros((3, 3)));
        assert!(confusion_matrix(&[0], &[], 2).is_err());
        assert!(confusion_matrix(&[2], &[0], 2).is_err());
    }

    #[test]
    fn forced_arithmetic_report() {
        let r = classification_report(&array![[1, 1], [0, 1]], None).unwrap();
        let c0 = &r.classes[0];
        let c1 = &r.classes[1];
        assert_eq!((c0.precision, c0.recall), (1.0, 0.5));
        assert_eq!((c1.precision, c1.recall), (0.5, 1.0));
        assert!((c0.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((c1.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.accuracy - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.weighted_f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_diagonal() {
        let r = classification_report(&array![[5, 0, 0], [0, 4, 0], [0, 0, 9]], None).unwrap();
        assert!(r.classes.iter().all(|c| c.precision == 1.0 && c.recall == 1.0 && c.f1 == 1.0));
        assert_eq!((r.accuracy, r.macro_f1, r.weighted_f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn zero_support_is_flagged() {
        let r = classification_report(&array![[3, 0], [0, 0]], None).unwrap();
        let c1 = &r.classes[1];
        assert_eq!((c1.precision, c1.recall, c1.f1, c1.support), (0.0, 0.0, 0.0, 0));
        assert!(c1.precision_undefined && c1.recall_undefined);
        assert!(r.render().contains('*'));
    }

    #[test]
    fn json_round_trip_and_render() {
        let names = vec!["accept".to_string(), "decline".to_string()];
        let r = classification_report(&array![[4, 1], [2, 3]], Some(&names)).unwrap();
        assert_eq!(ClassificationReport::from_json(&r.to_json().unwrap()).unwrap(), r);
        let table = render_accuracy_table(&[("M".into(), r.clone())]);
        assert!(table.contains("accept") && table.contains("avg") && table.contains("0.70"));
        assert!(r.render().lines().any(|l| l.starts_with('W')));
    }
}
