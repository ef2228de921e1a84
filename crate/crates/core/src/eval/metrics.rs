use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when checking computed metrics against reference values.
pub const DEFAULT_TOLERANCE: f64 = 0.005;

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = classes.len();
        if counts.len() != k || counts.iter().any(|r| r.len() != k) {
            let cols = counts.first().map_or(0, Vec::len);
            return Err(Error::shape("confusion matrix", &[k, k], &[counts.len(), cols]));
        }
        Ok(Self { classes, counts })
    }

    pub fn zeros(classes: Vec<String>) -> Self {
        let k = classes.len();
        Self { classes, counts: vec![vec![0; k]; k] }
    }

    /// Counts `(truth, prediction)` pairs.
    pub fn from_predictions(classes: Vec<String>, truths: &[usize], preds: &[usize]) -> Result<Self> {
        if truths.len() != preds.len() {
            return Err(Error::shape("predictions", &[truths.len()], &[preds.len()]));
        }
        let mut cm = Self::zeros(classes);
        let k = cm.k();
        for (i, (&t, &p)) in truths.iter().zip(preds).enumerate() {
            if t >= k || p >= k {
                return Err(Error::Label(format!("sample {i}: label pair ({t}, {p}) outside 0..{k}")));
            }
            cm.counts[t][p] += 1;
        }
        Ok(cm)
    }

    pub fn k(&self) -> usize {
        self.classes.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.k()).map(|j| self.counts.iter().map(|r| r[j]).sum()).collect()
    }

    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| self.trace() as f64 / total as f64)
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = self
            .counts
            .iter()
            .flatten()
            .map(|c| c.to_string().len())
            .chain(self.classes.iter().map(String::len))
            .max()
            .unwrap_or(1);
        write!(f, "{:>w$}", "true\\pred")?;
        let w = w.max("true\\pred".len());
        for c in &self.classes {
            write!(f, "  {c:>w$}")?;
        }
        for (c, row) in self.classes.iter().zip(&self.counts) {
            write!(f, "\n{c:>w$}")?;
            for v in row {
                write!(f, "  {v:>w$}")?;
            }
        }
        Ok(())
    }
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// One-vs-rest counts and metrics for one class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// `(tp + tn) / total`
    pub accuracy: f64,
    /// `tp / (tp + fp)`
    pub precision: f64,
    /// `tp / (tp + fn)`
    pub sensitivity: f64,
    /// `2 tp / (2 tp + fp + fn)`
    pub f1: f64,
    /// Set when some denominator was zero and the metric was reported as 0.
    pub degenerate: bool,
}

pub fn class_metrics(cm: &ConfusionMatrix, class: usize) -> Result<ClassMetrics> {
    let k = cm.k();
    if class >= k {
        return Err(Error::Parameter(format!("class index {class} outside 0..{k}")));
    }
    let total = cm.total();
    let tp = cm.counts[class][class];
    let fn_ = cm.row_sums()[class] - tp;
    let fp = cm.col_sums()[class] - tp;
    let tn = total - tp - fn_ - fp;
    let (accuracy, d0) = ratio(tp + tn, total);
    let (precision, d1) = ratio(tp, tp + fp);
    let (sensitivity, d2) = ratio(tp, tp + fn_);
    let (f1, d3) = ratio(2 * tp, 2 * tp + fp + fn_);
    Ok(ClassMetrics {
        class: cm.classes[class].clone(),
        tp,
        tn,
        fp,
        fn_,
        accuracy,
        precision,
        sensitivity,
        f1,
        degenerate: d0 || d1 || d2 || d3,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub precision: f64,
    pub sensitivity: f64,
    pub f1: f64,
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub total: u64,
    /// `trace / total`
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Counts pooled over classes before dividing.
    pub micro: Aggregate,
    /// Unweighted mean of the per-class metrics.
    #[serde(rename = "macro")]
    pub macro_: Aggregate,
}

pub fn aggregate_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyInput("confusion matrix has no samples".into()));
    }
    let per_class = (0..cm.k()).map(|c| class_metrics(cm, c)).collect::<Result<Vec<_>>>()?;
    let tp: u64 = per_class.iter().map(|m| m.tp).sum();
    let fp: u64 = per_class.iter().map(|m| m.fp).sum();
    let fn_: u64 = per_class.iter().map(|m| m.fn_).sum();
    let (precision, d1) = ratio(tp, tp + fp);
    let (sensitivity, d2) = ratio(tp, tp + fn_);
    let (f1, d3) = ratio(2 * tp, 2 * tp + fp + fn_);
    let k = per_class.len() as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k;
    let macro_ = Aggregate {
        precision: mean(|m| m.precision),
        sensitivity: mean(|m| m.sensitivity),
        f1: mean(|m| m.f1),
        degenerate: per_class.iter().any(|m| m.degenerate),
    };
    Ok(MetricsReport {
        total,
        accuracy: cm.trace() as f64 / total as f64,
        micro: Aggregate { precision, sensitivity, f1, degenerate: d1 || d2 || d3 },
        macro_,
        per_class,
    })
}

/// Expected values to check a report against. Precision, sensitivity and
/// F1 are compared with the micro aggregates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub sensitivity: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: String,
    pub computed: f64,
    pub reference: f64,
    pub delta: f64,
    pub pass: bool,
}

pub fn compare(report: &MetricsReport, reference: &Reference, tolerance: f64) -> Vec<Comparison> {
    [
        ("accuracy", report.accuracy, reference.accuracy),
        ("precision", report.micro.precision, reference.precision),
        ("sensitivity", report.micro.sensitivity, reference.sensitivity),
        ("f1", report.micro.f1, reference.f1),
    ]
    .into_iter()
    .filter_map(|(metric, computed, want)| {
        want.map(|reference| {
            let delta = computed - reference;
            Comparison {
                metric: metric.to_string(),
                computed,
                reference,
                delta,
                pass: delta.abs() <= tolerance + 1e-12,
            }
        })
    })
    .collect()
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text rendering; with `comparisons`, adds a reference section.
    pub fn render(&self, comparisons: &[Comparison], tolerance: f64) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<8} {:>7} {:>7} {:>7} {:>7} {:>9} {:>9} {:>11} {:>8}",
            "class", "tp", "tn", "fp", "fn", "accuracy", "precision", "sensitivity", "f1"
        );
        for m in &self.per_class {
            let _ = writeln!(
                s,
                "{:<8} {:>7} {:>7} {:>7} {:>7} {:>9.5} {:>9.5} {:>11.5} {:>8.5}{}",
                m.class,
                m.tp,
                m.tn,
                m.fp,
                m.fn_,
                m.accuracy,
                m.precision,
                m.sensitivity,
                m.f1,
                if m.degenerate { "  (degenerate)" } else { "" }
            );
        }
        for (name, a) in [("micro", &self.micro), ("macro", &self.macro_)] {
            let _ = writeln!(
                s,
                "{name:<8} {:>7} {:>7} {:>7} {:>7} {:>9} {:>9.5} {:>11.5} {:>8.5}",
                "", "", "", "", "", a.precision, a.sensitivity, a.f1
            );
        }
        let _ = writeln!(s, "overall accuracy {:.5} over {} samples", self.accuracy, self.total);
        if !comparisons.is_empty() {
            let _ = writeln!(s, "reference comparison (tolerance {tolerance}):");
            for c in comparisons {
                let _ = writeln!(
                    s,
                    "  {:<4} {:<11} computed {:.5}  reference {:.4}  delta {:+.5}",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.metric,
                    c.computed,
                    c.reference,
                    c.delta
                );
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn perfect_predictions_give_diagonal() {
        let t = [0, 1, 2, 3, 3, 1];
        let cm = ConfusionMatrix::from_predictions(names(4), &t, &t).unwrap();
        assert_eq!(cm.trace(), 6);
        let r = aggregate_metrics(&cm).unwrap();
        for m in &r.per_class {
            assert_eq!((m.accuracy, m.precision, m.sensitivity, m.f1), (1.0, 1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn empty_input_is_zero_matrix() {
        let cm = ConfusionMatrix::from_predictions(names(4), &[], &[]).unwrap();
        assert_eq!(cm.total(), 0);
        assert!(matches!(aggregate_metrics(&cm), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn out_of_range_label_names_sample() {
        let err = ConfusionMatrix::from_predictions(names(4), &[0, 4], &[0, 0]).unwrap_err();
        assert!(err.to_string().contains("sample 1"), "{err}");
    }

    #[test]
    fn all_wrong_two_class() {
        let cm = ConfusionMatrix::new(names(2), vec![vec![0, 5], vec![5, 0]]).unwrap();
        let m = class_metrics(&cm, 0).unwrap();
        assert_eq!((m.precision, m.sensitivity, m.f1), (0.0, 0.0, 0.0));
        assert!(!m.degenerate);
    }

    #[test]
    fn absent_class_is_degenerate_not_nan() {
        let cm = ConfusionMatrix::new(names(2), vec![vec![3, 0], vec![0, 0]]).unwrap();
        let m = class_metrics(&cm, 1).unwrap();
        assert_eq!(m.precision, 0.0);
        assert!(m.degenerate);
    }

    #[test]
    fn bad_class_index() {
        let cm = ConfusionMatrix::zeros(names(2));
        assert!(matches!(class_metrics(&cm, 2), Err(Error::Parameter(_))));
    }
}
