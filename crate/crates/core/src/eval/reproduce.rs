use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{aggregate_metrics, compare, ConfusionMatrix, MetricsReport, Reference};
use crate::error::{Error, Result};
use crate::model::CLASS_NAMES;

const FIXTURE_JSON: &str = include_str!("../../fixtures/reference_results.json");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Training,
    Testing,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Training => "training",
            Phase::Testing => "testing",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEntry {
    pub model: String,
    pub phase: Phase,
    pub rows: Vec<Vec<u64>>,
    pub reference: Reference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowTotals {
    pub training: Vec<u64>,
    pub testing: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceFixture {
    #[serde(default)]
    pub description: String,
    pub classes: Vec<String>,
    pub row_totals: RowTotals,
    pub entries: Vec<ReferenceEntry>,
}

impl ReferenceFixture {
    pub fn parse(json: &str) -> Result<Self> {
        let fixture: Self =
            serde_json::from_str(json).map_err(|e| Error::Integrity(format!("unreadable fixture: {e}")))?;
        fixture.validate()?;
        Ok(fixture)
    }

    /// Checks class order, matrix shapes, per-class totals, and that
    /// reference values are proportions.
    pub fn validate(&self) -> Result<()> {
        if self.classes != CLASS_NAMES {
            return Err(Error::Integrity(format!("class order {:?}, expected {CLASS_NAMES:?}", self.classes)));
        }
        if self.entries.is_empty() {
            return Err(Error::Integrity("fixture has no entries".into()));
        }
        for e in &self.entries {
            let label = format!("{} {}", e.model, e.phase.name());
            let cm = ConfusionMatrix::new(self.classes.clone(), e.rows.clone())
                .map_err(|err| Error::Integrity(format!("{label}: {err}")))?;
            let want = match e.phase {
                Phase::Training => &self.row_totals.training,
                Phase::Testing => &self.row_totals.testing,
            };
            if cm.row_sums() != *want {
                return Err(Error::Integrity(format!(
                    "{label}: row sums {:?} differ from class totals {want:?}",
                    cm.row_sums()
                )));
            }
            let r = &e.reference;
            for v in [r.accuracy, r.precision, r.sensitivity, r.f1].into_iter().flatten() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Integrity(format!("{label}: reference value {v} outside [0, 1]")));
                }
            }
        }
        Ok(())
    }

    pub fn matrix(&self, entry: &ReferenceEntry) -> ConfusionMatrix {
        ConfusionMatrix { classes: self.classes.clone(), counts: entry.rows.clone() }
    }

    pub fn find(&self, model: &str, phase: Phase) -> Option<&ReferenceEntry> {
        self.entries.iter().find(|e| e.model == model && e.phase == phase)
    }
}

/// The embedded published matrices and metrics.
pub fn reference_fixture() -> Result<ReferenceFixture> {
    ReferenceFixture::parse(FIXTURE_JSON)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Pass,
    Fail,
    /// Training-phase row. The published training figures were not
    /// computed from the published training matrices, so these rows are
    /// reported and never gate the result.
    Note,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReproductionRow {
    pub model: String,
    pub phase: Phase,
    pub metric: String,
    pub computed: f64,
    pub reference: f64,
    pub delta: f64,
    /// |delta| <= tolerance.
    pub within: bool,
    pub status: Status,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reproduction {
    pub tolerance: f64,
    pub rows: Vec<ReproductionRow>,
    pub reports: Vec<(String, Phase, MetricsReport)>,
}

impl Reproduction {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.status == Status::Fail).count()
    }

    pub fn notes(&self) -> usize {
        self.rows.iter().filter(|r| r.status == Status::Note).count()
    }

    pub fn row(&self, model: &str, phase: Phase, metric: &str) -> Option<&ReproductionRow> {
        self.rows.iter().find(|r| r.model == model && r.phase == phase && r.metric == metric)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "Recomputed from the published confusion matrices (tolerance {}):", self.tolerance);
        for r in &self.rows {
            let _ = write!(
                s,
                "{:<4}  {:<12} {:<8}  {:<11}  computed {:.5}  reference {:.4}  delta {:+.5}",
                format!("{:?}", r.status).to_uppercase(),
                r.model,
                r.phase.name(),
                r.metric,
                r.computed,
                r.reference,
                r.delta
            );
            if r.status == Status::Note && !r.within {
                s.push_str("  (published training figure differs from its confusion matrix)");
            } else if r.status == Status::Note {
                s.push_str("  (training, not checked)");
            }
            s.push('\n');
        }
        let _ = writeln!(s, "macro averages (reported for completeness, not checked):");
        for (model, phase, rep) in &self.reports {
            let _ = writeln!(
                s,
                "      {:<12} {:<8}  precision {:.5}  sensitivity {:.5}  f1 {:.5}",
                model,
                phase.name(),
                rep.macro_.precision,
                rep.macro_.sensitivity,
                rep.macro_.f1
            );
        }
        let checked = self.rows.iter().filter(|r| r.phase == Phase::Testing).count();
        let _ = write!(
            s,
            "summary: {} of {checked} testing checks passed, {} failed; {} training notes",
            checked - self.rows.iter().filter(|r| r.phase == Phase::Testing && r.status == Status::Fail).count(),
            self.failures(),
            self.notes()
        );
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reproduction serializes")
    }
}

/// Recomputes accuracy and micro precision/sensitivity/F1 from each
/// matrix in `fixture` and checks them against the published values.
pub fn reproduce_published(fixture: &ReferenceFixture, tolerance: f64) -> Result<Reproduction> {
    fixture.validate()?;
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for e in &fixture.entries {
        let report = aggregate_metrics(&fixture.matrix(e))?;
        for c in compare(&report, &e.reference, tolerance) {
            let status = match (c.pass, e.phase) {
                (_, Phase::Training) => Status::Note,
                (true, Phase::Testing) => Status::Pass,
                (false, Phase::Testing) => Status::Fail,
            };
            rows.push(ReproductionRow {
                model: e.model.clone(),
                phase: e.phase,
                metric: c.metric,
                computed: c.computed,
                reference: c.reference,
                delta: c.delta,
                within: c.pass,
                status,
            });
        }
        reports.push((e.model.clone(), e.phase, report));
    }
    Ok(Reproduction { tolerance, rows, reports })
}
