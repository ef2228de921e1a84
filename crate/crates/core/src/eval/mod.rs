//! Confusion matrices, one-vs-rest metrics, micro/macro aggregation,
//! reports, and recomputation of the published results.

mod metrics;
mod reproduce;

pub use metrics::{
    aggregate_metrics, class_metrics, compare, Aggregate, ClassMetrics, Comparison, ConfusionMatrix, MetricsReport,
    Reference, DEFAULT_TOLERANCE,
};
pub use reproduce::{
    reference_fixture, reproduce_published, Phase, ReferenceEntry, ReferenceFixture, Reproduction, ReproductionRow,
    Status,
};
