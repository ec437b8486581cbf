//! Complexity analysis, anchor clustering and label files.

pub mod anchors;
pub mod complexity;
pub mod labels;

pub use anchors::{kmeans_anchors, Anchor, AnchorMetric, AnchorSet, KMeansOutcome};
pub use complexity::{
    compare_osa_elan, flops, mac, model_complexity, osa_complexity, ComplexityReport, LayerCost, LayerSpec,
    OsaElanComparison, ClosedForms,
};
pub use labels::LabelBox;
