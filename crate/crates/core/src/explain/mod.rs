//! Exact TreeSHAP over the engine's tree ensembles, importance and sector
//! attribution payloads, and the HTML report.

mod attribution;
pub mod charts;
mod report;
mod treeshap;

use thiserror::Error;

use crate::learners::LearnError;

pub use attribution::{
    average_ranks, cvi_design, explain_clusters, explain_cvi, global_shap, importance_report,
    ranking, spearman, surrogate_params, ClusterExplanation, CviExplanation, GlobalShap,
    ImportanceReport, SectorExplanation, ViolinFeature,
};
pub use report::{generate_report, standard_notices, Bundle, Notice, BUNDLE_VERSION};
pub use treeshap::{ensemble_base_value, tree_shap, tree_shap_single, ShapMatrix, LOCAL_ACCURACY_TOL};

#[derive(Debug, Error, PartialEq)]
pub enum ExplainError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("local accuracy violated on row {row}: explained {explained}, predicted {prediction}")]
    LocalAccuracy {
        row: usize,
        explained: f64,
        prediction: f64,
    },
    #[error("report inputs missing: {}", .0.join(", "))]
    IncompleteInputs(Vec<String>),
    #[error("bundle: {0}")]
    Bundle(String),
    #[error("{0}")]
    Learn(#[from] LearnError),
}
