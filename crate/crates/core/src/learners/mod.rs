//! From-scratch supervised learners: CART regression trees, random forests,
//! least-squares gradient boosting, simple OLS and a two-hidden-layer MLP.

mod ensemble;
mod linear;
mod mlp;
mod tree;

use thiserror::Error;

pub use ensemble::{
    fit_boosted, fit_forest, importance, BoostParams, EnsembleDump, EnsembleKind, ForestParams,
    NodeRecord, TreeEnsemble,
};
pub use linear::{fit_linear, LinearModel};
pub use mlp::{fit_mlp, predict_mlp, MlpConfig, MlpModel};
pub use tree::{fit_tree, TreeNode, TreeParams};

#[derive(Debug, Error, PartialEq)]
pub enum LearnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("loss became non-finite at epoch {epoch} (loss {loss}, first-epoch loss {first_loss})")]
    NonFiniteLoss {
        epoch: usize,
        loss: f64,
        first_loss: f64,
    },
    #[error("model dump: {0}")]
    Dump(String),
}

/// Mean squared error.
pub fn mse(y_true: &[f64], y_pred: &[f64]) -> Result<f64, LearnError> {
    if y_true.len() != y_pred.len() || y_true.is_empty() {
        return Err(LearnError::ShapeMismatch(format!(
            "mse over {} targets and {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let sum: f64 = y_true
        .iter()
        .zip(y_pred)
        .map(|(t, p)| (t - p) * (t - p))
        .sum();
    Ok(sum / y_true.len() as f64)
}

pub(crate) fn check_xy(x: &[Vec<f64>], y: &[f64]) -> Result<usize, LearnError> {
    if x.is_empty() || x.len() != y.len() {
        return Err(LearnError::ShapeMismatch(format!(
            "{} rows for {} targets",
            x.len(),
            y.len()
        )));
    }
    let p = x[0].len();
    if x.iter().any(|r| r.len() != p) {
        return Err(LearnError::ShapeMismatch("ragged feature matrix".into()));
    }
    Ok(p)
}
