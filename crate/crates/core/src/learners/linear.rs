use serde::{Deserialize, Serialize};

use super::LearnError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    /// One slope per input dimension.
    pub slopes: Vec<f64>,
}

impl LinearModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.slopes.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }

    pub fn predict_scalar(&self, t: f64) -> f64 {
        self.predict(&[t])
    }
}

/// Closed-form simple least squares of `y` on `t`.
pub fn fit_linear(t: &[f64], y: &[f64]) -> Result<LinearModel, LearnError> {
    if t.len() != y.len() {
        return Err(LearnError::ShapeMismatch(format!("{} inputs, {} targets", t.len(), y.len())));
    }
    if t.len() < 2 {
        return Err(LearnError::DegenerateInput("need at least two points".into()));
    }
    let n = t.len() as f64;
    let t_mean = t.iter().sum::<f64>() / n;
    let y_mean = y.iter().sum::<f64>() / n;
    let sxx: f64 = t.iter().map(|v| (v - t_mean) * (v - t_mean)).sum();
    if sxx == 0.0 {
        return Err(LearnError::DegenerateInput("all inputs are equal".into()));
    }
    let sxy: f64 = t.iter().zip(y).map(|(a, b)| (a - t_mean) * (b - y_mean)).sum();
    let slope = sxy / sxx;
    Ok(LinearModel {
        intercept: y_mean - slope * t_mean,
        slopes: vec![slope],
    })
}
