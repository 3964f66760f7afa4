use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ExplainError;
use crate::learners::{EnsembleKind, TreeEnsemble, TreeNode};

/// Largest tolerated `|base + Σφ − f(x)|`.
pub const LOCAL_ACCURACY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapMatrix {
    /// Expected ensemble output under the training cover distribution.
    pub base_value: f64,
    /// `phi[i][j]`: attribution of feature `j` on sample `i`.
    pub phi: Vec<Vec<f64>>,
    pub predictions: Vec<f64>,
    pub feature_ids: Vec<String>,
}

impl ShapMatrix {
    pub fn with_feature_ids(mut self, ids: &[String]) -> Self {
        self.feature_ids = ids.to_vec();
        self
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.phi.iter().map(|r| r[j]).collect()
    }

    pub fn mean_abs(&self) -> Vec<f64> {
        let n = self.phi.len().max(1) as f64;
        (0..self.feature_ids.len())
            .map(|j| self.phi.iter().map(|r| r[j].abs()).sum::<f64>() / n)
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct PathElement {
    feature: usize,
    zero_fraction: f64,
    one_fraction: f64,
    weight: f64,
}

fn extend(path: &mut Vec<PathElement>, zero_fraction: f64, one_fraction: f64, feature: usize) {
    let d = path.len();
    path.push(PathElement {
        feature,
        zero_fraction,
        one_fraction,
        weight: if d == 0 { 1.0 } else { 0.0 },
    });
    for i in (0..d).rev() {
        path[i + 1].weight += one_fraction * path[i].weight * (i + 1) as f64 / (d + 1) as f64;
        path[i].weight = zero_fraction * path[i].weight * (d - i) as f64 / (d + 1) as f64;
    }
}

fn unwind(path: &mut Vec<PathElement>, index: usize) {
    let d = path.len() - 1;
    let PathElement {
        zero_fraction: zero,
        one_fraction: one,
        ..
    } = path[index];
    let mut next = path[d].weight;
    for i in (0..d).rev() {
        if one != 0.0 {
            let tmp = path[i].weight;
            path[i].weight = next * (d + 1) as f64 / ((i + 1) as f64 * one);
            next = tmp - path[i].weight * zero * (d - i) as f64 / (d + 1) as f64;
        } else {
            path[i].weight = path[i].weight * (d + 1) as f64 / (zero * (d - i) as f64);
        }
    }
    // weights stay in place; only the feature records shift down
    for i in index..d {
        path[i].feature = path[i + 1].feature;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
    path.pop();
}

/// Total permutation weight of the path with element `index` removed.
fn unwound_sum(path: &[PathElement], index: usize) -> f64 {
    let d = path.len() - 1;
    let PathElement {
        zero_fraction: zero,
        one_fraction: one,
        ..
    } = path[index];
    let mut next = path[d].weight;
    let mut total = 0.0;
    for i in (0..d).rev() {
        if one != 0.0 {
            let tmp = next * (d + 1) as f64 / ((i + 1) as f64 * one);
            total += tmp;
            next = path[i].weight - tmp * zero * (d - i) as f64 / (d + 1) as f64;
        } else if zero != 0.0 {
            total += path[i].weight / zero / ((d - i) as f64 / (d + 1) as f64);
        }
    }
    total
}

fn recurse(
    node: &TreeNode,
    x: &[f64],
    phi: &mut [f64],
    mut path: Vec<PathElement>,
    zero_fraction: f64,
    one_fraction: f64,
    feature: usize,
) {
    extend(&mut path, zero_fraction, one_fraction, feature);
    match node {
        TreeNode::Leaf { value, .. } => {
            for i in 1..path.len() {
                let w = unwound_sum(&path, i);
                let el = path[i];
                phi[el.feature] += w * (el.one_fraction - el.zero_fraction) * value;
            }
        }
        TreeNode::Split {
            feature: split,
            threshold,
            left,
            right,
            n_samples,
            ..
        } => {
            let (hot, cold) = if x[*split] <= *threshold {
                (left, right)
            } else {
                (right, left)
            };
            let (mut incoming_zero, mut incoming_one) = (1.0, 1.0);
            if let Some(k) = (1..path.len()).find(|&k| path[k].feature == *split) {
                incoming_zero = path[k].zero_fraction;
                incoming_one = path[k].one_fraction;
                unwind(&mut path, k);
            }
            let n = *n_samples as f64;
            recurse(
                hot,
                x,
                phi,
                path.clone(),
                hot.n_samples() as f64 / n * incoming_zero,
                incoming_one,
                *split,
            );
            recurse(
                cold,
                x,
                phi,
                path,
                cold.n_samples() as f64 / n * incoming_zero,
                0.0,
                *split,
            );
        }
    }
}

/// Exact path-dependent Shapley values of one tree at `x`.
pub fn tree_shap_single(tree: &TreeNode, x: &[f64], n_features: usize) -> Vec<f64> {
    let mut phi = vec![0.0; n_features];
    recurse(tree, x, &mut phi, Vec::new(), 1.0, 1.0, usize::MAX);
    phi
}

pub fn ensemble_base_value(ensemble: &TreeEnsemble) -> f64 {
    let sum: f64 = ensemble.trees.iter().map(TreeNode::expected_value).sum();
    match ensemble.kind {
        EnsembleKind::ForestMean => sum / ensemble.trees.len() as f64,
        EnsembleKind::BoostedSum => ensemble.base_score + ensemble.learning_rate * sum,
    }
}

/// Shapley values of every row of `x`, checked for local accuracy.
pub fn tree_shap(ensemble: &TreeEnsemble, x: &[Vec<f64>]) -> Result<ShapMatrix, ExplainError> {
    let p = ensemble.n_features;
    if let Some((i, r)) = x.iter().enumerate().find(|(_, r)| r.len() != p) {
        return Err(ExplainError::ShapeMismatch(format!(
            "row {i} has {} columns, ensemble expects {p}",
            r.len()
        )));
    }
    let weight = ensemble.tree_weight();
    let phi: Vec<Vec<f64>> = x
        .par_iter()
        .map(|row| {
            let mut total = vec![0.0; p];
            for tree in &ensemble.trees {
                for (t, v) in total.iter_mut().zip(tree_shap_single(tree, row, p)) {
                    *t += v;
                }
            }
            total.iter().map(|v| v * weight).collect()
        })
        .collect();
    let base_value = ensemble_base_value(ensemble);
    let predictions = ensemble.predict_rows(x);
    for (i, (row, &pred)) in phi.iter().zip(&predictions).enumerate() {
        let sum: f64 = row.iter().sum();
        if (base_value + sum - pred).abs() >= LOCAL_ACCURACY_TOL {
            return Err(ExplainError::LocalAccuracy {
                row: i,
                explained: base_value + sum,
                prediction: pred,
            });
        }
    }
    Ok(ShapMatrix {
        base_value,
        phi,
        predictions,
        feature_ids: (0..p).map(|j| format!("f{j}")).collect(),
    })
}
