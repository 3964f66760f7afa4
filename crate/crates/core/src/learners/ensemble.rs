use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::fit_tree_on_rows;
use super::{check_xy, LearnError, TreeNode, TreeParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    /// Prediction is the mean of the trees.
    ForestMean,
    /// Prediction is `base_score + learning_rate * sum(trees)`.
    BoostedSum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "EnsembleDump", try_from = "EnsembleDump")]
pub struct TreeEnsemble {
    pub trees: Vec<TreeNode>,
    pub kind: EnsembleKind,
    pub base_score: f64,
    pub learning_rate: f64,
    pub n_features: usize,
}

impl TreeEnsemble {
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self.kind {
            EnsembleKind::ForestMean => {
                let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
                sum / self.trees.len() as f64
            }
            EnsembleKind::BoostedSum => self.staged_predict(x, self.trees.len()),
        }
    }

    pub fn predict_rows(&self, x: &[Vec<f64>]) -> Vec<f64> {
        x.iter().map(|r| self.predict(r)).collect()
    }

    /// Boosted prediction using only the first `rounds` trees.
    pub fn staged_predict(&self, x: &[f64], rounds: usize) -> f64 {
        self.trees[..rounds]
            .iter()
            .fold(self.base_score, |acc, t| acc + self.learning_rate * t.predict(x))
    }

    /// Weight of each tree's output in the ensemble prediction.
    pub fn tree_weight(&self) -> f64 {
        match self.kind {
            EnsembleKind::ForestMean => 1.0 / self.trees.len() as f64,
            EnsembleKind::BoostedSum => self.learning_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub bootstrap: bool,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// `None` means `ceil(p / 3)`.
    pub feature_subset_size: Option<usize>,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 500,
            bootstrap: true,
            max_depth: None,
            min_leaf: 2,
            feature_subset_size: None,
            seed: 0,
        }
    }
}

/// Random forest of CARTs. Tree `i` uses seed `seed + i` for both its
/// bootstrap draw and its per-node feature sampling, so fitting in parallel
/// gives the same trees as fitting sequentially.
pub fn fit_forest(x: &[Vec<f64>], y: &[f64], params: &ForestParams) -> Result<TreeEnsemble, LearnError> {
    let p = check_xy(x, y)?;
    if params.n_trees == 0 {
        return Err(LearnError::InvalidParams("n_trees must be at least 1".into()));
    }
    let subset = params.feature_subset_size.unwrap_or(p.div_ceil(3).max(1));
    let n = y.len();
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|i| {
            let tree_seed = params.seed.wrapping_add(i as u64);
            let mut rows: Vec<usize> = if params.bootstrap {
                let mut rng = ChaCha8Rng::seed_from_u64(tree_seed);
                rng.set_stream(1);
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let tree_params = TreeParams {
                max_depth: params.max_depth,
                min_leaf: params.min_leaf,
                feature_subset_size: Some(subset),
                rng_seed: tree_seed,
            };
            fit_tree_on_rows(x, y, &mut rows, &tree_params)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TreeEnsemble {
        trees,
        kind: EnsembleKind::ForestMean,
        base_score: 0.0,
        learning_rate: 1.0,
        n_features: p,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub n_rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for BoostParams {
    fn default() -> Self {
        Self {
            n_rounds: 200,
            max_depth: 3,
            learning_rate: 0.1,
            seed: 0,
        }
    }
}

/// Stagewise least-squares boosting: each round fits a depth-limited CART to
/// the current residuals.
pub fn fit_boosted(x: &[Vec<f64>], y: &[f64], params: &BoostParams) -> Result<TreeEnsemble, LearnError> {
    let p = check_xy(x, y)?;
    if params.n_rounds == 0 || !(params.learning_rate > 0.0 && params.learning_rate <= 1.0) {
        return Err(LearnError::InvalidParams(
            "boosting needs n_rounds >= 1 and learning_rate in (0, 1]".into(),
        ));
    }
    let n = y.len();
    let base = y.iter().sum::<f64>() / n as f64;
    let mut pred = vec![base; n];
    let mut trees = Vec::with_capacity(params.n_rounds);
    for round in 0..params.n_rounds {
        let residual: Vec<f64> = y.iter().zip(&pred).map(|(t, p)| t - p).collect();
        let mut rows: Vec<usize> = (0..n).collect();
        let tree = fit_tree_on_rows(
            x,
            &residual,
            &mut rows,
            &TreeParams {
                max_depth: Some(params.max_depth),
                min_leaf: 1,
                feature_subset_size: None,
                rng_seed: params.seed.wrapping_add(round as u64),
            },
        )?;
        for (p, row) in pred.iter_mut().zip(x) {
            *p += params.learning_rate * tree.predict(row);
        }
        trees.push(tree);
    }
    Ok(TreeEnsemble {
        trees,
        kind: EnsembleKind::BoostedSum,
        base_score: base,
        learning_rate: params.learning_rate,
        n_features: p,
    })
}

/// Impurity-decrease importance: per tree, each split contributes
/// `impurity_decrease * n_node / n_root` to its feature; contributions are
/// averaged over trees and normalized to sum to 1 (all zeros if no split).
pub fn importance(ensemble: &TreeEnsemble) -> Vec<f64> {
    let mut total = vec![0.0; ensemble.n_features];
    for tree in &ensemble.trees {
        let root = tree.n_samples() as f64;
        tree.for_each_split(&mut |f, d, n| total[f] += d * n as f64 / root);
    }
    let n_trees = ensemble.trees.len().max(1) as f64;
    for v in &mut total {
        *v /= n_trees;
    }
    let sum: f64 = total.iter().sum();
    if sum > 0.0 {
        for v in &mut total {
            *v /= sum;
        }
    }
    total
}

/// One node of the flat dump format. Leaves have `feature == None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub feature: Option<usize>,
    pub threshold: Option<f64>,
    pub value: Option<f64>,
    pub left: Option<usize>,
    pub right: Option<usize>,
    pub n_samples: usize,
    pub impurity_decrease: f64,
}

/// JSON model dump: one node array per tree, root at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleDump {
    pub kind: EnsembleKind,
    pub base_score: f64,
    pub learning_rate: f64,
    pub n_features: usize,
    pub trees: Vec<Vec<NodeRecord>>,
}

fn flatten(node: &TreeNode, out: &mut Vec<NodeRecord>) -> usize {
    let at = out.len();
    match node {
        TreeNode::Leaf { value, n_samples } => out.push(NodeRecord {
            feature: None,
            threshold: None,
            value: Some(*value),
            left: None,
            right: None,
            n_samples: *n_samples,
            impurity_decrease: 0.0,
        }),
        TreeNode::Split {
            feature,
            threshold,
            left,
            right,
            n_samples,
            impurity_decrease,
        } => {
            out.push(NodeRecord {
                feature: Some(*feature),
                threshold: Some(*threshold),
                value: None,
                left: None,
                right: None,
                n_samples: *n_samples,
                impurity_decrease: *impurity_decrease,
            });
            let l = flatten(left, out);
            let r = flatten(right, out);
            out[at].left = Some(l);
            out[at].right = Some(r);
        }
    }
    at
}

fn unflatten(nodes: &[NodeRecord], at: usize, depth: usize) -> Result<TreeNode, LearnError> {
    let bad = |m: &str| LearnError::Dump(format!("node {at}: {m}"));
    if depth > nodes.len() {
        return Err(bad("cycle in node links"));
    }
    let rec = nodes.get(at).ok_or_else(|| bad("dangling child index"))?;
    match (rec.feature, rec.threshold, rec.left, rec.right) {
        (None, _, _, _) => Ok(TreeNode::Leaf {
            value: rec.value.ok_or_else(|| bad("leaf without value"))?,
            n_samples: rec.n_samples,
        }),
        (Some(feature), Some(threshold), Some(l), Some(r)) => Ok(TreeNode::Split {
            feature,
            threshold,
            left: Box::new(unflatten(nodes, l, depth + 1)?),
            right: Box::new(unflatten(nodes, r, depth + 1)?),
            n_samples: rec.n_samples,
            impurity_decrease: rec.impurity_decrease,
        }),
        _ => Err(bad("split missing threshold or children")),
    }
}

impl From<TreeEnsemble> for EnsembleDump {
    fn from(e: TreeEnsemble) -> Self {
        EnsembleDump {
            kind: e.kind,
            base_score: e.base_score,
            learning_rate: e.learning_rate,
            n_features: e.n_features,
            trees: e
                .trees
                .iter()
                .map(|t| {
                    let mut nodes = Vec::new();
                    flatten(t, &mut nodes);
                    nodes
                })
                .collect(),
        }
    }
}

impl TryFrom<EnsembleDump> for TreeEnsemble {
    type Error = LearnError;

    fn try_from(d: EnsembleDump) -> Result<Self, Self::Error> {
        if d.trees.is_empty() {
            return Err(LearnError::Dump("ensemble without trees".into()));
        }
        let trees = d
            .trees
            .iter()
            .map(|nodes| unflatten(nodes, 0, 0))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(TreeEnsemble {
            trees,
            kind: d.kind,
            base_score: d.base_score,
            learning_rate: d.learning_rate,
            n_features: d.n_features,
        })
    }
}
