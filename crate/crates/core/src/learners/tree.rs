use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_xy, LearnError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf {
        value: f64,
        n_samples: usize,
    },
    Split {
        feature: usize,
        /// Samples with `x[feature] <= threshold` go left.
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
        n_samples: usize,
        /// Node variance minus the sample-weighted variance of its children.
        impurity_decrease: f64,
    },
}

impl TreeNode {
    pub fn n_samples(&self) -> usize {
        match self {
            TreeNode::Leaf { n_samples, .. } | TreeNode::Split { n_samples, .. } => *n_samples,
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value, .. } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => node = if x[*feature] <= *threshold { left } else { right },
            }
        }
    }

    /// Cover-weighted mean of the leaf values: the tree's expected output over
    /// its training distribution.
    pub fn expected_value(&self) -> f64 {
        match self {
            TreeNode::Leaf { value, .. } => *value,
            TreeNode::Split {
                left,
                right,
                n_samples,
                ..
            } => {
                let n = *n_samples as f64;
                (left.expected_value() * left.n_samples() as f64
                    + right.expected_value() * right.n_samples() as f64)
                    / n
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }

    /// Pre-order visit of every split as (feature, impurity_decrease, n_samples).
    pub fn for_each_split(&self, f: &mut impl FnMut(usize, f64, usize)) {
        if let TreeNode::Split {
            feature,
            left,
            right,
            n_samples,
            impurity_decrease,
            ..
        } = self
        {
            f(*feature, *impurity_decrease, *n_samples);
            left.for_each_split(f);
            right.for_each_split(f);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Features tried per node; `None` tries all of them.
    pub feature_subset_size: Option<usize>,
    pub rng_seed: u64,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: None,
            min_leaf: 1,
            feature_subset_size: None,
            rng_seed: 0,
        }
    }
}

pub fn fit_tree(x: &[Vec<f64>], y: &[f64], params: &TreeParams) -> Result<TreeNode, LearnError> {
    check_xy(x, y)?;
    let mut rows: Vec<usize> = (0..y.len()).collect();
    fit_tree_on_rows(x, y, &mut rows, params)
}

/// Fits on a multiset of row indices (bootstrap resamples repeat rows).
pub(crate) fn fit_tree_on_rows(
    x: &[Vec<f64>],
    y: &[f64],
    rows: &mut [usize],
    params: &TreeParams,
) -> Result<TreeNode, LearnError> {
    let n_features = check_xy(x, y)?;
    if params.min_leaf == 0 {
        return Err(LearnError::InvalidParams("min_leaf must be at least 1".into()));
    }
    if rows.is_empty() {
        return Err(LearnError::ShapeMismatch("no training rows".into()));
    }
    let subset = params
        .feature_subset_size
        .unwrap_or(n_features)
        .clamp(1, n_features.max(1));
    let mut builder = Builder {
        x,
        y,
        params,
        n_features,
        subset,
        rng: ChaCha8Rng::seed_from_u64(params.rng_seed),
    };
    Ok(builder.grow(rows, 0))
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    params: &'a TreeParams,
    n_features: usize,
    subset: usize,
    rng: ChaCha8Rng,
}

struct Candidate {
    sse: f64,
    feature: usize,
    threshold: f64,
}

fn mean(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

fn variance(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = mean(values.clone());
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + (v - m) * (v - m), n + 1));
    sum / n as f64
}

fn midpoint(a: f64, b: f64) -> f64 {
    let mid = a + (b - a) / 2.0;
    if mid >= b {
        a
    } else {
        mid
    }
}

impl Builder<'_> {
    fn leaf(&self, rows: &[usize]) -> TreeNode {
        TreeNode::Leaf {
            value: mean(rows.iter().map(|&r| self.y[r])),
            n_samples: rows.len(),
        }
    }

    fn grow(&mut self, rows: &mut [usize], depth: usize) -> TreeNode {
        let n = rows.len();
        let min_leaf = self.params.min_leaf;
        let at_depth_limit = self.params.max_depth.is_some_and(|d| depth >= d);
        let first = self.y[rows[0]];
        let pure = rows.iter().all(|&r| self.y[r] == first);
        if at_depth_limit || pure || n < 2 * min_leaf || self.n_features == 0 {
            return self.leaf(rows);
        }

        let features: Vec<usize> = if self.subset >= self.n_features {
            (0..self.n_features).collect()
        } else {
            let mut f = index::sample(&mut self.rng, self.n_features, self.subset).into_vec();
            f.sort_unstable();
            f
        };

        let Some(best) = self.best_split(rows, &features) else {
            return self.leaf(rows);
        };

        let (feature, threshold) = (best.feature, best.threshold);
        let parent_var = variance(rows.iter().map(|&r| self.y[r]));
        rows.sort_by(|&a, &b| {
            let (l_a, l_b) = (self.x[a][feature] <= threshold, self.x[b][feature] <= threshold);
            l_b.cmp(&l_a).then(a.cmp(&b))
        });
        let n_left = rows
            .iter()
            .take_while(|&&r| self.x[r][feature] <= threshold)
            .count();
        let (left_rows, right_rows) = rows.split_at_mut(n_left);
        let var_l = variance(left_rows.iter().map(|&r| self.y[r]));
        let var_r = variance(right_rows.iter().map(|&r| self.y[r]));
        let decrease =
            parent_var - (n_left as f64 / n as f64) * var_l - ((n - n_left) as f64 / n as f64) * var_r;
        if decrease <= 0.0 {
            return self.leaf(rows);
        }
        let left = self.grow(left_rows, depth + 1);
        let right = self.grow(right_rows, depth + 1);
        TreeNode::Split {
            feature,
            threshold,
            left: Box::new(left),
            right: Box::new(right),
            n_samples: n,
            impurity_decrease: decrease,
        }
    }

    /// Lowest weighted child SSE over the candidate features; ties keep the
    /// lower feature index, then the lower threshold.
    fn best_split(&self, rows: &[usize], features: &[usize]) -> Option<Candidate> {
        let n = rows.len();
        let min_leaf = self.params.min_leaf;
        let centre = mean(rows.iter().map(|&r| self.y[r]));
        let mut order: Vec<usize> = rows.to_vec();
        let mut best: Option<Candidate> = None;
        for &f in features {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let total: f64 = order.iter().map(|&r| self.y[r] - centre).sum();
            let total_sq: f64 = order
                .iter()
                .map(|&r| (self.y[r] - centre) * (self.y[r] - centre))
                .sum();
            let (mut sum_l, mut sq_l) = (0.0, 0.0);
            for i in 1..n {
                let v = self.y[order[i - 1]] - centre;
                sum_l += v;
                sq_l += v * v;
                if i < min_leaf || n - i < min_leaf {
                    continue;
                }
                let (a, b) = (self.x[order[i - 1]][f], self.x[order[i]][f]);
                if a >= b {
                    continue;
                }
                let (nl, nr) = (i as f64, (n - i) as f64);
                let sum_r = total - sum_l;
                let sq_r = total_sq - sq_l;
                let sse = (sq_l - sum_l * sum_l / nl) + (sq_r - sum_r * sum_r / nr);
                if best.as_ref().is_none_or(|c| sse < c.sse) {
                    best = Some(Candidate {
                        sse,
                        feature: f,
                        threshold: midpoint(a, b),
                    });
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaves_weighted_variance(node: &TreeNode, x: &[Vec<f64>], y: &[f64], rows: &[usize]) -> f64 {
        match node {
            TreeNode::Leaf { .. } => variance(rows.iter().map(|&r| y[r])) * rows.len() as f64,
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
                ..
            } => {
                let (l, r): (Vec<usize>, Vec<usize>) =
                    rows.iter().partition(|&&r| x[r][*feature] <= *threshold);
                leaves_weighted_variance(left, x, y, &l) + leaves_weighted_variance(right, x, y, &r)
            }
        }
    }

    #[test]
    fn constant_target_is_single_leaf() {
        let x = vec![vec![0.0], vec![1.0], vec![2.0]];
        let t = fit_tree(&x, &[3.0; 3], &TreeParams::default()).unwrap();
        assert_eq!(t, TreeNode::Leaf { value: 3.0, n_samples: 3 });
    }

    #[test]
    fn two_points_split_at_midpoint() {
        let x = vec![vec![0.0], vec![1.0]];
        let t = fit_tree(&x, &[0.0, 1.0], &TreeParams::default()).unwrap();
        match t {
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
                impurity_decrease,
                ..
            } => {
                assert_eq!(feature, 0);
                assert_eq!(threshold, 0.5);
                assert_eq!(*left, TreeNode::Leaf { value: 0.0, n_samples: 1 });
                assert_eq!(*right, TreeNode::Leaf { value: 1.0, n_samples: 1 });
                assert_eq!(impurity_decrease, 0.25);
            }
            leaf => panic!("expected a split, got {leaf:?}"),
        }
    }

    #[test]
    fn single_row_is_leaf() {
        let t = fit_tree(&[vec![4.0, 2.0]], &[7.5], &TreeParams::default()).unwrap();
        assert_eq!(t, TreeNode::Leaf { value: 7.5, n_samples: 1 });
    }

    #[test]
    fn shape_mismatch() {
        assert!(matches!(
            fit_tree(&[vec![1.0]], &[1.0, 2.0], &TreeParams::default()),
            Err(LearnError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn min_leaf_and_depth_respected() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..20).map(|i| (i * i) as f64).collect();
        let params = TreeParams {
            max_depth: Some(2),
            min_leaf: 3,
            ..TreeParams::default()
        };
        let t = fit_tree(&x, &y, &params).unwrap();
        assert!(t.depth() <= 2);
        fn check(n: &TreeNode) {
            match n {
                TreeNode::Leaf { n_samples, .. } => assert!(*n_samples >= 3),
                TreeNode::Split { left, right, n_samples, impurity_decrease, .. } => {
                    assert_eq!(*n_samples, left.n_samples() + right.n_samples());
                    assert!(*impurity_decrease > 0.0);
                    check(left);
                    check(right);
                }
            }
        }
        check(&t);
    }

    #[test]
    fn decreases_account_for_variance_reduction() {
        let x: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![((i * 7) % 13) as f64, ((i * 5) % 11) as f64])
            .collect();
        let y: Vec<f64> = x.iter().map(|r| r[0] * 0.3 + (r[1] - 4.0).abs()).collect();
        let params = TreeParams {
            min_leaf: 2,
            ..TreeParams::default()
        };
        let t = fit_tree(&x, &y, &params).unwrap();
        let n = y.len() as f64;
        let mut weighted = 0.0;
        t.for_each_split(&mut |_, d, ns| weighted += d * ns as f64 / n);
        let rows: Vec<usize> = (0..y.len()).collect();
        let root_var = variance(y.iter().copied());
        let leaf_var = leaves_weighted_variance(&t, &x, &y, &rows) / n;
        assert!((weighted - (root_var - leaf_var)).abs() < 1e-9);
    }

    #[test]
    fn duplicate_feature_tie_goes_to_lowest_index() {
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, i as f64]).collect();
        let y = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        match fit_tree(&x, &y, &TreeParams::default()).unwrap() {
            TreeNode::Split { feature, threshold, .. } => {
                assert_eq!(feature, 0);
                assert_eq!(threshold, 2.5);
            }
            leaf => panic!("{leaf:?}"),
        }
    }

    #[test]
    fn expected_value_is_training_mean() {
        let x: Vec<Vec<f64>> = (0..9).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..9).map(|i| (i % 4) as f64).collect();
        let t = fit_tree(&x, &y, &TreeParams::default()).unwrap();
        assert!((t.expected_value() - mean(y.iter().copied())).abs() < 1e-12);
    }
}
