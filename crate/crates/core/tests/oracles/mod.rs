//! Independent reference implementations used by the integration and
//! acceptance tests. Each one is written the slow, obvious way and shares no
//! code with the engine.
#![allow(dead_code, clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vitality::learners::{EnsembleKind, TreeEnsemble, TreeNode};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Exhaustive KNN imputation: for each missing cell scan every other row,
/// then pull the k nearest donors one at a time.
pub fn knn_impute(rows: &[Vec<Option<f64>>], k: usize) -> Vec<Vec<f64>> {
    let n = rows.len();
    let p = rows[0].len();
    let mut out = vec![vec![0.0; p]; n];
    for r in 0..n {
        for c in 0..p {
            if let Some(v) = rows[r][c] {
                out[r][c] = v;
                continue;
            }
            let mut cands: Vec<(f64, usize)> = Vec::new();
            for j in 0..n {
                if j == r || rows[j][c].is_none() {
                    continue;
                }
                let mut sum = 0.0;
                let mut shared = 0;
                for q in 0..p {
                    if let (Some(a), Some(b)) = (rows[r][q], rows[j][q]) {
                        sum += (a - b) * (a - b);
                        shared += 1;
                    }
                }
                if shared > 0 {
                    cands.push((sum.sqrt() / (shared as f64).sqrt(), j));
                }
            }
            let mut total = 0.0;
            for _ in 0..k {
                let mut best = 0;
                for i in 1..cands.len() {
                    let (d, j) = cands[i];
                    let (bd, bj) = cands[best];
                    if d < bd || (d == bd && j < bj) {
                        best = i;
                    }
                }
                let (_, j) = cands.remove(best);
                total += rows[j][c].unwrap();
            }
            out[r][c] = total / k as f64;
        }
    }
    out
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s.sqrt()
}

/// Direct O(n²) silhouette values; singleton clusters score 0.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> Vec<f64> {
    let k = labels.iter().max().unwrap() + 1;
    let n = points.len();
    let mut s = vec![0.0; n];
    for i in 0..n {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for j in 0..n {
            if i != j {
                sums[labels[j]] += euclid(&points[i], &points[j]);
                counts[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let mut b = f64::INFINITY;
        for c in 0..k {
            if c != own && counts[c] > 0 {
                b = b.min(sums[c] / counts[c] as f64);
            }
        }
        if !b.is_finite() {
            continue;
        }
        let m = a.max(b);
        s[i] = if m == 0.0 { 0.0 } else { (b - a) / m };
    }
    s
}

/// Expected tree output when only the features in `known` are fixed to `x`;
/// unknown splits average the children by training cover.
fn conditional(node: &TreeNode, x: &[f64], known: &[bool]) -> f64 {
    match node {
        TreeNode::Leaf { value, .. } => *value,
        TreeNode::Split {
            feature,
            threshold,
            left,
            right,
            ..
        } => {
            if known[*feature] {
                if x[*feature] <= *threshold {
                    conditional(left, x, known)
                } else {
                    conditional(right, x, known)
                }
            } else {
                let nl = left.n_samples() as f64;
                let nr = right.n_samples() as f64;
                (nl * conditional(left, x, known) + nr * conditional(right, x, known)) / (nl + nr)
            }
        }
    }
}

fn ensemble_value(e: &TreeEnsemble, x: &[f64], known: &[bool]) -> f64 {
    let total: f64 = e.trees.iter().map(|t| conditional(t, x, known)).sum();
    match e.kind {
        EnsembleKind::ForestMean => total / e.trees.len() as f64,
        EnsembleKind::BoostedSum => e.base_score + e.learning_rate * total,
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|v| v as f64).product()
}

/// Shapley values by enumerating all 2^p coalitions.
pub fn shapley(e: &TreeEnsemble, x: &[f64]) -> Vec<f64> {
    let p = e.n_features;
    let mut phi = vec![0.0; p];
    for i in 0..p {
        for mask in 0u32..(1 << p) {
            if mask & (1 << i) != 0 {
                continue;
            }
            let mut known: Vec<bool> = (0..p).map(|f| mask & (1 << f) != 0).collect();
            let size = known.iter().filter(|b| **b).count();
            let w = factorial(size) * factorial(p - size - 1) / factorial(p);
            let without = ensemble_value(e, x, &known);
            known[i] = true;
            let with = ensemble_value(e, x, &known);
            phi[i] += w * (with - without);
        }
    }
    phi
}

/// Value of the empty coalition.
pub fn shapley_base(e: &TreeEnsemble, x: &[f64]) -> f64 {
    ensemble_value(e, x, &vec![false; e.n_features])
}

/// Random tree over `features` with consistent covers and depth ≤ `depth`.
pub fn random_tree(rng: &mut impl Rng, features: &[usize], depth: usize, n: usize) -> TreeNode {
    if depth == 0 || n < 2 || rng.random_bool(0.2) {
        return TreeNode::Leaf {
            value: rng.random_range(-1.0..1.0),
            n_samples: n,
        };
    }
    let nl = rng.random_range(1..n);
    let left = random_tree(rng, features, depth - 1, nl);
    let right = random_tree(rng, features, depth - 1, n - nl);
    TreeNode::Split {
        feature: features[rng.random_range(0..features.len())],
        threshold: rng.random_range(0.1..0.9),
        left: Box::new(left),
        right: Box::new(right),
        n_samples: n,
        impurity_decrease: 0.0,
    }
}

/// Same tree with features `a` and `b` exchanged.
pub fn swap_features(node: &TreeNode, a: usize, b: usize) -> TreeNode {
    match node {
        TreeNode::Leaf { .. } => node.clone(),
        TreeNode::Split {
            feature,
            threshold,
            left,
            right,
            n_samples,
            impurity_decrease,
        } => TreeNode::Split {
            feature: if *feature == a {
                b
            } else if *feature == b {
                a
            } else {
                *feature
            },
            threshold: *threshold,
            left: Box::new(swap_features(left, a, b)),
            right: Box::new(swap_features(right, a, b)),
            n_samples: *n_samples,
            impurity_decrease: *impurity_decrease,
        },
    }
}

/// Per-row mean of the selected columns, summed left to right.
pub fn cvi(matrix: &[Vec<f64>], members: &[usize]) -> Vec<f64> {
    matrix
        .iter()
        .map(|row| {
            let mut s = 0.0;
            for &c in members {
                s += row[c];
            }
            s / members.len() as f64
        })
        .collect()
}

/// Mean of `values` within each label.
pub fn group_means(values: &[f64], labels: &[usize], k: usize) -> Vec<f64> {
    let mut sums = vec![0.0; k];
    let mut counts = vec![0.0; k];
    for (v, &l) in values.iter().zip(labels) {
        sums[l] += v;
        counts[l] += 1.0;
    }
    sums.iter().zip(&counts).map(|(s, c)| s / c).collect()
}

/// OLS by solving the 2×2 normal equations with Cramer's rule.
pub fn ols(t: &[f64], y: &[f64]) -> (f64, f64) {
    let n = t.len() as f64;
    let st: f64 = t.iter().sum();
    let stt: f64 = t.iter().map(|v| v * v).sum();
    let sy: f64 = y.iter().sum();
    let sty: f64 = t.iter().zip(y).map(|(a, b)| a * b).sum();
    let det = n * stt - st * st;
    let intercept = (sy * stt - st * sty) / det;
    let slope = (n * sty - st * sy) / det;
    (intercept, slope)
}

/// Winding-number containment for a closed ring.
pub fn winding_contains(ring: &[(f64, f64)], p: (f64, f64)) -> bool {
    let mut wn = 0i32;
    for w in ring.windows(2) {
        let (a, b) = (w[0], w[1]);
        let cross = (b.0 - a.0) * (p.1 - a.1) - (p.0 - a.0) * (b.1 - a.1);
        if a.1 <= p.1 {
            if b.1 > p.1 && cross > 0.0 {
                wn += 1;
            }
        } else if b.1 <= p.1 && cross < 0.0 {
            wn -= 1;
        }
    }
    wn != 0
}
