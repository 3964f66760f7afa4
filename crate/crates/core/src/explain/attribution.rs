use serde::{Deserialize, Serialize};

use super::treeshap::{tree_shap, ShapMatrix};
use super::ExplainError;
use crate::cluster::ClusterModel;
use crate::cvi::CviResult;
use crate::learners::{fit_boosted, fit_forest, importance, BoostParams, ForestParams, TreeEnsemble};

/// Signed attributions of one feature with the feature's own values, for
/// violin or strip rendering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolinFeature {
    pub feature: String,
    pub shap: Vec<f64>,
    pub feature_values: Vec<f64>,
    pub mean_abs: f64,
}

/// Forest importances with the boosted cross-check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub feature_ids: Vec<String>,
    pub forest_importance: Vec<f64>,
    pub boosted_importance: Vec<f64>,
    /// Feature ids by descending importance.
    pub forest_ranking: Vec<String>,
    pub boosted_ranking: Vec<String>,
    /// Spearman correlation of the two importance vectors; `None` when
    /// either vector is constant.
    pub rank_correlation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalShap {
    pub shap: ShapMatrix,
    pub violin: Vec<ViolinFeature>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CviExplanation {
    pub importance: ImportanceReport,
    pub global: GlobalShap,
}

/// Ids ordered by descending value; equal values keep input order.
pub fn ranking(ids: &[String], values: &[f64]) -> Vec<String> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    order.into_iter().map(|i| ids[i].clone()).collect()
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

fn violin(shap: &ShapMatrix, x: &[Vec<f64>]) -> Vec<ViolinFeature> {
    let mean_abs = shap.mean_abs();
    shap.feature_ids
        .iter()
        .enumerate()
        .map(|(j, id)| ViolinFeature {
            feature: id.clone(),
            shap: shap.column(j),
            feature_values: x.iter().map(|r| r[j]).collect(),
            mean_abs: mean_abs[j],
        })
        .collect()
}

/// Design matrix and target for explaining the CVI: each DA's index
/// indicators against its CVI.
pub fn cvi_design(cvi: &CviResult) -> (Vec<Vec<f64>>, Vec<f64>) {
    (cvi.das.iter().map(|d| d.indicators.clone()).collect(), cvi.values())
}

pub fn importance_report(ids: &[String], forest: &TreeEnsemble, boosted: &TreeEnsemble) -> ImportanceReport {
    let forest_importance = importance(forest);
    let boosted_importance = importance(boosted);
    ImportanceReport {
        feature_ids: ids.to_vec(),
        forest_ranking: ranking(ids, &forest_importance),
        boosted_ranking: ranking(ids, &boosted_importance),
        rank_correlation: spearman(&forest_importance, &boosted_importance),
        forest_importance,
        boosted_importance,
    }
}

pub fn global_shap(forest: &TreeEnsemble, x: &[Vec<f64>], ids: &[String]) -> Result<GlobalShap, ExplainError> {
    let shap = tree_shap(forest, x)?.with_feature_ids(ids);
    Ok(GlobalShap {
        violin: violin(&shap, x),
        shap,
    })
}

/// Fits a forest and a boosted cross-check to predict the CVI from its own
/// index indicators, then explains the forest sample by sample.
pub fn explain_cvi(
    cvi: &CviResult,
    forest: &ForestParams,
    boost: &BoostParams,
) -> Result<CviExplanation, ExplainError> {
    let (x, y) = cvi_design(cvi);
    let forest_model = fit_forest(&x, &y, forest)?;
    let boosted_model = fit_boosted(&x, &y, boost)?;
    Ok(CviExplanation {
        importance: importance_report(&cvi.indicator_ids, &forest_model, &boosted_model),
        global: global_shap(&forest_model, &x, &cvi.indicator_ids)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorExplanation {
    pub sector: String,
    /// `(feature, mean |φ|)` in descending order.
    pub mean_abs: Vec<(String, f64)>,
    pub base_value: f64,
    /// Per-sample signed attributions, rows aligned with the clustered DAs.
    pub phi: Vec<Vec<f64>>,
    /// Membership target was constant, so the explanation is all zeros.
    pub degenerate: bool,
}

impl SectorExplanation {
    pub fn top_feature(&self) -> Option<&str> {
        self.mean_abs.first().map(|(f, _)| f.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterExplanation {
    pub feature_ids: Vec<String>,
    pub sectors: Vec<SectorExplanation>,
}

/// Surrogate forest parameters for sector membership over `n_rows` areas:
/// one random candidate feature per split and leaves holding at least a
/// third of the areas. Deeper surrogates attribute label noise.
pub fn surrogate_params(seed: u64, n_rows: usize) -> ForestParams {
    ForestParams {
        n_trees: 100,
        min_leaf: (n_rows / 3).max(5),
        feature_subset_size: Some(1),
        seed,
        ..ForestParams::default()
    }
}

/// One-vs-rest surrogate forest per sector on membership indicators,
/// explained with TreeSHAP.
pub fn explain_clusters(
    points: &[Vec<f64>],
    model: &ClusterModel,
    feature_ids: &[String],
    sector_names: &[String],
    forest: &ForestParams,
) -> Result<ClusterExplanation, ExplainError> {
    let p = feature_ids.len();
    let all_identical = points.windows(2).all(|w| w[0] == w[1]);
    let sectors = (0..model.k)
        .map(|c| {
            let name = sector_names.get(c).cloned().unwrap_or_else(|| format!("Sector {c}"));
            let y: Vec<f64> = model
                .assignments
                .iter()
                .map(|&a| if a == c { 1.0 } else { 0.0 })
                .collect();
            let constant = y.windows(2).all(|w| w[0] == w[1]);
            if constant || all_identical {
                return Ok(SectorExplanation {
                    sector: name,
                    mean_abs: feature_ids.iter().map(|f| (f.clone(), 0.0)).collect(),
                    base_value: y.first().copied().unwrap_or(0.0),
                    phi: vec![vec![0.0; p]; points.len()],
                    degenerate: true,
                });
            }
            let surrogate = fit_forest(points, &y, forest)?;
            let shap = tree_shap(&surrogate, points)?.with_feature_ids(feature_ids);
            let means = shap.mean_abs();
            let mut order: Vec<usize> = (0..p).collect();
            order.sort_by(|&a, &b| means[b].total_cmp(&means[a]));
            Ok(SectorExplanation {
                sector: name,
                mean_abs: order.iter().map(|&j| (feature_ids[j].clone(), means[j])).collect(),
                base_value: shap.base_value,
                phi: shap.phi,
                degenerate: false,
            })
        })
        .collect::<Result<Vec<_>, ExplainError>>()?;
    Ok(ClusterExplanation {
        feature_ids: feature_ids.to_vec(),
        sectors,
    })
}
