//! Long-Term Vitality Index: per-sector mean CVI across census years, with
//! one-step forecasts from three small regressors.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cvi::CviResult;
use crate::data::Year;
use crate::learners::{fit_forest, fit_linear, fit_mlp, mse, ForestParams, LearnError, MlpConfig};

pub const DEFAULT_TARGET_YEAR: Year = 2026;
/// Largest gap between an engine forecast and a reference value that is not flagged.
pub const REFERENCE_TOLERANCE: f64 = 0.005;

#[derive(Debug, Error, PartialEq)]
pub enum LviError {
    #[error("sector {sector} has no DAs in {year}")]
    EmptySector { sector: String, year: Year },
    #[error("DA {0} has no sector assignment")]
    MissingAssignment(String),
    #[error("series needs at least two points, got {0}")]
    TooFewPoints(usize),
    #[error("all observation years are equal")]
    DegenerateSeries,
    #[error("target year {target} is not after the last observation {last}")]
    TargetNotAfter { target: Year, last: Year },
    #[error("{0}")]
    Learn(#[from] LearnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LviSeries {
    pub sector: String,
    pub points: Vec<(Year, f64)>,
    /// DA ids averaged, sorted.
    pub source: Vec<String>,
}

/// Mean CVI of each sector's DAs in each year. `assignments[i]` is the
/// sector of `da_ids[i]`; sectors follow `sector_names` order.
pub fn compute_lvi(
    cvis: &BTreeMap<Year, CviResult>,
    da_ids: &[String],
    assignments: &[usize],
    sector_names: &[String],
) -> Result<Vec<LviSeries>, LviError> {
    let sector_of: BTreeMap<&str, usize> = da_ids
        .iter()
        .map(String::as_str)
        .zip(assignments.iter().copied())
        .collect();
    let mut series: Vec<LviSeries> = sector_names
        .iter()
        .map(|name| LviSeries {
            sector: name.clone(),
            points: Vec::new(),
            source: Vec::new(),
        })
        .collect();
    let mut sources = vec![std::collections::BTreeSet::new(); sector_names.len()];
    for (&year, result) in cvis {
        let mut sums = vec![0.0; sector_names.len()];
        let mut counts = vec![0usize; sector_names.len()];
        for d in &result.das {
            let &s = sector_of
                .get(d.da_id.as_str())
                .ok_or_else(|| LviError::MissingAssignment(d.da_id.clone()))?;
            sums[s] += d.cvi;
            counts[s] += 1;
            sources[s].insert(d.da_id.clone());
        }
        for (s, line) in series.iter_mut().enumerate() {
            if counts[s] == 0 {
                return Err(LviError::EmptySector {
                    sector: line.sector.clone(),
                    year,
                });
            }
            line.points.push((year, sums[s] / counts[s] as f64));
        }
    }
    for (line, src) in series.iter_mut().zip(sources) {
        line.source = src.into_iter().collect();
    }
    Ok(series)
}

/// Forecasting models in tie-break precedence order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    LR,
    RF,
    MLP,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::LR, ModelKind::RF, ModelKind::MLP];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::LR => "LR",
            ModelKind::RF => "RF",
            ModelKind::MLP => "MLP",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelForecast {
    pub prediction: f64,
    pub raw_prediction: f64,
    pub clamped: bool,
    /// Training MSE on the observed points.
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    pub sector: String,
    pub observed: Vec<(Year, f64)>,
    pub target_year: Year,
    pub forecast: BTreeMap<ModelKind, ModelForecast>,
    pub selected_model: ModelKind,
}

impl ForecastResult {
    pub fn selected(&self) -> &ModelForecast {
        &self.forecast[&self.selected_model]
    }
}

pub fn forest_forecaster_params(seed: u64) -> ForestParams {
    ForestParams {
        n_trees: 100,
        bootstrap: false,
        max_depth: None,
        min_leaf: 2,
        feature_subset_size: Some(1),
        seed,
    }
}

fn predict_all(
    kind: ModelKind,
    u: &[f64],
    y: &[f64],
    target: f64,
    seed: u64,
) -> Result<(Vec<f64>, f64), LviError> {
    Ok(match kind {
        ModelKind::LR => {
            let m = fit_linear(u, y)?;
            (u.iter().map(|&v| m.predict_scalar(v)).collect(), m.predict_scalar(target))
        }
        ModelKind::RF => {
            let x: Vec<Vec<f64>> = u.iter().map(|&v| vec![v]).collect();
            let m = fit_forest(&x, y, &forest_forecaster_params(seed))?;
            (m.predict_rows(&x), m.predict(&[target]))
        }
        ModelKind::MLP => {
            let m = fit_mlp(u, y, &MlpConfig::with_seed(seed))?;
            (u.iter().map(|&v| m.predict(v)).collect(), m.predict(target))
        }
    })
}

/// Fits each model on years rescaled to [0, 1], clamps its forecast to the
/// index range and picks the lowest training MSE; ties keep the earlier
/// model in [`ModelKind`] order.
pub fn forecast(
    series: &LviSeries,
    target_year: Year,
    models: &[ModelKind],
    seed: u64,
) -> Result<ForecastResult, LviError> {
    let n = series.points.len();
    if n < 2 {
        return Err(LviError::TooFewPoints(n));
    }
    let first = series.points[0].0;
    let last = series.points[n - 1].0;
    if first == last {
        return Err(LviError::DegenerateSeries);
    }
    if target_year <= last {
        return Err(LviError::TargetNotAfter {
            target: target_year,
            last,
        });
    }
    let span = f64::from(last - first);
    let u: Vec<f64> = series
        .points
        .iter()
        .map(|&(yr, _)| f64::from(yr - first) / span)
        .collect();
    let y: Vec<f64> = series.points.iter().map(|p| p.1).collect();
    let target = f64::from(target_year - first) / span;

    let mut kinds = models.to_vec();
    kinds.sort();
    kinds.dedup();
    let mut forecast = BTreeMap::new();
    for &kind in &kinds {
        let (fitted, raw) = predict_all(kind, &u, &y, target, seed)?;
        let prediction = raw.clamp(0.0, 1.0);
        forecast.insert(
            kind,
            ModelForecast {
                prediction,
                raw_prediction: raw,
                clamped: prediction != raw,
                mse: mse(&y, &fitted)?,
            },
        );
    }
    let selected_model = select_model(&forecast).ok_or(LviError::TooFewPoints(0))?;
    Ok(ForecastResult {
        sector: series.sector.clone(),
        observed: series.points.clone(),
        target_year,
        forecast,
        selected_model,
    })
}

pub fn select_model(forecast: &BTreeMap<ModelKind, ModelForecast>) -> Option<ModelKind> {
    let mut best: Option<(ModelKind, f64)> = None;
    for (&kind, f) in forecast {
        if best.is_none_or(|(_, m)| f.mse < m) {
            best = Some((kind, f.mse));
        }
    }
    best.map(|b| b.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayloadPoint {
    pub year: Year,
    pub lvi: f64,
    pub predicted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorLine {
    pub sector: String,
    pub points: Vec<PayloadPoint>,
    pub selected_model: ModelKind,
    pub mse: f64,
    pub forecast: BTreeMap<ModelKind, ModelForecast>,
}

/// Observed points followed by the selected model's forecast.
pub fn lvi_timeseries_payload(series: &[LviSeries], forecasts: &[ForecastResult]) -> Vec<SectorLine> {
    series
        .iter()
        .zip(forecasts)
        .map(|(s, f)| {
            let mut points: Vec<PayloadPoint> = s
                .points
                .iter()
                .map(|&(year, lvi)| PayloadPoint {
                    year,
                    lvi,
                    predicted: false,
                })
                .collect();
            points.push(PayloadPoint {
                year: f.target_year,
                lvi: f.selected().prediction,
                predicted: true,
            });
            SectorLine {
                sector: s.sector.clone(),
                points,
                selected_model: f.selected_model,
                mse: f.selected().mse,
                forecast: f.forecast.clone(),
            }
        })
        .collect()
}

/// Externally reported sector series with their reported 2026 values.
pub const REFERENCE_SERIES: [(&str, [f64; 4], f64); 3] = [
    ("Urban", [0.31, 0.31, 0.31, 0.24], 0.29),
    ("Residential", [0.40, 0.42, 0.45, 0.37], 0.41),
    ("Commercial", [0.31, 0.37, 0.41, 0.30], 0.35),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCheck {
    pub sector: String,
    pub observed: Vec<(Year, f64)>,
    pub reference: f64,
    pub linear_forecast: f64,
    pub difference: f64,
    pub flagged: bool,
    pub code: String,
}

/// Re-derives each reference forecast by least squares and flags values
/// further than [`REFERENCE_TOLERANCE`] from the reported one.
pub fn reference_checks() -> Result<Vec<ReferenceCheck>, LviError> {
    REFERENCE_SERIES
        .iter()
        .map(|&(name, values, reference)| {
            let series = LviSeries {
                sector: name.to_string(),
                points: crate::data::CENSUS_YEARS.iter().copied().zip(values).collect(),
                source: Vec::new(),
            };
            let f = forecast(&series, DEFAULT_TARGET_YEAR, &[ModelKind::LR], 0)?;
            let linear_forecast = f.forecast[&ModelKind::LR].prediction;
            let difference = linear_forecast - reference;
            Ok(ReferenceCheck {
                sector: name.to_string(),
                observed: series.points,
                reference,
                linear_forecast,
                difference,
                flagged: difference.abs() > REFERENCE_TOLERANCE,
                code: format!("{}-{}-reference-mismatch", name.to_lowercase(), DEFAULT_TARGET_YEAR),
            })
        })
        .collect()
}
