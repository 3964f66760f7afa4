//! Indicator preprocessing: MinMax scaling, cost-indicator inversion and KNN
//! imputation, always applied in that order.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{IndicatorCatalog, Panel, PanelSet, Polarity, Year};

pub const DEFAULT_KNN_K: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("column {0} has no observed values")]
    EmptyColumn(usize),
    #[error("value {0} outside [0, 1]")]
    Domain(f64),
    #[error("cell ({row}, {col}): only {available} donor rows, need k = {k}")]
    InsufficientDonors {
        row: usize,
        col: usize,
        available: usize,
        k: usize,
    },
    #[error("cell ({row}, {col}): no donor shares an observed column with the row")]
    DisjointRows { row: usize, col: usize },
    #[error("k must be positive")]
    InvalidK,
    #[error("pipeline order violated: {0}")]
    StageOrder(String),
    #[error("catalog mismatch: {0}")]
    CatalogMismatch(String),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub min: f64,
    pub max: f64,
}

impl ScalerParams {
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        values.into_iter().fold(None, |acc, v| match acc {
            None => Some(Self { min: v, max: v }),
            Some(p) => Some(Self {
                min: p.min.min(v),
                max: p.max.max(v),
            }),
        })
    }

    /// Constant columns map to 0.5. Values outside the fitted range are clamped.
    pub fn apply(&self, x: f64) -> f64 {
        if self.max == self.min {
            0.5
        } else {
            ((x - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
        }
    }
}

pub fn minmax_scale(column: &[Option<f64>]) -> Result<(Vec<Option<f64>>, ScalerParams), PreprocessError> {
    let params = ScalerParams::fit(column.iter().flatten().copied())
        .ok_or(PreprocessError::EmptyColumn(0))?;
    Ok((column.iter().map(|c| c.map(|x| params.apply(x))).collect(), params))
}

pub fn invert(column: &[Option<f64>]) -> Result<Vec<Option<f64>>, PreprocessError> {
    column
        .iter()
        .map(|c| match *c {
            Some(x) if !(0.0..=1.0).contains(&x) => Err(PreprocessError::Domain(x)),
            Some(x) => Ok(Some(1.0 - x)),
            None => Ok(None),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Scaled,
    Inverted,
    Imputed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellSource {
    Observed,
    Imputed,
}

/// A panel part-way through preprocessing; cells may still be missing.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkingMatrix {
    pub year: Year,
    pub da_ids: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
    pub scaler_params: Vec<ScalerParams>,
    pub catalog_fingerprint: String,
    pub stages: Vec<Stage>,
}

impl WorkingMatrix {
    /// Scales every column with `params` (one entry per catalog column).
    pub fn scaled(panel: &Panel, params: &[ScalerParams]) -> Self {
        let rows = panel
            .rows()
            .map(|row| {
                row.iter()
                    .zip(params)
                    .map(|(c, p)| c.map(|x| p.apply(x)))
                    .collect()
            })
            .collect();
        Self {
            year: panel.year,
            da_ids: panel.da_ids.clone(),
            rows,
            scaler_params: params.to_vec(),
            catalog_fingerprint: panel.catalog_fingerprint.clone(),
            stages: vec![Stage::Scaled],
        }
    }

    pub fn invert_costs(mut self, catalog: &IndicatorCatalog) -> Result<Self, PreprocessError> {
        if self.stages != [Stage::Scaled] {
            return Err(PreprocessError::StageOrder(format!(
                "inversion expects a scaled matrix, got stages {:?}",
                self.stages
            )));
        }
        for (c, ind) in catalog.indicators().iter().enumerate() {
            if ind.polarity == Polarity::Cost {
                let col: Vec<Option<f64>> = self.rows.iter().map(|r| r[c]).collect();
                for (row, v) in self.rows.iter_mut().zip(invert(&col)?) {
                    row[c] = v;
                }
            }
        }
        self.stages.push(Stage::Inverted);
        Ok(self)
    }
}

/// Fully preprocessed panel: every cell observed or imputed, all in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedPanel {
    pub year: Year,
    pub da_ids: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
    pub provenance: Vec<Vec<CellSource>>,
    pub scaler_params: Vec<ScalerParams>,
    pub catalog_fingerprint: String,
    pub stages: Vec<Stage>,
}

impl ProcessedPanel {
    pub fn n_rows(&self) -> usize {
        self.matrix.len()
    }

    pub fn imputed_count(&self) -> usize {
        self.provenance
            .iter()
            .flatten()
            .filter(|&&s| s == CellSource::Imputed)
            .count()
    }

    pub fn select_columns(&self, cols: &[usize]) -> Vec<Vec<f64>> {
        self.matrix
            .iter()
            .map(|row| cols.iter().map(|&c| row[c]).collect())
            .collect()
    }

    pub fn write_csv<W: Write>(&self, catalog: &IndicatorCatalog, out: W) -> Result<(), PreprocessError> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| PreprocessError::Io(e.to_string());
        let mut header = vec!["da_id".to_string()];
        header.extend(catalog.indicators().iter().map(|i| i.id.clone()));
        w.write_record(&header).map_err(io)?;
        for (id, row) in self.da_ids.iter().zip(&self.matrix) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec).map_err(io)?;
        }
        w.flush().map_err(|e| PreprocessError::Io(e.to_string()))
    }

    pub fn write_provenance_csv<W: Write>(
        &self,
        catalog: &IndicatorCatalog,
        out: W,
    ) -> Result<(), PreprocessError> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| PreprocessError::Io(e.to_string());
        let mut header = vec!["da_id".to_string()];
        header.extend(catalog.indicators().iter().map(|i| i.id.clone()));
        w.write_record(&header).map_err(io)?;
        for (id, row) in self.da_ids.iter().zip(&self.provenance) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|s| match s {
                CellSource::Observed => "observed".to_string(),
                CellSource::Imputed => "imputed".to_string(),
            }));
            w.write_record(&rec).map_err(io)?;
        }
        w.flush().map_err(|e| PreprocessError::Io(e.to_string()))
    }

    /// Reads back the pair of files written by [`Self::write_csv`] and
    /// [`Self::write_provenance_csv`].
    pub fn read_csv(
        values: &[u8],
        provenance: &[u8],
        catalog: &IndicatorCatalog,
        year: Year,
        scaler_params: Vec<ScalerParams>,
    ) -> Result<Self, PreprocessError> {
        let parse = |bytes: &[u8]| -> Result<(Vec<String>, Vec<Vec<String>>), PreprocessError> {
            let mut r = csv::Reader::from_reader(bytes);
            let header: Vec<String> = r
                .headers()
                .map_err(|e| PreprocessError::Io(e.to_string()))?
                .iter()
                .map(str::to_string)
                .collect();
            let expected: Vec<&str> = std::iter::once("da_id")
                .chain(catalog.indicators().iter().map(|i| i.id.as_str()))
                .collect();
            if header != expected {
                return Err(PreprocessError::CatalogMismatch(
                    "processed panel header differs from catalog".into(),
                ));
            }
            let mut ids = Vec::new();
            let mut rows = Vec::new();
            for rec in r.records() {
                let rec = rec.map_err(|e| PreprocessError::Io(e.to_string()))?;
                ids.push(rec[0].to_string());
                rows.push(rec.iter().skip(1).map(str::to_string).collect());
            }
            Ok((ids, rows))
        };
        let (da_ids, raw) = parse(values)?;
        let (prov_ids, raw_prov) = parse(provenance)?;
        if da_ids != prov_ids {
            return Err(PreprocessError::Io("provenance rows differ from values".into()));
        }
        let matrix = raw
            .iter()
            .map(|row| {
                row.iter()
                    .map(|s| s.parse::<f64>().map_err(|e| PreprocessError::Io(e.to_string())))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        let provenance = raw_prov
            .iter()
            .map(|row| {
                row.iter()
                    .map(|s| match s.as_str() {
                        "observed" => Ok(CellSource::Observed),
                        "imputed" => Ok(CellSource::Imputed),
                        other => Err(PreprocessError::Io(format!("bad provenance {other:?}"))),
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            year,
            da_ids,
            matrix,
            provenance,
            scaler_params,
            catalog_fingerprint: catalog.fingerprint().to_string(),
            stages: vec![Stage::Scaled, Stage::Inverted, Stage::Imputed],
        })
    }
}

/// Normalized Euclidean distance over the columns observed in both rows,
/// `sqrt(sum d^2) / sqrt(|shared|)`. `None` when no column is shared.
pub fn masked_distance(a: &[Option<f64>], b: &[Option<f64>]) -> Option<f64> {
    let mut sum = 0.0;
    let mut shared = 0usize;
    for (x, y) in a.iter().zip(b) {
        if let (Some(x), Some(y)) = (x, y) {
            let d = x - y;
            sum += d * d;
            shared += 1;
        }
    }
    (shared > 0).then(|| sum.sqrt() / (shared as f64).sqrt())
}

/// KNN imputation over a plain matrix. Each missing cell becomes the
/// unweighted mean of the column values of its k nearest donor rows; donors
/// are rows with that column observed, ranked by [`masked_distance`] with ties
/// going to the lower row index. Donor values are summed nearest-first.
/// Only originally observed values are used.
pub fn knn_impute_rows(rows: &[Vec<Option<f64>>], k: usize) -> Result<Vec<Vec<f64>>, PreprocessError> {
    if k == 0 {
        return Err(PreprocessError::InvalidK);
    }
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(rows.len());
    for (r, row) in rows.iter().enumerate() {
        let mut filled = Vec::with_capacity(row.len());
        for (c, cell) in row.iter().enumerate() {
            if let Some(v) = cell {
                filled.push(*v);
                continue;
            }
            let donors: Vec<usize> = (0..rows.len())
                .filter(|&j| j != r && rows[j][c].is_some())
                .collect();
            if donors.len() < k {
                return Err(PreprocessError::InsufficientDonors {
                    row: r,
                    col: c,
                    available: donors.len(),
                    k,
                });
            }
            let mut ranked: Vec<(f64, usize)> = donors
                .iter()
                .filter_map(|&j| masked_distance(row, &rows[j]).map(|d| (d, j)))
                .collect();
            if ranked.is_empty() {
                return Err(PreprocessError::DisjointRows { row: r, col: c });
            }
            if ranked.len() < k {
                return Err(PreprocessError::InsufficientDonors {
                    row: r,
                    col: c,
                    available: ranked.len(),
                    k,
                });
            }
            ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let sum: f64 = ranked[..k]
                .iter()
                .map(|&(_, j)| rows[j][c].expect("donor column observed"))
                .sum();
            filled.push(sum / k as f64);
        }
        out.push(filled);
    }
    Ok(out)
}

pub fn knn_impute(matrix: WorkingMatrix, k: usize) -> Result<ProcessedPanel, PreprocessError> {
    if matrix.stages != [Stage::Scaled, Stage::Inverted] {
        return Err(PreprocessError::StageOrder(format!(
            "imputation expects scale -> invert, got {:?}",
            matrix.stages
        )));
    }
    let provenance = matrix
        .rows
        .iter()
        .map(|row| {
            row.iter()
                .map(|c| match c {
                    Some(_) => CellSource::Observed,
                    None => CellSource::Imputed,
                })
                .collect()
        })
        .collect();
    let values = knn_impute_rows(&matrix.rows, k)?;
    let mut stages = matrix.stages;
    stages.push(Stage::Imputed);
    Ok(ProcessedPanel {
        year: matrix.year,
        da_ids: matrix.da_ids,
        matrix: values,
        provenance,
        scaler_params: matrix.scaler_params,
        catalog_fingerprint: matrix.catalog_fingerprint,
        stages,
    })
}

fn check_catalog(panel: &Panel, catalog: &IndicatorCatalog) -> Result<(), PreprocessError> {
    if panel.catalog_fingerprint != catalog.fingerprint() {
        return Err(PreprocessError::CatalogMismatch(format!(
            "panel {} uses catalog {}, expected {}",
            panel.year,
            panel.catalog_fingerprint,
            catalog.fingerprint()
        )));
    }
    Ok(())
}

/// Preprocesses one panel with scaling fitted on that panel alone.
pub fn preprocess_panel(
    panel: &Panel,
    catalog: &IndicatorCatalog,
    k: usize,
) -> Result<ProcessedPanel, PreprocessError> {
    check_catalog(panel, catalog)?;
    let params = (0..panel.n_cols())
        .map(|c| {
            ScalerParams::fit(panel.column(c).into_iter().flatten())
                .ok_or(PreprocessError::EmptyColumn(c))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let working = WorkingMatrix::scaled(panel, &params).invert_costs(catalog)?;
    knn_impute(working, k)
}

/// Preprocesses every census year with MinMax bounds pooled over all years,
/// so processed values (and the indexes built on them) are comparable across
/// years. Imputation runs within each year.
pub fn preprocess_panel_set(
    set: &PanelSet,
    k: usize,
) -> Result<BTreeMap<Year, ProcessedPanel>, PreprocessError> {
    let catalog = &set.catalog;
    for p in set.panels.values() {
        check_catalog(p, catalog)?;
    }
    let params = (0..catalog.len())
        .map(|c| {
            ScalerParams::fit(set.panels.values().flat_map(|p| p.column(c).into_iter().flatten()))
                .ok_or(PreprocessError::EmptyColumn(c))
        })
        .collect::<Result<Vec<_>, _>>()?;
    set.panels
        .iter()
        .map(|(&year, panel)| {
            let working = WorkingMatrix::scaled(panel, &params).invert_costs(catalog)?;
            Ok((year, knn_impute(working, k)?))
        })
        .collect()
}
