//! Current Vitality Index: the per-area mean of the processed index
//! indicators, its eight-class histogram and the choropleth export.

use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::data::{IndicatorCatalog, Year};
use crate::geo::{geometry_json, GeoIndex};
use crate::preprocess::{CellSource, ProcessedPanel};

pub const N_BINS: usize = 8;

/// Fill colors from darkest (lowest CVI) to lightest (highest CVI).
pub const COLOR_RAMP: [&str; N_BINS] = [
    "#08306b", "#08519c", "#2171b5", "#4292c6", "#6baed6", "#9ecae1", "#c6dbef", "#f7fbff",
];

#[derive(Debug, Error, PartialEq)]
pub enum CviError {
    #[error("catalog mismatch: {0}")]
    CatalogMismatch(String),
    #[error("no geometry for DAs {0:?}")]
    GeometryMissing(Vec<String>),
    #[error("empty input")]
    Empty,
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Nine strictly increasing edges, or all equal when degenerate.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub min: f64,
    pub max: f64,
    /// True when every value is equal; all values then sit in bin 0.
    pub degenerate: bool,
}

impl Histogram {
    /// Bin of `v`: `edges[j] <= v < edges[j + 1]`, the maximum going to the last bin.
    pub fn bin_of(&self, v: f64) -> usize {
        if self.degenerate {
            return 0;
        }
        // last interior edge that is <= v
        (1..N_BINS)
            .rev()
            .find(|&j| v >= self.edges[j])
            .unwrap_or(0)
    }
}

/// Eight equal-width bins over the observed range.
pub fn histogram8(values: &[f64]) -> Result<Histogram, CviError> {
    let (min, max) = values
        .iter()
        .fold(None, |acc: Option<(f64, f64)>, &v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
        .ok_or(CviError::Empty)?;
    let degenerate = min == max;
    let width = (max - min) / N_BINS as f64;
    let mut edges: Vec<f64> = (0..=N_BINS).map(|j| min + j as f64 * width).collect();
    edges[N_BINS] = max;
    let mut hist = Histogram {
        edges,
        counts: vec![0; N_BINS],
        min,
        max,
        degenerate,
    };
    for &v in values {
        let b = hist.bin_of(v);
        hist.counts[b] += 1;
    }
    Ok(hist)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaCvi {
    pub da_id: String,
    pub cvi: f64,
    /// Processed index-indicator values in catalog order.
    pub indicators: Vec<f64>,
    pub provenance: Vec<CellSource>,
    pub bin: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CviResult {
    pub year: Year,
    /// Ids of the index indicators, matching each `DaCvi::indicators`.
    pub indicator_ids: Vec<String>,
    pub das: Vec<DaCvi>,
    pub histogram: Histogram,
}

impl CviResult {
    pub fn values(&self) -> Vec<f64> {
        self.das.iter().map(|d| d.cvi).collect()
    }

    pub fn get(&self, da_id: &str) -> Option<&DaCvi> {
        self.das.iter().find(|d| d.da_id == da_id)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), CviError> {
        let io = |e: csv::Error| CviError::Io(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["da_id".to_string(), "cvi".into(), "bin".into()];
        header.extend(self.indicator_ids.iter().cloned());
        w.write_record(&header).map_err(io)?;
        for d in &self.das {
            let mut rec = vec![d.da_id.clone(), d.cvi.to_string(), d.bin.to_string()];
            rec.extend(d.indicators.iter().map(f64::to_string));
            w.write_record(&rec).map_err(io)?;
        }
        w.flush().map_err(|e| CviError::Io(e.to_string()))
    }
}

/// Unweighted mean over the catalog's index indicators, summed in
/// catalog order.
pub fn compute_cvi(panel: &ProcessedPanel, catalog: &IndicatorCatalog) -> Result<CviResult, CviError> {
    if panel.catalog_fingerprint != catalog.fingerprint() {
        return Err(CviError::CatalogMismatch(format!(
            "panel built with {}, catalog is {}",
            panel.catalog_fingerprint,
            catalog.fingerprint()
        )));
    }
    let members = catalog.index_members();
    if members.is_empty() {
        return Err(CviError::CatalogMismatch("catalog has no index members".into()));
    }
    if panel.matrix.iter().any(|r| r.len() != catalog.len()) {
        return Err(CviError::CatalogMismatch("row width differs from catalog".into()));
    }
    if panel.matrix.is_empty() {
        return Err(CviError::Empty);
    }
    let n = members.len() as f64;
    let mut das: Vec<DaCvi> = panel
        .da_ids
        .iter()
        .zip(panel.matrix.iter().zip(&panel.provenance))
        .map(|(id, (row, prov))| {
            let indicators: Vec<f64> = members.iter().map(|&c| row[c]).collect();
            let sum: f64 = indicators.iter().sum();
            DaCvi {
                da_id: id.clone(),
                cvi: sum / n,
                indicators,
                provenance: members.iter().map(|&c| prov[c]).collect(),
                bin: 0,
            }
        })
        .collect();
    let histogram = histogram8(&das.iter().map(|d| d.cvi).collect::<Vec<_>>())?;
    for d in &mut das {
        d.bin = histogram.bin_of(d.cvi);
    }
    Ok(CviResult {
        year: panel.year,
        indicator_ids: members
            .iter()
            .map(|&c| catalog.indicators()[c].id.clone())
            .collect(),
        das,
        histogram,
    })
}

fn feature_for(d: &DaCvi, result: &CviResult, geometry: Value) -> Value {
    let indicators: Map<String, Value> = result
        .indicator_ids
        .iter()
        .zip(&d.indicators)
        .map(|(id, v)| (id.clone(), json!(v)))
        .collect();
    let provenance: Map<String, Value> = result
        .indicator_ids
        .iter()
        .zip(&d.provenance)
        .map(|(id, p)| (id.clone(), json!(p)))
        .collect();
    json!({
        "type": "Feature",
        "properties": {
            "DAUID": d.da_id,
            "cvi": d.cvi,
            "bin": d.bin,
            "fill": COLOR_RAMP[d.bin],
            "indicators": indicators,
            "provenance": provenance,
        },
        "geometry": geometry,
    })
}

/// Choropleth FeatureCollection; fails listing every DA without geometry.
pub fn export_choropleth(result: &CviResult, geo: &GeoIndex) -> Result<Value, CviError> {
    let (doc, missing) = export_choropleth_partial(result, geo);
    if missing.is_empty() {
        Ok(doc)
    } else {
        Err(CviError::GeometryMissing(missing))
    }
}

/// Like [`export_choropleth`] but keeps DAs without geometry as features
/// with a null geometry, returning their ids alongside.
pub fn export_choropleth_partial(result: &CviResult, geo: &GeoIndex) -> (Value, Vec<String>) {
    let mut missing = Vec::new();
    let features: Vec<Value> = result
        .das
        .iter()
        .map(|d| {
            let geometry = match geo.get(&d.da_id) {
                Some(poly) => geometry_json(poly),
                None => {
                    missing.push(d.da_id.clone());
                    Value::Null
                }
            };
            feature_for(d, result, geometry)
        })
        .collect();
    let doc = json!({
        "type": "FeatureCollection",
        "year": result.year,
        "bins": {
            "edges": result.histogram.edges,
            "colors": COLOR_RAMP,
            "range": "observed",
            "degenerate": result.histogram.degenerate,
        },
        "features": features,
    });
    (doc, missing)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Indicator, Polarity};
    use crate::geo::DAPolygon;
    use crate::preprocess::{ScalerParams, Stage};

    fn catalog(n: usize) -> IndicatorCatalog {
        IndicatorCatalog::new(
            (0..n)
                .map(|i| Indicator {
                    id: format!("i{i}"),
                    label: format!("I{i}"),
                    polarity: Polarity::Benefit,
                    impute: false,
                    cluster_feature: i == 0,
                    index_member: true,
                    source: String::new(),
                })
                .collect(),
        )
        .unwrap()
    }

    pub(crate) fn panel(cat: &IndicatorCatalog, rows: Vec<Vec<f64>>) -> ProcessedPanel {
        ProcessedPanel {
            year: 2021,
            da_ids: (0..rows.len()).map(|i| format!("D{i}")).collect(),
            provenance: rows.iter().map(|r| vec![CellSource::Observed; r.len()]).collect(),
            scaler_params: vec![ScalerParams { min: 0.0, max: 1.0 }; cat.len()],
            matrix: rows,
            catalog_fingerprint: cat.fingerprint().into(),
            stages: vec![Stage::Scaled, Stage::Inverted, Stage::Imputed],
        }
    }

    #[test]
    fn mean_and_endpoints() {
        let cat = catalog(3);
        let r = compute_cvi(
            &panel(&cat, vec![vec![0.2, 0.4, 0.6], vec![0.0; 3], vec![1.0; 3]]),
            &cat,
        )
        .unwrap();
        assert!((r.das[0].cvi - 0.4).abs() < 1e-15);
        assert_eq!(r.das[1].cvi, 0.0);
        assert_eq!(r.das[2].cvi, 1.0);
        assert_eq!(r.das[1].bin, 0);
        assert_eq!(r.das[2].bin, 7);
    }

    #[test]
    fn non_members_excluded() {
        let mut inds = catalog(2).indicators().to_vec();
        inds[1].index_member = false;
        let cat = IndicatorCatalog::new(inds).unwrap();
        let r = compute_cvi(&panel(&cat, vec![vec![0.3, 0.9]]), &cat).unwrap();
        assert_eq!(r.das[0].cvi, 0.3);
        assert_eq!(r.indicator_ids, ["i0"]);
    }

    #[test]
    fn catalog_mismatch() {
        let cat = catalog(3);
        let other = catalog(2);
        let p = panel(&cat, vec![vec![0.1, 0.2, 0.3]]);
        assert!(matches!(compute_cvi(&p, &other), Err(CviError::CatalogMismatch(_))));
    }

    #[test]
    fn histogram_examples() {
        let h = histogram8(&[0.0, 1.0]).unwrap();
        assert_eq!(h.counts, [1, 0, 0, 0, 0, 0, 0, 1]);
        assert!(h.edges.windows(2).all(|w| w[0] < w[1]));

        let h = histogram8(&[0.37; 87]).unwrap();
        assert!(h.degenerate);
        assert_eq!(h.counts[0], 87);

        assert_eq!(histogram8(&[]), Err(CviError::Empty));
    }

    #[test]
    fn uniform_grid_fills_bins_evenly() {
        let values: Vec<f64> = (0..800).map(|i| i as f64 / 799.0).collect();
        let h = histogram8(&values).unwrap();
        // counting oracle: compare each value against the edges directly
        let mut oracle = [0usize; 8];
        for &v in &values {
            let mut j = 0;
            while j < 7 && v >= h.edges[j + 1] {
                j += 1;
            }
            oracle[j] += 1;
        }
        assert_eq!(h.counts, oracle);
        assert_eq!(h.counts, [100; 8]);
    }

    #[test]
    fn choropleth_ramp_endpoints_and_missing_geometry() {
        let cat = catalog(1);
        let r = compute_cvi(&panel(&cat, vec![vec![0.0], vec![1.0]]), &cat).unwrap();
        let geo = GeoIndex::new(vec![
            DAPolygon::rectangle("D0", (0.0, 0.0), (1.0, 1.0)),
            DAPolygon::rectangle("D1", (1.0, 0.0), (2.0, 1.0)),
        ])
        .unwrap();
        let doc = export_choropleth(&r, &geo).unwrap();
        let f = doc["features"].as_array().unwrap();
        assert_eq!(f[0]["properties"]["fill"], COLOR_RAMP[0]);
        assert_eq!(f[1]["properties"]["fill"], COLOR_RAMP[7]);
        assert_eq!(f[1]["properties"]["bin"], 7);

        let partial = GeoIndex::new(vec![DAPolygon::rectangle("D0", (0.0, 0.0), (1.0, 1.0))]).unwrap();
        assert_eq!(
            export_choropleth(&r, &partial),
            Err(CviError::GeometryMissing(vec!["D1".into()]))
        );
        let (doc, missing) = export_choropleth_partial(&r, &partial);
        assert_eq!(missing, ["D1"]);
        assert!(doc["features"][1]["geometry"].is_null());
    }

    #[test]
    fn single_da_is_degenerate_and_darkest() {
        let cat = catalog(1);
        let r = compute_cvi(&panel(&cat, vec![vec![1.0]]), &cat).unwrap();
        assert!(r.histogram.degenerate);
        assert_eq!(r.das[0].bin, 0);
    }
}
