//! Indicator catalog and census panel data model.
//!
//! The catalog is the single source of column ordering: every matrix produced
//! downstream (processed panels, CVI breakdowns, cluster features) lays out its
//! columns in catalog order, and a [`PanelSet`] carries the catalog fingerprint
//! so stages can check they were handed matching data.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Census years tracked by the long-term index.
pub const CENSUS_YEARS: [Year; 4] = [2006, 2011, 2016, 2021];

pub type Year = u16;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("validation error: {0}")]
    Validation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    /// Higher raw values mean higher vitality.
    Benefit,
    /// Higher raw values mean lower vitality; inverted after scaling.
    Cost,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Indicator {
    pub id: String,
    pub label: String,
    pub polarity: Polarity,
    pub impute: bool,
    pub cluster_feature: bool,
    #[serde(default = "default_true")]
    pub index_member: bool,
    #[serde(default)]
    pub source: String,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndicatorCatalog {
    indicators: Vec<Indicator>,
    version: String,
}

impl IndicatorCatalog {
    pub fn new(indicators: Vec<Indicator>) -> Result<Self, DataError> {
        let mut seen = HashSet::new();
        for ind in &indicators {
            if ind.id.is_empty() {
                return Err(DataError::Validation("indicator id must be non-empty".into()));
            }
            if ind.id == "da_id" {
                return Err(DataError::Validation("indicator id \"da_id\" is reserved".into()));
            }
            if !seen.insert(ind.id.as_str()) {
                return Err(DataError::Validation(format!(
                    "duplicate indicator id {:?}",
                    ind.id
                )));
            }
        }
        if !indicators.iter().any(|i| i.cluster_feature) {
            return Err(DataError::Validation(
                "catalog needs at least one cluster_feature indicator".into(),
            ));
        }
        let version = fingerprint_of(&indicators);
        Ok(Self {
            indicators,
            version,
        })
    }

    /// The shipped catalog: 13 index indicators plus population density,
    /// which only feeds clustering.
    pub fn default_catalog() -> Self {
        use Polarity::{Benefit, Cost};
        let rows: [(&str, &str, Polarity, bool, bool, bool, &str); 14] = [
            ("repairs_minor", "Proportion of dwellings needing minor repairs", Cost, false, false, true, "census"),
            ("repairs_major", "Proportion of dwellings needing major repairs", Cost, false, false, true, "census"),
            ("deprivation_material", "Material deprivation index", Cost, true, false, true, "public-health"),
            ("deprivation_social", "Social deprivation index", Cost, true, false, true, "public-health"),
            ("owner_cost", "Average housing costs for owners", Benefit, false, false, true, "census"),
            ("renter_cost", "Average renter housing costs", Benefit, true, false, true, "census"),
            ("unoccupied_rate", "Unoccupied housing rate", Cost, false, false, true, "census"),
            ("renovation_value", "Average value of renovations", Benefit, false, false, true, "municipal-permits"),
            ("construction_value", "Average value of construction", Benefit, false, false, true, "municipal-permits"),
            ("building_value", "Average value of buildings", Benefit, false, true, true, "municipal-assessment"),
            ("vacant_buildings", "Number of vacant buildings", Cost, false, false, true, "municipal"),
            ("youth_share", "Proportion of young people", Benefit, false, true, true, "census"),
            ("businesses", "Number of businesses", Benefit, false, true, true, "geocoded-registry"),
            ("pop_density", "Population density per square kilometre", Benefit, false, true, false, "census"),
        ];
        let indicators = rows
            .iter()
            .map(|&(id, label, polarity, impute, cluster_feature, index_member, source)| Indicator {
                id: id.to_string(),
                label: label.to_string(),
                polarity,
                impute,
                cluster_feature,
                index_member,
                source: source.to_string(),
            })
            .collect();
        Self::new(indicators).expect("default catalog is valid")
    }

    pub fn indicators(&self) -> &[Indicator] {
        &self.indicators
    }

    pub fn len(&self) -> usize {
        self.indicators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indicators.is_empty()
    }

    /// Content fingerprint; doubles as the catalog version string.
    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn fingerprint(&self) -> &str {
        &self.version
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.indicators.iter().position(|i| i.id == id)
    }

    pub fn index_members(&self) -> Vec<usize> {
        self.columns_where(|i| i.index_member)
    }

    pub fn cluster_features(&self) -> Vec<usize> {
        self.columns_where(|i| i.cluster_feature)
    }

    fn columns_where(&self, pred: impl Fn(&Indicator) -> bool) -> Vec<usize> {
        self.indicators
            .iter()
            .enumerate()
            .filter(|(_, i)| pred(i))
            .map(|(c, _)| c)
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.indicators).expect("catalog serializes")
    }
}

fn fingerprint_of(indicators: &[Indicator]) -> String {
    let canonical = serde_json::to_vec(indicators).expect("catalog serializes");
    let digest = Sha256::digest(&canonical);
    format!("sha256:{}", &hex::encode(digest)[..16])
}

pub fn load_catalog(path: &Path) -> Result<IndicatorCatalog, DataError> {
    let text = read_to_string(path)?;
    parse_catalog(&text)
}

pub fn parse_catalog(text: &str) -> Result<IndicatorCatalog, DataError> {
    let indicators: Vec<Indicator> =
        serde_json::from_str(text).map_err(|e| DataError::Parse(format!("catalog: {e}")))?;
    IndicatorCatalog::new(indicators)
}

fn read_to_string(path: &Path) -> Result<String, DataError> {
    let mut s = String::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut s))
        .map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
    Ok(s)
}

/// One census year of raw indicator values, rows = DAs, columns = catalog order.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub year: Year,
    pub da_ids: Vec<String>,
    /// Fingerprint of the catalog the panel was validated against.
    pub catalog_fingerprint: String,
    n_cols: usize,
    cells: Vec<Option<f64>>,
}

impl Panel {
    pub fn new(
        year: Year,
        da_ids: Vec<String>,
        rows: Vec<Vec<Option<f64>>>,
        catalog: &IndicatorCatalog,
    ) -> Result<Self, DataError> {
        let n_cols = catalog.len();
        if rows.len() != da_ids.len() {
            return Err(DataError::Validation(format!(
                "{} rows for {} DA ids",
                rows.len(),
                da_ids.len()
            )));
        }
        let mut seen = HashSet::new();
        for id in &da_ids {
            if !seen.insert(id.as_str()) {
                return Err(DataError::Validation(format!("duplicate DA id {id:?} in {year}")));
            }
        }
        let mut cells = Vec::with_capacity(rows.len() * n_cols);
        for (r, row) in rows.into_iter().enumerate() {
            if row.len() != n_cols {
                return Err(DataError::Validation(format!(
                    "row {} has {} cells, catalog has {n_cols}",
                    da_ids[r],
                    row.len()
                )));
            }
            for (c, cell) in row.into_iter().enumerate() {
                let ind = &catalog.indicators()[c];
                match cell {
                    None if !ind.impute => {
                        return Err(DataError::Validation(format!(
                            "missing value for non-imputable indicator {:?} (DA {}, {year})",
                            ind.id, da_ids[r]
                        )))
                    }
                    Some(v) if !v.is_finite() => {
                        return Err(DataError::Validation(format!(
                            "non-finite value for {:?} (DA {}, {year})",
                            ind.id, da_ids[r]
                        )))
                    }
                    _ => {}
                }
                cells.push(cell);
            }
        }
        Ok(Self {
            year,
            da_ids,
            catalog_fingerprint: catalog.fingerprint().to_string(),
            n_cols,
            cells,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.da_ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.cells[row * self.n_cols + col]
    }

    pub fn row(&self, row: usize) -> &[Option<f64>] {
        &self.cells[row * self.n_cols..(row + 1) * self.n_cols]
    }

    pub fn column(&self, col: usize) -> Vec<Option<f64>> {
        (0..self.n_rows()).map(|r| self.get(r, col)).collect()
    }

    pub fn missing_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_none()).count()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[Option<f64>]> {
        self.cells.chunks(self.n_cols.max(1))
    }
}

pub fn load_panel(path: &Path, catalog: &IndicatorCatalog, year: Year) -> Result<Panel, DataError> {
    let text = read_to_string(path)?;
    parse_panel(text.as_bytes(), catalog, year)
}

pub fn parse_panel(
    bytes: &[u8],
    catalog: &IndicatorCatalog,
    year: Year,
) -> Result<Panel, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::None)
        .from_reader(bytes);
    let header = reader
        .headers()
        .map_err(|e| DataError::Parse(format!("panel header: {e}")))?
        .clone();
    if header.get(0) != Some("da_id") {
        return Err(DataError::Schema("first column must be \"da_id\"".into()));
    }
    // file column -> catalog column
    let mut mapping = Vec::with_capacity(header.len() - 1);
    let mut present = BTreeSet::new();
    for name in header.iter().skip(1) {
        let pos = catalog
            .position(name)
            .ok_or_else(|| DataError::Schema(format!("column {name:?} is not in the catalog")))?;
        if !present.insert(pos) {
            return Err(DataError::Schema(format!("column {name:?} appears twice")));
        }
        mapping.push(pos);
    }
    if let Some(missing) = catalog
        .indicators()
        .iter()
        .enumerate()
        .find(|(c, _)| !present.contains(c))
    {
        return Err(DataError::Schema(format!(
            "catalog indicator {:?} has no column",
            missing.1.id
        )));
    }

    let mut da_ids = Vec::new();
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| DataError::Parse(format!("panel row {}: {e}", line + 2)))?;
        let da = record.get(0).unwrap_or_default();
        if da.is_empty() {
            return Err(DataError::Schema(format!("row {} has no da_id", line + 2)));
        }
        let mut row = vec![None; catalog.len()];
        for (field, &col) in record.iter().skip(1).zip(&mapping) {
            if field.is_empty() {
                continue;
            }
            let v: f64 = field.parse().map_err(|_| {
                DataError::Parse(format!("row {}: {field:?} is not a number", line + 2))
            })?;
            row[col] = Some(v);
        }
        da_ids.push(da.to_string());
        rows.push(row);
    }
    Panel::new(year, da_ids, rows, catalog)
}

/// Writes a panel as CSV in catalog column order. Floats use the shortest
/// representation that round-trips exactly.
pub fn write_panel<W: Write>(panel: &Panel, catalog: &IndicatorCatalog, out: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["da_id".to_string()];
    header.extend(catalog.indicators().iter().map(|i| i.id.clone()));
    w.write_record(&header).map_err(csv_err)?;
    for (r, id) in panel.da_ids.iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend(panel.row(r).iter().map(|c| c.map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| DataError::Parse(e.to_string()))?;
    Ok(())
}

fn csv_err(e: csv::Error) -> DataError {
    DataError::Parse(e.to_string())
}

/// All census years over one catalog and one DA ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelSet {
    pub panels: BTreeMap<Year, Panel>,
    pub catalog: IndicatorCatalog,
    pub fingerprint: String,
}

impl PanelSet {
    pub fn da_ids(&self) -> &[String] {
        self.panels
            .values()
            .next()
            .map(|p| p.da_ids.as_slice())
            .unwrap_or(&[])
    }

    pub fn years(&self) -> Vec<Year> {
        self.panels.keys().copied().collect()
    }
}

/// Merges single-year panels into a [`PanelSet`] whose DA ordering is the
/// sorted union of every panel's ids. A DA absent from a year becomes an
/// all-missing row, which is only legal when every indicator is imputable.
pub fn merge_panels(panels: Vec<Panel>, catalog: &IndicatorCatalog) -> Result<PanelSet, DataError> {
    if panels.is_empty() {
        return Err(DataError::Validation("no panels to merge".into()));
    }
    if let Some(p) = panels
        .iter()
        .find(|p| p.catalog_fingerprint != catalog.fingerprint())
    {
        return Err(DataError::Validation(format!(
            "panel {} was built against catalog {}, expected {}",
            p.year,
            p.catalog_fingerprint,
            catalog.fingerprint()
        )));
    }
    let mut years = BTreeSet::new();
    for p in &panels {
        if !years.insert(p.year) {
            return Err(DataError::Validation(format!("year {} given twice", p.year)));
        }
    }
    let union: BTreeSet<&str> = panels
        .iter()
        .flat_map(|p| p.da_ids.iter().map(String::as_str))
        .collect();
    let union: Vec<String> = union.into_iter().map(str::to_string).collect();
    let all_imputable = catalog.indicators().iter().all(|i| i.impute);

    let mut merged = BTreeMap::new();
    for p in &panels {
        let index: BTreeMap<&str, usize> = p
            .da_ids
            .iter()
            .enumerate()
            .map(|(r, id)| (id.as_str(), r))
            .collect();
        let mut rows = Vec::with_capacity(union.len());
        for id in &union {
            match index.get(id.as_str()) {
                Some(&r) => rows.push(p.row(r).to_vec()),
                None if all_imputable => rows.push(vec![None; catalog.len()]),
                None => {
                    return Err(DataError::Validation(format!(
                        "DA {id} is absent from {} and not every indicator is imputable",
                        p.year
                    )))
                }
            }
        }
        merged.insert(p.year, Panel::new(p.year, union.clone(), rows, catalog)?);
    }
    Ok(PanelSet {
        panels: merged,
        catalog: catalog.clone(),
        fingerprint: catalog.fingerprint().to_string(),
    })
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Polarity::Benefit => f.write_str("benefit"),
            Polarity::Cost => f.write_str("cost"),
        }
    }
}
