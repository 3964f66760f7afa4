//! Deterministic synthetic city: sector-structured indicator panels for every
//! census year, a rectangular DA tiling, business address fixtures and the
//! planted sector labels.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{write_panel, IndicatorCatalog, Panel, Polarity, CENSUS_YEARS};
use crate::geo::{write_geojson, DAPolygon, FixtureGeocoder, GeoIndex};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    Config(String),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

/// Raw range of one indicator; a latent value `u` in [0, 1] maps to
/// `lo + u * (hi - lo)`, rounded when the indicator is a count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRange {
    pub lo: f64,
    pub hi: f64,
    pub integer: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_das: usize,
    pub sector_names: Vec<String>,
    pub proportions: Vec<f64>,
    /// Latent means, `[sector][indicator]` in catalog order.
    pub means: Vec<Vec<f64>>,
    /// Latent standard deviation per sector.
    pub sigma: Vec<f64>,
    /// Latent change per census interval for a benefit indicator; costs move
    /// the opposite way.
    pub trend: f64,
    /// Latent loss of vitality applied to the last census year.
    pub dip: f64,
    /// Per-year noise as a fraction of the sector sigma.
    pub year_noise: f64,
    pub missing_rate: f64,
    pub ranges: Vec<RawRange>,
    pub grid_cols: usize,
    pub origin: (f64, f64),
    pub cell_size: f64,
    pub id_base: u64,
}

impl SynthConfig {
    pub fn with_seed(seed: u64) -> Self {
        let r = |lo: f64, hi: f64| RawRange { lo, hi, integer: false };
        let n = |lo: f64, hi: f64| RawRange { lo, hi, integer: true };
        // catalog order; cost indicators get low latent values in vital sectors
        let urban = [0.45, 0.35, 0.55, 0.65, 0.45, 0.50, 0.45, 0.40, 0.35, 0.40, 0.45, 0.40, 0.35, 0.85];
        let residential = [0.25, 0.15, 0.30, 0.30, 0.55, 0.45, 0.20, 0.55, 0.55, 0.55, 0.15, 0.80, 0.10, 0.30];
        let commercial = [0.35, 0.25, 0.40, 0.45, 0.70, 0.65, 0.35, 0.65, 0.75, 0.85, 0.30, 0.25, 0.85, 0.45];
        Self {
            seed,
            n_das: 87,
            sector_names: ["Urban", "Residential", "Commercial"].map(String::from).to_vec(),
            proportions: vec![0.30, 0.45, 0.25],
            means: vec![urban.to_vec(), residential.to_vec(), commercial.to_vec()],
            sigma: vec![0.06, 0.04, 0.06],
            trend: 0.02,
            dip: 0.06,
            year_noise: 0.25,
            missing_rate: 0.05,
            ranges: vec![
                r(0.0, 0.4),
                r(0.0, 0.2),
                r(1.0, 5.0),
                r(1.0, 5.0),
                r(500.0, 2000.0),
                r(400.0, 1400.0),
                r(0.0, 0.2),
                r(0.0, 60_000.0),
                r(0.0, 400_000.0),
                r(100_000.0, 600_000.0),
                n(0.0, 20.0),
                r(0.05, 0.35),
                n(0.0, 60.0),
                r(100.0, 6000.0),
            ],
            grid_cols: 10,
            origin: (-72.80, 46.50),
            cell_size: 0.01,
            id_base: 24_360_000,
        }
    }

    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    fn validate(&self, catalog: &IndicatorCatalog) -> Result<(), SynthError> {
        let fail = |m: String| Err(SynthError::Config(m));
        let k = self.sector_names.len();
        if k == 0 || self.proportions.len() != k || self.means.len() != k || self.sigma.len() != k {
            return fail("sector names, proportions, means and sigma must have one entry per sector".into());
        }
        if self.n_das == 0 {
            return fail("n_das must be positive".into());
        }
        if (self.proportions.iter().sum::<f64>() - 1.0).abs() > 1e-9 || self.proportions.iter().any(|p| *p < 0.0) {
            return fail("proportions must be non-negative and sum to 1".into());
        }
        if self.sigma.iter().any(|s| !(*s > 0.0)) {
            return fail("sigma must be positive".into());
        }
        if !(0.0..=0.3).contains(&self.missing_rate) {
            return fail(format!("missing rate {} outside [0, 0.3]", self.missing_rate));
        }
        if self.means.iter().any(|m| m.len() != catalog.len()) || self.ranges.len() != catalog.len() {
            return fail(format!("means and ranges need {} indicator entries", catalog.len()));
        }
        if self.grid_cols == 0 || !(self.cell_size > 0.0) {
            return fail("grid must have positive columns and cell size".into());
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `n` items over `proportions`; ties in
/// the remainder go to the lower index.
pub fn apportion(n: usize, proportions: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = proportions.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..exact.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let short = n.saturating_sub(counts.iter().sum());
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

#[derive(Debug, Clone)]
pub struct SynthCity {
    pub catalog: IndicatorCatalog,
    pub panels: Vec<Panel>,
    pub geo: GeoIndex,
    pub sector_names: Vec<String>,
    /// `(da_id, sector index)` in id order.
    pub labels: Vec<(String, usize)>,
    pub addresses: FixtureGeocoder,
    /// Business count per DA in the last census year, equal to its addresses.
    pub planted_businesses: BTreeMap<String, usize>,
}

impl SynthCity {
    pub fn labels_csv(&self) -> String {
        let mut out = String::from("da_id,sector\n");
        for (id, s) in &self.labels {
            out.push_str(&format!("{id},{}\n", self.sector_names[*s]));
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<(), SynthError> {
        let io = |path: &Path, e: std::io::Error| SynthError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let put = |name: &str, bytes: &[u8]| {
            let path = dir.join(name);
            fs::write(&path, bytes).map_err(|e| io(&path, e))
        };
        put("catalog.json", self.catalog.to_json().as_bytes())?;
        for p in &self.panels {
            let mut buf = Vec::new();
            write_panel(p, &self.catalog, &mut buf).map_err(|e| SynthError::Io {
                path: format!("panel_{}.csv", p.year),
                message: e.to_string(),
            })?;
            put(&format!("panel_{}.csv", p.year), &buf)?;
        }
        put("boundaries.geojson", write_geojson(&self.geo).as_bytes())?;
        put("addresses.json", self.addresses.to_json().as_bytes())?;
        put("labels.csv", self.labels_csv().as_bytes())
    }
}

pub fn generate(config: &SynthConfig) -> Result<SynthCity, SynthError> {
    generate_with_catalog(config, IndicatorCatalog::default_catalog())
}

pub fn generate_with_catalog(config: &SynthConfig, catalog: IndicatorCatalog) -> Result<SynthCity, SynthError> {
    config.validate(&catalog)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.n_das;
    let p = catalog.len();
    let da_ids: Vec<String> = (1..=n as u64).map(|i| (config.id_base + i).to_string()).collect();

    // tiles nearest the grid center become the first sector in ring order
    let cols = config.grid_cols;
    let rows = n.div_ceil(cols);
    let center = ((cols as f64 - 1.0) / 2.0, (rows as f64 - 1.0) / 2.0);
    let mut by_ring: Vec<usize> = (0..n).collect();
    let ring = |i: usize| {
        let (c, r) = ((i % cols) as f64, (i / cols) as f64);
        (c - center.0).powi(2) + (r - center.1).powi(2)
    };
    by_ring.sort_by(|&a, &b| ring(a).total_cmp(&ring(b)));
    let counts = apportion(n, &config.proportions);
    // urban core, then the sector with the highest business mean, then the rest
    let k = config.sector_names.len();
    let mut ring_order: Vec<usize> = (0..k).collect();
    if let Some(biz) = catalog.position("businesses") {
        ring_order[1..].sort_by(|&a, &b| config.means[b][biz].total_cmp(&config.means[a][biz]));
    }
    let mut sector = vec![0; n];
    let mut it = by_ring.into_iter();
    for &s in &ring_order {
        for i in it.by_ref().take(counts[s]) {
            sector[i] = s;
        }
    }

    let mut levels = vec![vec![0.0; p]; n];
    for (i, row) in levels.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            *v = config.means[sector[i]][j] + config.sigma[sector[i]] * z;
        }
    }

    let last = *CENSUS_YEARS.last().expect("census years");
    let impute_cols: Vec<usize> = (0..p).filter(|&j| catalog.indicators()[j].impute).collect();
    let mut panels = Vec::new();
    let mut planted_businesses = BTreeMap::new();
    for (step, &year) in CENSUS_YEARS.iter().enumerate() {
        let mut cells: Vec<Vec<Option<f64>>> = Vec::with_capacity(n);
        for i in 0..n {
            let row = (0..p)
                .map(|j| {
                    let ind = &catalog.indicators()[j];
                    let sign = match ind.polarity {
                        Polarity::Benefit => 1.0,
                        Polarity::Cost => -1.0,
                    };
                    let z: f64 = rng.sample(StandardNormal);
                    let mut u = levels[i][j]
                        + sign * config.trend * step as f64
                        + config.year_noise * config.sigma[sector[i]] * z;
                    if year == last {
                        u -= sign * config.dip;
                    }
                    let range = &config.ranges[j];
                    let raw = range.lo + u.clamp(0.0, 1.0) * (range.hi - range.lo);
                    Some(if range.integer { raw.round() } else { raw })
                })
                .collect();
            cells.push(row);
        }
        if !impute_cols.is_empty() {
            let total = n * impute_cols.len();
            let n_missing = (config.missing_rate * total as f64).round() as usize;
            for cell in index::sample(&mut rng, total, n_missing).into_vec() {
                cells[cell / impute_cols.len()][impute_cols[cell % impute_cols.len()]] = None;
            }
        }
        if year == last {
            if let Some(biz) = catalog.position("businesses") {
                for (i, id) in da_ids.iter().enumerate() {
                    let count = cells[i][biz].expect("business column is never missing");
                    planted_businesses.insert(id.clone(), count as usize);
                }
            }
        }
        let panel = Panel::new(year, da_ids.clone(), cells, &catalog)
            .map_err(|e| SynthError::Config(e.to_string()))?;
        panels.push(panel);
    }

    let polygons: Vec<DAPolygon> = (0..n)
        .map(|i| {
            let (c, r) = ((i % cols) as f64, (i / cols) as f64);
            let x = |c: f64| config.origin.0 + c * config.cell_size;
            let y = |r: f64| config.origin.1 + r * config.cell_size;
            DAPolygon::rectangle(da_ids[i].clone(), (x(c), y(r)), (x(c + 1.0), y(r + 1.0)))
        })
        .collect();

    let mut table = BTreeMap::new();
    for (i, poly) in polygons.iter().enumerate() {
        let bb = poly.bbox();
        let count = planted_businesses.get(&da_ids[i]).copied().unwrap_or(0);
        for b in 0..count {
            let u: f64 = rng.random();
            let v: f64 = rng.random();
            let point = (
                bb.min_x + (0.05 + 0.9 * u) * (bb.max_x - bb.min_x),
                bb.min_y + (0.05 + 0.9 * v) * (bb.max_y - bb.min_y),
            );
            table.insert(format!("{} rue du Commerce, secteur {}", b + 1, da_ids[i]), point);
        }
    }
    let geo = GeoIndex::new(polygons).map_err(|e| SynthError::Config(e.to_string()))?;

    Ok(SynthCity {
        catalog,
        panels,
        geo,
        sector_names: config.sector_names.clone(),
        labels: da_ids.into_iter().zip(sector).collect(),
        addresses: FixtureGeocoder::new(table),
        planted_businesses,
    })
}
