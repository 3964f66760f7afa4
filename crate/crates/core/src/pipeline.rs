//! Stage orchestration over an output directory. Every stage reads its
//! inputs from the directory and writes its artifacts back, so running the
//! stages one by one produces the same bytes as a single full run.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cluster::{cluster_points, medoids, ClusterOutput, KMeansParams, DEFAULT_SECTOR_NAMES};
use crate::cvi::{compute_cvi, export_choropleth, CviResult};
use crate::data::{load_panel, merge_panels, parse_catalog, parse_panel, write_panel, IndicatorCatalog, Year, CENSUS_YEARS};
use crate::explain::{
    cvi_design, explain_clusters, generate_report, global_shap, importance_report, standard_notices,
    surrogate_params, Bundle, BUNDLE_VERSION,
};
use crate::geo::{assign_addresses, load_geojson, parse_geojson, write_geojson, FixtureGeocoder};
use crate::learners::{fit_boosted, fit_forest, BoostParams, ForestParams, TreeEnsemble};
use crate::lvi::{compute_lvi, forecast, lvi_timeseries_payload, reference_checks, ModelKind, DEFAULT_TARGET_YEAR};
use crate::preprocess::{preprocess_panel_set, ProcessedPanel, ScalerParams, DEFAULT_KNN_K};

pub const MANIFEST_FORMAT: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("stage {stage}: {message}")]
    Stage { stage: &'static str, message: String },
}

impl PipelineError {
    fn stage(stage: Stage, message: impl ToString) -> Self {
        PipelineError::Stage {
            stage: stage.name(),
            message: message.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Preprocess,
    Cluster,
    Cvi,
    Lvi,
    Importance,
    Shap,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Ingest,
        Stage::Preprocess,
        Stage::Cluster,
        Stage::Cvi,
        Stage::Lvi,
        Stage::Importance,
        Stage::Shap,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Preprocess => "preprocess",
            Stage::Cluster => "cluster",
            Stage::Cvi => "cvi",
            Stage::Lvi => "lvi",
            Stage::Importance => "importance",
            Stage::Shap => "shap",
            Stage::Report => "report",
        }
    }

    pub fn parse(name: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|s| s.name() == name)
    }

    pub fn deps(self) -> &'static [Stage] {
        match self {
            Stage::Ingest => &[],
            Stage::Preprocess => &[Stage::Ingest],
            Stage::Cluster => &[Stage::Preprocess],
            Stage::Cvi => &[Stage::Preprocess],
            Stage::Lvi => &[Stage::Cvi, Stage::Cluster],
            Stage::Importance => &[Stage::Cvi],
            Stage::Shap => &[Stage::Importance, Stage::Cluster],
            Stage::Report => &[Stage::Lvi, Stage::Shap],
        }
    }

    /// Whether the stage draws random numbers and therefore needs a seed.
    pub fn stochastic(self) -> bool {
        matches!(self, Stage::Lvi | Stage::Importance | Stage::Shap)
    }

    pub fn outputs(self, years: &[Year]) -> Vec<String> {
        let per_year = |prefix: &str, ext: &str| -> Vec<String> {
            years.iter().map(|y| format!("{prefix}_{y}.{ext}")).collect()
        };
        let fixed = |names: &[&str]| names.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        match self {
            Stage::Ingest => [per_year("panel", "csv"), fixed(&["catalog.json", "boundaries.geojson", "ingest.json"])].concat(),
            Stage::Preprocess => [
                per_year("processed", "csv"),
                per_year("provenance", "csv"),
                fixed(&["scaler.json"]),
            ]
            .concat(),
            Stage::Cluster => fixed(&["clusters.json", "assignments.csv", "silhouette.json", "radar.json"]),
            Stage::Cvi => [
                per_year("cvi", "json"),
                fixed(&["cvi.csv", "choropleth.geojson", "histogram.json"]),
            ]
            .concat(),
            Stage::Lvi => fixed(&["lvi.json"]),
            Stage::Importance => fixed(&["importance.json", "forest.json"]),
            Stage::Shap => fixed(&["shap_global.json", "shap_clusters.json"]),
            Stage::Report => fixed(&["bundle.json", "report.html"]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputPaths {
    pub catalog: PathBuf,
    pub panels: BTreeMap<Year, PathBuf>,
    pub geojson: PathBuf,
    pub addresses: Option<PathBuf>,
    /// Reference sector labels, used to pick initial centroids when none are configured.
    pub labels: Option<PathBuf>,
}

impl InputPaths {
    /// The layout written by the synthetic generator; optional files are
    /// only referenced when present.
    pub fn from_dir(dir: &Path) -> Self {
        let optional = |name: &str| Some(dir.join(name)).filter(|p| p.exists());
        InputPaths {
            catalog: dir.join("catalog.json"),
            panels: CENSUS_YEARS
                .iter()
                .map(|&y| (y, dir.join(format!("panel_{y}.csv"))))
                .collect(),
            geojson: dir.join("boundaries.geojson"),
            addresses: optional("addresses.json"),
            labels: optional("labels.csv"),
        }
    }

    fn all(&self) -> Vec<&Path> {
        let mut out = vec![self.catalog.as_path()];
        out.extend(self.panels.values().map(PathBuf::as_path));
        out.push(&self.geojson);
        out.extend(self.addresses.as_deref());
        out.extend(self.labels.as_deref());
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSettings {
    pub init_da_ids: Option<Vec<String>>,
    pub sector_names: Vec<String>,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for ClusterSettings {
    fn default() -> Self {
        let p = KMeansParams::default();
        Self {
            init_da_ids: None,
            sector_names: DEFAULT_SECTOR_NAMES.map(String::from).to_vec(),
            max_iter: p.max_iter,
            tol: p.tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub inputs: InputPaths,
    pub knn_k: usize,
    /// Seeds inside these are replaced by the per-stage seed.
    pub forest: ForestParams,
    pub boost: BoostParams,
    pub cluster: ClusterSettings,
    pub target_year: Year,
}

impl RunConfig {
    pub fn new(inputs: InputPaths, seed: Option<u64>) -> Self {
        Self {
            seed,
            inputs,
            knn_k: DEFAULT_KNN_K,
            forest: ForestParams::default(),
            boost: BoostParams::default(),
            cluster: ClusterSettings::default(),
            target_year: DEFAULT_TARGET_YEAR,
        }
    }

    pub fn years(&self) -> Vec<Year> {
        self.inputs.panels.keys().copied().collect()
    }

    pub fn stage_seed(&self, stage: Stage) -> Result<u64, PipelineError> {
        let seed = self
            .seed
            .ok_or_else(|| PipelineError::Config(format!("seed is required for stage {}", stage.name())))?;
        Ok(derive_seed(seed, stage.name()))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.inputs.panels.is_empty() {
            return Err(PipelineError::Config("no input panels configured".into()));
        }
        if self.knn_k == 0 {
            return Err(PipelineError::Config("knn k must be at least 1".into()));
        }
        if let Some(&last) = self.inputs.panels.keys().last() {
            if self.target_year <= last {
                return Err(PipelineError::Config(format!(
                    "target year {} must be after {last}",
                    self.target_year
                )));
            }
        }
        if self.cluster.sector_names.len() < 2 {
            return Err(PipelineError::Config("at least two sectors are required".into()));
        }
        if let Some(ids) = &self.cluster.init_da_ids {
            if ids.len() != self.cluster.sector_names.len() {
                return Err(PipelineError::Config(format!(
                    "{} initial DAs for {} sectors",
                    ids.len(),
                    self.cluster.sector_names.len()
                )));
            }
        }
        Ok(())
    }
}

/// `hash(base seed, stage name)`: the first 8 bytes of SHA-256, little endian.
pub fn derive_seed(seed: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stage.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub engine_version: String,
    pub seed: Option<u64>,
    pub stage_seeds: BTreeMap<String, u64>,
    pub settings: serde_json::Value,
    /// Input file name to content hash.
    pub inputs: BTreeMap<String, String>,
    /// Artifact file name to content hash.
    pub artifacts: BTreeMap<String, String>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }
}

/// Runs stages inside one output directory.
pub struct Pipeline<'a> {
    config: &'a RunConfig,
    out: PathBuf,
}

impl<'a> Pipeline<'a> {
    pub fn new(config: &'a RunConfig, out: impl Into<PathBuf>) -> Self {
        Self {
            config,
            out: out.into(),
        }
    }

    pub fn out(&self) -> &Path {
        &self.out
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn read(&self, stage: Stage, name: &str) -> Result<String, PipelineError> {
        let path = self.path(name);
        fs::read_to_string(&path).map_err(|e| PipelineError::stage(stage, format!("{}: {e}", path.display())))
    }

    fn read_json<T: serde::de::DeserializeOwned>(&self, stage: Stage, name: &str) -> Result<T, PipelineError> {
        serde_json::from_str(&self.read(stage, name)?)
            .map_err(|e| PipelineError::stage(stage, format!("{name}: {e}")))
    }

    fn write(&self, stage: Stage, name: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        let path = self.path(name);
        fs::write(&path, bytes).map_err(|e| PipelineError::stage(stage, format!("{}: {e}", path.display())))
    }

    fn write_json<T: Serialize>(&self, stage: Stage, name: &str, value: &T) -> Result<(), PipelineError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::stage(stage, e))? + "\n";
        self.write(stage, name, text.as_bytes())
    }

    pub fn is_complete(&self, stage: Stage) -> bool {
        stage
            .outputs(&self.config.years())
            .iter()
            .all(|n| self.path(n).exists())
    }

    /// Runs `stage`, first producing any upstream artifacts that are missing.
    pub fn run_stage(&self, stage: Stage) -> Result<(), PipelineError> {
        for &dep in stage.deps() {
            if !self.is_complete(dep) {
                self.run_stage(dep)?;
            }
        }
        self.execute(stage)
    }

    pub fn execute(&self, stage: Stage) -> Result<(), PipelineError> {
        self.config.validate()?;
        if stage.stochastic() {
            self.config.stage_seed(stage)?;
        }
        fs::create_dir_all(&self.out)
            .map_err(|e| PipelineError::stage(stage, format!("{}: {e}", self.out.display())))?;
        match stage {
            Stage::Ingest => self.ingest(),
            Stage::Preprocess => self.preprocess(),
            Stage::Cluster => self.cluster(),
            Stage::Cvi => self.cvi(),
            Stage::Lvi => self.lvi(),
            Stage::Importance => self.importance(),
            Stage::Shap => self.shap(),
            Stage::Report => self.report(),
        }
    }

    fn catalog(&self, stage: Stage) -> Result<IndicatorCatalog, PipelineError> {
        parse_catalog(&self.read(stage, "catalog.json")?).map_err(|e| PipelineError::stage(stage, e))
    }

    fn ingest(&self) -> Result<(), PipelineError> {
        let s = Stage::Ingest;
        let inputs = &self.config.inputs;
        for p in inputs.all() {
            if !p.exists() {
                return Err(PipelineError::stage(s, format!("input file not found: {}", p.display())));
            }
        }
        let read = |p: &Path| fs::read_to_string(p).map_err(|e| PipelineError::stage(s, format!("{}: {e}", p.display())));
        let catalog = parse_catalog(&read(&inputs.catalog)?).map_err(|e| PipelineError::stage(s, e))?;
        let panels = inputs
            .panels
            .iter()
            .map(|(&y, p)| {
                load_panel(p, &catalog, y).map_err(|e| PipelineError::stage(s, format!("{}: {e}", p.display())))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let set = merge_panels(panels, &catalog).map_err(|e| PipelineError::stage(s, e))?;
        let geo = load_geojson(&inputs.geojson)
            .map_err(|e| PipelineError::stage(s, format!("{}: {e}", inputs.geojson.display())))?;

        let latest = set.panels.values().last().expect("validated non-empty");
        let mut report = json!({
            "catalog_fingerprint": catalog.fingerprint(),
            "years": set.years(),
            "das": set.da_ids().len(),
            "missing_cells": set.panels.iter().map(|(y, p)| (y.to_string(), p.missing_count())).collect::<BTreeMap<_, _>>(),
        });
        if let Some(path) = &inputs.addresses {
            let geocoder = FixtureGeocoder::load(path).map_err(|e| PipelineError::stage(s, e))?;
            let addresses: Vec<&str> = geocoder.addresses().collect();
            let assigned = assign_addresses(&addresses, &geocoder, &geo).map_err(|e| PipelineError::stage(s, e))?;
            let mismatches: Vec<serde_json::Value> = match catalog.position("businesses") {
                Some(col) => latest
                    .da_ids
                    .iter()
                    .enumerate()
                    .filter_map(|(r, id)| {
                        let panel = latest.get(r, col)?;
                        let geocoded = assigned.counts.get(id).copied().unwrap_or(0);
                        (panel != geocoded as f64)
                            .then(|| json!({"da_id": id, "panel": panel, "geocoded": geocoded}))
                    })
                    .collect(),
                None => Vec::new(),
            };
            report["addresses"] = json!({
                "year": latest.year,
                "counts": assigned.counts,
                "rejects": assigned.rejects,
                "business_mismatches": mismatches,
            });
        }

        self.write(s, "catalog.json", catalog.to_json().as_bytes())?;
        for p in set.panels.values() {
            let mut buf = Vec::new();
            write_panel(p, &catalog, &mut buf).map_err(|e| PipelineError::stage(s, e))?;
            self.write(s, &format!("panel_{}.csv", p.year), &buf)?;
        }
        self.write(s, "boundaries.geojson", write_geojson(&geo).as_bytes())?;
        if let Some(labels) = &inputs.labels {
            self.write(s, "labels.csv", read(labels)?.as_bytes())?;
        }
        self.write_json(s, "ingest.json", &report)
    }

    fn preprocess(&self) -> Result<(), PipelineError> {
        let s = Stage::Preprocess;
        let catalog = self.catalog(s)?;
        let panels = self
            .config
            .years()
            .into_iter()
            .map(|y| {
                parse_panel(self.read(s, &format!("panel_{y}.csv"))?.as_bytes(), &catalog, y)
                    .map_err(|e| PipelineError::stage(s, e))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let set = merge_panels(panels, &catalog).map_err(|e| PipelineError::stage(s, e))?;
        let processed = preprocess_panel_set(&set, self.config.knn_k).map_err(|e| PipelineError::stage(s, e))?;
        let mut scaler = Vec::new();
        for (y, p) in &processed {
            let mut values = Vec::new();
            p.write_csv(&catalog, &mut values).map_err(|e| PipelineError::stage(s, e))?;
            self.write(s, &format!("processed_{y}.csv"), &values)?;
            let mut prov = Vec::new();
            p.write_provenance_csv(&catalog, &mut prov).map_err(|e| PipelineError::stage(s, e))?;
            self.write(s, &format!("provenance_{y}.csv"), &prov)?;
            scaler = p.scaler_params.clone();
        }
        let ids: Vec<&str> = catalog.indicators().iter().map(|i| i.id.as_str()).collect();
        let table: Vec<serde_json::Value> = ids
            .iter()
            .zip(&scaler)
            .map(|(id, p)| json!({"id": id, "min": p.min, "max": p.max}))
            .collect();
        self.write_json(s, "scaler.json", &table)
    }

    fn processed(&self, stage: Stage, catalog: &IndicatorCatalog, year: Year) -> Result<ProcessedPanel, PipelineError> {
        #[derive(Deserialize)]
        struct Row {
            min: f64,
            max: f64,
        }
        let rows: Vec<Row> = self.read_json(stage, "scaler.json")?;
        let params = rows.into_iter().map(|r| ScalerParams { min: r.min, max: r.max }).collect();
        ProcessedPanel::read_csv(
            self.read(stage, &format!("processed_{year}.csv"))?.as_bytes(),
            self.read(stage, &format!("provenance_{year}.csv"))?.as_bytes(),
            catalog,
            year,
            params,
        )
        .map_err(|e| PipelineError::stage(stage, e))
    }

    fn latest_year(&self) -> Year {
        *self.config.years().last().expect("validated non-empty")
    }

    fn cluster(&self) -> Result<(), PipelineError> {
        let s = Stage::Cluster;
        let catalog = self.catalog(s)?;
        let panel = self.processed(s, &catalog, self.latest_year())?;
        let cols = catalog.cluster_features();
        let points = panel.select_columns(&cols);
        let feature_ids: Vec<String> = cols.iter().map(|&c| catalog.indicators()[c].id.clone()).collect();
        let names = &self.config.cluster.sector_names;
        let init_ids = match &self.config.cluster.init_da_ids {
            Some(ids) => ids.clone(),
            None => {
                if !self.path("labels.csv").exists() {
                    return Err(PipelineError::Config(
                        "cluster.init_da_ids is not set and no labels file was given".into(),
                    ));
                }
                let labels = self.read(s, "labels.csv")?;
                let by_id: BTreeMap<&str, &str> = labels
                    .lines()
                    .skip(1)
                    .filter_map(|l| l.split_once(','))
                    .collect();
                let sector_index = panel
                    .da_ids
                    .iter()
                    .map(|id| match by_id.get(id.as_str()) {
                        Some(name) => names
                            .iter()
                            .position(|n| n == name)
                            .ok_or_else(|| PipelineError::stage(s, format!("label {name:?} is not a configured sector"))),
                        None => Ok(usize::MAX),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                medoids(&points, &sector_index, names.len())
                    .map_err(|e| PipelineError::stage(s, e))?
                    .into_iter()
                    .map(|i| panel.da_ids[i].clone())
                    .collect()
            }
        };
        let params = KMeansParams {
            max_iter: self.config.cluster.max_iter,
            tol: self.config.cluster.tol,
        };
        let out = cluster_points(&panel.da_ids, points, &feature_ids, &init_ids, names, &params)
            .map_err(|e| PipelineError::stage(s, e))?;
        self.write_json(s, "clusters.json", &out)?;
        self.write(s, "assignments.csv", out.assignments_csv().as_bytes())?;
        let silhouette = json!({
            "mean": out.silhouette.mean,
            "values": out.da_ids.iter().zip(&out.silhouette.values).map(|(id, v)| json!({"da_id": id, "sector": names[out.sector_of(id).expect("clustered")], "s": v})).collect::<Vec<_>>(),
            "per_cluster": names.iter().zip(&out.silhouette.per_cluster).map(|(n, v)| json!({"sector": n, "values": v})).collect::<Vec<_>>(),
            "negative": out.negative_das(),
        });
        self.write_json(s, "silhouette.json", &silhouette)?;
        self.write_json(s, "radar.json", &out.radar)
    }

    fn cvi(&self) -> Result<(), PipelineError> {
        let s = Stage::Cvi;
        let catalog = self.catalog(s)?;
        let geo = parse_geojson(&self.read(s, "boundaries.geojson")?).map_err(|e| PipelineError::stage(s, e))?;
        let latest = self.latest_year();
        for y in self.config.years() {
            let panel = self.processed(s, &catalog, y)?;
            let result = compute_cvi(&panel, &catalog).map_err(|e| PipelineError::stage(s, e))?;
            self.write_json(s, &format!("cvi_{y}.json"), &result)?;
            if y == latest {
                let mut csv = Vec::new();
                result.write_csv(&mut csv).map_err(|e| PipelineError::stage(s, e))?;
                self.write(s, "cvi.csv", &csv)?;
                let doc = export_choropleth(&result, &geo).map_err(|e| PipelineError::stage(s, e))?;
                self.write_json(s, "choropleth.geojson", &doc)?;
                let mut hist = serde_json::to_value(&result.histogram).map_err(|e| PipelineError::stage(s, e))?;
                hist["year"] = json!(y);
                hist["colors"] = json!(crate::cvi::COLOR_RAMP);
                self.write_json(s, "histogram.json", &hist)?;
            }
        }
        Ok(())
    }

    fn cvi_results(&self, stage: Stage) -> Result<BTreeMap<Year, CviResult>, PipelineError> {
        self.config
            .years()
            .into_iter()
            .map(|y| Ok((y, self.read_json(stage, &format!("cvi_{y}.json"))?)))
            .collect()
    }

    fn lvi(&self) -> Result<(), PipelineError> {
        let s = Stage::Lvi;
        let seed = self.config.stage_seed(s)?;
        let cvis = self.cvi_results(s)?;
        let clusters: ClusterOutput = self.read_json(s, "clusters.json")?;
        let series = compute_lvi(&cvis, &clusters.da_ids, &clusters.model.assignments, &clusters.sector_names)
            .map_err(|e| PipelineError::stage(s, e))?;
        let forecasts = series
            .iter()
            .map(|line| forecast(line, self.config.target_year, &ModelKind::ALL, seed))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| PipelineError::stage(s, e))?;
        let checks = reference_checks().map_err(|e| PipelineError::stage(s, e))?;
        let doc = json!({
            "target_year": self.config.target_year,
            "series": series,
            "forecasts": forecasts,
            "payload": lvi_timeseries_payload(&series, &forecasts),
            "reference_checks": checks,
        });
        self.write_json(s, "lvi.json", &doc)
    }

    fn latest_cvi(&self, stage: Stage) -> Result<CviResult, PipelineError> {
        self.read_json(stage, &format!("cvi_{}.json", self.latest_year()))
    }

    fn importance(&self) -> Result<(), PipelineError> {
        let s = Stage::Importance;
        let seed = self.config.stage_seed(s)?;
        let cvi = self.latest_cvi(s)?;
        let (x, y) = cvi_design(&cvi);
        let forest = fit_forest(&x, &y, &ForestParams { seed, ..self.config.forest.clone() })
            .map_err(|e| PipelineError::stage(s, e))?;
        let boosted = fit_boosted(&x, &y, &BoostParams { seed, ..self.config.boost.clone() })
            .map_err(|e| PipelineError::stage(s, e))?;
        self.write_json(s, "importance.json", &importance_report(&cvi.indicator_ids, &forest, &boosted))?;
        let dump = serde_json::to_string(&forest).map_err(|e| PipelineError::stage(s, e))? + "\n";
        self.write(s, "forest.json", dump.as_bytes())
    }

    fn shap(&self) -> Result<(), PipelineError> {
        let s = Stage::Shap;
        let seed = self.config.stage_seed(s)?;
        let cvi = self.latest_cvi(s)?;
        let forest: TreeEnsemble = self.read_json(s, "forest.json")?;
        let (x, _) = cvi_design(&cvi);
        let global = global_shap(&forest, &x, &cvi.indicator_ids).map_err(|e| PipelineError::stage(s, e))?;
        self.write_json(s, "shap_global.json", &global)?;
        let clusters: ClusterOutput = self.read_json(s, "clusters.json")?;
        let explained = explain_clusters(
            &clusters.points,
            &clusters.model,
            &clusters.feature_ids,
            &clusters.sector_names,
            &surrogate_params(seed, clusters.points.len()),
        )
        .map_err(|e| PipelineError::stage(s, e))?;
        self.write_json(s, "shap_clusters.json", &explained)
    }

    /// Assembles the report bundle from whatever artifacts exist.
    pub fn bundle(&self) -> Result<Bundle, PipelineError> {
        let s = Stage::Report;
        let catalog = self.catalog(s)?;
        let opt = |name: &str| self.path(name).exists();
        let lvi: Option<serde_json::Value> = if opt("lvi.json") { Some(self.read_json(s, "lvi.json")?) } else { None };
        fn from<T: serde::de::DeserializeOwned>(v: &serde_json::Value, key: &str) -> Result<T, PipelineError> {
            serde_json::from_value(v[key].clone()).map_err(|e| PipelineError::stage(Stage::Report, e))
        }
        let checks = reference_checks().map_err(|e| PipelineError::stage(s, e))?;
        let latest = format!("cvi_{}.json", self.latest_year());
        Ok(Bundle {
            version: BUNDLE_VERSION,
            catalog_fingerprint: catalog.fingerprint().to_string(),
            feature_labels: catalog.indicators().iter().map(|i| (i.id.clone(), i.label.clone())).collect(),
            cvi: if opt(&latest) { Some(self.read_json(s, &latest)?) } else { None },
            cluster: if opt("clusters.json") { Some(self.read_json(s, "clusters.json")?) } else { None },
            lvi_series: lvi.as_ref().map(|v| from(v, "series")).transpose()?,
            lvi_forecast: lvi.as_ref().map(|v| from(v, "forecasts")).transpose()?,
            importance: if opt("importance.json") { Some(self.read_json(s, "importance.json")?) } else { None },
            shap_global: if opt("shap_global.json") { Some(self.read_json(s, "shap_global.json")?) } else { None },
            cluster_shap: if opt("shap_clusters.json") { Some(self.read_json(s, "shap_clusters.json")?) } else { None },
            notices: standard_notices(&checks),
            reference_checks: checks,
        })
    }

    fn report(&self) -> Result<(), PipelineError> {
        let s = Stage::Report;
        let bundle = self.bundle()?;
        let html = generate_report(&bundle).map_err(|e| PipelineError::stage(s, e))?;
        self.write(s, "bundle.json", (bundle.to_json() + "\n").as_bytes())?;
        self.write(s, "report.html", html.as_bytes())
    }

    /// Hashes every artifact in the directory and the configured inputs.
    pub fn manifest(&self) -> Result<Manifest, PipelineError> {
        let s = Stage::Report;
        let mut artifacts = BTreeMap::new();
        let entries = fs::read_dir(&self.out).map_err(|e| PipelineError::stage(s, format!("{}: {e}", self.out.display())))?;
        for entry in entries {
            let entry = entry.map_err(|e| PipelineError::stage(s, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name == MANIFEST_FILE || !entry.path().is_file() {
                continue;
            }
            let bytes = fs::read(entry.path()).map_err(|e| PipelineError::stage(s, e))?;
            artifacts.insert(name, sha256_hex(&bytes));
        }
        let mut inputs = BTreeMap::new();
        for p in self.config.inputs.all() {
            if let Ok(bytes) = fs::read(p) {
                let name = p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned());
                inputs.insert(name, sha256_hex(&bytes));
            }
        }
        let c = self.config;
        let stage_seeds = match c.seed {
            Some(seed) => Stage::ALL
                .iter()
                .filter(|s| s.stochastic())
                .map(|s| (s.name().to_string(), derive_seed(seed, s.name())))
                .collect(),
            None => BTreeMap::new(),
        };
        Ok(Manifest {
            format: MANIFEST_FORMAT,
            engine_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: c.seed,
            stage_seeds,
            settings: json!({
                "years": c.years(),
                "knn_k": c.knn_k,
                "forest": {"n_trees": c.forest.n_trees, "bootstrap": c.forest.bootstrap, "max_depth": c.forest.max_depth, "min_leaf": c.forest.min_leaf, "feature_subset_size": c.forest.feature_subset_size},
                "boost": {"n_rounds": c.boost.n_rounds, "max_depth": c.boost.max_depth, "learning_rate": c.boost.learning_rate},
                "cluster": {"init_da_ids": c.cluster.init_da_ids, "sector_names": c.cluster.sector_names, "max_iter": c.cluster.max_iter, "tol": c.cluster.tol},
                "target_year": c.target_year,
            }),
            inputs,
            artifacts,
        })
    }

    pub fn write_manifest(&self) -> Result<Manifest, PipelineError> {
        let m = self.manifest()?;
        self.write(Stage::Report, MANIFEST_FILE, m.to_json().as_bytes())?;
        Ok(m)
    }
}

/// Runs every stage into a sibling staging directory and moves it into
/// place only on success. An existing `out` is replaced only when it is
/// empty or holds a previous snapshot.
pub fn run_all(config: &RunConfig, out: &Path) -> Result<Manifest, PipelineError> {
    config.validate()?;
    config.stage_seed(Stage::Lvi)?;
    let io = |e: std::io::Error, p: &Path| PipelineError::Stage {
        stage: "run",
        message: format!("{}: {e}", p.display()),
    };
    if out.exists() {
        let empty = fs::read_dir(out).map_err(|e| io(e, out))?.next().is_none();
        if !empty && !out.join(MANIFEST_FILE).exists() {
            return Err(PipelineError::Config(format!(
                "{} exists and is not a snapshot directory",
                out.display()
            )));
        }
    }
    let name = out
        .file_name()
        .map_or_else(|| "snapshot".to_string(), |n| n.to_string_lossy().into_owned());
    let staging = out.with_file_name(format!(".{name}.partial"));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| io(e, &staging))?;
    }
    let pipeline = Pipeline::new(config, &staging);
    let result = Stage::ALL
        .iter()
        .try_for_each(|&s| pipeline.execute(s))
        .and_then(|_| pipeline.write_manifest());
    match result {
        Ok(manifest) => {
            if out.exists() {
                fs::remove_dir_all(out).map_err(|e| io(e, out))?;
            }
            fs::rename(&staging, out).map_err(|e| io(e, out))?;
            Ok(manifest)
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&staging);
            Err(e)
        }
    }
}

/// Runs one stage in place (plus any missing upstream stages) and refreshes
/// the manifest.
pub fn run_stage(config: &RunConfig, out: &Path, stage: Stage) -> Result<Manifest, PipelineError> {
    let pipeline = Pipeline::new(config, out);
    pipeline.run_stage(stage)?;
    pipeline.write_manifest()
}
