//! Command-line front end: synthetic data generation, pipeline stages, full
//! runs, one-off CVI and report rendering, and the HTTP service.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use vitality::cvi::{compute_cvi, export_choropleth};
use vitality::data::{load_panel, merge_panels, parse_catalog, Year, CENSUS_YEARS};
use vitality::explain::{generate_report, Bundle};
use vitality::geo::load_geojson;
use vitality::pipeline::{run_all, run_stage, InputPaths, PipelineError, RunConfig, Stage};
use vitality::preprocess::preprocess_panel_set;
use vitality::synth::{generate, SynthConfig};
use vitality_service::{serve, ServeOptions};

pub const EXIT_OK: u8 = 0;
pub const EXIT_STAGE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "vitality", version, about = "Urban vitality indexes, sectors, forecasts and explanations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic city with planted sectors.
    Synth(SynthArgs),
    /// Run the whole pipeline into a snapshot directory, or one stage with --stage.
    Run(RunArgs),
    /// Validate and merge input panels, boundaries and geocoded addresses.
    Ingest(RunArgs),
    /// Scale, invert cost indicators and impute missing cells.
    Preprocess(RunArgs),
    /// Fixed-centroid k-means over the cluster features.
    Cluster(RunArgs),
    /// Per-area index, histogram and choropleth; --panel computes it for one raw panel.
    Cvi(CviArgs),
    /// Per-sector series and forecasts.
    Lvi(RunArgs),
    /// Forest and boosted importances.
    Importance(RunArgs),
    /// Global and per-sector TreeSHAP attributions.
    Shap(RunArgs),
    /// Build the HTML report; --bundle renders an existing bundle.
    Report(ReportArgs),
    /// Serve a snapshot over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Seed for every random draw (required).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory [default: ./synth].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of dissemination areas.
    #[arg(long)]
    pub das: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// Pipeline seed (required).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Snapshot directory [default: ./snapshot].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory holding inputs in the synthetic layout.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Indicator catalog JSON.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Raw panel as YEAR=PATH; repeatable.
    #[arg(long = "panels", value_name = "YEAR=PATH")]
    pub panels: Vec<String>,
    /// Area boundaries GeoJSON.
    #[arg(long)]
    pub geojson: Option<PathBuf>,
    /// Business address fixture JSON.
    #[arg(long)]
    pub addresses: Option<PathBuf>,
    /// Area-to-sector labels CSV used to pick initial centroids.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Neighbours used for imputation [default: 5].
    #[arg(long)]
    pub knn_k: Option<usize>,
    /// Trees in the importance forest [default: 500].
    #[arg(long)]
    pub n_trees: Option<usize>,
    /// Initial centroid DA ids, comma separated, one per sector.
    #[arg(long, value_delimiter = ',')]
    pub init_das: Option<Vec<String>>,
    /// Forecast year [default: 2026].
    #[arg(long)]
    pub target_year: Option<Year>,
    /// Only run this stage (plus any upstream stage whose outputs are missing).
    #[arg(long)]
    pub stage: Option<String>,
}

#[derive(Debug, Args)]
pub struct CviArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Raw panel CSV to score on its own.
    #[arg(long)]
    pub panel: Option<PathBuf>,
    /// Census year of --panel.
    #[arg(long)]
    pub year: Option<Year>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Render this bundle.json instead of a run directory.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Snapshot directory [default: ./snapshot].
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
    /// Listen address [default: 127.0.0.1:8080].
    #[arg(long)]
    pub bind: Option<String>,
    /// Allowed CORS origin.
    #[arg(long)]
    pub cors_origin: Option<String>,
    /// Static files served under `/`.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

/// TOML configuration file. Relative paths resolve against the file's
/// directory; command-line flags override every key.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub knn_k: Option<usize>,
    pub target_year: Option<Year>,
    #[serde(default)]
    pub inputs: FileInputs,
    #[serde(default)]
    pub forest: FileForest,
    #[serde(default)]
    pub boost: FileBoost,
    #[serde(default)]
    pub cluster: FileCluster,
    #[serde(default)]
    pub synth: FileSynth,
    #[serde(default)]
    pub serve: FileServe,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileInputs {
    pub catalog: Option<PathBuf>,
    #[serde(default)]
    pub panels: BTreeMap<String, PathBuf>,
    pub geojson: Option<PathBuf>,
    pub addresses: Option<PathBuf>,
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileForest {
    pub n_trees: Option<usize>,
    pub bootstrap: Option<bool>,
    pub max_depth: Option<usize>,
    pub min_leaf: Option<usize>,
    pub feature_subset_size: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileBoost {
    pub n_rounds: Option<usize>,
    pub max_depth: Option<usize>,
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileCluster {
    pub init_da_ids: Option<Vec<String>>,
    pub sector_names: Option<Vec<String>>,
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSynth {
    pub n_das: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileServe {
    pub snapshot: Option<PathBuf>,
    pub bind: Option<String>,
    pub cors_origin: Option<String>,
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Stage(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Stage(_) => EXIT_STAGE,
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(m) => Failure::Config(m),
            e @ PipelineError::Stage { .. } => Failure::Stage(e.to_string()),
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Stage(m) => write!(f, "{m}"),
        }
    }
}

pub fn load_config(path: Option<&Path>) -> Result<FileConfig, Failure> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let mut cfg: FileConfig = toml::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let rebase = |p: &mut Option<PathBuf>| {
        if let Some(v) = p {
            if v.is_relative() {
                *v = base.join(&*v);
            }
        }
    };
    rebase(&mut cfg.out);
    rebase(&mut cfg.input);
    rebase(&mut cfg.inputs.catalog);
    rebase(&mut cfg.inputs.geojson);
    rebase(&mut cfg.inputs.addresses);
    rebase(&mut cfg.inputs.labels);
    rebase(&mut cfg.serve.snapshot);
    rebase(&mut cfg.serve.static_dir);
    for p in cfg.inputs.panels.values_mut() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(cfg)
}

fn parse_year(s: &str) -> Result<Year, Failure> {
    s.trim()
        .parse()
        .map_err(|_| Failure::Config(format!("invalid census year {s:?}")))
}

/// Merges the config file and flags into a pipeline configuration and
/// output directory.
pub fn resolve_run(args: &RunArgs) -> Result<(RunConfig, PathBuf), Failure> {
    let file = load_config(args.config.as_deref())?;
    let input = args.input.clone().or(file.input.clone()).unwrap_or_else(|| PathBuf::from("synth"));
    let mut inputs = InputPaths::from_dir(&input);
    if !file.inputs.panels.is_empty() {
        inputs.panels = file
            .inputs
            .panels
            .iter()
            .map(|(y, p)| Ok((parse_year(y)?, p.clone())))
            .collect::<Result<_, Failure>>()?;
    }
    if !args.panels.is_empty() {
        inputs.panels = args
            .panels
            .iter()
            .map(|s| {
                let (y, p) = s
                    .split_once('=')
                    .ok_or_else(|| Failure::Config(format!("--panels expects YEAR=PATH, got {s:?}")))?;
                Ok((parse_year(y)?, PathBuf::from(p)))
            })
            .collect::<Result<_, Failure>>()?;
    }
    if let Some(p) = args.catalog.clone().or(file.inputs.catalog) {
        inputs.catalog = p;
    }
    if let Some(p) = args.geojson.clone().or(file.inputs.geojson) {
        inputs.geojson = p;
    }
    if let Some(p) = args.addresses.clone().or(file.inputs.addresses) {
        inputs.addresses = Some(p);
    }
    if let Some(p) = args.labels.clone().or(file.inputs.labels) {
        inputs.labels = Some(p);
    }

    let mut config = RunConfig::new(inputs, args.seed.or(file.seed));
    if let Some(k) = args.knn_k.or(file.knn_k) {
        config.knn_k = k;
    }
    if let Some(y) = args.target_year.or(file.target_year) {
        config.target_year = y;
    }
    let f = &mut config.forest;
    f.n_trees = args.n_trees.or(file.forest.n_trees).unwrap_or(f.n_trees);
    f.bootstrap = file.forest.bootstrap.unwrap_or(f.bootstrap);
    f.max_depth = file.forest.max_depth.or(f.max_depth);
    f.min_leaf = file.forest.min_leaf.unwrap_or(f.min_leaf);
    f.feature_subset_size = file.forest.feature_subset_size.or(f.feature_subset_size);
    let b = &mut config.boost;
    b.n_rounds = file.boost.n_rounds.unwrap_or(b.n_rounds);
    b.max_depth = file.boost.max_depth.unwrap_or(b.max_depth);
    b.learning_rate = file.boost.learning_rate.unwrap_or(b.learning_rate);
    let c = &mut config.cluster;
    c.init_da_ids = args.init_das.clone().or(file.cluster.init_da_ids).or(c.init_da_ids.take());
    if let Some(names) = file.cluster.sector_names {
        c.sector_names = names;
    }
    c.max_iter = file.cluster.max_iter.unwrap_or(c.max_iter);
    c.tol = file.cluster.tol.unwrap_or(c.tol);
    config.validate()?;

    let out = args.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("snapshot"));
    Ok((config, out))
}

fn stage_named(name: &str) -> Result<Stage, Failure> {
    Stage::parse(name).ok_or_else(|| {
        let known: Vec<&str> = Stage::ALL.iter().map(|s| s.name()).collect();
        Failure::Config(format!("unknown stage {name:?}; expected one of {}", known.join(", ")))
    })
}

fn run_pipeline(args: &RunArgs, fixed: Option<Stage>) -> Result<(), Failure> {
    let (config, out) = resolve_run(args)?;
    let stage = match (&args.stage, fixed) {
        (Some(name), _) => Some(stage_named(name)?),
        (None, s) => s,
    };
    let manifest = match stage {
        Some(s) => run_stage(&config, &out, s)?,
        None => run_all(&config, &out)?,
    };
    eprintln!("{}: {} artifacts", out.display(), manifest.artifacts.len());
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<(), Failure> {
    let file = load_config(args.config.as_deref())?;
    let seed = args
        .seed
        .or(file.seed)
        .ok_or_else(|| Failure::Config("synth needs --seed".into()))?;
    let mut cfg = SynthConfig::with_seed(seed);
    if let Some(n) = args.das.or(file.synth.n_das) {
        cfg.n_das = n;
    }
    let out = args.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("synth"));
    let city = generate(&cfg).map_err(|e| Failure::Config(e.to_string()))?;
    city.write(&out).map_err(|e| Failure::Stage(format!("synth: {e}")))?;
    eprintln!("{}: {} areas", out.display(), cfg.n_das);
    Ok(())
}

/// Scores one raw panel on its own: preprocessing, CVI table and choropleth.
fn cvi_single(args: &CviArgs, panel: &Path) -> Result<(), Failure> {
    let (config, out) = resolve_run(&args.run)?;
    let stage = |e: &dyn std::fmt::Display| Failure::Stage(format!("stage cvi: {e}"));
    let year = args.year.unwrap_or(CENSUS_YEARS[CENSUS_YEARS.len() - 1]);
    let catalog_path = &config.inputs.catalog;
    let text = fs::read_to_string(catalog_path).map_err(|e| stage(&format!("{}: {e}", catalog_path.display())))?;
    let catalog = parse_catalog(&text).map_err(|e| stage(&e))?;
    let raw = load_panel(panel, &catalog, year).map_err(|e| stage(&format!("{}: {e}", panel.display())))?;
    let set = merge_panels(vec![raw], &catalog).map_err(|e| stage(&e))?;
    let processed = preprocess_panel_set(&set, config.knn_k).map_err(|e| stage(&e))?;
    let result = compute_cvi(&processed[&year], &catalog).map_err(|e| stage(&e))?;
    let geo = load_geojson(&config.inputs.geojson)
        .map_err(|e| stage(&format!("{}: {e}", config.inputs.geojson.display())))?;
    let doc = export_choropleth(&result, &geo).map_err(|e| stage(&e))?;
    fs::create_dir_all(&out).map_err(|e| stage(&format!("{}: {e}", out.display())))?;
    let mut csv = Vec::new();
    result.write_csv(&mut csv).map_err(|e| stage(&e))?;
    fs::write(out.join("cvi.csv"), csv).map_err(|e| stage(&e))?;
    let geojson = serde_json::to_string_pretty(&doc).map_err(|e| stage(&e))? + "\n";
    fs::write(out.join("choropleth.geojson"), geojson).map_err(|e| stage(&e))?;
    eprintln!("{}: cvi.csv, choropleth.geojson", out.display());
    Ok(())
}

fn report_from_bundle(bundle: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let stage = |e: &dyn std::fmt::Display| Failure::Stage(format!("stage report: {e}"));
    let text = fs::read_to_string(bundle).map_err(|e| stage(&format!("{}: {e}", bundle.display())))?;
    let bundle = Bundle::from_json(&text).map_err(|e| stage(&e))?;
    let html = generate_report(&bundle).map_err(|e| stage(&e))?;
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("report.html"));
    fs::write(&out, html).map_err(|e| stage(&format!("{}: {e}", out.display())))?;
    eprintln!("{}", out.display());
    Ok(())
}

fn serve_cmd(args: &ServeArgs) -> Result<(), Failure> {
    let file = load_config(args.config.as_deref())?;
    let snapshot = args
        .snapshot
        .clone()
        .or(file.serve.snapshot)
        .or(file.out)
        .unwrap_or_else(|| PathBuf::from("snapshot"));
    let bind = args.bind.clone().or(file.serve.bind).unwrap_or_else(|| "127.0.0.1:8080".into());
    let options = ServeOptions {
        cors_origin: args.cors_origin.clone().or(file.serve.cors_origin),
        static_dir: args.static_dir.clone().or(file.serve.static_dir),
    };
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Stage(format!("serve: {e}")))?;
    rt.block_on(serve(&snapshot, &bind, options))
        .map_err(|e| Failure::Stage(format!("serve: {e}")))
}

pub fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Run(a) => run_pipeline(&a, None),
        Command::Ingest(a) => run_pipeline(&a, Some(Stage::Ingest)),
        Command::Preprocess(a) => run_pipeline(&a, Some(Stage::Preprocess)),
        Command::Cluster(a) => run_pipeline(&a, Some(Stage::Cluster)),
        Command::Cvi(a) => match &a.panel {
            Some(panel) => cvi_single(&a, panel),
            None => run_pipeline(&a.run, Some(Stage::Cvi)),
        },
        Command::Lvi(a) => run_pipeline(&a, Some(Stage::Lvi)),
        Command::Importance(a) => run_pipeline(&a, Some(Stage::Importance)),
        Command::Shap(a) => run_pipeline(&a, Some(Stage::Shap)),
        Command::Report(a) => match &a.bundle {
            Some(bundle) => report_from_bundle(bundle, a.run.out.as_deref()),
            None => run_pipeline(&a.run, Some(Stage::Report)),
        },
        Command::Serve(a) => serve_cmd(&a),
    }
}

pub fn main_with(cli: Cli) -> ExitCode {
    match execute(cli) {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(f) => {
            eprintln!("vitality: {f}");
            ExitCode::from(f.code())
        }
    }
}
