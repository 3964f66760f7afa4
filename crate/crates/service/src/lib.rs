//! Read-only HTTP API over a pipeline snapshot directory.
//!
//! Every response body is computed once at load time. Handlers only pick a
//! precomputed byte buffer, so concurrent requests always see identical
//! bodies. All responses carry the snapshot etag, derived from the manifest
//! which itself hashes every artifact.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{Path as UrlPath, Request, State};
use axum::handler::HandlerWithoutStateExt;
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode, Uri};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use serde_json::{json, Value};
use thiserror::Error;
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;
use vitality::pipeline::{sha256_hex, Manifest, MANIFEST_FILE};

pub mod schemas;

pub const JSON: &str = "application/json";
pub const PROBLEM_JSON: &str = "application/problem+json";
pub const HTML: &str = "text/html; charset=utf-8";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("snapshot corrupt: {0}")]
    SnapshotCorrupt(String),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        source: std::io::Error,
    },
    #[error("invalid CORS origin {0:?}")]
    CorsOrigin(String),
    #[error("server: {0}")]
    Server(std::io::Error),
}

fn corrupt(msg: impl ToString) -> ServiceError {
    ServiceError::SnapshotCorrupt(msg.to_string())
}

/// Artifacts the service reads; each must be listed in the manifest.
pub const REQUIRED_ARTIFACTS: [&str; 11] = [
    "choropleth.geojson",
    "histogram.json",
    "clusters.json",
    "silhouette.json",
    "radar.json",
    "importance.json",
    "shap_global.json",
    "shap_clusters.json",
    "lvi.json",
    "bundle.json",
    "report.html",
];

/// Precomputed response bodies for one immutable snapshot.
#[derive(Debug)]
pub struct Snapshot {
    pub etag: String,
    pub manifest: Manifest,
    pub health: Bytes,
    pub das: Bytes,
    pub da: BTreeMap<String, Bytes>,
    pub histogram: Bytes,
    pub clusters: Bytes,
    pub importance: Bytes,
    pub shap_global: Bytes,
    pub shap_clusters: Bytes,
    pub lvi: Bytes,
    pub report: Bytes,
}

fn body(v: &Value) -> Bytes {
    Bytes::from(serde_json::to_vec(v).expect("json value serializes"))
}

impl Snapshot {
    /// Loads a snapshot directory and checks every artifact against the
    /// manifest hashes before building response bodies.
    pub fn load(dir: &Path) -> Result<Self, ServiceError> {
        let manifest_bytes =
            fs::read(dir.join(MANIFEST_FILE)).map_err(|e| corrupt(format!("{}: {e}", dir.join(MANIFEST_FILE).display())))?;
        let manifest: Manifest =
            serde_json::from_slice(&manifest_bytes).map_err(|e| corrupt(format!("{MANIFEST_FILE}: {e}")))?;
        let mut files: BTreeMap<&str, Vec<u8>> = BTreeMap::new();
        for (name, expected) in &manifest.artifacts {
            let bytes = fs::read(dir.join(name)).map_err(|e| corrupt(format!("{name}: {e}")))?;
            if &sha256_hex(&bytes) != expected {
                return Err(corrupt(format!("{name}: hash mismatch")));
            }
            files.insert(name.as_str(), bytes);
        }
        for name in REQUIRED_ARTIFACTS {
            if !files.contains_key(name) {
                return Err(corrupt(format!("{name}: not listed in manifest")));
            }
        }
        let parse = |name: &str| -> Result<Value, ServiceError> {
            serde_json::from_slice(&files[name]).map_err(|e| corrupt(format!("{name}: {e}")))
        };

        let choropleth = parse("choropleth.geojson")?;
        let clusters = parse("clusters.json")?;
        let bundle = parse("bundle.json")?;
        let lvi = parse("lvi.json")?;

        let features = choropleth["features"]
            .as_array()
            .ok_or_else(|| corrupt("choropleth.geojson: no features"))?;
        let map_ids: BTreeSet<&str> = features
            .iter()
            .filter_map(|f| f["properties"]["DAUID"].as_str())
            .collect();
        let cluster_ids: BTreeSet<&str> = clusters["da_ids"]
            .as_array()
            .into_iter()
            .flatten()
            .filter_map(Value::as_str)
            .collect();
        let cvi_ids: BTreeSet<&str> = bundle["cvi"]["das"]
            .as_array()
            .into_iter()
            .flatten()
            .filter_map(|d| d["da_id"].as_str())
            .collect();
        if map_ids.len() != features.len() || map_ids != cluster_ids || map_ids != cvi_ids {
            return Err(corrupt("DA sets differ between choropleth, clusters and CVI"));
        }
        if let Some(ingest) = files.get("ingest.json") {
            let ingest: Value = serde_json::from_slice(ingest).map_err(|e| corrupt(format!("ingest.json: {e}")))?;
            if ingest["catalog_fingerprint"] != bundle["catalog_fingerprint"] {
                return Err(corrupt("catalog fingerprint differs between ingest and bundle"));
            }
        }

        let etag = format!("\"{}\"", sha256_hex(&manifest_bytes).trim_start_matches("sha256:"));
        let labels = bundle["feature_labels"].clone();
        let da = features
            .iter()
            .map(|f| {
                let id = f["properties"]["DAUID"].as_str().expect("checked above").to_string();
                let mut single = f.clone();
                single["labels"] = labels.clone();
                (id, body(&single))
            })
            .collect();

        let names: Vec<&str> = clusters["sector_names"]
            .as_array()
            .into_iter()
            .flatten()
            .filter_map(Value::as_str)
            .collect();
        let assignments: Vec<Value> = clusters["da_ids"]
            .as_array()
            .into_iter()
            .flatten()
            .zip(clusters["model"]["assignments"].as_array().into_iter().flatten())
            .map(|(id, a)| {
                let idx = a.as_u64().unwrap_or(0) as usize;
                json!({"da_id": id, "sector": names.get(idx).copied().unwrap_or(""), "sector_index": idx})
            })
            .collect();
        let clusters_body = json!({
            "sector_names": clusters["sector_names"],
            "feature_ids": clusters["feature_ids"],
            "init_da_ids": clusters["init_da_ids"],
            "iterations": clusters["model"]["iterations"],
            "converged": clusters["model"]["converged"],
            "inertia_history": clusters["model"]["inertia_history"],
            "assignments": assignments,
            "silhouette": parse("silhouette.json")?,
            "radar": parse("radar.json")?,
        });
        let lvi_body = json!({
            "target_year": lvi["target_year"],
            "sectors": lvi["payload"],
            "reference_checks": lvi["reference_checks"],
        });
        let health = json!({
            "status": "ok",
            "etag": etag,
            "engine_version": manifest.engine_version,
            "catalog_fingerprint": bundle["catalog_fingerprint"],
            "das": features.len(),
            "year": choropleth["year"],
        });

        Ok(Snapshot {
            health: body(&health),
            das: body(&choropleth),
            da,
            histogram: Bytes::from(files["histogram.json"].clone()),
            clusters: body(&clusters_body),
            importance: Bytes::from(files["importance.json"].clone()),
            shap_global: Bytes::from(files["shap_global.json"].clone()),
            shap_clusters: Bytes::from(files["shap_clusters.json"].clone()),
            lvi: body(&lvi_body),
            report: Bytes::from(files["report.html"].clone()),
            etag,
            manifest,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct ServeOptions {
    pub cors_origin: Option<String>,
    /// Directory served under `/` for paths outside `/api`.
    pub static_dir: Option<PathBuf>,
}

pub struct AppState {
    pub snapshot: Snapshot,
    requests: AtomicU64,
}

impl AppState {
    pub fn new(snapshot: Snapshot) -> Self {
        Self {
            snapshot,
            requests: AtomicU64::new(0),
        }
    }

    pub fn requests_served(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }
}

type Shared = Arc<AppState>;

fn bytes_response(content_type: &'static str, bytes: &Bytes) -> Response {
    ([(header::CONTENT_TYPE, content_type)], bytes.clone()).into_response()
}

pub fn problem(status: StatusCode, detail: impl Into<String>) -> Response {
    let doc = json!({
        "type": "about:blank",
        "title": status.canonical_reason().unwrap_or("Error"),
        "status": status.as_u16(),
        "detail": detail.into(),
    });
    (status, [(header::CONTENT_TYPE, PROBLEM_JSON)], body(&doc)).into_response()
}

async fn not_found(uri: Uri) -> Response {
    problem(StatusCode::NOT_FOUND, format!("no resource at {}", uri.path()))
}

async fn da(State(s): State<Shared>, UrlPath(id): UrlPath<String>) -> Response {
    match s.snapshot.da.get(&id) {
        Some(b) => bytes_response(JSON, b),
        None => problem(StatusCode::NOT_FOUND, format!("unknown dissemination area {id}")),
    }
}

fn etag_matches(headers: &HeaderMap, etag: &str) -> bool {
    headers
        .get_all(header::IF_NONE_MATCH)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(','))
        .map(str::trim)
        .any(|t| t == "*" || t.trim_start_matches("W/") == etag)
}

async fn etag_layer(State(s): State<Shared>, req: Request, next: Next) -> Response {
    s.requests.fetch_add(1, Ordering::Relaxed);
    let etag = HeaderValue::from_str(&s.snapshot.etag).expect("etag is ascii");
    let conditional = matches!(*req.method(), Method::GET | Method::HEAD) && etag_matches(req.headers(), &s.snapshot.etag);
    let mut res = next.run(req).await;
    if conditional && res.status() == StatusCode::OK {
        res = Response::builder()
            .status(StatusCode::NOT_MODIFIED)
            .body(Body::empty())
            .expect("static response");
    }
    res.headers_mut().insert(header::ETAG, etag);
    res
}

macro_rules! fixed {
    ($field:ident, $ct:expr) => {
        get(|State(s): State<Shared>| async move { bytes_response($ct, &s.snapshot.$field) })
    };
}

pub fn router(snapshot: Snapshot, options: &ServeOptions) -> Result<Router, ServiceError> {
    let state: Shared = Arc::new(AppState::new(snapshot));
    router_with_state(state, options)
}

pub fn router_with_state(state: Shared, options: &ServeOptions) -> Result<Router, ServiceError> {
    let api = Router::new()
        .route("/api/health", fixed!(health, JSON))
        .route("/api/das", fixed!(das, JSON))
        .route("/api/das/{id}", get(da))
        .route("/api/cvi/histogram", fixed!(histogram, JSON))
        .route("/api/clusters", fixed!(clusters, JSON))
        .route("/api/importance", fixed!(importance, JSON))
        .route("/api/shap/global", fixed!(shap_global, JSON))
        .route("/api/shap/clusters", fixed!(shap_clusters, JSON))
        .route("/api/lvi", fixed!(lvi, JSON))
        .route("/api/report", fixed!(report, HTML));
    let mut app = match &options.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir).not_found_service(not_found.into_service())),
        None => api.fallback(not_found),
    };
    app = app.layer(middleware::from_fn_with_state(state.clone(), etag_layer));
    if let Some(origin) = &options.cors_origin {
        let origin = HeaderValue::from_str(origin).map_err(|_| ServiceError::CorsOrigin(origin.clone()))?;
        app = app.layer(
            CorsLayer::new()
                .allow_origin(origin)
                .allow_methods([Method::GET, Method::HEAD])
                .allow_headers([header::IF_NONE_MATCH])
                .expose_headers([header::ETAG]),
        );
    }
    Ok(app.with_state(state))
}

/// Loads `snapshot_dir` and serves it until the process is stopped.
pub async fn serve(snapshot_dir: &Path, bind: &str, options: ServeOptions) -> Result<(), ServiceError> {
    let app = router(Snapshot::load(snapshot_dir)?, &options)?;
    let listener = tokio::net::TcpListener::bind(bind)
        .await
        .map_err(|source| ServiceError::Bind {
            addr: bind.to_string(),
            source,
        })?;
    let addr: SocketAddr = listener.local_addr().map_err(ServiceError::Server)?;
    eprintln!("serving {} on http://{addr}", snapshot_dir.display());
    axum::serve(listener, app).await.map_err(ServiceError::Server)
}
