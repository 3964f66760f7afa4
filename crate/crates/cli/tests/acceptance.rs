//! One PASS/FAIL line per acceptance criterion. Every criterion runs even if
//! an earlier one fails; the test fails at the end if any did.
#![allow(clippy::needless_range_loop)]

#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use axum::body::{to_bytes, Body};
use axum::http::{header, Request, StatusCode};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde_json::Value;
use tower::ServiceExt;
use vitality::cluster::{kmeans_fixed, medoids, silhouette, KMeansParams};
use vitality::cvi::compute_cvi;
use vitality::data::merge_panels;
use vitality::explain::tree_shap;
use vitality::geo::{assign_addresses, load_geojson, DAPolygon, GeoIndex, PolygonPart};
use vitality::learners::{
    fit_boosted, fit_forest, fit_mlp, importance, BoostParams, EnsembleKind, ForestParams, MlpConfig, MlpModel,
    TreeEnsemble,
};
use vitality::lvi::{compute_lvi, forecast, LviSeries, ModelKind};
use vitality::preprocess::{knn_impute_rows, preprocess_panel_set};
use vitality::synth::{generate, SynthConfig};
use vitality_service::{router, schemas, ServeOptions, Snapshot};

type Outcome = Result<(), String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Outcome {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn near(a: f64, b: f64, tol: f64, what: &str) -> Outcome {
    check((a - b).abs() <= tol, || format!("{what}: {a} vs {b} (tol {tol})"))
}

fn vitality(dir: &Path, args: &[&str]) -> Outcome {
    let out = Command::new(env!("CARGO_BIN_EXE_vitality"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    check(out.status.success(), || {
        format!("{args:?} exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr))
    })
}

fn cvi_lvi_oracles() -> Outcome {
    let city = generate(&SynthConfig::with_seed(42)).map_err(|e| e.to_string())?;
    let set = merge_panels(city.panels.clone(), &city.catalog).map_err(|e| e.to_string())?;
    let processed = preprocess_panel_set(&set, 5).map_err(|e| e.to_string())?;
    let members = city.catalog.index_members();
    let label_of: BTreeMap<&str, usize> = city.labels.iter().map(|(id, s)| (id.as_str(), *s)).collect();
    let ids: Vec<String> = city.labels.iter().map(|(id, _)| id.clone()).collect();
    let assignments: Vec<usize> = city.labels.iter().map(|(_, s)| *s).collect();

    let start = Instant::now();
    let cvis: BTreeMap<_, _> = processed
        .iter()
        .map(|(y, p)| (*y, compute_cvi(p, &city.catalog).unwrap()))
        .collect();
    let series = compute_lvi(&cvis, &ids, &assignments, &city.sector_names).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();

    check(processed.len() == 4, || format!("{} years", processed.len()))?;
    for (year, panel) in &processed {
        check(panel.da_ids.len() == 87, || format!("{} areas in {year}", panel.da_ids.len()))?;
        let want = oracles::cvi(&panel.matrix, &members);
        for (a, b) in cvis[year].values().iter().zip(&want) {
            near(*a, *b, 1e-12, &format!("CVI {year}"))?;
        }
        let labels: Vec<usize> = panel.da_ids.iter().map(|id| label_of[id.as_str()]).collect();
        let means = oracles::group_means(&want, &labels, city.sector_names.len());
        for (s, line) in series.iter().enumerate() {
            let v = line.points.iter().find(|(y, _)| y == year).ok_or("missing year")?.1;
            near(v, means[s], 1e-12, &format!("LVI {} {year}", line.sector))?;
        }
    }
    check(elapsed < 1.0, || format!("took {elapsed:.3} s"))
}

fn lr_forecast(values: [f64; 4]) -> Result<f64, String> {
    let series = LviSeries {
        sector: "S".into(),
        points: [2006, 2011, 2016, 2021].into_iter().zip(values).collect(),
        source: vec![],
    };
    let f = forecast(&series, 2026, &[ModelKind::LR], 0).map_err(|e| e.to_string())?;
    Ok(f.forecast[&ModelKind::LR].prediction)
}

fn reference_forecasts(report: &str) -> Outcome {
    let t = [2006.0, 2011.0, 2016.0, 2021.0];
    let commercial = [0.31, 0.37, 0.41, 0.30];
    let urban = [0.31, 0.31, 0.31, 0.24];
    let c = lr_forecast(commercial)?;
    near(c, 0.35, 0.005, "Commercial vs reported")?;
    let (a, b) = oracles::ols(&t, &commercial);
    near(c, a + b * 2026.0, 1e-9, "Commercial vs normal equations")?;
    let u = lr_forecast(urban)?;
    let (a, b) = oracles::ols(&t, &urban);
    near(u, a + b * 2026.0, 1e-9, "Urban vs normal equations")?;
    near(u, 0.24, 0.005, "Urban")?;
    check(report.contains("urban-2026-reference-mismatch"), || "report lacks the Urban notice".into())?;
    check(!report.contains("commercial-2026-reference-mismatch"), || "Commercial wrongly flagged".into())
}

fn collinear_lr() -> Outcome {
    for (start, step) in [(0.2, 0.05), (0.7, -0.08), (0.4, 0.0)] {
        let series = LviSeries {
            sector: "S".into(),
            points: (0..4).map(|i| (2006 + 5 * i, start + step * i as f64)).collect(),
            source: vec![],
        };
        let f = forecast(&series, 2026, &ModelKind::ALL, 3).map_err(|e| e.to_string())?;
        let mse = f.forecast[&ModelKind::LR].mse;
        check(mse < 1e-20, || format!("LR MSE {mse}"))?;
        check(f.selected_model == ModelKind::LR, || format!("selected {:?}", f.selected_model))?;
    }
    Ok(())
}

fn collinear_pipeline(work: &Path) -> Outcome {
    let d = work.join("linear");
    fs::create_dir_all(&d).map_err(|e| e.to_string())?;
    vitality(&d, &["synth", "--seed", "6"])?;
    let dir = d.join("synth");
    let base = fs::read_to_string(dir.join("panel_2006.csv")).map_err(|e| e.to_string())?;
    let mut lines = base.lines();
    let header = lines.next().unwrap();
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    let ncol = rows[0].len();
    for (t, year) in [2006, 2011, 2016, 2021].into_iter().enumerate() {
        let mut out = format!("{header}\n");
        for r in &rows {
            out.push_str(r[0]);
            for cell in &r[1..ncol] {
                // a missing cell becomes 1 so every column stays observed
                let v: f64 = cell.parse().unwrap_or(1.0);
                out.push_str(&format!(",{}", v * (1.0 + 0.04 * t as f64)));
            }
            out.push('\n');
        }
        fs::write(dir.join(format!("panel_{year}.csv")), out).map_err(|e| e.to_string())?;
    }
    vitality(&d, &["lvi", "--seed", "6", "--out", "lin"])?;
    let lvi: Value = serde_json::from_str(&fs::read_to_string(d.join("lin/lvi.json")).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    for f in lvi["forecasts"].as_array().ok_or("no forecasts")? {
        let mse = f["forecast"]["LR"]["mse"].as_f64().ok_or("no LR mse")?;
        check(mse < 1e-20, || format!("{} LR MSE {mse}", f["sector"]))?;
        check(f["selected_model"] == "LR", || format!("{} selected {}", f["sector"], f["selected_model"]))?;
    }
    Ok(())
}

fn knn_oracle() -> Outcome {
    let mut compared = 0;
    for seed in 0..1000u64 {
        let mut rng = oracles::rng(seed);
        let n = rng.random_range(6..=12);
        let p = rng.random_range(2..=6);
        let k = rng.random_range(1..=3);
        let mut rows: Vec<Vec<Option<f64>>> = (0..n)
            .map(|_| (0..p).map(|_| Some((rng.random_range(0..20) as f64) / 19.0)).collect())
            .collect();
        for _ in 0..rng.random_range(1..=4) {
            let r = rng.random_range(0..n);
            let c = rng.random_range(0..p);
            rows[r][c] = None;
        }
        // a matrix where some cell lacks k donors is rejected, not imputed
        let Ok(got) = knn_impute_rows(&rows, k) else { continue };
        check(got == oracles::knn_impute(&rows, k), || format!("seed {seed} differs"))?;
        compared += 1;
    }
    check(compared > 950, || format!("only {compared} matrices imputed"))
}

const CENTERS: [[f64; 4]; 3] = [[0.2, 0.2, 0.2, 0.2], [0.5, 0.8, 0.5, 0.2], [0.8, 0.3, 0.8, 0.7]];

fn clustering() -> Outcome {
    for seed in 0..40u64 {
        let mut rng = oracles::rng(seed);
        let n = rng.random_range(2..=200);
        let k = rng.random_range(2..=5).min(n);
        let points: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rng.random_range(0..8) as f64 / 7.0).collect())
            .collect();
        let labels: Vec<usize> = (0..n).map(|i| if i == 0 { k - 1 } else { rng.random_range(0..k) }).collect();
        let got = silhouette(&points, &labels).map_err(|e| e.to_string())?;
        for (a, b) in got.values.iter().zip(oracles::silhouette(&points, &labels)) {
            near(*a, b, 1e-9, &format!("silhouette seed {seed}"))?;
        }
    }
    for seed in 0..20u64 {
        let mut rng = oracles::rng(seed);
        let noise = Normal::new(0.0, 0.02).unwrap();
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for (c, center) in CENTERS.iter().enumerate() {
            for _ in 0..29 {
                points.push(center.iter().map(|m| m + noise.sample(&mut rng)).collect::<Vec<f64>>());
                labels.push(c);
            }
        }
        let init: Vec<Vec<f64>> = medoids(&points, &labels, 3)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|i| points[i].clone())
            .collect();
        let model = kmeans_fixed(&points, &init, &KMeansParams::default()).map_err(|e| e.to_string())?;
        check(model.assignments == labels, || format!("blobs seed {seed} not recovered"))?;
        check(model.inertia_history.windows(2).all(|w| w[1] <= w[0]), || format!("inertia rose, seed {seed}"))?;
        let mean = silhouette(&points, &model.assignments).map_err(|e| e.to_string())?.mean;
        check(mean > 0.5, || format!("blob silhouette {mean}"))?;
    }
    Ok(())
}

fn uniform_rows(rng: &mut impl Rng, n: usize, p: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..p).map(|_| rng.random_range(0.0..1.0)).collect()).collect()
}

fn shap_agrees(e: &TreeEnsemble, samples: &[Vec<f64>], label: &str) -> Outcome {
    let m = tree_shap(e, samples).map_err(|e| e.to_string())?;
    for (r, x) in samples.iter().enumerate() {
        let want = oracles::shapley(e, x);
        for j in 0..e.n_features {
            near(m.phi[r][j], want[j], 1e-9, &format!("{label} row {r} feature {j}"))?;
        }
        let total = m.base_value + m.phi[r].iter().sum::<f64>();
        near(total, e.predict(x), 1e-9, &format!("{label} local accuracy row {r}"))?;
    }
    Ok(())
}

fn treeshap() -> Outcome {
    for seed in 0..20u64 {
        let mut rng = oracles::rng(1000 + seed);
        let p = rng.random_range(2..=4);
        let x = uniform_rows(&mut rng, 80, p);
        let y: Vec<f64> = x.iter().map(|r| r[0] * 2.0 + r[p - 1] * r[0] + rng.random_range(-0.1..0.1)).collect();
        let forest = fit_forest(&x, &y, &ForestParams { n_trees: 10, max_depth: Some(3), seed, ..ForestParams::default() })
            .map_err(|e| e.to_string())?;
        let boosted = fit_boosted(&x, &y, &BoostParams { n_rounds: 10, max_depth: 3, seed, ..BoostParams::default() })
            .map_err(|e| e.to_string())?;
        let samples = uniform_rows(&mut rng, 50, p);
        shap_agrees(&forest, &samples, &format!("forest seed {seed}"))?;
        shap_agrees(&boosted, &samples, &format!("boosted seed {seed}"))?;

        // feature 3 is never split on
        let trees = (0..3).map(|_| oracles::random_tree(&mut rng, &[0, 1, 2], 3, 100)).collect();
        let dummy = TreeEnsemble { trees, kind: EnsembleKind::ForestMean, base_score: 0.0, learning_rate: 1.0, n_features: 4 };
        let samples = uniform_rows(&mut rng, 50, 4);
        shap_agrees(&dummy, &samples, &format!("dummy seed {seed}"))?;
        let m = tree_shap(&dummy, &samples).map_err(|e| e.to_string())?;
        check(m.phi.iter().all(|r| r[3] == 0.0), || format!("dummy feature credited, seed {seed}"))?;
    }
    Ok(())
}

fn mlp() -> Outcome {
    let h = 1e-6;
    for seed in 0..30u64 {
        let mut rng = oracles::rng(4000 + seed);
        let model = MlpModel::new(&MlpConfig::with_seed(seed));
        let inputs: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0)).collect();
        let targets: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0)).collect();
        let (_, grad) = model.loss_and_gradient(&inputs, &targets);
        let params = model.params();
        let mut probe = model.clone();
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] = params[i] + h;
            probe.set_params(&p);
            let up = probe.loss_and_gradient(&inputs, &targets).0;
            p[i] = params[i] - h;
            probe.set_params(&p);
            let down = probe.loss_and_gradient(&inputs, &targets).0;
            let fd = (up - down) / (2.0 * h);
            let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-6);
            check(rel < 1e-4, || format!("seed {seed} param {i}: {} vs {fd}", grad[i]))?;
        }
    }
    let t = [2006.0, 2011.0, 2016.0, 2021.0];
    let y = [0.31, 0.37, 0.41, 0.30];
    let a = fit_mlp(&t, &y, &MlpConfig::with_seed(9)).map_err(|e| e.to_string())?;
    let b = fit_mlp(&t, &y, &MlpConfig::with_seed(9)).map_err(|e| e.to_string())?;
    let same = a.params().iter().zip(b.params()).all(|(x, y)| x.to_bits() == y.to_bits());
    check(same && a.predict(2026.0).to_bits() == b.predict(2026.0).to_bits(), || "same-seed fits differ".into())
}

fn planted_importance() -> Outcome {
    for seed in 0..3u64 {
        let mut rng = oracles::rng(seed);
        let x: Vec<Vec<f64>> = (0..150)
            .map(|_| {
                let mut r: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
                r.push(0.5);
                r
            })
            .collect();
        let y: Vec<f64> = x.iter().map(|r| 5.0 * r[2] + 0.3 * r[0] + rng.random_range(-0.05..0.05)).collect();
        let forest = fit_forest(&x, &y, &ForestParams { seed, ..ForestParams::default() }).map_err(|e| e.to_string())?;
        check(forest.trees.len() == 500, || format!("{} trees", forest.trees.len()))?;
        let boosted = fit_boosted(&x, &y, &BoostParams { seed, ..BoostParams::default() }).map_err(|e| e.to_string())?;
        for (name, imp) in [("forest", importance(&forest)), ("boosted", importance(&boosted))] {
            let top = (0..imp.len()).max_by(|&a, &b| imp[a].total_cmp(&imp[b])).unwrap();
            check(top == 2, || format!("{name} seed {seed} ranks column {top} first"))?;
            check(imp[5] == 0.0, || format!("{name} constant column scored {}", imp[5]))?;
        }
    }
    Ok(())
}

fn point_in_polygon() -> Outcome {
    let (cols, rows) = (10usize, 5usize);
    let mut rng = oracles::rng(7);
    let mut vx = vec![vec![(0.0, 0.0); rows + 1]; cols + 1];
    for (i, col) in vx.iter_mut().enumerate() {
        for (j, v) in col.iter_mut().enumerate() {
            let dx = if i > 0 && i < cols { rng.random_range(-0.3..0.3) } else { 0.0 };
            let dy = if j > 0 && j < rows { rng.random_range(-0.3..0.3) } else { 0.0 };
            *v = (i as f64 + dx, j as f64 + dy);
        }
    }
    let mut polys = Vec::new();
    let mut rings = Vec::new();
    for i in 0..cols {
        for j in 0..rows {
            let ring = vec![vx[i][j], vx[i + 1][j], vx[i + 1][j + 1], vx[i][j + 1], vx[i][j]];
            let outer = ring.clone();
            polys.push(DAPolygon::new(format!("P{:02}", i * rows + j), vec![PolygonPart { outer, holes: vec![] }]).map_err(|e| e.to_string())?);
            rings.push(ring);
        }
    }
    let ids: Vec<String> = polys.iter().map(|p| p.da_id.clone()).collect();
    let index = GeoIndex::new(polys).map_err(|e| e.to_string())?;
    let mut rng = oracles::rng(8);
    for _ in 0..10_000 {
        let p = (rng.random_range(-0.5..10.5), rng.random_range(-0.5..5.5));
        let want = rings.iter().zip(&ids).find(|(r, _)| oracles::winding_contains(r, p)).map(|(_, id)| id.as_str());
        check(index.locate(p) == want, || format!("{p:?}: {:?} vs {want:?}", index.locate(p)))?;
    }
    for seed in [1u64, 42, 99] {
        let city = generate(&SynthConfig::with_seed(seed)).map_err(|e| e.to_string())?;
        let addresses: Vec<&str> = city.addresses.addresses().collect();
        let assigned = assign_addresses(&addresses, &city.addresses, &city.geo).map_err(|e| e.to_string())?;
        let planted: BTreeMap<String, usize> =
            city.planted_businesses.iter().filter(|(_, &n)| n > 0).map(|(k, v)| (k.clone(), *v)).collect();
        check(assigned.rejects.is_empty(), || format!("seed {seed}: {} rejects", assigned.rejects.len()))?;
        check(assigned.counts == planted, || format!("seed {seed}: counts differ"))?;
    }
    Ok(())
}

fn determinism(work: &Path) -> Result<PathBuf, String> {
    vitality(work, &["synth", "--seed", "42"])?;
    let start = Instant::now();
    vitality(work, &["run", "--seed", "42", "--out", "first"])?;
    let elapsed = start.elapsed().as_secs_f64();
    vitality(work, &["run", "--seed", "42", "--out", "second"])?;
    let a = fs::read(work.join("first/manifest.json")).map_err(|e| e.to_string())?;
    let b = fs::read(work.join("second/manifest.json")).map_err(|e| e.to_string())?;
    check(a == b, || "manifests differ".into())?;
    let m: Value = serde_json::from_slice(&a).map_err(|e| e.to_string())?;
    check(m["settings"]["forest"]["n_trees"] == 500, || format!("n_trees {}", m["settings"]["forest"]["n_trees"]))?;
    check(elapsed < 60.0, || format!("full run took {elapsed:.1} s"))?;
    Ok(work.join("first"))
}

fn validate(schema: &str, doc: &Value) -> Outcome {
    let schema: Value = serde_json::from_str(schema).map_err(|e| e.to_string())?;
    let validator = jsonschema::validator_for(&schema).map_err(|e| e.to_string())?;
    let errors: Vec<String> = validator.iter_errors(doc).map(|e| format!("{e} at {}", e.instance_path)).collect();
    check(errors.is_empty(), || errors.join("; "))
}

fn service(snapshot: &Path) -> Outcome {
    let app = router(Snapshot::load(snapshot).map_err(|e| e.to_string())?, &ServeOptions::default())
        .map_err(|e| e.to_string())?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(|e| e.to_string())?;
    let get = |uri: &str, etag: Option<&str>| {
        let mut req = Request::get(uri);
        if let Some(tag) = etag {
            req = req.header(header::IF_NONE_MATCH, tag);
        }
        let res = runtime.block_on(app.clone().oneshot(req.body(Body::empty()).unwrap())).unwrap();
        let status = res.status();
        let tag = res.headers().get(header::ETAG).map(|v| v.to_str().unwrap().to_string());
        let body = runtime.block_on(to_bytes(res.into_body(), usize::MAX)).unwrap();
        (status, tag, body)
    };
    for (path, schema) in schemas::ENDPOINTS {
        let path = path.replace("{id}", "24360085");
        let (status, _, body) = get(&path, None);
        check(status == StatusCode::OK, || format!("{path}: {status}"))?;
        let doc: Value = serde_json::from_slice(&body).map_err(|e| format!("{path}: {e}"))?;
        validate(schema, &doc).map_err(|e| format!("{path}: {e}"))?;
    }
    let (_, tag, body) = get("/api/das", None);
    let doc: Value = serde_json::from_slice(&body).map_err(|e| e.to_string())?;
    let n = doc["features"].as_array().map_or(0, Vec::len);
    check(n == 87, || format!("{n} features"))?;
    let tag = tag.ok_or("no etag")?;
    let (status, _, body) = get("/api/das", Some(&tag));
    check(status == StatusCode::NOT_MODIFIED && body.is_empty(), || format!("revalidation gave {status}"))?;

    let choropleth: Value = serde_json::from_str(&fs::read_to_string(snapshot.join("choropleth.geojson")).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    validate(schemas::CHOROPLETH, &choropleth)?;
    let map = load_geojson(&snapshot.join("choropleth.geojson")).map_err(|e| e.to_string())?;
    let source = load_geojson(&snapshot.join("boundaries.geojson")).map_err(|e| e.to_string())?;
    check(map.len() == 87, || format!("{} choropleth polygons", map.len()))?;
    for p in source.polygons() {
        check(map.get(&p.da_id) == Some(p), || format!("{} geometry changed", p.da_id))?;
    }
    Ok(())
}

fn run(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
    });
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(()) => {
            println!("PASS  {name} ({secs:.2} s)");
            true
        }
        Err(e) => {
            println!("FAIL  {name}: {e}");
            false
        }
    }
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let work = tmp.path();
    let mut snapshot = None;
    let results = [
        run("cvi and lvi equal the summation oracles on the seed-42 city in under 1 s", cvi_lvi_oracles),
        run("two seed-42 runs give identical manifests in under 60 s", || {
            snapshot = Some(determinism(work)?);
            Ok(())
        }),
        run("reference forecasts: Commercial 0.35, Urban 0.24 with a flagged notice in the report", || {
            let snap = snapshot.as_deref().ok_or("no snapshot from the run criterion")?;
            reference_forecasts(&fs::read_to_string(snap.join("report.html")).map_err(|e| e.to_string())?)
        }),
        run("collinear series: LR MSE below 1e-20 and LR selected", || {
            collinear_lr()?;
            collinear_pipeline(work)
        }),
        run("knn imputation equals the exhaustive oracle on 1000 matrices", knn_oracle),
        run("silhouette oracle, planted blob recovery and non-increasing inertia", clustering),
        run("treeshap oracle agreement, local accuracy and dummy features", treeshap),
        run("mlp gradients match finite differences and same-seed fits are identical", mlp),
        run("planted signal ranks first and constant columns score zero", planted_importance),
        run("point-in-polygon oracle and geocoded business counts", point_in_polygon),
        run("service endpoints are schema-valid, revalidate to 304 and list 87 areas", || {
            service(snapshot.as_deref().ok_or("no snapshot from the run criterion")?)
        }),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
