use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn vitality(dir: &Path, args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_vitality"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn ok(dir: &Path, args: &[&str]) {
    let (code, err) = vitality(dir, args);
    assert_eq!(code, 0, "{args:?}: {err}");
}

fn manifest(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn synth_then_run_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--seed", "42"]);
    assert!(d.join("synth/catalog.json").exists());
    ok(d, &["run", "--seed", "42"]);
    let first = fs::read(d.join("snapshot/manifest.json")).unwrap();
    ok(d, &["run", "--seed", "42"]);
    assert_eq!(first, fs::read(d.join("snapshot/manifest.json")).unwrap());
    ok(d, &["run", "--seed", "42", "--out", "other"]);
    assert_eq!(first, fs::read(d.join("other/manifest.json")).unwrap());
}

#[test]
fn missing_geojson_exits_1_naming_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--seed", "1"]);
    let (code, err) = vitality(d, &["run", "--seed", "1", "--geojson", "missing/areas.geojson"]);
    assert_eq!(code, 1);
    assert!(err.contains("missing/areas.geojson"), "{err}");
    assert!(!d.join("snapshot").exists());
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--seed", "1"]);
    assert_eq!(vitality(d, &["run"]).0, 2, "no seed");
    assert_eq!(vitality(d, &["run", "--seed", "1", "--stage", "nope"]).0, 2);
    assert_eq!(vitality(d, &["run", "--seed", "1", "--target-year", "2021"]).0, 2);
    assert_eq!(vitality(d, &["run", "--seed", "1", "--init-das", "24360001"]).0, 2);
    assert_eq!(vitality(d, &["lvi", "--nonsense"]).0, 2);
    fs::write(d.join("bad.toml"), "seed = 1\nunknown_key = 3\n").unwrap();
    assert_eq!(vitality(d, &["run", "--config", "bad.toml"]).0, 2);
    assert_eq!(vitality(d, &["run", "--config", "absent.toml"]).0, 2);
}

#[test]
fn config_file_with_flag_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--seed", "3", "--out", "city"]);
    fs::create_dir(d.join("conf")).unwrap();
    fs::write(
        d.join("conf/run.toml"),
        "seed = 3\ninput = \"../city\"\nout = \"../from-config\"\nknn_k = 4\n\n[forest]\nn_trees = 20\n\n[cluster]\ninit_da_ids = [\"24360001\", \"24360040\", \"24360080\"]\n",
    )
    .unwrap();
    ok(d, &["run", "--config", "conf/run.toml"]);
    let m = manifest(&d.join("from-config"));
    assert_eq!(m["settings"]["knn_k"], 4);
    assert_eq!(m["settings"]["forest"]["n_trees"], 20);
    assert_eq!(m["settings"]["cluster"]["init_da_ids"][1], "24360040");

    ok(d, &["run", "--config", "conf/run.toml", "--seed", "9", "--n-trees", "30", "--out", "flagged"]);
    let m = manifest(&d.join("flagged"));
    assert_eq!(m["seed"], 9);
    assert_eq!(m["settings"]["forest"]["n_trees"], 30);
    assert_eq!(m["settings"]["knn_k"], 4);
}

#[test]
fn stage_filter_regenerates_only_that_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--seed", "5"]);
    ok(d, &["run", "--seed", "5"]);
    let before = manifest(&d.join("snapshot"));
    let cvi_outputs = ["cvi_2006.json", "cvi_2011.json", "cvi_2016.json", "cvi_2021.json", "cvi.csv", "choropleth.geojson", "histogram.json"];
    let mtimes = |names: &[&str]| -> BTreeMap<String, std::time::SystemTime> {
        names
            .iter()
            .map(|n| (n.to_string(), fs::metadata(d.join("snapshot").join(n)).unwrap().modified().unwrap()))
            .collect()
    };
    let others: Vec<String> = before["artifacts"]
        .as_object()
        .unwrap()
        .keys()
        .filter(|k| !cvi_outputs.contains(&k.as_str()))
        .cloned()
        .collect();
    let others: Vec<&str> = others.iter().map(String::as_str).collect();
    let other_times = mtimes(&others);
    let cvi_times = mtimes(&cvi_outputs);
    std::thread::sleep(std::time::Duration::from_millis(20));

    fs::remove_file(d.join("snapshot/manifest.json")).unwrap();
    ok(d, &["run", "--seed", "5", "--stage", "cvi"]);
    assert_eq!(mtimes(&others), other_times);
    let after = mtimes(&cvi_outputs);
    for n in cvi_outputs {
        assert!(after[n] > cvi_times[n], "{n} not regenerated");
    }
    assert_eq!(manifest(&d.join("snapshot")), before);
}

#[test]
fn stage_subcommands_reproduce_a_full_run() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--seed", "8"]);
    ok(d, &["run", "--seed", "8", "--out", "full"]);
    for stage in ["ingest", "preprocess", "cluster", "cvi", "lvi", "importance", "shap", "report"] {
        ok(d, &[stage, "--seed", "8", "--out", "staged"]);
    }
    assert_eq!(
        fs::read(d.join("full/manifest.json")).unwrap(),
        fs::read(d.join("staged/manifest.json")).unwrap()
    );
}

#[test]
fn cvi_on_a_single_panel() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--seed", "2"]);
    fs::copy(d.join("synth/panel_2016.csv"), d.join("p.csv")).unwrap();
    ok(d, &["cvi", "--panel", "p.csv", "--year", "2016", "--out", "one"]);
    let csv = fs::read_to_string(d.join("one/cvi.csv")).unwrap();
    assert!(csv.starts_with("da_id,cvi,bin,"));
    assert_eq!(csv.lines().count(), 88);
    let doc: Value = serde_json::from_str(&fs::read_to_string(d.join("one/choropleth.geojson")).unwrap()).unwrap();
    assert_eq!(doc["features"].as_array().unwrap().len(), 87);
}

#[test]
fn cluster_with_explicit_initial_areas() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--seed", "2"]);
    fs::remove_file(d.join("synth/labels.csv")).unwrap();
    assert_eq!(vitality(d, &["cluster", "--out", "c"]).0, 2, "no labels and no init ids");
    ok(d, &["cluster", "--init-das", "24360001,24360040,24360080", "--out", "c"]);
    assert!(d.join("c/assignments.csv").exists());
    assert!(d.join("c/silhouette.json").exists());
    let clusters: Value = serde_json::from_str(&fs::read_to_string(d.join("c/clusters.json")).unwrap()).unwrap();
    assert_eq!(clusters["init_da_ids"][2], "24360080");
}

#[test]
fn report_from_a_bundle_file() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--seed", "4"]);
    ok(d, &["run", "--seed", "4"]);
    ok(d, &["report", "--bundle", "snapshot/bundle.json", "--out", "r.html"]);
    assert_eq!(fs::read(d.join("r.html")).unwrap(), fs::read(d.join("snapshot/report.html")).unwrap());
    fs::write(d.join("partial.json"), "{}").unwrap();
    assert_eq!(vitality(d, &["report", "--bundle", "partial.json", "--out", "p.html"]).0, 1);
}

/// Rewrites the synthetic panels so every raw value moves linearly across
/// census years; the sector series are then exactly linear too.
fn linear_fixture(dir: &Path) {
    let base = fs::read_to_string(dir.join("panel_2006.csv")).unwrap();
    let mut lines = base.lines();
    let header = lines.next().unwrap();
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    let ncol = rows[0].len();
    let means: Vec<f64> = (1..ncol)
        .map(|c| {
            let v: Vec<f64> = rows.iter().filter_map(|r| r[c].parse().ok()).collect();
            v.iter().sum::<f64>() / v.len() as f64
        })
        .collect();
    for (t, year) in [2006, 2011, 2016, 2021].into_iter().enumerate() {
        let mut out = format!("{header}\n");
        for r in &rows {
            out.push_str(&r[0]);
            for c in 1..ncol {
                let v: f64 = r[c].parse().unwrap_or(means[c - 1]);
                out.push_str(&format!(",{}", v * (1.0 + 0.04 * t as f64)));
            }
            out.push('\n');
        }
        fs::write(dir.join(format!("panel_{year}.csv")), out).unwrap();
    }
}

#[test]
fn lvi_selects_linear_regression_on_the_linear_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--seed", "6"]);
    linear_fixture(&d.join("synth"));
    ok(d, &["lvi", "--seed", "6", "--target-year", "2026", "--out", "lin"]);
    let lvi: Value = serde_json::from_str(&fs::read_to_string(d.join("lin/lvi.json")).unwrap()).unwrap();
    assert_eq!(lvi["target_year"], 2026);
    for f in lvi["forecasts"].as_array().unwrap() {
        assert_eq!(f["selected_model"], "LR", "{}", f["sector"]);
        assert!(f["forecast"]["LR"]["mse"].as_f64().unwrap() < 1e-20);
    }
}
