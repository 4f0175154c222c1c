use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn ptysim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ptysim")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn value_of(out: &str, key: &str) -> String {
    out.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {out}"))
        .to_string()
}

fn write_json(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_config(out: &Path) -> Value {
    json!({
        "object": {"kind": "star", "grid_size": 128, "n_spokes": 64},
        "probe_grid": 32,
        "probe_width_nm": 144.0,
        "probes": [
            {"id": "mura5", "kind": "mura", "length": 5},
            {"id": "mura1", "kind": "mura", "length": 1},
            {"id": "rpzp", "kind": "random_phase_zp", "seed": 3}
        ],
        "trajectory": {"n_points": 60},
        "flux_levels": [1e5],
        "n_trials": 1,
        "noise": false,
        "solver": {"max_iterations": 8, "checkpoint_every": 4},
        "metrics": {"n_radii": 16},
        "output_dir": out.to_str().unwrap()
    })
}

#[test]
fn probe_gen_reports_feature_size() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(dir.path(), "p.json", &json!({"kind": "mura", "length": 61, "width_nm": 1200.0, "pixel_size_nm": 10.0}));
    let out = dir.path().join("p.cfld");
    let o = ptysim(&["probe", "gen", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(value_of(&text, "feature_size_nm").parse::<f64>().unwrap(), 20.0);
    assert_eq!(value_of(&text, "sub_30nm_feature"), "true");
    assert!((value_of(&text, "flux").parse::<f64>().unwrap() - 1.0).abs() < 1e-12);
    assert!(out.exists());
}

#[test]
fn unit_mura_far_field_peaks_at_zero_frequency() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(dir.path(), "p.json", &json!({"kind": "mura", "length": 1, "width_nm": 500.0}));
    let csv = dir.path().join("ff.csv");
    let o = ptysim(&["probe", "farfield", "--config", s(&cfg), "--out", s(&csv)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    let col = rows[0].len() - 1;
    let max_bin = rows
        .iter()
        .enumerate()
        .max_by(|a, b| a.1[col].total_cmp(&b.1[col]))
        .unwrap()
        .0;
    assert_eq!(max_bin, 0, "{}", text.lines().next().unwrap());
    assert!(value_of(&stdout(&o), "dynamic_range_decades").parse::<f64>().unwrap() > 0.0);
}

#[test]
fn malformed_config_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"n_trials\": \"five\"").unwrap();
    let o = ptysim(&["experiment", "--config", s(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    let unknown = write_json(dir.path(), "u.json", &json!({"n_trails": 3}));
    let o = ptysim(&["experiment", "--config", s(&unknown)]);
    assert_eq!(o.status.code(), Some(1));
    let invalid = write_json(dir.path(), "i.json", &json!({"n_trials": 0}));
    let o = ptysim(&["experiment", "--config", s(&invalid)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("n_trials"));
    assert_eq!(ptysim(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(ptysim(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_dataset_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.ptyd");
    let o = ptysim(&[
        "reconstruct",
        "--dataset",
        s(&missing),
        "--trajectory",
        s(&missing),
        "--probe",
        s(&missing),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

fn csv_files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn tiny_experiment_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let cfg = write_json(dir.path(), "c.json", &tiny_config(&a));
    let o = ptysim(&["experiment", "--config", s(&cfg)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = ptysim(&["experiment", "--config", s(&cfg), "--out", s(&b), "--jobs", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let files = csv_files(&a);
    assert_eq!(files, csv_files(&b));
    assert!(files.iter().any(|f| f.ends_with("summary.csv")));
    for f in &files {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{}", f.display());
    }

    // One noiseless trial: the ensemble spread is exactly zero.
    let ens = std::fs::read_to_string(a.join("ensembles/mura5_f0_mtf.csv")).unwrap();
    for line in ens.lines().skip(1) {
        assert_eq!(line.rsplit(',').next().unwrap().parse::<f64>().unwrap(), 0.0);
    }

    let manifest: Value = serde_json::from_slice(&std::fs::read(a.join("manifest.json")).unwrap()).unwrap();
    let totals: Vec<f64> = manifest["probes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["total_intensity"].as_f64().unwrap())
        .collect();
    assert_eq!(totals.len(), 3);
    for t in &totals {
        assert!((t - 1e5).abs() < 1e-9 * 1e5, "{totals:?}");
    }
    assert_eq!(manifest["noise"], json!(false));
    assert!(manifest["config_hash"].as_str().unwrap().len() == 64);
}

#[test]
fn simulate_reconstruct_mtf_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(&dir.path().join("unused"));
    cfg["solver"] = json!({"max_iterations": 30, "checkpoint_every": 10});
    let cfg = write_json(dir.path(), "c.json", &cfg);
    let sim = dir.path().join("sim");
    let o = ptysim(&["simulate", "--config", s(&cfg), "--out", s(&sim), "--probe-id", "mura5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(value_of(&stdout(&o), "frames"), "60");
    for f in ["object.cfld", "probe.cfld", "trajectory.csv", "dataset.ptyd"] {
        assert!(sim.join(f).exists(), "{f}");
    }

    let rec = dir.path().join("rec");
    let o = ptysim(&[
        "reconstruct",
        "--config",
        s(&cfg),
        "--dataset",
        s(&sim.join("dataset.ptyd")),
        "--trajectory",
        s(&sim.join("trajectory.csv")),
        "--probe",
        s(&sim.join("probe.cfld")),
        "--out",
        s(&rec),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(value_of(&stdout(&o), "iterations"), "30");
    let history: Vec<f64> = std::fs::read_to_string(rec.join("objective.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(history.len(), 31);
    assert!(history.windows(2).all(|w| w[1] <= w[0]));
    assert!(history[30] < 0.1 * history[0]);
    for it in [0, 10, 20, 30] {
        assert!(rec.join(format!("checkpoint_{it:05}.cfld")).exists());
    }

    let mtf_csv = dir.path().join("mtf.csv");
    let o = ptysim(&["mtf", "--config", s(&cfg), "--reconstruction", s(&rec.join("reconstruction.cfld")), "--out", s(&mtf_csv)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let band: f64 = value_of(&stdout(&o), "band_integral").parse().unwrap();
    assert!(band > 0.0 && band < 0.25, "{band}");
    let truth_csv = dir.path().join("truth.csv");
    let o = ptysim(&["mtf", "--config", s(&cfg), "--reconstruction", s(&sim.join("object.cfld")), "--out", s(&truth_csv)]);
    let truth_band: f64 = value_of(&stdout(&o), "band_integral").parse().unwrap();
    assert!(truth_band > band, "{truth_band} vs {band}");
}

#[test]
fn probe_file_typos_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(dir.path(), "p.json", &json!({"kind": "mura", "length": 5, "width_nm": 500.0, "lenght": 3}));
    let o = ptysim(&["probe", "gen", "--config", s(&cfg), "--out", s(&dir.path().join("x.cfld"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    for name in ["desk.json", "small.json"] {
        let cfg = ptysim_cli::config::ExperimentConfig::load(&dir.join(name)).unwrap();
        cfg.validate().unwrap();
    }
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("p.cfld");
    let o = ptysim(&["probe", "gen", "--config", s(&dir.join("mura61_probe.json")), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(value_of(&stdout(&o), "sub_30nm_feature"), "true");
}
