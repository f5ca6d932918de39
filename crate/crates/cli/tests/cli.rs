use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use airfuse::dataset::MonitorDataset;
use airfuse::ingest::{generate_synthetic, load_monitor_csv, write_monitor_csv, write_monitor_csv_to, SyntheticConfig};
use airfuse::raster::AsciiGrid;

fn airfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_airfuse")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = airfuse(args);
    assert!(
        out.status.success(),
        "airfuse {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = r#"
[synthetic]
n_sites = 30
n_days = 3
n_rows = 12
n_cols = 16
cell_km = 25.0

[downscaler]
n_iter = 400
n_burn = 200
draws = 40

[forest]
n_trees = 30
"#;

fn small_study(dir: &Path) -> (PathBuf, PathBuf) {
    let cfg = dir.join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let data = dir.join("data");
    ok(&["--config", s(&cfg), "--out", s(&data), "--seed", "5", "synth"]);
    (cfg, data)
}

#[test]
fn synth_matches_library_and_roundtrips() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    ok(&["--out", s(&data), "--seed", "11", "synth", "--n-sites", "25", "--n-days", "2"]);
    let cfg = SyntheticConfig {
        n_sites: 25,
        n_days: 2,
        seed: 11,
        ..SyntheticConfig::default()
    };
    let (m, _, _) = generate_synthetic(&cfg).unwrap();
    let mut expected = Vec::new();
    write_monitor_csv_to(&m, &mut expected).unwrap();
    assert_eq!(std::fs::read(data.join("monitors.csv")).unwrap(), expected);
    let back = load_monitor_csv(data.join("monitors.csv")).unwrap();
    assert_eq!(back.n_observations(), m.n_observations());
    for f in ["grid.csv", "grid-meta.csv", "truth.csv", "truth-params.csv"] {
        assert!(data.join(f).exists(), "{f}");
    }
}

#[test]
fn same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        ok(&["--out", s(&out), "--seed", seed, "synth", "--n-sites", "20", "--n-days", "2"]);
        std::fs::read(out.join("monitors.csv")).unwrap()
    };
    assert_eq!(run("a", "4"), run("b", "4"));
    assert_ne!(run("a", "4"), run("c", "5"));
}

#[test]
fn zero_sites_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = airfuse(&["--out", s(dir.path()), "synth", "--n-sites", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_sites"));
}

#[test]
fn bad_config_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[forest]\nntrees = 5\n").unwrap();
    let out = airfuse(&["--config", s(&cfg), "--out", s(dir.path()), "synth"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ntrees"));
    let out = airfuse(&["report", "--records", "x.csv", "--strategies", "bogus"]);
    assert_eq!(out.status.code(), Some(2));
    let help = ok(&["--help"]);
    assert!(String::from_utf8_lossy(&help.stdout).contains("n_trees = 500"));
}

#[test]
fn constant_field_predicts_constant_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, "[synthetic]\nn_sites = 6\nn_days = 1\nn_rows = 2\nn_cols = 2\ncell_km = 100.0\n").unwrap();
    let data = dir.path().join("data");
    ok(&["--config", s(&cfg), "--out", s(&data), "synth"]);
    let m = load_monitor_csv(data.join("monitors.csv")).unwrap();
    let obs: Vec<(usize, usize, f64)> = m.observations().map(|(site, day, _)| (site, day, 7.0)).collect();
    let flat = MonitorDataset::new(m.sites().to_vec(), m.calendar(), obs).unwrap();
    write_monitor_csv(&flat, data.join("monitors.csv")).unwrap();

    let out = dir.path().join("out");
    for log in [false, true] {
        let mut args = vec!["--data", s(&data), "--out", s(&out), "predict-grid", "--method", "idw", "--day", "0"];
        if log {
            args.push("--log");
        }
        std::fs::create_dir_all(&out).unwrap();
        std::fs::write(out.join("idw-tuning.csv"), "phi,rmse,best\n2,0,true\n").unwrap();
        ok(&args);
        let name = if log { "idw-2011-01-01-log.asc" } else { "idw-2011-01-01.asc" };
        let g = AsciiGrid::read(std::fs::File::open(out.join(name)).unwrap(), name).unwrap();
        assert_eq!((g.n_rows, g.n_cols), (2, 2));
        let want = if log { 7.0f64.ln() } else { 7.0 };
        for v in &g.values {
            assert!((v.unwrap() - want).abs() < 1e-9);
        }
    }
}

#[test]
fn fit_then_predict_grid_roundtrips() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = small_study(dir.path());
    let out = dir.path().join("out");
    let base = ["--config", s(&cfg), "--data", s(&data), "--out", s(&out)];
    let run = |extra: &[&str]| ok(&[&base[..], extra].concat());
    run(&["fit", "--method", "uk", "--spec", "cmaq"]);
    run(&["fit", "--method", "rf"]);
    run(&["fit", "--method", "downscaler", "--samples"]);
    let meta = std::fs::read_to_string(out.join("forest-meta.csv")).unwrap();
    assert!(meta.contains("m_try,5\n"), "{meta}");
    for (method, file) in [("uk", "uk-cmaq-2011-01-02"), ("rf", "rf-2011-01-02"), ("downscaler", "downscaler-2011-01-02")] {
        run(&["predict-grid", "--method", method, "--spec", "cmaq", "--day", "1"]);
        let path = out.join(format!("{file}.asc"));
        let text = std::fs::read(&path).unwrap();
        let g = AsciiGrid::read(text.as_slice(), file).unwrap();
        let mut again = Vec::new();
        g.write(&mut again).unwrap();
        let g2 = AsciiGrid::read(again.as_slice(), file).unwrap();
        assert_eq!((g.n_rows, g.n_cols), (12, 16));
        for (a, b) in g.values.iter().zip(&g2.values) {
            assert!((a.unwrap() - b.unwrap()).abs() <= 1e-9 * a.unwrap().abs().max(1.0));
        }
        assert!(out.join(format!("{file}-var.asc")).exists());
    }
    let missing = airfuse(&[&base[..], &["predict-grid", "--method", "uk", "--spec", "both", "--day", "0"]].concat());
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn cv_is_identical_across_worker_counts_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = small_study(dir.path());
    let cv = |workers: &str| {
        let out = dir.path().join(format!("cv{workers}"));
        ok(&["--config", s(&cfg), "--data", s(&data), "--out", s(&out), "--workers", workers, "cv"]);
        out
    };
    let (a, b) = (cv("1"), cv("8"));
    for f in ["records.csv", "report.csv", "notes.csv", "foldplan.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }

    let rep = dir.path().join("rep");
    let records = a.join("records.csv");
    ok(&["--data", s(&data), "--out", s(&rep), "report", "--records", s(&records), "--strategies", "overall,season"]);
    let overall = std::fs::read_to_string(rep.join("rmse-overall.csv")).unwrap();
    assert!(overall.starts_with("method,All\nols-cmaq,"), "{overall}");
    let season = std::fs::read_to_string(rep.join("rmse-season.csv")).unwrap();
    assert!(season.starts_with("method,Winter,Spring,Summer,Fall\n"));
    assert!(season.lines().any(|l| l.starts_with("rf,")));

    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "method,site_id,date,fold,observed,predicted,variance,lower95,upper95\n").unwrap();
    let out = airfuse(&["--data", s(&data), "--out", s(&rep), "report", "--records", s(&empty)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn external_leakage_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = small_study(dir.path());
    let out = dir.path().join("cv");
    ok(&["--config", s(&cfg), "--data", s(&data), "--out", s(&out), "cv", "--methods", "idw"]);
    let records = std::fs::read_to_string(out.join("records.csv")).unwrap();
    let mut good = String::from("method,site_id,date,predicted,variance,lower95,upper95,fold\n");
    let mut leaky = good.clone();
    for (i, line) in records.lines().skip(1).enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        let fold: usize = f[3].parse().unwrap();
        good.push_str(&format!("ext,{},{},{},,,,{fold}\n", f[1], f[2], f[5]));
        let wrong = if i == 0 { (fold + 1) % 5 } else { fold };
        leaky.push_str(&format!("ext,{},{},{},,,,{wrong}\n", f[1], f[2], f[5]));
    }
    let plan = out.join("foldplan.csv");
    let (gp, lp) = (dir.path().join("good.csv"), dir.path().join("leaky.csv"));
    std::fs::write(&gp, good).unwrap();
    std::fs::write(&lp, leaky).unwrap();
    let ext = dir.path().join("ext");
    ok(&["--data", s(&data), "--out", s(&ext), "score-external", "--predictions", s(&gp), "--foldplan", s(&plan)]);
    let shortfall = std::fs::read_to_string(ext.join("external-shortfall.csv")).unwrap();
    assert_eq!(shortfall, "method,missing\next,0\n");
    let bad = airfuse(&["--data", s(&data), "--out", s(&ext), "score-external", "--predictions", s(&lp), "--foldplan", s(&plan)]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("line 2"));
}
