use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cfdiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfdiff"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for (out, seed) in [(&a, "5"), (&b, "5"), (&c, "6")] {
        let o = cfdiff(&["simulate", "--n", "300", "--seed", seed, "--out", path(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let read = |d: &Path, f: &str| fs::read(d.join(f)).unwrap();
    assert_eq!(read(&a, "dataset.csv"), read(&b, "dataset.csv"));
    assert_eq!(read(&a, "truth.csv"), read(&b, "truth.csv"));
    assert_ne!(read(&a, "dataset.csv"), read(&c, "dataset.csv"));
}

#[test]
fn invalid_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(
        &cfg,
        "[trial]\nn = 10\n[trial.model]\nmodel = \"sphere\"\n[trial.baseline]\nlambda = 0.0\nk = 1.2\n\
         [trial.censoring]\nkind = \"horizon\"\nhorizon = 2.0\n",
    )
    .unwrap();
    let o = cfdiff(&["simulate", "--config", path(&cfg), "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("trial.baseline.lambda"));

    fs::write(&cfg, "seed = 1\nunknown_key = 3\n").unwrap();
    let o = cfdiff(&["fit", "--config", path(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_input_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.csv");
    let o = cfdiff(&["fit", "--dataset", path(&missing), "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere.csv"));
}

#[test]
fn fit_extend_and_recommend() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let sim = d.join("sim");
    assert!(cfdiff(&["simulate", "--n", "600", "--seed", "2", "--out", path(&sim)]).status.success());
    let data = sim.join("dataset.csv");

    let fit = d.join("fit");
    let o = cfdiff(&["fit", "--dataset", path(&data), "--seed", "9", "--out", path(&fit)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let model = fit.join("model");
    for f in ["model.json", "weights.csv", "tree.txt", "config.toml"] {
        assert!(model.join(f).exists(), "{f}");
    }

    let text = fs::read_to_string(&data).unwrap();
    let points: String = text
        .lines()
        .take(11)
        .map(|l| l.split(',').take(10).collect::<Vec<_>>().join(",") + "\n")
        .collect();
    let pts = d.join("points.csv");
    fs::write(&pts, points).unwrap();
    let ext = d.join("ext");
    let o = cfdiff(&["extend", "--model", path(&model), "--points", path(&pts), "--out", path(&ext)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = fs::read_to_string(ext.join("extension.csv")).unwrap();
    assert_eq!(rows.lines().count(), 11);
    assert!(rows.lines().next().unwrap().starts_with("id,coord_1,"));

    let rec = d.join("rec");
    let o = cfdiff(&[
        "recommend",
        "--model",
        path(&model),
        "--dataset",
        path(&data),
        "--c-threshold",
        "1e12",
        "--out",
        path(&rec),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("recommended: 0"));
    assert!(stdout.contains("anti_recommended: 0"));
    let groups = fs::read_to_string(rec.join("recommendations.csv")).unwrap();
    assert!(groups.lines().skip(1).all(|l| l.contains(",neutral,")));
}
