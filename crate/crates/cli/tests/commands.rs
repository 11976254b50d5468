mod common;

use std::fs;

use common::{code, s, small_config, stderr, stdout, stlcbf, write_config};
use stlcbf::scenario::ScenarioConfig;
use tempfile::tempdir;

#[test]
fn invalid_formula_is_a_user_error_with_a_caret() {
    let dir = tempdir().unwrap();
    let text = ScenarioConfig::reference()
        .to_toml()
        .replace("F[2,5] reg2", "F[2,5] (reg2 &");
    let path = dir.path().join("bad.toml");
    fs::write(&path, text).unwrap();
    let o = stlcbf(&["ledger", s(&path)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let err = stderr(&o);
    assert!(err.contains("in formula"), "{err}");
    assert!(err.lines().any(|l| l.trim() == "^"), "{err}");
}

#[test]
fn missing_config_is_a_user_error() {
    let o = stlcbf(&["ledger", "/nonexistent/scenario.toml"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn initially_violated_requirement_is_infeasible() {
    let dir = tempdir().unwrap();
    let mut sc = ScenarioConfig::reference();
    sc.formula = "G[0,5] reg1".into();
    let path = write_config(dir.path(), "inf.toml", &sc);
    let o = stlcbf(&["train", s(&path), "--iterations", "1"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("reg1"));
}

#[test]
fn ledger_lists_every_barrier() {
    let o = stlcbf(&[
        "ledger",
        concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/reference.toml"),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    for name in ["reg1", "reg2", "!obs1", "!obs2"] {
        assert!(out.contains(name), "{out}");
    }
    assert!(out.contains("γ_reg2(2) ≥"));
    assert!(out.contains("raw parameter width: 12"));
}

#[test]
fn training_is_deterministic_and_starts_satisfied() {
    let dir = tempdir().unwrap();
    let cfg = small_config(dir.path());
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = stlcbf(&[
            "train",
            s(&cfg),
            "--iterations",
            "3",
            "--batch",
            "4",
            "--seed",
            "3",
            "--out",
            s(&out),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        out
    };
    let a = run("a");
    let b = run("b");
    let curve = fs::read_to_string(a.join("curve.csv")).unwrap();
    assert_eq!(curve, fs::read_to_string(b.join("curve.csv")).unwrap());
    assert_eq!(
        fs::read(a.join("checkpoint.json")).unwrap(),
        fs::read(b.join("checkpoint.json")).unwrap()
    );
    let mut rd = csv::Reader::from_reader(curve.as_bytes());
    let header = rd.headers().unwrap().clone();
    let col = header.iter().position(|h| h == "min_robustness").unwrap();
    let first = rd.records().next().unwrap().unwrap();
    let min_rho: f64 = first[col].parse().unwrap();
    assert!(min_rho > 0.0, "iteration 0 min ρ = {min_rho}");

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["schema"], "stlcbf-manifest/1");
    assert_eq!(manifest["seed"], 3);
    let hash = ScenarioConfig::load(&cfg).unwrap().hash();
    assert_eq!(manifest["config_hash"], hash.as_str());
    for f in manifest["files"].as_array().unwrap() {
        assert!(a.join(f.as_str().unwrap()).is_file());
    }
}

#[test]
fn compare_with_zero_trials_writes_an_empty_report() {
    let dir = tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("cmp");
    let o = stlcbf(&["compare", s(&cfg), "--trials", "0", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["methods"].as_array().unwrap().len(), 0);
}

#[test]
fn compare_exports_trajectories_and_a_valid_map() {
    let dir = tempdir().unwrap();
    let cfg = small_config(dir.path());
    let train = dir.path().join("bn");
    let o = stlcbf(&[
        "train",
        s(&cfg),
        "--iterations",
        "2",
        "--batch",
        "4",
        "--out",
        s(&train),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ck = train.join("checkpoint.json");
    let out = dir.path().join("cmp");
    let o = stlcbf(&[
        "compare",
        s(&cfg),
        "--barriernet",
        s(&ck),
        "--trials",
        "3",
        "--seed",
        "9",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = stdout(&o);
    assert!(table.contains("barriernet") && table.contains("fixed-hocbf"));

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let files: Vec<&str> = manifest["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f.as_str().unwrap())
        .collect();
    let trajectories: Vec<&&str> = files.iter().filter(|f| f.ends_with(".csv")).collect();
    assert_eq!(trajectories.len(), 6);
    for f in &files {
        assert!(out.join(f).is_file(), "{f}");
    }
    let first = fs::read_to_string(out.join(trajectories[0])).unwrap();
    assert_eq!(first.lines().next().unwrap(), "t,px,py,vx,vy,ax,ay");
    assert_eq!(first.lines().count(), 52);

    let svg = fs::read_to_string(out.join("environment.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).expect("map is well-formed XML");
    let count = |tag: &str, class: &str| {
        doc.descendants()
            .filter(|n| n.has_tag_name(tag) && n.attribute("class") == Some(class))
            .count()
    };
    assert_eq!(count("circle", "shape"), 2);
    assert_eq!(count("path", "shape"), 2);
    assert_eq!(count("polyline", "trajectory"), 6);
    assert!(doc.descendants().any(|n| n.attribute("id") == Some("init")));

    let curve = fs::read_to_string(train.join("curve.svg")).unwrap();
    let doc = roxmltree::Document::parse(&curve).expect("curve is well-formed XML");
    assert_eq!(
        doc.descendants()
            .filter(|n| n.has_tag_name("polyline"))
            .count(),
        2
    );
}

#[test]
fn checkpoint_for_another_config_is_rejected() {
    let dir = tempdir().unwrap();
    let cfg = small_config(dir.path());
    let train = dir.path().join("bn");
    let o = stlcbf(&[
        "train",
        s(&cfg),
        "--iterations",
        "1",
        "--batch",
        "2",
        "--out",
        s(&train),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut other = ScenarioConfig::load(&cfg).unwrap();
    other.synth.kappa = 5.0;
    let other = write_config(dir.path(), "other.toml", &other);
    let ck = train.join("checkpoint.json");
    let o = stlcbf(&["eval", s(&other), "--checkpoint", s(&ck), "--trials", "1"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("hashes to"));
    let o = stlcbf(&["eval", s(&cfg), "--checkpoint", s(&ck), "--trials", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}
