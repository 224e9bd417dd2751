use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_maharam"))
}

fn schema(name: &str) -> Value {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas").join(name);
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    let mut cmd = bin();
    cmd.arg("--out").arg(dir).args(args);
    cmd.output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, body).unwrap();
    p
}

fn csvs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().map_or(false, |e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

const SMALL: &str = r#"{
  "master_seed": 11,
  "group": {"kind": "Z"},
  "family": {"kind": "z_demo"},
  "experiments": [
    {"kind": "kakutani", "g": "1", "radii": [10, 100]},
    {"kind": "clt", "n": [1, 50], "samples": 500},
    {"kind": "build-phi", "t": 0.3, "eps": 0.2, "window": ["0"], "domain_samples": 500},
    {"kind": "l2-tail", "radii": [5, 10]}
  ]
}"#;

#[test]
fn report_is_reproducible_and_parses() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let out = run_in(d, &["--config", cfg.to_str().unwrap(), "report"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let (ca, cb) = (csvs(&a), csvs(&b));
    assert!(ca.len() >= 4);
    assert_eq!(ca, cb);

    for (name, body) in &ca {
        let mut rdr = csv::Reader::from_reader(body.as_slice());
        let width = rdr.headers().unwrap().len();
        let rows: Vec<_> = rdr.records().collect::<Result<_, _>>().unwrap();
        assert!(rows.iter().all(|r| r.len() == width), "{name}");
    }

    let report: Value = serde_json::from_str(&fs::read_to_string(a.join("report.json")).unwrap()).unwrap();
    let v = jsonschema::validator_for(&schema("report.schema.json")).unwrap();
    assert!(v.is_valid(&report), "{:?}", v.iter_errors(&report).map(|e| e.to_string()).collect::<Vec<_>>());
    assert_eq!(report["experiments"].as_array().unwrap().len(), 4);
}

#[test]
fn shipped_config_schema_accepts_examples() {
    let v = jsonschema::validator_for(&schema("config.schema.json")).unwrap();
    let good: Value = serde_json::from_str(SMALL).unwrap();
    assert!(v.is_valid(&good));
    let ratio: Value = serde_json::from_str(
        r#"{"master_seed": 1, "group": {"kind": "Z"}, "family": {"kind": "finitely_perturbed", "values": {"0": 0.6}},
            "experiments": [{"kind": "ratio-set", "cylinder": [["0", 0]], "grid": [0, 0.5]},
                            {"kind": "maharam-check", "g": ["1"], "cylinder": [["0", 1]], "interval": [0, 1]}]}"#,
    )
    .unwrap();
    assert!(v.is_valid(&ratio));
    let bad: Value = serde_json::from_str(r#"{"master_seed": 1, "group": {"kind": "Q"}, "family": {"kind": "constant"}}"#).unwrap();
    assert!(!v.is_valid(&bad));
    let missing_seed: Value = serde_json::from_str(r#"{"group": {"kind": "Z"}, "family": {"kind": "constant"}}"#).unwrap();
    assert!(!v.is_valid(&missing_seed));
}

#[test]
fn subcommand_writes_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(tmp.path(), &["check-kakutani", "--g", "-1", "--radii", "10,100"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let files = csvs(tmp.path());
    assert!(files.keys().all(|k| k.starts_with("00_kakutani_")), "{:?}", files.keys());
    let body = files.values().next().unwrap();
    let rows = csv::Reader::from_reader(body.as_slice()).records().count();
    assert_eq!(rows, 2);
}

#[test]
fn ratio_set_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(
        tmp.path(),
        &["ratio-set", "--cylinder", r#"[["0",0]]"#, "--grid", "0,0.5", "--eps", "0.1", "--radius", "50", "--seeds", "20"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("report.json").exists());
    assert!(csvs(tmp.path()).keys().any(|k| k.contains("ratio-set")));
}

#[test]
fn seed_override_changes_sampled_output() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for (d, seed) in [(&a, "1"), (&b, "2")] {
        let out = run_in(d, &["--seed", seed, "clt", "--n", "20", "--samples", "300"]);
        assert!(out.status.success());
    }
    assert_ne!(csvs(&a), csvs(&b));
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"master_seed": 1, "group": {"kind": "Q"}, "family": {"kind": "constant"}}"#);
    let out = run_in(tmp.path(), &["--config", cfg.to_str().unwrap(), "report"]);
    assert_eq!(out.status.code(), Some(2));

    let cfg = write_config(tmp.path(), r#"{"group": {"kind": "Z"}, "family": {"kind": "constant"}}"#);
    let out = run_in(tmp.path(), &["--config", cfg.to_str().unwrap(), "report"]);
    assert_eq!(out.status.code(), Some(2));

    let out = run_in(tmp.path(), &["ratio-set", "--cylinder", "not json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn resource_cap_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"master_seed": 1, "group": {"kind": "Z"}, "family": {"kind": "z_demo"},
            "limits": {"max_radius": 10},
            "experiments": [{"kind": "kakutani", "radii": [1000]}]}"#,
    );
    let out = run_in(tmp.path(), &["--config", cfg.to_str().unwrap(), "report"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unwritable_destination_exit_5() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = run_in(&blocker.join("sub"), &["l2-tail", "--radii", "3"]);
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn empty_experiment_list_writes_valid_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"master_seed": 3, "group": {"kind": "F2"}, "family": {"kind": "f2_radial"}}"#);
    let out = run_in(tmp.path(), &["--config", cfg.to_str().unwrap(), "report"]);
    assert!(out.status.success());
    let report: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("report.json")).unwrap()).unwrap();
    assert!(jsonschema::validator_for(&schema("report.schema.json")).unwrap().is_valid(&report));
    assert!(csvs(tmp.path()).is_empty());
}
