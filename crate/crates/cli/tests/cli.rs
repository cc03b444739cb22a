use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mvprobe::eval::EvalReport;
use mvprobe::{MVProbeModel, ModelConfig, Rng};
use tempfile::TempDir;

const SMALL: &[&str] = &["--r", "3", "--d", "4", "--d-h", "6", "--batch", "8"];

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mvprobe"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn mvprobe")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_spec(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

const ADVERSARIAL: &str = r#"{"family":"NullspaceAdversarial","m":6,"n":5,"classes":3,"per_class":6,
  "labels_per_sample":1,"signal_strength":1.0,"noise_sigma":0.01,"rank":1,"probe_count":3}"#;

fn dataset(dir: &Path) -> PathBuf {
    let spec = write_spec(dir, "adv.json", ADVERSARIAL);
    let out = dir.join("adv.wsds");
    let o = run(&["gen", "--spec", p(&spec), "--out", p(&out), "--seed", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn gen_is_reproducible_and_counts_records() {
    let dir = TempDir::new().unwrap();
    let spec = write_spec(
        dir.path(),
        "default.json",
        r#"{"family":"NullspaceAdversarial","m":32,"n":24,"classes":4,"per_class":100,
            "labels_per_sample":1,"signal_strength":1.0,"noise_sigma":0.01,"rank":1}"#,
    );
    let a = dir.path().join("a.wsds");
    let b = dir.path().join("b.wsds");
    for out in [&a, &b] {
        assert!(run(&["gen", "--spec", p(&spec), "--out", p(out), "--seed", "9"]).status.success());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a.wsds.json")).unwrap()).unwrap();
    assert_eq!(manifest["record_count"], 400);
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["format_version"], 1);
}

#[test]
fn gen_rejects_invalid_specs() {
    let dir = TempDir::new().unwrap();
    let too_many = write_spec(
        dir.path(),
        "bad.json",
        r#"{"family":"PlantedLowRank","m":4,"n":4,"classes":2,"per_class":2,
            "labels_per_sample":3,"signal_strength":1.0,"noise_sigma":0.1,"rank":1}"#,
    );
    let o = run(&["gen", "--spec", p(&too_many), "--out", p(&dir.path().join("x.wsds"))]);
    assert_eq!(o.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.starts_with("error[E2-validation]") && stderr.contains("labels_per_sample"), "{stderr}");

    let unknown = write_spec(dir.path(), "unknown.json", r#"{"family":"PlantedLowRank","colour":1}"#);
    let o = run(&["gen", "--spec", p(&unknown), "--out", p(&dir.path().join("y.wsds"))]);
    assert_eq!(o.status.code(), Some(2));

    let o = run(&["gen", "--spec", p(&dir.path().join("missing.json")), "--out", "z"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.json"));
}

#[test]
fn zero_epochs_and_zero_lr_keep_the_initialization() {
    let dir = TempDir::new().unwrap();
    let data = dataset(dir.path());
    let init = dir.path().join("init.mvpb");
    let frozen_lr = dir.path().join("lr0.mvpb");
    let mut a = vec!["train", "--data", p(&data), "--out", p(&init), "--seed", "3", "--epochs", "0"];
    a.extend(SMALL);
    assert!(run(&a).status.success());
    let mut b = vec!["train", "--data", p(&data), "--out", p(&frozen_lr), "--seed", "3", "--epochs", "3", "--lr", "0"];
    b.extend(SMALL);
    assert!(run(&b).status.success());

    let expected = MVProbeModel::init(
        &Rng::new(3).fork(1),
        ModelConfig {
            r: 3,
            d: 4,
            d_h: 6,
            ..ModelConfig::new(6, 5, 3)
        },
    )
    .unwrap()
    .serialize();
    assert_eq!(std::fs::read(&init).unwrap(), expected);
    assert_eq!(std::fs::read(&frozen_lr).unwrap(), expected);

    let log = std::fs::read_to_string(dir.path().join("lr0.mvpb.log.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0]["run"]["train"]["epochs"], 3);
    assert_eq!(lines[3]["epoch"], 2);
}

#[test]
fn training_is_byte_reproducible_and_xu_only_is_a_single_branch() {
    let dir = TempDir::new().unwrap();
    let data = dataset(dir.path());
    let outs = [dir.path().join("a.mvpb"), dir.path().join("b.mvpb")];
    for out in &outs {
        let mut a = vec!["train", "--data", p(&data), "--out", p(out), "--epochs", "2", "--branches", "xu", "--manifest-xu"];
        a.extend(SMALL);
        let o = run(&a);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let bytes = std::fs::read(&outs[0]).unwrap();
    assert_eq!(bytes, std::fs::read(&outs[1]).unwrap());
    let model = MVProbeModel::deserialize(&bytes).unwrap();
    assert_eq!(model.config.branches, vec![mvprobe::BranchKind::Row]);
    assert_eq!(model.banks[0].probes.shape(), (5, 3));
}

#[test]
fn unknown_branch_token_lists_valid_tokens() {
    let dir = TempDir::new().unwrap();
    let data = dataset(dir.path());
    let o = run(&["train", "--data", p(&data), "--out", p(&dir.path().join("m")), "--branches", "xu,xz"]);
    assert_eq!(o.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("xu, xtv, xxtw, xtxz, o3r, o3c, o4r, o4c"), "{stderr}");
}

#[test]
fn eval_reports_and_protocol_errors() {
    let dir = TempDir::new().unwrap();
    let data = dataset(dir.path());
    let model = dir.path().join("m.mvpb");
    let mut a = vec!["train", "--data", p(&data), "--out", p(&model), "--epochs", "2"];
    a.extend(SMALL);
    assert!(run(&a).status.success());

    let report = dir.path().join("r.json");
    let o = run(&[
        "eval", "--model", p(&model), "--data", p(&data), "--tasks", "classification,knn,ovl,auroc", "--report",
        p(&report),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&report).unwrap();
    let parsed: EvalReport = serde_json::from_str(&text).unwrap();
    parsed.validate().unwrap();
    assert!(parsed.multilabel_acc.is_some() && parsed.knn_acc.contains_key(&5));
    let raw: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(raw["input_hashes"]["data"].as_str().unwrap().len(), 64);
    assert_eq!(raw["config"]["model_config"]["branches"][0], "xu");

    let o = run(&["eval", "--model", p(&model), "--data", p(&data), "--tasks", "", "--report", p(&report)]);
    assert_eq!(o.status.code(), Some(2));

    // six members per class cannot supply ten references
    let occ = dir.path().join("occ.json");
    let o = run(&[
        "eval", "--model", p(&model), "--data", p(&data), "--tasks", "occ", "--occ-k", "10", "--report", p(&occ),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let raw: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&occ).unwrap()).unwrap();
    assert!(raw["error"].as_str().unwrap().contains("k=10"));
}

#[test]
fn eval_rejects_mismatched_dimensions() {
    let dir = TempDir::new().unwrap();
    let data = dataset(dir.path());
    let model = dir.path().join("other.mvpb");
    let other = MVProbeModel::init(&Rng::new(1), ModelConfig { r: 2, d: 2, d_h: 2, ..ModelConfig::new(7, 5, 3) }).unwrap();
    std::fs::write(&model, other.serialize()).unwrap();
    let o = run(&[
        "eval", "--model", p(&model), "--data", p(&data), "--tasks", "classification", "--report",
        p(&dir.path().join("r.json")),
    ]);
    assert_eq!(o.status.code(), Some(2));

    let mut bytes = other.serialize();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&model, bytes).unwrap();
    let o = run(&[
        "eval", "--model", p(&model), "--data", p(&data), "--tasks", "classification", "--report",
        p(&dir.path().join("r.json")),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error[E3-decode]"));
}

#[test]
fn verify_suites_report_worst_cases() {
    let o = run(&["verify", "--suite", "thm1,gradcheck", "--trials", "5", "--seed", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["pass"], true);
    assert_eq!(report["suites"][0]["suite"], "thm1");
    assert!(report["suites"][1]["worst_case_values"]["max_rel_error"].as_f64().unwrap() < 1e-4);

    let o = run(&["verify", "--suite", "thm9"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["verify", "--suite", "thm1", "--trials", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ablate_emits_one_row_per_configuration() {
    let dir = TempDir::new().unwrap();
    let data = dataset(dir.path());
    let csv = dir.path().join("ablate.csv");
    let sets = "xu;xtv;xxtw;xtxz;xu,xtv;xxtw,xtxz;xu,xtv,xxtw,xtxz";
    let mut a = vec!["ablate", "--data", p(&data), "--branch-sets", sets, "--out", p(&csv), "--epochs", "1"];
    a.extend(SMALL);
    let o = run(&a);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let first = std::fs::read(&csv).unwrap();
    assert_eq!(String::from_utf8_lossy(&first).lines().count(), 1 + 7);

    let both = dir.path().join("both.csv");
    let mut a = vec![
        "ablate", "--data", p(&data), "--branch-sets", "xu;xu;xtv", "--std", "both", "--out", p(&both), "--epochs", "1",
    ];
    a.extend(SMALL);
    let o = run(&a);
    assert!(String::from_utf8_lossy(&o.stderr).contains("duplicate branch set"));
    assert_eq!(std::fs::read_to_string(&both).unwrap().lines().count(), 1 + 4);

    let mut a = vec!["ablate", "--data", p(&data), "--branch-sets", sets, "--out", p(&csv), "--epochs", "1"];
    a.extend(SMALL);
    assert!(run(&a).status.success());
    assert_eq!(std::fs::read(&csv).unwrap(), first);
}

#[test]
fn profile_reports_flops_and_medians() {
    let o = run(&["profile", "--m", "64", "--n", "48", "--r", "8", "--repeats", "1"]);
    assert!(o.status.success());
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let rows = report["branches"].as_array().unwrap();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r["median_ms_naive"].as_f64().is_some()));
    let kernel = rows.iter().find(|r| r["branch"] == "xxtw").unwrap();
    assert_eq!(kernel["flops_associative"], 2 * 2 * 64 * 48 * 8);

    let o = run(&["profile", "--m", "4", "--n", "4", "--r", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn thread_override_must_be_numeric() {
    let o = bin()
        .args(["verify", "--suite", "thm1", "--trials", "1"])
        .env("MVPROBE_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
