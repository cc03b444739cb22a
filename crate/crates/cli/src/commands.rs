use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mvprobe::dataset::{
    generate, load_dataset, load_manifest, manifest_path, split, write_atomic, DatasetManifest, DatasetRecord, Split,
    SyntheticSpec, DATASET_VERSION,
};
use mvprobe::eval::{
    auroc, jaccard_rescue_rate, knn_accuracy, multilabel_accuracy, nn1_jaccard, occ_from_pool, ovl,
    sign_test_one_sided, similarity_csv, similarity_pairs, single_label_accuracy, top5_rescue_rate, Embedding,
    EvalReport,
};
use mvprobe::probing::{branch_flops, naive_gram_response, response, BranchKind, FlopStrategy, ProbeBank};
use mvprobe::tensor::{gaussian, Matrix, Rng};
use mvprobe::train::{fit_holdout, train as train_model, AdamConfig, EpochLog, TrainConfig};
use mvprobe::verify::{run_suite, Suite, SuiteReport};
use mvprobe::{Error, MVProbeModel, ModelConfig};

use crate::{AblateArgs, EvalArgs, GenArgs, Overrides, ProfileArgs, TrainArgs, VerifyArgs};

/// Split fractions shared by `--split` selection and ablation runs.
pub const SPLIT_FRACTIONS: [f64; 3] = [0.8, 0.1, 0.1];

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Io(String),
    Decode(String),
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Io(_) | CliError::Decode(_) => 3,
            CliError::Verification(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "error[E2-validation]: {m}"),
            CliError::Io(m) => write!(f, "error[E3-io]: {m}"),
            CliError::Decode(m) => write!(f, "error[E3-decode]: {m}"),
            CliError::Verification(m) => write!(f, "error[E4-verification]: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io { .. } => CliError::Io(e.to_string()),
            Error::Decode(_) => CliError::Decode(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Validation(e.to_string()))?;
    text.push('\n');
    Ok(write_atomic(path, text.as_bytes())?)
}

fn timestamp() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// SHA-256 over `blob <len>\0<content>`, the git object framing.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn gen(args: &GenArgs) -> CliResult {
    let text = read_text(&args.spec)?;
    let spec: SyntheticSpec = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("spec {}: {e}", args.spec.display())))?;
    spec.validate()?;
    let (records, frozen) = generate(&Rng::new(args.seed), &spec)?;
    let manifest = DatasetManifest {
        format: "WSDS".into(),
        format_version: DATASET_VERSION,
        generator_tag: spec.family.tag().into(),
        seed: args.seed,
        record_count: records.len(),
        spec,
        frozen_probes: frozen.map(|u| (0..u.rows()).map(|i| u.row(i).to_vec()).collect()),
    };
    mvprobe::dataset::save_dataset(&records, &args.out)?;
    write_json(&manifest_path(&args.out), &manifest)?;
    eprintln!("wrote {} records to {}", records.len(), args.out.display());
    Ok(())
}

/// Flat JSON form of [`Overrides`].
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OverrideFile {
    r: Option<usize>,
    d: Option<usize>,
    d_h: Option<usize>,
    branches: Option<String>,
    epsilon: Option<f64>,
    standardize: Option<bool>,
    epochs: Option<usize>,
    batch: Option<usize>,
    lr: Option<f64>,
    wd: Option<f64>,
    freeze: Option<String>,
    manifest_xu: Option<bool>,
}

/// The effective run configuration, echoed into every output.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSetup {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub manifest_xu: bool,
}

fn resolve(o: &Overrides, m: usize, n: usize, c: usize) -> CliResult<RunSetup> {
    let file: OverrideFile = match &o.config {
        Some(path) => serde_json::from_str(&read_text(path)?)
            .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?,
        None => OverrideFile::default(),
    };
    let mut model = ModelConfig::new(m, n, c);
    model.r = o.r.or(file.r).unwrap_or(model.r);
    model.d = o.d.or(file.d).unwrap_or(model.d);
    model.d_h = o.d_h.or(file.d_h).unwrap_or(model.d_h);
    if let Some(list) = o.branches.as_ref().or(file.branches.as_ref()) {
        model.branches = BranchKind::parse_list(list)?;
    }
    model.epsilon = o.epsilon.or(file.epsilon).unwrap_or(model.epsilon);
    model.standardize = !o.no_standardize && file.standardize.unwrap_or(true);
    model.validate()?;
    let mut train = TrainConfig::default();
    train.epochs = o.epochs.or(file.epochs).unwrap_or(train.epochs);
    train.batch_size = o.batch.or(file.batch).unwrap_or(train.batch_size);
    train.adam = AdamConfig {
        lr: o.lr.or(file.lr).unwrap_or(train.adam.lr),
        weight_decay: o.wd.or(file.wd).unwrap_or(train.adam.weight_decay),
        ..train.adam
    };
    if train.batch_size == 0 {
        return Err(CliError::Validation("batch must be at least 1".into()));
    }
    if !(train.adam.lr >= 0.0 && train.adam.weight_decay >= 0.0) {
        return Err(CliError::Validation("lr and wd must be non-negative".into()));
    }
    if let Some(list) = o.freeze.as_ref().or(file.freeze.as_ref()) {
        train.frozen = BranchKind::parse_list(list)?;
    }
    let manifest_xu = o.manifest_xu || file.manifest_xu.unwrap_or(false);
    if manifest_xu && !train.frozen.contains(&BranchKind::Row) {
        train.frozen.push(BranchKind::Row);
    }
    Ok(RunSetup {
        model,
        train,
        manifest_xu,
    })
}

fn dataset_dims(records: &[DatasetRecord]) -> CliResult<(usize, usize, usize)> {
    let first = records
        .first()
        .ok_or_else(|| CliError::Validation("dataset is empty".into()))?;
    Ok((first.x.rows(), first.x.cols(), first.y.len()))
}

fn select_split(records: Vec<DatasetRecord>, which: &str, seed: u64) -> CliResult<Vec<DatasetRecord>> {
    if which == "all" {
        return Ok(records);
    }
    let parts = split(&records, SPLIT_FRACTIONS, &Rng::new(seed))?;
    let idx = match which {
        "train" => &parts.train,
        "val" => &parts.val,
        "test" => &parts.test,
        other => {
            return Err(CliError::Validation(format!(
                "unknown split {other:?}; valid: all, train, val, test"
            )))
        }
    };
    Ok(Split::select(&records, idx))
}

fn manifest_overrides(data: &Path, setup: &RunSetup) -> CliResult<Vec<(BranchKind, Matrix)>> {
    if !setup.manifest_xu {
        return Ok(Vec::new());
    }
    let u = load_manifest(data)?
        .and_then(|m| m.frozen_matrix())
        .ok_or_else(|| CliError::Validation(format!("{} has no frozen probes in its manifest", data.display())))?;
    if !setup.model.branches.contains(&BranchKind::Row) {
        return Err(CliError::Validation("--manifest-xu needs the xu branch".into()));
    }
    if u.shape() != (setup.model.n, setup.model.r) {
        return Err(CliError::Validation(format!(
            "manifest probes are {}x{} but the xu bank is {}x{}; set --r {}",
            u.rows(),
            u.cols(),
            setup.model.n,
            setup.model.r,
            u.cols()
        )));
    }
    Ok(vec![(BranchKind::Row, u)])
}

#[derive(Serialize)]
struct LogHeader<'a> {
    run: &'a RunSetup,
    data: String,
    data_hash: String,
    split: &'a str,
    seed: u64,
}

pub fn train(args: &TrainArgs) -> CliResult {
    let data_bytes = read_bytes(&args.data)?;
    let records = select_split(load_dataset(&args.data)?, &args.split, args.split_seed)?;
    let (m, n, c) = dataset_dims(&records)?;
    let setup = resolve(&args.overrides, m, n, c)?;
    let rng = Rng::new(args.seed);
    let mut model = MVProbeModel::init(&rng.fork(1), setup.model.clone())?;
    for (kind, probes) in manifest_overrides(&args.data, &setup)? {
        if let Some(bank) = model.banks.iter_mut().find(|b| b.kind == kind) {
            bank.probes = probes;
        }
    }
    let mut log = serde_json::to_string(&LogHeader {
        run: &setup,
        data: args.data.display().to_string(),
        data_hash: content_hash(&data_bytes),
        split: &args.split,
        seed: args.seed,
    })
    .map_err(|e| CliError::Validation(e.to_string()))?;
    log.push('\n');
    let logs: Vec<EpochLog> = train_model(&mut model, &records, &setup.train, &rng.fork(2), |e| {
        eprintln!("epoch {:>4}  loss {:.6}  metric {:.4}", e.epoch, e.mean_loss, e.train_metric);
    })?;
    for entry in &logs {
        log.push_str(&serde_json::to_string(entry).map_err(|e| CliError::Validation(e.to_string()))?);
        log.push('\n');
    }
    write_atomic(&args.out, &model.serialize())?;
    let log_path = args.log.clone().unwrap_or_else(|| with_suffix(&args.out, ".log.jsonl"));
    write_atomic(&log_path, log.as_bytes())?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Task {
    Classification,
    Knn,
    Occ,
    Ovl,
    Auroc,
    Rescue,
}

impl Task {
    const ALL: [(&'static str, Task); 6] = [
        ("classification", Task::Classification),
        ("knn", Task::Knn),
        ("occ", Task::Occ),
        ("ovl", Task::Ovl),
        ("auroc", Task::Auroc),
        ("rescue", Task::Rescue),
    ];

    fn parse_list(s: &str) -> CliResult<Vec<Task>> {
        let mut out = Vec::new();
        for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let task = Task::ALL
                .iter()
                .find(|(name, _)| *name == tok)
                .map(|(_, t)| *t)
                .ok_or_else(|| {
                    let names: Vec<_> = Task::ALL.iter().map(|(n, _)| *n).collect();
                    CliError::Validation(format!("unknown task {tok:?}; valid: {}", names.join(", ")))
                })?;
            if !out.contains(&task) {
                out.push(task);
            }
        }
        if out.is_empty() {
            return Err(CliError::Validation("task list is empty".into()));
        }
        Ok(out)
    }
}

fn parse_ks(s: &str, flag: &str) -> CliResult<Vec<usize>> {
    let ks = s
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<usize>().ok().filter(|k| *k > 0))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| CliError::Validation(format!("--{flag} must be a list of positive integers, got {s:?}")))?;
    if ks.is_empty() {
        return Err(CliError::Validation(format!("--{flag} is empty")));
    }
    Ok(ks)
}

#[derive(Serialize, Deserialize)]
struct EvalEcho {
    model: String,
    data: String,
    baseline: Option<String>,
    tasks: String,
    split: String,
    split_seed: u64,
    knn_k: Vec<usize>,
    occ_k: Vec<usize>,
    seed: u64,
    model_config: ModelConfig,
}

#[derive(Serialize, Deserialize)]
struct EvalOutput {
    timestamp: u64,
    config: EvalEcho,
    input_hashes: BTreeMap<String, String>,
    #[serde(flatten)]
    metrics: EvalReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn embeddings(model: &MVProbeModel, records: &[DatasetRecord]) -> CliResult<Vec<Embedding>> {
    Ok(records
        .par_iter()
        .map(|r| {
            model.embed(&r.x).map(|vector| Embedding {
                vector,
                record_id: r.meta.record_id,
                labels: r.y.clone(),
            })
        })
        .collect::<mvprobe::Result<Vec<_>>>()?)
}

fn load_model(path: &Path) -> CliResult<(MVProbeModel, Vec<u8>)> {
    let bytes = read_bytes(path)?;
    let model = MVProbeModel::deserialize(&bytes).map_err(|e| CliError::Decode(format!("{}: {e}", path.display())))?;
    Ok((model, bytes))
}

fn run_tasks(
    args: &EvalArgs,
    tasks: &[Task],
    model: &MVProbeModel,
    records: &[DatasetRecord],
    echo: &EvalEcho,
    report: &mut EvalReport,
) -> CliResult {
    let needs_embeddings = tasks.iter().any(|t| *t != Task::Classification);
    let emb = if needs_embeddings { embeddings(model, records)? } else { Vec::new() };
    let single_label = records.iter().all(|r| r.y.iter().filter(|b| **b).count() == 1);
    for task in tasks {
        match task {
            Task::Classification => {
                let logits = records
                    .par_iter()
                    .map(|r| model.logits(&r.x))
                    .collect::<mvprobe::Result<Vec<_>>>()?;
                let labels: Vec<Vec<bool>> = records.iter().map(|r| r.y.clone()).collect();
                let scores = multilabel_accuracy(&logits, &labels)?;
                report.multilabel_acc = Some(scores.balanced_accuracy);
                report.subset_jaccard = Some(scores.subset_jaccard);
                if single_label {
                    report.single_label_acc = Some(single_label_accuracy(&logits, &labels)?);
                }
            }
            Task::Knn => {
                for k in &echo.knn_k {
                    report.knn_acc.insert(*k, knn_accuracy(&emb, *k)?);
                }
            }
            Task::Occ => {
                for k in &echo.occ_k {
                    report.occ_acc.insert(*k, occ_from_pool(&emb, *k, &Rng::new(args.seed))?);
                }
            }
            Task::Ovl | Task::Auroc => {
                let (pos, neg) = similarity_pairs(&emb);
                if *task == Task::Ovl {
                    report.ovl = Some(ovl(&pos, &neg, 100)?);
                } else {
                    report.auroc = Some(auroc(&pos, &neg)?);
                }
                if let Some(path) = &args.similarity_csv {
                    write_atomic(path, similarity_csv(&pos, &neg).as_bytes())?;
                }
            }
            Task::Rescue => {
                let path = args
                    .baseline
                    .as_ref()
                    .ok_or_else(|| CliError::Validation("the rescue task needs --baseline".into()))?;
                let (baseline, _) = load_model(path)?;
                let base_emb = embeddings(&baseline, records)?;
                report.rescue_rate = Some(if single_label {
                    top5_rescue_rate(&base_emb, &emb)?
                } else {
                    jaccard_rescue_rate(&base_emb, &emb)?
                });
                let (b, c) = (nn1_jaccard(&base_emb), nn1_jaccard(&emb));
                let better = b.iter().zip(&c).filter(|(x, y)| y > x).count() as u64;
                let worse = b.iter().zip(&c).filter(|(x, y)| y < x).count() as u64;
                if better + worse > 0 {
                    report.sign_test_p = Some(sign_test_one_sided(better, better + worse)?);
                }
            }
        }
    }
    Ok(())
}

pub fn eval(args: &EvalArgs) -> CliResult {
    let tasks = Task::parse_list(&args.tasks)?;
    let knn_k = parse_ks(&args.knn_k, "knn-k")?;
    let occ_k = parse_ks(&args.occ_k, "occ-k")?;
    let (model, model_bytes) = load_model(&args.model)?;
    let data_bytes = read_bytes(&args.data)?;
    let records = select_split(load_dataset(&args.data)?, &args.split, args.split_seed)?;
    let (m, n, c) = dataset_dims(&records)?;
    let cfg = &model.config;
    if (cfg.m, cfg.n, cfg.c) != (m, n, c) {
        return Err(CliError::Validation(format!(
            "model expects {}x{} with {} classes; data is {m}x{n} with {c}",
            cfg.m, cfg.n, cfg.c
        )));
    }
    let mut input_hashes = BTreeMap::from([
        ("model".to_string(), content_hash(&model_bytes)),
        ("data".to_string(), content_hash(&data_bytes)),
    ]);
    if let Some(b) = &args.baseline {
        input_hashes.insert("baseline".into(), content_hash(&read_bytes(b)?));
    }
    let echo = EvalEcho {
        model: args.model.display().to_string(),
        data: args.data.display().to_string(),
        baseline: args.baseline.as_ref().map(|p| p.display().to_string()),
        tasks: args.tasks.clone(),
        split: args.split.clone(),
        split_seed: args.split_seed,
        knn_k,
        occ_k,
        seed: args.seed,
        model_config: model.config.clone(),
    };
    let mut metrics = EvalReport::default();
    let outcome = run_tasks(args, &tasks, &model, &records, &echo, &mut metrics);
    if outcome.is_ok() {
        metrics.validate()?;
    }
    let output = EvalOutput {
        timestamp: timestamp(),
        config: echo,
        input_hashes,
        metrics,
        error: outcome.as_ref().err().map(|e| e.to_string()),
    };
    write_json(&args.report, &output)?;
    outcome
}

#[derive(Serialize)]
struct VerifyOutput {
    timestamp: u64,
    seed: u64,
    pass: bool,
    suites: Vec<SuiteReport>,
}

pub fn verify(args: &VerifyArgs) -> CliResult {
    let suites: Vec<Suite> = if args.suite == "all" {
        Suite::ALL.to_vec()
    } else {
        args.suite
            .split(',')
            .map(|s| s.trim().parse::<Suite>())
            .collect::<mvprobe::Result<_>>()?
    };
    if args.trials == Some(0) {
        return Err(CliError::Validation("--trials must be at least 1".into()));
    }
    let mut reports = Vec::new();
    for suite in suites {
        let trials = args.trials.unwrap_or(suite.default_trials());
        let report = run_suite(suite, trials, args.seed)?;
        eprintln!("{:<11} {}", report.suite, if report.pass { "pass" } else { "FAIL" });
        reports.push(report);
    }
    let pass = reports.iter().all(|r| r.pass);
    let output = VerifyOutput {
        timestamp: timestamp(),
        seed: args.seed,
        pass,
        suites: reports,
    };
    match &args.report {
        Some(path) => write_json(path, &output)?,
        None => println!(
            "{}",
            serde_json::to_string_pretty(&output).map_err(|e| CliError::Validation(e.to_string()))?
        ),
    }
    if pass {
        Ok(())
    } else {
        let failed: Vec<_> = output.suites.iter().filter(|r| !r.pass).map(|r| r.suite.as_str()).collect();
        Err(CliError::Verification(format!("failed suites: {}", failed.join(", "))))
    }
}

pub fn ablate(args: &AblateArgs) -> CliResult {
    let mut sets: Vec<Vec<BranchKind>> = Vec::new();
    for raw in args.branch_sets.split(';').map(str::trim).filter(|s| !s.is_empty()) {
        let set = BranchKind::parse_list(raw)?;
        if sets.contains(&set) {
            eprintln!("warning: duplicate branch set `{raw}` skipped");
            continue;
        }
        sets.push(set);
    }
    if sets.is_empty() {
        return Err(CliError::Validation("--branch-sets is empty".into()));
    }
    let std_flags: Vec<bool> = match args.std.as_str() {
        "on" => vec![true],
        "off" => vec![false],
        "both" => vec![true, false],
        other => return Err(CliError::Validation(format!("--std must be on, off or both, got {other:?}"))),
    };
    let records = load_dataset(&args.data)?;
    let (m, n, c) = dataset_dims(&records)?;
    let base = resolve(&args.overrides, m, n, c)?;
    let overrides = manifest_overrides(&args.data, &base)?;
    let mut csv = String::from("branches,standardize,balanced_accuracy,subset_jaccard\n");
    for set in &sets {
        for &standardize in &std_flags {
            let model_config = ModelConfig {
                branches: set.clone(),
                standardize,
                ..base.model.clone()
            };
            model_config.validate()?;
            let applicable: Vec<(BranchKind, Matrix)> =
                overrides.iter().filter(|(k, _)| set.contains(k)).cloned().collect();
            let run = fit_holdout(
                &records,
                model_config,
                &base.train,
                SPLIT_FRACTIONS,
                &applicable,
                &Rng::new(args.seed),
            )?;
            let name = BranchKind::list_token(set);
            eprintln!("{name:<24} std={standardize:<5} acc={:.4}", run.test_balanced_accuracy);
            csv.push_str(&format!(
                "\"{name}\",{standardize},{},{}\n",
                run.test_balanced_accuracy, run.test_subset_jaccard
            ));
        }
    }
    Ok(write_atomic(&args.out, csv.as_bytes())?)
}

#[derive(Serialize)]
struct BranchProfile {
    branch: String,
    flops_associative: u64,
    flops_naive: u64,
    median_ms_associative: f64,
    median_ms_naive: f64,
}

#[derive(Serialize)]
struct ProfileOutput {
    timestamp: u64,
    m: usize,
    n: usize,
    r: usize,
    repeats: usize,
    branches: Vec<BranchProfile>,
}

fn median_ms(repeats: usize, mut f: impl FnMut() -> mvprobe::Result<()>) -> CliResult<f64> {
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        f()?;
        times.push(start.elapsed());
    }
    times.sort();
    let mid = times.len() / 2;
    let median = if times.len() % 2 == 1 {
        times[mid]
    } else {
        (times[mid - 1] + times[mid]) / 2
    };
    Ok(Duration::as_secs_f64(&median) * 1e3)
}

pub fn profile(args: &ProfileArgs) -> CliResult {
    if args.m == 0 || args.n == 0 || args.r == 0 {
        return Err(CliError::Validation("m, n and r must be at least 1".into()));
    }
    if args.repeats == 0 {
        return Err(CliError::Validation("--repeats must be at least 1".into()));
    }
    let mut rng = Rng::new(args.seed);
    let x = gaussian(&mut rng, args.m, args.n, 1.0)?;
    let mut branches = Vec::new();
    for kind in BranchKind::ALL {
        let bank = ProbeBank::new(kind, gaussian(&mut rng, kind.probe_rows(args.m, args.n), args.r, 1.0)?);
        let (m, n, r) = (args.m as u64, args.n as u64, args.r as u64);
        branches.push(BranchProfile {
            branch: kind.token().into(),
            flops_associative: branch_flops(m, n, r, kind, FlopStrategy::Associative),
            flops_naive: branch_flops(m, n, r, kind, FlopStrategy::NaiveGram),
            median_ms_associative: median_ms(args.repeats, || response(&x, &bank).map(drop))?,
            median_ms_naive: median_ms(args.repeats, || naive_gram_response(&x, &bank).map(drop))?,
        });
    }
    let output = ProfileOutput {
        timestamp: timestamp(),
        m: args.m,
        n: args.n,
        r: args.r,
        repeats: args.repeats,
        branches,
    };
    match &args.report {
        Some(path) => write_json(path, &output),
        None => {
            println!(
                "{}",
                serde_json::to_string_pretty(&output).map_err(|e| CliError::Validation(e.to_string()))?
            );
            Ok(())
        }
    }
}
