//! BCE objective, exact reverse-mode gradients through the whole probe
//! network, Adam, and a central-difference gradient checker.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{split, DatasetRecord, Split};
use crate::error::{Error, Result};
use crate::eval::multilabel_accuracy;
use crate::model::{ForwardTrace, MVProbeModel, ModelConfig};
use crate::probing::{apply_chain_adjoint, BranchKind};
use crate::tensor::{Matrix, Rng};

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy over classes, with its gradient w.r.t. the logits.
pub fn bce_loss(logits: &[f64], y: &[bool]) -> (f64, Vec<f64>) {
    assert_eq!(logits.len(), y.len(), "logits/labels length mismatch");
    let c = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &t) in logits.iter().zip(y) {
        let t = if t { 1.0 } else { 0.0 };
        loss += z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
        grad.push((sigmoid(z) - t) / c);
    }
    (loss / c, grad)
}

/// One gradient tensor per model parameter, in [`MVProbeModel::params`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub tensors: Vec<Matrix>,
}

impl GradientSet {
    pub fn zeros_like(model: &MVProbeModel) -> Self {
        GradientSet {
            tensors: model.params().iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &GradientSet) -> Result<()> {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale_assign(&mut self, alpha: f64) {
        self.tensors.iter_mut().for_each(|t| t.scale_assign(alpha));
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors.iter().map(Matrix::max_abs).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::is_finite)
    }
}

fn outer_into(dst: &mut Matrix, left: &[f64], right: &[f64]) {
    for (i, l) in left.iter().enumerate() {
        if *l == 0.0 {
            continue;
        }
        for (j, r) in right.iter().enumerate() {
            let v = dst.get(i, j) + l * r;
            dst.set(i, j, v);
        }
    }
}

/// `Wᵀ g` for a row-major `out × in` weight.
fn weight_t_times(weight: &Matrix, g: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; weight.cols()];
    for (i, gi) in g.iter().enumerate() {
        if *gi == 0.0 {
            continue;
        }
        for (o, w) in out.iter_mut().zip(weight.row(i)) {
            *o += gi * w;
        }
    }
    out
}

fn relu_backward(upstream: &[f64], pre: &[f64]) -> Vec<f64> {
    upstream
        .iter()
        .zip(pre)
        .map(|(g, p)| if *p > 0.0 { *g } else { 0.0 })
        .collect()
}

/// Backward pass of per-sample standardization `(S − μ)/(σ + ε)`.
fn standardize_backward(raw: &Matrix, mean: f64, std: f64, epsilon: f64, upstream: &Matrix) -> Matrix {
    let count = raw.len() as f64;
    let denom = std + epsilon;
    let g = upstream.as_slice();
    let g_mean = g.iter().sum::<f64>() / count;
    let centered: Vec<f64> = raw.as_slice().iter().map(|v| v - mean).collect();
    let coupling = if std > 0.0 {
        g.iter().zip(&centered).map(|(a, b)| a * b).sum::<f64>() / (denom * denom * count * std)
    } else {
        0.0
    };
    let data = g
        .iter()
        .zip(&centered)
        .map(|(gi, ci)| (gi - g_mean) / denom - coupling * ci)
        .collect();
    Matrix::from_vec(raw.rows(), raw.cols(), data).expect("shape preserved")
}

/// Exact gradients of the loss for one sample, given its forward trace.
pub fn backward(model: &MVProbeModel, trace: &ForwardTrace, dloss_dlogits: &[f64]) -> Result<GradientSet> {
    let cfg = &model.config;
    if trace.branches.len() != model.banks.len()
        || trace.logits.len() != cfg.c
        || dloss_dlogits.len() != cfg.c
        || trace.x.shape() != (cfg.m, cfg.n)
        || trace.encoder_pre.is_some() != model.encoder.is_some()
        || trace.branches.iter().zip(&model.banks).any(|(t, b)| t.kind != b.kind)
    {
        return Err(Error::Consistency("forward trace does not match the model".into()));
    }
    let mut grads = GradientSet::zeros_like(model);
    let nb = model.banks.len();
    let total = grads.tensors.len();

    // classifier
    outer_into(&mut grads.tensors[total - 2], dloss_dlogits, &trace.hidden);
    grads.tensors[total - 1] = Matrix::column(dloss_dlogits);
    let d_hidden = weight_t_times(&model.classifier.weight, dloss_dlogits);

    let d_fused = match (&model.encoder, &trace.encoder_pre) {
        (Some(enc), Some(pre)) => {
            let d_pre = relu_backward(&d_hidden, pre);
            outer_into(&mut grads.tensors[total - 4], &d_pre, &trace.fused);
            grads.tensors[total - 3] = Matrix::column(&d_pre);
            weight_t_times(&enc.weight, &d_pre)
        }
        _ => d_hidden,
    };

    for (i, (bt, proj)) in trace.branches.iter().zip(&model.projections).enumerate() {
        let block = &d_fused[i * cfg.d..(i + 1) * cfg.d];
        let d_pre = relu_backward(block, &bt.pre_activation);
        let w_idx = nb + 2 * i;
        outer_into(&mut grads.tensors[w_idx], &d_pre, bt.standardized.as_slice());
        grads.tensors[w_idx + 1] = Matrix::column(&d_pre);
        let d_std = Matrix::from_vec(
            bt.raw.rows(),
            bt.raw.cols(),
            weight_t_times(&proj.weight, &d_pre),
        )?;
        let d_raw = if cfg.standardize {
            standardize_backward(&bt.raw, bt.mean, bt.std, cfg.epsilon, &d_std)
        } else {
            d_std
        };
        grads.tensors[i] = apply_chain_adjoint(&trace.x, bt.kind, &d_raw)?;
    }
    Ok(grads)
}

/// Loss, gradients and logits for one `(X, y)` pair.
pub fn sample_gradient(model: &MVProbeModel, x: &Matrix, y: &[bool]) -> Result<(f64, GradientSet, Vec<f64>)> {
    let (logits, trace) = model.forward(x, true)?;
    let (loss, dlogits) = bce_loss(&logits, y);
    let grads = backward(model, &trace.expect("trace requested"), &dlogits)?;
    Ok((loss, grads, logits))
}

/// Mean loss and mean gradient over a batch, reduced in input order.
pub fn batch_gradient(model: &MVProbeModel, batch: &[&DatasetRecord]) -> Result<(f64, GradientSet, Vec<Vec<f64>>)> {
    if batch.is_empty() {
        return Err(Error::Dataset("empty batch".into()));
    }
    let per_sample: Vec<(f64, GradientSet, Vec<f64>)> = batch
        .par_iter()
        .map(|rec| sample_gradient(model, &rec.x, &rec.y))
        .collect::<Result<_>>()?;
    let mut total = GradientSet::zeros_like(model);
    let mut loss = 0.0;
    let mut logits = Vec::with_capacity(batch.len());
    for (l, g, z) in per_sample {
        loss += l;
        total.add_assign(&g)?;
        logits.push(z);
    }
    let inv = 1.0 / batch.len() as f64;
    total.scale_assign(inv);
    Ok((loss * inv, total, logits))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Coupled L2 penalty added to the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m1: Vec<Matrix>,
    pub m2: Vec<Matrix>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[&Matrix]) -> Self {
        let zeros = |p: &&Matrix| Matrix::zeros(p.rows(), p.cols());
        AdamState {
            config,
            step: 0,
            m1: params.iter().map(zeros).collect(),
            m2: params.iter().map(zeros).collect(),
        }
    }
}

/// One bias-corrected Adam update. Tensors with `trainable[i] == false` are
/// left untouched (their moments stay zero).
pub fn adam_step(
    params: Vec<&mut Matrix>,
    grads: &GradientSet,
    state: &mut AdamState,
    trainable: &[bool],
) -> Result<()> {
    if params.len() != grads.tensors.len() || params.len() != state.m1.len() || params.len() != trainable.len() {
        return Err(Error::Consistency("adam: parameter/gradient/state counts differ".into()));
    }
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
        weight_decay,
    } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for (i, p) in params.into_iter().enumerate() {
        if !trainable[i] {
            continue;
        }
        let g = &grads.tensors[i];
        if g.shape() != p.shape() {
            return Err(Error::Shape {
                op: "adam_step",
                left: p.shape_str(),
                right: g.shape_str(),
            });
        }
        let m1 = state.m1[i].as_mut_slice();
        let m2 = state.m2[i].as_mut_slice();
        for (k, theta) in p.as_mut_slice().iter_mut().enumerate() {
            let gk = g.as_slice()[k] + weight_decay * *theta;
            m1[k] = beta1 * m1[k] + (1.0 - beta1) * gk;
            m2[k] = beta2 * m2[k] + (1.0 - beta2) * gk * gk;
            let m_hat = m1[k] / bc1;
            let v_hat = m2[k] / bc2;
            *theta -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Branches whose probe banks stay fixed at their current values.
    pub frozen: Vec<BranchKind>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 128,
            adam: AdamConfig::default(),
            frozen: Vec::new(),
        }
    }
}

/// One JSON-lines record of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Class-mean balanced accuracy of the pre-update predictions seen this epoch.
    pub train_metric: f64,
}

const SHUFFLE_STREAM: u64 = 0x5A0F;

pub fn check_dataset(model: &MVProbeModel, data: &[DatasetRecord]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Dataset("dataset is empty".into()));
    }
    let cfg = &model.config;
    for rec in data {
        if rec.x.shape() != (cfg.m, cfg.n) || rec.y.len() != cfg.c {
            return Err(Error::Dataset(format!(
                "record {} has shape {} with {} labels; model expects {}x{} with {}",
                rec.meta.record_id,
                rec.x.shape_str(),
                rec.y.len(),
                cfg.m,
                cfg.n,
                cfg.c
            )));
        }
    }
    Ok(())
}

/// Mini-batch Adam training with a per-epoch reshuffle.
///
/// Shuffling draws from a fork of `rng` so data order never aliases the
/// stream used for parameter initialization.
pub fn train(
    model: &mut MVProbeModel,
    data: &[DatasetRecord],
    config: &TrainConfig,
    rng: &Rng,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    check_dataset(model, data)?;
    if config.batch_size == 0 {
        return Err(Error::param("batch_size", "must be at least 1"));
    }
    let trainable: Vec<bool> = {
        let nb = model.banks.len();
        let total = model.params().len();
        (0..total)
            .map(|i| i >= nb || !config.frozen.contains(&model.banks[i].kind))
            .collect()
    };
    let mut adam = AdamState::new(config.adam, &model.params());
    let mut shuffle_rng = rng.fork(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut logs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut seen_logits = Vec::with_capacity(data.len());
        let mut seen_labels = Vec::with_capacity(data.len());
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&DatasetRecord> = chunk.iter().map(|&i| &data[i]).collect();
            let (loss, grads, logits) = batch_gradient(model, &batch)?;
            loss_sum += loss * batch.len() as f64;
            seen_logits.extend(logits);
            seen_labels.extend(batch.iter().map(|r| r.y.clone()));
            adam_step(model.params_mut(), &grads, &mut adam, &trainable)?;
        }
        let metric = multilabel_accuracy(&seen_logits, &seen_labels)?.balanced_accuracy;
        let log = EpochLog {
            epoch,
            mean_loss: loss_sum / data.len() as f64,
            train_metric: metric,
        };
        on_epoch(&log);
        logs.push(log);
    }
    Ok(logs)
}

/// Held-out outcome of one train-and-score run.
#[derive(Clone, Debug)]
pub struct HoldoutRun {
    pub model: MVProbeModel,
    pub logs: Vec<EpochLog>,
    pub test_balanced_accuracy: f64,
    pub test_subset_jaccard: f64,
}

/// Splits `records`, trains a fresh model on the train part and scores the test part.
///
/// Initialization uses `rng.fork(1)` and shuffling `rng.fork(2)`. Banks listed
/// in `overrides` replace the initialized probes before training.
pub fn fit_holdout(
    records: &[DatasetRecord],
    model_config: ModelConfig,
    train_config: &TrainConfig,
    fractions: [f64; 3],
    overrides: &[(BranchKind, Matrix)],
    rng: &Rng,
) -> Result<HoldoutRun> {
    let parts = split(records, fractions, rng)?;
    let train_set = Split::select(records, &parts.train);
    let test_set = Split::select(records, &parts.test);
    if test_set.is_empty() {
        return Err(Error::Dataset("held-out split is empty".into()));
    }
    let mut model = MVProbeModel::init(&rng.fork(1), model_config)?;
    for (kind, probes) in overrides {
        let bank = model
            .banks
            .iter_mut()
            .find(|b| b.kind == *kind)
            .ok_or_else(|| Error::param("overrides", format!("model has no `{kind}` branch")))?;
        if bank.probes.shape() != probes.shape() {
            return Err(Error::Shape {
                op: "fit_holdout",
                left: bank.probes.shape_str(),
                right: probes.shape_str(),
            });
        }
        bank.probes = probes.clone();
    }
    let logs = train(&mut model, &train_set, train_config, &rng.fork(2), |_| {})?;
    let logits = test_set
        .par_iter()
        .map(|r| model.logits(&r.x))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<Vec<bool>> = test_set.iter().map(|r| r.y.clone()).collect();
    let scores = multilabel_accuracy(&logits, &labels)?;
    Ok(HoldoutRun {
        model,
        logs,
        test_balanced_accuracy: scores.balanced_accuracy,
        test_subset_jaccard: scores.subset_jaccard,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub excluded_near_kink: usize,
}

/// Guard below which a ReLU pre-activation counts as sitting on the kink.
pub const KINK_TOLERANCE: f64 = 1e-6;
/// Denominator floor of the relative error `|a − f| / max(|a|, |f|, floor)`.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

fn relu_signs(trace: &ForwardTrace) -> (Vec<bool>, f64) {
    let mut closest = f64::INFINITY;
    let signs = trace
        .relu_inputs()
        .map(|v| {
            closest = closest.min(v.abs());
            v > 0.0
        })
        .collect();
    (signs, closest)
}

/// Compares analytic gradients with central differences on every parameter.
///
/// A parameter is skipped when either perturbation moves some ReLU input
/// across zero or within [`KINK_TOLERANCE`] of it.
pub fn gradient_check(model: &MVProbeModel, x: &Matrix, y: &[bool], h: f64) -> Result<GradCheckReport> {
    let (_, analytic, _) = sample_gradient(model, x, y)?;
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        excluded_near_kink: 0,
    };
    let n_tensors = analytic.tensors.len();
    for t in 0..n_tensors {
        for k in 0..analytic.tensors[t].len() {
            let original = probe.params()[t].as_slice()[k];
            let mut eval = |value: f64| -> Result<(f64, Vec<bool>, f64)> {
                probe.params_mut()[t].as_mut_slice()[k] = value;
                let (logits, trace) = probe.forward(x, true)?;
                let (signs, closest) = relu_signs(trace.as_ref().expect("trace"));
                Ok((bce_loss(&logits, y).0, signs, closest))
            };
            let (plus, s_plus, c_plus) = eval(original + h)?;
            let (minus, s_minus, c_minus) = eval(original - h)?;
            probe.params_mut()[t].as_mut_slice()[k] = original;
            if s_plus != s_minus || c_plus < KINK_TOLERANCE || c_minus < KINK_TOLERANCE {
                report.excluded_near_kink += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.tensors[t].as_slice()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}
