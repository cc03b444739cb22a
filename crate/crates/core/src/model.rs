//! The multi-view probe network and its `MVPB` checkpoint format.
//!
//! Forward pass per sample: every enabled branch computes its probe response,
//! standardizes it over all entries, flattens row-major, applies an affine
//! projection with ReLU; the branch features are concatenated in branch
//! order, optionally passed through an affine+ReLU encoder, and a final
//! affine classifier yields logits.

use serde::{Deserialize, Serialize};

use crate::error::{DecodeError, Error, Result};
use crate::probing::{response, BranchKind, ProbeBank};
use crate::tensor::{xavier_uniform, Matrix, Rng, DEFAULT_EPSILON};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub m: usize,
    pub n: usize,
    /// Probes per branch.
    pub r: usize,
    /// Per-branch projection width.
    pub d: usize,
    /// Encoder width; 0 bypasses the encoder.
    pub d_h: usize,
    /// Number of classes.
    pub c: usize,
    pub branches: Vec<BranchKind>,
    pub epsilon: f64,
    /// Per-sample standardization of branch responses.
    pub standardize: bool,
}

impl ModelConfig {
    pub fn new(m: usize, n: usize, c: usize) -> Self {
        ModelConfig {
            m,
            n,
            r: 128,
            d: 128,
            d_h: 512,
            c,
            branches: BranchKind::DEFAULT.to_vec(),
            epsilon: DEFAULT_EPSILON,
            standardize: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("m", self.m), ("n", self.n), ("r", self.r), ("d", self.d), ("c", self.c)] {
            if v == 0 {
                return Err(Error::param(name, "must be at least 1"));
            }
        }
        if self.branches.is_empty() {
            return Err(Error::param("branches", "at least one branch is required"));
        }
        for (i, b) in self.branches.iter().enumerate() {
            if self.branches[..i].contains(b) {
                return Err(Error::param("branches", format!("duplicate branch `{b}`")));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::param("epsilon", format!("must be positive, got {}", self.epsilon)));
        }
        let dims = [self.m, self.n, self.r, self.d, self.d_h, self.c];
        if dims.iter().any(|v| *v > u32::MAX as usize) {
            return Err(Error::param("dims", "dimensions must fit in u32"));
        }
        Ok(())
    }

    /// Flattened response length of a branch.
    pub fn response_len(&self, kind: BranchKind) -> usize {
        kind.response_rows(self.m, self.n) * self.r
    }

    /// Width of the concatenated branch features.
    pub fn fused_dim(&self) -> usize {
        self.branches.len() * self.d
    }

    /// Width of the representation fed to the classifier.
    pub fn embedding_dim(&self) -> usize {
        if self.d_h == 0 {
            self.fused_dim()
        } else {
            self.d_h
        }
    }

    /// Closed-form number of scalar parameters.
    pub fn param_count(&self) -> usize {
        let mut total = 0;
        for kind in &self.branches {
            total += kind.probe_rows(self.m, self.n) * self.r;
            total += self.d * self.response_len(*kind) + self.d;
        }
        if self.d_h > 0 {
            total += self.d_h * self.fused_dim() + self.d_h;
        }
        total + self.c * self.embedding_dim() + self.c
    }
}

/// Affine map `y = W x + b` with `W` stored `out × in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Dense {
    fn init(rng: &mut Rng, inputs: usize, outputs: usize) -> Self {
        Dense {
            weight: xavier_uniform(rng, outputs, inputs),
            bias: Matrix::zeros(outputs, 1),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn apply(&self, input: &[f64]) -> Vec<f64> {
        debug_assert_eq!(input.len(), self.inputs());
        (0..self.outputs())
            .map(|i| {
                let row = self.weight.row(i);
                let mut acc = 0.0;
                for (w, x) in row.iter().zip(input) {
                    acc += w * x;
                }
                acc + self.bias.get(i, 0)
            })
            .collect()
    }
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| if *x > 0.0 { *x } else { 0.0 }).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MVProbeModel {
    pub config: ModelConfig,
    pub banks: Vec<ProbeBank>,
    pub projections: Vec<Dense>,
    pub encoder: Option<Dense>,
    pub classifier: Dense,
}

/// Cached intermediates of one branch.
#[derive(Clone, Debug)]
pub struct BranchTrace {
    pub kind: BranchKind,
    pub raw: Matrix,
    pub standardized: Matrix,
    pub mean: f64,
    pub std: f64,
    pub pre_activation: Vec<f64>,
    pub feature: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub x: Matrix,
    pub branches: Vec<BranchTrace>,
    pub fused: Vec<f64>,
    pub encoder_pre: Option<Vec<f64>>,
    /// Input to the classifier (encoder output, or `fused` when bypassed).
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
}

impl ForwardTrace {
    /// Every ReLU pre-activation, in a fixed order.
    pub fn relu_inputs(&self) -> impl Iterator<Item = f64> + '_ {
        self.branches
            .iter()
            .flat_map(|b| b.pre_activation.iter().copied())
            .chain(self.encoder_pre.iter().flatten().copied())
    }
}

// Streams for per-tensor initialization.
const BANK_STREAM: u64 = 0x100;
const PROJECTION_STREAM: u64 = 0x200;
const ENCODER_STREAM: u64 = 0x300;
const CLASSIFIER_STREAM: u64 = 0x301;

impl MVProbeModel {
    /// Xavier-uniform weights and zero biases.
    ///
    /// Each tensor draws from its own fork of `rng` keyed by role (and
    /// branch kind), so a branch's bank and projection do not depend on the
    /// position of that branch in the list.
    pub fn init(rng: &Rng, config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (m, n, r) = (config.m, config.n, config.r);
        let mut banks = Vec::with_capacity(config.branches.len());
        let mut projections = Vec::with_capacity(config.branches.len());
        for kind in &config.branches {
            let mut bank_rng = rng.fork(BANK_STREAM + kind.index() as u64);
            banks.push(ProbeBank::new(*kind, xavier_uniform(&mut bank_rng, kind.probe_rows(m, n), r)));
            let mut proj_rng = rng.fork(PROJECTION_STREAM + kind.index() as u64);
            projections.push(Dense::init(&mut proj_rng, config.response_len(*kind), config.d));
        }
        let encoder = (config.d_h > 0).then(|| Dense::init(&mut rng.fork(ENCODER_STREAM), config.fused_dim(), config.d_h));
        let classifier = Dense::init(&mut rng.fork(CLASSIFIER_STREAM), config.embedding_dim(), config.c);
        Ok(MVProbeModel {
            config,
            banks,
            projections,
            encoder,
            classifier,
        })
    }

    /// Parameter tensors in canonical order: banks, per-branch projection
    /// weight and bias, encoder weight and bias, classifier weight and bias.
    pub fn params(&self) -> Vec<&Matrix> {
        let mut out: Vec<&Matrix> = self.banks.iter().map(|b| &b.probes).collect();
        for p in &self.projections {
            out.push(&p.weight);
            out.push(&p.bias);
        }
        if let Some(e) = &self.encoder {
            out.push(&e.weight);
            out.push(&e.bias);
        }
        out.push(&self.classifier.weight);
        out.push(&self.classifier.bias);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = self.banks.iter_mut().map(|b| &mut b.probes).collect();
        for p in &mut self.projections {
            out.push(&mut p.weight);
            out.push(&mut p.bias);
        }
        if let Some(e) = &mut self.encoder {
            out.push(&mut e.weight);
            out.push(&mut e.bias);
        }
        out.push(&mut self.classifier.weight);
        out.push(&mut self.classifier.bias);
        out
    }

    /// Shapes of [`Self::params`], derived from the config alone.
    pub fn param_shapes(config: &ModelConfig) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = config
            .branches
            .iter()
            .map(|k| (k.probe_rows(config.m, config.n), config.r))
            .collect();
        for k in &config.branches {
            out.push((config.d, config.response_len(*k)));
            out.push((config.d, 1));
        }
        if config.d_h > 0 {
            out.push((config.d_h, config.fused_dim()));
            out.push((config.d_h, 1));
        }
        out.push((config.c, config.embedding_dim()));
        out.push((config.c, 1));
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Copy with every parameter rounded through `f32` (checkpoint precision).
    pub fn to_f32_precision(&self) -> Self {
        let mut out = self.clone();
        for p in out.params_mut() {
            *p = p.to_f32_precision();
        }
        out
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.shape() != (self.config.m, self.config.n) {
            return Err(Error::Shape {
                op: "forward",
                left: format!("weight matrix {}", x.shape_str()),
                right: format!("model expects {}x{}", self.config.m, self.config.n),
            });
        }
        Ok(())
    }

    /// Full forward pass; returns logits and, on request, every cached intermediate.
    pub fn forward(&self, x: &Matrix, trace: bool) -> Result<(Vec<f64>, Option<ForwardTrace>)> {
        self.check_input(x)?;
        let mut branch_traces = Vec::with_capacity(self.banks.len());
        let mut fused = Vec::with_capacity(self.config.fused_dim());
        for (bank, proj) in self.banks.iter().zip(&self.projections) {
            let raw = response(x, bank)?;
            let (mean, std) = raw.mean_std();
            let standardized = if self.config.standardize {
                raw.standardize(self.config.epsilon)
            } else {
                raw.clone()
            };
            let pre = proj.apply(standardized.as_slice());
            let feature = relu(&pre);
            fused.extend_from_slice(&feature);
            if trace {
                branch_traces.push(BranchTrace {
                    kind: bank.kind,
                    raw,
                    standardized,
                    mean,
                    std,
                    pre_activation: pre,
                    feature,
                });
            }
        }
        let (encoder_pre, hidden) = match &self.encoder {
            Some(enc) => {
                let pre = enc.apply(&fused);
                let post = relu(&pre);
                (Some(pre), post)
            }
            None => (None, fused.clone()),
        };
        let logits = self.classifier.apply(&hidden);
        let trace = trace.then(|| ForwardTrace {
            x: x.clone(),
            branches: branch_traces,
            fused,
            encoder_pre,
            hidden,
            logits: logits.clone(),
        });
        Ok((logits, trace))
    }

    pub fn logits(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok(self.forward(x, false)?.0)
    }

    /// Pre-classifier representation used for retrieval.
    pub fn embed(&self, x: &Matrix) -> Result<Vec<f64>> {
        let (_, trace) = self.forward(x, true)?;
        Ok(trace.expect("trace requested").hidden)
    }

    pub fn serialize(&self) -> Vec<u8> {
        encode_checkpoint(self)
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self> {
        decode_checkpoint(bytes)
    }
}

/// Free-function form of [`MVProbeModel::init`].
pub fn init_model(rng: &Rng, config: ModelConfig) -> Result<MVProbeModel> {
    MVProbeModel::init(rng, config)
}

pub fn forward(model: &MVProbeModel, x: &Matrix, trace: bool) -> Result<(Vec<f64>, Option<ForwardTrace>)> {
    model.forward(x, trace)
}

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"MVPB";
pub const CHECKPOINT_VERSION: u32 = 1;
const FLAG_NO_STANDARDIZE: u32 = 1;
const ORDER_SHIFT: u32 = 8;
const HEADER_LEN: usize = 4 + 4 + 8 * 4 + 8;

fn branch_mask_and_flags(config: &ModelConfig) -> (u32, u32) {
    let mut mask = 0u32;
    let mut flags = 0u32;
    if !config.standardize {
        flags |= FLAG_NO_STANDARDIZE;
    }
    for (slot, kind) in config.branches.iter().enumerate() {
        mask |= 1 << kind.index();
        flags |= (kind.index() as u32) << (ORDER_SHIFT + 3 * slot as u32);
    }
    (mask, flags)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn encode_checkpoint(model: &MVProbeModel) -> Vec<u8> {
    let cfg = &model.config;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * model.param_count() + 64);
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    let (mask, flags) = branch_mask_and_flags(cfg);
    for v in [cfg.m, cfg.n, cfg.r, cfg.d, cfg.d_h, cfg.c] {
        put_u32(&mut out, v as u32);
    }
    put_u32(&mut out, mask);
    put_u32(&mut out, flags);
    out.extend_from_slice(&cfg.epsilon.to_le_bytes());
    for p in model.params() {
        put_u32(&mut out, p.rows() as u32);
        put_u32(&mut out, p.cols() as u32);
        for v in p.as_slice() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out[4..]);
    put_u32(&mut out, crc);
    out
}

/// Bounds-checked little-endian cursor.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub(crate) fn pos(&self) -> usize {
        self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], DecodeError> {
        let available = self.bytes.len() - self.pos;
        if available < n {
            return Err(DecodeError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> std::result::Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> std::result::Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> std::result::Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> std::result::Result<f64, DecodeError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> std::result::Result<f32, DecodeError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub(crate) fn check_magic(bytes: &[u8], expected: [u8; 4]) -> std::result::Result<(), DecodeError> {
    if bytes.len() < 4 {
        return Err(DecodeError::Truncated {
            offset: 0,
            needed: 4,
            available: bytes.len(),
        });
    }
    let found: [u8; 4] = bytes[..4].try_into().unwrap();
    if found != expected {
        return Err(DecodeError::BadMagic {
            offset: 0,
            expected,
            found,
        });
    }
    Ok(())
}

fn invalid(field: &'static str, offset: usize, reason: impl Into<String>) -> DecodeError {
    DecodeError::InvalidField {
        field,
        offset,
        reason: reason.into(),
    }
}

pub(crate) fn decode_checkpoint(bytes: &[u8]) -> Result<MVProbeModel> {
    check_magic(bytes, CHECKPOINT_MAGIC)?;
    let mut rd = Reader::new(bytes);
    rd.take(4)?;
    let version = rd.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(DecodeError::Version {
            expected: CHECKPOINT_VERSION,
            found: version,
        }
        .into());
    }
    let config_offset = rd.pos();
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = rd.u32()? as usize;
    }
    let mask = rd.u32()?;
    let flags = rd.u32()?;
    let epsilon = rd.f64()?;

    if mask == 0 || mask >> BranchKind::ALL.len() != 0 {
        return Err(invalid("branch_mask", config_offset + 24, format!("{mask:#x}")).into());
    }
    let count = mask.count_ones() as usize;
    let mut branches = Vec::with_capacity(count);
    for slot in 0..count {
        let idx = ((flags >> (ORDER_SHIFT + 3 * slot as u32)) & 0b111) as usize;
        let kind = BranchKind::from_index(idx).expect("3-bit index");
        if mask & (1 << idx) == 0 || branches.contains(&kind) {
            return Err(invalid("flags", config_offset + 28, "branch order disagrees with branch mask").into());
        }
        branches.push(kind);
    }
    let [m, n, r, d, d_h, c] = dims;
    let config = ModelConfig {
        m,
        n,
        r,
        d,
        d_h,
        c,
        branches,
        epsilon,
        standardize: flags & FLAG_NO_STANDARDIZE == 0,
    };
    config
        .validate()
        .map_err(|e| invalid("config", config_offset, e.to_string()))?;

    let shapes = MVProbeModel::param_shapes(&config);
    let expected_len = shapes
        .iter()
        .try_fold(HEADER_LEN + 4, |acc, (r, c)| {
            r.checked_mul(*c)
                .and_then(|k| k.checked_mul(4))
                .and_then(|k| acc.checked_add(8 + k))
        })
        .ok_or_else(|| invalid("config", config_offset, "tensor sizes overflow"))?;
    if bytes.len() < expected_len {
        return Err(DecodeError::Truncated {
            offset: bytes.len(),
            needed: expected_len - bytes.len(),
            available: 0,
        }
        .into());
    }
    if bytes.len() > expected_len {
        return Err(DecodeError::TrailingBytes {
            trailing: bytes.len() - expected_len,
        }
        .into());
    }
    let stored = u32::from_le_bytes(bytes[expected_len - 4..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[4..expected_len - 4]);
    if stored != computed {
        return Err(DecodeError::Crc { stored, computed }.into());
    }

    let mut tensors = Vec::with_capacity(shapes.len());
    for (rows, cols) in shapes {
        let at = rd.pos();
        let (fr, fc) = (rd.u32()? as usize, rd.u32()? as usize);
        if (fr, fc) != (rows, cols) {
            return Err(invalid("tensor shape", at, format!("found {fr}x{fc}, expected {rows}x{cols}")).into());
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(rd.f32()? as f64);
        }
        tensors.push(Matrix::from_vec(rows, cols, data)?);
    }

    let mut model = MVProbeModel::init(&Rng::new(0), config)?;
    for (slot, t) in model.params_mut().into_iter().zip(tensors) {
        *slot = t;
    }
    Ok(model)
}
