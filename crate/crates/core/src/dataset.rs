//! Synthetic weight datasets and the `WSDS` container.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::error::{DecodeError, Error, Result};
use crate::model::{check_magic, Reader};
use crate::tensor::{gaussian, xavier_uniform, Matrix, Rng};
use crate::theory::complement_direction;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub record_id: u64,
    pub generator_tag: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetRecord {
    pub x: Matrix,
    /// Multi-hot label vector of length `C`.
    pub y: Vec<bool>,
    pub meta: RecordMeta,
}

impl DatasetRecord {
    /// Lowest set label, used as the single-label class.
    pub fn first_label(&self) -> Option<usize> {
        self.y.iter().position(|b| *b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    PlantedLowRank,
    NullspaceAdversarial,
    /// Planted low-rank records rescaled to a target entry scale.
    GaussianScale,
}

impl Family {
    pub fn tag(self) -> &'static str {
        match self {
            Family::PlantedLowRank => "planted_low_rank",
            Family::NullspaceAdversarial => "nullspace_adversarial",
            Family::GaussianScale => "gaussian_scale",
        }
    }
}

fn default_probe_count() -> usize {
    8
}

fn default_one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub family: Family,
    pub m: usize,
    pub n: usize,
    /// Number of classes `C`.
    pub classes: usize,
    pub per_class: usize,
    pub labels_per_sample: usize,
    pub signal_strength: f64,
    pub noise_sigma: f64,
    pub rank: usize,
    /// Width of the frozen first-order bank the adversarial family hides from.
    #[serde(default = "default_probe_count")]
    pub probe_count: usize,
    /// Target entry standard deviation for `GaussianScale`.
    #[serde(default = "default_one")]
    pub target_sigma: f64,
}

impl SyntheticSpec {
    /// `m=32, n=24, C=10, k=3, rank=2, signal=1, noise=0.1, 40 per class`.
    pub fn planted_default() -> Self {
        SyntheticSpec {
            family: Family::PlantedLowRank,
            m: 32,
            n: 24,
            classes: 10,
            per_class: 40,
            labels_per_sample: 3,
            signal_strength: 1.0,
            noise_sigma: 0.1,
            rank: 2,
            probe_count: 8,
            target_sigma: 1.0,
        }
    }

    pub fn adversarial_default() -> Self {
        SyntheticSpec {
            family: Family::NullspaceAdversarial,
            m: 32,
            n: 24,
            classes: 4,
            per_class: 100,
            labels_per_sample: 1,
            signal_strength: 1.0,
            noise_sigma: 0.01,
            rank: 1,
            probe_count: 8,
            target_sigma: 1.0,
        }
    }

    pub fn record_count(&self) -> usize {
        self.classes * self.per_class
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("m", self.m),
            ("n", self.n),
            ("classes", self.classes),
            ("per_class", self.per_class),
            ("rank", self.rank),
        ] {
            if v == 0 {
                return Err(Error::param(name, "must be at least 1"));
            }
        }
        if self.labels_per_sample == 0 || self.labels_per_sample > self.classes {
            return Err(Error::param(
                "labels_per_sample",
                format!("must lie in 1..={}, got {}", self.classes, self.labels_per_sample),
            ));
        }
        if !(self.signal_strength >= 0.0 && self.signal_strength.is_finite()) {
            return Err(Error::param("signal_strength", "must be finite and >= 0"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::param("noise_sigma", "must be finite and >= 0"));
        }
        if !(self.target_sigma > 0.0 && self.target_sigma.is_finite()) {
            return Err(Error::param("target_sigma", "must be positive"));
        }
        if self.family == Family::NullspaceAdversarial && (self.probe_count == 0 || self.probe_count >= self.n) {
            return Err(Error::param(
                "probe_count",
                format!("adversarial family needs 1 <= probe_count < n, got {} with n={}", self.probe_count, self.n),
            ));
        }
        Ok(())
    }
}

const LABEL_STREAM: u64 = 0x1AB;
const SIGNATURE_STREAM: u64 = 0x5100;
const RECORD_STREAM: u64 = 0x10_0000;
const FROZEN_STREAM: u64 = 0xF0;
const BASE_STREAM: u64 = 0xBA5E;

/// Label sets: cyclic single labels when `k = 1` (exactly `per_class` each),
/// otherwise uniform `k`-subsets.
fn draw_label_sets(rng: &mut Rng, spec: &SyntheticSpec) -> Vec<Vec<usize>> {
    let total = spec.record_count();
    if spec.labels_per_sample == 1 {
        return (0..total).map(|i| vec![i % spec.classes]).collect();
    }
    let mut pool: Vec<usize> = (0..spec.classes).collect();
    (0..total)
        .map(|_| {
            for i in 0..spec.labels_per_sample {
                let j = i + rng.below(spec.classes - i);
                pool.swap(i, j);
            }
            let mut set = pool[..spec.labels_per_sample].to_vec();
            set.sort_unstable();
            set
        })
        .collect()
}

fn multi_hot(classes: usize, set: &[usize]) -> Vec<bool> {
    let mut y = vec![false; classes];
    for c in set {
        y[*c] = true;
    }
    y
}

fn add_noise(x: &mut Matrix, rng: &mut Rng, sigma: f64) -> Result<()> {
    if sigma > 0.0 {
        x.add_assign(&gaussian(rng, x.rows(), x.cols(), sigma)?)?;
    }
    Ok(())
}

/// Records `X = Σ_{c∈L} s·A_c B_cᵀ/√rank + noise`, one rank-`rank` signature per class.
pub fn generate_planted(rng: &Rng, spec: &SyntheticSpec) -> Result<Vec<DatasetRecord>> {
    spec.validate()?;
    let signatures: Vec<Matrix> = (0..spec.classes)
        .map(|c| -> Result<Matrix> {
            let mut sig_rng = rng.fork(SIGNATURE_STREAM + c as u64);
            let a = gaussian(&mut sig_rng, spec.m, spec.rank, 1.0)?;
            let b = gaussian(&mut sig_rng, spec.n, spec.rank, 1.0)?;
            Ok(a.matmul(&b.transpose())?.scale(1.0 / (spec.rank as f64).sqrt()))
        })
        .collect::<Result<_>>()?;
    let labels = draw_label_sets(&mut rng.fork(LABEL_STREAM), spec);
    let tag = spec.family.tag();
    labels
        .par_iter()
        .enumerate()
        .map(|(i, set)| {
            let mut x = Matrix::zeros(spec.m, spec.n);
            for c in set {
                x.add_assign(&signatures[*c].scale(spec.signal_strength))?;
            }
            add_noise(&mut x, &mut rng.fork(RECORD_STREAM + i as u64), spec.noise_sigma)?;
            Ok(DatasetRecord {
                x,
                y: multi_hot(spec.classes, set),
                meta: RecordMeta {
                    record_id: i as u64,
                    generator_tag: tag.to_string(),
                    seed: rng.seed(),
                },
            })
        })
        .collect()
}

/// Rescales every record so its entries have RMS `sigma`.
pub fn rescale_to_sigma(records: &mut [DatasetRecord], sigma: f64) {
    for rec in records {
        let rms = (rec.x.frobenius_sq() / rec.x.len() as f64).sqrt();
        if rms > 0.0 {
            rec.x.scale_assign(sigma / rms);
        }
    }
}

/// Planted records rescaled to entry scale `target_sigma`.
pub fn generate_gaussian_scale(rng: &Rng, spec: &SyntheticSpec) -> Result<Vec<DatasetRecord>> {
    let mut records = generate_planted(rng, spec)?;
    rescale_to_sigma(&mut records, spec.target_sigma);
    for r in &mut records {
        r.meta.generator_tag = Family::GaussianScale.tag().to_string();
    }
    Ok(records)
}

/// The frozen first-order bank used by the adversarial family when none is supplied.
pub fn default_frozen_probes(rng: &Rng, n: usize, r: usize) -> Matrix {
    xavier_uniform(&mut rng.fork(FROZEN_STREAM), n, r)
}

/// Orthonormal basis of `col(u)` (columns that are numerically dependent are dropped).
fn column_basis(u: &Matrix) -> Matrix {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let scale = u.max_abs().max(f64::MIN_POSITIVE);
    for j in 0..u.cols() {
        let mut v = u.col_vec(j);
        for _ in 0..2 {
            for q in &basis {
                let c: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-10 * scale {
            v.iter_mut().for_each(|a| *a /= norm);
            basis.push(v);
        }
    }
    let mut q = Matrix::zeros(u.rows(), basis.len());
    for (j, col) in basis.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            q.set(i, j, *v);
        }
    }
    q
}

/// Records whose class signal is invisible to `X·frozen_u`.
///
/// `X = Base + Σ_{c∈L} s·α_i·a_c w_cᵀ + noise`, with one shared `Base`, per-class
/// `w_c ⟂ col(frozen_u)` and a per-record amplitude `α_i ∈ [0.5, 1.5]`.
pub fn generate_nullspace_adversarial(rng: &Rng, spec: &SyntheticSpec, frozen_u: &Matrix) -> Result<Vec<DatasetRecord>> {
    spec.validate()?;
    if frozen_u.rows() != spec.n {
        return Err(Error::Shape {
            op: "generate_nullspace_adversarial",
            left: format!("n = {}", spec.n),
            right: format!("frozen probes {}", frozen_u.shape_str()),
        });
    }
    if frozen_u.cols() >= spec.n {
        return Err(Error::param(
            "r",
            format!("frozen bank has {} columns; need r < n = {}", frozen_u.cols(), spec.n),
        ));
    }
    let q = column_basis(frozen_u);
    let base = gaussian(&mut rng.fork(BASE_STREAM), spec.m, spec.n, 1.0)?;
    let class_terms: Vec<(Matrix, Matrix)> = (0..spec.classes)
        .map(|c| -> Result<(Matrix, Matrix)> {
            let mut crng = rng.fork(SIGNATURE_STREAM + c as u64);
            let w = complement_direction(&mut crng, &q)?;
            let a = gaussian(&mut crng, spec.m, 1, 1.0)?;
            Ok((a, w))
        })
        .collect::<Result<_>>()?;
    let labels = draw_label_sets(&mut rng.fork(LABEL_STREAM), spec);
    let tag = spec.family.tag();
    labels
        .par_iter()
        .enumerate()
        .map(|(i, set)| {
            let mut rec_rng = rng.fork(RECORD_STREAM + i as u64);
            let amplitude = spec.signal_strength * rec_rng.uniform(0.5, 1.5);
            let mut x = base.clone();
            for c in set {
                let (a, w) = &class_terms[*c];
                x.add_assign(&a.matmul(&w.transpose())?.scale(amplitude))?;
            }
            add_noise(&mut x, &mut rec_rng, spec.noise_sigma)?;
            Ok(DatasetRecord {
                x,
                y: multi_hot(spec.classes, set),
                meta: RecordMeta {
                    record_id: i as u64,
                    generator_tag: tag.to_string(),
                    seed: rng.seed(),
                },
            })
        })
        .collect()
}

/// Generates any family; the adversarial family uses [`default_frozen_probes`].
pub fn generate(rng: &Rng, spec: &SyntheticSpec) -> Result<(Vec<DatasetRecord>, Option<Matrix>)> {
    match spec.family {
        Family::PlantedLowRank => Ok((generate_planted(rng, spec)?, None)),
        Family::GaussianScale => Ok((generate_gaussian_scale(rng, spec)?, None)),
        Family::NullspaceAdversarial => {
            let u = default_frozen_probes(rng, spec.n, spec.probe_count);
            let records = generate_nullspace_adversarial(rng, spec, &u)?;
            Ok((records, Some(u)))
        }
    }
}

pub const DATASET_MAGIC: [u8; 4] = *b"WSDS";
pub const DATASET_VERSION: u32 = 1;
const DTYPE_F32: u8 = 1;
const DATASET_HEADER_LEN: usize = 4 + 4 * 5 + 4;

fn label_bytes(classes: usize) -> usize {
    classes.div_ceil(8)
}

pub fn encode_dataset(records: &[DatasetRecord]) -> Result<Vec<u8>> {
    let first = records
        .first()
        .ok_or_else(|| Error::Dataset("cannot encode an empty dataset".into()))?;
    let (m, n) = first.x.shape();
    let classes = first.y.len();
    for r in records {
        if r.x.shape() != (m, n) || r.y.len() != classes {
            return Err(Error::Dataset(format!(
                "record {} is {} with {} labels; dataset is {m}x{n} with {classes}",
                r.meta.record_id,
                r.x.shape_str(),
                r.y.len()
            )));
        }
    }
    for (name, v) in [("records", records.len()), ("m", m), ("n", n), ("classes", classes)] {
        if v > u32::MAX as usize {
            return Err(Error::param(name, "does not fit in u32"));
        }
    }
    let lb = label_bytes(classes);
    let mut out = Vec::with_capacity(DATASET_HEADER_LEN + records.len() * (4 * m * n + lb + 8) + 4);
    out.extend_from_slice(&DATASET_MAGIC);
    for v in [DATASET_VERSION, records.len() as u32, m as u32, n as u32, classes as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&[DTYPE_F32, 0, 0, 0]);
    for r in records {
        for v in r.x.as_slice() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        let mut bits = vec![0u8; lb];
        for (c, set) in r.y.iter().enumerate() {
            if *set {
                bits[c / 8] |= 1 << (c % 8);
            }
        }
        out.extend_from_slice(&bits);
        out.extend_from_slice(&r.meta.record_id.to_le_bytes());
    }
    let crc = crc32fast::hash(&out[DATASET_HEADER_LEN..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn invalid(field: &'static str, offset: usize, reason: impl Into<String>) -> Error {
    DecodeError::InvalidField {
        field,
        offset,
        reason: reason.into(),
    }
    .into()
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Vec<DatasetRecord>> {
    check_magic(bytes, DATASET_MAGIC)?;
    let mut rd = Reader::new(bytes);
    rd.take(4)?;
    let version = rd.u32()?;
    if version != DATASET_VERSION {
        return Err(DecodeError::Version {
            expected: DATASET_VERSION,
            found: version,
        }
        .into());
    }
    let count = rd.u32()? as usize;
    let m = rd.u32()? as usize;
    let n = rd.u32()? as usize;
    let classes = rd.u32()? as usize;
    let dtype_at = rd.pos();
    let dtype = rd.u8()?;
    if dtype != DTYPE_F32 {
        return Err(invalid("dtype", dtype_at, format!("unsupported dtype {dtype}")));
    }
    if rd.take(3)?.iter().any(|b| *b != 0) {
        return Err(invalid("padding", dtype_at + 1, "nonzero pad bytes"));
    }
    let lb = label_bytes(classes);
    let record_len = m
        .checked_mul(n)
        .and_then(|k| k.checked_mul(4))
        .and_then(|k| k.checked_add(lb + 8))
        .ok_or_else(|| invalid("dims", 12, "record size overflows"))?;
    let expected = count
        .checked_mul(record_len)
        .and_then(|k| k.checked_add(DATASET_HEADER_LEN + 4))
        .ok_or_else(|| invalid("records", 8, "dataset size overflows"))?;
    if bytes.len() < expected {
        return Err(DecodeError::Truncated {
            offset: bytes.len(),
            needed: expected - bytes.len(),
            available: 0,
        }
        .into());
    }
    if bytes.len() > expected {
        return Err(DecodeError::TrailingBytes {
            trailing: bytes.len() - expected,
        }
        .into());
    }
    let stored = u32::from_le_bytes(bytes[expected - 4..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[DATASET_HEADER_LEN..expected - 4]);
    if stored != computed {
        return Err(DecodeError::Crc { stored, computed }.into());
    }
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let mut data = Vec::with_capacity(m * n);
        for _ in 0..m * n {
            data.push(rd.f32()? as f64);
        }
        let label_at = rd.pos();
        let bits = rd.take(lb)?;
        let y: Vec<bool> = (0..classes).map(|c| bits[c / 8] >> (c % 8) & 1 == 1).collect();
        if !classes.is_multiple_of(8) && bits[lb - 1] >> (classes % 8) != 0 {
            return Err(invalid("labels", label_at, "bits set beyond the class count"));
        }
        let record_id = rd.u64()?;
        records.push(DatasetRecord {
            x: Matrix::from_vec(m, n, data)?,
            y,
            meta: RecordMeta {
                record_id,
                ..RecordMeta::default()
            },
        });
    }
    Ok(records)
}

/// Sidecar metadata written next to every `WSDS` file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub format_version: u32,
    pub generator_tag: String,
    pub seed: u64,
    pub record_count: usize,
    pub spec: SyntheticSpec,
    /// Frozen first-order bank of the adversarial family, as rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frozen_probes: Option<Vec<Vec<f64>>>,
}

impl DatasetManifest {
    pub fn frozen_matrix(&self) -> Option<Matrix> {
        self.frozen_probes.as_ref().map(|rows| Matrix::from_rows(rows))
    }
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes via a sibling temp file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn save_dataset(records: &[DatasetRecord], path: &Path) -> Result<()> {
    write_atomic(path, &encode_dataset(records)?)
}

pub fn load_dataset(path: &Path) -> Result<Vec<DatasetRecord>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut records = decode_dataset(&bytes)?;
    let mpath = manifest_path(path);
    if let Ok(text) = std::fs::read_to_string(&mpath) {
        let manifest: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Dataset(format!("manifest {}: {e}", mpath.display())))?;
        for r in &mut records {
            r.meta.generator_tag = manifest.generator_tag.clone();
            r.meta.seed = manifest.seed;
        }
    }
    Ok(records)
}

pub fn load_manifest(path: &Path) -> Result<Option<DatasetManifest>> {
    let mpath = manifest_path(path);
    match std::fs::read_to_string(&mpath) {
        Ok(text) => serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| Error::Dataset(format!("manifest {}: {e}", mpath.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(&mpath, e)),
    }
}

/// Index split of a dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// False when some record had no label and the split fell back to a plain shuffle.
    pub stratified: bool,
}

impl Split {
    pub fn select(records: &[DatasetRecord], idx: &[usize]) -> Vec<DatasetRecord> {
        idx.iter().map(|&i| records[i].clone()).collect()
    }
}

/// Disjoint train/val/test split stratified on each record's first label.
///
/// Every stratum is shuffled, then records are interleaved by their relative
/// position inside their stratum before cutting, so each part sees roughly
/// the global class mix while part sizes stay exact.
pub fn split(records: &[DatasetRecord], fractions: [f64; 3], rng: &Rng) -> Result<Split> {
    if fractions.iter().any(|f| *f <= 0.0 || !f.is_finite()) {
        return Err(Error::param("fractions", "each fraction must be positive"));
    }
    if fractions.iter().sum::<f64>() > 1.0 + 1e-9 {
        return Err(Error::param("fractions", "fractions must sum to at most 1"));
    }
    let total = records.len();
    let n_train = ((fractions[0] * total as f64).round() as usize).min(total);
    let n_val = ((fractions[1] * total as f64).round() as usize).min(total - n_train);
    let n_test = ((fractions[2] * total as f64).round() as usize).min(total - n_train - n_val);

    let mut shuffle_rng = rng.fork(0x5B17);
    let stratified = records.iter().all(|r| r.first_label().is_some());
    let order: Vec<usize> = if stratified {
        let classes = records.iter().filter_map(|r| r.first_label()).max().map_or(0, |c| c + 1);
        let mut strata: Vec<Vec<usize>> = vec![Vec::new(); classes];
        for (i, r) in records.iter().enumerate() {
            strata[r.first_label().unwrap()].push(i);
        }
        let mut keyed: Vec<(f64, usize, usize)> = Vec::with_capacity(total);
        for (c, stratum) in strata.iter_mut().enumerate() {
            shuffle_rng.shuffle(stratum);
            let len = stratum.len() as f64;
            for (pos, &idx) in stratum.iter().enumerate() {
                keyed.push(((pos as f64 + 0.5) / len, c, idx));
            }
        }
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        keyed.into_iter().map(|(_, _, i)| i).collect()
    } else {
        let mut idx: Vec<usize> = (0..total).collect();
        shuffle_rng.shuffle(&mut idx);
        idx
    };
    Ok(Split {
        train: order[..n_train].to_vec(),
        val: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..n_train + n_val + n_test].to_vec(),
        stratified,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_planted() -> SyntheticSpec {
        SyntheticSpec {
            m: 6,
            n: 5,
            classes: 4,
            per_class: 5,
            labels_per_sample: 2,
            ..SyntheticSpec::planted_default()
        }
    }

    #[test]
    fn noiseless_single_label_records_repeat() {
        let spec = SyntheticSpec {
            noise_sigma: 0.0,
            labels_per_sample: 1,
            ..small_planted()
        };
        let recs = generate_planted(&Rng::new(1), &spec).unwrap();
        assert_eq!(recs.len(), 20);
        for a in &recs {
            for b in &recs {
                if a.y == b.y {
                    assert_eq!(a.x, b.x);
                }
            }
        }
    }

    #[test]
    fn label_sets_have_k_members() {
        let recs = generate_planted(&Rng::new(2), &small_planted()).unwrap();
        assert!(recs.iter().all(|r| r.y.iter().filter(|b| **b).count() == 2));
    }

    #[test]
    fn spec_validation() {
        let bad = SyntheticSpec {
            labels_per_sample: 5,
            ..small_planted()
        };
        assert!(matches!(bad.validate(), Err(Error::Parameter { name: "labels_per_sample", .. })));
        let bad = SyntheticSpec {
            signal_strength: -1.0,
            ..small_planted()
        };
        assert!(bad.validate().is_err());
        let bad = SyntheticSpec {
            family: Family::NullspaceAdversarial,
            probe_count: 5,
            ..small_planted()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn adversarial_first_order_blindness() {
        let spec = SyntheticSpec {
            noise_sigma: 0.0,
            m: 10,
            n: 8,
            classes: 3,
            per_class: 4,
            probe_count: 3,
            ..SyntheticSpec::adversarial_default()
        };
        let u = default_frozen_probes(&Rng::new(3), 8, 3);
        let recs = generate_nullspace_adversarial(&Rng::new(3), &spec, &u).unwrap();
        for a in &recs {
            for b in &recs {
                if a.y == b.y {
                    continue;
                }
                let first = a.x.matmul(&u).unwrap().sub(&b.x.matmul(&u).unwrap()).unwrap();
                assert!(first.frobenius() < 1e-10);
                let gram = |x: &Matrix| x.t_matmul(&x.matmul(&u).unwrap()).unwrap();
                assert!(gram(&a.x).sub(&gram(&b.x)).unwrap().frobenius() > 1e-6);
            }
        }
        let wide = Matrix::zeros(8, 8);
        assert!(generate_nullspace_adversarial(&Rng::new(3), &spec, &wide).is_err());
    }

    #[test]
    fn wsds_round_trip() {
        let recs = generate_planted(&Rng::new(4), &small_planted()).unwrap();
        let bytes = encode_dataset(&recs).unwrap();
        let back = decode_dataset(&bytes).unwrap();
        assert_eq!(back.len(), recs.len());
        for (a, b) in recs.iter().zip(&back) {
            assert_eq!(a.y, b.y);
            assert_eq!(a.meta.record_id, b.meta.record_id);
            for (u, v) in a.x.as_slice().iter().zip(b.x.as_slice()) {
                let ulp = f32::EPSILON as f64 * u.abs();
                assert!((u - v).abs() <= ulp, "{u} vs {v}");
            }
        }
        assert_eq!(encode_dataset(&back).unwrap(), bytes);
    }

    #[test]
    fn wsds_errors() {
        let recs = generate_planted(&Rng::new(5), &small_planted()).unwrap();
        let bytes = encode_dataset(&recs).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        let err = decode_dataset(&bad).unwrap_err();
        assert!(matches!(err, Error::Decode(DecodeError::BadMagic { offset: 0, .. })));
        assert!(err.to_string().contains("offset 0"));

        let mut flip = bytes.clone();
        flip[DATASET_HEADER_LEN + 7] ^= 1;
        assert!(matches!(decode_dataset(&flip), Err(Error::Decode(DecodeError::Crc { .. }))));

        assert!(matches!(
            decode_dataset(&bytes[..bytes.len() - 1]),
            Err(Error::Decode(DecodeError::Truncated { .. }))
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_dataset(&long), Err(Error::Decode(DecodeError::TrailingBytes { .. }))));
        assert!(encode_dataset(&[]).is_err());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let spec = SyntheticSpec {
            per_class: 25,
            labels_per_sample: 1,
            ..small_planted()
        };
        let recs = generate_planted(&Rng::new(6), &spec).unwrap();
        let s = split(&recs, [0.8, 0.1, 0.1], &Rng::new(7)).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (80, 10, 10));
        assert!(s.stratified);
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 100);
        assert_eq!(s, split(&recs, [0.8, 0.1, 0.1], &Rng::new(7)).unwrap());
        assert!(split(&recs, [0.8, 0.3, 0.1], &Rng::new(7)).is_err());
        assert!(split(&recs, [0.8, 0.0, 0.1], &Rng::new(7)).is_err());
    }

    #[test]
    fn single_class_split_is_plain_shuffle() {
        let spec = SyntheticSpec {
            classes: 1,
            per_class: 30,
            labels_per_sample: 1,
            ..small_planted()
        };
        let mut recs = generate_planted(&Rng::new(8), &spec).unwrap();
        let strat = split(&recs, [0.5, 0.2, 0.3], &Rng::new(9)).unwrap();
        // one unlabeled record forces the unstratified path
        recs[0].y = vec![false];
        let plain = split(&recs, [0.5, 0.2, 0.3], &Rng::new(9)).unwrap();
        assert!(!plain.stratified);
        assert_eq!(strat.train, plain.train);
        assert_eq!(strat.val, plain.val);
        assert_eq!(strat.test, plain.test);
    }
}
