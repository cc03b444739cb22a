//! Randomized verification suites with worst-case reporting.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{MVProbeModel, ModelConfig};
use crate::probing::{apply_chain, BranchKind};
use crate::tensor::{gaussian, Matrix, Rng};
use crate::theory::{
    check_thm1, check_thm2, check_uniform_domination, construct_thm1_pair, construct_thm2_pair, orthonormal_columns,
    scale_ratio_montecarlo, complement_direction,
};
use crate::train::gradient_check;

pub const EQUAL_TOL: f64 = 1e-10;
pub const DISTINCT_TOL: f64 = 1e-8;
pub const IDENTITY_REL_TOL: f64 = 1e-9;
pub const SCALE_RATIO_TOL: f64 = 0.05;
pub const FIRST_MOMENT_TOL: f64 = 0.02;
pub const ENERGY_TOL: f64 = 1e-6;
pub const GRADCHECK_TOL: f64 = 1e-4;
pub const GRADCHECK_STEP: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Thm1,
    Thm2,
    Thm3,
    Corollary,
    Domination,
    Gradcheck,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::Thm1,
        Suite::Thm2,
        Suite::Thm3,
        Suite::Corollary,
        Suite::Domination,
        Suite::Gradcheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Thm1 => "thm1",
            Suite::Thm2 => "thm2",
            Suite::Thm3 => "thm3",
            Suite::Corollary => "corollary",
            Suite::Domination => "domination",
            Suite::Gradcheck => "gradcheck",
        }
    }

    /// Trial count used when the caller does not choose one.
    pub fn default_trials(self) -> usize {
        match self {
            Suite::Thm1 | Suite::Thm2 => 1000,
            Suite::Thm3 => 20000,
            Suite::Corollary => 100,
            Suite::Domination => 300,
            Suite::Gradcheck => 20,
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Suite::ALL.iter().map(|s| s.name()).collect();
                Error::param("suite", format!("unknown suite {s:?}; valid: {}", names.join(", ")))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub trials: usize,
    pub pass: bool,
    pub worst_case_values: BTreeMap<String, f64>,
}

/// Runs `suite` with `trials` randomized instances derived from `seed`.
pub fn run_suite(suite: Suite, trials: usize, seed: u64) -> Result<SuiteReport> {
    if trials == 0 {
        return Err(Error::param("trials", "must be at least 1"));
    }
    let rng = Rng::new(seed);
    let (pass, worst) = match suite {
        Suite::Thm1 => pair_suite(&rng, trials, true)?,
        Suite::Thm2 => pair_suite(&rng, trials, false)?,
        Suite::Thm3 => scale_suite(&rng, trials)?,
        Suite::Corollary => corollary_suite(&rng, trials)?,
        Suite::Domination => domination_suite(&rng, trials)?,
        Suite::Gradcheck => gradcheck_suite(&rng, trials)?,
    };
    Ok(SuiteReport {
        suite: suite.name().to_string(),
        trials,
        pass,
        worst_case_values: worst,
    })
}

/// Random `(m, n, r)` with `1 ≤ r < n ≤ 32`, `1 ≤ m ≤ 32`.
fn random_dims(rng: &mut Rng) -> (usize, usize, usize) {
    let n = 2 + rng.below(31);
    let r = 1 + rng.below(n - 1);
    let m = 1 + rng.below(32);
    (m, n, r)
}

fn pair_suite(rng: &Rng, trials: usize, first: bool) -> Result<(bool, BTreeMap<String, f64>)> {
    let checks = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut r = rng.fork(t as u64);
            let (m, n, k) = random_dims(&mut r);
            if first {
                check_thm1(&construct_thm1_pair(&mut r, m, n, k)?)
            } else {
                check_thm2(&construct_thm2_pair(&mut r, m, n, k)?)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let max_first = checks.iter().map(|c| c.first_order_diff).fold(0.0, f64::max);
    let min_sep = checks.iter().map(|c| c.separating_diff).fold(f64::INFINITY, f64::min);
    let max_rel = checks.iter().map(|c| c.relative_error()).fold(0.0, f64::max);
    let pass = max_first < EQUAL_TOL && min_sep > DISTINCT_TOL && max_rel < IDENTITY_REL_TOL;
    let worst = BTreeMap::from([
        ("max_first_order_diff".to_string(), max_first),
        ("min_separating_diff".to_string(), min_sep),
        ("max_identity_rel_error".to_string(), max_rel),
    ]);
    Ok((pass, worst))
}

fn scale_suite(rng: &Rng, trials: usize) -> Result<(bool, BTreeMap<String, f64>)> {
    let trials = trials.max(100);
    let mut worst = BTreeMap::new();
    let mut pass = true;
    let (mut max_ratio, mut max_first) = (0.0f64, 0.0f64);
    for (i, sigma) in [0.5, 1.0, 2.0].into_iter().enumerate() {
        let est = scale_ratio_montecarlo(&mut rng.fork(i as u64), 64, 32, sigma, 8, trials)?;
        let first_err = (est.first_moment - est.expected_first()).abs() / est.expected_first();
        pass &= est.ratio_rel_error() < SCALE_RATIO_TOL && first_err < FIRST_MOMENT_TOL;
        max_ratio = max_ratio.max(est.ratio_rel_error());
        max_first = max_first.max(first_err);
        worst.insert(format!("ratio_mc_sigma_{sigma}"), est.ratio_mc);
    }
    worst.insert("max_ratio_rel_error".into(), max_ratio);
    worst.insert("max_first_moment_rel_error".into(), max_first);
    Ok((pass, worst))
}

fn corollary_suite(rng: &Rng, trials: usize) -> Result<(bool, BTreeMap<String, f64>)> {
    let mut max_err = 0.0f64;
    for kind in BranchKind::ALL {
        let errs = (0..trials)
            .into_par_iter()
            .map(|t| -> Result<f64> {
                let mut r = rng.fork(((kind.index() as u64) << 32) | t as u64);
                let m = 1 + r.below(16);
                let n = 1 + r.below(16);
                let k = 1 + r.below(8);
                let scale = (r.uniform(-3.0, 3.0)).exp();
                let x = gaussian(&mut r, m, n, scale)?;
                let p = gaussian(&mut r, kind.probe_rows(m, n), k, 1.0)?;
                let s = apply_chain(&x, kind, &p)?;
                if s.len() < 2 {
                    return Ok(0.0);
                }
                let z = s.standardize(1e-15);
                Ok((z.frobenius_sq() / z.len() as f64 - 1.0).abs())
            })
            .collect::<Result<Vec<_>>>()?;
        max_err = errs.into_iter().fold(max_err, f64::max);
    }
    let worst = BTreeMap::from([("max_energy_rel_error".to_string(), max_err)]);
    Ok((max_err < ENERGY_TOL, worst))
}

fn domination_suite(rng: &Rng, trials: usize) -> Result<(bool, BTreeMap<String, f64>)> {
    // case 0: Ũ = U·C; case 1: square full-rank U; case 2: planted orthogonal column
    let results = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<(usize, bool, f64)> {
            let mut r = rng.fork(t as u64);
            let case = t % 3;
            let n = 2 + r.below(15);
            let k = if case == 1 { n } else { 1 + r.below(n - 1) };
            let u = gaussian(&mut r, n, k, 1.0)?;
            let out = match case {
                0 => {
                    let c = gaussian(&mut r, k, 4 * k, 1.0)?;
                    check_uniform_domination(&u.matmul(&c)?, &u)?
                }
                1 => check_uniform_domination(&gaussian(&mut r, n, 4 * k, 1.0)?, &u)?,
                _ => {
                    let q = orthonormal_columns(&mut r, n, k).and_then(|q| {
                        // keep U's column space but not its basis
                        let mix = gaussian(&mut r, k, k, 1.0)?;
                        q.matmul(&mix).map(|u| (q, u))
                    })?;
                    let w = complement_direction(&mut r, &q.0)?;
                    let mut big = q.1.matmul(&gaussian(&mut r, k, 4 * k, 1.0)?)?;
                    let col = r.below(4 * k);
                    for i in 0..n {
                        big.set(i, col, w.get(i, 0));
                    }
                    check_uniform_domination(&big, &q.1)?
                }
            };
            Ok((case, out.dominates, out.residual))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut pass = true;
    let mut worst_case = [0.0f64, 0.0, f64::INFINITY];
    for (case, dominates, residual) in results {
        if case == 2 {
            pass &= !dominates;
            worst_case[2] = worst_case[2].min(residual);
        } else {
            pass &= dominates;
            worst_case[case] = worst_case[case].max(residual);
        }
    }
    // Ũ = UC is exact up to roundoff; hold it to the tighter bound.
    pass &= worst_case[0] < EQUAL_TOL;
    let worst = BTreeMap::from([
        ("max_product_residual".to_string(), worst_case[0]),
        ("max_full_rank_residual".to_string(), worst_case[1]),
        ("min_planted_residual".to_string(), worst_case[2]),
    ]);
    Ok((pass, worst))
}

fn gradcheck_suite(rng: &Rng, trials: usize) -> Result<(bool, BTreeMap<String, f64>)> {
    let reports = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut r = rng.fork(t as u64);
            let (m, n) = (3 + r.below(4), 3 + r.below(4));
            let config = ModelConfig {
                r: 2,
                d: 3,
                d_h: 4,
                ..ModelConfig::new(m, n, 3)
            };
            let model = MVProbeModel::init(&r.fork(1), config)?;
            let x = gaussian(&mut r, m, n, 1.0)?;
            let y: Vec<bool> = (0..3).map(|_| r.below(2) == 1).collect();
            gradient_check(&model, &x, &y, GRADCHECK_STEP)
        })
        .collect::<Result<Vec<_>>>()?;
    let max_rel = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let excluded: usize = reports.iter().map(|r| r.excluded_near_kink).sum();
    let checked: usize = reports.iter().map(|r| r.checked).sum();
    let worst = BTreeMap::from([
        ("max_rel_error".to_string(), max_rel),
        ("checked_parameters".to_string(), checked as f64),
        ("excluded_near_kink".to_string(), excluded as f64),
    ]);
    Ok((max_rel < GRADCHECK_TOL && checked > 0, worst))
}

/// Standardized energy of one response; exposed for property tests.
pub fn standardized_energy(s: &Matrix, epsilon: f64) -> f64 {
    s.standardize(epsilon).frobenius_sq()
}
