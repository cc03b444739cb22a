//! Numerical witnesses for the probing theorems: first-order collisions that
//! the Gram branch separates, the transpose complement, the expected scale
//! gap between orders, and column-space domination of stacked banks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{gaussian, Matrix, Rng};

/// Two weight matrices that collide under `X·U` but not under a second view.
#[derive(Clone, Debug)]
pub struct CounterexamplePair {
    pub x1: Matrix,
    pub x2: Matrix,
    /// Probe bank, `n × r`.
    pub u: Matrix,
    /// Column-side bank (`m × r`), present for transpose-complement pairs.
    pub v_bank: Option<Matrix>,
    pub witness_a: Matrix,
    pub witness_v: Matrix,
    pub witness_w: Matrix,
}

/// Observed differences for a counterexample pair.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PairCheck {
    /// `‖X₁U − X₂U‖_F`
    pub first_order_diff: f64,
    /// `‖Φ(X₁) − Φ(X₂)‖_F` for the separating view
    pub separating_diff: f64,
    /// Closed-form value of `separating_diff`
    pub predicted_diff: f64,
}

impl PairCheck {
    pub fn relative_error(&self) -> f64 {
        (self.separating_diff - self.predicted_diff).abs() / self.predicted_diff.max(f64::MIN_POSITIVE)
    }
}

fn outer(a: &Matrix, b: &Matrix) -> Matrix {
    // a: p×1, b: q×1 → a bᵀ
    let mut out = Matrix::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            out.set(i, j, a.get(i, 0) * b.get(j, 0));
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Orthonormal columns by modified Gram–Schmidt on Gaussian draws.
pub fn orthonormal_columns(rng: &mut Rng, n: usize, r: usize) -> Result<Matrix> {
    if r > n {
        return Err(Error::param("r", format!("cannot fit {r} orthonormal columns in dimension {n}")));
    }
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(r);
    while basis.len() < r {
        let mut v = gaussian(rng, n, 1, 1.0)?.into_vec();
        for _ in 0..2 {
            for q in &basis {
                let c = dot(&v, q);
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= c * qi;
                }
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    let mut u = Matrix::zeros(n, r);
    for (j, q) in basis.iter().enumerate() {
        for (i, v) in q.iter().enumerate() {
            u.set(i, j, *v);
        }
    }
    Ok(u)
}

/// Unit vector orthogonal to every column of the orthonormal matrix `q`.
pub fn complement_direction(rng: &mut Rng, q: &Matrix) -> Result<Matrix> {
    let n = q.rows();
    if q.cols() >= n {
        return Err(Error::param("r", format!("column space of {} leaves no complement", q.shape_str())));
    }
    loop {
        let mut w = gaussian(rng, n, 1, 1.0)?;
        for _ in 0..2 {
            let coeffs = q.t_matmul(&w)?;
            w = w.sub(&q.matmul(&coeffs)?)?;
        }
        let norm = w.frobenius();
        if norm > 1e-6 {
            return Ok(w.scale(1.0 / norm));
        }
    }
}

fn check_rank(n: usize, r: usize) -> Result<()> {
    if r == 0 || r >= n {
        return Err(Error::param(
            "r",
            format!("need 1 <= r < n for a nontrivial nullspace, got r={r}, n={n}"),
        ));
    }
    Ok(())
}

/// Rank-one pair `X₁ = a vᵀ`, `X₂ = a (v + w)ᵀ` with `wᵀU = 0`.
pub fn thm1_pair_from_witnesses(a: Matrix, v: Matrix, w: Matrix, u: Matrix) -> Result<CounterexamplePair> {
    let x1 = outer(&a, &v);
    let x2 = outer(&a, &v.add(&w)?);
    Ok(CounterexamplePair {
        x1,
        x2,
        u,
        v_bank: None,
        witness_a: a,
        witness_v: v,
        witness_w: w,
    })
}

/// Random first-order collision separated by the column Gram view `(XᵀX)U`.
pub fn construct_thm1_pair(rng: &mut Rng, m: usize, n: usize, r: usize) -> Result<CounterexamplePair> {
    check_rank(n, r)?;
    if m == 0 {
        return Err(Error::param("m", "must be at least 1"));
    }
    let u = orthonormal_columns(rng, n, r)?;
    let w = complement_direction(rng, &u)?;
    let v = loop {
        let v = gaussian(rng, n, 1, 1.0)?;
        if u.t_matmul(&v)?.max_abs() > 1e-6 {
            break v;
        }
    };
    let a = loop {
        let a = gaussian(rng, m, 1, 1.0)?;
        if a.frobenius() > 1e-6 {
            break a;
        }
    };
    thm1_pair_from_witnesses(a, v, w, u)
}

/// Evaluates `‖Φ₁‖` and `‖Φ₂‖` differences plus the closed form `‖a‖²‖w vᵀU‖_F`.
pub fn check_thm1(pair: &CounterexamplePair) -> Result<PairCheck> {
    let u = &pair.u;
    let first = pair.x1.matmul(u)?.sub(&pair.x2.matmul(u)?)?.frobenius();
    let phi2 = |x: &Matrix| x.t_matmul(&x.matmul(u)?);
    let separating = phi2(&pair.x2)?.sub(&phi2(&pair.x1)?)?.frobenius();
    let vt_u = pair.witness_v.t_matmul(u)?;
    let predicted = pair.witness_a.frobenius_sq() * pair.witness_w.matmul(&vt_u)?.frobenius();
    Ok(PairCheck {
        first_order_diff: first,
        separating_diff: separating,
        predicted_diff: predicted,
    })
}

/// Random collision `X₂ = X₁ + a wᵀ` separated by the column probe `XᵀV`.
pub fn construct_thm2_pair(rng: &mut Rng, m: usize, n: usize, r: usize) -> Result<CounterexamplePair> {
    check_rank(n, r)?;
    if m == 0 {
        return Err(Error::param("m", "must be at least 1"));
    }
    let u = orthonormal_columns(rng, n, r)?;
    let v_bank = loop {
        let v = gaussian(rng, m, r, 1.0)?;
        if v.max_abs() > 1e-6 {
            break v;
        }
    };
    let w = complement_direction(rng, &u)?;
    let a = loop {
        let a = gaussian(rng, m, 1, 1.0)?;
        if v_bank.t_matmul(&a)?.max_abs() > 1e-6 {
            break a;
        }
    };
    let x1 = gaussian(rng, m, n, 1.0)?;
    thm2_pair_from_witnesses(x1, a, w, u, v_bank)
}

pub fn thm2_pair_from_witnesses(
    x1: Matrix,
    a: Matrix,
    w: Matrix,
    u: Matrix,
    v_bank: Matrix,
) -> Result<CounterexamplePair> {
    let x2 = x1.add(&outer(&a, &w))?;
    Ok(CounterexamplePair {
        x1,
        x2,
        u,
        v_bank: Some(v_bank),
        witness_v: Matrix::zeros(w.rows(), 1),
        witness_a: a,
        witness_w: w,
    })
}

/// Evaluates the `XU` collision and the `XᵀV` separation `‖w (aᵀV)‖_F`.
pub fn check_thm2(pair: &CounterexamplePair) -> Result<PairCheck> {
    let v_bank = pair
        .v_bank
        .as_ref()
        .ok_or_else(|| Error::Consistency("transpose-complement check needs a V bank".into()))?;
    let u = &pair.u;
    let first = pair.x1.matmul(u)?.sub(&pair.x2.matmul(u)?)?.frobenius();
    let separating = pair
        .x2
        .t_matmul(v_bank)?
        .sub(&pair.x1.t_matmul(v_bank)?)?
        .frobenius();
    let at_v = pair.witness_a.t_matmul(v_bank)?;
    let predicted = pair.witness_w.matmul(&at_v)?.frobenius();
    Ok(PairCheck {
        first_order_diff: first,
        separating_diff: separating,
        predicted_diff: predicted,
    })
}

/// Closed-form `E‖XXᵀW‖² / E‖XU‖² = n(n+m+1)σ²/m`.
pub fn scale_ratio_exact(m: usize, n: usize, sigma: f64) -> f64 {
    let (m, n) = (m as f64, n as f64);
    n * (n + m + 1.0) * sigma * sigma / m
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScaleEstimate {
    pub m: usize,
    pub n: usize,
    pub r: usize,
    pub sigma: f64,
    pub trials: usize,
    /// Monte Carlo mean of `‖XU‖²_F`
    pub first_moment: f64,
    /// Monte Carlo mean of `‖XXᵀW‖²_F`
    pub second_moment: f64,
    pub ratio_mc: f64,
    pub ratio_exact: f64,
}

impl ScaleEstimate {
    pub fn expected_first(&self) -> f64 {
        (self.m * self.r) as f64 * self.sigma * self.sigma
    }

    pub fn expected_second(&self) -> f64 {
        let (m, n) = (self.m as f64, self.n as f64);
        self.r as f64 * n * (n + m + 1.0) * self.sigma.powi(4)
    }

    pub fn ratio_rel_error(&self) -> f64 {
        (self.ratio_mc - self.ratio_exact).abs() / self.ratio_exact
    }
}

fn unit_columns(rng: &mut Rng, rows: usize, cols: usize) -> Result<Matrix> {
    let mut g = gaussian(rng, rows, cols, 1.0)?;
    let norms = g.column_norms();
    for i in 0..rows {
        for (j, norm) in norms.iter().enumerate() {
            let v = g.get(i, j) / norm;
            g.set(i, j, v);
        }
    }
    Ok(g)
}

/// Monte Carlo estimate of both response energies over fresh Gaussian `X`.
///
/// Unit-norm probes are drawn once; trial `t` draws `X` from `rng.fork(t)`.
pub fn scale_ratio_montecarlo(
    rng: &mut Rng,
    m: usize,
    n: usize,
    sigma: f64,
    r: usize,
    trials: usize,
) -> Result<ScaleEstimate> {
    use rayon::prelude::*;

    if trials < 100 {
        return Err(Error::param("trials", format!("need at least 100, got {trials}")));
    }
    if m == 0 || n == 0 || r == 0 {
        return Err(Error::param("dims", "m, n, r must be positive"));
    }
    let u = unit_columns(rng, n, r)?;
    let w = unit_columns(rng, m, r)?;
    let base = rng.fork(0x5CA1E);
    let per_trial: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<(f64, f64)> {
            let mut trial_rng = base.fork(t as u64);
            let x = gaussian(&mut trial_rng, m, n, sigma)?;
            let s1 = x.matmul(&u)?.frobenius_sq();
            let s2 = x.matmul(&x.t_matmul(&w)?)?.frobenius_sq();
            Ok((s1, s2))
        })
        .collect::<Result<Vec<_>>>()?;
    let (sum1, sum2) = per_trial
        .iter()
        .fold((0.0, 0.0), |(a, b), (s1, s2)| (a + s1, b + s2));
    let first = sum1 / trials as f64;
    let second = sum2 / trials as f64;
    Ok(ScaleEstimate {
        m,
        n,
        r,
        sigma,
        trials,
        first_moment: first,
        second_moment: second,
        ratio_mc: second / first,
        ratio_exact: scale_ratio_exact(m, n, sigma),
    })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Domination {
    pub dominates: bool,
    /// Largest column residual of projecting the stacked bank onto `col(U)`.
    pub residual: f64,
}

const DOMINATION_RIDGE: f64 = 1e-12;
const DOMINATION_TOL: f64 = 1e-8;
const REFINE_STEPS: usize = 2;

/// Solves `A x = b` for symmetric positive definite `A` (Cholesky).
fn solve_spd(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::Consistency(format!("matrix not positive definite at pivot {i}")));
                }
                l.set(i, i, s.sqrt());
            } else {
                l.set(i, j, s / l.get(j, j));
            }
        }
    }
    let mut x = b.clone();
    for col in 0..b.cols() {
        for i in 0..n {
            let mut s = x.get(i, col);
            for k in 0..i {
                s -= l.get(i, k) * x.get(k, col);
            }
            x.set(i, col, s / l.get(i, i));
        }
        for i in (0..n).rev() {
            let mut s = x.get(i, col);
            for k in i + 1..n {
                s -= l.get(k, i) * x.get(k, col);
            }
            x.set(i, col, s / l.get(i, i));
        }
    }
    Ok(x)
}

/// Column-space containment test `col(Ũ) ⊆ col(U)`.
pub fn check_uniform_domination(u_big: &Matrix, u: &Matrix) -> Result<Domination> {
    if u_big.rows() != u.rows() {
        return Err(Error::Shape {
            op: "check_uniform_domination",
            left: u_big.shape_str(),
            right: u.shape_str(),
        });
    }
    let mut gram = u.t_matmul(u)?;
    for i in 0..gram.rows() {
        let v = gram.get(i, i) + DOMINATION_RIDGE;
        gram.set(i, i, v);
    }
    let mut coeffs = solve_spd(&gram, &u.t_matmul(u_big)?)?;
    let mut resid = u_big.sub(&u.matmul(&coeffs)?)?;
    // the normal equations square cond(U); refining against the true residual
    // recovers the accuracy lost on ill-conditioned banks
    for _ in 0..REFINE_STEPS {
        coeffs.add_assign(&solve_spd(&gram, &u.t_matmul(&resid)?)?)?;
        resid = u_big.sub(&u.matmul(&coeffs)?)?;
    }
    let residual = resid.column_norms().into_iter().fold(0.0, f64::max);
    Ok(Domination {
        dominates: residual < DOMINATION_TOL,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thm1_rank_one_construction() {
        let u = Matrix::column(&[1.0, 0.0]);
        let pair = thm1_pair_from_witnesses(
            Matrix::column(&[1.0]),
            Matrix::column(&[1.0, 0.0]),
            Matrix::column(&[0.0, 1.0]),
            u.clone(),
        )
        .unwrap();
        assert_eq!(pair.x1, Matrix::from_rows(&[[1.0, 0.0]]));
        assert_eq!(pair.x2, Matrix::from_rows(&[[1.0, 1.0]]));
        assert_eq!(pair.x1.matmul(&u).unwrap(), Matrix::from_rows(&[[1.0]]));
        assert_eq!(pair.x2.matmul(&u).unwrap(), Matrix::from_rows(&[[1.0]]));
        let phi2 = |x: &Matrix| x.t_matmul(&x.matmul(&u).unwrap()).unwrap();
        assert_eq!(phi2(&pair.x1), Matrix::column(&[1.0, 0.0]));
        assert_eq!(phi2(&pair.x2), Matrix::column(&[1.0, 1.0]));
    }

    #[test]
    fn thm1_random_pairs_follow_closed_form() {
        let mut rng = Rng::new(10);
        for t in 0..1000 {
            let n = 2 + t % 15;
            let r = 1 + t % (n - 1);
            let m = 1 + t % 9;
            let pair = construct_thm1_pair(&mut rng, m, n, r).unwrap();
            let c = check_thm1(&pair).unwrap();
            assert!(c.first_order_diff < 1e-10);
            assert!(c.separating_diff > 1e-8);
            assert!(c.relative_error() < 1e-9, "{c:?}");
            assert!(pair.witness_w.t_matmul(&pair.u).unwrap().max_abs() < 1e-10);
        }
    }

    #[test]
    fn thm1_boundary_rank() {
        let mut rng = Rng::new(11);
        let pair = construct_thm1_pair(&mut rng, 5, 8, 7).unwrap();
        let c = check_thm1(&pair).unwrap();
        assert!(c.first_order_diff < 1e-10 && c.separating_diff > 1e-8);
        assert!(construct_thm1_pair(&mut rng, 5, 8, 8).is_err());
    }

    #[test]
    fn thm2_zero_base_construction() {
        let pair = thm2_pair_from_witnesses(
            Matrix::zeros(2, 2),
            Matrix::column(&[1.0, 0.0]),
            Matrix::column(&[0.0, 1.0]),
            Matrix::column(&[1.0, 0.0]),
            Matrix::column(&[1.0, 0.0]),
        )
        .unwrap();
        assert_eq!(pair.x2, Matrix::from_rows(&[[0.0, 1.0], [0.0, 0.0]]));
        assert_eq!(pair.x2.matmul(&pair.u).unwrap(), Matrix::zeros(2, 1));
        let v = pair.v_bank.as_ref().unwrap();
        assert_eq!(pair.x2.t_matmul(v).unwrap(), Matrix::column(&[0.0, 1.0]));
        let c = check_thm2(&pair).unwrap();
        assert_eq!(c.separating_diff, 1.0);
        assert_eq!(c.predicted_diff, 1.0);
    }

    #[test]
    fn thm2_random_and_refusal() {
        let mut rng = Rng::new(12);
        for t in 0..300 {
            let n = 2 + t % 20;
            let r = 1 + (t * 7) % (n - 1);
            let m = 1 + t % 13;
            let c = check_thm2(&construct_thm2_pair(&mut rng, m, n, r).unwrap()).unwrap();
            assert!(c.first_order_diff < 1e-10);
            assert!(c.separating_diff > 1e-8);
            assert!(c.relative_error() < 1e-9);
        }
        assert!(matches!(construct_thm2_pair(&mut rng, 3, 4, 4), Err(Error::Parameter { .. })));
    }

    #[test]
    fn scale_ratio_closed_form_values() {
        assert_eq!(scale_ratio_exact(4, 3, 1.0), 6.0);
        assert_eq!(scale_ratio_exact(2, 2, 1.0), 5.0);
        assert_eq!(scale_ratio_exact(64, 32, 2.0), 194.0);
    }

    #[test]
    fn scale_ratio_scalar_case() {
        let mut rng = Rng::new(13);
        let est = scale_ratio_montecarlo(&mut rng, 1, 1, 1.0, 1, 100_000).unwrap();
        assert_eq!(est.ratio_exact, 3.0);
        assert!(est.ratio_rel_error() < 0.10, "{est:?}");
    }

    #[test]
    fn scale_ratio_needs_trials() {
        let mut rng = Rng::new(1);
        assert!(scale_ratio_montecarlo(&mut rng, 4, 4, 1.0, 2, 99).is_err());
    }

    #[test]
    fn domination_cases() {
        let mut rng = Rng::new(14);
        let u = gaussian(&mut rng, 10, 3, 1.0).unwrap();
        let c = gaussian(&mut rng, 3, 12, 1.0).unwrap();
        let d = check_uniform_domination(&u.matmul(&c).unwrap(), &u).unwrap();
        assert!(d.dominates && d.residual < 1e-10, "{d:?}");

        let full = gaussian(&mut rng, 6, 6, 1.0).unwrap();
        let any = gaussian(&mut rng, 6, 24, 1.0).unwrap();
        assert!(check_uniform_domination(&any, &full).unwrap().dominates);

        let q = orthonormal_columns(&mut rng, 10, 3).unwrap();
        let w = complement_direction(&mut rng, &q).unwrap().scale(2.5);
        let d = check_uniform_domination(&w, &q).unwrap();
        assert!(!d.dominates);
        assert!((d.residual - 2.5).abs() < 1e-9);
    }
}
