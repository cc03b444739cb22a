//! Probe branches: first-order projections, Gram-kernel responses and the
//! higher-order chains, all evaluated as thin products against `X` / `Xᵀ`.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// One application of the weight matrix or its transpose.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Apply {
    X,
    XT,
}

impl Apply {
    fn adjoint(self) -> Apply {
        match self {
            Apply::X => Apply::XT,
            Apply::XT => Apply::X,
        }
    }

    fn run(self, x: &Matrix, p: &Matrix) -> Result<Matrix> {
        match self {
            Apply::X => x.matmul(p),
            Apply::XT => x.t_matmul(p),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BranchKind {
    #[serde(rename = "xu")]
    Row,
    #[serde(rename = "xtv")]
    Col,
    #[serde(rename = "xxtw")]
    RowKernel,
    #[serde(rename = "xtxz")]
    ColKernel,
    #[serde(rename = "o3r")]
    Order3Row,
    #[serde(rename = "o3c")]
    Order3Col,
    #[serde(rename = "o4r")]
    Order4Row,
    #[serde(rename = "o4c")]
    Order4Col,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// `m` (output neurons)
    Rows,
    /// `n` (input features)
    Cols,
}

impl BranchKind {
    pub const ALL: [BranchKind; 8] = [
        BranchKind::Row,
        BranchKind::Col,
        BranchKind::RowKernel,
        BranchKind::ColKernel,
        BranchKind::Order3Row,
        BranchKind::Order3Col,
        BranchKind::Order4Row,
        BranchKind::Order4Col,
    ];

    /// The four default branches.
    pub const DEFAULT: [BranchKind; 4] = [
        BranchKind::Row,
        BranchKind::Col,
        BranchKind::RowKernel,
        BranchKind::ColKernel,
    ];

    /// Bit position in the checkpoint branch mask.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<BranchKind> {
        BranchKind::ALL.get(i).copied()
    }

    /// Operators applied to the probe bank, first to last.
    pub fn chain(self) -> &'static [Apply] {
        use Apply::*;
        match self {
            BranchKind::Row => &[X],
            BranchKind::Col => &[XT],
            BranchKind::RowKernel => &[XT, X],
            BranchKind::ColKernel => &[X, XT],
            BranchKind::Order3Row => &[X, XT, X],
            BranchKind::Order3Col => &[XT, X, XT],
            BranchKind::Order4Row => &[XT, X, XT, X],
            BranchKind::Order4Col => &[X, XT, X, XT],
        }
    }

    /// Number of `X`/`Xᵀ` applications.
    pub fn order(self) -> usize {
        self.chain().len()
    }

    /// Side the probe bank lives on.
    pub fn probe_side(self) -> Side {
        match self.chain()[0] {
            Apply::X => Side::Cols,
            Apply::XT => Side::Rows,
        }
    }

    /// Side of the response matrix.
    pub fn response_side(self) -> Side {
        match self.chain()[self.order() - 1] {
            Apply::X => Side::Rows,
            Apply::XT => Side::Cols,
        }
    }

    pub fn probe_rows(self, m: usize, n: usize) -> usize {
        match self.probe_side() {
            Side::Rows => m,
            Side::Cols => n,
        }
    }

    pub fn response_rows(self, m: usize, n: usize) -> usize {
        match self.response_side() {
            Side::Rows => m,
            Side::Cols => n,
        }
    }

    /// Command-line token, mirroring the math label of each branch.
    pub fn token(self) -> &'static str {
        match self {
            BranchKind::Row => "xu",
            BranchKind::Col => "xtv",
            BranchKind::RowKernel => "xxtw",
            BranchKind::ColKernel => "xtxz",
            BranchKind::Order3Row => "o3r",
            BranchKind::Order3Col => "o3c",
            BranchKind::Order4Row => "o4r",
            BranchKind::Order4Col => "o4c",
        }
    }

    pub fn valid_tokens() -> String {
        BranchKind::ALL.iter().map(|k| k.token()).collect::<Vec<_>>().join(", ")
    }

    /// Parses a comma-separated branch list such as `xu,xtv`.
    pub fn parse_list(s: &str) -> Result<Vec<BranchKind>> {
        let mut out = Vec::new();
        for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let kind: BranchKind = tok.parse()?;
            if out.contains(&kind) {
                return Err(Error::param("branches", format!("duplicate branch `{tok}`")));
            }
            out.push(kind);
        }
        if out.is_empty() {
            return Err(Error::param("branches", "empty branch list"));
        }
        Ok(out)
    }

    pub fn list_token(kinds: &[BranchKind]) -> String {
        kinds.iter().map(|k| k.token()).collect::<Vec<_>>().join(",")
    }
}

impl fmt::Display for BranchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for BranchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BranchKind::ALL
            .iter()
            .copied()
            .find(|k| k.token() == s)
            .ok_or_else(|| {
                Error::param(
                    "branches",
                    format!("unknown branch token `{s}`; valid tokens: {}", BranchKind::valid_tokens()),
                )
            })
    }
}

/// A learnable probe matrix tied to one branch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeBank {
    pub kind: BranchKind,
    pub probes: Matrix,
}

impl ProbeBank {
    pub fn new(kind: BranchKind, probes: Matrix) -> Self {
        ProbeBank { kind, probes }
    }

    pub fn r(&self) -> usize {
        self.probes.cols()
    }

    /// Checks the probe shape against a weight matrix of shape `m × n`.
    pub fn check(&self, m: usize, n: usize) -> Result<()> {
        let want = self.kind.probe_rows(m, n);
        if self.probes.rows() != want {
            return Err(Error::Shape {
                op: "probe bank",
                left: format!("{} weight {m}x{n}", self.kind),
                right: format!("probes {} (expected {want} rows)", self.probes.shape_str()),
            });
        }
        Ok(())
    }
}

/// Runs the branch chain against `p`, one thin product per step.
pub fn apply_chain(x: &Matrix, kind: BranchKind, p: &Matrix) -> Result<Matrix> {
    let mut cur = p.clone();
    for op in kind.chain() {
        cur = op.run(x, &cur)?;
    }
    Ok(cur)
}

/// Adjoint of [`apply_chain`]: maps a response-shaped upstream gradient back
/// to probe shape.
pub fn apply_chain_adjoint(x: &Matrix, kind: BranchKind, upstream: &Matrix) -> Result<Matrix> {
    let mut cur = upstream.clone();
    for op in kind.chain().iter().rev() {
        cur = op.adjoint().run(x, &cur)?;
    }
    Ok(cur)
}

/// Response of any branch, evaluated associatively.
pub fn response(x: &Matrix, bank: &ProbeBank) -> Result<Matrix> {
    bank.check(x.rows(), x.cols())?;
    apply_chain(x, bank.kind, &bank.probes)
}

fn require(bank: &ProbeBank, allowed: &[BranchKind], op: &'static str) -> Result<()> {
    if allowed.contains(&bank.kind) {
        Ok(())
    } else {
        Err(Error::Shape {
            op,
            left: format!("branch {}", bank.kind),
            right: format!("expected one of {}", BranchKind::list_token(allowed)),
        })
    }
}

/// `X·U` (row probing) or `Xᵀ·V` (column probing).
pub fn first_order_response(x: &Matrix, bank: &ProbeBank) -> Result<Matrix> {
    require(bank, &[BranchKind::Row, BranchKind::Col], "first_order_response")?;
    response(x, bank)
}

/// `X(XᵀW)` or `Xᵀ(XZ)`; never forms a Gram matrix.
pub fn second_order_response(x: &Matrix, bank: &ProbeBank) -> Result<Matrix> {
    require(bank, &[BranchKind::RowKernel, BranchKind::ColKernel], "second_order_response")?;
    response(x, bank)
}

pub fn higher_order_response(x: &Matrix, bank: &ProbeBank) -> Result<Matrix> {
    require(
        bank,
        &[
            BranchKind::Order3Row,
            BranchKind::Order3Col,
            BranchKind::Order4Row,
            BranchKind::Order4Col,
        ],
        "higher_order_response",
    )?;
    response(x, bank)
}

/// Reference evaluation that materializes the Gram matrix first.
///
/// Pairs of applications collapse into `XXᵀ` (`m × m`) or `XᵀX` (`n × n`);
/// an odd leftover application is a plain thin product.
pub fn naive_gram_response(x: &Matrix, bank: &ProbeBank) -> Result<Matrix> {
    bank.check(x.rows(), x.cols())?;
    let chain = bank.kind.chain();
    if chain.len() == 1 {
        return apply_chain(x, bank.kind, &bank.probes);
    }
    let row_gram = || x.matmul(&x.transpose());
    let col_gram = || x.t_matmul(x);
    let mut cur = bank.probes.clone();
    let mut rest = chain;
    if chain.len() % 2 == 1 {
        cur = chain[0].run(x, &cur)?;
        rest = &chain[1..];
    }
    let gram = match rest[0] {
        // [Xᵀ, X] acting on an m-row operand is XXᵀ
        Apply::XT => row_gram()?,
        Apply::X => col_gram()?,
    };
    for _ in 0..rest.len() / 2 {
        cur = gram.matmul(&cur)?;
    }
    Ok(cur)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlopStrategy {
    Associative,
    NaiveGram,
}

/// Analytic FLOP count at two FLOPs per multiply-accumulate.
///
/// Associative: `2mnr` per application of `X` or `Xᵀ`. Naive: forming the
/// Gram matrix once plus one `Gram · operand` product per application pair,
/// plus `2mnr` for an odd leftover application.
pub fn branch_flops(m: u64, n: u64, r: u64, kind: BranchKind, strategy: FlopStrategy) -> u64 {
    if r == 0 || m == 0 || n == 0 {
        return 0;
    }
    let order = kind.order() as u64;
    let thin = 2 * m * n * r;
    match strategy {
        FlopStrategy::Associative => order * thin,
        FlopStrategy::NaiveGram => {
            if order == 1 {
                return thin;
            }
            let chain = kind.chain();
            let (odd, rest) = if chain.len() % 2 == 1 {
                (thin, &chain[1..])
            } else {
                (0, chain)
            };
            // side length of the Gram matrix and its contracted dimension
            let (g, inner) = match rest[0] {
                Apply::XT => (m, n),
                Apply::X => (n, m),
            };
            let pairs = rest.len() as u64 / 2;
            odd + 2 * g * g * inner + pairs * 2 * g * g * r
        }
    }
}
