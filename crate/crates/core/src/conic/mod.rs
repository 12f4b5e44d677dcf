//! Small dense conic programs: builder types, a primal log-barrier solver, the
//! complex-to-real Hermitian embedding and a plain-text dump.
//!
//! Problems are posed as `minimize cᵀx` subject to affine expressions lying in
//! products of nonnegative orthants, second-order cones, PSD cones and
//! exponential cones, plus optional linear equalities.

mod dump;
mod embed;
mod solver;

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use nalgebra::DVector;

use crate::error::{Error, Result};

pub use embed::{complex_embed, HermitianBlock};
pub use solver::{solve_conic, SolverSettings};

/// `constant + Σ coeff·x[var]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AffineExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl AffineExpr {
    pub fn constant(c: f64) -> Self {
        AffineExpr {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(index: usize) -> Self {
        AffineExpr {
            terms: vec![(index, 1.0)],
            constant: 0.0,
        }
    }

    pub fn term(index: usize, coeff: f64) -> Self {
        AffineExpr {
            terms: vec![(index, coeff)],
            constant: 0.0,
        }
    }

    pub fn push(&mut self, index: usize, coeff: f64) {
        self.terms.push((index, coeff));
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>()
    }

    /// Merges duplicate indices and drops zero coefficients.
    pub fn simplified(&self) -> Self {
        let mut map: BTreeMap<usize, f64> = BTreeMap::new();
        for &(i, c) in &self.terms {
            *map.entry(i).or_insert(0.0) += c;
        }
        AffineExpr {
            terms: map.into_iter().filter(|&(_, c)| c != 0.0).collect(),
            constant: self.constant,
        }
    }

    pub fn max_var(&self) -> Option<usize> {
        self.terms.iter().map(|&(i, _)| i).max()
    }
}

impl From<f64> for AffineExpr {
    fn from(c: f64) -> Self {
        AffineExpr::constant(c)
    }
}

impl Add for AffineExpr {
    type Output = AffineExpr;
    fn add(mut self, rhs: AffineExpr) -> AffineExpr {
        self.terms.extend(rhs.terms);
        self.constant += rhs.constant;
        self
    }
}

impl AddAssign for AffineExpr {
    fn add_assign(&mut self, rhs: AffineExpr) {
        self.terms.extend(rhs.terms);
        self.constant += rhs.constant;
    }
}

impl Sub for AffineExpr {
    type Output = AffineExpr;
    fn sub(self, rhs: AffineExpr) -> AffineExpr {
        self + (-rhs)
    }
}

impl Neg for AffineExpr {
    type Output = AffineExpr;
    fn neg(self) -> AffineExpr {
        self * -1.0
    }
}

impl Mul<f64> for AffineExpr {
    type Output = AffineExpr;
    fn mul(mut self, rhs: f64) -> AffineExpr {
        for t in &mut self.terms {
            t.1 *= rhs;
        }
        self.constant *= rhs;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeKind {
    /// Every row `≥ 0`.
    NonNeg,
    /// `rows[0] ≥ ‖rows[1..]‖`.
    SecondOrder,
    /// Column-major `n × n` symmetric matrix `⪰ 0`.
    Psd(usize),
    /// `(x, y, z)` with `y·exp(x/y) ≤ z`, `y > 0`.
    Exponential,
}

impl ConeKind {
    /// Barrier parameter.
    pub fn degree(&self, rows: usize) -> f64 {
        match *self {
            ConeKind::NonNeg => rows as f64,
            ConeKind::SecondOrder => 2.0,
            ConeKind::Psd(n) => n as f64,
            ConeKind::Exponential => 3.0,
        }
    }
}

impl fmt::Display for ConeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConeKind::NonNeg => write!(f, "nonneg"),
            ConeKind::SecondOrder => write!(f, "soc"),
            ConeKind::Psd(n) => write!(f, "psd{n}"),
            ConeKind::Exponential => write!(f, "exp"),
        }
    }
}

/// One cone constraint with a family label used in diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeBlock {
    pub kind: ConeKind,
    pub label: String,
    pub rows: Vec<AffineExpr>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicProblem {
    pub num_vars: usize,
    /// Dense linear objective, minimized.
    pub objective: Vec<f64>,
    pub objective_constant: f64,
    pub blocks: Vec<ConeBlock>,
    /// Each expression is constrained to equal zero.
    pub equalities: Vec<AffineExpr>,
    pub warm_start: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIter,
    NumericalFailure,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::MaxIter => "max-iter",
            SolveStatus::NumericalFailure => "numerical-failure",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    /// `cᵀx + constant` at `x`.
    pub objective: f64,
    /// Barrier duality-gap bound `ν/t` at termination.
    pub gap: f64,
    pub newton_steps: usize,
    /// On infeasibility, the family whose constraint stayed furthest from feasible.
    pub binding: Option<String>,
}

impl ConicSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

impl ConicProblem {
    pub fn new(num_vars: usize) -> Self {
        ConicProblem {
            num_vars,
            objective: vec![0.0; num_vars],
            objective_constant: 0.0,
            blocks: Vec::new(),
            equalities: Vec::new(),
            warm_start: None,
        }
    }

    pub fn add_var(&mut self) -> usize {
        self.num_vars += 1;
        self.objective.push(0.0);
        self.num_vars - 1
    }

    /// Appends `count` variables and returns the first index.
    pub fn add_vars(&mut self, count: usize) -> usize {
        let first = self.num_vars;
        self.num_vars += count;
        self.objective.resize(self.num_vars, 0.0);
        first
    }

    /// Adds `expr` to the minimized objective.
    pub fn minimize(&mut self, expr: &AffineExpr) {
        for &(i, c) in &expr.terms {
            self.objective[i] += c;
        }
        self.objective_constant += expr.constant;
    }

    pub fn nonneg(&mut self, label: impl Into<String>, expr: AffineExpr) {
        self.blocks.push(ConeBlock {
            kind: ConeKind::NonNeg,
            label: label.into(),
            rows: vec![expr],
        });
    }

    /// `lhs ≤ rhs`.
    pub fn less_eq(&mut self, label: impl Into<String>, lhs: AffineExpr, rhs: AffineExpr) {
        self.nonneg(label, rhs - lhs);
    }

    /// `‖xs‖ ≤ t`.
    pub fn soc(&mut self, label: impl Into<String>, t: AffineExpr, xs: Vec<AffineExpr>) {
        let mut rows = Vec::with_capacity(xs.len() + 1);
        rows.push(t);
        rows.extend(xs);
        self.blocks.push(ConeBlock {
            kind: ConeKind::SecondOrder,
            label: label.into(),
            rows,
        });
    }

    /// `‖z‖² ≤ w` for affine `z`, `w`, as `‖(2z, w-1)‖ ≤ w+1`.
    pub fn squared_norm_le(&mut self, label: impl Into<String>, z: Vec<AffineExpr>, w: AffineExpr) {
        let mut xs: Vec<AffineExpr> = z.into_iter().map(|e| e * 2.0).collect();
        xs.push(w.clone() - AffineExpr::constant(1.0));
        self.soc(label, w + AffineExpr::constant(1.0), xs);
    }

    /// `a·b ≥ c²` with `a, b ≥ 0`, as `‖(2c, a-b)‖ ≤ a+b`.
    pub fn rotated_soc(&mut self, label: impl Into<String>, a: AffineExpr, b: AffineExpr, c: AffineExpr) {
        self.soc(label, a.clone() + b.clone(), vec![c * 2.0, a - b]);
    }

    /// Symmetric PSD block given column-major entries.
    pub fn psd(&mut self, label: impl Into<String>, n: usize, entries: Vec<AffineExpr>) -> Result<()> {
        if entries.len() != n * n {
            return Err(Error::Dimension {
                what: "PSD block entries",
                expected: n * n,
                got: entries.len(),
            });
        }
        for i in 0..n {
            for j in i + 1..n {
                let a = entries[i + j * n].simplified();
                let b = entries[j + i * n].simplified();
                if a != b {
                    return Err(Error::NotHermitian(
                        (a.constant - b.constant).abs().max(f64::EPSILON),
                    ));
                }
            }
        }
        self.blocks.push(ConeBlock {
            kind: ConeKind::Psd(n),
            label: label.into(),
            rows: entries,
        });
        Ok(())
    }

    /// `y·exp(x/y) ≤ z`.
    pub fn exp_cone(&mut self, label: impl Into<String>, x: AffineExpr, y: AffineExpr, z: AffineExpr) {
        self.blocks.push(ConeBlock {
            kind: ConeKind::Exponential,
            label: label.into(),
            rows: vec![x, y, z],
        });
    }

    pub fn equality(&mut self, expr: AffineExpr) {
        self.equalities.push(expr);
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective_constant + self.objective.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }

    pub fn count(&self, kind: ConeKind) -> usize {
        self.blocks.iter().filter(|b| b.kind == kind).count()
    }

    pub fn count_labelled(&self, prefix: &str) -> usize {
        self.blocks.iter().filter(|b| b.label.starts_with(prefix)).count()
    }

    pub fn validate(&self) -> Result<()> {
        let too_big = |e: &AffineExpr| e.max_var().is_some_and(|m| m >= self.num_vars);
        if self.objective.len() != self.num_vars {
            return Err(Error::Dimension {
                what: "objective length",
                expected: self.num_vars,
                got: self.objective.len(),
            });
        }
        for b in &self.blocks {
            let ok_len = match b.kind {
                ConeKind::NonNeg => !b.rows.is_empty(),
                ConeKind::SecondOrder => !b.rows.is_empty(),
                ConeKind::Psd(n) => b.rows.len() == n * n,
                ConeKind::Exponential => b.rows.len() == 3,
            };
            if !ok_len || b.rows.iter().any(too_big) {
                return Err(Error::InvalidScenario(format!(
                    "malformed cone block '{}'",
                    b.label
                )));
            }
        }
        if self.equalities.iter().any(too_big) {
            return Err(Error::InvalidScenario("equality references unknown variable".into()));
        }
        if let Some(w) = &self.warm_start {
            if w.len() != self.num_vars {
                return Err(Error::Dimension {
                    what: "warm start",
                    expected: self.num_vars,
                    got: w.len(),
                });
            }
        }
        Ok(())
    }

    /// Largest violation of any constraint at `x` (0 when feasible).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for b in &self.blocks {
            let s = DVector::from_iterator(b.rows.len(), b.rows.iter().map(|e| e.eval(x)));
            worst = worst.max(solver::cone_violation(b.kind, &s));
        }
        for e in &self.equalities {
            worst = worst.max(e.eval(x).abs());
        }
        worst
    }
}
