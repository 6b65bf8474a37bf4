//! Convex quadratic programs `min 1/2 w'Pw + q'w  s.t.  lo <= A w <= hi`,
//! where rows may be softened into exact penalties, and the condensing of
//! the linearized MPC problem into that form.

mod admm;
pub mod condense;
mod linsys;

use std::io::Write;

use nalgebra::DMatrix;
use nalgebra_sparse::{CooMatrix, CscMatrix, CsrMatrix};
use serde::{Deserialize, Serialize};

use crate::error::QpError;

pub use admm::solve;
pub use linsys::minimum_degree_order;

/// Bounds at or beyond this magnitude are treated as infinite.
pub const INFINITE_BOUND: f64 = 1e20;

#[derive(Debug, Clone)]
pub struct QpProblem {
    /// Symmetric positive semidefinite Hessian, both triangles stored.
    pub p: CscMatrix<f64>,
    pub q: Vec<f64>,
    pub a: CsrMatrix<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Penalty weight per row. A row with a positive weight `c` is not a
    /// constraint; it adds `c * dist(A_i w, [lo_i, hi_i])` to the objective.
    pub soft: Vec<f64>,
}

impl QpProblem {
    pub fn new(p: CscMatrix<f64>, q: Vec<f64>, a: CsrMatrix<f64>, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, QpError> {
        let soft = vec![0.0; lo.len()];
        let prob = Self { p, q, a, lo, hi, soft };
        prob.validate()?;
        Ok(prob)
    }

    /// Replace the row penalty weights.
    pub fn with_soft(mut self, soft: Vec<f64>) -> Result<Self, QpError> {
        self.soft = soft;
        self.validate()?;
        Ok(self)
    }

    pub fn is_soft(&self, row: usize) -> bool {
        self.soft[row] > 0.0
    }

    /// Build from dense matrices, dropping exact zeros.
    pub fn from_dense(p: &DMatrix<f64>, q: &[f64], a: &DMatrix<f64>, lo: &[f64], hi: &[f64]) -> Result<Self, QpError> {
        let pc = CscMatrix::from(&dense_to_coo(p));
        let ac = CsrMatrix::from(&dense_to_coo(a));
        let prob = Self { p: pc, q: q.to_vec(), a: ac, lo: lo.to_vec(), hi: hi.to_vec(), soft: vec![0.0; lo.len()] };
        prob.validate()?;
        Ok(prob)
    }

    pub fn n_vars(&self) -> usize {
        self.q.len()
    }

    pub fn n_cons(&self) -> usize {
        self.lo.len()
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let d = self.q.len();
        let c = self.lo.len();
        let dims = [
            ("P rows", d, self.p.nrows()),
            ("P cols", d, self.p.ncols()),
            ("A cols", d, self.a.ncols()),
            ("A rows", c, self.a.nrows()),
            ("upper bounds", c, self.hi.len()),
            ("row penalties", c, self.soft.len()),
        ];
        for (what, expected, got) in dims {
            if expected != got {
                return Err(QpError::Dimension { what, expected, got });
            }
        }
        for i in 0..c {
            let bad_soft = !(self.soft[i].is_finite() && self.soft[i] >= 0.0);
            if self.lo[i] > self.hi[i] || self.lo[i].is_nan() || self.hi[i].is_nan() || bad_soft {
                return Err(QpError::Bounds(i));
            }
        }
        let scale = self.p.values().iter().fold(1.0_f64, |a, v| a.max(v.abs()));
        for (i, j, v) in self.p.triplet_iter() {
            let mirror = match self.p.get_entry(j, i) {
                Some(e) => e.into_value(),
                None => 0.0,
            };
            if (v - mirror).abs() > 1e-9 * scale {
                return Err(QpError::NotConvex);
            }
        }
        Ok(())
    }

    pub fn p_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.p.nrows(), self.p.ncols());
        for (i, j, v) in self.p.triplet_iter() {
            m[(i, j)] += *v;
        }
        m
    }

    pub fn a_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.a.nrows(), self.a.ncols());
        for (i, j, v) in self.a.triplet_iter() {
            m[(i, j)] += *v;
        }
        m
    }

    /// Quadratic objective plus the penalties of the soft rows.
    pub fn objective(&self, w: &[f64]) -> f64 {
        let pw = spmv_csc(&self.p, w);
        let mut f = 0.5 * dot(w, &pw) + dot(&self.q, w);
        if self.soft.iter().any(|c| *c > 0.0) {
            let aw = spmv_csr(&self.a, w);
            for (i, v) in aw.iter().enumerate() {
                if self.is_soft(i) {
                    f += self.soft[i] * (self.lo[i] - v).max(v - self.hi[i]).max(0.0);
                }
            }
        }
        f
    }

    /// Plain-text dump: dimensions, then P, q, A, lo, hi and the row
    /// penalties as whitespace separated rows.
    pub fn write_text<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "{} {}", self.n_vars(), self.n_cons())?;
        let p = self.p_dense();
        for i in 0..p.nrows() {
            writeln!(out, "{}", join(p.row(i).iter()))?;
        }
        writeln!(out, "{}", join(self.q.iter()))?;
        let a = self.a_dense();
        for i in 0..a.nrows() {
            writeln!(out, "{}", join(a.row(i).iter()))?;
        }
        writeln!(out, "{}", join(self.lo.iter()))?;
        writeln!(out, "{}", join(self.hi.iter()))?;
        writeln!(out, "{}", join(self.soft.iter()))
    }
}

fn join<'a>(it: impl Iterator<Item = &'a f64>) -> String {
    it.map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ")
}

fn dense_to_coo(m: &DMatrix<f64>) -> CooMatrix<f64> {
    let mut coo = CooMatrix::new(m.nrows(), m.ncols());
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let v = m[(i, j)];
            if v != 0.0 {
                coo.push(i, j, v);
            }
        }
    }
    coo
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn spmv_csc(m: &CscMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.nrows()];
    for (j, col) in m.col_iter().enumerate() {
        let xj = x[j];
        if xj != 0.0 {
            for (&i, &v) in col.row_indices().iter().zip(col.values()) {
                out[i] += v * xj;
            }
        }
    }
    out
}

pub(crate) fn spmv_csr(m: &CsrMatrix<f64>, x: &[f64]) -> Vec<f64> {
    m.row_iter()
        .map(|row| row.col_indices().iter().zip(row.values()).map(|(&j, &v)| v * x[j]).sum())
        .collect()
}

/// `A' y` for row-stored `A`.
pub(crate) fn spmv_csr_t(m: &CsrMatrix<f64>, y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.ncols()];
    for (i, row) in m.row_iter().enumerate() {
        let yi = y[i];
        if yi != 0.0 {
            for (&j, &v) in row.col_indices().iter().zip(row.values()) {
                out[j] += v * yi;
            }
        }
    }
    out
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |a, x| a.max(x.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearSolver {
    /// Dense Cholesky for small problems, sparse otherwise.
    Auto,
    Dense,
    Sparse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QpSettings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    /// Over-relaxation factor in (0, 2).
    pub alpha: f64,
    pub adaptive_rho: bool,
    /// Refactor only when the balanced penalty moves by more than this factor.
    pub adaptive_rho_tolerance: f64,
    pub scaling_iters: usize,
    pub check_interval: usize,
    pub eps_prim_inf: f64,
    pub eps_dual_inf: f64,
    pub polish: bool,
    /// First iteration at which polishing is attempted; later attempts
    /// follow at doubling intervals.
    pub polish_start: usize,
    pub linear_solver: LinearSolver,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            max_iter: 20000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            adaptive_rho: true,
            adaptive_rho_tolerance: 5.0,
            scaling_iters: 10,
            check_interval: 5,
            eps_prim_inf: 1e-7,
            eps_dual_inf: 1e-7,
            polish: true,
            polish_start: 50,
            linear_solver: LinearSolver::Auto,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Solved,
    MaxIter,
    PrimalInfeasible,
    DualInfeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub w: Vec<f64>,
    /// Constraint multipliers: positive at active upper bounds, negative at
    /// active lower bounds.
    pub y: Vec<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub prim_res: f64,
    pub dual_res: f64,
    pub objective: f64,
    pub polished: bool,
}

/// Primal and stationarity residuals of a candidate `(w, y)`.
pub fn kkt_residuals(problem: &QpProblem, w: &[f64], y: &[f64]) -> (f64, f64) {
    let aw = spmv_csr(&problem.a, w);
    let prim = aw
        .iter()
        .enumerate()
        .filter(|(i, _)| !problem.is_soft(*i))
        .map(|(i, v)| (v - v.clamp(problem.lo[i], problem.hi[i])).abs())
        .fold(0.0, f64::max);
    let pw = spmv_csc(&problem.p, w);
    let aty = spmv_csr_t(&problem.a, y);
    let dual = (0..w.len()).map(|j| (pw[j] + problem.q[j] + aty[j]).abs()).fold(0.0, f64::max);
    (prim, dual)
}
