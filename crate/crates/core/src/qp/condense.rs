//! Condensing of the linearized soft-constrained tracking problem into a
//! [`QpProblem`] over the free input deviations.
//!
//! The slack of an output sample is the distance of the predicted output to
//! its limits, so the slack variables are eliminated: each output row is a
//! soft row carrying its slack weight as exact penalty.

use nalgebra::DMatrix;
use nalgebra_sparse::{CooMatrix, CscMatrix, CsrMatrix};

use super::{QpProblem, INFINITE_BOUND};
use crate::error::QpError;
use crate::sensitivity::SensitivityBundle;

/// Diagonal weights. `q` and `slack` have one entry per output, `r` and
/// `r_reg` one per input.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub r_reg: Vec<f64>,
    pub slack: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Limits {
    pub u_lb: Vec<f64>,
    pub u_ub: Vec<f64>,
    pub y_lb: Vec<f64>,
    pub y_ub: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CondenseInput<'a> {
    pub weights: &'a Weights,
    pub limits: &'a Limits,
    pub y_ref: &'a [f64],
    pub u_ref: &'a [f64],
    /// Input applied over the previous sample.
    pub u_prev: &'a [f64],
    /// Inputs held at a fixed value over the whole horizon and removed from
    /// the decision vector.
    pub pinned: &'a [Option<f64>],
}

#[derive(Debug, Clone)]
pub struct Condensed {
    pub problem: QpProblem,
    /// `(k, i)` of each free input deviation, in decision-vector order.
    pub free: Vec<(usize, usize)>,
    pub horizon: usize,
    pub m: usize,
    pub p: usize,
    /// Input deviations implied by the pins, zero at free entries.
    pub delta_u_pinned: Vec<f64>,
    /// Predicted outputs at `w = 0`.
    pub y0: Vec<f64>,
    /// Index of the first output row in the constraint matrix.
    pub output_row: usize,
    /// Objective offset: `J_lin = objective(w) + constant`.
    pub constant: f64,
}

impl Condensed {
    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    /// Full `H·m` input deviation for decision vector `w`.
    pub fn delta_u(&self, w: &[f64]) -> Vec<f64> {
        let mut du = self.delta_u_pinned.clone();
        for (v, &(k, i)) in w.iter().zip(&self.free) {
            du[k * self.m + i] = *v;
        }
        du
    }

    /// Linearized outputs `y0 + G w` over samples `0..=H`.
    pub fn predicted_outputs(&self, w: &[f64]) -> Vec<f64> {
        let aw = super::spmv_csr(&self.problem.a, w);
        self.y0.iter().zip(&aw[self.output_row..]).map(|(y, d)| y + d).collect()
    }

    /// Smallest slacks making `w` feasible: the limit violation of each
    /// predicted output.
    pub fn slacks(&self, w: &[f64]) -> Vec<f64> {
        let aw = super::spmv_csr(&self.problem.a, w);
        (self.output_row..self.problem.n_cons())
            .map(|r| (self.problem.lo[r] - aw[r]).max(aw[r] - self.problem.hi[r]).max(0.0))
            .collect()
    }

    /// Decision vector reproducing `delta_u` at the free entries.
    pub fn pack(&self, delta_u: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&(k, i)| delta_u[k * self.m + i]).collect()
    }
}

fn check(what: &'static str, expected: usize, got: usize) -> Result<(), QpError> {
    if expected == got {
        Ok(())
    } else {
        Err(QpError::Dimension { what, expected, got })
    }
}

/// Build the condensed QP for the horizon described by `bundle`.
pub fn condense(bundle: &SensitivityBundle, input: &CondenseInput<'_>) -> Result<Condensed, QpError> {
    let (h, m, p) = (bundle.horizon, bundle.m, bundle.p);
    let ny = (h + 1) * p;
    let hm = h * m;
    let wts = input.weights;
    let lim = input.limits;
    check("output weights", p, wts.q.len())?;
    check("slack weights", p, wts.slack.len())?;
    check("input weights", m, wts.r.len())?;
    check("regularization weights", m, wts.r_reg.len())?;
    check("output reference", p, input.y_ref.len())?;
    check("input reference", m, input.u_ref.len())?;
    check("previous input", m, input.u_prev.len())?;
    check("pins", m, input.pinned.len())?;
    check("input lower bounds", m, lim.u_lb.len())?;
    check("input upper bounds", m, lim.u_ub.len())?;
    check("output lower bounds", p, lim.y_lb.len())?;
    check("output upper bounds", p, lim.y_ub.len())?;
    check("sensitivity rows", ny, bundle.pi_y.nrows())?;
    check("sensitivity columns", hm, bundle.pi_y.ncols())?;
    check("nominal outputs", ny, bundle.y_bar.len())?;
    check("nominal inputs", hm, bundle.u_bar.len())?;

    let u_bar = bundle.u_bar.as_slice();
    let mut free = Vec::new();
    let mut du_pin = vec![0.0; hm];
    for k in 0..h {
        for i in 0..m {
            match input.pinned[i] {
                Some(v) => du_pin[k * m + i] = v - u_bar[k * m + i],
                None => free.push((k, i)),
            }
        }
    }
    let nf = free.len();

    // y0 = y_bar + Pi_y du_pin, G = Pi_y restricted to free columns.
    let y0: Vec<f64> = {
        let du = nalgebra::DVector::from_column_slice(&du_pin);
        (&bundle.y_bar + &bundle.pi_y * du).as_slice().to_vec()
    };
    let g = DMatrix::from_fn(ny, nf, |r, c| {
        let (k, i) = free[c];
        bundle.pi_y[(r, k * m + i)]
    });
    let u0: Vec<f64> = (0..hm).map(|j| u_bar[j] + du_pin[j]).collect();

    // Quadratic part in the free variables, cost = v'Hv + 2 f'v + c0.
    let mut hv = DMatrix::<f64>::zeros(nf, nf);
    let mut fv = vec![0.0; nf];
    let mut c0 = 0.0;
    for r in 0..ny {
        let qw = wts.q[r % p];
        if qw == 0.0 {
            continue;
        }
        let e = y0[r] - input.y_ref[r % p];
        c0 += qw * e * e;
        for a in 0..nf {
            let ga = g[(r, a)];
            if ga == 0.0 {
                continue;
            }
            fv[a] += qw * ga * e;
            for b in 0..nf {
                hv[(a, b)] += qw * ga * g[(r, b)];
            }
        }
    }
    let col_of = |j: usize| free.iter().position(|&(k, i)| k * m + i == j);
    for j in 0..hm {
        let i = j % m;
        let e = u0[j] - input.u_ref[i];
        c0 += wts.r[i] * e * e;
        if let Some(a) = col_of(j) {
            hv[(a, a)] += wts.r[i];
            fv[a] += wts.r[i] * e;
        }
    }
    for k in 0..h {
        for i in 0..m {
            let cur = k * m + i;
            let prev_val = if k == 0 { input.u_prev[i] } else { u0[cur - m] };
            let e = u0[cur] - prev_val;
            let rw = wts.r_reg[i];
            c0 += rw * e * e;
            let a = col_of(cur);
            let b = if k == 0 { None } else { col_of(cur - m) };
            if let Some(a) = a {
                hv[(a, a)] += rw;
                fv[a] += rw * e;
            }
            if let Some(b) = b {
                hv[(b, b)] += rw;
                fv[b] -= rw * e;
            }
            if let (Some(a), Some(b)) = (a, b) {
                hv[(a, b)] -= rw;
                hv[(b, a)] -= rw;
            }
        }
    }

    let mut pc = CooMatrix::new(nf, nf);
    for b in 0..nf {
        for a in 0..nf {
            let v = hv[(a, b)] + hv[(b, a)];
            if v != 0.0 {
                pc.push(a, b, v);
            }
        }
    }
    let q: Vec<f64> = fv.iter().map(|v| 2.0 * v).collect();

    let nc = nf + ny;
    let mut lo = Vec::with_capacity(nc);
    let mut hi = Vec::with_capacity(nc);
    let mut soft = vec![0.0; nc];
    let mut ac = CooMatrix::new(nc, nf);
    for (a, &(k, i)) in free.iter().enumerate() {
        let base = u0[k * m + i];
        ac.push(a, a, 1.0);
        lo.push(lim.u_lb[i] - base);
        hi.push(lim.u_ub[i] - base);
    }
    let shift = |b: f64, y: f64| if b.abs() >= INFINITE_BOUND { b } else { b - y };
    for r in 0..ny {
        for a in 0..nf {
            if g[(r, a)] != 0.0 {
                ac.push(nf + r, a, g[(r, a)]);
            }
        }
        lo.push(shift(lim.y_lb[r % p], y0[r]));
        hi.push(shift(lim.y_ub[r % p], y0[r]));
        soft[nf + r] = wts.slack[r % p];
    }
    let problem = QpProblem::new(CscMatrix::from(&pc), q, CsrMatrix::from(&ac), lo, hi)?.with_soft(soft)?;
    Ok(Condensed { problem, free, horizon: h, m, p, delta_u_pinned: du_pin, y0, output_row: nf, constant: c0 })
}
