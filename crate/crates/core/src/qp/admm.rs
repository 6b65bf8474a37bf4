//! Operator-splitting (ADMM) solver with Ruiz equilibration, residual
//! balancing of the penalty, infeasibility certificates and an active-set
//! polishing step. Soft rows enter through the proximal operator of their
//! penalty in the projection step.

use nalgebra_sparse::{CscMatrix, CsrMatrix};

use super::linsys::ReducedKkt;
use super::{
    dot, inf_norm, kkt_residuals, spmv_csc, spmv_csr, spmv_csr_t, QpProblem, QpSettings, QpSolution, QpStatus,
    INFINITE_BOUND,
};
use crate::error::QpError;

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_FACTOR: f64 = 1e3;
const RHO_INTERVAL: usize = 25;
const POLISH_DELTA: f64 = 1e-6;
const POLISH_REFINE: usize = 3;
const POLISH_ROUNDS: usize = 12;

struct Scaled {
    p: CscMatrix<f64>,
    a: CsrMatrix<f64>,
    a_csc: CscMatrix<f64>,
    q: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    /// Row penalty weights in scaled units, zero for hard rows.
    soft: Vec<f64>,
    d: Vec<f64>,
    e: Vec<f64>,
    c: f64,
}

impl Scaled {
    /// Projection onto the bounds for hard rows, proximal step of the
    /// penalty for soft rows.
    fn prox(&self, i: usize, v: f64, rho: f64) -> f64 {
        let (lo, hi) = (self.lo[i], self.hi[i]);
        if self.soft[i] == 0.0 {
            return v.clamp(lo, hi);
        }
        let k = self.soft[i] / rho;
        if v > hi + k {
            v - k
        } else if v > hi {
            hi
        } else if v >= lo {
            v
        } else if v >= lo - k {
            lo
        } else {
            v + k
        }
    }
}

fn limit_norm(v: f64) -> f64 {
    if v < 1e-4 {
        1.0
    } else {
        v.min(1e4)
    }
}

fn equilibrate(problem: &QpProblem, iters: usize) -> Scaled {
    let nv = problem.n_vars();
    let nc = problem.n_cons();
    let mut p = problem.p.clone();
    let mut a = problem.a.clone();
    let mut q = problem.q.clone();
    let mut d = vec![1.0; nv];
    let mut e = vec![1.0; nc];
    let mut c = 1.0;
    for _ in 0..iters {
        let mut col = vec![0.0_f64; nv];
        for (_, j, v) in p.triplet_iter() {
            col[j] = col[j].max(v.abs());
        }
        let mut row = vec![0.0_f64; nc];
        for (i, j, v) in a.triplet_iter() {
            col[j] = col[j].max(v.abs());
            row[i] = row[i].max(v.abs());
        }
        let dd: Vec<f64> = col.iter().map(|v| 1.0 / limit_norm(*v).sqrt()).collect();
        let ee: Vec<f64> = row.iter().map(|v| 1.0 / limit_norm(*v).sqrt()).collect();
        for (i, j, v) in p.triplet_iter_mut() {
            *v *= dd[i] * dd[j];
        }
        for (i, j, v) in a.triplet_iter_mut() {
            *v *= ee[i] * dd[j];
        }
        for j in 0..nv {
            q[j] *= dd[j];
            d[j] *= dd[j];
        }
        for i in 0..nc {
            e[i] *= ee[i];
        }
        // Cost scaling.
        let mut pcol = vec![0.0_f64; nv];
        for (_, j, v) in p.triplet_iter() {
            pcol[j] = pcol[j].max(v.abs());
        }
        let mean = if nv > 0 { pcol.iter().sum::<f64>() / nv as f64 } else { 0.0 };
        let gamma = 1.0 / limit_norm(mean.max(inf_norm(&q)));
        for v in p.values_mut() {
            *v *= gamma;
        }
        q.iter_mut().for_each(|v| *v *= gamma);
        c *= gamma;
    }
    let scale_bound = |b: f64, s: f64| if b.abs() >= INFINITE_BOUND { b } else { b * s };
    let lo = (0..nc).map(|i| scale_bound(problem.lo[i], e[i])).collect();
    let hi = (0..nc).map(|i| scale_bound(problem.hi[i], e[i])).collect();
    let soft = (0..nc).map(|i| c * problem.soft[i] / e[i]).collect();
    let a_csc = CscMatrix::from(&a);
    Scaled { p, a, a_csc, q, lo, hi, soft, d, e, c }
}

fn rho_vector(s: &Scaled, rho: f64) -> Vec<f64> {
    s.lo.iter()
        .zip(&s.hi)
        .zip(&s.soft)
        .map(|((&l, &u), &c)| {
            if l <= -INFINITE_BOUND && u >= INFINITE_BOUND {
                RHO_MIN
            } else if (u - l).abs() < 1e-4 && c == 0.0 {
                (RHO_EQ_FACTOR * rho).min(RHO_MAX)
            } else {
                rho
            }
        })
        .collect()
}

struct Residuals {
    prim: f64,
    dual: f64,
    prim_norm: f64,
    dual_norm: f64,
}

fn residuals(s: &Scaled, x: &[f64], z: &[f64], y: &[f64]) -> Residuals {
    let ax = spmv_csr(&s.a, x);
    let px = spmv_csc(&s.p, x);
    let aty = spmv_csr_t(&s.a, y);
    let mut prim = 0.0_f64;
    let mut ax_n = 0.0_f64;
    let mut z_n = 0.0_f64;
    for i in 0..ax.len() {
        let inv = 1.0 / s.e[i];
        prim = prim.max(((ax[i] - z[i]) * inv).abs());
        ax_n = ax_n.max((ax[i] * inv).abs());
        z_n = z_n.max((z[i] * inv).abs());
    }
    let mut dual = 0.0_f64;
    let (mut px_n, mut aty_n, mut q_n) = (0.0_f64, 0.0_f64, 0.0_f64);
    let ic = 1.0 / s.c;
    for j in 0..x.len() {
        let inv = ic / s.d[j];
        dual = dual.max(((px[j] + s.q[j] + aty[j]) * inv).abs());
        px_n = px_n.max((px[j] * inv).abs());
        aty_n = aty_n.max((aty[j] * inv).abs());
        q_n = q_n.max((s.q[j] * inv).abs());
    }
    Residuals { prim, dual, prim_norm: ax_n.max(z_n), dual_norm: px_n.max(aty_n).max(q_n) }
}

fn primal_infeasible(s: &Scaled, dy: &[f64], eps: f64) -> bool {
    let norm = dy.iter().zip(&s.e).map(|(v, e)| (v * e).abs()).fold(0.0, f64::max);
    if norm <= 1e-30 {
        return false;
    }
    let aty = spmv_csr_t(&s.a, dy);
    let lhs = aty.iter().zip(&s.d).map(|(v, d)| (v / d).abs()).fold(0.0, f64::max);
    if lhs > eps * norm {
        return false;
    }
    let mut support = 0.0;
    for i in 0..dy.len() {
        // A penalty never makes the problem infeasible.
        if s.soft[i] > 0.0 && dy[i] != 0.0 {
            return false;
        }
        if dy[i] > 0.0 {
            if s.hi[i] >= INFINITE_BOUND {
                return false;
            }
            support += s.hi[i] * dy[i];
        } else if dy[i] < 0.0 {
            if s.lo[i] <= -INFINITE_BOUND {
                return false;
            }
            support += s.lo[i] * dy[i];
        }
    }
    support < -eps * norm
}

fn dual_infeasible(s: &Scaled, dx: &[f64], eps: f64) -> bool {
    let norm = dx.iter().zip(&s.d).map(|(v, d)| (v * d).abs()).fold(0.0, f64::max);
    if norm <= 1e-30 {
        return false;
    }
    if dot(&s.q, dx) > -eps * norm * s.c {
        return false;
    }
    let px = spmv_csc(&s.p, dx);
    if px.iter().zip(&s.d).map(|(v, d)| (v / d).abs()).fold(0.0, f64::max) > eps * norm * s.c {
        return false;
    }
    let ax = spmv_csr(&s.a, dx);
    for i in 0..ax.len() {
        let v = ax[i] / s.e[i];
        let lo_inf = s.lo[i] <= -INFINITE_BOUND;
        let hi_inf = s.hi[i] >= INFINITE_BOUND;
        let ok = match (lo_inf, hi_inf) {
            (true, true) => true,
            (false, true) => v >= -eps * norm,
            (true, false) => v <= eps * norm,
            (false, false) => v.abs() <= eps * norm,
        };
        if !ok {
            return false;
        }
    }
    true
}

/// Solve a convex QP. `warm` optionally supplies a primal/dual starting point.
pub fn solve(problem: &QpProblem, settings: &QpSettings, warm: Option<(&[f64], &[f64])>) -> Result<QpSolution, QpError> {
    problem.validate()?;
    let nv = problem.n_vars();
    let nc = problem.n_cons();
    let s = equilibrate(problem, settings.scaling_iters);
    let mut rho_scalar = settings.rho;
    let mut rho = rho_vector(&s, rho_scalar);
    let mut perm_cache = None;
    let mut kkt = ReducedKkt::factor(&s.p, &s.a_csc, &s.a, settings.sigma, &rho, settings.linear_solver, &mut perm_cache)?;

    let (mut x, mut y) = match warm {
        Some((w0, y0)) if w0.len() == nv && y0.len() == nc => (
            (0..nv).map(|j| w0[j] / s.d[j]).collect::<Vec<_>>(),
            (0..nc).map(|i| y0[i] * s.c / s.e[i]).collect::<Vec<_>>(),
        ),
        _ => (vec![0.0; nv], vec![0.0; nc]),
    };
    let mut z: Vec<f64> = spmv_csr(&s.a, &x).iter().enumerate().map(|(i, v)| s.prox(i, *v, f64::INFINITY)).collect();

    let alpha = settings.alpha;
    let sigma = settings.sigma;
    let mut status = QpStatus::MaxIter;
    let mut iterations = settings.max_iter;
    let mut last = residuals(&s, &x, &z, &y);
    let mut next_polish = settings.polish_start.max(1);
    for k in 1..=settings.max_iter {
        let mut rhs = vec![0.0; nv];
        let w: Vec<f64> = (0..nc).map(|i| rho[i] * z[i] - y[i]).collect();
        let atw = spmv_csr_t(&s.a, &w);
        for j in 0..nv {
            rhs[j] = sigma * x[j] - s.q[j] + atw[j];
        }
        let xt = kkt.solve(&rhs);
        let zt = spmv_csr(&s.a, &xt);
        let x_prev = x.clone();
        let y_prev = y.clone();
        for j in 0..nv {
            x[j] = alpha * xt[j] + (1.0 - alpha) * x[j];
        }
        for i in 0..nc {
            let zr = alpha * zt[i] + (1.0 - alpha) * z[i];
            let zn = s.prox(i, zr + y[i] / rho[i], rho[i]);
            y[i] += rho[i] * (zr - zn);
            z[i] = zn;
        }

        let check = k % settings.check_interval.max(1) == 0 || k == settings.max_iter;
        if check {
            last = residuals(&s, &x, &z, &y);
            let eps_prim = settings.eps_abs + settings.eps_rel * last.prim_norm;
            let eps_dual = settings.eps_abs + settings.eps_rel * last.dual_norm;
            if last.prim <= eps_prim && last.dual <= eps_dual {
                status = QpStatus::Solved;
                iterations = k;
                break;
            }
            let dy: Vec<f64> = (0..nc).map(|i| y[i] - y_prev[i]).collect();
            if primal_infeasible(&s, &dy, settings.eps_prim_inf) {
                status = QpStatus::PrimalInfeasible;
                iterations = k;
                break;
            }
            let dx: Vec<f64> = (0..nv).map(|j| x[j] - x_prev[j]).collect();
            if dual_infeasible(&s, &dx, settings.eps_dual_inf) {
                status = QpStatus::DualInfeasible;
                iterations = k;
                break;
            }
        }
        if settings.polish && k == next_polish && k < settings.max_iter {
            next_polish *= 2;
            if let Some(sol) = polish(problem, &s, &z, &y, settings, &mut perm_cache) {
                return Ok(QpSolution { iterations: k, ..sol });
            }
        }
        if settings.adaptive_rho && k % RHO_INTERVAL == 0 {
            if !check {
                last = residuals(&s, &x, &z, &y);
            }
            let pr = last.prim / (last.prim_norm + 1e-30);
            let dr = last.dual / (last.dual_norm + 1e-30);
            let proposal = (rho_scalar * (pr / (dr + 1e-30)).sqrt()).clamp(RHO_MIN, RHO_MAX);
            let tol = settings.adaptive_rho_tolerance;
            if proposal > tol * rho_scalar || proposal < rho_scalar / tol {
                rho_scalar = proposal;
                rho = rho_vector(&s, rho_scalar);
                kkt = ReducedKkt::factor(&s.p, &s.a_csc, &s.a, sigma, &rho, settings.linear_solver, &mut perm_cache)?;
            }
        }
    }

    let w: Vec<f64> = (0..nv).map(|j| s.d[j] * x[j]).collect();
    let yu: Vec<f64> = (0..nc).map(|i| s.e[i] * y[i] / s.c).collect();
    let (prim_res, dual_res) = kkt_residuals(problem, &w, &yu);
    let sol = QpSolution {
        objective: problem.objective(&w),
        w,
        y: yu,
        status,
        iterations,
        prim_res,
        dual_res,
        polished: false,
    };
    // An iterate that ran out of iterations is often close enough for the
    // active set to be recovered, and polishing then gives the exact point.
    if settings.polish && matches!(status, QpStatus::Solved | QpStatus::MaxIter) {
        if let Some(p) = polish(problem, &s, &z, &y, settings, &mut perm_cache) {
            if status == QpStatus::MaxIter || (p.prim_res <= prim_res.max(settings.eps_abs) && p.dual_res <= dual_res.max(settings.eps_abs)) {
                return Ok(QpSolution { iterations, ..p });
            }
        }
    }
    Ok(sol)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Active {
    Inactive,
    Lower,
    Upper,
    /// Soft row beyond its lower bound, multiplier fixed at minus the weight.
    BelowSoft,
    /// Soft row beyond its upper bound, multiplier fixed at the weight.
    AboveSoft,
}

impl Active {
    fn on_bound(self) -> bool {
        matches!(self, Active::Lower | Active::Upper)
    }
}

/// Equality-constrained solve on an active set, in scaled coordinates.
/// The regularized system is reduced to `P + delta I + A' A / delta` on the
/// active rows and refined against the unregularized conditions.
fn solve_on_active_set(
    s: &Scaled,
    active: &[Active],
    settings: &QpSettings,
    perm_cache: &mut Option<Vec<usize>>,
) -> Option<(Vec<f64>, Vec<f64>)> {
    let nv = s.q.len();
    let nc = active.len();
    let weight: Vec<f64> = active.iter().map(|a| if a.on_bound() { 1.0 / POLISH_DELTA } else { 0.0 }).collect();
    let kkt = ReducedKkt::factor(&s.p, &s.a_csc, &s.a, POLISH_DELTA, &weight, settings.linear_solver, perm_cache).ok()?;
    let target: Vec<f64> = (0..nc)
        .map(|i| match active[i] {
            Active::Lower => s.lo[i],
            Active::Upper => s.hi[i],
            _ => 0.0,
        })
        .collect();
    let mut x = vec![0.0; nv];
    let mut y: Vec<f64> = (0..nc)
        .map(|i| match active[i] {
            Active::BelowSoft => -s.soft[i],
            Active::AboveSoft => s.soft[i],
            _ => 0.0,
        })
        .collect();
    for _ in 0..=POLISH_REFINE {
        let px = spmv_csc(&s.p, &x);
        let aty = spmv_csr_t(&s.a, &y);
        let r1: Vec<f64> = (0..nv).map(|j| -s.q[j] - px[j] - aty[j]).collect();
        let ax = spmv_csr(&s.a, &x);
        let r2: Vec<f64> = (0..nc).map(|i| if active[i].on_bound() { target[i] - ax[i] } else { 0.0 }).collect();
        let scaled_r2: Vec<f64> = (0..nc).map(|i| weight[i] * r2[i]).collect();
        let corr = spmv_csr_t(&s.a, &scaled_r2);
        let rhs: Vec<f64> = (0..nv).map(|j| r1[j] + corr[j]).collect();
        let dx = kkt.solve(&rhs);
        let adx = spmv_csr(&s.a, &dx);
        for j in 0..nv {
            x[j] += dx[j];
        }
        for i in 0..nc {
            y[i] += weight[i] * (adx[i] - r2[i]);
        }
    }
    if x.iter().chain(&y).all(|v| v.is_finite()) {
        Some((x, y))
    } else {
        None
    }
}

/// Recover the exact solution from an approximate iterate: guess the active
/// set, solve the equality-constrained problem on it, and correct the guess
/// from violated constraints and wrongly signed multipliers. Returns a
/// solution only if it satisfies the optimality conditions to `eps_abs`.
fn polish(
    problem: &QpProblem,
    s: &Scaled,
    z: &[f64],
    y: &[f64],
    settings: &QpSettings,
    perm_cache: &mut Option<Vec<usize>>,
) -> Option<QpSolution> {
    let nc = problem.n_cons();
    let tol = settings.eps_abs;
    let soft = |i: usize| problem.is_soft(i);
    let is_eq = |i: usize| problem.lo[i] == problem.hi[i] && !soft(i);
    let mut active: Vec<Active> = (0..nc)
        .map(|i| {
            if is_eq(i) {
                Active::Upper
            } else if soft(i) && z[i] > s.hi[i] {
                Active::AboveSoft
            } else if soft(i) && z[i] < s.lo[i] {
                Active::BelowSoft
            } else if z[i] - s.lo[i] < -y[i] {
                Active::Lower
            } else if s.hi[i] - z[i] < y[i] {
                Active::Upper
            } else {
                Active::Inactive
            }
        })
        .collect();
    for _ in 0..POLISH_ROUNDS {
        let (x, ys) = solve_on_active_set(s, &active, settings, perm_cache)?;
        let w: Vec<f64> = (0..x.len()).map(|j| s.d[j] * x[j]).collect();
        let yu: Vec<f64> = (0..nc).map(|i| s.e[i] * ys[i] / s.c).collect();
        let aw = spmv_csr(&problem.a, &w);
        let mut changed = false;
        for i in 0..nc {
            if is_eq(i) {
                continue;
            }
            let c = problem.soft[i];
            let next = match active[i] {
                Active::Lower if yu[i] > tol => Active::Inactive,
                Active::Upper if yu[i] < -tol => Active::Inactive,
                Active::Lower if soft(i) && yu[i] < -c - tol => Active::BelowSoft,
                Active::Upper if soft(i) && yu[i] > c + tol => Active::AboveSoft,
                Active::Inactive if aw[i] > problem.hi[i] + tol => Active::Upper,
                Active::Inactive if aw[i] < problem.lo[i] - tol => Active::Lower,
                Active::AboveSoft if aw[i] < problem.hi[i] - tol => Active::Upper,
                Active::BelowSoft if aw[i] > problem.lo[i] + tol => Active::Lower,
                a => a,
            };
            changed |= next != active[i];
            active[i] = next;
        }
        if changed {
            continue;
        }
        let (prim, dual) = kkt_residuals(problem, &w, &yu);
        if prim > tol || dual > tol {
            return None;
        }
        return Some(QpSolution {
            objective: problem.objective(&w),
            w,
            y: yu,
            status: QpStatus::Solved,
            iterations: 0,
            prim_res: prim,
            dual_res: dual,
            polished: true,
        });
    }
    None
}
