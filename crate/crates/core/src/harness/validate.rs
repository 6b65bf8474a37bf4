//! Invariant checks on the model derivatives, the sensitivities, the
//! integrator and closed-loop logs.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::runner::RunLog;
use crate::cell_model::{electrolyte_inventory, CellState};
use crate::dae::{consistent_init, eval_f_h, output, simulate, DaeSystem, IntegratorConfig, JacobianBlocks};
use crate::error::Result;
use crate::pack_model::{ModuleDrive, Pack, OUTPUTS_PER_CELL, Y_I, Y_V};
use crate::sensitivity::{jacobians_at, propagate_sensitivities};
use crate::toy_systems::ScalarDecay;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self { name: name.into(), value, limit, passed: value <= limit }
    }

    /// Passes when `|value - target| <= tol`.
    pub fn near(name: impl Into<String>, value: f64, target: f64, tol: f64) -> Self {
        Self { name: name.into(), value, limit: target, passed: (value - target).abs() <= tol }
    }

    pub fn flag(name: impl Into<String>, ok: bool) -> Self {
        Self { name: name.into(), value: f64::from(u8::from(ok)), limit: 1.0, passed: ok }
    }
}

pub fn format_checks(checks: &[Check]) -> String {
    let mut out = String::new();
    for c in checks {
        let tag = if c.passed { "ok  " } else { "FAIL" };
        let _ = writeln!(out, "{tag} {:<40} {:>12.4e}  (limit {:.4e})", c.name, c.value, c.limit);
    }
    out
}

/// `max |a - b| / max |b|`, absolute when `b` vanishes.
pub fn relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let diff = (a - b).amax();
    let scale = b.amax();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// Central-difference Jacobians of `f`, `h` and `g`.
pub fn finite_difference_jacobians<S: DaeSystem + ?Sized>(
    system: &S,
    x: &[f64],
    z: &[f64],
    u: &[f64],
) -> Result<JacobianBlocks> {
    let d = system.dims();
    let mut jac = JacobianBlocks::zeros(d.n, d.m, d.s, d.p);
    let eval = |x: &[f64], z: &[f64], u: &[f64]| -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let e = eval_f_h(system, x, u, z)?;
        Ok((e.f, e.h, output(system, x, u, z)?))
    };
    // 0: x, 1: z, 2: u
    for var in 0..3 {
        let base: &[f64] = [x, z, u][var];
        for k in 0..base.len() {
            let step = 1e-6 * base[k].abs().max(1.0);
            let mut plus = [x.to_vec(), z.to_vec(), u.to_vec()];
            let mut minus = plus.clone();
            plus[var][k] += step;
            minus[var][k] -= step;
            let (fp, hp, gp) = eval(&plus[0], &plus[1], &plus[2])?;
            let (fm, hm, gm) = eval(&minus[0], &minus[1], &minus[2])?;
            let (jf, jh, jg) = match var {
                0 => (&mut jac.fx, &mut jac.hx, &mut jac.gx),
                1 => (&mut jac.fz, &mut jac.hz, &mut jac.gz),
                _ => (&mut jac.fu, &mut jac.hu, &mut jac.gu),
            };
            for (mat, (p, m)) in [(jf, (&fp, &fm)), (jh, (&hp, &hm)), (jg, (&gp, &gm))] {
                for r in 0..p.len() {
                    mat[(r, k)] = (p[r] - m[r]) / (2.0 * step);
                }
            }
        }
    }
    Ok(jac)
}

/// Relative error of each analytic Jacobian block against central differences.
pub fn jacobian_audit<S: DaeSystem + ?Sized>(
    system: &S,
    x: &[f64],
    z: &[f64],
    u: &[f64],
) -> Result<Vec<(&'static str, f64)>> {
    let analytic = jacobians_at(system, x, z, u)?;
    let fd = finite_difference_jacobians(system, x, z, u)?;
    Ok(analytic.named().iter().zip(fd.named()).map(|((name, a), (_, b))| (*name, relative_error(a, b))).collect())
}

/// A consistent operating point of a pack.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub u: Vec<f64>,
}

/// Random consistent points: cells start at rest at random SOC and
/// temperature, are charged for a few samples under random bypass
/// currents, and a fresh random input is applied.
pub fn random_operating_points(pack: &Pack, count: usize, seed: u64, integ: &IntegratorConfig) -> Result<Vec<OperatingPoint>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = pack.n_modules();
    let i_ch = pack.config.i_ch;
    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let states: Vec<CellState> = pack
            .config
            .cells
            .iter()
            .map(|p| CellState::at_rest(p, rng.random_range(15.0..85.0), rng.random_range(293.0..308.0), 1000.0))
            .collect();
        let x0 = pack.pack_state(&states);
        let samples = rng.random_range(1..=3);
        let u_seq: Vec<f64> = (0..samples * n).map(|_| rng.random_range(0.0..i_ch)).collect();
        let traj = simulate(pack, &x0, &pack.default_currents(&u_seq[..n]), &u_seq, samples, integ)?;
        let x = traj.x[samples].clone();
        let u: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..i_ch)).collect();
        let z = consistent_init(pack, &x, &u, &traj.z[samples], integ)?;
        points.push(OperatingPoint { x, z, u });
    }
    Ok(points)
}

/// Worst relative error per prediction operator of the exact sensitivities
/// against one-sided input perturbations of size `eps`.
///
/// Each row is scaled by the largest finite-difference entry in that row,
/// so slow and fast variables are judged on their own magnitude.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityCheck {
    pub pi_x: f64,
    pub pi_z: f64,
    pub pi_y: f64,
    pub columns: usize,
}

#[allow(clippy::too_many_arguments)]
pub fn sensitivity_fd_check<S: DaeSystem + ?Sized>(
    system: &S,
    x0: &[f64],
    z0: &[f64],
    u_bar: &[f64],
    horizon: usize,
    integ: &IntegratorConfig,
    eps: f64,
) -> Result<SensitivityCheck> {
    let bundle = propagate_sensitivities(system, x0, z0, u_bar, horizon, integ, 0.0)?;
    let cols = u_bar.len();
    let rows = |v: &[Vec<f64>]| v.iter().flatten().copied().collect::<Vec<f64>>();
    let mut fd_x = DMatrix::zeros(bundle.pi_x.nrows(), cols);
    let mut fd_z = DMatrix::zeros(bundle.pi_z.nrows(), cols);
    let mut fd_y = DMatrix::zeros(bundle.pi_y.nrows(), cols);
    for c in 0..cols {
        let mut u = u_bar.to_vec();
        u[c] += eps;
        let traj = simulate(system, x0, z0, &u, horizon, integ)?;
        for (fd, nominal, pert) in [
            (&mut fd_x, bundle.x_bar.as_slice(), rows(&traj.x)),
            (&mut fd_z, bundle.z_bar.as_slice(), rows(&traj.z)),
            (&mut fd_y, bundle.y_bar.as_slice(), rows(&traj.y)),
        ] {
            for r in 0..nominal.len() {
                fd[(r, c)] = (pert[r] - nominal[r]) / eps;
            }
        }
    }
    Ok(SensitivityCheck {
        pi_x: row_scaled_error(&bundle.pi_x, &fd_x),
        pi_z: row_scaled_error(&bundle.pi_z, &fd_z),
        pi_y: row_scaled_error(&bundle.pi_y, &fd_y),
        columns: cols,
    })
}

fn row_scaled_error(exact: &DMatrix<f64>, fd: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for r in 0..exact.nrows() {
        let scale = fd.row(r).amax().max(exact.row(r).amax());
        if scale == 0.0 {
            continue;
        }
        let diff = (exact.row(r) - fd.row(r)).amax();
        worst = worst.max(diff / scale);
    }
    worst
}

/// Self-convergence and accuracy of the integrator on the scalar decay.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderStudy {
    /// Substep counts and terminal values.
    pub substeps: Vec<usize>,
    pub values: Vec<f64>,
    /// Least-squares slope of `log |x_k - x_{k+1}|` against `log dt`.
    pub slope: f64,
    /// Relative error against `exp(-ts)` with `ts / 64` substeps.
    pub error_64: f64,
}

pub fn integrator_order(ts: f64) -> Result<OrderStudy> {
    let substeps: Vec<usize> = vec![8, 16, 32, 64, 128, 256];
    let mut values = Vec::with_capacity(substeps.len());
    for &k in &substeps {
        let cfg = IntegratorConfig { ts, substeps: k, ..IntegratorConfig::default() };
        let traj = simulate(&ScalarDecay, &[1.0], &[1.0], &[0.0], 1, &cfg)?;
        values.push(traj.x[1][0]);
    }
    let pts: Vec<(f64, f64)> = values
        .windows(2)
        .zip(&substeps)
        .map(|(w, &k)| ((ts / k as f64).ln(), (w[0] - w[1]).abs().ln()))
        .collect();
    let nf = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    let exact = (-ts).exp();
    let i64 = substeps.iter().position(|&k| k == 64).expect("64 substeps in the study");
    Ok(OrderStudy { error_64: (values[i64] - exact).abs() / exact, substeps, values, slope })
}

/// Invariants of a closed-loop log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogReport {
    /// Largest `|I_ch + sum_j I_ij - I_b,i|` over samples and modules.
    pub kcl: f64,
    /// Largest voltage spread inside a module.
    pub voltage_spread: f64,
    /// Largest relative drift of any cell's electrolyte inventory.
    pub electrolyte_drift: f64,
    pub time_increasing: bool,
    /// Current-driven bypass commands within `[0, I_ch]`.
    pub inputs_in_bounds: bool,
    /// Completed modules stay fully bypassed.
    pub completed_pinned: bool,
}

impl LogReport {
    pub fn checks(&self) -> Vec<Check> {
        vec![
            Check::at_most("KCL residual (A)", self.kcl, 1e-9),
            Check::at_most("module voltage spread (V)", self.voltage_spread, 1e-8),
            Check::at_most("electrolyte inventory drift", self.electrolyte_drift, 1e-8),
            Check::flag("time strictly increasing", self.time_increasing),
            Check::flag("inputs within bounds", self.inputs_in_bounds),
            Check::flag("completed modules pinned", self.completed_pinned),
        ]
    }
}

pub fn log_invariants(log: &RunLog, pack: &Pack) -> LogReport {
    let m = log.m_parallel;
    let i_ch = log.i_ch;
    let mut rep = LogReport {
        kcl: 0.0,
        voltage_spread: 0.0,
        electrolyte_drift: 0.0,
        time_increasing: log.records.windows(2).all(|w| w[1].t > w[0].t),
        inputs_in_bounds: true,
        completed_pinned: true,
    };
    let nx = pack.nx_cell();
    let inventory = |x: &[f64]| -> Vec<f64> {
        pack.config.cells.iter().enumerate().map(|(c, p)| electrolyte_inventory(&x[c * nx..(c + 1) * nx], p)).collect()
    };
    let Some(first) = log.records.first() else {
        return rep;
    };
    let inv0 = inventory(&first.x);
    for r in &log.records {
        for i in 0..log.n_modules {
            let cells = &r.y[i * m * OUTPUTS_PER_CELL..(i + 1) * m * OUTPUTS_PER_CELL];
            let sum: f64 = cells.chunks(OUTPUTS_PER_CELL).map(|c| c[Y_I]).sum();
            rep.kcl = rep.kcl.max((i_ch + sum - r.ib[i]).abs());
            let v0 = cells[Y_V];
            for c in cells.chunks(OUTPUTS_PER_CELL) {
                rep.voltage_spread = rep.voltage_spread.max((c[Y_V] - v0).abs());
            }
            if r.drives[i] == ModuleDrive::Current && !(r.ib[i] >= -1e-12 && r.ib[i] <= i_ch + 1e-12) {
                rep.inputs_in_bounds = false;
            }
            if let Some(done_at) = log.completion.times[i] {
                if r.t >= done_at && (r.drives[i] != ModuleDrive::Current || r.ib[i] != i_ch) {
                    rep.completed_pinned = false;
                }
            }
        }
        for (a, b) in inventory(&r.x).iter().zip(&inv0) {
            rep.electrolyte_drift = rep.electrolyte_drift.max((a - b).abs() / b);
        }
    }
    rep
}
