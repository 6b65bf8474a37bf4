//! Analytic Jacobians and forward input sensitivities along a nominal
//! trajectory, assembled into block lower-triangular prediction operators.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::dae::{integrate_horizon, DaeSystem, IntegratorConfig, JacobianBlocks};
use crate::error::{DaeError, ModelError};

/// Global Jacobian blocks of `f`, `h` and `g` at `(x, u, z)`.
pub fn jacobians_at<S: DaeSystem + ?Sized>(
    system: &S,
    x: &[f64],
    z: &[f64],
    u: &[f64],
) -> Result<JacobianBlocks, ModelError> {
    let d = system.dims();
    for (what, expected, got) in [("x", d.n, x.len()), ("u", d.m, u.len()), ("z", d.s, z.len())] {
        if expected != got {
            return Err(ModelError::Dimension { what, expected, got });
        }
    }
    let mut jac = JacobianBlocks::zeros(d.n, d.m, d.s, d.p);
    for (b, lay) in system.blocks().iter().enumerate() {
        let jb = system.jacobians_block(b, &x[lay.x.clone()], u, &z[lay.z.clone()], false)?;
        let (xs, zs, ys) = (lay.x.start, lay.z.start, lay.y.start);
        let (nb, sb, pb) = (lay.x.len(), lay.z.len(), lay.y.len());
        jac.fx.view_mut((xs, xs), (nb, nb)).copy_from(&jb.fx);
        jac.fz.view_mut((xs, zs), (nb, sb)).copy_from(&jb.fz);
        jac.fu.view_mut((xs, 0), (nb, d.m)).copy_from(&jb.fu);
        jac.hx.view_mut((zs, xs), (sb, nb)).copy_from(&jb.hx);
        jac.hz.view_mut((zs, zs), (sb, sb)).copy_from(&jb.hz);
        jac.hu.view_mut((zs, 0), (sb, d.m)).copy_from(&jb.hu);
        jac.gx.view_mut((ys, xs), (pb, nb)).copy_from(&jb.gx);
        jac.gz.view_mut((ys, zs), (pb, sb)).copy_from(&jb.gz);
        jac.gu.view_mut((ys, 0), (pb, d.m)).copy_from(&jb.gu);
    }
    Ok(jac)
}

/// Nominal trajectories over `t_k .. t_{k+H}` and the prediction operators
/// mapping input deviations to trajectory deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityBundle {
    pub horizon: usize,
    pub n: usize,
    pub m: usize,
    pub s: usize,
    pub p: usize,
    pub t: Vec<f64>,
    /// Stacked nominal samples, `(H+1)·dim`.
    pub x_bar: DVector<f64>,
    pub z_bar: DVector<f64>,
    pub y_bar: DVector<f64>,
    /// Stacked nominal inputs, `H·m`.
    pub u_bar: DVector<f64>,
    pub pi_x: DMatrix<f64>,
    pub pi_z: DMatrix<f64>,
    pub pi_y: DMatrix<f64>,
}

impl SensitivityBundle {
    /// Output sample `k` of the nominal trajectory.
    pub fn y_sample(&self, k: usize) -> &[f64] {
        &self.y_bar.as_slice()[k * self.p..(k + 1) * self.p]
    }

    pub fn x_sample(&self, k: usize) -> &[f64] {
        &self.x_bar.as_slice()[k * self.n..(k + 1) * self.n]
    }

    pub fn z_sample(&self, k: usize) -> &[f64] {
        &self.z_bar.as_slice()[k * self.s..(k + 1) * self.s]
    }
}

/// Integrate the nominal trajectory and its forward sensitivities from
/// `x0` under `u_bar_seq` (length `H·m`, `H >= 1`).
pub fn propagate_sensitivities<S: DaeSystem + ?Sized>(
    system: &S,
    x0: &[f64],
    z_guess: &[f64],
    u_bar_seq: &[f64],
    horizon: usize,
    cfg: &IntegratorConfig,
    t0: f64,
) -> Result<SensitivityBundle, DaeError> {
    if horizon == 0 {
        return Err(ModelError::Dimension { what: "horizon", expected: 1, got: 0 }.into());
    }
    let d = system.dims();
    let (traj, sens) = integrate_horizon(system, x0, z_guess, u_bar_seq, horizon, cfg, t0, true)?;
    let sens = sens.expect("sensitivities requested");
    let stack = |v: &[Vec<f64>]| DVector::from_iterator(v.iter().map(Vec::len).sum(), v.iter().flatten().copied());
    Ok(SensitivityBundle {
        horizon,
        n: d.n,
        m: d.m,
        s: d.s,
        p: d.p,
        x_bar: stack(&traj.x),
        z_bar: stack(&traj.z),
        y_bar: stack(&traj.y),
        t: traj.t,
        u_bar: DVector::from_column_slice(u_bar_seq),
        pi_x: sens.pi_x,
        pi_z: sens.pi_z,
        pi_y: sens.pi_y,
    })
}

/// Linear predictions `(x_hat, z_hat, y_hat)` for input deviations `delta_u`.
pub fn linear_predict(
    bundle: &SensitivityBundle,
    delta_u: &[f64],
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>), ModelError> {
    let hm = bundle.horizon * bundle.m;
    if delta_u.len() != hm {
        return Err(ModelError::Dimension { what: "input deviation", expected: hm, got: delta_u.len() });
    }
    let du = DVector::from_column_slice(delta_u);
    Ok((
        &bundle.x_bar + &bundle.pi_x * &du,
        &bundle.z_bar + &bundle.pi_z * &du,
        &bundle.y_bar + &bundle.pi_y * &du,
    ))
}

/// Write a matrix as a little-endian `u64` row count, `u64` column count,
/// then row-major `f64` entries.
pub fn dump_matrix<W: Write>(out: &mut W, mat: &DMatrix<f64>) -> std::io::Result<()> {
    out.write_all(&(mat.nrows() as u64).to_le_bytes())?;
    out.write_all(&(mat.ncols() as u64).to_le_bytes())?;
    for i in 0..mat.nrows() {
        for j in 0..mat.ncols() {
            out.write_all(&mat[(i, j)].to_le_bytes())?;
        }
    }
    Ok(())
}

/// Inverse of [`dump_matrix`].
pub fn read_matrix(bytes: &[u8]) -> Option<(DMatrix<f64>, usize)> {
    let word = |at: usize| -> Option<[u8; 8]> { bytes.get(at..at + 8)?.try_into().ok() };
    let rows = u64::from_le_bytes(word(0)?) as usize;
    let cols = u64::from_le_bytes(word(8)?) as usize;
    let mut mat = DMatrix::zeros(rows, cols);
    let mut at = 16;
    for i in 0..rows {
        for j in 0..cols {
            mat[(i, j)] = f64::from_le_bytes(word(at)?);
            at += 8;
        }
    }
    Some((mat, at))
}
