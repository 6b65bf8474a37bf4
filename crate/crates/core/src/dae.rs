//! Semi-explicit index-1 DAEs `x' = f(x, u, z)`, `0 = h(x, u, z)`,
//! `y = g(x, u, z)` integrated with a fixed-step implicit Euler scheme
//! under piecewise-constant inputs.
//!
//! Systems may declare independent blocks: groups of states, algebraic
//! variables and outputs that interact only through the shared input
//! vector. Newton iterations and sensitivity solves run block by block,
//! which keeps the linear algebra small for large packs.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{DaeError, ModelError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub s: usize,
    pub p: usize,
}

/// Index ranges of one independent block inside the global x, z and y vectors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    pub x: Range<usize>,
    pub z: Range<usize>,
    pub y: Range<usize>,
}

/// The nine first-derivative blocks of `f`, `h` and `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianBlocks {
    pub fx: DMatrix<f64>,
    pub fz: DMatrix<f64>,
    pub fu: DMatrix<f64>,
    pub hx: DMatrix<f64>,
    pub hz: DMatrix<f64>,
    pub hu: DMatrix<f64>,
    pub gx: DMatrix<f64>,
    pub gz: DMatrix<f64>,
    pub gu: DMatrix<f64>,
}

impl JacobianBlocks {
    pub fn zeros(n: usize, m: usize, s: usize, p: usize) -> Self {
        Self {
            fx: DMatrix::zeros(n, n),
            fz: DMatrix::zeros(n, s),
            fu: DMatrix::zeros(n, m),
            hx: DMatrix::zeros(s, n),
            hz: DMatrix::zeros(s, s),
            hu: DMatrix::zeros(s, m),
            gx: DMatrix::zeros(p, n),
            gz: DMatrix::zeros(p, s),
            gu: DMatrix::zeros(p, m),
        }
    }

    /// The blocks in the fixed order `F_x, F_z, F_u, H_x, H_z, H_u, G_x, G_z, G_u`.
    pub fn named(&self) -> [(&'static str, &DMatrix<f64>); 9] {
        [
            ("F_x", &self.fx),
            ("F_z", &self.fz),
            ("F_u", &self.fu),
            ("H_x", &self.hx),
            ("H_z", &self.hz),
            ("H_u", &self.hu),
            ("G_x", &self.gx),
            ("G_z", &self.gz),
            ("G_u", &self.gu),
        ]
    }
}

/// `f` and `h` of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockEval {
    pub f: Vec<f64>,
    pub h: Vec<f64>,
}

/// A semi-explicit index-1 DAE.
///
/// Block methods receive the block's local slices of `x` and `z` and the
/// full input vector. Jacobians returned by [`DaeSystem::jacobians_block`]
/// are local in x, z and y and global in u.
///
/// `guarded` evaluations are used on Newton iterates and may clip
/// quantities into their domain instead of failing.
pub trait DaeSystem {
    fn dims(&self) -> Dims;

    fn blocks(&self) -> Vec<BlockLayout> {
        let d = self.dims();
        vec![BlockLayout { x: 0..d.n, z: 0..d.s, y: 0..d.p }]
    }

    fn eval_block(&self, block: usize, x: &[f64], u: &[f64], z: &[f64], guarded: bool) -> Result<BlockEval, ModelError>;

    fn output_block(&self, block: usize, x: &[f64], u: &[f64], z: &[f64]) -> Result<Vec<f64>, ModelError>;

    fn jacobians_block(
        &self,
        block: usize,
        x: &[f64],
        u: &[f64],
        z: &[f64],
        guarded: bool,
    ) -> Result<JacobianBlocks, ModelError>;

    /// Typical magnitude of every state in the block, used to scale the
    /// differential Newton residual.
    fn state_scale_block(&self, block: usize) -> Vec<f64> {
        vec![1.0; self.blocks()[block].x.len()]
    }
}

/// Global `f` and `h`.
pub fn eval_f_h<S: DaeSystem + ?Sized>(system: &S, x: &[f64], u: &[f64], z: &[f64]) -> Result<BlockEval, ModelError> {
    let d = system.dims();
    check_dims(d, x, u, z)?;
    let mut f = vec![0.0; d.n];
    let mut h = vec![0.0; d.s];
    for (b, lay) in system.blocks().iter().enumerate() {
        let e = system.eval_block(b, &x[lay.x.clone()], u, &z[lay.z.clone()], false)?;
        f[lay.x.clone()].copy_from_slice(&e.f);
        h[lay.z.clone()].copy_from_slice(&e.h);
    }
    Ok(BlockEval { f, h })
}

/// Global output `g`.
pub fn output<S: DaeSystem + ?Sized>(system: &S, x: &[f64], u: &[f64], z: &[f64]) -> Result<Vec<f64>, ModelError> {
    let d = system.dims();
    check_dims(d, x, u, z)?;
    let mut y = vec![0.0; d.p];
    for (b, lay) in system.blocks().iter().enumerate() {
        let yb = system.output_block(b, &x[lay.x.clone()], u, &z[lay.z.clone()])?;
        y[lay.y.clone()].copy_from_slice(&yb);
    }
    Ok(y)
}

fn check_dims(d: Dims, x: &[f64], u: &[f64], z: &[f64]) -> Result<(), ModelError> {
    for (what, expected, got) in [("x", d.n, x.len()), ("u", d.m, u.len()), ("z", d.s, z.len())] {
        if expected != got {
            return Err(ModelError::Dimension { what, expected, got });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    ImplicitEuler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    /// Sample time (s).
    pub ts: f64,
    /// Implicit steps per sample.
    pub substeps: usize,
    /// Infinity-norm tolerance on the algebraic residual.
    pub newton_tol: f64,
    /// Infinity-norm tolerance on the scaled differential residual.
    pub state_tol: f64,
    pub newton_max_iter: usize,
    /// Step halvings tried when a Newton update increases the residual.
    pub max_halvings: usize,
    pub scheme: Scheme,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            ts: 40.0,
            substeps: 8,
            newton_tol: 1e-9,
            state_tol: 1e-12,
            newton_max_iter: 40,
            max_halvings: 6,
            scheme: Scheme::ImplicitEuler,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<(), DaeError> {
        let bad = |reason: &str| {
            Err(DaeError::Model(ModelError::Parameter { name: "integrator", reason: reason.to_string() }))
        };
        if !(self.ts > 0.0) {
            return bad("sample time must be positive");
        }
        if self.substeps == 0 {
            return bad("at least one substep is required");
        }
        if !(self.newton_tol > 0.0 && self.state_tol > 0.0) {
            return bad("Newton tolerances must be positive");
        }
        if self.newton_max_iter == 0 {
            return bad("at least one Newton iteration is required");
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.ts / self.substeps as f64
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |a, x| a.max(x.abs()))
}

/// Solve `h(x, u, z) = 0` for `z` by damped Newton, starting from `z_guess`.
pub fn consistent_init<S: DaeSystem + ?Sized>(
    system: &S,
    x: &[f64],
    u: &[f64],
    z_guess: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Vec<f64>, DaeError> {
    check_dims(system.dims(), x, u, z_guess)?;
    let mut z = z_guess.to_vec();
    for (b, lay) in system.blocks().iter().enumerate() {
        let zb = init_block(system, b, &x[lay.x.clone()], u, &z[lay.z.clone()], cfg)?;
        z[lay.z.clone()].copy_from_slice(&zb);
    }
    Ok(z)
}

fn init_block<S: DaeSystem + ?Sized>(
    system: &S,
    b: usize,
    x: &[f64],
    u: &[f64],
    z0: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Vec<f64>, DaeError> {
    let mut z = z0.to_vec();
    let mut trace = Vec::new();
    let merit = |z: &[f64]| -> Option<f64> {
        system.eval_block(b, x, u, z, true).ok().map(|e| inf_norm(&e.h)).filter(|v| v.is_finite())
    };
    let mut current = merit(&z).unwrap_or(f64::INFINITY);
    for _ in 0..cfg.newton_max_iter {
        trace.push(current);
        if current <= cfg.newton_tol {
            system.eval_block(b, x, u, &z, false)?;
            return Ok(z);
        }
        let e = system.eval_block(b, x, u, &z, true)?;
        let jac = system.jacobians_block(b, x, u, &z, true)?;
        let rhs = -DVector::from_vec(e.h);
        let delta = jac
            .hz
            .clone()
            .lu()
            .solve(&rhs)
            .ok_or_else(|| DaeError::Singular { context: " (algebraic initialization)".into() })?;
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let trial: Vec<f64> = z.iter().zip(delta.iter()).map(|(a, d)| a + alpha * d).collect();
            if let Some(m) = merit(&trial) {
                if m < current || accepted.is_none() {
                    let better = m < current;
                    accepted = Some((trial, m));
                    if better {
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((trial, m)) => {
                z = trial;
                current = m;
            }
            None => break,
        }
    }
    trace.push(current);
    if current <= cfg.newton_tol {
        system.eval_block(b, x, u, &z, false)?;
        return Ok(z);
    }
    Err(DaeError::Initialization { iterations: cfg.newton_max_iter, trace })
}

/// Converged implicit step of one block with the iteration matrix
/// evaluated at the solution, ready for sensitivity solves.
pub(crate) struct BlockStep {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub jac: Option<JacobianBlocks>,
}

/// One implicit Euler step `x+ = x + dt f(x+, u, z+)`, `0 = h(x+, u, z+)`.
pub fn step<S: DaeSystem + ?Sized>(
    system: &S,
    x: &[f64],
    z: &[f64],
    u: &[f64],
    dt: f64,
    cfg: &IntegratorConfig,
) -> Result<(Vec<f64>, Vec<f64>), DaeError> {
    check_dims(system.dims(), x, u, z)?;
    let mut xn = x.to_vec();
    let mut zn = z.to_vec();
    for (b, lay) in system.blocks().iter().enumerate() {
        let s = step_block(system, b, &x[lay.x.clone()], &z[lay.z.clone()], u, dt, cfg, false)?;
        xn[lay.x.clone()].copy_from_slice(&s.x);
        zn[lay.z.clone()].copy_from_slice(&s.z);
    }
    Ok((xn, zn))
}

/// Iteration matrix `[[I - dt F_x, -dt F_z], [H_x, H_z]]`.
pub(crate) fn iteration_matrix(jac: &JacobianBlocks, dt: f64) -> DMatrix<f64> {
    let nb = jac.fx.nrows();
    let sb = jac.hz.nrows();
    let mut k = DMatrix::zeros(nb + sb, nb + sb);
    k.view_mut((0, 0), (nb, nb)).copy_from(&(-dt * &jac.fx));
    for i in 0..nb {
        k[(i, i)] += 1.0;
    }
    k.view_mut((0, nb), (nb, sb)).copy_from(&(-dt * &jac.fz));
    k.view_mut((nb, 0), (sb, nb)).copy_from(&jac.hx);
    k.view_mut((nb, nb), (sb, sb)).copy_from(&jac.hz);
    k
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn step_block<S: DaeSystem + ?Sized>(
    system: &S,
    b: usize,
    x0: &[f64],
    z0: &[f64],
    u: &[f64],
    dt: f64,
    cfg: &IntegratorConfig,
    want_jacobian: bool,
) -> Result<BlockStep, DaeError> {
    let nb = x0.len();
    let scale = system.state_scale_block(b);
    let residual = |x: &[f64], z: &[f64]| -> Option<(Vec<f64>, f64, f64)> {
        let e = system.eval_block(b, x, u, z, true).ok()?;
        let mut r = Vec::with_capacity(nb + z.len());
        let mut dn = 0.0_f64;
        for i in 0..nb {
            let ri = x[i] - x0[i] - dt * e.f[i];
            dn = dn.max((ri / scale[i]).abs());
            r.push(ri);
        }
        let an = inf_norm(&e.h);
        r.extend_from_slice(&e.h);
        if dn.is_finite() && an.is_finite() {
            Some((r, dn, an))
        } else {
            None
        }
    };
    let merit = |dn: f64, an: f64| (dn / cfg.state_tol).max(an / cfg.newton_tol);

    let mut x = x0.to_vec();
    let mut z = z0.to_vec();
    let (mut r, mut dn, mut an) =
        residual(&x, &z).ok_or(DaeError::Step { dt, residual: f64::INFINITY })?;
    let mut converged = false;
    for _ in 0..cfg.newton_max_iter {
        if dn <= cfg.state_tol && an <= cfg.newton_tol {
            converged = true;
            break;
        }
        let jac = system.jacobians_block(b, &x, u, &z, true)?;
        let k = iteration_matrix(&jac, dt);
        let delta = k
            .lu()
            .solve(&(-DVector::from_vec(r.clone())))
            .ok_or_else(|| DaeError::Singular { context: " (implicit step)".into() })?;
        let current = merit(dn, an);
        let mut alpha = 1.0;
        let mut accepted: Option<(Vec<f64>, Vec<f64>, Vec<f64>, f64, f64)> = None;
        for _ in 0..=cfg.max_halvings {
            let xt: Vec<f64> = (0..nb).map(|i| x[i] + alpha * delta[i]).collect();
            let zt: Vec<f64> = (0..z.len()).map(|i| z[i] + alpha * delta[nb + i]).collect();
            if let Some((rt, dt_, at)) = residual(&xt, &zt) {
                let better = merit(dt_, at) < current;
                if better || accepted.is_none() {
                    accepted = Some((xt, zt, rt, dt_, at));
                }
                if better {
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((xt, zt, rt, dt_, at)) = accepted else {
            break;
        };
        let tiny = (0..nb).all(|i| (alpha * delta[i] / scale[i]).abs() <= 1e-15)
            && (0..z.len()).all(|i| (alpha * delta[nb + i]).abs() <= 1e-15 * (1.0 + z[i].abs()));
        x = xt;
        z = zt;
        r = rt;
        dn = dt_;
        an = at;
        if tiny && an <= cfg.newton_tol && dn <= 1e3 * cfg.state_tol {
            converged = true;
            break;
        }
    }
    if !converged && !(dn <= cfg.state_tol && an <= cfg.newton_tol) {
        return Err(DaeError::Step { dt, residual: dn.max(an) });
    }
    // Converged iterates must lie in the valid domain without clipping.
    system.eval_block(b, &x, u, &z, false)?;
    let jac = if want_jacobian { Some(system.jacobians_block(b, &x, u, &z, false)?) } else { None };
    Ok(BlockStep { x, z, jac })
}

/// Sampled trajectories at `t_0, ..., t_H`.
///
/// At a sample `t_j < t_H` the algebraic variables and outputs are
/// consistent with the input `u_j` applied from that instant; the final
/// sample uses the last input of the sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
}

/// Sampled forward sensitivities, each `(H+1)·dim x H·m`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSensitivities {
    pub pi_x: DMatrix<f64>,
    pub pi_z: DMatrix<f64>,
    pub pi_y: DMatrix<f64>,
}

/// Input block `j` of a stacked input sequence.
pub fn input_block(u_seq: &[f64], m: usize, j: usize) -> &[f64] {
    &u_seq[j * m..(j + 1) * m]
}

/// Simulate `horizon` samples from `x0` under the piecewise-constant inputs.
///
/// `z_guess` seeds the first algebraic solve.
pub fn simulate<S: DaeSystem + ?Sized>(
    system: &S,
    x0: &[f64],
    z_guess: &[f64],
    u_seq: &[f64],
    horizon: usize,
    cfg: &IntegratorConfig,
) -> Result<Trajectory, DaeError> {
    integrate_horizon(system, x0, z_guess, u_seq, horizon, cfg, 0.0, false).map(|(t, _)| t)
}

/// Shared integration loop for plain simulation and sensitivity propagation.
///
/// With `track` set, the discrete sensitivities of the implicit scheme are
/// co-integrated: every substep solves the iteration matrix at the
/// converged point for the forced sensitivity system, and samples fill the
/// block lower-triangular prediction operators.
#[allow(clippy::too_many_arguments)]
pub fn integrate_horizon<S: DaeSystem + ?Sized>(
    system: &S,
    x0: &[f64],
    z_guess: &[f64],
    u_seq: &[f64],
    horizon: usize,
    cfg: &IntegratorConfig,
    t0: f64,
    track: bool,
) -> Result<(Trajectory, Option<SampledSensitivities>), DaeError> {
    cfg.validate()?;
    let d = system.dims();
    let hm = horizon * d.m;
    if horizon == 0 {
        if u_seq.len() != d.m {
            return Err(ModelError::Dimension { what: "input sequence", expected: d.m, got: u_seq.len() }.into());
        }
    } else if u_seq.len() != hm {
        return Err(ModelError::Dimension { what: "input sequence", expected: hm, got: u_seq.len() }.into());
    }
    let u_at = |j: usize| input_block(u_seq, d.m, j.min(horizon.saturating_sub(1)));
    let blocks = system.blocks();
    let dt = cfg.dt();

    let wrap = |index: usize| move |e: DaeError| DaeError::Sample { index, source: Box::new(e) };

    let z_init = consistent_init(system, x0, u_at(0), z_guess, cfg).map_err(wrap(0))?;
    let mut traj = Trajectory { t: vec![t0], x: vec![x0.to_vec()], z: vec![z_init.clone()], y: Vec::new() };
    traj.y.push(output(system, x0, u_at(0), &z_init).map_err(|e| wrap(0)(e.into()))?);

    let mut sens = if track {
        Some(SampledSensitivities {
            pi_x: DMatrix::zeros((horizon + 1) * d.n, hm),
            pi_z: DMatrix::zeros((horizon + 1) * d.s, hm),
            pi_y: DMatrix::zeros((horizon + 1) * d.p, hm),
        })
    } else {
        None
    };
    // Running state sensitivities, one dense block per system block.
    let mut sx: Vec<DMatrix<f64>> = blocks.iter().map(|l| DMatrix::zeros(l.x.len(), hm)).collect();
    if let Some(s) = sens.as_mut() {
        if horizon > 0 {
            sample_algebraic(system, &blocks, x0, u_at(0), &z_init, &sx, 0, 0, d, s, t0)?;
        }
    }

    let mut x = x0.to_vec();
    let mut z = z_init;
    for j in 0..horizon {
        let u = u_at(j);
        let tj = t0 + j as f64 * cfg.ts;
        for sub in 0..cfg.substeps {
            for (b, lay) in blocks.iter().enumerate() {
                let st = step_block(system, b, &x[lay.x.clone()], &z[lay.z.clone()], u, dt, cfg, track).map_err(|e| {
                    wrap(j)(match e {
                        DaeError::Singular { .. } => DaeError::Index { time: tj + sub as f64 * dt },
                        other => other,
                    })
                })?;
                if let Some(jac) = st.jac.as_ref() {
                    let cols = (j + 1) * d.m;
                    let nb = lay.x.len();
                    let sb = lay.z.len();
                    let mut rhs = DMatrix::zeros(nb + sb, cols);
                    rhs.view_mut((0, 0), (nb, cols)).copy_from(&sx[b].columns(0, cols));
                    for c in 0..d.m {
                        for i in 0..nb {
                            rhs[(i, j * d.m + c)] += dt * jac.fu[(i, c)];
                        }
                        for i in 0..sb {
                            rhs[(nb + i, j * d.m + c)] -= jac.hu[(i, c)];
                        }
                    }
                    let sol = iteration_matrix(jac, dt)
                        .lu()
                        .solve(&rhs)
                        .ok_or(DaeError::Index { time: tj + (sub + 1) as f64 * dt })
                        .map_err(wrap(j))?;
                    sx[b].columns_mut(0, cols).copy_from(&sol.rows(0, nb));
                    if sub + 1 == cfg.substeps && j + 1 == horizon {
                        // Terminal sample: the held input stays active.
                        let s = sens.as_mut().expect("tracking");
                        write_terminal(s, lay, jac, &sx[b], &sol.rows(nb, sb).into_owned(), j + 1, cols, d);
                    }
                }
                x[lay.x.clone()].copy_from_slice(&st.x);
                z[lay.z.clone()].copy_from_slice(&st.z);
            }
        }
        let k = j + 1;
        let tk = t0 + k as f64 * cfg.ts;
        if k < horizon {
            z = consistent_init(system, &x, u_at(k), &z, cfg).map_err(wrap(k))?;
            if let Some(s) = sens.as_mut() {
                sample_algebraic(system, &blocks, &x, u_at(k), &z, &sx, k, k, d, s, tk)?;
            }
        }
        traj.t.push(tk);
        traj.y.push(output(system, &x, u_at(k), &z).map_err(|e| wrap(k)(e.into()))?);
        traj.x.push(x.clone());
        traj.z.push(z.clone());
    }
    Ok((traj, sens))
}

/// Fill sample `k` of the prediction operators from the state sensitivity,
/// re-solving the algebraic sensitivity with input block `active` switched on.
#[allow(clippy::too_many_arguments)]
fn sample_algebraic<S: DaeSystem + ?Sized>(
    system: &S,
    blocks: &[BlockLayout],
    x: &[f64],
    u: &[f64],
    z: &[f64],
    sx: &[DMatrix<f64>],
    k: usize,
    active: usize,
    d: Dims,
    s: &mut SampledSensitivities,
    time: f64,
) -> Result<(), DaeError> {
    let cols = (active + 1) * d.m;
    for (b, lay) in blocks.iter().enumerate() {
        let jac = system
            .jacobians_block(b, &x[lay.x.clone()], u, &z[lay.z.clone()], false)
            .map_err(|e| DaeError::Sample { index: k, source: Box::new(e.into()) })?;
        let sxb = sx[b].columns(0, cols).into_owned();
        let mut rhs = -(&jac.hx * &sxb);
        for c in 0..d.m {
            for i in 0..lay.z.len() {
                rhs[(i, active * d.m + c)] -= jac.hu[(i, c)];
            }
        }
        let szb = jac.hz.clone().lu().solve(&rhs).ok_or(DaeError::Index { time })?;
        write_sample(s, lay, &jac, &sxb, &szb, k, active, cols, d);
    }
    Ok(())
}

fn write_terminal(
    s: &mut SampledSensitivities,
    lay: &BlockLayout,
    jac: &JacobianBlocks,
    sxb: &DMatrix<f64>,
    szb: &DMatrix<f64>,
    k: usize,
    cols: usize,
    d: Dims,
) {
    let sxb = sxb.columns(0, cols).into_owned();
    write_sample(s, lay, jac, &sxb, szb, k, k - 1, cols, d);
}

#[allow(clippy::too_many_arguments)]
fn write_sample(
    s: &mut SampledSensitivities,
    lay: &BlockLayout,
    jac: &JacobianBlocks,
    sxb: &DMatrix<f64>,
    szb: &DMatrix<f64>,
    k: usize,
    active: usize,
    cols: usize,
    d: Dims,
) {
    let mut syb = &jac.gx * sxb + &jac.gz * szb;
    for c in 0..d.m {
        for i in 0..lay.y.len() {
            syb[(i, active * d.m + c)] += jac.gu[(i, c)];
        }
    }
    s.pi_x.view_mut((k * d.n + lay.x.start, 0), (lay.x.len(), cols)).copy_from(sxb);
    s.pi_z.view_mut((k * d.s + lay.z.start, 0), (lay.z.len(), cols)).copy_from(szb);
    s.pi_y.view_mut((k * d.p + lay.y.start, 0), (lay.y.len(), cols)).copy_from(&syb);
}
