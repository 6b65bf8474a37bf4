//! Sensitivity-based linear MPC: one condensed QP per sample around the
//! shifted previous optimum.

use std::time::Instant;

use log::warn;

use super::{evaluate_cost, Controller, Diagnostics, MpcConfig, NominalPlan, StepContext, StepOutput};
use crate::dae::{simulate, DaeSystem};
use crate::error::Result;
use crate::pack_model::{ModuleDrive, Pack};
use crate::qp::condense::{condense, CondenseInput, Condensed, Limits, Weights};
use crate::qp::{self, QpSolution, QpStatus};
use crate::sensitivity::{propagate_sensitivities, SensitivityBundle};

/// Weights, references and limits for one pack.
#[derive(Debug, Clone)]
pub struct MpcProblem {
    pub weights: Weights,
    pub limits: Limits,
    pub y_ref: Vec<f64>,
    pub u_ref: Vec<f64>,
}

impl MpcProblem {
    pub fn new(cfg: &MpcConfig, pack: &Pack, i_1c: f64) -> Self {
        let nc = pack.config.n_cells();
        let m = pack.n_modules();
        Self {
            weights: cfg.weights(nc, m),
            limits: cfg.limits(nc, m, i_1c, pack.config.i_ch),
            y_ref: cfg.y_ref(nc),
            u_ref: vec![0.0; m],
        }
    }

    pub fn cost(&self, y: &[f64], u: &[f64], u_prev: &[f64]) -> f64 {
        evaluate_cost(y, u, u_prev, &self.weights, &self.y_ref, &self.u_ref, &self.limits).total()
    }
}

/// One linearization and QP solve along `plan`.
pub struct LinearizedSolve {
    pub bundle: SensitivityBundle,
    pub condensed: Condensed,
    pub solution: Option<QpSolution>,
}

impl LinearizedSolve {
    pub fn ok(&self) -> bool {
        matches!(self.solution.as_ref().map(|s| s.status), Some(QpStatus::Solved) | Some(QpStatus::MaxIter))
    }

    /// `u_bar + delta_u`, or `u_bar` when the QP failed.
    pub fn u_star(&self) -> Vec<f64> {
        let u_bar = self.bundle.u_bar.as_slice();
        match (&self.solution, self.ok()) {
            (Some(s), true) => {
                let du = self.condensed.delta_u(&s.w);
                u_bar.iter().zip(&du).map(|(u, d)| u + d).collect()
            }
            _ => u_bar.to_vec(),
        }
    }

    pub fn delta_u(&self) -> Vec<f64> {
        match (&self.solution, self.ok()) {
            (Some(s), true) => self.condensed.delta_u(&s.w),
            _ => vec![0.0; self.bundle.u_bar.len()],
        }
    }

    /// Linearized cost at the QP optimum.
    pub fn predicted_cost(&self) -> f64 {
        match &self.solution {
            Some(s) => s.objective + self.condensed.constant,
            None => f64::NAN,
        }
    }

    pub fn max_slack(&self) -> f64 {
        match (&self.solution, self.ok()) {
            (Some(s), true) => self.condensed.slacks(&s.w).iter().fold(0.0, |a: f64, v| a.max(*v)),
            _ => 0.0,
        }
    }
}

pub fn linearize_and_solve<S: DaeSystem + ?Sized>(
    ctx: &StepContext<'_, S>,
    plan: &NominalPlan,
    problem: &MpcProblem,
    cfg: &MpcConfig,
    warm: Option<&(Vec<f64>, Vec<f64>)>,
) -> Result<LinearizedSolve> {
    let bundle =
        propagate_sensitivities(ctx.pack, ctx.x, ctx.z, &plan.u_bar, cfg.horizon, ctx.integrator, ctx.t)?;
    let condensed = condense(
        &bundle,
        &CondenseInput {
            weights: &problem.weights,
            limits: &problem.limits,
            y_ref: &problem.y_ref,
            u_ref: &problem.u_ref,
            u_prev: &plan.u_prev,
            pinned: ctx.pins,
        },
    )?;
    let warm = warm
        .filter(|(w, y)| w.len() == condensed.problem.n_vars() && y.len() == condensed.problem.n_cons())
        .map(|(w, y)| (w.as_slice(), y.as_slice()));
    let solution = match qp::solve(&condensed.problem, &cfg.qp, warm) {
        Ok(s) => Some(s),
        Err(e) => {
            warn!("QP rejected at t = {} s: {e}", ctx.t);
            None
        }
    };
    Ok(LinearizedSolve { bundle, condensed, solution })
}

/// Zero bypass as the most likely action; uniform half bypass when that
/// plan grossly violates the predicted output limits.
pub fn initial_plan(ctx: &StepContext<'_>, problem: &MpcProblem, horizon: usize) -> Result<NominalPlan> {
    let m = ctx.pack.dims().m;
    let mut plan = NominalPlan::constant(&vec![0.0; m], horizon);
    plan.apply_pins(ctx.pins);
    let traj = simulate(ctx.pack, ctx.x, ctx.z, &plan.u_bar, horizon, ctx.integrator)?;
    let p = problem.y_ref.len();
    let gross = traj.y.iter().flatten().enumerate().any(|(r, y)| {
        let (lo, hi) = (problem.limits.y_lb[r % p], problem.limits.y_ub[r % p]);
        let range = (hi - lo).abs().max(1e-12);
        (lo - y).max(y - hi) > 0.1 * range
    });
    if gross {
        plan = NominalPlan::constant(&vec![0.5 * ctx.pack.config.i_ch; m], horizon);
        plan.apply_pins(ctx.pins);
    }
    Ok(plan)
}

#[derive(Debug, Clone)]
pub struct SmpcController {
    pub config: MpcConfig,
    /// Nominal 1C current used to scale the current limits (A).
    pub i_1c: f64,
    plan: Option<NominalPlan>,
    warm: Option<(Vec<f64>, Vec<f64>)>,
}

impl SmpcController {
    pub fn new(config: MpcConfig, i_1c: f64) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, i_1c, plan: None, warm: None })
    }

    pub fn plan(&self) -> Option<&NominalPlan> {
        self.plan.as_ref()
    }

    pub fn set_plan(&mut self, plan: NominalPlan) {
        self.plan = Some(plan);
    }
}

impl Controller for SmpcController {
    fn name(&self) -> &'static str {
        "smpc"
    }

    fn step(&mut self, ctx: &StepContext<'_>) -> Result<StepOutput> {
        let start = Instant::now();
        let m = ctx.pack.n_modules();
        let problem = MpcProblem::new(&self.config, ctx.pack, self.i_1c);
        let mut plan = match self.plan.take() {
            Some(p) => p,
            None => initial_plan(ctx, &problem, self.config.horizon)?,
        };
        plan.apply_pins(ctx.pins);
        let lin = linearize_and_solve(ctx, &plan, &problem, &self.config, self.warm.as_ref())?;
        if !lin.ok() {
            warn!("QP failed at t = {} s, applying the nominal plan", ctx.t);
        }
        let u_star = lin.u_star();
        self.warm = lin
            .solution
            .as_ref()
            .filter(|_| lin.ok())
            .map(|s| (vec![0.0; s.w.len()], s.y.clone()));
        let diagnostics = Diagnostics {
            qp_status: lin.solution.as_ref().map(|s| s.status),
            qp_iterations: lin.solution.as_ref().map_or(0, |s| s.iterations),
            sqp_iterations: 1,
            cost: lin.predicted_cost(),
            max_slack: lin.max_slack(),
            fallback: !lin.ok(),
            wall_time: 0.0,
        };
        self.plan = Some(NominalPlan::shifted(&u_star, m));
        Ok(StepOutput {
            u: u_star[..m].to_vec(),
            drives: vec![ModuleDrive::Current; m],
            done: None,
            diagnostics: Diagnostics { wall_time: start.elapsed().as_secs_f64(), ..diagnostics },
        })
    }
}
