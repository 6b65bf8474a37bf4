//! Nonlinear MPC solved by sequential quadratic programming: each iterate
//! is re-linearized with exact sensitivities and the step is globalized by
//! backtracking on the nonlinear soft-constrained cost.

use std::time::Instant;

use log::warn;

use super::smpc::{initial_plan, linearize_and_solve, MpcProblem};
use super::{Controller, Diagnostics, MpcConfig, NominalPlan, StepContext, StepOutput};
use crate::dae::{simulate, DaeSystem};
use crate::error::Result;
use crate::pack_model::ModuleDrive;

const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1.0 / 64.0;

/// Result of one nonlinear optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct SqpResult {
    pub u: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Nonlinear cost after each accepted iterate, starting with the initial one.
    pub cost_history: Vec<f64>,
    pub qp_iterations: usize,
    pub max_slack: f64,
}

/// Minimize the nonlinear cost over the horizon starting from `plan`.
pub fn solve_sqp<S: DaeSystem + ?Sized>(
    ctx: &StepContext<'_, S>,
    plan: &NominalPlan,
    problem: &MpcProblem,
    cfg: &MpcConfig,
    warm: &mut Option<(Vec<f64>, Vec<f64>)>,
) -> Result<SqpResult> {
    let mut iterate = plan.clone();
    let mut history = Vec::new();
    let mut converged = false;
    let mut qp_iterations = 0;
    let mut iterations = 0;
    let mut max_slack = 0.0;
    let mut cost = f64::NAN;
    for _ in 0..cfg.sqp_max_iter {
        iterations += 1;
        let lin = linearize_and_solve(ctx, &iterate, problem, cfg, warm.as_ref())?;
        cost = problem.cost(lin.bundle.y_bar.as_slice(), &iterate.u_bar, &iterate.u_prev);
        if history.is_empty() {
            history.push(cost);
        }
        if !lin.ok() {
            break;
        }
        let sol = lin.solution.as_ref().expect("solved");
        qp_iterations += sol.iterations;
        max_slack = lin.max_slack();
        *warm = Some((vec![0.0; sol.w.len()], sol.y.clone()));
        let du = lin.delta_u();
        if du.iter().fold(0.0_f64, |a, v| a.max(v.abs())) <= cfg.sqp_tol {
            converged = true;
            break;
        }
        let decrease = (cost - lin.predicted_cost()).max(0.0);
        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha >= MIN_STEP {
            let trial: Vec<f64> = iterate.u_bar.iter().zip(&du).map(|(u, d)| u + alpha * d).collect();
            let traj = simulate(ctx.pack, ctx.x, ctx.z, &trial, cfg.horizon, ctx.integrator)?;
            let y: Vec<f64> = traj.y.iter().flatten().copied().collect();
            let c = problem.cost(&y, &trial, &iterate.u_prev);
            if c <= cost - ARMIJO * alpha * decrease {
                accepted = Some((trial, c));
                break;
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((trial, c)) => {
                iterate.u_bar = trial;
                cost = c;
                history.push(c);
            }
            None => {
                // No descent along the QP direction: stationary to working precision.
                converged = decrease <= 1e-9 * (1.0 + cost.abs());
                break;
            }
        }
    }
    Ok(SqpResult { u: iterate.u_bar, cost, iterations, converged, cost_history: history, qp_iterations, max_slack })
}

#[derive(Debug, Clone)]
pub struct NmpcController {
    pub config: MpcConfig,
    pub i_1c: f64,
    plan: Option<NominalPlan>,
    warm: Option<(Vec<f64>, Vec<f64>)>,
    last: Option<SqpResult>,
}

impl NmpcController {
    pub fn new(config: MpcConfig, i_1c: f64) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, i_1c, plan: None, warm: None, last: None })
    }

    pub fn set_plan(&mut self, plan: NominalPlan) {
        self.plan = Some(plan);
    }

    /// Details of the most recent optimization.
    pub fn last_result(&self) -> Option<&SqpResult> {
        self.last.as_ref()
    }
}

impl Controller for NmpcController {
    fn name(&self) -> &'static str {
        "nmpc"
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
        let res = solve_sqp(ctx, &plan, &problem, &self.config, &mut self.warm)?;
        if !res.converged {
            warn!("SQP did not converge at t = {} s after {} iterations", ctx.t, res.iterations);
        }
        let diagnostics = Diagnostics {
            qp_status: None,
            qp_iterations: res.qp_iterations,
            sqp_iterations: res.iterations,
            cost: res.cost,
            max_slack: res.max_slack,
            fallback: !res.converged,
            wall_time: 0.0,
        };
        let u = res.u[..m].to_vec();
        self.plan = Some(NominalPlan::shifted(&res.u, m));
        self.last = Some(res);
        Ok(StepOutput {
            u,
            drives: vec![ModuleDrive::Current; m],
            done: None,
            diagnostics: Diagnostics { wall_time: start.elapsed().as_secs_f64(), ..diagnostics },
        })
    }
}
