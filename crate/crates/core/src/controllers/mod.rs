//! Charging policies: sensitivity-based linear MPC, nonlinear MPC by
//! sequential quadratic programming, and the CC-CV protocol.

pub mod cccv;
pub mod cost;
pub mod nmpc;
pub mod smpc;

use serde::{Deserialize, Serialize};

use crate::dae::IntegratorConfig;
use crate::error::{Error, Result};
use crate::pack_model::{ModuleDrive, Pack, OUTPUTS_PER_CELL};
use crate::qp::condense::{Limits, Weights};
use crate::qp::{QpSettings, QpStatus};

pub use cccv::{CccvConfig, CccvController, Phase};
pub use cost::{evaluate_cost, CostBreakdown};
pub use nmpc::NmpcController;
pub use smpc::SmpcController;

/// Per-cell output quantities in output order `[V, T, I, SOC]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerOutput {
    pub v: f64,
    pub t: f64,
    pub i: f64,
    pub soc: f64,
}

impl PerOutput {
    pub fn as_array(&self) -> [f64; OUTPUTS_PER_CELL] {
        [self.v, self.t, self.i, self.soc]
    }

    fn repeat(&self, cells: usize) -> Vec<f64> {
        self.as_array().repeat(cells)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcConfig {
    pub horizon: usize,
    pub q: PerOutput,
    pub r: f64,
    /// Defaults to `r` when absent.
    pub r_reg: Option<f64>,
    pub y_ref: PerOutput,
    pub y_min: PerOutput,
    /// Current limits are given in multiples of the nominal 1C current.
    pub y_max: PerOutput,
    pub slack: PerOutput,
    pub sqp_max_iter: usize,
    /// Stop the SQP loop once the step is below this (A).
    pub sqp_tol: f64,
    /// SOC (%) at which a module counts as charged, minus `soc_tol`.
    pub soc_target: f64,
    pub soc_tol: f64,
    pub qp: QpSettings,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 3,
            q: PerOutput { v: 0.0, t: 0.0, i: 0.0, soc: 1e-2 },
            r: 1.78e-5,
            r_reg: None,
            y_ref: PerOutput { v: 0.0, t: 0.0, i: 0.0, soc: 100.0 },
            y_min: PerOutput { v: 2.7, t: 253.15, i: -1.5, soc: 0.0 },
            y_max: PerOutput { v: 4.2, t: 318.15, i: 0.0, soc: 100.0 },
            slack: PerOutput { v: 1e4, t: 1e4, i: 1e4, soc: 1e4 },
            sqp_max_iter: 20,
            sqp_tol: 1e-6,
            soc_target: 100.0,
            soc_tol: 0.5,
            qp: QpSettings::default(),
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.horizon == 0 {
            return bad("horizon must be at least one step");
        }
        if !(self.r > 0.0) {
            return bad("input weight r must be positive");
        }
        let q = self.q.as_array();
        let c = self.slack.as_array();
        if q.iter().chain(&c).any(|v| !(*v >= 0.0)) || self.r_reg.is_some_and(|v| !(v >= 0.0)) {
            return bad("weights must be nonnegative");
        }
        let lo = self.y_min.as_array();
        let hi = self.y_max.as_array();
        if lo.iter().zip(&hi).any(|(l, h)| l > h) {
            return bad("output lower limit exceeds upper limit");
        }
        if self.sqp_max_iter == 0 {
            return bad("at least one SQP iteration is required");
        }
        Ok(())
    }

    pub fn r_reg(&self) -> f64 {
        self.r_reg.unwrap_or(self.r)
    }

    /// Diagonal weights for a pack with `n_cells` cells and `m` inputs.
    pub fn weights(&self, n_cells: usize, m: usize) -> Weights {
        Weights {
            q: self.q.repeat(n_cells),
            r: vec![self.r; m],
            r_reg: vec![self.r_reg(); m],
            slack: self.slack.repeat(n_cells),
        }
    }

    /// Absolute limits. `i_1c` converts the current limits to amperes and
    /// the bypass inputs are bounded by `[0, i_ch]`.
    pub fn limits(&self, n_cells: usize, m: usize, i_1c: f64, i_ch: f64) -> Limits {
        let abs = |p: &PerOutput| PerOutput { i: p.i * i_1c, ..*p };
        Limits {
            u_lb: vec![0.0; m],
            u_ub: vec![i_ch; m],
            y_lb: abs(&self.y_min).repeat(n_cells),
            y_ub: abs(&self.y_max).repeat(n_cells),
        }
    }

    pub fn y_ref(&self, n_cells: usize) -> Vec<f64> {
        self.y_ref.repeat(n_cells)
    }
}

/// Nominal input sequence and the input applied over the previous sample.
#[derive(Debug, Clone, PartialEq)]
pub struct NominalPlan {
    pub u_bar: Vec<f64>,
    pub u_prev: Vec<f64>,
}

impl NominalPlan {
    /// Constant plan with `u_prev` equal to the first move.
    pub fn constant(u: &[f64], horizon: usize) -> Self {
        Self { u_bar: u.repeat(horizon), u_prev: u.to_vec() }
    }

    /// Receding-horizon update: drop the applied block, repeat the last.
    pub fn shifted(u_star: &[f64], m: usize) -> Self {
        let mut u_bar = u_star[m..].to_vec();
        u_bar.extend_from_slice(&u_star[u_star.len() - m..]);
        Self { u_bar, u_prev: u_star[..m].to_vec() }
    }

    /// Overwrite pinned inputs over the whole horizon.
    pub fn apply_pins(&mut self, pins: &[Option<f64>]) {
        let m = pins.len();
        for (j, u) in self.u_bar.iter_mut().enumerate() {
            if let Some(v) = pins[j % m] {
                *u = v;
            }
        }
    }
}

/// What a controller sees at a sample instant. The plant is a [`Pack`]
/// except in tests of the optimization layer.
#[derive(Debug)]
pub struct StepContext<'a, S: ?Sized = Pack> {
    pub pack: &'a S,
    pub t: f64,
    pub x: &'a [f64],
    /// Algebraic variables at `t` under the previously applied input.
    pub z: &'a [f64],
    /// Outputs at `t` under the previously applied input.
    pub y: &'a [f64],
    /// Completed modules and their bypass value.
    pub pins: &'a [Option<f64>],
    pub integrator: &'a IntegratorConfig,
}

impl<S: ?Sized> Clone for StepContext<'_, S> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<S: ?Sized> Copy for StepContext<'_, S> {}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    pub qp_status: Option<QpStatus>,
    pub qp_iterations: usize,
    pub sqp_iterations: usize,
    /// Predicted cost of the applied plan.
    pub cost: f64,
    pub max_slack: f64,
    pub fallback: bool,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub u: Vec<f64>,
    pub drives: Vec<ModuleDrive>,
    /// Modules the controller itself considers finished, if it tracks this.
    pub done: Option<Vec<bool>>,
    pub diagnostics: Diagnostics,
}

pub trait Controller {
    fn name(&self) -> &'static str;
    fn step(&mut self, ctx: &StepContext<'_>) -> Result<StepOutput>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Smpc,
    Nmpc,
    Cccv,
}

impl ControllerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ControllerKind::Smpc => "smpc",
            ControllerKind::Nmpc => "nmpc",
            ControllerKind::Cccv => "cccv",
        }
    }
}
