//! Constant-current / constant-voltage charging, decided per module from
//! the sampled measurements.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{Controller, Diagnostics, StepContext, StepOutput};
use crate::error::{Error, Result};
use crate::pack_model::{ModuleDrive, OUTPUTS_PER_CELL, Y_I, Y_V};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CccvConfig {
    /// Module charging current in the CC phase (A, positive).
    pub i_cc: f64,
    /// CV threshold and clamp voltage (V).
    pub v_th: f64,
    /// Cut-off module current magnitude (A).
    pub i_th: f64,
}

impl CccvConfig {
    /// Threshold 4.15 V and cut-off at 0.1 C of the module.
    pub fn standard(i_cc: f64, m_parallel: usize, i_1c: f64) -> Self {
        Self { i_cc, v_th: 4.15, i_th: 0.1 * m_parallel as f64 * i_1c }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.i_cc > 0.0 && self.v_th > 0.0 && self.i_th >= 0.0) {
            return Err(Error::Config("CC-CV currents and threshold must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Cc,
    Cv,
    Done,
}

/// Next phase of one module from its sampled voltage and current.
pub fn next_phase(phase: Phase, voltage: f64, module_current: f64, cfg: &CccvConfig) -> Phase {
    match phase {
        Phase::Cc if voltage >= cfg.v_th => Phase::Cv,
        Phase::Cv if module_current.abs() <= cfg.i_th => Phase::Done,
        p => p,
    }
}

/// Module commands for the given phases: CC draws `i_cc` from the
/// charger, CV clamps the module voltage, done bypasses everything.
pub fn commands(phases: &[Phase], cfg: &CccvConfig, i_ch: f64) -> (Vec<f64>, Vec<ModuleDrive>) {
    phases
        .iter()
        .map(|p| match p {
            Phase::Cc => (i_ch - cfg.i_cc, ModuleDrive::Current),
            Phase::Cv => (i_ch - cfg.i_cc, ModuleDrive::VoltageClamp(cfg.v_th)),
            Phase::Done => (i_ch, ModuleDrive::Current),
        })
        .unzip()
}

/// Advance all module phases from stacked cell outputs `y`. Returns the
/// new phases and the commands to apply.
pub fn cccv_step(
    y: &[f64],
    phases: &[Phase],
    cfg: &CccvConfig,
    m_parallel: usize,
    i_ch: f64,
) -> (Vec<f64>, Vec<ModuleDrive>, Vec<Phase>) {
    let next: Vec<Phase> = phases
        .iter()
        .enumerate()
        .map(|(i, &ph)| {
            let base = i * m_parallel * OUTPUTS_PER_CELL;
            let v = y[base + Y_V];
            let current: f64 = (0..m_parallel).map(|j| y[base + j * OUTPUTS_PER_CELL + Y_I]).sum();
            next_phase(ph, v, current, cfg)
        })
        .collect();
    let (u, drives) = commands(&next, cfg, i_ch);
    (u, drives, next)
}

#[derive(Debug, Clone)]
pub struct CccvController {
    pub config: CccvConfig,
    phases: Option<Vec<Phase>>,
    /// Sample time of each module's phase changes, `[to CV, to done]`.
    pub transitions: Vec<[Option<f64>; 2]>,
}

impl CccvController {
    pub fn new(config: CccvConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, phases: None, transitions: Vec::new() })
    }

    pub fn phases(&self) -> Option<&[Phase]> {
        self.phases.as_deref()
    }
}

impl Controller for CccvController {
    fn name(&self) -> &'static str {
        "cccv"
    }

    fn step(&mut self, ctx: &StepContext<'_>) -> Result<StepOutput> {
        let start = Instant::now();
        let n = ctx.pack.n_modules();
        let phases = self.phases.take().unwrap_or_else(|| vec![Phase::Cc; n]);
        if self.transitions.len() != n {
            self.transitions = vec![[None, None]; n];
        }
        let (u, drives, next) = cccv_step(ctx.y, &phases, &self.config, ctx.pack.m_parallel(), ctx.pack.config.i_ch);
        for (i, (a, b)) in phases.iter().zip(&next).enumerate() {
            if a != b {
                let slot = if *b == Phase::Cv { 0 } else { 1 };
                self.transitions[i][slot] = Some(ctx.t);
            }
        }
        let done = next.iter().map(|p| *p == Phase::Done).collect();
        self.phases = Some(next);
        Ok(StepOutput {
            u,
            drives,
            done: Some(done),
            diagnostics: Diagnostics { wall_time: start.elapsed().as_secs_f64(), ..Diagnostics::default() },
        })
    }
}
