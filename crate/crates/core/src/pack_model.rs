//! Battery pack of `N` series modules, each made of `M` parallel cells.
//!
//! Cell currents are algebraic variables fixed by equal voltages inside a
//! module and by the module current balance
//! `I_ch + sum_j I_ij - I_b,i = 0`. The per-module bypass currents `I_b`
//! are the inputs. Modules interact only through the charger current, so
//! each module is an independent block of the DAE.
//!
//! Orderings are module-major, cell-minor for x, z and y; each cell
//! contributes outputs `[V, T, I, SOC]`.

use serde::{Deserialize, Serialize};

use crate::cell_model::{temperature_index, Cell, CellParams, CellState, Q_BAR_N, Q_BAR_P};
use crate::dae::{BlockEval, BlockLayout, DaeSystem, Dims, JacobianBlocks};
use crate::error::ModelError;

pub const OUTPUTS_PER_CELL: usize = 4;
pub const Y_V: usize = 0;
pub const Y_T: usize = 1;
pub const Y_I: usize = 2;
pub const Y_SOC: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackConfig {
    pub n_modules: usize,
    pub m_parallel: usize,
    /// Charger current (A), non-negative.
    pub i_ch: f64,
    /// Module-major, `n_modules * m_parallel` entries.
    pub cells: Vec<CellParams>,
}

impl PackConfig {
    pub fn uniform(n_modules: usize, m_parallel: usize, i_ch: f64, cell: CellParams) -> Self {
        Self { n_modules, m_parallel, i_ch, cells: vec![cell; n_modules * m_parallel] }
    }

    pub fn n_cells(&self) -> usize {
        self.n_modules * self.m_parallel
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_modules == 0 || self.m_parallel == 0 {
            return Err(ModelError::Parameter {
                name: "pack",
                reason: format!("layout {}x{} must have at least one module and one cell", self.n_modules, self.m_parallel),
            });
        }
        if !(self.i_ch >= 0.0 && self.i_ch.is_finite()) {
            return Err(ModelError::Parameter {
                name: "i_ch",
                reason: format!("charger current must be finite and non-negative, got {}", self.i_ch),
            });
        }
        if self.cells.len() != self.n_cells() {
            return Err(ModelError::Dimension { what: "pack cells", expected: self.n_cells(), got: self.cells.len() });
        }
        let volumes = self.cells[0].volumes;
        if self.cells.iter().any(|c| c.volumes != volumes) {
            return Err(ModelError::Parameter {
                name: "volumes",
                reason: "all cells must share the electrolyte discretization".into(),
            });
        }
        Ok(())
    }
}

/// How a module's last algebraic equation is closed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ModuleDrive {
    /// Current balance with the charger and the bypass input.
    Current,
    /// Module terminal voltage held at the given value (V); the bypass
    /// input is ignored.
    VoltageClamp(f64),
}

/// The pack DAE.
#[derive(Debug, Clone)]
pub struct Pack {
    pub config: PackConfig,
    pub cells: Vec<Cell>,
    pub drives: Vec<ModuleDrive>,
    nx_cell: usize,
}

impl Pack {
    pub fn new(config: PackConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let cells = config.cells.iter().cloned().map(Cell::new).collect::<Result<Vec<_>, _>>()?;
        let nx_cell = cells[0].state_len();
        let drives = vec![ModuleDrive::Current; config.n_modules];
        Ok(Self { config, cells, drives, nx_cell })
    }

    pub fn n_modules(&self) -> usize {
        self.config.n_modules
    }

    pub fn m_parallel(&self) -> usize {
        self.config.m_parallel
    }

    pub fn nx_cell(&self) -> usize {
        self.nx_cell
    }

    pub fn cell_index(&self, module: usize, cell: usize) -> usize {
        module * self.config.m_parallel + cell
    }

    /// Packed differential state from per-cell states.
    pub fn pack_state(&self, states: &[CellState]) -> Vec<f64> {
        states.iter().flat_map(|s| s.to_vec()).collect()
    }

    /// Equal split of the module current, the starting guess for the
    /// algebraic solve.
    pub fn default_currents(&self, u: &[f64]) -> Vec<f64> {
        let m = self.config.m_parallel;
        (0..self.config.n_modules)
            .flat_map(|i| {
                let ib = u.get(i).copied().unwrap_or(0.0);
                std::iter::repeat(-(self.config.i_ch - ib) / m as f64).take(m)
            })
            .collect()
    }

    fn module_cells(&self, module: usize) -> &[Cell] {
        let m = self.config.m_parallel;
        &self.cells[module * m..(module + 1) * m]
    }
}

impl DaeSystem for Pack {
    fn dims(&self) -> Dims {
        let nc = self.config.n_cells();
        Dims { n: nc * self.nx_cell, m: self.config.n_modules, s: nc, p: nc * OUTPUTS_PER_CELL }
    }

    fn blocks(&self) -> Vec<BlockLayout> {
        let m = self.config.m_parallel;
        let nx = self.nx_cell;
        (0..self.config.n_modules)
            .map(|i| BlockLayout {
                x: i * m * nx..(i + 1) * m * nx,
                z: i * m..(i + 1) * m,
                y: i * m * OUTPUTS_PER_CELL..(i + 1) * m * OUTPUTS_PER_CELL,
            })
            .collect()
    }

    fn eval_block(&self, block: usize, x: &[f64], u: &[f64], z: &[f64], guarded: bool) -> Result<BlockEval, ModelError> {
        let nx = self.nx_cell;
        let cells = self.module_cells(block);
        let mut f = Vec::with_capacity(x.len());
        let mut volts = Vec::with_capacity(cells.len());
        for (j, cell) in cells.iter().enumerate() {
            let e = cell.evaluate(&x[j * nx..(j + 1) * nx], z[j], guarded)?;
            f.extend_from_slice(&e.rhs);
            volts.push(e.breakdown.voltage);
        }
        let mut h: Vec<f64> = volts.windows(2).map(|w| w[0] - w[1]).collect();
        h.push(match self.drives[block] {
            ModuleDrive::Current => self.config.i_ch + z.iter().sum::<f64>() - u[block],
            ModuleDrive::VoltageClamp(v) => volts[0] - v,
        });
        Ok(BlockEval { f, h })
    }

    fn output_block(&self, block: usize, x: &[f64], _u: &[f64], z: &[f64]) -> Result<Vec<f64>, ModelError> {
        let nx = self.nx_cell;
        let mut y = Vec::with_capacity(z.len() * OUTPUTS_PER_CELL);
        for (j, cell) in self.module_cells(block).iter().enumerate() {
            let o = cell.outputs(&x[j * nx..(j + 1) * nx], z[j])?;
            y.extend_from_slice(&[o.voltage, o.temperature, o.current, o.soc]);
        }
        Ok(y)
    }

    fn jacobians_block(
        &self,
        block: usize,
        x: &[f64],
        _u: &[f64],
        z: &[f64],
        guarded: bool,
    ) -> Result<JacobianBlocks, ModelError> {
        let nx = self.nx_cell;
        let m = self.config.m_parallel;
        let mut jac = JacobianBlocks::zeros(m * nx, self.config.n_modules, m, m * OUTPUTS_PER_CELL);
        let it = temperature_index(self.cells[0].params.volumes);
        let mut lins = Vec::with_capacity(m);
        for (j, cell) in self.module_cells(block).iter().enumerate() {
            let lin = cell.linearize(&x[j * nx..(j + 1) * nx], z[j], guarded)?;
            let r0 = j * nx;
            for a in 0..nx {
                for c in 0..nx {
                    jac.fx[(r0 + a, r0 + c)] = lin.df_dx[a * nx + c];
                }
                jac.fz[(r0 + a, j)] = lin.df_di[a];
            }
            let y0 = j * OUTPUTS_PER_CELL;
            for c in 0..nx {
                jac.gx[(y0 + Y_V, r0 + c)] = lin.dv_dx[c];
                jac.gx[(y0 + Y_SOC, r0 + c)] = lin.dsoc_dx[c];
            }
            jac.gx[(y0 + Y_T, r0 + it)] = 1.0;
            jac.gz[(y0 + Y_V, j)] = lin.dv_di;
            jac.gz[(y0 + Y_I, j)] = 1.0;
            lins.push(lin);
        }
        for j in 0..m - 1 {
            for c in 0..nx {
                jac.hx[(j, j * nx + c)] = lins[j].dv_dx[c];
                jac.hx[(j, (j + 1) * nx + c)] = -lins[j + 1].dv_dx[c];
            }
            jac.hz[(j, j)] = lins[j].dv_di;
            jac.hz[(j, j + 1)] = -lins[j + 1].dv_di;
        }
        match self.drives[block] {
            ModuleDrive::Current => {
                for j in 0..m {
                    jac.hz[(m - 1, j)] = 1.0;
                }
                jac.hu[(m - 1, block)] = -1.0;
            }
            ModuleDrive::VoltageClamp(_) => {
                for c in 0..nx {
                    jac.hx[(m - 1, c)] = lins[0].dv_dx[c];
                }
                jac.hz[(m - 1, 0)] = lins[0].dv_di;
            }
        }
        Ok(jac)
    }

    fn state_scale_block(&self, block: usize) -> Vec<f64> {
        let mut scale = Vec::with_capacity(self.config.m_parallel * self.nx_cell);
        for cell in self.module_cells(block) {
            let p = &cell.params;
            let mut s = vec![1.0; self.nx_cell];
            s[Q_BAR_P] = p.cs_max_p / p.rp_p;
            s[Q_BAR_N] = p.cs_max_n / p.rp_n;
            for v in s.iter_mut().take(temperature_index(p.volumes)).skip(3) {
                *v = 1000.0;
            }
            s[temperature_index(p.volumes)] = p.t_sink;
            scale.extend(s);
        }
        scale
    }
}

/// Full algebraic residual `h(x, u, z)`, module-major with the voltage
/// equalities of each module before its closing equation.
pub fn algebraic_residual(pack: &Pack, x: &[f64], z: &[f64], u: &[f64]) -> Result<Vec<f64>, ModelError> {
    crate::dae::eval_f_h(pack, x, u, z).map(|e| e.h)
}

/// Block-concatenated cell right-hand sides.
pub fn pack_rhs(pack: &Pack, x: &[f64], z: &[f64], u: &[f64]) -> Result<Vec<f64>, ModelError> {
    crate::dae::eval_f_h(pack, x, u, z).map(|e| e.f)
}

/// Per-cell `[V, T, I, SOC]`.
pub fn pack_output(pack: &Pack, x: &[f64], z: &[f64], u: &[f64]) -> Result<Vec<f64>, ModelError> {
    crate::dae::output(pack, x, u, z)
}

/// Completion bookkeeping for every module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub done: Vec<bool>,
    /// First time (s) each module was seen complete.
    pub times: Vec<Option<f64>>,
}

impl Completion {
    pub fn new(n_modules: usize) -> Self {
        Self { done: vec![false; n_modules], times: vec![None; n_modules] }
    }

    pub fn all_done(&self) -> bool {
        self.done.iter().all(|d| *d)
    }

    /// Latest module completion time, once every module is complete.
    pub fn charging_time(&self) -> Option<f64> {
        if !self.all_done() {
            return None;
        }
        self.times.iter().map(|t| t.unwrap_or(0.0)).fold(Some(0.0), |acc, t| acc.map(|a: f64| a.max(t)))
    }
}

/// Mark modules whose weakest cell reached `soc_target - tol` as complete
/// and return the pinned bypass current for every complete module.
pub fn apply_completion(
    y: &[f64],
    completion: &Completion,
    config: &PackConfig,
    soc_target: f64,
    tol: f64,
    time: f64,
) -> (Vec<Option<f64>>, Completion) {
    let m = config.m_parallel;
    let mut next = completion.clone();
    let mut pins = vec![None; config.n_modules];
    for i in 0..config.n_modules {
        if !next.done[i] {
            let min_soc = (0..m)
                .map(|j| y[(i * m + j) * OUTPUTS_PER_CELL + Y_SOC])
                .fold(f64::INFINITY, f64::min);
            if min_soc >= soc_target - tol {
                next.done[i] = true;
                next.times[i] = Some(time);
            }
        }
        if next.done[i] {
            pins[i] = Some(config.i_ch);
        }
    }
    (pins, next)
}
