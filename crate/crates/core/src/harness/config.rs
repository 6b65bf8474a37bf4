//! Scenario description loaded from JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cell_model::CellParams;
use crate::controllers::{CccvConfig, ControllerKind, MpcConfig};
use crate::dae::IntegratorConfig;
use crate::error::{Error, Result};

/// Gaussian statistics of the initial cell population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationStats {
    /// Initial state of charge (%).
    pub soc_mean: f64,
    pub soc_std: f64,
    /// Samples outside this SOC window are redrawn.
    pub soc_min: f64,
    pub soc_max: f64,
    /// Capacity (Ah).
    pub capacity_mean: f64,
    pub capacity_std: f64,
    /// SEI film resistance (ohm).
    pub r_sei_mean: f64,
    pub r_sei_std: f64,
    pub temperature: f64,
    pub c_e0: f64,
}

impl Default for PopulationStats {
    fn default() -> Self {
        Self {
            soc_mean: 50.0,
            soc_std: 10.0,
            soc_min: 5.0,
            soc_max: 95.0,
            capacity_mean: 7.5,
            capacity_std: 0.375,
            r_sei_mean: 15e-3,
            r_sei_std: 0.75e-3,
            temperature: 298.15,
            c_e0: 1000.0,
        }
    }
}

impl PopulationStats {
    /// All spreads zero.
    pub fn deterministic(&self) -> Self {
        Self { soc_std: 0.0, capacity_std: 0.0, r_sei_std: 0.0, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let stds = [self.soc_std, self.capacity_std, self.r_sei_std];
        if stds.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Config("standard deviations must be nonnegative".into()));
        }
        if !(self.soc_min < self.soc_max) || !(self.soc_min..=self.soc_max).contains(&self.soc_mean) {
            return Err(Error::Config("SOC window must be ordered and contain the mean".into()));
        }
        if !(self.capacity_mean > 0.0 && self.r_sei_mean > 0.0 && self.temperature > 0.0 && self.c_e0 > 0.0) {
            return Err(Error::Config("capacity, SEI resistance, temperature and c_e0 must be positive".into()));
        }
        Ok(())
    }
}

/// CC-CV settings in multiples of the module 1C current.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CccvSettings {
    pub i_cc_c_rate: f64,
    pub v_th: f64,
    pub i_th_c_rate: f64,
}

impl Default for CccvSettings {
    fn default() -> Self {
        Self { i_cc_c_rate: 1.0, v_th: 4.15, i_th_c_rate: 0.1 }
    }
}

impl CccvSettings {
    pub fn resolve(&self, m_parallel: usize, i_1c: f64) -> CccvConfig {
        let module = m_parallel as f64 * i_1c;
        CccvConfig { i_cc: self.i_cc_c_rate * module, v_th: self.v_th, i_th: self.i_th_c_rate * module }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub name: String,
    pub n_modules: usize,
    pub m_parallel: usize,
    pub controller: ControllerKind,
    /// Charger current in multiples of the module 1C current.
    pub i_ch_c_rate: f64,
    pub seed: u64,
    /// Longest simulated time (s).
    pub max_time: f64,
    /// Cell parameter template; the built-in reference set when absent.
    pub cell: Option<CellParams>,
    pub population: PopulationStats,
    pub mpc: MpcConfig,
    pub cccv: CccvSettings,
    pub integrator: IntegratorConfig,
    /// Relative spread of the plant's capacity and SEI resistance around the
    /// controllers' model. Zero runs the plant on the model itself.
    pub plant_mismatch: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "reference".into(),
            n_modules: 2,
            m_parallel: 2,
            controller: ControllerKind::Smpc,
            i_ch_c_rate: 1.5,
            seed: 1,
            max_time: 6000.0,
            cell: None,
            population: PopulationStats::default(),
            mpc: MpcConfig::default(),
            cccv: CccvSettings::default(),
            integrator: IntegratorConfig::default(),
            plant_mismatch: 0.0,
        }
    }
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_modules == 0 || self.m_parallel == 0 {
            return Err(Error::Config("pack needs at least one module and one cell per module".into()));
        }
        if !(self.i_ch_c_rate > 0.0) || !(self.max_time >= 0.0) {
            return Err(Error::Config("charger current must be positive and max_time nonnegative".into()));
        }
        if !(0.0..0.5).contains(&self.plant_mismatch) {
            return Err(Error::Config("plant_mismatch must lie in [0, 0.5)".into()));
        }
        self.population.validate()?;
        self.mpc.validate()?;
        self.integrator.validate()?;
        self.template().validate()?;
        Ok(())
    }

    pub fn template(&self) -> CellParams {
        self.cell.clone().unwrap_or_else(CellParams::reference)
    }

    /// Nominal 1C current of one cell (A).
    pub fn i_1c(&self) -> f64 {
        self.population.capacity_mean
    }

    pub fn i_ch(&self) -> f64 {
        self.i_ch_c_rate * self.m_parallel as f64 * self.i_1c()
    }

    pub fn cccv_config(&self) -> CccvConfig {
        self.cccv.resolve(self.m_parallel, self.i_1c())
    }
}
