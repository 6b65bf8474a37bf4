//! Single-cell electrochemical-thermal model.
//!
//! Each electrode is one representative particle whose radial lithium
//! profile is approximated by a fourth-order polynomial, reducing solid
//! diffusion to the volume-averaged stoichiometry and concentration flux.
//! The electrolyte is discretized into `P` finite volumes per section
//! (cathode, separator, anode) and the temperature is a single lumped state.
//!
//! Packed cell state layout (length `4 + 3P`):
//!
//! | index        | quantity                                   | unit     |
//! |--------------|--------------------------------------------|----------|
//! | 0            | average cathode stoichiometry              | -        |
//! | 1            | cathode volume-averaged concentration flux | mol/m^4  |
//! | 2            | anode volume-averaged concentration flux   | mol/m^4  |
//! | 3 .. 3+3P    | electrolyte volumes, cathode/sep/anode     | mol/m^3  |
//! | 3+3P         | temperature                                | K        |
//!
//! The applied current is negative while charging.

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

pub const THETA_BAR_P: usize = 0;
pub const Q_BAR_P: usize = 1;
pub const Q_BAR_N: usize = 2;
pub const C_E_START: usize = 3;

/// Stoichiometries are kept this far away from 0 and 1 while a Newton
/// iteration is in progress.
pub const GUARD_BAND: f64 = 1e-6;

/// Cathode open-circuit potential fit, ascending powers of the surface stoichiometry.
pub const OCP_POSITIVE_COEFFS: [f64; 7] = [4.571, 0.02414, -7.837, 8.07, 20.94, -40.7, 18.45];

/// Electrolyte conductivity fit in `gamma = 1e-3 c_e`, ascending powers.
pub const CONDUCTIVITY_COEFFS: [f64; 4] = [0.1726, 1.7919, -1.2983, 0.2667];

#[inline]
pub fn state_len(volumes: usize) -> usize {
    4 + 3 * volumes
}

#[inline]
pub fn temperature_index(volumes: usize) -> usize {
    3 + 3 * volumes
}

/// Electrochemical, thermal and geometric parameters of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellParams {
    /// Cathode stoichiometry at 0 % state of charge.
    pub theta0_p: f64,
    /// Cathode stoichiometry at 100 % state of charge.
    pub theta100_p: f64,
    pub theta0_n: f64,
    pub theta100_n: f64,
    /// Maximum solid concentrations (mol/m^3).
    pub cs_max_p: f64,
    pub cs_max_n: f64,
    /// Particle radii (m).
    pub rp_p: f64,
    pub rp_n: f64,
    /// Section thicknesses (m).
    pub l_p: f64,
    pub l_s: f64,
    pub l_n: f64,
    /// Electrode area (m^2).
    pub area: f64,
    /// Capacity (Ah).
    pub capacity_ah: f64,
    pub faraday: f64,
    pub r_gas: f64,
    /// Solid diffusion pre-exponentials (m^2/s).
    pub ds0_p: f64,
    pub ds0_n: f64,
    /// Activation energies (J/mol).
    pub ea_ds_p: f64,
    pub ea_ds_n: f64,
    pub ea_kappa: f64,
    pub ea_de: f64,
    pub ea_k_p: f64,
    pub ea_k_n: f64,
    /// Electrolyte diffusion pre-exponential (m^2/s).
    pub de0: f64,
    pub t_plus: f64,
    pub eps_p: f64,
    pub eps_s: f64,
    pub eps_n: f64,
    /// Bruggeman exponents.
    pub brug_p: f64,
    pub brug_s: f64,
    pub brug_n: f64,
    /// Reaction-rate pre-exponentials.
    pub k0_p: f64,
    pub k0_n: f64,
    /// Film resistance (Ohm).
    pub r_sei: f64,
    /// Thermal capacity (J/K).
    pub c_th: f64,
    /// Thermal resistance to the coolant (K/W).
    pub r_th: f64,
    /// Coolant temperature (K).
    pub t_sink: f64,
    /// Finite volumes per section.
    pub volumes: usize,
}

const REFERENCE_JSON: &str = include_str!("../params/kokam_reference.json");

impl CellParams {
    /// Representative 7.5 Ah pouch-cell parameters shipped with the crate.
    pub fn reference() -> Self {
        serde_json::from_str(REFERENCE_JSON).expect("bundled reference parameters parse")
    }

    pub fn delta_theta_p(&self) -> f64 {
        self.theta100_p - self.theta0_p
    }

    pub fn delta_theta_n(&self) -> f64 {
        self.theta100_n - self.theta0_n
    }

    pub fn state_len(&self) -> usize {
        state_len(self.volumes)
    }

    /// Current that nominally moves the full capacity in one hour (A).
    pub fn one_c_current(&self) -> f64 {
        self.capacity_ah
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("cs_max_p", self.cs_max_p),
            ("cs_max_n", self.cs_max_n),
            ("rp_p", self.rp_p),
            ("rp_n", self.rp_n),
            ("l_p", self.l_p),
            ("l_s", self.l_s),
            ("l_n", self.l_n),
            ("area", self.area),
            ("capacity_ah", self.capacity_ah),
            ("faraday", self.faraday),
            ("r_gas", self.r_gas),
            ("ds0_p", self.ds0_p),
            ("ds0_n", self.ds0_n),
            ("de0", self.de0),
            ("eps_p", self.eps_p),
            ("eps_s", self.eps_s),
            ("eps_n", self.eps_n),
            ("brug_p", self.brug_p),
            ("brug_s", self.brug_s),
            ("brug_n", self.brug_n),
            ("k0_p", self.k0_p),
            ("k0_n", self.k0_n),
            ("r_sei", self.r_sei),
            ("c_th", self.c_th),
            ("r_th", self.r_th),
            ("t_sink", self.t_sink),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(ModelError::Parameter {
                    name,
                    reason: format!("must be finite and positive, got {value}"),
                });
            }
        }
        let non_negative = [
            ("ea_ds_p", self.ea_ds_p),
            ("ea_ds_n", self.ea_ds_n),
            ("ea_kappa", self.ea_kappa),
            ("ea_de", self.ea_de),
            ("ea_k_p", self.ea_k_p),
            ("ea_k_n", self.ea_k_n),
        ];
        for (name, value) in non_negative {
            if !(value.is_finite() && value >= 0.0) {
                return Err(ModelError::Parameter {
                    name,
                    reason: format!("must be finite and non-negative, got {value}"),
                });
            }
        }
        let window = [
            ("theta0_p", self.theta0_p),
            ("theta100_p", self.theta100_p),
            ("theta0_n", self.theta0_n),
            ("theta100_n", self.theta100_n),
        ];
        for (name, value) in window {
            if !(value > 0.0 && value < 1.0) {
                return Err(ModelError::Parameter {
                    name,
                    reason: format!("stoichiometry window endpoint must lie in (0, 1), got {value}"),
                });
            }
        }
        if self.delta_theta_p() == 0.0 {
            return Err(ModelError::Parameter {
                name: "theta100_p",
                reason: "cathode stoichiometry window is empty".into(),
            });
        }
        if self.delta_theta_n() == 0.0 {
            return Err(ModelError::Parameter {
                name: "theta100_n",
                reason: "anode stoichiometry window is empty".into(),
            });
        }
        if !(self.t_plus > 0.0 && self.t_plus < 1.0) {
            return Err(ModelError::Parameter {
                name: "t_plus",
                reason: format!("transference number must lie in (0, 1), got {}", self.t_plus),
            });
        }
        if self.volumes == 0 {
            return Err(ModelError::Parameter {
                name: "volumes",
                reason: "at least one finite volume per section is required".into(),
            });
        }
        Ok(())
    }
}

/// Quantities derived once from [`CellParams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedGeometry {
    pub eps_act_p: f64,
    pub eps_act_n: f64,
    /// Specific active surface areas (1/m).
    pub a_p: f64,
    pub a_n: f64,
    /// Finite-volume widths (m).
    pub dx_p: f64,
    pub dx_s: f64,
    pub dx_n: f64,
}

/// Active-material fractions, specific surface areas and volume widths.
///
/// The capacity enters the active-material fractions in coulombs.
pub fn derive_geometry(params: &CellParams) -> Result<DerivedGeometry, ModelError> {
    params.validate()?;
    let charge = params.capacity_ah * 3600.0;
    let eps_act_p = -charge
        / (params.delta_theta_p() * params.area * params.faraday * params.l_p * params.cs_max_p);
    let eps_act_n = charge
        / (params.delta_theta_n() * params.area * params.faraday * params.l_n * params.cs_max_n);
    for (name, value) in [("eps_act_p", eps_act_p), ("eps_act_n", eps_act_n)] {
        if !(value.is_finite() && value > 0.0) {
            return Err(ModelError::Parameter {
                name,
                reason: format!("active material fraction evaluates to {value}"),
            });
        }
    }
    let p = params.volumes as f64;
    Ok(DerivedGeometry {
        eps_act_p,
        eps_act_n,
        a_p: 3.0 * eps_act_p / params.rp_p,
        a_n: 3.0 * eps_act_n / params.rp_n,
        dx_p: params.l_p / p,
        dx_s: params.l_s / p,
        dx_n: params.l_n / p,
    })
}

/// Differential state of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellState {
    pub theta_bar_p: f64,
    pub q_bar_p: f64,
    pub q_bar_n: f64,
    /// Cathode volumes, then separator, then anode.
    pub c_e: Vec<f64>,
    pub temperature: f64,
}

impl CellState {
    /// Equilibrium state at the given state of charge: zero fluxes and a
    /// uniform electrolyte.
    pub fn at_rest(params: &CellParams, soc: f64, temperature: f64, c_e0: f64) -> Self {
        Self {
            theta_bar_p: params.theta0_p + soc / 100.0 * params.delta_theta_p(),
            q_bar_p: 0.0,
            q_bar_n: 0.0,
            c_e: vec![c_e0; 3 * params.volumes],
            temperature,
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(4 + self.c_e.len());
        v.push(self.theta_bar_p);
        v.push(self.q_bar_p);
        v.push(self.q_bar_n);
        v.extend_from_slice(&self.c_e);
        v.push(self.temperature);
        v
    }

    pub fn from_slice(x: &[f64], volumes: usize) -> Result<Self, ModelError> {
        check_len("cell state", state_len(volumes), x.len())?;
        Ok(Self {
            theta_bar_p: x[THETA_BAR_P],
            q_bar_p: x[Q_BAR_P],
            q_bar_n: x[Q_BAR_N],
            c_e: x[C_E_START..C_E_START + 3 * volumes].to_vec(),
            temperature: x[temperature_index(volumes)],
        })
    }
}

/// Measured quantities of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellOutputs {
    pub voltage: f64,
    pub temperature: f64,
    pub current: f64,
    pub soc: f64,
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), ModelError> {
    if expected == got {
        Ok(())
    } else {
        Err(ModelError::Dimension { what, expected, got })
    }
}

fn check_temperature(t: f64) -> Result<(), ModelError> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(ModelError::Temperature(t))
    }
}

pub fn arrhenius(pre_exponential: f64, activation_energy: f64, r_gas: f64, temperature: f64) -> f64 {
    pre_exponential * (-activation_energy / (r_gas * temperature)).exp()
}

/// Harmonic mean of two diffusivities over adjacent widths `lambda1`, `lambda2`.
pub fn harmonic_mean(rho1: f64, rho2: f64, lambda1: f64, lambda2: f64) -> f64 {
    rho1 * rho2 * (lambda1 + lambda2) / (rho1 * lambda2 + rho2 * lambda1)
}

fn poly(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

fn poly_slope(coeffs: &[f64], x: f64) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .rev()
        .fold(0.0, |acc, (k, c)| acc * x + k as f64 * c)
}

pub fn ocp_positive(theta: f64) -> f64 {
    poly(&OCP_POSITIVE_COEFFS, theta)
}

pub fn ocp_positive_slope(theta: f64) -> f64 {
    poly_slope(&OCP_POSITIVE_COEFFS, theta)
}

pub fn ocp_negative(theta: f64) -> f64 {
    (0.1261 * theta + 0.00694) / (theta * theta + 0.6995 * theta + 0.00405)
}

pub fn ocp_negative_slope(theta: f64) -> f64 {
    let num = 0.1261 * theta + 0.00694;
    let den = theta * theta + 0.6995 * theta + 0.00405;
    (0.1261 * den - num * (2.0 * theta + 0.6995)) / (den * den)
}

/// Electrolyte conductivity (S/m) at concentration `c_e` (mol/m^3).
pub fn conductivity(c_e: f64, temperature: f64, ea_kappa: f64, r_gas: f64) -> f64 {
    poly(&CONDUCTIVITY_COEFFS, 1e-3 * c_e) * (-ea_kappa / (r_gas * temperature)).exp()
}

/// Derivative of [`conductivity`] with respect to `c_e`.
pub fn conductivity_slope(c_e: f64, temperature: f64, ea_kappa: f64, r_gas: f64) -> f64 {
    1e-3 * poly_slope(&CONDUCTIVITY_COEFFS, 1e-3 * c_e) * (-ea_kappa / (r_gas * temperature)).exp()
}

/// Average anode stoichiometry implied by lithium conservation in the solid phase.
pub fn anode_from_cathode(theta_bar_p: f64, params: &CellParams) -> f64 {
    params.theta0_n
        + (theta_bar_p - params.theta0_p) / params.delta_theta_p() * params.delta_theta_n()
}

/// State of charge in percent.
pub fn soc_of(theta_bar_n: f64, params: &CellParams) -> f64 {
    100.0 * (theta_bar_n - params.theta0_n) / params.delta_theta_n()
}

/// Rates of the average cathode stoichiometry and of both concentration fluxes.
///
/// The stoichiometry rate carries the `1 / c_s,max,p` factor that turns the
/// molar pore-wall flux into a stoichiometry change; a 1C current then
/// sweeps the full window in one hour.
pub fn solid_phase_rates(
    state: &[f64],
    i_app: f64,
    params: &CellParams,
    geom: &DerivedGeometry,
) -> Result<[f64; 3], ModelError> {
    check_len("cell state", params.state_len(), state.len())?;
    let t = state[temperature_index(params.volumes)];
    check_temperature(t)?;
    let ds_p = arrhenius(params.ds0_p, params.ea_ds_p, params.r_gas, t);
    let ds_n = arrhenius(params.ds0_n, params.ea_ds_n, params.r_gas, t);
    let fa = params.faraday * params.area;
    let dtheta = 3.0 * i_app / (geom.a_p * params.rp_p * params.l_p * fa * params.cs_max_p);
    let dq_p = -30.0 * ds_p / params.rp_p.powi(2) * state[Q_BAR_P]
        + 45.0 / (2.0 * params.rp_p.powi(2) * fa * params.l_p * geom.a_p) * i_app;
    let dq_n = -30.0 * ds_n / params.rp_n.powi(2) * state[Q_BAR_N]
        - 45.0 / (2.0 * params.rp_n.powi(2) * fa * params.l_n * geom.a_n) * i_app;
    Ok([dtheta, dq_p, dq_n])
}

/// Surface stoichiometries `(theta_p, theta_n)` from the polynomial profile.
///
/// Values outside (0, 1) are returned as computed; callers decide whether
/// they are acceptable.
pub fn surface_stoichiometries(
    state: &[f64],
    i_app: f64,
    params: &CellParams,
    geom: &DerivedGeometry,
) -> Result<(f64, f64), ModelError> {
    check_len("cell state", params.state_len(), state.len())?;
    let t = state[temperature_index(params.volumes)];
    check_temperature(t)?;
    let ds_p = arrhenius(params.ds0_p, params.ea_ds_p, params.r_gas, t);
    let ds_n = arrhenius(params.ds0_n, params.ea_ds_n, params.r_gas, t);
    let fa = params.faraday * params.area;
    let theta_bar_n = anode_from_cathode(state[THETA_BAR_P], params);
    let theta_p = state[THETA_BAR_P]
        + 8.0 * params.rp_p * state[Q_BAR_P] / (35.0 * params.cs_max_p)
        + params.rp_p * i_app / (35.0 * ds_p * fa * params.l_p * geom.a_p * params.cs_max_p);
    let theta_n = theta_bar_n + 8.0 * params.rp_n * state[Q_BAR_N] / (35.0 * params.cs_max_n)
        - params.rp_n * i_app / (35.0 * ds_n * fa * params.l_n * geom.a_n * params.cs_max_n);
    Ok((theta_p, theta_n))
}

#[derive(Clone, Copy)]
struct Section {
    eps: f64,
    brug: f64,
    dx: f64,
}

fn sections(params: &CellParams, geom: &DerivedGeometry) -> [Section; 3] {
    [
        Section { eps: params.eps_p, brug: params.brug_p, dx: geom.dx_p },
        Section { eps: params.eps_s, brug: params.brug_s, dx: geom.dx_s },
        Section { eps: params.eps_n, brug: params.brug_n, dx: geom.dx_n },
    ]
}

/// Diffusive conductance of every internal face divided by the
/// temperature factor, i.e. evaluated with `D_e = de0`.
///
/// Face `k` sits between volumes `k` and `k + 1`. Faces inside a section
/// use that section's effective diffusivity over one volume width; the two
/// section interfaces use the harmonic mean over the centre-to-centre span.
fn face_conductances(params: &CellParams, geom: &DerivedGeometry) -> Vec<f64> {
    let np = params.volumes;
    let secs = sections(params, geom);
    let deff: Vec<f64> = secs.iter().map(|s| params.de0 * s.eps.powf(s.brug)).collect();
    (0..3 * np - 1)
        .map(|k| {
            let (jl, jr) = (k / np, (k + 1) / np);
            if jl == jr {
                deff[jl] / secs[jl].dx
            } else {
                let (dl, dr) = (secs[jl].dx, secs[jr].dx);
                harmonic_mean(deff[jl], deff[jr], dl, dr) / (0.5 * (dl + dr))
            }
        })
        .collect()
}

fn check_concentrations(c: &[f64]) -> Result<(), ModelError> {
    for (index, &value) in c.iter().enumerate() {
        if !(value > 0.0 && value.is_finite()) {
            return Err(ModelError::Concentration { index, value });
        }
    }
    Ok(())
}

/// Rates of the `3P` volume-averaged electrolyte concentrations.
pub fn electrolyte_rates(
    state: &[f64],
    i_app: f64,
    params: &CellParams,
    geom: &DerivedGeometry,
) -> Result<Vec<f64>, ModelError> {
    check_len("cell state", params.state_len(), state.len())?;
    let np = params.volumes;
    let t = state[temperature_index(np)];
    check_temperature(t)?;
    let c = &state[C_E_START..C_E_START + 3 * np];
    check_concentrations(c)?;
    let factor = (-params.ea_de / (params.r_gas * t)).exp();
    let faces = face_conductances(params, geom);
    let secs = sections(params, geom);
    let fa = params.faraday * params.area;
    let source = [
        -(1.0 - params.t_plus) / (fa * params.l_p) * i_app,
        0.0,
        (1.0 - params.t_plus) / (fa * params.l_n) * i_app,
    ];
    Ok((0..3 * np)
        .map(|k| {
            let sec = secs[k / np];
            let right = if k + 1 < 3 * np { faces[k] * (c[k + 1] - c[k]) } else { 0.0 };
            let left = if k > 0 { faces[k - 1] * (c[k] - c[k - 1]) } else { 0.0 };
            (factor * (right - left) / sec.dx + source[k / np]) / sec.eps
        })
        .collect())
}

/// Porosity-weighted electrolyte lithium per unit electrode area
/// (mol/m^2). The discretized transport leaves it unchanged.
pub fn electrolyte_inventory(state: &[f64], params: &CellParams) -> f64 {
    let np = params.volumes;
    let widths = [
        params.eps_p * params.l_p,
        params.eps_s * params.l_s,
        params.eps_n * params.l_n,
    ];
    state[C_E_START..C_E_START + 3 * np]
        .iter()
        .enumerate()
        .map(|(k, c)| widths[k / np] / np as f64 * c)
        .sum()
}

/// Terminal voltage and its contributions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoltageBreakdown {
    pub voltage: f64,
    pub u_p: f64,
    pub u_n: f64,
    pub eta_p: f64,
    pub eta_n: f64,
    pub delta_phi_e: f64,
    pub theta_p: f64,
    pub theta_n: f64,
}

pub fn terminal_voltage(
    state: &[f64],
    i_app: f64,
    params: &CellParams,
    geom: &DerivedGeometry,
) -> Result<VoltageBreakdown, ModelError> {
    let cell = Cell { params: params.clone(), geom: *geom };
    cell.evaluate(state, i_app, false).map(|e| e.breakdown)
}

/// Lumped thermal balance with polarization heat `|I| |V - (U_p - U_n)|`.
pub fn thermal_rate(temperature: f64, i_app: f64, v: f64, u_p: f64, u_n: f64, params: &CellParams) -> f64 {
    let q = i_app.abs() * (v - (u_p - u_n)).abs();
    (q - (temperature - params.t_sink) / params.r_th) / params.c_th
}

/// Full right-hand side of the cell dynamics in packed-state order.
pub fn cell_rhs(
    state: &[f64],
    i_app: f64,
    params: &CellParams,
    geom: &DerivedGeometry,
) -> Result<Vec<f64>, ModelError> {
    let solid = solid_phase_rates(state, i_app, params, geom)?;
    let electrolyte = electrolyte_rates(state, i_app, params, geom)?;
    let volt = terminal_voltage(state, i_app, params, geom)?;
    let t = state[temperature_index(params.volumes)];
    let mut rhs = Vec::with_capacity(params.state_len());
    rhs.extend_from_slice(&solid);
    rhs.extend(electrolyte);
    rhs.push(thermal_rate(t, i_app, volt.voltage, volt.u_p, volt.u_n, params));
    Ok(rhs)
}

/// Values produced by one cell evaluation.
#[derive(Debug, Clone)]
pub struct CellEval {
    pub rhs: Vec<f64>,
    pub breakdown: VoltageBreakdown,
    pub soc: f64,
}

/// Values plus first derivatives with respect to the packed state and the
/// applied current.
#[derive(Debug, Clone)]
pub struct CellLinearization {
    pub eval: CellEval,
    /// Row-major `nx x nx`.
    pub df_dx: Vec<f64>,
    pub df_di: Vec<f64>,
    pub dv_dx: Vec<f64>,
    pub dv_di: f64,
    pub dsoc_dx: Vec<f64>,
}

/// A cell with its derived geometry and face conductances cached.
#[derive(Debug, Clone)]
pub struct Cell {
    pub params: CellParams,
    pub geom: DerivedGeometry,
}

/// Gradient with respect to `(state, current)`; the last slot is the current.
type Grad = Vec<f64>;

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

impl Cell {
    pub fn new(params: CellParams) -> Result<Self, ModelError> {
        let geom = derive_geometry(&params)?;
        Ok(Self { params, geom })
    }

    pub fn state_len(&self) -> usize {
        self.params.state_len()
    }

    pub fn outputs(&self, state: &[f64], i_app: f64) -> Result<CellOutputs, ModelError> {
        let e = self.evaluate(state, i_app, false)?;
        Ok(CellOutputs {
            voltage: e.breakdown.voltage,
            temperature: state[temperature_index(self.params.volumes)],
            current: i_app,
            soc: e.soc,
        })
    }

    /// Right-hand side, voltage and state of charge.
    ///
    /// With `guard` set, surface stoichiometries are clipped into
    /// `[GUARD_BAND, 1 - GUARD_BAND]` instead of failing.
    pub fn evaluate(&self, state: &[f64], i_app: f64, guard: bool) -> Result<CellEval, ModelError> {
        self.run(state, i_app, guard, false).map(|l| l.eval)
    }

    pub fn linearize(&self, state: &[f64], i_app: f64, guard: bool) -> Result<CellLinearization, ModelError> {
        self.run(state, i_app, guard, true)
    }

    fn run(&self, x: &[f64], i: f64, guard: bool, derivs: bool) -> Result<CellLinearization, ModelError> {
        let p = &self.params;
        let g = &self.geom;
        let np = p.volumes;
        let nx = p.state_len();
        check_len("cell state", nx, x.len())?;
        let it = temperature_index(np);
        let ii = nx;
        let t = x[it];
        check_temperature(t)?;
        let c = &x[C_E_START..C_E_START + 3 * np];
        check_concentrations(c)?;

        let r = p.r_gas;
        let f = p.faraday;
        let fa = f * p.area;
        // d/dT of exp(-Ea / (R T)) divided by the value
        let dln = |ea: f64| ea / (r * t * t);
        let grad = || -> Grad { if derivs { vec![0.0; nx + 1] } else { Vec::new() } };

        let mut rhs = vec![0.0; nx];
        let mut df_dx = if derivs { vec![0.0; nx * nx] } else { Vec::new() };
        let mut df_di = if derivs { vec![0.0; nx] } else { Vec::new() };

        // Solid phase.
        let ds_p = arrhenius(p.ds0_p, p.ea_ds_p, r, t);
        let ds_n = arrhenius(p.ds0_n, p.ea_ds_n, r, t);
        let kp = fa * p.l_p * g.a_p;
        let kn = fa * p.l_n * g.a_n;
        let (rp2, rn2) = (p.rp_p * p.rp_p, p.rp_n * p.rp_n);
        rhs[THETA_BAR_P] = 3.0 * i / (p.rp_p * kp * p.cs_max_p);
        rhs[Q_BAR_P] = -30.0 * ds_p / rp2 * x[Q_BAR_P] + 45.0 / (2.0 * rp2 * kp) * i;
        rhs[Q_BAR_N] = -30.0 * ds_n / rn2 * x[Q_BAR_N] - 45.0 / (2.0 * rn2 * kn) * i;
        if derivs {
            df_di[THETA_BAR_P] = 3.0 / (p.rp_p * kp * p.cs_max_p);
            df_dx[Q_BAR_P * nx + Q_BAR_P] = -30.0 * ds_p / rp2;
            df_dx[Q_BAR_P * nx + it] = -30.0 * ds_p * dln(p.ea_ds_p) / rp2 * x[Q_BAR_P];
            df_di[Q_BAR_P] = 45.0 / (2.0 * rp2 * kp);
            df_dx[Q_BAR_N * nx + Q_BAR_N] = -30.0 * ds_n / rn2;
            df_dx[Q_BAR_N * nx + it] = -30.0 * ds_n * dln(p.ea_ds_n) / rn2 * x[Q_BAR_N];
            df_di[Q_BAR_N] = -45.0 / (2.0 * rn2 * kn);
        }

        // Electrolyte.
        let de_factor = (-p.ea_de / (r * t)).exp();
        let faces = face_conductances(p, g);
        let secs = sections(p, g);
        let source = [-(1.0 - p.t_plus) / (fa * p.l_p), 0.0, (1.0 - p.t_plus) / (fa * p.l_n)];
        for k in 0..3 * np {
            let sec = secs[k / np];
            let scale = 1.0 / (sec.eps * sec.dx);
            let mut diffusion = 0.0;
            if k + 1 < 3 * np {
                diffusion += faces[k] * (c[k + 1] - c[k]);
            }
            if k > 0 {
                diffusion -= faces[k - 1] * (c[k] - c[k - 1]);
            }
            let row = C_E_START + k;
            rhs[row] = de_factor * diffusion * scale + source[k / np] * i / sec.eps;
            if derivs {
                let base = row * nx;
                if k + 1 < 3 * np {
                    df_dx[base + row + 1] += de_factor * faces[k] * scale;
                    df_dx[base + row] -= de_factor * faces[k] * scale;
                }
                if k > 0 {
                    df_dx[base + row - 1] += de_factor * faces[k - 1] * scale;
                    df_dx[base + row] -= de_factor * faces[k - 1] * scale;
                }
                df_dx[base + it] = de_factor * dln(p.ea_de) * diffusion * scale;
                df_di[row] = source[k / np] / sec.eps;
            }
        }

        // Surface stoichiometries.
        let dtp = p.delta_theta_p();
        let dtn = p.delta_theta_n();
        let theta_bar_n = anode_from_cathode(x[THETA_BAR_P], p);
        let corr_p = p.rp_p * i / (35.0 * ds_p * kp * p.cs_max_p);
        let corr_n = p.rp_n * i / (35.0 * ds_n * kn * p.cs_max_n);
        let mut theta_p = x[THETA_BAR_P] + 8.0 * p.rp_p * x[Q_BAR_P] / (35.0 * p.cs_max_p) + corr_p;
        let mut theta_n = theta_bar_n + 8.0 * p.rp_n * x[Q_BAR_N] / (35.0 * p.cs_max_n) - corr_n;
        let mut g_theta_p = grad();
        let mut g_theta_n = grad();
        if derivs {
            g_theta_p[THETA_BAR_P] = 1.0;
            g_theta_p[Q_BAR_P] = 8.0 * p.rp_p / (35.0 * p.cs_max_p);
            g_theta_p[it] = -corr_p * dln(p.ea_ds_p);
            g_theta_p[ii] = p.rp_p / (35.0 * ds_p * kp * p.cs_max_p);
            g_theta_n[THETA_BAR_P] = dtn / dtp;
            g_theta_n[Q_BAR_N] = 8.0 * p.rp_n / (35.0 * p.cs_max_n);
            g_theta_n[it] = corr_n * dln(p.ea_ds_n);
            g_theta_n[ii] = -p.rp_n / (35.0 * ds_n * kn * p.cs_max_n);
        }
        for (theta, gt, electrode) in [
            (&mut theta_p, &mut g_theta_p, "cathode"),
            (&mut theta_n, &mut g_theta_n, "anode"),
        ] {
            if !theta.is_finite() {
                return Err(ModelError::NonFinite("surface stoichiometry"));
            }
            if guard {
                let clipped = theta.clamp(GUARD_BAND, 1.0 - GUARD_BAND);
                if clipped != *theta {
                    *theta = clipped;
                    gt.iter_mut().for_each(|v| *v = 0.0);
                }
            } else if !(*theta > 0.0 && *theta < 1.0) {
                return Err(ModelError::Stoichiometry { electrode, value: *theta });
            }
        }

        // Open-circuit potentials.
        let u_p = ocp_positive(theta_p);
        let u_n = ocp_negative(theta_n);
        let (dup, dun) = (ocp_positive_slope(theta_p), ocp_negative_slope(theta_n));

        // Kinetic overpotentials.
        let inv_np = 1.0 / np as f64;
        let cbar_p = c[..np].iter().sum::<f64>() * inv_np;
        let cbar_n = c[2 * np..].iter().sum::<f64>() * inv_np;
        let two_rt_f = 2.0 * r * t / f;
        let overpotential = |k0: f64, ea_k: f64, cbar: f64, theta: f64, gt: &Grad, c_off: usize, sign: f64, l: f64, a: f64| {
            let kr = arrhenius(k0, ea_k, r, t);
            let gfun = cbar * theta * (1.0 - theta);
            let i0 = f * kr * gfun.sqrt();
            let s = 2.0 * p.area * l * a;
            let arg = sign * i / (s * i0);
            let eta = two_rt_f * arg.asinh();
            let mut geta = grad();
            if derivs {
                // d ln i0
                let mut dln_i0 = grad();
                dln_i0[it] += dln(ea_k);
                for k in 0..np {
                    dln_i0[C_E_START + c_off + k] += 0.5 * inv_np / cbar;
                }
                axpy(&mut dln_i0, 0.5 * (1.0 - 2.0 * theta) / (theta * (1.0 - theta)), gt);
                // d arg = sign dI / (s i0) - arg d ln i0
                let mut darg = grad();
                axpy(&mut darg, -arg, &dln_i0);
                darg[ii] += sign / (s * i0);
                let w = two_rt_f / (1.0 + arg * arg).sqrt();
                axpy(&mut geta, w, &darg);
                geta[it] += 2.0 * r / f * arg.asinh();
            }
            (eta, geta)
        };
        let (eta_p, g_eta_p) = overpotential(p.k0_p, p.ea_k_p, cbar_p, theta_p, &g_theta_p, 0, -1.0, p.l_p, g.a_p);
        let (eta_n, g_eta_n) = overpotential(p.k0_n, p.ea_k_n, cbar_n, theta_n, &g_theta_n, 2 * np, 1.0, p.l_n, g.a_n);

        // Electrolyte potential: concentration term plus ohmic drop.
        let (c_first, c_last) = (c[0], c[3 * np - 1]);
        let conc_coeff = two_rt_f * (1.0 - p.t_plus);
        let ln_ratio = (c_first / c_last).ln();
        let mut phi_sum = 0.0;
        let mut dphi_sum_dc = vec![0.0; 3 * np];
        for k in 0..3 * np {
            let j = k / np;
            let local = k % np + 1;
            let sec = secs[j];
            let weight = match j {
                0 => (2 * local - 1) as f64,
                1 => 2.0,
                _ => (2 * np - 2 * local + 1) as f64,
            };
            let w = sec.dx * weight / sec.eps.powf(sec.brug);
            let kappa = conductivity(c[k], t, p.ea_kappa, r);
            if !(kappa > 0.0) {
                return Err(ModelError::Conductivity { index: k, value: kappa });
            }
            phi_sum += w / kappa;
            if derivs {
                dphi_sum_dc[k] = -w * conductivity_slope(c[k], t, p.ea_kappa, r) / (kappa * kappa);
            }
        }
        let drop = -i * inv_np * 0.5 * phi_sum;
        let delta_phi_e = drop + conc_coeff * ln_ratio;
        let mut g_dphi = grad();
        if derivs {
            g_dphi[ii] = -inv_np * 0.5 * phi_sum;
            for k in 0..3 * np {
                g_dphi[C_E_START + k] += -i * inv_np * 0.5 * dphi_sum_dc[k];
            }
            // each 1/kappa scales with exp(Ea/(RT))
            g_dphi[it] += -i * inv_np * 0.5 * phi_sum * (-dln(p.ea_kappa));
            g_dphi[C_E_START] += conc_coeff / c_first;
            g_dphi[C_E_START + 3 * np - 1] -= conc_coeff / c_last;
            g_dphi[it] += 2.0 * r / f * (1.0 - p.t_plus) * ln_ratio;
        }

        let polarization = -i * p.r_sei + eta_p - eta_n + delta_phi_e;
        let voltage = u_p - u_n + polarization;
        let mut g_pol = grad();
        let mut g_v = grad();
        if derivs {
            g_pol[ii] -= p.r_sei;
            axpy(&mut g_pol, 1.0, &g_eta_p);
            axpy(&mut g_pol, -1.0, &g_eta_n);
            axpy(&mut g_pol, 1.0, &g_dphi);
            g_v.copy_from_slice(&g_pol);
            axpy(&mut g_v, dup, &g_theta_p);
            axpy(&mut g_v, -dun, &g_theta_n);
        }

        // Lumped thermal balance.
        let heat = i.abs() * polarization.abs();
        rhs[it] = (heat - (t - p.t_sink) / p.r_th) / p.c_th;
        if derivs {
            let mut g_heat = grad();
            axpy(&mut g_heat, i.abs() * sign0(polarization), &g_pol);
            g_heat[ii] += sign0(i) * polarization.abs();
            for k in 0..nx {
                df_dx[it * nx + k] = g_heat[k] / p.c_th;
            }
            df_dx[it * nx + it] -= 1.0 / (p.r_th * p.c_th);
            df_di[it] = g_heat[ii] / p.c_th;
        }

        let soc = 100.0 * (x[THETA_BAR_P] - p.theta0_p) / dtp;
        let mut dsoc_dx = Vec::new();
        if derivs {
            dsoc_dx = vec![0.0; nx];
            dsoc_dx[THETA_BAR_P] = 100.0 / dtp;
        }

        if rhs.iter().any(|v| !v.is_finite()) || !voltage.is_finite() {
            return Err(ModelError::NonFinite("cell right-hand side"));
        }

        let (dv_dx, dv_di) = if derivs {
            let dv_di = g_v[ii];
            g_v.truncate(nx);
            (g_v, dv_di)
        } else {
            (Vec::new(), 0.0)
        };

        Ok(CellLinearization {
            eval: CellEval {
                rhs,
                breakdown: VoltageBreakdown {
                    voltage,
                    u_p,
                    u_n,
                    eta_p,
                    eta_n,
                    delta_phi_e,
                    theta_p,
                    theta_n,
                },
                soc,
            },
            df_dx,
            df_di,
            dv_dx,
            dv_di,
            dsoc_dx,
        })
    }
}

fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> (CellParams, DerivedGeometry) {
        let p = CellParams::reference();
        let g = derive_geometry(&p).unwrap();
        (p, g)
    }

    fn charging_state(p: &CellParams) -> Vec<f64> {
        let mut s = CellState::at_rest(p, 42.0, 301.3, 1000.0);
        s.q_bar_p = -1.5e8;
        s.q_bar_n = 2.0e7;
        s.c_e = (0..3 * p.volumes).map(|k| 1080.0 - 35.0 * k as f64).collect();
        s.to_vec()
    }

    #[test]
    fn printed_fits_at_frozen_points() {
        assert!((ocp_positive(0.0) - 4.571).abs() < 1e-15);
        // 18.45 - 40.7 + 20.94 + 8.07 - 7.837 + 0.02414 + 4.571
        assert!((ocp_positive(1.0) - 3.51814).abs() < 1e-12);
        // 0.13304 / 1.70355
        assert!((ocp_negative(1.0) - 0.0780957).abs() < 1e-7);
        assert!((conductivity(1000.0, 300.0, 0.0, 8.314) - 0.9329).abs() < 1e-12);
    }

    #[test]
    fn harmonic_mean_values() {
        assert_eq!(harmonic_mean(2.0, 2.0, 1.0, 1.0), 2.0);
        assert!((harmonic_mean(1.0, 3.0, 1.0, 1.0) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn geometry_matches_hand_evaluation() {
        let (p, g) = reference();
        let charge = 7.5 * 3600.0;
        let hand_p = charge / ((0.90 - 0.2616) * 0.28 * 96485.33212 * 54e-6 * 48580.0);
        let hand_n = charge / ((0.80 - 0.03) * 0.28 * 96485.33212 * 74e-6 * 31920.0);
        assert!((g.eps_act_p - hand_p).abs() < 1e-12 * hand_p);
        assert!((g.eps_act_n - hand_n).abs() < 1e-12 * hand_n);
        assert!((g.a_p - 3.0 * hand_p / 6.5e-6).abs() < 1e-9 * g.a_p);
        assert_eq!(g.dx_s, p.l_s / 2.0);
    }

    #[test]
    fn geometry_is_linear_in_capacity() {
        let (mut p, g) = reference();
        p.capacity_ah *= 2.0;
        let g2 = derive_geometry(&p).unwrap();
        assert!((g2.eps_act_p - 2.0 * g.eps_act_p).abs() < 1e-14);
        assert!((g2.eps_act_n - 2.0 * g.eps_act_n).abs() < 1e-14);
    }

    #[test]
    fn inconsistent_parameters_are_rejected() {
        let (mut p, _) = reference();
        p.theta100_p = p.theta0_p;
        assert!(matches!(derive_geometry(&p), Err(ModelError::Parameter { .. })));
        let (mut p, _) = reference();
        p.l_p = -1.0;
        assert!(derive_geometry(&p).is_err());
        let (mut p, _) = reference();
        p.volumes = 0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn solid_rates_match_hand_evaluation() {
        let (p, g) = reference();
        let x = charging_state(&p);
        let i = -7.5;
        let r = solid_phase_rates(&x, i, &p, &g).unwrap();
        let t = x[temperature_index(p.volumes)];
        let fa = p.faraday * p.area;
        let ds_p = p.ds0_p * (-p.ea_ds_p / (p.r_gas * t)).exp();
        let ds_n = p.ds0_n * (-p.ea_ds_n / (p.r_gas * t)).exp();
        let e0 = 3.0 * i / (g.a_p * p.rp_p * p.l_p * fa * p.cs_max_p);
        let e1 = -30.0 * ds_p / (p.rp_p * p.rp_p) * x[1] + 45.0 * i / (2.0 * p.rp_p * p.rp_p * fa * p.l_p * g.a_p);
        let e2 = -30.0 * ds_n / (p.rp_n * p.rp_n) * x[2] - 45.0 * i / (2.0 * p.rp_n * p.rp_n * fa * p.l_n * g.a_n);
        for (a, b) in r.iter().zip([e0, e1, e2]) {
            assert!((a - b).abs() <= 1e-12 * b.abs());
        }
        assert!(r[0] < 0.0);
    }

    #[test]
    fn one_c_sweeps_the_window_in_an_hour() {
        let (p, g) = reference();
        let x = CellState::at_rest(&p, 50.0, 298.15, 1000.0).to_vec();
        let r = solid_phase_rates(&x, -p.one_c_current(), &p, &g).unwrap();
        assert!((r[0] * 3600.0 - p.delta_theta_p()).abs() < 1e-12);
    }

    #[test]
    fn zero_activation_energy_removes_temperature_dependence() {
        let (mut p, g) = reference();
        p.ea_ds_p = 0.0;
        let mut x = charging_state(&p);
        let a = solid_phase_rates(&x, 0.0, &p, &g).unwrap();
        x[temperature_index(p.volumes)] = 350.0;
        let b = solid_phase_rates(&x, 0.0, &p, &g).unwrap();
        assert_eq!(a[1], b[1]);
        assert!((a[1] + 30.0 * p.ds0_p / (p.rp_p * p.rp_p) * x[1]).abs() < 1e-9 * a[1].abs());
    }

    #[test]
    fn surface_stoichiometry_rest_and_sign() {
        let (p, g) = reference();
        let x = CellState::at_rest(&p, 30.0, 298.15, 1000.0).to_vec();
        let (tp, tn) = surface_stoichiometries(&x, 0.0, &p, &g).unwrap();
        assert_eq!(tp, x[0]);
        assert_eq!(tn, anode_from_cathode(x[0], &p));
        let (cp, cn) = surface_stoichiometries(&x, -10.0, &p, &g).unwrap();
        assert!(cp < tp && cn > tn);
    }

    #[test]
    fn window_maps() {
        let (p, _) = reference();
        assert_eq!(anode_from_cathode(p.theta0_p, &p), p.theta0_n);
        assert!((anode_from_cathode(p.theta100_p, &p) - p.theta100_n).abs() < 1e-15);
        let mid = 0.5 * (p.theta0_p + p.theta100_p);
        assert!((anode_from_cathode(mid, &p) - 0.5 * (p.theta0_n + p.theta100_n)).abs() < 1e-15);
        assert_eq!(soc_of(p.theta0_n, &p), 0.0);
        assert!((soc_of(p.theta100_n, &p) - 100.0).abs() < 1e-12);
        assert!((soc_of(0.5 * (p.theta0_n + p.theta100_n), &p) - 50.0).abs() < 1e-12);
    }

    #[test]
    fn rest_voltage_is_open_circuit() {
        let (p, g) = reference();
        let x = CellState::at_rest(&p, 64.0, 298.15, 1000.0).to_vec();
        let v = terminal_voltage(&x, 0.0, &p, &g).unwrap();
        assert_eq!(v.voltage, v.u_p - v.u_n);
        assert_eq!(v.eta_p, 0.0);
        assert_eq!(v.delta_phi_e, 0.0);
    }

    #[test]
    fn fully_charged_open_circuit_voltage() {
        let (p, g) = reference();
        let x = CellState::at_rest(&p, 100.0, 298.15, 1000.0).to_vec();
        let v = terminal_voltage(&x, 0.0, &p, &g).unwrap();
        assert!((v.voltage - 4.15).abs() < 2e-3, "{}", v.voltage);
    }

    #[test]
    fn thermal_balance() {
        let (p, _) = reference();
        assert_eq!(thermal_rate(p.t_sink, 0.0, 4.0, 4.0, 0.0, &p), 0.0);
        assert!(thermal_rate(p.t_sink + 3.0, 0.0, 4.0, 4.0, 0.0, &p) < 0.0);
        let rate = thermal_rate(p.t_sink, 2.0, 4.5, 4.0, 0.0, &p);
        assert!((rate - 1.0 / 4186.0).abs() < 1e-18);
    }

    #[test]
    fn rest_is_fixed_point() {
        let (p, g) = reference();
        let x = CellState::at_rest(&p, 50.0, p.t_sink, 1000.0).to_vec();
        let r = cell_rhs(&x, 0.0, &p, &g).unwrap();
        assert_eq!(r.len(), 4 + 3 * p.volumes);
        assert!(r.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn state_length_follows_volumes() {
        let (mut p, _) = reference();
        for volumes in 1..6 {
            p.volumes = volumes;
            let g = derive_geometry(&p).unwrap();
            let x = CellState::at_rest(&p, 50.0, 300.0, 1000.0).to_vec();
            assert_eq!(cell_rhs(&x, -3.0, &p, &g).unwrap().len(), 4 + 3 * volumes);
        }
    }

    #[test]
    fn electrolyte_uniform_without_current() {
        let (p, g) = reference();
        let x = CellState::at_rest(&p, 50.0, 310.0, 900.0).to_vec();
        assert!(electrolyte_rates(&x, 0.0, &p, &g).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn domain_errors() {
        let (p, g) = reference();
        let mut x = CellState::at_rest(&p, 50.0, 300.0, 1000.0).to_vec();
        x[4] = -1.0;
        assert!(matches!(electrolyte_rates(&x, 0.0, &p, &g), Err(ModelError::Concentration { index: 1, .. })));
        let mut x = CellState::at_rest(&p, 50.0, 300.0, 1000.0).to_vec();
        x[temperature_index(p.volumes)] = 0.0;
        assert!(matches!(solid_phase_rates(&x, 0.0, &p, &g), Err(ModelError::Temperature(_))));
        let x = CellState::at_rest(&p, 50.0, 300.0, 1000.0).to_vec();
        assert!(matches!(terminal_voltage(&x, -1e6, &p, &g), Err(ModelError::Stoichiometry { .. })));
        let cell = Cell::new(p.clone()).unwrap();
        let guarded = cell.evaluate(&x, -1e6, true).unwrap();
        assert!(guarded.breakdown.theta_p >= GUARD_BAND);
    }

    #[test]
    fn fused_evaluation_matches_component_operations() {
        let (p, g) = reference();
        let cell = Cell::new(p.clone()).unwrap();
        let x = charging_state(&p);
        for i in [-11.0, -7.5, 0.0, 3.0] {
            let rhs = cell_rhs(&x, i, &p, &g).unwrap();
            let solid = solid_phase_rates(&x, i, &p, &g).unwrap();
            let elec = electrolyte_rates(&x, i, &p, &g).unwrap();
            let volt = terminal_voltage(&x, i, &p, &g).unwrap();
            let t = x[temperature_index(p.volumes)];
            let mut expected = solid.to_vec();
            expected.extend(elec);
            expected.push(thermal_rate(t, i, volt.voltage, volt.u_p, volt.u_n, &p));
            assert_eq!(rhs, expected);
            let fused = cell.evaluate(&x, i, false).unwrap();
            for (a, b) in fused.rhs.iter().zip(&expected) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300));
            }
            let (tp, tn) = surface_stoichiometries(&x, i, &p, &g).unwrap();
            assert!((tp - volt.theta_p).abs() < 1e-15 && (tn - volt.theta_n).abs() < 1e-15);
        }
    }

    #[test]
    fn analytic_derivatives_match_central_differences() {
        let (p, _) = reference();
        let cell = Cell::new(p.clone()).unwrap();
        let x = charging_state(&p);
        let nx = x.len();
        let i = -9.0;
        let lin = cell.linearize(&x, i, false).unwrap();
        let scale = |k: usize| if k == Q_BAR_P || k == Q_BAR_N { 1e8 } else if (C_E_START..nx - 1).contains(&k) { 1000.0 } else if k == nx - 1 { 300.0 } else { 1.0 };
        for k in 0..=nx {
            let h = 1e-4 * if k == nx { 10.0 } else { scale(k) };
            let (mut xp, mut xm) = (x.clone(), x.clone());
            let (mut ip, mut im) = (i, i);
            if k == nx {
                ip += h;
                im -= h;
            } else {
                xp[k] += h;
                xm[k] -= h;
            }
            let ep = cell.evaluate(&xp, ip, false).unwrap();
            let em = cell.evaluate(&xm, im, false).unwrap();
            let dv = (ep.breakdown.voltage - em.breakdown.voltage) / (2.0 * h);
            let av = if k == nx { lin.dv_di } else { lin.dv_dx[k] };
            assert!((dv - av).abs() <= 1e-5 * av.abs().max(1e-12 / scale(k.min(nx - 1))), "dV/d{k}: {av} vs {dv}");
            for r in 0..nx {
                let fd = (ep.rhs[r] - em.rhs[r]) / (2.0 * h);
                let an = if k == nx { lin.df_di[r] } else { lin.df_dx[r * nx + k] };
                let floor = 1e-9 * lin.eval.rhs[r].abs().max(1e-12) / if k == nx { 10.0 } else { scale(k) };
                assert!((fd - an).abs() <= 1e-5 * an.abs().max(floor), "df{r}/d{k}: {an} vs {fd}");
            }
        }
    }
}
