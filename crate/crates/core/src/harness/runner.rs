//! Closed-loop execution: controller step, one sample of the nonlinear
//! plant, log.

use log::{debug, info};

use super::config::ScenarioConfig;
use super::population::{perturb_plant, sample_population, Population};
use crate::controllers::{
    CccvController, Controller, ControllerKind, Diagnostics, NmpcController, SmpcController, StepContext,
};
use crate::dae::{consistent_init, output, simulate, IntegratorConfig};
use crate::error::{Error, Result};
use crate::pack_model::{apply_completion, Completion, ModuleDrive, Pack, PackConfig, OUTPUTS_PER_CELL, Y_T, Y_V};

/// One logged sample. Outputs and currents are taken after the new input
/// has been applied at `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub t: f64,
    /// Stacked `[V, T, I, SOC]` per cell, module-major.
    pub y: Vec<f64>,
    /// Outputs at `t` under the input of the previous sample.
    pub y_before: Vec<f64>,
    /// Bypass current per module; for voltage-clamped modules the value
    /// implied by the current balance.
    pub ib: Vec<f64>,
    pub drives: Vec<ModuleDrive>,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    /// Time at which every module was complete, if reached.
    pub charging_time: Option<f64>,
    /// Peaks of the sampled outputs `y(t_k)`, taken with the input applied at `t_k`.
    pub peak_temperature: f64,
    pub peak_voltage: f64,
    /// Peaks including the outputs just before each input switch.
    pub peak_temperature_held: f64,
    pub peak_voltage_held: f64,
    pub mean_step_time: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub controller: ControllerKind,
    pub n_modules: usize,
    pub m_parallel: usize,
    pub i_ch: f64,
    pub records: Vec<Record>,
    pub completion: Completion,
    pub summary: Summary,
}

impl RunLog {
    pub fn n_cells(&self) -> usize {
        self.n_modules * self.m_parallel
    }
}

pub fn build_pack(scenario: &ScenarioConfig) -> Result<(Pack, Population)> {
    let n_cells = scenario.n_modules * scenario.m_parallel;
    let pop = sample_population(&scenario.template(), &scenario.population, n_cells, scenario.seed);
    let cfg = PackConfig {
        n_modules: scenario.n_modules,
        m_parallel: scenario.m_parallel,
        i_ch: scenario.i_ch(),
        cells: pop.params.clone(),
    };
    Ok((Pack::new(cfg)?, pop))
}

pub fn make_controller(scenario: &ScenarioConfig, kind: ControllerKind) -> Result<Box<dyn Controller>> {
    Ok(match kind {
        ControllerKind::Smpc => Box::new(SmpcController::new(scenario.mpc.clone(), scenario.i_1c())?),
        ControllerKind::Nmpc => Box::new(NmpcController::new(scenario.mpc.clone(), scenario.i_1c())?),
        ControllerKind::Cccv => Box::new(CccvController::new(scenario.cccv_config())?),
    })
}

/// Run the scenario with its configured controller.
pub fn run_closed_loop(scenario: &ScenarioConfig) -> Result<RunLog> {
    run_with_controller(scenario, scenario.controller)
}

pub fn run_with_controller(scenario: &ScenarioConfig, kind: ControllerKind) -> Result<RunLog> {
    scenario.validate()?;
    let (pack, pop) = build_pack(scenario)?;
    let x0 = pack.pack_state(&pop.states);
    let mut controller = make_controller(scenario, kind)?;
    run_loop(pack, x0, controller.as_mut(), kind, scenario, None)
}

/// Closed loop from an explicit pack and state. `max_steps` caps the
/// number of controller steps in addition to `scenario.max_time`.
pub fn run_loop(
    mut pack: Pack,
    x0: Vec<f64>,
    controller: &mut dyn Controller,
    kind: ControllerKind,
    scenario: &ScenarioConfig,
    max_steps: Option<usize>,
) -> Result<RunLog> {
    let integ: &IntegratorConfig = &scenario.integrator;
    let n = pack.n_modules();
    let i_ch = pack.config.i_ch;
    let soc_driven = kind != ControllerKind::Cccv;
    let mut completion = Completion::new(n);
    let mut records: Vec<Record> = Vec::new();

    // The plant differs from the controllers' model only under `plant_mismatch`.
    let mut plant = if scenario.plant_mismatch > 0.0 {
        let cells = perturb_plant(&pack.config.cells, scenario.plant_mismatch, scenario.seed);
        Pack::new(PackConfig { cells, ..pack.config.clone() })?
    } else {
        pack.clone()
    };

    let mut x = x0;
    let mut u = vec![i_ch; n];
    pack.drives = vec![ModuleDrive::Current; n];
    plant.drives = pack.drives.clone();
    let mut z = consistent_init(&plant, &x, &u, &pack.default_currents(&u), integ)?;
    let mut y = output(&plant, &x, &u, &z)?;
    let mut t = 0.0;
    let mut steps = 0;

    loop {
        let pins = if soc_driven {
            let (pins, next) = apply_completion(&y, &completion, &pack.config, scenario.mpc.soc_target, scenario.mpc.soc_tol, t);
            completion = next;
            pins
        } else {
            vec![None; n]
        };
        let out_of_time = t >= scenario.max_time - 1e-9 || max_steps.is_some_and(|s| steps >= s);
        if completion.all_done() || out_of_time {
            if completion.all_done() {
                u = vec![i_ch; n];
                pack.drives = vec![ModuleDrive::Current; n];
                plant.drives = pack.drives.clone();
            }
            z = consistent_init(&plant, &x, &u, &z, integ)?;
            let y_now = output(&plant, &x, &u, &z)?;
            records.push(make_record(&plant, t, &x, &z, &u, y_now, &y, Diagnostics::default()));
            break;
        }

        let ctx = StepContext { pack: &pack, t, x: &x, z: &z, y: &y, pins: &pins, integrator: integ };
        let out = controller.step(&ctx)?;
        if out.u.len() != n || out.drives.len() != n {
            return Err(Error::Controller(format!("{} returned a command of the wrong size", controller.name())));
        }
        u = out.u;
        for (i, pin) in pins.iter().enumerate() {
            if let Some(v) = pin {
                u[i] = *v;
            }
        }
        pack.drives = out.drives;
        plant.drives = pack.drives.clone();
        if let Some(done) = &out.done {
            for (i, d) in done.iter().enumerate() {
                if *d && !completion.done[i] {
                    completion.done[i] = true;
                    completion.times[i] = Some(t);
                }
            }
            if completion.all_done() {
                continue;
            }
        }
        z = consistent_init(&plant, &x, &u, &z, integ)?;
        let y_now = output(&plant, &x, &u, &z)?;
        debug!("t = {t:.0} s, u = {u:?}, wall {:.3} s", out.diagnostics.wall_time);
        records.push(make_record(&plant, t, &x, &z, &u, y_now, &y, out.diagnostics));

        let traj = simulate(&plant, &x, &z, &u, 1, integ)?;
        x = traj.x[1].clone();
        z = traj.z[1].clone();
        y = traj.y[1].clone();
        steps += 1;
        t = steps as f64 * integ.ts;
    }

    let summary = summarize(&records, &completion);
    info!(
        "{}: {} steps, charging time {:?} s, peak T {:.2} K, peak V {:.4} V (held {:.4} V)",
        kind.as_str(),
        summary.steps,
        summary.charging_time,
        summary.peak_temperature,
        summary.peak_voltage,
        summary.peak_voltage_held
    );
    Ok(RunLog {
        controller: kind,
        n_modules: n,
        m_parallel: pack.m_parallel(),
        i_ch,
        records,
        completion,
        summary,
    })
}

#[allow(clippy::too_many_arguments)]
fn make_record(
    pack: &Pack,
    t: f64,
    x: &[f64],
    z: &[f64],
    u: &[f64],
    y: Vec<f64>,
    y_before: &[f64],
    diagnostics: Diagnostics,
) -> Record {
    let m = pack.m_parallel();
    let ib = (0..pack.n_modules())
        .map(|i| match pack.drives[i] {
            ModuleDrive::Current => u[i],
            ModuleDrive::VoltageClamp(_) => pack.config.i_ch + z[i * m..(i + 1) * m].iter().sum::<f64>(),
        })
        .collect();
    Record { t, y, y_before: y_before.to_vec(), ib, drives: pack.drives.clone(), x: x.to_vec(), z: z.to_vec(), diagnostics }
}

fn summarize(records: &[Record], completion: &Completion) -> Summary {
    let mut s = Summary { steps: records.len().saturating_sub(1), ..Summary::default() };
    let peak = |rows: &mut dyn Iterator<Item = &[f64]>, col: usize| {
        rows.flat_map(|y| y.chunks(OUTPUTS_PER_CELL).map(move |c| c[col])).fold(f64::NEG_INFINITY, f64::max)
    };
    s.peak_voltage = peak(&mut records.iter().map(|r| r.y.as_slice()), Y_V);
    s.peak_temperature = peak(&mut records.iter().map(|r| r.y.as_slice()), Y_T);
    let held = |col: usize| peak(&mut records.iter().flat_map(|r| [r.y.as_slice(), r.y_before.as_slice()]), col);
    s.peak_voltage_held = held(Y_V);
    s.peak_temperature_held = held(Y_T);
    let stepped: Vec<f64> = records.iter().take(s.steps).map(|r| r.diagnostics.wall_time).collect();
    if !stepped.is_empty() {
        s.mean_step_time = stepped.iter().sum::<f64>() / stepped.len() as f64;
    }
    s.charging_time = if completion.all_done() { completion.charging_time() } else { None };
    s
}

/// Largest per-cell gap of each output `[V, T, I, SOC]` between two logs
/// over their common samples.
pub fn output_gap(a: &RunLog, b: &RunLog) -> [f64; OUTPUTS_PER_CELL] {
    let mut gap = [0.0_f64; OUTPUTS_PER_CELL];
    for (ra, rb) in a.records.iter().zip(&b.records) {
        for (k, (ya, yb)) in ra.y.iter().zip(&rb.y).enumerate() {
            let g = &mut gap[k % OUTPUTS_PER_CELL];
            *g = g.max((ya - yb).abs());
        }
    }
    gap
}
