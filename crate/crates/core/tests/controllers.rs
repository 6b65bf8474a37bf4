use nalgebra::{DMatrix, DVector};
use packcharge::cell_model::{CellParams, CellState};
use packcharge::controllers::cccv::{cccv_step, next_phase};
use packcharge::controllers::nmpc::solve_sqp;
use packcharge::controllers::smpc::{linearize_and_solve, MpcProblem};
use packcharge::controllers::{
    CccvConfig, Controller, MpcConfig, NominalPlan, NmpcController, Phase, PerOutput, SmpcController, StepContext,
};
use packcharge::dae::{consistent_init, output, simulate, IntegratorConfig};
use packcharge::harness::{build_pack, ScenarioConfig};
use packcharge::pack_model::{ModuleDrive, Pack, PackConfig, OUTPUTS_PER_CELL, Y_V};
use packcharge::qp::condense::{Limits, Weights};
use packcharge::toy_systems::LinearDae;
use proptest::prelude::*;

struct Point {
    pack: Pack,
    x: Vec<f64>,
    z: Vec<f64>,
    y: Vec<f64>,
    integ: IntegratorConfig,
}

impl Point {
    fn ctx<'a>(&'a self, pins: &'a [Option<f64>]) -> StepContext<'a> {
        StepContext { pack: &self.pack, t: 0.0, x: &self.x, z: &self.z, y: &self.y, pins, integrator: &self.integ }
    }
}

fn at_rest(pack: Pack, socs: &[f64]) -> Point {
    let states: Vec<CellState> = pack
        .config
        .cells
        .iter()
        .zip(socs)
        .map(|(p, s)| CellState::at_rest(p, *s, p.t_sink, 1000.0))
        .collect();
    let x = pack.pack_state(&states);
    let integ = IntegratorConfig::default();
    let u = vec![0.0; pack.n_modules()];
    let z = consistent_init(&pack, &x, &u, &pack.default_currents(&u), &integ).unwrap();
    let y = output(&pack, &x, &u, &z).unwrap();
    Point { pack, x, z, y, integ }
}

fn scenario_point(scenario: &ScenarioConfig) -> Point {
    let (pack, pop) = build_pack(scenario).unwrap();
    let socs = pop.soc0.clone();
    at_rest(pack, &socs)
}

#[test]
fn fully_pinned_pack_bypasses_everything() {
    let scenario = ScenarioConfig::default();
    let pt = scenario_point(&scenario);
    let i_ch = pt.pack.config.i_ch;
    let pins = vec![Some(i_ch); 2];
    for mut c in [
        Box::new(SmpcController::new(scenario.mpc.clone(), scenario.i_1c()).unwrap()) as Box<dyn Controller>,
        Box::new(NmpcController::new(scenario.mpc.clone(), scenario.i_1c()).unwrap()),
    ] {
        let out = c.step(&pt.ctx(&pins)).unwrap();
        assert_eq!(out.u, vec![i_ch; 2], "{}", c.name());
        assert_eq!(out.drives, vec![ModuleDrive::Current; 2]);
    }
}

#[test]
fn without_soc_weight_the_zero_plan_is_kept() {
    let mut scenario = ScenarioConfig { i_ch_c_rate: 1.0, ..ScenarioConfig::default() };
    scenario.mpc.q.soc = 0.0;
    let pt = scenario_point(&scenario);
    let mut c = SmpcController::new(scenario.mpc.clone(), scenario.i_1c()).unwrap();
    let out = c.step(&pt.ctx(&[None, None])).unwrap();
    assert!(out.diagnostics.max_slack == 0.0);
    for u in out.u {
        assert!(u.abs() <= 1e-6, "bypass {u}");
    }
}

#[test]
fn single_cell_near_voltage_limit_matches_grid_search() {
    let cell = CellParams::reference();
    let i_ch = 1.5 * cell.one_c_current();
    let pt = at_rest(Pack::new(PackConfig::uniform(1, 1, i_ch, cell.clone())).unwrap(), &[88.0]);
    let cfg = MpcConfig { horizon: 1, ..MpcConfig::default() };
    let problem = MpcProblem::new(&cfg, &pt.pack, cell.one_c_current());
    let plan = NominalPlan::constant(&[0.0], 1);
    let nominal = simulate(&pt.pack, &pt.x, &pt.z, &plan.u_bar, 1, &pt.integ).unwrap();
    assert!(nominal.y[1][Y_V] > 4.2, "full current must cross the limit, V = {}", nominal.y[1][Y_V]);

    let lin = linearize_and_solve(&pt.ctx(&[None]), &plan, &problem, &cfg, None).unwrap();
    assert!(lin.ok());
    let u_qp = lin.u_star()[0];
    let predicted = |u: f64| -> Vec<f64> {
        let b = &lin.bundle;
        (0..b.y_bar.len()).map(|r| b.y_bar[r] + b.pi_y[(r, 0)] * (u - plan.u_bar[0])).collect()
    };
    let cost = |u: f64| problem.cost(&predicted(u), &[u], &plan.u_prev);
    let n = 40_000;
    let (u_grid, c_grid) = (0..=n)
        .map(|k| i_ch * k as f64 / n as f64)
        .map(|u| (u, cost(u)))
        .fold((0.0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
    assert!(u_qp > 0.0, "current should taper");
    assert!((u_qp - u_grid).abs() <= 2.0 * i_ch / n as f64, "QP {u_qp} vs grid {u_grid}");
    assert!(cost(u_qp) <= c_grid + 1e-9 * c_grid.abs());
    assert!(predicted(u_qp)[OUTPUTS_PER_CELL + Y_V] <= 4.2 + 1e-6);
}

fn lq_system() -> LinearDae {
    LinearDae {
        a: DMatrix::from_row_slice(2, 2, &[-0.3, 0.2, 0.0, -0.6]),
        b: DMatrix::from_row_slice(2, 1, &[1.0, 0.5]),
        f: DMatrix::from_row_slice(2, 1, &[0.1, 0.0]),
        c: DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
        d: DMatrix::from_row_slice(1, 1, &[0.2]),
    }
}

#[test]
fn sqp_on_a_linear_quadratic_problem_takes_one_step() {
    let sys = lq_system();
    let integ = IntegratorConfig { ts: 0.5, substeps: 4, ..IntegratorConfig::default() };
    let h = 3;
    let x0 = vec![0.4, -0.2];
    let z0 = vec![0.6 + 0.2 * 0.3];
    let y0 = vec![0.4, -0.2, z0[0]];
    let q = vec![1.0, 0.5, 0.2];
    let (r, r_reg) = (0.1, 0.05);
    let y_ref = vec![1.0, -0.5, 0.3];
    let problem = MpcProblem {
        weights: Weights { q: q.clone(), r: vec![r], r_reg: vec![r_reg], slack: vec![1e3; 3] },
        limits: Limits { u_lb: vec![-50.0], u_ub: vec![50.0], y_lb: vec![-100.0; 3], y_ub: vec![100.0; 3] },
        y_ref: y_ref.clone(),
        u_ref: vec![0.0],
    };
    let cfg = MpcConfig { horizon: h, ..MpcConfig::default() };
    let ctx = StepContext { pack: &sys, t: 0.0, x: &x0, z: &z0, y: &y0, pins: &[None], integrator: &integ };
    let plan = NominalPlan { u_bar: vec![0.3; h], u_prev: vec![0.3] };
    let res = solve_sqp(&ctx, &plan, &problem, &cfg, &mut None).unwrap();
    assert!(res.converged);
    assert_eq!(res.cost_history.len(), 2, "one accepted step: {:?}", res.cost_history);

    // Oracle: normal equations of the unconstrained quadratic built from
    // unit-input simulations of the linear plant.
    let sim = |u: &[f64]| -> DVector<f64> {
        let t = simulate(&sys, &x0, &z0, u, h, &integ).unwrap();
        DVector::from_iterator((h + 1) * 3, t.y.iter().flatten().copied())
    };
    let free = sim(&vec![0.0; h]);
    let g = DMatrix::from_fn((h + 1) * 3, h, |row, col| {
        let mut e = vec![0.0; h];
        e[col] = 1.0;
        sim(&e)[row] - free[row]
    });
    let qd = DMatrix::from_diagonal(&DVector::from_fn((h + 1) * 3, |row, _| q[row % 3]));
    let yr = DVector::from_fn((h + 1) * 3, |row, _| y_ref[row % 3]);
    let mut diff = DMatrix::zeros(h, h);
    for j in 0..h {
        diff[(j, j)] = 1.0;
        if j > 0 {
            diff[(j, j - 1)] = -1.0;
        }
    }
    let lhs = g.transpose() * &qd * &g + DMatrix::identity(h, h) * r + diff.transpose() * &diff * r_reg;
    let mut rhs = g.transpose() * &qd * (&yr - &free);
    rhs[0] += r_reg * plan.u_prev[0];
    let u_opt = lhs.lu().solve(&rhs).unwrap();
    for j in 0..h {
        assert!((res.u[j] - u_opt[j]).abs() < 1e-6, "u[{j}] = {} vs {}", res.u[j], u_opt[j]);
    }
}

#[test]
fn sqp_from_the_linear_solution_decreases_the_true_cost() {
    let scenario = ScenarioConfig::default();
    let (pack, pop) = build_pack(&scenario).unwrap();
    let socs: Vec<f64> = pop.soc0.iter().map(|s| s + 35.0).collect();
    let pt = at_rest(pack, &socs);
    let cfg = scenario.mpc.clone();
    let problem = MpcProblem::new(&cfg, &pt.pack, scenario.i_1c());
    let pins = [None, None];
    let start = NominalPlan::constant(&[0.0, 0.0], cfg.horizon);
    let lin = linearize_and_solve(&pt.ctx(&pins), &start, &problem, &cfg, None).unwrap();
    let plan = NominalPlan { u_bar: lin.u_star(), u_prev: start.u_prev.clone() };
    let res = solve_sqp(&pt.ctx(&pins), &plan, &problem, &cfg, &mut None).unwrap();
    assert!(res.converged);
    for w in res.cost_history.windows(2) {
        assert!(w[1] <= w[0], "{:?}", res.cost_history);
    }
    assert!(res.u.iter().all(|u| (-1e-6..=pt.pack.config.i_ch + 1e-6).contains(u)));
}

#[test]
fn receding_update_duplicates_the_last_block() {
    let plan = NominalPlan::shifted(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 2);
    assert_eq!(plan.u_bar, vec![3.0, 4.0, 5.0, 6.0, 5.0, 6.0]);
    assert_eq!(plan.u_prev, vec![1.0, 2.0]);
    let mut p = NominalPlan::constant(&[1.0, 2.0], 3);
    p.apply_pins(&[None, Some(9.0)]);
    assert_eq!(p.u_bar, vec![1.0, 9.0, 1.0, 9.0, 1.0, 9.0]);
}

#[test]
fn smpc_plan_advances_by_one_block() {
    let scenario = ScenarioConfig::default();
    let pt = scenario_point(&scenario);
    let mut c = SmpcController::new(scenario.mpc.clone(), scenario.i_1c()).unwrap();
    let out = c.step(&pt.ctx(&[None, None])).unwrap();
    let plan = c.plan().unwrap();
    assert_eq!(plan.u_bar.len(), scenario.mpc.horizon * 2);
    assert_eq!(plan.u_prev, out.u);
    let h = plan.u_bar.len();
    assert_eq!(plan.u_bar[h - 2..], plan.u_bar[h - 4..h - 2]);
}

fn cccv_cfg() -> CccvConfig {
    CccvConfig::standard(15.0, 2, 7.5)
}

fn stacked(cells: &[(f64, f64)]) -> Vec<f64> {
    cells.iter().flat_map(|(v, i)| [*v, 298.15, *i, 50.0]).collect()
}

#[test]
fn cccv_enters_cv_immediately_above_threshold() {
    let y = stacked(&[(4.16, -7.5), (4.16, -7.5), (4.0, -7.5), (4.0, -7.5)]);
    let (u, drives, phases) = cccv_step(&y, &[Phase::Cc, Phase::Cc], &cccv_cfg(), 2, 22.5);
    assert_eq!(phases, vec![Phase::Cv, Phase::Cc]);
    assert_eq!(drives, vec![ModuleDrive::VoltageClamp(4.15), ModuleDrive::Current]);
    assert_eq!(u, vec![7.5, 7.5]);
}

#[test]
fn cccv_done_modules_receive_no_current() {
    let y = stacked(&[(4.15, -0.5), (4.15, -0.5), (4.15, -0.6), (4.15, -0.7)]);
    let (u, drives, phases) = cccv_step(&y, &[Phase::Cv, Phase::Cv], &cccv_cfg(), 2, 22.5);
    assert_eq!(phases, vec![Phase::Done, Phase::Done]);
    assert_eq!(u, vec![22.5, 22.5]);
    assert_eq!(drives, vec![ModuleDrive::Current; 2]);
}

#[test]
fn cccv_threshold_is_inclusive() {
    let cfg = cccv_cfg();
    assert_eq!(next_phase(Phase::Cv, 4.15, -cfg.i_th, &cfg), Phase::Done);
    assert_eq!(next_phase(Phase::Cv, 4.15, -cfg.i_th * 1.0001, &cfg), Phase::Cv);
    assert_eq!(next_phase(Phase::Cc, cfg.v_th, -15.0, &cfg), Phase::Cv);
}

#[test]
fn mpc_config_weights_and_limits() {
    let cfg = MpcConfig::default();
    assert_eq!(cfg.r_reg(), cfg.r);
    let lim = cfg.limits(2, 1, 7.5, 22.5);
    assert_eq!(lim.y_lb[2], -1.5 * 7.5);
    assert_eq!(lim.u_ub, vec![22.5]);
    let bad = MpcConfig { y_min: PerOutput { v: 5.0, ..cfg.y_min }, ..cfg.clone() };
    assert!(bad.validate().is_err());
}

fn rank(p: Phase) -> u8 {
    match p {
        Phase::Cc => 0,
        Phase::Cv => 1,
        Phase::Done => 2,
    }
}

proptest! {
    #[test]
    fn cccv_phases_never_reverse(steps in prop::collection::vec((3.5f64..4.3, -20.0f64..0.0), 1..40)) {
        let cfg = cccv_cfg();
        let mut phase = Phase::Cc;
        let mut changes = 0;
        for (v, i) in steps {
            let next = next_phase(phase, v, i, &cfg);
            prop_assert!(rank(next) >= rank(phase));
            prop_assert!(rank(next) - rank(phase) <= 1);
            if next != phase {
                changes += 1;
            }
            phase = next;
        }
        prop_assert!(changes <= 2);
    }
}
