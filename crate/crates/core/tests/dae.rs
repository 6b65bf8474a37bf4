use nalgebra::{DMatrix, DVector};
use packcharge::cell_model::{CellParams, CellState};
use packcharge::dae::{consistent_init, eval_f_h, simulate, step, DaeSystem, IntegratorConfig};
use packcharge::harness::validate::integrator_order;
use packcharge::pack_model::{Pack, PackConfig};
use packcharge::toy_systems::{expm, LinearDae, ScalarDecay};
use proptest::prelude::*;

fn cfg(ts: f64, substeps: usize) -> IntegratorConfig {
    IntegratorConfig { ts, substeps, ..IntegratorConfig::default() }
}

fn decay_at_one(substeps: usize) -> f64 {
    simulate(&ScalarDecay, &[1.0], &[1.0], &[0.0], 1, &cfg(1.0, substeps)).unwrap().x[1][0]
}

#[test]
fn scalar_decay_error_is_first_order() {
    let exact = (-1.0_f64).exp();
    let mut prev = None;
    for k in [16, 32, 64, 128, 256] {
        let err = (decay_at_one(k) - exact).abs();
        // Implicit Euler on x' = -x overshoots by t·dt·e^{-t}/2 to leading order.
        let model = exact * 0.5 / k as f64;
        assert!((err / model - 1.0).abs() < 0.05, "substeps {k}: error {err}, model {model}");
        if let Some(p) = prev {
            let ratio: f64 = p / err;
            assert!((ratio - 2.0).abs() < 0.05, "halving ratio {ratio}");
        }
        prev = Some(err);
    }
}

#[test]
fn implicit_euler_matches_closed_form_recursion() {
    for k in [1, 3, 8] {
        let x = decay_at_one(k);
        let expected = (1.0 + 1.0 / k as f64).powi(-(k as i32));
        assert!((x - expected).abs() < 1e-13, "{x} vs {expected}");
    }
}

#[test]
fn order_study_slope() {
    let study = integrator_order(0.25).unwrap();
    assert!((study.slope - 1.0).abs() <= 0.1, "slope {}", study.slope);
    assert!(study.error_64 < 1e-3, "error {}", study.error_64);
}

fn linear_system() -> LinearDae {
    LinearDae {
        a: DMatrix::from_row_slice(2, 2, &[-0.8, 0.3, -0.2, -0.5]),
        b: DMatrix::from_row_slice(2, 1, &[1.0, 0.4]),
        f: DMatrix::from_row_slice(2, 1, &[0.2, -0.1]),
        c: DMatrix::from_row_slice(1, 2, &[0.5, 1.0]),
        d: DMatrix::from_row_slice(1, 1, &[0.3]),
    }
}

#[test]
fn linear_dae_converges_to_matrix_exponential_flow() {
    let sys = linear_system();
    let (ae, be) = sys.reduced();
    let x0 = [1.0, -0.5];
    let u = [0.7];
    let ts = 1.0;
    // Closed-form flow under constant input via the augmented exponential.
    let mut aug = DMatrix::zeros(3, 3);
    aug.view_mut((0, 0), (2, 2)).copy_from(&(&ae * ts));
    aug.view_mut((0, 2), (2, 1)).copy_from(&(&be * ts));
    let e = expm(&aug);
    let exact = e.view((0, 0), (2, 2)) * DVector::from_column_slice(&x0) + e.view((0, 2), (2, 1)) * DVector::from_column_slice(&u);
    let mut prev = f64::INFINITY;
    for k in [8, 32, 128, 512] {
        let traj = simulate(&sys, &x0, &[0.0], &u, 1, &cfg(ts, k)).unwrap();
        let err = (DVector::from_column_slice(&traj.x[1]) - &exact).amax();
        assert!(err < prev / 3.0, "substeps {k}: {err}");
        prev = err;
    }
    assert!(prev < 2e-3);
}

#[test]
fn expm_of_diagonal_and_nilpotent() {
    let d = DMatrix::from_diagonal(&DVector::from_column_slice(&[-1.0, 0.5, 2.0]));
    let e = expm(&d);
    for (i, v) in [-1.0_f64, 0.5, 2.0].iter().enumerate() {
        assert!((e[(i, i)] - v.exp()).abs() < 1e-13 * v.exp().max(1.0));
    }
    let n = DMatrix::from_row_slice(2, 2, &[0.0, 3.0, 0.0, 0.0]);
    let en = expm(&n);
    assert!((en - DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 0.0, 1.0])).amax() < 1e-14);
}

#[test]
fn zero_horizon_returns_initial_sample() {
    let sys = linear_system();
    let traj = simulate(&sys, &[1.0, 2.0], &[0.0], &[0.5], 0, &cfg(1.0, 4)).unwrap();
    assert_eq!(traj.x.len(), 1);
    assert_eq!(traj.x[0], vec![1.0, 2.0]);
    let z = 0.5 * 1.0 + 2.0 + 0.3 * 0.5;
    assert!((traj.z[0][0] - z).abs() < 1e-12);
    assert_eq!(traj.y[0], vec![1.0, 2.0, traj.z[0][0]]);
}

#[test]
fn rest_pack_stays_at_rest() {
    let p = Pack::new(PackConfig::uniform(2, 2, 15.0, CellParams::reference())).unwrap();
    let cell = &p.config.cells[0];
    let x0 = p.pack_state(&vec![CellState::at_rest(cell, 40.0, cell.t_sink, 1000.0); 4]);
    // Full bypass: no cell current.
    let u = vec![15.0; 2 * 3];
    let traj = simulate(&p, &x0, &p.default_currents(&u[..2]), &u, 3, &IntegratorConfig::default()).unwrap();
    for x in &traj.x {
        for (a, b) in x.iter().zip(&x0) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }
    for z in &traj.z {
        assert!(z.iter().all(|v| v.abs() < 1e-9));
    }
}

#[test]
fn simulation_is_bitwise_deterministic() {
    let p = Pack::new(PackConfig::uniform(2, 2, 22.5, CellParams::reference())).unwrap();
    let cell = &p.config.cells[0];
    let states: Vec<CellState> = [30.0, 35.0, 40.0, 45.0].iter().map(|s| CellState::at_rest(cell, *s, 298.15, 1000.0)).collect();
    let x0 = p.pack_state(&states);
    let u = vec![2.0, 5.0, 0.0, 4.0, 1.0, 1.0];
    let run = || simulate(&p, &x0, &p.default_currents(&u[..2]), &u, 3, &IntegratorConfig::default()).unwrap();
    let (a, b) = (run(), run());
    for (xa, xb) in a.x.iter().zip(&b.x) {
        assert!(xa.iter().zip(xb).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
    assert_eq!(a, b);
}

#[test]
fn consistent_samples_satisfy_the_algebraic_equations() {
    let p = Pack::new(PackConfig::uniform(2, 3, 33.75, CellParams::reference())).unwrap();
    let cell = &p.config.cells[0];
    let states: Vec<CellState> = (0..6).map(|k| CellState::at_rest(cell, 20.0 + 8.0 * k as f64, 298.15, 1000.0)).collect();
    let x0 = p.pack_state(&states);
    let u = vec![3.0, 10.0, 6.0, 0.0];
    let c = IntegratorConfig::default();
    let traj = simulate(&p, &x0, &p.default_currents(&u[..2]), &u, 2, &c).unwrap();
    for (k, (x, z)) in traj.x.iter().zip(&traj.z).enumerate() {
        let uk = &u[2 * k.min(1)..2 * k.min(1) + 2];
        let h = eval_f_h(&p, x, uk, z).unwrap().h;
        assert!(h.iter().all(|v| v.abs() <= c.newton_tol), "sample {k}: {h:?}");
    }
}

#[test]
fn step_without_dynamics_keeps_state() {
    struct Frozen;
    impl DaeSystem for Frozen {
        fn dims(&self) -> packcharge::dae::Dims {
            packcharge::dae::Dims { n: 2, m: 1, s: 1, p: 1 }
        }
        fn eval_block(&self, _: usize, _x: &[f64], u: &[f64], z: &[f64], _: bool) -> Result<packcharge::dae::BlockEval, packcharge::ModelError> {
            Ok(packcharge::dae::BlockEval { f: vec![0.0, 0.0], h: vec![z[0] - u[0]] })
        }
        fn output_block(&self, _: usize, x: &[f64], _u: &[f64], _z: &[f64]) -> Result<Vec<f64>, packcharge::ModelError> {
            Ok(vec![x[0]])
        }
        fn jacobians_block(&self, _: usize, _: &[f64], _: &[f64], _: &[f64], _: bool) -> Result<packcharge::dae::JacobianBlocks, packcharge::ModelError> {
            let mut j = packcharge::dae::JacobianBlocks::zeros(2, 1, 1, 1);
            j.hz[(0, 0)] = 1.0;
            j.hu[(0, 0)] = -1.0;
            j.gx[(0, 0)] = 1.0;
            Ok(j)
        }
    }
    let x = [0.123456789, -9.87654321];
    let z = consistent_init(&Frozen, &x, &[2.0], &[0.0], &cfg(1.0, 1)).unwrap();
    let (xn, zn) = step(&Frozen, &x, &z, &[2.0], 0.5, &cfg(1.0, 1)).unwrap();
    assert_eq!(xn, x.to_vec());
    assert_eq!(zn, vec![2.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn decay_stays_between_exact_and_initial(k in 1usize..64, ts in 0.05f64..3.0) {
        let x = simulate(&ScalarDecay, &[1.0], &[1.0], &[0.0], 1, &cfg(ts, k)).unwrap().x[1][0];
        // Implicit Euler is monotone and overestimates a decaying exponential.
        prop_assert!(x > (-ts).exp() && x < 1.0);
    }
}
