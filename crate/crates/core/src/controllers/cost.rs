//! Soft-constrained tracking cost evaluated on a trajectory.

use crate::qp::condense::{Limits, Weights};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CostBreakdown {
    pub tracking: f64,
    pub input: f64,
    pub regularization: f64,
    /// Linear penalty on the smallest slacks that make every sample feasible.
    pub slack: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.tracking + self.input + self.regularization + self.slack
    }
}

/// Cost of stacked output samples `y` (`(H+1)·p`) produced by the stacked
/// inputs `u` (`H·m`), with `u_prev` applied before the first move.
pub fn evaluate_cost(
    y: &[f64],
    u: &[f64],
    u_prev: &[f64],
    weights: &Weights,
    y_ref: &[f64],
    u_ref: &[f64],
    limits: &Limits,
) -> CostBreakdown {
    let p = weights.q.len();
    let m = weights.r.len();
    let mut c = CostBreakdown::default();
    for (r, &yr) in y.iter().enumerate() {
        let o = r % p;
        c.tracking += weights.q[o] * (yr - y_ref[o]).powi(2);
        let viol = (limits.y_lb[o] - yr).max(yr - limits.y_ub[o]).max(0.0);
        c.slack += weights.slack[o] * viol;
    }
    for (j, &uj) in u.iter().enumerate() {
        let i = j % m;
        c.input += weights.r[i] * (uj - u_ref[i]).powi(2);
        let prev = if j < m { u_prev[i] } else { u[j - m] };
        c.regularization += weights.r_reg[i] * (uj - prev).powi(2);
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (Weights, Limits) {
        (
            Weights { q: vec![2.0], r: vec![0.5], r_reg: vec![0.25], slack: vec![10.0] },
            Limits { u_lb: vec![-1e30], u_ub: vec![1e30], y_lb: vec![-1.0], y_ub: vec![1.0] },
        )
    }

    #[test]
    fn zero_at_reference() {
        let (w, l) = setup();
        let c = evaluate_cost(&[0.3, 0.3, 0.3], &[0.7, 0.7], &[0.7], &w, &[0.3], &[0.7], &l);
        assert_eq!(c.total(), 0.0);
    }

    #[test]
    fn doubling_q_doubles_tracking_only() {
        let (mut w, l) = setup();
        let y = [0.5, -2.0, 1.5];
        let u = [1.0, 3.0];
        let a = evaluate_cost(&y, &u, &[0.0], &w, &[0.1], &[0.2], &l);
        w.q[0] *= 2.0;
        let b = evaluate_cost(&y, &u, &[0.0], &w, &[0.1], &[0.2], &l);
        assert!((b.tracking - 2.0 * a.tracking).abs() < 1e-12);
        assert_eq!((a.input, a.regularization, a.slack), (b.input, b.regularization, b.slack));
    }

    #[test]
    fn two_step_hand_evaluation() {
        let (w, l) = setup();
        // y = [0.5, -2.0, 1.5], y_ref = 0.1:
        //   tracking = 2 (0.16 + 4.41 + 1.96) = 13.06
        //   slack    = 10 (0 + 1 + 0.5)       = 15
        // u = [1, 3], u_ref = 0.2, u_prev = 0:
        //   input    = 0.5 (0.64 + 7.84)      = 4.24
        //   reg      = 0.25 (1 + 4)           = 1.25
        let c = evaluate_cost(&[0.5, -2.0, 1.5], &[1.0, 3.0], &[0.0], &w, &[0.1], &[0.2], &l);
        assert!((c.tracking - 13.06).abs() < 1e-12);
        assert!((c.slack - 15.0).abs() < 1e-12);
        assert!((c.input - 4.24).abs() < 1e-12);
        assert!((c.regularization - 1.25).abs() < 1e-12);
        assert!((c.total() - 33.55).abs() < 1e-12);
    }
}
