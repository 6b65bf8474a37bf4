#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub struct DenseQp {
    pub p: DMatrix<f64>,
    pub q: Vec<f64>,
    pub a: DMatrix<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// Strictly convex QP with `w = 0` strictly feasible. Rows are a mix of
/// one-sided, two-sided and equality constraints.
pub fn random_qp<R: Rng>(rng: &mut R, d: usize, c: usize) -> DenseQp {
    let l = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let p = &l * l.transpose() / d as f64 + DMatrix::identity(d, d) * 0.1;
    let q: Vec<f64> = (0..d).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
    let a = DMatrix::from_fn(c, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut lo = Vec::with_capacity(c);
    let mut hi = Vec::with_capacity(c);
    for i in 0..c {
        let kind = rng.random_range(0..10);
        let up = rng.random_range(0.2..2.0);
        let down = -rng.random_range(0.2..2.0);
        match kind {
            0 if i < d / 2 => {
                lo.push(0.0);
                hi.push(0.0);
            }
            1..=4 => {
                lo.push(-1e30);
                hi.push(up);
            }
            _ => {
                lo.push(down);
                hi.push(up);
            }
        }
    }
    DenseQp { p, q, a, lo, hi }
}

pub fn objective(qp: &DenseQp, w: &[f64]) -> f64 {
    let wv = DVector::from_column_slice(w);
    0.5 * wv.dot(&(&qp.p * &wv)) + wv.dot(&DVector::from_column_slice(&qp.q))
}

#[derive(Clone, Copy, PartialEq)]
enum Side {
    Lower,
    Upper,
    Both,
}

fn try_active_set(qp: &DenseQp, set: &[(usize, Side)], tol: f64) -> Option<Vec<f64>> {
    let d = qp.q.len();
    let k = set.len();
    let mut kkt = DMatrix::zeros(d + k, d + k);
    kkt.view_mut((0, 0), (d, d)).copy_from(&qp.p);
    let mut rhs = DVector::zeros(d + k);
    for j in 0..d {
        rhs[j] = -qp.q[j];
    }
    for (r, &(i, side)) in set.iter().enumerate() {
        for j in 0..d {
            kkt[(d + r, j)] = qp.a[(i, j)];
            kkt[(j, d + r)] = qp.a[(i, j)];
        }
        rhs[d + r] = if side == Side::Upper { qp.hi[i] } else { qp.lo[i] };
    }
    let sol = kkt.lu().solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let w: Vec<f64> = sol.rows(0, d).iter().copied().collect();
    let aw = &qp.a * DVector::from_column_slice(&w);
    for i in 0..qp.lo.len() {
        let scale = 1.0 + qp.lo[i].abs().min(1e3) + qp.hi[i].abs().min(1e3);
        if aw[i] < qp.lo[i] - tol * scale || aw[i] > qp.hi[i] + tol * scale {
            return None;
        }
    }
    for (r, &(_, side)) in set.iter().enumerate() {
        let lam = sol[d + r];
        match side {
            Side::Lower if lam > tol => return None,
            Side::Upper if lam < -tol => return None,
            _ => {}
        }
    }
    Some(w)
}

fn search(
    qp: &DenseQp,
    candidates: &[usize],
    start: usize,
    remaining: usize,
    set: &mut Vec<(usize, Side)>,
    tol: f64,
    checked: &mut usize,
) -> Option<Vec<f64>> {
    if remaining == 0 {
        *checked += 1;
        return try_active_set(qp, set, tol);
    }
    for idx in start..candidates.len() {
        let i = candidates[idx];
        for side in [Side::Lower, Side::Upper] {
            let bound = if side == Side::Lower { qp.lo[i] } else { qp.hi[i] };
            if bound.abs() >= 1e20 {
                continue;
            }
            set.push((i, side));
            let found = search(qp, candidates, idx + 1, remaining - 1, set, tol, checked);
            set.pop();
            if found.is_some() {
                return found;
            }
        }
    }
    None
}

/// Exhaustive active-set enumeration in order of increasing active-set
/// size. A strictly convex problem has a unique KKT point, so the first
/// candidate set satisfying feasibility and multiplier signs is optimal.
pub fn enumerate_oracle(qp: &DenseQp) -> Option<(Vec<f64>, usize)> {
    let tol = 1e-9;
    let d = qp.q.len();
    let mut forced = Vec::new();
    let mut candidates = Vec::new();
    for i in 0..qp.lo.len() {
        if qp.lo[i] == qp.hi[i] {
            forced.push((i, Side::Both));
        } else {
            candidates.push(i);
        }
    }
    let mut checked = 0;
    for size in 0..=d.saturating_sub(forced.len()).min(candidates.len()) {
        let mut set = forced.clone();
        if let Some(w) = search(qp, &candidates, 0, size, &mut set, tol, &mut checked) {
            return Some((w, checked));
        }
    }
    None
}

struct Reduced {
    w_u: DVector<f64>,
    pinv_at: DMatrix<f64>,
    aw_u: DVector<f64>,
    m: DMatrix<f64>,
}

fn schur_candidate(qp: &DenseQp, red: &Reduced, set: &[(usize, Side)], tol: f64) -> Option<Vec<f64>> {
    let k = set.len();
    let mut lam = DVector::zeros(k);
    if k > 0 {
        let mss = DMatrix::from_fn(k, k, |r, c| red.m[(set[r].0, set[c].0)]);
        let rhs = DVector::from_fn(k, |r, _| {
            let (i, side) = set[r];
            red.aw_u[i] - if side == Side::Upper { qp.hi[i] } else { qp.lo[i] }
        });
        let lu = mss.lu();
        // Dependent active rows give a singular reduced system.
        let diag_max = (0..k).map(|r| lu.u()[(r, r)].abs()).fold(0.0, f64::max);
        if (0..k).any(|r| lu.u()[(r, r)].abs() <= 1e-12 * diag_max.max(1e-300)) {
            return None;
        }
        lam = lu.solve(&rhs)?;
    }
    for (r, &(_, side)) in set.iter().enumerate() {
        match side {
            Side::Lower if lam[r] > tol => return None,
            Side::Upper if lam[r] < -tol => return None,
            _ => {}
        }
    }
    for i in 0..qp.lo.len() {
        let ai = red.aw_u[i] - (0..k).map(|r| red.m[(i, set[r].0)] * lam[r]).sum::<f64>();
        let scale = 1.0 + qp.lo[i].abs().min(1e3) + qp.hi[i].abs().min(1e3);
        if ai < qp.lo[i] - tol * scale || ai > qp.hi[i] + tol * scale {
            return None;
        }
    }
    let mut w = red.w_u.clone();
    for (r, &(i, _)) in set.iter().enumerate() {
        w -= red.pinv_at.column(i) * lam[r];
    }
    Some(w.iter().copied().collect())
}

#[allow(clippy::too_many_arguments)]
fn schur_search(
    qp: &DenseQp,
    red: &Reduced,
    candidates: &[usize],
    start: usize,
    remaining: usize,
    set: &mut Vec<(usize, Side)>,
    tol: f64,
    checked: &mut usize,
) -> Option<Vec<f64>> {
    if remaining == 0 {
        *checked += 1;
        return schur_candidate(qp, red, set, tol);
    }
    for idx in start..candidates.len() {
        let i = candidates[idx];
        for side in [Side::Lower, Side::Upper] {
            let bound = if side == Side::Lower { qp.lo[i] } else { qp.hi[i] };
            if bound.abs() >= 1e20 {
                continue;
            }
            set.push((i, side));
            let found = schur_search(qp, red, candidates, idx + 1, remaining - 1, set, tol, checked);
            set.pop();
            if found.is_some() {
                return found;
            }
        }
    }
    None
}

/// The same exhaustive enumeration as [`enumerate_oracle`], with every
/// candidate solved through the reduced system `A_S P^-1 A_S^T`, built
/// once per problem. Requires `P` positive definite.
pub fn enumerate_oracle_schur(qp: &DenseQp) -> Option<(Vec<f64>, usize)> {
    let tol = 1e-9;
    let d = qp.q.len();
    let chol = qp.p.clone().cholesky()?;
    let w_u = -chol.solve(&DVector::from_column_slice(&qp.q));
    let pinv_at = chol.solve(&qp.a.transpose());
    let red = Reduced { aw_u: &qp.a * &w_u, m: &qp.a * &pinv_at, w_u, pinv_at };
    let mut forced = Vec::new();
    let mut candidates = Vec::new();
    for i in 0..qp.lo.len() {
        if qp.lo[i] == qp.hi[i] {
            forced.push((i, Side::Both));
        } else {
            candidates.push(i);
        }
    }
    let mut checked = 0;
    for size in 0..=d.saturating_sub(forced.len()).min(candidates.len()) {
        let mut set = forced.clone();
        if let Some(w) = schur_search(qp, &red, &candidates, 0, size, &mut set, tol, &mut checked) {
            return Some((w, checked));
        }
    }
    None
}

/// Strictly convex QP with a planted KKT point: `n_eq` equality rows and
/// `k_active` inequality rows tight at `w_star` with strictly signed
/// multipliers, every other row inactive with a positive margin.
pub fn planted_qp<R: Rng>(rng: &mut R, d: usize, c: usize, n_eq: usize, k_active: usize) -> (DenseQp, Vec<f64>) {
    assert!(n_eq + k_active <= d.min(c));
    let l = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let p = &l * l.transpose() / d as f64 + DMatrix::identity(d, d) * 0.1;
    let a = DMatrix::from_fn(c, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let w_star = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let aw = &a * &w_star;
    let mut lo = vec![0.0; c];
    let mut hi = vec![0.0; c];
    let mut lam = DVector::zeros(c);
    for i in 0..c {
        let gap = |rng: &mut R| rng.random_range(0.2..2.0);
        if i < n_eq {
            lo[i] = aw[i];
            hi[i] = aw[i];
            lam[i] = rng.sample::<f64, _>(StandardNormal);
        } else if i < n_eq + k_active {
            let far = if rng.random_bool(0.5) { 1e30 } else { gap(rng) };
            let size = rng.random_range(0.5..2.0);
            if rng.random_bool(0.5) {
                hi[i] = aw[i];
                lo[i] = if far >= 1e30 { -1e30 } else { aw[i] - far };
                lam[i] = size;
            } else {
                lo[i] = aw[i];
                hi[i] = if far >= 1e30 { 1e30 } else { aw[i] + far };
                lam[i] = -size;
            }
        } else {
            match rng.random_range(0..3) {
                0 => {
                    lo[i] = -1e30;
                    hi[i] = aw[i] + gap(rng);
                }
                1 => {
                    lo[i] = aw[i] - gap(rng);
                    hi[i] = 1e30;
                }
                _ => {
                    lo[i] = aw[i] - gap(rng);
                    hi[i] = aw[i] + gap(rng);
                }
            }
        }
    }
    let q = -(&p * &w_star) - a.transpose() * &lam;
    (DenseQp { p, q: q.iter().copied().collect(), a, lo, hi }, w_star.iter().copied().collect())
}
