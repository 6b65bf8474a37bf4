//! Seeded sampling of cell-to-cell variations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::PopulationStats;
use crate::cell_model::{CellParams, CellState};

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub params: Vec<CellParams>,
    pub states: Vec<CellState>,
    pub soc0: Vec<f64>,
}

/// Normal draw redrawn until it falls inside `(lo, hi)`.
fn truncated(rng: &mut ChaCha8Rng, mean: f64, std: f64, lo: f64, hi: f64) -> f64 {
    if std == 0.0 {
        return mean;
    }
    let normal = Normal::new(mean, std).expect("finite spread");
    loop {
        let v = normal.sample(rng);
        if v > lo && v < hi {
            return v;
        }
    }
}

/// Draw initial SOC, capacity and SEI resistance for `n_cells` cells in
/// module-major order. Cells start at rest.
pub fn sample_population(template: &CellParams, stats: &PopulationStats, n_cells: usize, seed: u64) -> Population {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::with_capacity(n_cells);
    let mut states = Vec::with_capacity(n_cells);
    let mut soc0 = Vec::with_capacity(n_cells);
    for _ in 0..n_cells {
        let soc = truncated(&mut rng, stats.soc_mean, stats.soc_std, stats.soc_min, stats.soc_max);
        let capacity = truncated(&mut rng, stats.capacity_mean, stats.capacity_std, 0.0, f64::INFINITY);
        let r_sei = truncated(&mut rng, stats.r_sei_mean, stats.r_sei_std, 0.0, f64::INFINITY);
        let p = CellParams { capacity_ah: capacity, r_sei, t_sink: stats.temperature, ..template.clone() };
        states.push(CellState::at_rest(&p, soc, stats.temperature, stats.c_e0));
        params.push(p);
        soc0.push(soc);
    }
    Population { params, states, soc0 }
}

/// Plant parameters: capacity and SEI resistance of each cell scaled by an
/// independent factor drawn from N(1, spread²) restricted to (0.5, 1.5).
pub fn perturb_plant(params: &[CellParams], spread: f64, seed: u64) -> Vec<CellParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    params
        .iter()
        .map(|p| {
            let cap = truncated(&mut rng, 1.0, spread, 0.5, 1.5);
            let sei = truncated(&mut rng, 1.0, spread, 0.5, 1.5);
            CellParams { capacity_ah: p.capacity_ah * cap, r_sei: p.r_sei * sei, ..p.clone() }
        })
        .collect()
}
