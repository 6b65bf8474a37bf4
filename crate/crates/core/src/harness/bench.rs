//! Mean controller step time over a grid of pack sizes.

use std::fmt::Write as _;

use log::warn;

use super::config::ScenarioConfig;
use super::runner::{build_pack, make_controller, run_loop};
use crate::controllers::ControllerKind;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub n_modules: usize,
    pub m_parallel: usize,
    /// Mean step time (s), `None` when the run failed.
    pub smpc: Option<f64>,
    pub nmpc: Option<f64>,
    pub steps: usize,
}

/// Parse `"2x3,4x4"` into `(N, M)` pairs.
pub fn parse_grid(spec: &str) -> Result<Vec<(usize, usize)>> {
    spec.split(',')
        .map(|item| {
            let bad = || crate::error::Error::Config(format!("grid entry `{item}` is not NxM"));
            let (n, m) = item.trim().split_once(['x', 'X']).ok_or_else(bad)?;
            let n: usize = n.trim().parse().map_err(|_| bad())?;
            let m: usize = m.trim().parse().map_err(|_| bad())?;
            if n == 0 || m == 0 {
                return Err(bad());
            }
            Ok((n, m))
        })
        .collect()
}

/// Mean step time of `kind` over `steps` closed-loop steps.
pub fn mean_step_time(template: &ScenarioConfig, n: usize, m: usize, kind: ControllerKind, steps: usize) -> Result<f64> {
    let scenario = ScenarioConfig { n_modules: n, m_parallel: m, ..template.clone() };
    scenario.validate()?;
    let (pack, pop) = build_pack(&scenario)?;
    let x0 = pack.pack_state(&pop.states);
    let mut ctl = make_controller(&scenario, kind)?;
    let log = run_loop(pack, x0, ctl.as_mut(), kind, &scenario, Some(steps))?;
    let times: Vec<f64> =
        log.records.iter().take(log.summary.steps).map(|r| r.diagnostics.wall_time).collect();
    if times.is_empty() {
        return Ok(0.0);
    }
    Ok(times.iter().sum::<f64>() / times.len() as f64)
}

pub fn benchmark_scaling(template: &ScenarioConfig, grid: &[(usize, usize)], steps: usize) -> Vec<ScalingRow> {
    grid.iter()
        .map(|&(n, m)| {
            let run = |kind: ControllerKind| match mean_step_time(template, n, m, kind, steps) {
                Ok(t) => Some(t),
                Err(e) => {
                    warn!("{n}x{m} {}: {e}", kind.as_str());
                    None
                }
            };
            ScalingRow { n_modules: n, m_parallel: m, smpc: run(ControllerKind::Smpc), nmpc: run(ControllerKind::Nmpc), steps }
        })
        .collect()
}

pub fn format_table(rows: &[ScalingRow]) -> String {
    let cell = |v: Option<f64>| v.map_or("failed".to_string(), |t| format!("{t:.4}"));
    let mut out = String::new();
    let _ = writeln!(out, "{:>4} {:>4} {:>6} {:>12} {:>12} {:>8}", "N", "M", "cells", "smpc_s", "nmpc_s", "ratio");
    for r in rows {
        let ratio = match (r.smpc, r.nmpc) {
            (Some(s), Some(n)) if s > 0.0 => format!("{:.1}", n / s),
            _ => "-".into(),
        };
        let _ = writeln!(
            out,
            "{:>4} {:>4} {:>6} {:>12} {:>12} {:>8}",
            r.n_modules,
            r.m_parallel,
            r.n_modules * r.m_parallel,
            cell(r.smpc),
            cell(r.nmpc),
            ratio
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("1x1, 2X3,13x12").unwrap(), vec![(1, 1), (2, 3), (13, 12)]);
        assert!(parse_grid("2x").is_err());
        assert!(parse_grid("0x2").is_err());
        assert!(parse_grid("abc").is_err());
    }
}
