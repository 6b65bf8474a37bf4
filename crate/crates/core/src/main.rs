use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use packcharge::cell_model::CellParams;
use packcharge::controllers::ControllerKind;
use packcharge::dae::simulate;
use packcharge::harness::validate::{
    format_checks, integrator_order, jacobian_audit, log_invariants, random_operating_points, sensitivity_fd_check, Check,
};
use packcharge::harness::{
    benchmark_scaling, build_pack, export_csv, format_table, output_gap, parse_grid, run_with_controller, RunLog,
    ScenarioConfig,
};
use packcharge::Result;

#[derive(Parser, Debug)]
#[command(name = "packcharge", version, about = "Battery-pack charging simulation and MPC benchmarks")]
struct Cli {
    /// Scenario file (JSON). Built-in 2x2 reference scenario when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the population seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the scenario's controller.
    #[arg(long, global = true, value_enum)]
    controller: Option<ControllerKind>,
    /// Output directory for CSV logs and tables.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Pack sizes for `scale`, e.g. `1x1,2x2,4x4`.
    #[arg(long, global = true, default_value = "1x1,1x2,2x1,2x2,3x3,4x4")]
    grid: String,
    /// Write measured step times into the CSV logs.
    #[arg(long, global = true)]
    timing: bool,
    /// Closed-loop steps per point for `scale`.
    #[arg(long, global = true, default_value_t = 10)]
    steps: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Charge the pack once with one controller.
    Charge,
    /// sMPC, nMPC and CC-CV at two currents on the same pack.
    Compare,
    /// Mean step time of both MPC controllers over a grid of pack sizes.
    Scale,
    /// Derivative, sensitivity, integrator and log invariant checks.
    Validate,
}

fn load(cli: &Cli) -> Result<ScenarioConfig> {
    let mut s = match &cli.config {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = cli.seed {
        s.seed = seed;
    }
    if let Some(c) = cli.controller {
        s.controller = c;
    }
    s.validate()?;
    Ok(s)
}

fn csv_path(out: &Path, s: &ScenarioConfig, label: &str) -> PathBuf {
    out.join(format!("{}_{}x{}_seed{}_{label}.csv", s.name, s.n_modules, s.m_parallel, s.seed))
}

fn summary_line(label: &str, log: &RunLog) -> String {
    let t = log.summary.charging_time.map_or("not reached".to_string(), |t| format!("{t:.0}"));
    format!(
        "{label:<10} {t:>12} {:>10.3} {:>10.4} {:>10.4} {:>12.4}",
        log.summary.peak_temperature, log.summary.peak_voltage, log.summary.peak_voltage_held, log.summary.mean_step_time
    )
}

fn summary_header() -> String {
    format!("{:<10} {:>12} {:>10} {:>10} {:>10} {:>12}", "controller", "charge_s", "T_peak_K", "V_peak_V", "V_held_V", "step_s")
}

fn charge(cli: &Cli) -> Result<()> {
    let s = load(cli)?;
    let log = run_with_controller(&s, s.controller)?;
    let path = csv_path(&cli.out, &s, s.controller.as_str());
    export_csv(&log, &path, cli.timing)?;
    println!("{}", summary_header());
    println!("{}", summary_line(s.controller.as_str(), &log));
    info!("log written to {}", path.display());
    Ok(())
}

fn compare(cli: &Cli) -> Result<()> {
    let s = load(cli)?;
    let mut logs = Vec::new();
    for kind in [ControllerKind::Smpc, ControllerKind::Nmpc] {
        logs.push((kind.as_str().to_string(), run_with_controller(&s, kind)?));
    }
    for rate in [s.cccv.i_cc_c_rate, 0.85 * s.cccv.i_cc_c_rate] {
        let mut c = s.clone();
        c.cccv.i_cc_c_rate = rate;
        logs.push((format!("cccv_{rate:.2}C"), run_with_controller(&c, ControllerKind::Cccv)?));
    }
    let mut table = summary_header() + "\n";
    for (label, log) in &logs {
        export_csv(log, &csv_path(&cli.out, &s, label), cli.timing)?;
        table += &summary_line(label, log);
        table.push('\n');
    }
    let gap = output_gap(&logs[0].1, &logs[1].1);
    table += &format!("smpc vs nmpc: max |dV| {:.2e} V, |dT| {:.2e} K, |dSOC| {:.2e} %\n", gap[0], gap[1], gap[3]);
    print!("{table}");
    std::fs::create_dir_all(&cli.out)?;
    std::fs::write(cli.out.join(format!("{}_compare_seed{}.txt", s.name, s.seed)), table)?;
    Ok(())
}

fn scale(cli: &Cli) -> Result<()> {
    let s = load(cli)?;
    let grid = parse_grid(&cli.grid)?;
    let rows = benchmark_scaling(&s, &grid, cli.steps);
    let table = format_table(&rows);
    print!("{table}");
    std::fs::create_dir_all(&cli.out)?;
    std::fs::write(cli.out.join(format!("{}_scaling.txt", s.name)), table)?;
    Ok(())
}

fn validate(cli: &Cli) -> Result<bool> {
    let s = load(cli)?;
    let (pack, pop) = build_pack(&s)?;
    let integ = &s.integrator;
    let mut checks = Vec::new();

    let mut worst = 0.0_f64;
    for pt in random_operating_points(&pack, 10, s.seed, integ)? {
        for (_, e) in jacobian_audit(&pack, &pt.x, &pt.z, &pt.u)? {
            worst = worst.max(e);
        }
    }
    checks.push(Check::at_most("Jacobian blocks vs central differences", worst, 1e-5));

    let x0 = pack.pack_state(&pop.states);
    let n = pack.n_modules();
    let u0 = vec![0.0; n];
    let warmup = simulate(&pack, &x0, &pack.default_currents(&u0), &u0.repeat(2), 2, integ)?;
    let u_bar: Vec<f64> = (0..s.mpc.horizon * n).map(|k| pack.config.i_ch * (0.1 + 0.3 * (k % 3) as f64 / 2.0)).collect();
    let eps = 1e-4 * CellParams::reference().one_c_current();
    let sens = sensitivity_fd_check(&pack, &warmup.x[2], &warmup.z[2], &u_bar, s.mpc.horizon, integ, eps)?;
    checks.push(Check::at_most("Pi_x vs finite differences", sens.pi_x, 1e-3));
    checks.push(Check::at_most("Pi_z vs finite differences", sens.pi_z, 1e-3));
    checks.push(Check::at_most("Pi_y vs finite differences", sens.pi_y, 1e-3));

    let order = integrator_order(0.25)?;
    checks.push(Check::near("integrator order", order.slope, 1.0, 0.1));
    checks.push(Check::at_most("scalar decay error at Ts/64", order.error_64, 1e-3));

    let log = run_with_controller(&s, s.controller)?;
    checks.extend(log_invariants(&log, &pack).checks());

    print!("{}", format_checks(&checks));
    Ok(checks.iter().all(|c| c.passed))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Charge => charge(&cli).map(|_| true),
        Command::Compare => compare(&cli).map(|_| true),
        Command::Scale => scale(&cli).map(|_| true),
        Command::Validate => validate(&cli),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
