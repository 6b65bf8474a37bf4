//! Scenario loading, population sampling, closed-loop runs, CSV logs, the
//! scaling benchmark and the invariant suite.

pub mod bench;
pub mod config;
pub mod export;
pub mod population;
pub mod runner;
pub mod validate;

pub use bench::{benchmark_scaling, format_table, mean_step_time, parse_grid, ScalingRow};
pub use config::{CccvSettings, PopulationStats, ScenarioConfig};
pub use export::{export_csv, read_csv, write_csv, CsvTable};
pub use population::{perturb_plant, sample_population, Population};
pub use runner::{
    build_pack, make_controller, output_gap, run_closed_loop, run_loop, run_with_controller, Record, RunLog, Summary,
};
