//! Command-line surface: config resolution, output tables and the commands.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{
    cmd_ensemble, cmd_fit_gamma, cmd_risk_report, cmd_simulate, cmd_table_sigma, TableSpec,
};
pub use config::{parse_config, ConfigFile};
pub use output::RunManifest;
