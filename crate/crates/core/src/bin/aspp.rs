//! Command-line driver.
//!
//!   aspp simulate --seed 7 --out runs/one
//!   aspp ensemble --paths 1000 --years 5 --out runs/growth
//!   aspp table-sigma --paths 500 --out runs/table
//!   aspp risk-report --paths 200 --out runs/risk
//!   aspp fit-gamma --alpha 1.1 --beta 0.96 --paths 1000 --out runs/gamma

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use aspp::cli::commands::{self, TableSpec};
use aspp::cli::config::{parse_config, parse_range, ConfigFile};
use aspp::cli::output::RunManifest;
use aspp::Result;

#[derive(Parser)]
#[command(name = "aspp", version, about = "Asynchronous stochastic price pump simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one path and write its per-day table.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Path index within the ensemble (selects the derived seed).
        #[arg(long, default_value_t = 0)]
        path: u64,
    },
    /// Run an ensemble and write per-path estimates.
    Ensemble {
        #[command(flatten)]
        common: Common,
        /// Also write every path's per-day table.
        #[arg(long)]
        trajectories: bool,
    },
    /// Sigma over an (alpha, beta) grid per active count, with the linear fit.
    TableSigma {
        #[command(flatten)]
        common: Common,
        /// Comma-separated alpha values.
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
        /// Comma-separated beta values.
        #[arg(long, value_delimiter = ',')]
        betas: Option<Vec<f64>>,
        /// Comma-separated active counts.
        #[arg(long, value_delimiter = ',')]
        ms: Option<Vec<usize>>,
    },
    /// Ensemble-mean exposure, hazard, survival and discounted prices.
    RiskReport {
        #[command(flatten)]
        common: Common,
    },
    /// Per-path regression of cumulative volatility on the r hazard.
    FitGamma {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    agents: Option<usize>,
    #[arg(long, conflicts_with = "active_range")]
    active: Option<usize>,
    /// MIN,MAX for a uniformly drawn active count.
    #[arg(long, value_parser = parse_range)]
    active_range: Option<[usize; 2]>,
    #[arg(long)]
    years: Option<f64>,
    #[arg(long)]
    burn_in_years: Option<f64>,
    #[arg(long)]
    q_threshold: Option<f64>,
    #[arg(long)]
    r_threshold: Option<f64>,
    /// Output directory.
    #[arg(long, env = "ASPP_OUT_DIR", default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
}

impl Common {
    fn flags(&self) -> ConfigFile {
        ConfigFile {
            agents: self.agents,
            active: self.active,
            active_range: self.active_range,
            alpha: self.alpha,
            beta: self.beta,
            years: self.years,
            seed: self.seed,
            q_threshold: self.q_threshold,
            r_threshold: self.r_threshold,
            paths: self.paths,
            burn_in_years: self.burn_in_years,
            workers: self.workers,
            ..ConfigFile::default()
        }
    }
}

fn report(manifest: &RunManifest, out: &Path) {
    for f in &manifest.outputs {
        println!("{}  {}", f.sha256, out.join(&f.path).display());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common, path } => {
            let config = parse_config(common.config.as_deref(), &common.flags())?;
            let m = commands::cmd_simulate(&config, path, &common.out)?;
            report(&m, &common.out);
        }
        Command::Ensemble { common, trajectories } => {
            let config = parse_config(common.config.as_deref(), &common.flags())?;
            let m = commands::cmd_ensemble(&config, trajectories, &common.out)?;
            report(&m, &common.out);
        }
        Command::TableSigma {
            common,
            alphas,
            betas,
            ms,
        } => {
            let config = parse_config(common.config.as_deref(), &common.flags())?;
            let mut spec = TableSpec::standard(config.n_paths, config.burn_in_years);
            if let Some(a) = alphas {
                spec.alphas = a;
            }
            if let Some(b) = betas {
                spec.betas = b;
            }
            if let Some(m) = ms {
                spec.active_counts = m;
            }
            // an explicit horizon (flag or file) replaces burn-in + 1 year
            let file_years = match common.config.as_deref() {
                Some(p) => ConfigFile::load(p)?.years,
                None => None,
            };
            if let Some(y) = common.years.or(file_years) {
                spec.horizon_years = y;
            }
            let m = commands::cmd_table_sigma(&config, &spec, &common.out)?;
            report(&m, &common.out);
        }
        Command::RiskReport { common } => {
            let config = parse_config(common.config.as_deref(), &common.flags())?;
            let m = commands::cmd_risk_report(&config, &common.out)?;
            report(&m, &common.out);
        }
        Command::FitGamma { common } => {
            let config = parse_config(common.config.as_deref(), &common.flags())?;
            let m = commands::cmd_fit_gamma(&config, &common.out)?;
            report(&m, &common.out);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
