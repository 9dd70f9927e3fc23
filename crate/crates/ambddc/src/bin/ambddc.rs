//! Command-line driver for the BDDC experiment harness.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ambddc::harness::{self, ExperimentConfig};
use ambddc::setup;

#[derive(Parser)]
#[command(name = "ambddc", about = "Adaptive-multilevel BDDC experiments for 2D elasticity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and append its row to the summary table.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// key=value config overrides, repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the non-adaptive and adaptive table families.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Adaptive thresholds, largest first.
        #[arg(long, default_value = "10,3,2", value_delimiter = ',')]
        taus: Vec<f64>,
    },
    /// Set up the adaptive coarse space and emit pair spectra only.
    Spectra {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("solver did not reach the requested tolerance");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run() -> ambddc::Result<bool> {
    match Cli::parse().command {
        Command::Run {
            config,
            overrides,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config, &overrides)?;
            let outcome = harness::run_experiment(&cfg, Some(&out))?;
            let r = &outcome.row;
            println!(
                "{}: Nc = {:?}, kappa = {:.4}, it = {}{}",
                cfg.default_label(),
                r.nc,
                r.kappa,
                r.iterations,
                r.omega_tilde
                    .map(|o| format!(", omega_tilde = {o:.4}"))
                    .unwrap_or_default()
            );
            Ok(outcome.report.converged)
        }
        Command::Sweep {
            config,
            overrides,
            out,
            taus,
        } => {
            let cfg = ExperimentConfig::load(&config, &overrides)?;
            let ok = harness::run_sweep(&cfg, &out, &taus)?;
            println!("sweep tables written to {}", out.display());
            Ok(ok)
        }
        Command::Spectra {
            config,
            overrides,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config, &overrides)?;
            let built = setup::build(&cfg.to_setup()?)?;
            if built.spectra.is_empty() {
                eprintln!("no spectra: run with mode=adaptive and a finite tau");
            }
            std::fs::create_dir_all(&out)?;
            for spectra in &built.spectra {
                let path = out.join(format!("spectra_level{}.csv", spectra.level));
                harness::emit_spectra(&path, spectra)?;
                println!("wrote {}", path.display());
            }
            if let Some(ind) = &built.indicator {
                println!(
                    "omega_tilde = {:.4} (per level: {:?})",
                    ind.omega_tilde, ind.per_level_max
                );
            }
            Ok(true)
        }
    }
}
