use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lindiff_cli::commands;
use lindiff_cli::config::{ExperimentConfig, Format, RawConfig};
use lindiff_cli::error::{CliError, CliResult};
use lindiff_cli::experiment::run_experiment;
use lindiff_cli::validate::run_suite;

#[derive(Debug, Parser)]
#[command(name = "lindiff", version, about = "Closed-form learning dynamics of linear diffusion models")]
struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    format: Option<Format>,
    /// Architecture: one-layer, two-layer, deep, residual or discrete-gd.
    #[arg(long, global = true)]
    arch: Option<String>,
    /// Comma-separated training times.
    #[arg(long, global = true, allow_hyphen_values = true)]
    tau: Option<String>,
    /// Cross-check closed-form weights against the matrix gradient flow.
    #[arg(long, global = true)]
    validate_with_oracle: bool,
    /// Overrides any configuration key, as `key=value`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Weights, generated variances, emergence times and power-law fits.
    Run,
    /// Closed-form weight trajectories.
    Simulate,
    /// Generated-distribution variances.
    Sample,
    /// Emergence times and power-law fits.
    Emergence,
    /// KL divergence between generated and data distributions.
    Kl,
    /// Cross-checks closed forms against numerical oracles.
    Validate {
        #[arg(long, default_value = "all")]
        suite: String,
    },
}

impl Cli {
    fn experiment_config(&self) -> CliResult<ExperimentConfig> {
        let mut raw = match &self.config {
            Some(path) => RawConfig::from_file(path)?,
            None => RawConfig::default(),
        };
        if let Some(seed) = self.seed {
            raw.set("seed", &seed.to_string())?;
        }
        if let Some(out) = &self.out {
            raw.set("output.dir", &out.to_string_lossy())?;
        }
        if let Some(format) = self.format {
            raw.set("output.format", &format.to_string())?;
        }
        if let Some(arch) = &self.arch {
            raw.set("dynamics.arch", arch)?;
        }
        if let Some(tau) = &self.tau {
            raw.set("dynamics.tau", tau)?;
        }
        if self.validate_with_oracle {
            raw.set("oracle.validate", "true")?;
        }
        for o in &self.overrides {
            raw.apply_override(o)?;
        }
        ExperimentConfig::from_raw(&raw)
    }
}

fn execute(cli: &Cli) -> CliResult<()> {
    if let Command::Validate { suite } = &cli.command {
        let checks = run_suite(suite)?;
        for c in &checks {
            println!("{c}");
        }
        let failed = checks.iter().filter(|c| !c.passed()).count();
        println!("{} of {} checks passed", checks.len() - failed, checks.len());
        return if failed == 0 {
            Ok(())
        } else {
            Err(CliError::Validation(format!("{failed} checks out of bounds")))
        };
    }
    let cfg = cli.experiment_config()?;
    let manifest = match cli.command {
        Command::Run => run_experiment(cfg)?,
        Command::Simulate => commands::simulate(cfg)?,
        Command::Sample => commands::sample(cfg)?,
        Command::Emergence => commands::emergence_only(cfg)?,
        Command::Kl => commands::kl(cfg)?,
        Command::Validate { .. } => unreachable!("handled above"),
    };
    for f in &manifest.files {
        println!("{}", f.display());
    }
    if let Some(d) = manifest.oracle_max_relative_deviation {
        println!("oracle max relative deviation {d:e}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
