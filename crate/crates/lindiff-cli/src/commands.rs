//! Subcommands other than `run`, each writing its table and a manifest.

use std::path::PathBuf;

use crate::config::ExperimentConfig;
use crate::emit::write_json;
use crate::error::{CliError, CliResult};
use crate::experiment::{
    check_sampling_supported, create_out_dir, emergence, emergence_table, fit_json, generated_limits,
    generated_variances, kl_table, sample_table, weight_trajectories, weights_table, write_manifest, Clock, Manifest, OracleGate,
    Setup,
};
use crate::validate::{run_suite, Check};

/// Closed-form weights for every mode, noise scale and training time.
pub fn simulate(cfg: ExperimentConfig) -> CliResult<Manifest> {
    let clock = Clock::start();
    let setup = Setup::load(cfg)?;
    create_out_dir(&setup.cfg)?;
    let weights = weight_trajectories(&setup)?;
    let mut files = vec![weights_table(&setup, &weights).write(&setup.cfg.out_dir, "weights", setup.cfg.format)?];
    let gate = OracleGate::run(&setup, &weights, &mut files)?;
    let manifest = write_manifest(&setup, "simulate", files, gate.deviation, clock)?;
    gate.finish(manifest)
}

/// Generated-distribution variances together with their two limits.
pub fn sample(cfg: ExperimentConfig) -> CliResult<Manifest> {
    let clock = Clock::start();
    check_sampling_supported(&cfg)?;
    let setup = Setup::load(cfg)?;
    let cfg = &setup.cfg;
    create_out_dir(cfg)?;
    let generated = generated_variances(&setup, &cfg.taus)?;
    let limits = generated_limits(&setup)?;
    let path = sample_table(&setup, &cfg.taus, &generated, &limits).write(&cfg.out_dir, "samples", cfg.format)?;
    write_manifest(&setup, "sample", vec![path], None, clock)
}

pub fn emergence_only(cfg: ExperimentConfig) -> CliResult<Manifest> {
    let clock = Clock::start();
    check_sampling_supported(&cfg)?;
    let setup = Setup::load(cfg)?;
    let cfg = &setup.cfg;
    create_out_dir(cfg)?;
    let generated = generated_variances(&setup, &cfg.taus)?;
    let limits = generated_limits(&setup)?;
    let em = emergence(&setup, &generated, &limits)?;
    let table = emergence_table(cfg, &em).write(&cfg.out_dir, "emergence", cfg.format)?;
    let fit: PathBuf = cfg.out_dir.join("fit.json");
    write_json(&fit, &fit_json(cfg, &em))?;
    write_manifest(&setup, "emergence", vec![table, fit], None, clock)
}

/// Per-mode and total KL divergence from the data distribution.
pub fn kl(cfg: ExperimentConfig) -> CliResult<Manifest> {
    let clock = Clock::start();
    check_sampling_supported(&cfg)?;
    let setup = Setup::load(cfg)?;
    let cfg = &setup.cfg;
    create_out_dir(cfg)?;
    let generated = generated_variances(&setup, &cfg.taus)?;
    let path = kl_table(&setup, &cfg.taus, &generated)?.write(&cfg.out_dir, "kl", cfg.format)?;
    write_manifest(&setup, "kl", vec![path], None, clock)
}

/// Runs a validation suite and fails if any check is out of bounds.
pub fn validate(suite: &str) -> CliResult<Vec<Check>> {
    let checks = run_suite(suite)?;
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed()).map(Check::to_string).collect();
    if failed.is_empty() {
        Ok(checks)
    } else {
        Err(CliError::Validation(failed.join("\n")))
    }
}
