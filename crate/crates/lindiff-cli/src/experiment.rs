//! Sweeps over modes, noise scales and training times.

use std::path::PathBuf;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use lindiff::analysis::{emergence_time, power_law_fit, ModeEmergence};
use lindiff::closed_form_dynamics::{trajectories, two_layer_weight};
use lindiff::flow_matching_dynamics::{fm_ln_generated_variance, fm_optimal_weight, fm_sample_scaling_numeric};
use lindiff::gaussian_model::{empirical_moments, make_covariance};
use lindiff::io::read_matrix;
use lindiff::metrics::kl_spectra;
use lindiff::oracle::{discrete_gd_full, gradient_flow_full, Parametrization};
use lindiff::pf_sampler::generated_variance;
use lindiff::{
    Architecture, CovarianceModel, DMatrix, DVector, DataMoments, DynamicsConfig, Error, LossVariant, ModeTrajectory,
    OdeSolveConfig, PhiFactor, PowerLawFit, VariantTag,
};
use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::config::{ExperimentConfig, ModelSource};
use crate::emit::{fmt_f64, json_f64, write_json, Cell, Table};
use crate::error::{CliError, CliResult};

pub const TRAJECTORY_COLUMNS: &[&str] = &["mode_index", "lambda_target", "tau", "sigma", "psi", "lambda_gen"];
pub const EMERGENCE_COLUMNS: &[&str] = &["mode_index", "lambda_target", "tau_star", "branch", "excluded_flag"];
pub const WEIGHT_COLUMNS: &[&str] = &["mode_index", "lambda_target", "tau", "sigma", "psi", "psi_optimal"];
pub const SAMPLE_COLUMNS: &[&str] =
    &["mode_index", "lambda_target", "tau", "lambda_gen", "lambda_gen_tau0", "lambda_gen_converged"];
pub const KL_COLUMNS: &[&str] = &["tau", "mode_index", "lambda_target", "lambda_gen", "kl_mode", "kl_total"];

/// RK4 steps for flow-matching samplers without a closed form.
const FM_SAMPLER_STEPS: usize = 4000;

/// A configuration together with the data model it describes.
#[derive(Debug, Clone)]
pub struct Setup {
    pub cfg: ExperimentConfig,
    pub model: CovarianceModel,
    pub q: Vec<f64>,
}

impl Setup {
    pub fn load(cfg: ExperimentConfig) -> CliResult<Self> {
        let model = match &cfg.model {
            ModelSource::Synthetic { spec, dim } => make_covariance(spec, *dim, cfg.seed)?,
            ModelSource::Data(path) => {
                let samples = read_matrix(path).map_err(|e| match e {
                    Error::Io(msg) => CliError::config("model.data", format!("{}: {msg}", path.display())),
                    other => other.into(),
                })?;
                if samples.ncols() > 64 {
                    return Err(CliError::config("model.data", format!("{} columns exceed the limit of 64", samples.ncols())));
                }
                empirical_moments(&samples)?.eigen()?
            }
        };
        let q = cfg.init_q(model.dim())?;
        Ok(Self { cfg, model, q })
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    fn dynamics(&self, sigma: f64) -> DynamicsConfig {
        DynamicsConfig::new(self.cfg.eta, self.cfg.taus.clone(), self.q.clone(), sigma, self.cfg.architecture)
            .with_variant(self.cfg.variant)
    }
}

/// Closed-form weights, indexed `[sigma][mode]`.
pub fn weight_trajectories(setup: &Setup) -> CliResult<Vec<Vec<ModeTrajectory>>> {
    setup
        .cfg
        .sigmas
        .par_iter()
        .map(|&s| trajectories(&setup.dynamics(s), &setup.model).map_err(CliError::from))
        .collect()
}

/// Initial weight and learning rate seen by the effective one-layer map.
fn effective_one_layer(cfg: &ExperimentConfig, q: f64) -> Option<(f64, f64)> {
    match cfg.architecture {
        Architecture::OneLayer => Some((q, cfg.eta)),
        Architecture::Residual { c_skip, c_out } => Some((c_skip + c_out * q, c_out * c_out * cfg.eta)),
        _ => None,
    }
}

/// Rejects combinations with no generated-distribution law.
pub fn check_sampling_supported(cfg: &ExperimentConfig) -> CliResult<()> {
    if !matches!(cfg.variant.tag, VariantTag::Edm | VariantTag::FlowMatch) {
        return Err(CliError::config(
            "variant.name",
            "generated distributions are available for the edm and flow-match samplers",
        ));
    }
    if !matches!(
        cfg.architecture,
        Architecture::OneLayer | Architecture::TwoLayerSymmetric | Architecture::Residual { .. }
    ) {
        return Err(CliError::config(
            "dynamics.arch",
            "generated distributions are available for one-layer, two-layer and residual networks",
        ));
    }
    Ok(())
}

fn fm_numeric_variance(weight: impl Fn(f64) -> f64) -> CliResult<f64> {
    let c = fm_sample_scaling_numeric(weight, FM_SAMPLER_STEPS);
    if c.is_finite() {
        Ok(c * c)
    } else {
        Err(Error::Integration {
            at: 1.0,
            reason: "flow-matching sampler produced a non-finite scaling".into(),
        }
        .into())
    }
}

/// Generated variance of a mode after training for `tau`; `None` is the
/// fully trained limit.
pub fn mode_generated_variance(cfg: &ExperimentConfig, lambda: f64, q: f64, tau: Option<f64>) -> CliResult<f64> {
    check_sampling_supported(cfg)?;
    if tau == Some(0.0) {
        return Ok(tau0_asymptote(cfg, q));
    }
    let two_layer = cfg.architecture == Architecture::TwoLayerSymmetric;
    match cfg.variant.tag {
        VariantTag::Edm => {
            let phi = match (tau, effective_one_layer(cfg, q)) {
                (None, _) => PhiFactor::Converged { lambda },
                (Some(tau), Some((q, eta))) => PhiFactor::OneLayer { lambda, q, eta, tau },
                (Some(tau), None) => PhiFactor::TwoLayerSymmetric { lambda, q, eta: cfg.eta, tau },
            };
            Ok(generated_variance(&phi, &cfg.schedule)?)
        }
        _ => match (tau, effective_one_layer(cfg, q)) {
            (None, _) if two_layer && q > 0.0 => fm_numeric_variance(|t| fm_optimal_weight(lambda, t).max(0.0)),
            (None, _) if two_layer => Ok(1.0),
            (None, _) => Ok(lambda),
            (Some(tau), Some((q, eta))) => Ok(fm_ln_generated_variance(tau, lambda, q, eta)?.exp()),
            (Some(tau), None) => {
                fm_numeric_variance(|t| two_layer_weight(&LossVariant::FLOW_MATCH, lambda, t, q, cfg.eta, tau).unwrap_or(f64::NAN))
            }
        },
    }
}

/// `λ̃` before training, from the constant-weight sampler: `σ_T²(σ_0/σ_T)^{2(1−Q)}`
/// for EDM and `e^{2Q}` for flow matching.
pub fn tau0_asymptote(cfg: &ExperimentConfig, q: f64) -> f64 {
    let q = effective_one_layer(cfg, q).map_or(q, |(q, _)| q);
    match cfg.variant.tag {
        VariantTag::FlowMatch => (2.0 * q).exp(),
        _ => {
            let (s0, st) = (cfg.schedule.sigma_min, cfg.schedule.sigma_max);
            st * st * (s0 / st).powf(2.0 * (1.0 - q))
        }
    }
}

/// Generated variances indexed `[mode][tau]`.
pub fn generated_variances(setup: &Setup, taus: &[f64]) -> CliResult<Vec<Vec<f64>>> {
    check_sampling_supported(&setup.cfg)?;
    setup
        .model
        .spectrum()
        .par_iter()
        .zip(setup.q.par_iter())
        .map(|(&lambda, &q)| {
            taus.iter()
                .map(|&t| mode_generated_variance(&setup.cfg, lambda, q, Some(t)))
                .collect::<CliResult<Vec<_>>>()
        })
        .collect()
}

/// `(λ̃(0), λ̃(∞))` for every mode.
pub fn generated_limits(setup: &Setup) -> CliResult<Vec<(f64, f64)>> {
    setup
        .model
        .spectrum()
        .par_iter()
        .zip(setup.q.par_iter())
        .map(|(&lambda, &q)| {
            Ok((
                mode_generated_variance(&setup.cfg, lambda, q, Some(0.0))?,
                mode_generated_variance(&setup.cfg, lambda, q, None)?,
            ))
        })
        .collect()
}

pub fn trajectories_table(setup: &Setup, weights: &[Vec<ModeTrajectory>], generated: &[Vec<f64>]) -> Table {
    let mut t = Table::new(TRAJECTORY_COLUMNS);
    for (k, &lambda) in setup.model.spectrum().iter().enumerate() {
        for (i, &tau) in setup.cfg.taus.iter().enumerate() {
            for (j, &sigma) in setup.cfg.sigmas.iter().enumerate() {
                t.push(vec![
                    Cell::Int(k),
                    Cell::Float(lambda),
                    Cell::Float(tau),
                    Cell::Float(sigma),
                    Cell::Float(weights[j][k].values[i]),
                    Cell::Float(generated[k][i]),
                ]);
            }
        }
    }
    t
}

pub fn weights_table(setup: &Setup, weights: &[Vec<ModeTrajectory>]) -> Table {
    let mut t = Table::new(WEIGHT_COLUMNS);
    for (k, &lambda) in setup.model.spectrum().iter().enumerate() {
        for (i, &tau) in setup.cfg.taus.iter().enumerate() {
            for (j, &sigma) in setup.cfg.sigmas.iter().enumerate() {
                let tr = &weights[j][k];
                t.push(vec![
                    Cell::Int(k),
                    Cell::Float(lambda),
                    Cell::Float(tau),
                    Cell::Float(sigma),
                    Cell::Float(tr.values[i]),
                    Cell::Float(tr.target),
                ]);
            }
        }
    }
    t
}

pub fn sample_table(setup: &Setup, taus: &[f64], generated: &[Vec<f64>], limits: &[(f64, f64)]) -> Table {
    let mut t = Table::new(SAMPLE_COLUMNS);
    for (k, &lambda) in setup.model.spectrum().iter().enumerate() {
        let small = tau0_asymptote(&setup.cfg, setup.q[k]);
        for (i, &tau) in taus.iter().enumerate() {
            t.push(vec![
                Cell::Int(k),
                Cell::Float(lambda),
                Cell::Float(tau),
                Cell::Float(generated[k][i]),
                Cell::Float(small),
                Cell::Float(limits[k].1),
            ]);
        }
    }
    t
}

#[derive(Debug, Clone)]
pub struct EmergenceResult {
    pub modes: Vec<ModeEmergence>,
    pub fits: Vec<PowerLawFit>,
    /// Why no branch could be fitted, when that happens.
    pub fit_note: Option<String>,
}

pub fn emergence(setup: &Setup, generated: &[Vec<f64>], limits: &[(f64, f64)]) -> CliResult<EmergenceResult> {
    let cfg = &setup.cfg;
    let modes = setup
        .model
        .spectrum()
        .iter()
        .zip(generated.iter().zip(limits))
        .map(|(&lambda, (values, &(v0, target)))| {
            Ok(ModeEmergence {
                lambda,
                tau: emergence_time(&cfg.taus, values, v0, target, cfg.criterion)?,
                v0,
                target,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let (fits, fit_note) = match power_law_fit(&modes, &cfg.gray_zone) {
        Ok(f) => (f, None),
        Err(Error::InsufficientData(msg)) => (Vec::new(), Some(msg)),
        Err(e) => return Err(e.into()),
    };
    Ok(EmergenceResult { modes, fits, fit_note })
}

pub fn emergence_table(cfg: &ExperimentConfig, result: &EmergenceResult) -> Table {
    let mut t = Table::new(EMERGENCE_COLUMNS);
    for (k, m) in result.modes.iter().enumerate() {
        let branch = if m.target > m.v0 {
            "increasing"
        } else if m.target < m.v0 {
            "decreasing"
        } else {
            "none"
        };
        t.push(vec![
            Cell::Int(k),
            Cell::Float(m.lambda),
            m.tau.into(),
            Cell::Text(branch.to_string()),
            Cell::Flag(cfg.gray_zone.excludes(m.v0, m.target)),
        ]);
    }
    t
}

pub fn fit_json(cfg: &ExperimentConfig, result: &EmergenceResult) -> Value {
    let branches: Vec<Value> = result
        .fits
        .iter()
        .map(|f| {
            json!({
                "branch": f.branch.to_string(),
                "alpha": json_f64(f.alpha),
                "intercept": json_f64(f.intercept),
                "r_squared": json_f64(f.r_squared),
                "n_used": f.n_used,
            })
        })
        .collect();
    let criterion = match cfg.criterion {
        lindiff::EmergenceCriterion::Geometric => "geometric",
        lindiff::EmergenceCriterion::Harmonic => "harmonic",
    };
    let mut obj = Map::new();
    obj.insert("criterion".into(), criterion.into());
    obj.insert(
        "gray_zone".into(),
        json!({ "lower": json_f64(cfg.gray_zone.lower), "upper": json_f64(cfg.gray_zone.upper) }),
    );
    obj.insert("branches".into(), Value::Array(branches));
    if let Some(note) = &result.fit_note {
        obj.insert("note".into(), note.as_str().into());
    }
    Value::Object(obj)
}

pub fn kl_table(setup: &Setup, taus: &[f64], generated: &[Vec<f64>]) -> CliResult<Table> {
    let mut t = Table::new(KL_COLUMNS);
    let spectrum = setup.model.spectrum();
    for (i, &tau) in taus.iter().enumerate() {
        let gen: Vec<f64> = generated.iter().map(|g| g[i]).collect();
        let kl = kl_spectra(&gen, spectrum)?;
        for (k, &lambda) in spectrum.iter().enumerate() {
            t.push(vec![
                Cell::Float(tau),
                Cell::Int(k),
                Cell::Float(lambda),
                Cell::Float(gen[k]),
                Cell::Float(kl.per_mode[k]),
                Cell::Float(kl.total),
            ]);
        }
    }
    Ok(t)
}

/// A closed-form value that disagrees with the matrix oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub sigma: f64,
    pub tau: f64,
    pub mode: usize,
    /// Index of the second mode for off-diagonal entries.
    pub other: usize,
    pub closed_form: f64,
    pub oracle: f64,
    pub relative: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub max_relative_deviation: f64,
    /// The largest deviations, worst first.
    pub worst: Vec<Mismatch>,
}

impl OracleReport {
    pub fn render(&self) -> String {
        let mut s = format!("max relative deviation {:.3e}\n", self.max_relative_deviation);
        s.push_str("sigma,tau,mode,other,closed_form,oracle,relative\n");
        for m in &self.worst {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                fmt_f64(m.sigma),
                fmt_f64(m.tau),
                m.mode,
                m.other,
                fmt_f64(m.closed_form),
                fmt_f64(m.oracle),
                fmt_f64(m.relative)
            ));
        }
        s
    }
}

/// Compares the closed-form weights with full-matrix training started
/// from the aligned initialization. Entries are read in the eigenbasis;
/// diagonal entries are measured against their closed-form value, floored
/// at a millionth of the weight scale, and off-diagonal entries against the
/// weight scale itself. The scale is the largest diagonal value or initial
/// weight.
pub fn oracle_check(setup: &Setup, weights: &[Vec<ModeTrajectory>]) -> CliResult<OracleReport> {
    let cfg = &setup.cfg;
    let model = &setup.model;
    let d = model.dim();
    let moments = DataMoments::zero_mean(model);
    let b0 = DVector::zeros(d);
    let u = model.basis();
    let solver = OdeSolveConfig::adaptive(1e-12, 1e-15);
    let (w0, param) = match cfg.architecture {
        Architecture::OneLayer | Architecture::DiscreteGd => (model.compose(&setup.q), Some(Parametrization::Dense)),
        Architecture::TwoLayerSymmetric => (model.compose(&setup.q), Some(Parametrization::SymmetricTwoLayer)),
        Architecture::Residual { c_skip, c_out } => {
            let eff: Vec<f64> = setup.q.iter().map(|q| c_skip + c_out * q).collect();
            (model.compose(&eff), Some(Parametrization::Residual { c_skip, c_out }))
        }
        Architecture::DeepLinear { .. } => {
            return Err(CliError::config("oracle.validate", "no matrix oracle exists for deep networks"));
        }
    };
    let init_scale = w0.amax();
    let per_sigma: Vec<Vec<Mismatch>> = cfg
        .sigmas
        .par_iter()
        .zip(weights.par_iter())
        .map(|(&sigma, trajs)| -> CliResult<Vec<Mismatch>> {
            let mats: Vec<DMatrix<f64>> = if cfg.architecture == Architecture::DiscreteGd {
                let steps = cfg.taus.last().copied().unwrap_or(0.0) as usize;
                let iters = discrete_gd_full(&moments, sigma, cfg.eta, &w0, &b0, steps, &cfg.variant);
                cfg.taus.iter().map(|&t| iters[t as usize].0.clone()).collect()
            } else {
                let p = param.expect("every continuous architecture has a parametrization");
                gradient_flow_full(&moments, sigma, cfg.eta, &w0, &b0, &cfg.taus, &cfg.variant, p, &solver)?.weights
            };
            let mut out = Vec::new();
            for (i, w) in mats.iter().enumerate() {
                let rot = u.transpose() * w * u;
                let scale = trajs.iter().map(|t| t.values[i].abs()).fold(init_scale, f64::max).max(f64::MIN_POSITIVE);
                for k in 0..d {
                    for m in 0..d {
                        let closed = if k == m { trajs[k].values[i] } else { 0.0 };
                        let denom = if k == m { closed.abs().max(1e-6 * scale) } else { scale };
                        out.push(Mismatch {
                            sigma,
                            tau: cfg.taus[i],
                            mode: k,
                            other: m,
                            closed_form: closed,
                            oracle: rot[(k, m)],
                            relative: (rot[(k, m)] - closed).abs() / denom,
                        });
                    }
                }
            }
            Ok(out)
        })
        .collect::<CliResult<_>>()?;
    let mut all: Vec<Mismatch> = per_sigma.into_iter().flatten().collect();
    all.sort_by(|a, b| b.relative.total_cmp(&a.relative));
    all.truncate(20);
    Ok(OracleReport {
        max_relative_deviation: all.first().map_or(0.0, |m| m.relative),
        worst: all,
    })
}

/// Wall-clock bookkeeping, the only nondeterministic part of a manifest.
#[derive(Debug, Clone, Copy)]
pub struct Clock {
    started: Instant,
    started_unix: f64,
}

impl Clock {
    pub fn start() -> Self {
        let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
        Self {
            started: Instant::now(),
            started_unix,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub command: String,
    pub files: Vec<PathBuf>,
    pub oracle_max_relative_deviation: Option<f64>,
    pub json: Value,
}

pub fn create_out_dir(cfg: &ExperimentConfig) -> CliResult<()> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| CliError::io(&cfg.out_dir, e))
}

/// Writes `manifest.json` next to the emitted files.
pub fn write_manifest(
    setup: &Setup,
    command: &str,
    mut files: Vec<PathBuf>,
    oracle: Option<f64>,
    clock: Clock,
) -> CliResult<Manifest> {
    let cfg = &setup.cfg;
    let path = cfg.out_dir.join("manifest.json");
    files.push(path.clone());
    let names: Vec<Value> = files
        .iter()
        .map(|p| p.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned()).into())
        .collect();
    let config: Map<String, Value> = cfg.echo.iter().map(|(k, v)| (k.clone(), Value::from(v.as_str()))).collect();
    let json = json!({
        "tool": "lindiff",
        "versions": { "lindiff": lindiff::VERSION, "lindiff-cli": env!("CARGO_PKG_VERSION") },
        "command": command,
        "seed": cfg.seed,
        "config": config,
        "dim": setup.dim(),
        "spectrum": setup.model.spectrum().iter().map(|&l| json_f64(l)).collect::<Vec<_>>(),
        "files": names,
        "oracle_max_relative_deviation": oracle.map_or(Value::Null, json_f64),
        "wall_clock": {
            "started_unix_seconds": json_f64(clock.started_unix),
            "elapsed_seconds": json_f64(clock.started.elapsed().as_secs_f64()),
        },
    });
    write_json(&path, &json)?;
    Ok(Manifest {
        command: command.to_string(),
        files,
        oracle_max_relative_deviation: oracle,
        json,
    })
}

/// Full pipeline: weight trajectories with generated variances, emergence
/// times, power-law fits and the manifest. With oracle validation enabled
/// a deviation above tolerance leaves the files in place, adds
/// `oracle_report.csv` and returns a validation error.
pub fn run_experiment(cfg: ExperimentConfig) -> CliResult<Manifest> {
    let clock = Clock::start();
    check_sampling_supported(&cfg)?;
    let setup = Setup::load(cfg)?;
    let cfg = &setup.cfg;
    create_out_dir(cfg)?;
    let weights = weight_trajectories(&setup)?;
    let generated = generated_variances(&setup, &cfg.taus)?;
    let limits = generated_limits(&setup)?;
    let em = emergence(&setup, &generated, &limits)?;

    let mut files = vec![
        trajectories_table(&setup, &weights, &generated).write(&cfg.out_dir, "trajectories", cfg.format)?,
        emergence_table(cfg, &em).write(&cfg.out_dir, "emergence", cfg.format)?,
    ];
    let fit_path = cfg.out_dir.join("fit.json");
    write_json(&fit_path, &fit_json(cfg, &em))?;
    files.push(fit_path);

    let gate = OracleGate::run(&setup, &weights, &mut files)?;
    let manifest = write_manifest(&setup, "run", files, gate.deviation, clock)?;
    gate.finish(manifest)
}

/// Optional oracle cross-check shared by the commands that emit weights.
pub struct OracleGate {
    pub deviation: Option<f64>,
    failure: Option<CliError>,
}

impl OracleGate {
    /// Runs the check when enabled. A deviation above tolerance writes
    /// `oracle_report.csv` and is reported by [`OracleGate::finish`].
    pub fn run(setup: &Setup, weights: &[Vec<ModeTrajectory>], files: &mut Vec<PathBuf>) -> CliResult<Self> {
        let cfg = &setup.cfg;
        if !cfg.validate_with_oracle {
            return Ok(Self { deviation: None, failure: None });
        }
        let report = oracle_check(setup, weights)?;
        let mut failure = None;
        if !(report.max_relative_deviation <= cfg.oracle_tolerance) {
            let path = cfg.out_dir.join("oracle_report.csv");
            std::fs::write(&path, report.render().lines().skip(1).collect::<Vec<_>>().join("\n") + "\n")
                .map_err(|e| CliError::io(&path, e))?;
            files.push(path);
            failure = Some(CliError::Validation(format!(
                "closed form disagrees with the oracle beyond tolerance {:e}\n{}",
                cfg.oracle_tolerance,
                report.render()
            )));
        }
        Ok(Self {
            deviation: Some(report.max_relative_deviation),
            failure,
        })
    }

    pub fn finish(self, manifest: Manifest) -> CliResult<Manifest> {
        match self.failure {
            Some(e) => Err(e),
            None => Ok(manifest),
        }
    }
}
