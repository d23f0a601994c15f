//! Flat `key = value` experiment configuration.
//!
//! A config file holds one `section.key = value` pair per line. Blank lines
//! and lines starting with `#` are skipped, and lists are comma separated.
//! Command-line flags and `--set key=value` overrides are applied on top of
//! the file before the typed [`ExperimentConfig`] is built.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use lindiff::gaussian_model::SpectrumKind;
use lindiff::linalg::geomspace;
use lindiff::{Architecture, EmergenceCriterion, GrayZone, LossVariant, NoiseSchedule, Schedule, SpectrumSpec, VariantTag};

use crate::error::{CliError, CliResult};

const KNOWN_KEYS: &[&str] = &[
    "seed",
    "output.dir",
    "output.format",
    "model.dim",
    "model.data",
    "spectrum.kind",
    "spectrum.mu",
    "spectrum.sigma",
    "spectrum.lo",
    "spectrum.hi",
    "spectrum.values",
    "spectrum.normalize",
    "dynamics.arch",
    "dynamics.depth",
    "dynamics.c_skip",
    "dynamics.c_out",
    "dynamics.eta",
    "dynamics.q",
    "dynamics.sigma",
    "dynamics.tau",
    "dynamics.tau_min",
    "dynamics.tau_max",
    "dynamics.tau_points",
    "variant.name",
    "variant.schedule",
    "schedule.sigma_min",
    "schedule.sigma_max",
    "schedule.rho",
    "schedule.num_steps",
    "analysis.criterion",
    "analysis.gray_zone.lower",
    "analysis.gray_zone.upper",
    "oracle.validate",
    "oracle.tolerance",
];

/// Unparsed key-value pairs in sorted order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut cfg = RawConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Usage(format!("config line {}: expected `key = value`, got `{line}`", i + 1)));
            };
            let key = key.trim();
            if cfg.entries.contains_key(key) {
                return Err(CliError::config(key, format!("set twice (line {})", i + 1)));
            }
            cfg.set(key, value.trim())?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(CliError::config(key, "unknown key"));
        }
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> CliResult<()> {
        let Some((key, value)) = assignment.split_once('=') else {
            return Err(CliError::Usage(format!("--set expects key=value, got `{assignment}`")));
        };
        self.set(key.trim(), value.trim())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    fn parsed<T: FromStr>(&self, key: &str, default: T) -> CliResult<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| CliError::config(key, format!("cannot parse `{v}` as {}", std::any::type_name::<T>()))),
        }
    }

    fn list(&self, key: &str) -> CliResult<Option<Vec<f64>>> {
        let Some(v) = self.get(key) else { return Ok(None) };
        v.split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::config(key, format!("cannot parse `{}` as a number", s.trim())))
            })
            .collect::<CliResult<Vec<_>>>()
            .map(Some)
    }

    fn boolean(&self, key: &str, default: bool) -> CliResult<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true" | "yes" | "1") => Ok(true),
            Some("false" | "no" | "0") => Ok(false),
            Some(v) => Err(CliError::config(key, format!("expected true or false, got `{v}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(&self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

impl FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("expected csv or json, got `{other}`")),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSource {
    Synthetic { spec: SpectrumSpec, dim: usize },
    /// Sample matrix in CSV or binary form.
    Data(PathBuf),
}

/// Fully validated experiment settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelSource,
    pub architecture: Architecture,
    pub variant: LossVariant,
    pub eta: f64,
    /// One value for every mode, or a single value broadcast to all.
    pub q: Vec<f64>,
    /// Noise scales (times, for time-indexed variants) recorded in the
    /// weight tables.
    pub sigmas: Vec<f64>,
    pub taus: Vec<f64>,
    pub schedule: NoiseSchedule,
    pub criterion: EmergenceCriterion,
    pub gray_zone: GrayZone,
    pub out_dir: PathBuf,
    pub format: Format,
    pub seed: u64,
    pub validate_with_oracle: bool,
    pub oracle_tolerance: f64,
    /// Every key with its effective value, echoed into the manifest.
    pub echo: BTreeMap<String, String>,
}

fn parse_arch(raw: &RawConfig) -> CliResult<Architecture> {
    let name = raw.get("dynamics.arch").unwrap_or("one-layer");
    Ok(match name {
        "one-layer" => Architecture::OneLayer,
        "two-layer" => Architecture::TwoLayerSymmetric,
        "deep" => Architecture::DeepLinear {
            depth: raw.parsed("dynamics.depth", 3usize)?,
        },
        "residual" => Architecture::Residual {
            c_skip: raw.parsed("dynamics.c_skip", 0.0)?,
            c_out: raw.parsed("dynamics.c_out", 1.0)?,
        },
        "discrete-gd" => Architecture::DiscreteGd,
        other => {
            return Err(CliError::config(
                "dynamics.arch",
                format!("expected one-layer, two-layer, deep, residual or discrete-gd, got `{other}`"),
            ))
        }
    })
}

fn parse_variant(raw: &RawConfig) -> CliResult<LossVariant> {
    let tag = match raw.get("variant.name").unwrap_or("edm") {
        "edm" => VariantTag::Edm,
        "x-pred" => VariantTag::XPred,
        "eps-pred" => VariantTag::EpsPred,
        "v-pred" => VariantTag::VPred,
        "flow-match" => VariantTag::FlowMatch,
        other => {
            return Err(CliError::config(
                "variant.name",
                format!("expected edm, x-pred, eps-pred, v-pred or flow-match, got `{other}`"),
            ))
        }
    };
    let default = match tag {
        VariantTag::Edm => "edm",
        VariantTag::FlowMatch => "linear",
        _ => "cosine",
    };
    let schedule = match raw.get("variant.schedule").unwrap_or(default) {
        "edm" => Schedule::Edm,
        "cosine" => Schedule::Cosine,
        "linear" => Schedule::Linear,
        other => {
            return Err(CliError::config(
                "variant.schedule",
                format!("expected edm, cosine or linear, got `{other}`"),
            ))
        }
    };
    let ok = match tag {
        VariantTag::Edm => schedule == Schedule::Edm,
        VariantTag::FlowMatch => schedule == Schedule::Linear,
        _ => schedule != Schedule::Edm,
    };
    if !ok {
        return Err(CliError::config("variant.schedule", format!("{schedule:?} does not apply to {tag:?}")));
    }
    Ok(LossVariant::new(tag, schedule))
}

fn parse_model(raw: &RawConfig) -> CliResult<ModelSource> {
    if let Some(path) = raw.get("model.data") {
        return Ok(ModelSource::Data(PathBuf::from(path)));
    }
    let dim: usize = raw.parsed("model.dim", 8)?;
    if dim == 0 || dim > 64 {
        return Err(CliError::config("model.dim", format!("must lie in 1..=64, got {dim}")));
    }
    let kind = match raw.get("spectrum.kind").unwrap_or("log-normal") {
        "log-normal" => SpectrumKind::LogNormal {
            mu: raw.parsed("spectrum.mu", 0.0)?,
            sigma: raw.parsed("spectrum.sigma", 1.0)?,
        },
        "log-spaced" => SpectrumKind::LogSpaced {
            lo: raw.parsed("spectrum.lo", 1e-2)?,
            hi: raw.parsed("spectrum.hi", 1e2)?,
        },
        "explicit" => SpectrumKind::Explicit(
            raw.list("spectrum.values")?
                .ok_or_else(|| CliError::config("spectrum.values", "required by the explicit spectrum"))?,
        ),
        other => {
            return Err(CliError::config(
                "spectrum.kind",
                format!("expected log-normal, log-spaced or explicit, got `{other}`"),
            ))
        }
    };
    let normalize = raw.boolean("spectrum.normalize", matches!(kind, SpectrumKind::LogNormal { .. }))?;
    let spec = SpectrumSpec {
        kind,
        normalize_mean_to_one: normalize,
    };
    spec.validate(dim)?;
    Ok(ModelSource::Synthetic { spec, dim })
}

fn parse_taus(raw: &RawConfig, arch: Architecture) -> CliResult<Vec<f64>> {
    let taus = match raw.list("dynamics.tau")? {
        Some(t) => t,
        None => {
            let lo: f64 = raw.parsed("dynamics.tau_min", 1e-3)?;
            let hi: f64 = raw.parsed("dynamics.tau_max", 1e3)?;
            let n: usize = raw.parsed("dynamics.tau_points", 121)?;
            if !(lo > 0.0) || !lo.is_finite() {
                return Err(CliError::config("dynamics.tau_min", "must be positive"));
            }
            if !(hi > lo) || !hi.is_finite() {
                return Err(CliError::config("dynamics.tau_max", "must be finite and exceed tau_min"));
            }
            if n < 2 {
                return Err(CliError::config("dynamics.tau_points", "must be at least 2"));
            }
            if arch == Architecture::DiscreteGd {
                let mut steps: Vec<f64> = geomspace(lo.max(1.0), hi, n).into_iter().map(f64::round).collect();
                steps.dedup();
                steps
            } else {
                geomspace(lo, hi, n)
            }
        }
    };
    if taus.is_empty() || taus.iter().any(|&t| !(t >= 0.0) || !t.is_finite()) {
        return Err(CliError::config("dynamics.tau", "values must be finite and nonnegative"));
    }
    if taus.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CliError::config("dynamics.tau", "values must be strictly increasing"));
    }
    if arch == Architecture::DiscreteGd && taus.iter().any(|t| t.fract() != 0.0) {
        return Err(CliError::config("dynamics.tau", "discrete gradient descent counts whole steps"));
    }
    Ok(taus)
}

impl ExperimentConfig {
    pub fn from_raw(raw: &RawConfig) -> CliResult<Self> {
        let model = parse_model(raw)?;
        let architecture = parse_arch(raw)?;
        let variant = parse_variant(raw)?;
        let eta: f64 = raw.parsed("dynamics.eta", 1.0)?;
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(CliError::config("dynamics.eta", "must be positive"));
        }
        let q = raw.list("dynamics.q")?.unwrap_or_else(|| vec![0.1]);
        if q.is_empty() || q.iter().any(|v| !v.is_finite()) {
            return Err(CliError::config("dynamics.q", "values must be finite"));
        }
        let time_indexed = variant.tag != VariantTag::Edm;
        let default_sigmas = if time_indexed { vec![0.1, 0.5, 0.9] } else { vec![0.1, 1.0, 10.0] };
        let sigmas = raw.list("dynamics.sigma")?.unwrap_or(default_sigmas);
        if sigmas.is_empty() {
            return Err(CliError::config("dynamics.sigma", "needs at least one value"));
        }
        for &s in &sigmas {
            let ok = if time_indexed { s > 0.0 && s < 1.0 } else { s > 0.0 && s.is_finite() };
            if !ok {
                let range = if time_indexed { "inside (0, 1)" } else { "positive" };
                return Err(CliError::config("dynamics.sigma", format!("{s} is not {range}")));
            }
        }
        let taus = parse_taus(raw, architecture)?;
        let schedule = NoiseSchedule {
            sigma_min: raw.parsed("schedule.sigma_min", 0.002)?,
            sigma_max: raw.parsed("schedule.sigma_max", 80.0)?,
            rho: raw.parsed("schedule.rho", 7.0)?,
            num_steps: raw.parsed("schedule.num_steps", 80)?,
        };
        schedule.validate()?;
        let criterion: EmergenceCriterion = raw.get("analysis.criterion").unwrap_or("geometric").parse()?;
        let gray_zone = GrayZone::new(
            raw.parsed("analysis.gray_zone.lower", 0.5)?,
            raw.parsed("analysis.gray_zone.upper", 2.0)?,
        )?;
        let format = raw.parsed("output.format", Format::Csv)?;
        let oracle_tolerance: f64 = raw.parsed("oracle.tolerance", 1e-6)?;
        if !(oracle_tolerance > 0.0) {
            return Err(CliError::config("oracle.tolerance", "must be positive"));
        }
        let mut echo = BTreeMap::new();
        for key in KNOWN_KEYS {
            if let Some(v) = raw.get(key) {
                echo.insert(key.to_string(), v.to_string());
            }
        }
        Ok(ExperimentConfig {
            model,
            architecture,
            variant,
            eta,
            q,
            sigmas,
            taus,
            schedule,
            criterion,
            gray_zone,
            out_dir: PathBuf::from(raw.get("output.dir").unwrap_or("out")),
            format,
            seed: raw.parsed("seed", 0u64)?,
            validate_with_oracle: raw.boolean("oracle.validate", false)?,
            oracle_tolerance,
            echo,
        })
    }

    /// Initial weights for `dim` modes.
    pub fn init_q(&self, dim: usize) -> CliResult<Vec<f64>> {
        match self.q.len() {
            1 => Ok(vec![self.q[0]; dim]),
            n if n == dim => Ok(self.q.clone()),
            n => Err(CliError::config("dynamics.q", format!("expected 1 or {dim} values, got {n}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_blank_lines_and_lists() {
        let raw = RawConfig::parse("# comment\n\nmodel.dim = 4\ndynamics.q = 0.1, 0.2,0.3 ,0.4\n").unwrap();
        let cfg = ExperimentConfig::from_raw(&raw).unwrap();
        assert_eq!(cfg.q, vec![0.1, 0.2, 0.3, 0.4]);
        assert_eq!(cfg.init_q(4).unwrap().len(), 4);
        assert!(cfg.init_q(5).is_err());
    }

    #[test]
    fn errors_name_the_key() {
        for (text, key) in [
            ("analysis.gray_zone.lower = 1.5", "analysis.gray_zone.lower"),
            ("dynamics.eta = -1", "dynamics.eta"),
            ("dynamics.arch = cnn", "dynamics.arch"),
            ("bogus.key = 1", "bogus.key"),
            ("model.dim = x", "model.dim"),
            ("dynamics.tau = 1, 0.5", "dynamics.tau"),
        ] {
            let err = RawConfig::parse(text).and_then(|r| ExperimentConfig::from_raw(&r)).unwrap_err();
            assert!(err.to_string().contains(key), "{text}: {err}");
        }
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        assert!(RawConfig::parse("seed = 1\nseed = 2").is_err());
    }

    #[test]
    fn flow_matching_defaults_to_times() {
        let raw = RawConfig::parse("variant.name = flow-match").unwrap();
        let cfg = ExperimentConfig::from_raw(&raw).unwrap();
        assert_eq!(cfg.variant, LossVariant::FLOW_MATCH);
        assert!(cfg.sigmas.iter().all(|&t| t > 0.0 && t < 1.0));
        let bad = RawConfig::parse("variant.name = flow-match\ndynamics.sigma = 2").unwrap();
        assert!(ExperimentConfig::from_raw(&bad).is_err());
    }
}
