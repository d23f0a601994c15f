//! Emergence times, power-law fits and eigenframe alignment.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Threshold between an initial value `v0` and a target `v∞`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmergenceCriterion {
    /// `√(v0 v∞)`.
    Geometric,
    /// `2 v0 v∞/(v0 + v∞)`.
    Harmonic,
}

impl EmergenceCriterion {
    /// `None` when `v0 = v∞` or the mean is undefined for these values.
    pub fn threshold(&self, v0: f64, v_inf: f64) -> Option<f64> {
        if v0 == v_inf || !(v0 > 0.0) || !(v_inf > 0.0) || !v0.is_finite() || !v_inf.is_finite() {
            return None;
        }
        let t = match self {
            EmergenceCriterion::Geometric => v0.sqrt() * v_inf.sqrt(),
            EmergenceCriterion::Harmonic => 2.0 * v0 * v_inf / (v0 + v_inf),
        };
        let (lo, hi) = if v0 < v_inf { (v0, v_inf) } else { (v_inf, v0) };
        (t > lo && t < hi).then_some(t)
    }
}

impl std::str::FromStr for EmergenceCriterion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geometric" => Ok(Self::Geometric),
            "harmonic" => Ok(Self::Harmonic),
            other => Err(Error::param("analysis.criterion", format!("expected geometric or harmonic, got `{other}`"))),
        }
    }
}

/// Modes whose `v0/target` lies in `[lower, upper]` are left out of fits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrayZone {
    pub lower: f64,
    pub upper: f64,
}

impl Default for GrayZone {
    fn default() -> Self {
        Self { lower: 0.5, upper: 2.0 }
    }
}

impl GrayZone {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        let gz = Self { lower, upper };
        gz.validate()?;
        Ok(gz)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lower > 0.0 && self.lower < 1.0) {
            return Err(Error::param("analysis.gray_zone.lower", format!("must lie in (0, 1), got {}", self.lower)));
        }
        if !(self.upper > 1.0) || !self.upper.is_finite() {
            return Err(Error::param("analysis.gray_zone.upper", format!("must exceed 1, got {}", self.upper)));
        }
        Ok(())
    }

    pub fn excludes(&self, v0: f64, target: f64) -> bool {
        let r = v0 / target;
        r >= self.lower && r <= self.upper
    }
}

/// First passage of a sampled trajectory through the criterion threshold.
///
/// Between the bracketing grid points the crossing is located by linear
/// interpolation of `ln v` against `ln τ`. When a bracketing `τ` or value
/// is not positive the interpolation falls back to linear in `(τ, v)`.
pub fn emergence_time(taus: &[f64], values: &[f64], v0: f64, v_inf: f64, crit: EmergenceCriterion) -> Result<Option<f64>> {
    if taus.len() != values.len() {
        return Err(Error::dim(taus.len(), values.len()));
    }
    if taus.len() < 2 {
        return Err(Error::InsufficientData("a trajectory needs at least two points".into()));
    }
    let Some(thr) = crit.threshold(v0, v_inf) else {
        return Ok(None);
    };
    let rising = v_inf > v0;
    let reached = |v: f64| if rising { v >= thr } else { v <= thr };
    let Some(i) = values.iter().position(|&v| reached(v)) else {
        return Ok(None);
    };
    if i == 0 {
        return Ok(Some(taus[0]));
    }
    let (t0, t1, a, b) = (taus[i - 1], taus[i], values[i - 1], values[i]);
    if t0 > 0.0 && a > 0.0 && b > 0.0 {
        let f = (thr / a).ln() / (b / a).ln();
        Ok(Some((t0.ln() + f * (t1 / t0).ln()).exp()))
    } else {
        let f = (thr - a) / (b - a);
        Ok(Some(t0 + f * (t1 - t0)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Increasing,
    Decreasing,
    Pooled,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::Increasing => "increasing",
            Branch::Decreasing => "decreasing",
            Branch::Pooled => "pooled",
        })
    }
}

/// `τ* ≈ e^{intercept} λ^{−α}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub alpha: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_used: usize,
    pub branch: Branch,
}

/// Least squares of `ln τ` on `ln λ` over all points.
pub fn fit_power_law(lambdas: &[f64], taus: &[f64], branch: Branch) -> Result<PowerLawFit> {
    if lambdas.len() != taus.len() {
        return Err(Error::dim(lambdas.len(), taus.len()));
    }
    let n = lambdas.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("{branch} branch has {n} usable modes, need at least 2")));
    }
    if lambdas.iter().chain(taus).any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Domain("power-law fits need positive finite λ and τ*".into()));
    }
    let x: Vec<f64> = lambdas.iter().map(|l| l.ln()).collect();
    let y: Vec<f64> = taus.iter().map(|t| t.ln()).collect();
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData(format!("{branch} branch has no spread in λ")));
    }
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let ss_res: f64 = x.iter().zip(&y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) };
    Ok(PowerLawFit {
        alpha: -slope,
        intercept,
        r_squared,
        n_used: n,
        branch,
    })
}

/// Mode inputs to the branch fits: emergence times may be missing.
#[derive(Debug, Clone, Copy)]
pub struct ModeEmergence {
    pub lambda: f64,
    pub tau: Option<f64>,
    pub v0: f64,
    pub target: f64,
}

/// Fit of one branch after gray-zone exclusion.
pub fn power_law_fit_branch(modes: &[ModeEmergence], gz: &GrayZone, branch: Branch) -> Result<PowerLawFit> {
    gz.validate()?;
    let (l, t): (Vec<f64>, Vec<f64>) = modes
        .iter()
        .filter(|m| match branch {
            Branch::Increasing => m.target > m.v0,
            Branch::Decreasing => m.target < m.v0,
            Branch::Pooled => m.target != m.v0,
        })
        .filter(|m| !gz.excludes(m.v0, m.target))
        .filter_map(|m| m.tau.map(|t| (m.lambda, t)))
        .unzip();
    fit_power_law(&l, &t, branch)
}

/// Separate fits for the increasing and decreasing branches. A branch with
/// fewer than two usable modes is left out; if both are, the error names
/// each branch with its count.
pub fn power_law_fit(modes: &[ModeEmergence], gz: &GrayZone) -> Result<Vec<PowerLawFit>> {
    let mut fits = Vec::new();
    let mut reasons = Vec::new();
    for branch in [Branch::Increasing, Branch::Decreasing] {
        match power_law_fit_branch(modes, gz, branch) {
            Ok(f) => fits.push(f),
            Err(Error::InsufficientData(msg)) => reasons.push(msg),
            Err(e) => return Err(e),
        }
    }
    if fits.is_empty() {
        return Err(Error::InsufficientData(reasons.join("; ")));
    }
    Ok(fits)
}

/// `χ = Σ_k (UᵀΣ̃U)_kk² / Σ_km (UᵀΣ̃U)_km²`.
pub fn alignment_score(sigma_sample: &DMatrix<f64>, basis: &DMatrix<f64>) -> Result<f64> {
    if sigma_sample.nrows() != basis.nrows() || sigma_sample.ncols() != basis.nrows() || basis.ncols() != basis.nrows() {
        return Err(Error::dim(
            format!("{0}x{0}", basis.nrows()),
            format!("{}x{} against basis {}x{}", sigma_sample.nrows(), sigma_sample.ncols(), basis.nrows(), basis.ncols()),
        ));
    }
    let rot = basis.transpose() * sigma_sample * basis;
    let all = rot.norm_squared();
    if all == 0.0 {
        return Err(Error::Domain("alignment of the zero matrix is undefined".into()));
    }
    let diag: f64 = rot.diagonal().iter().map(|v| v * v).sum();
    Ok(diag / all)
}
