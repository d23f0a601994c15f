//! Probability-flow sampling with a trained linear denoiser.
//!
//! For weights that share an eigenbasis, each mode coefficient obeys
//! `dc/dσ = (1 − ψ(σ))c/σ − b(σ)/σ`. Its homogeneous solution is
//! `Φ(σ) = exp ∫ (1 − ψ)/σ dσ`, so a sample started at `N(0, σ_T²)` ends
//! with variance `λ̃ = σ_T² Φ²(σ_0)/Φ²(σ_T)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::closed_form_dynamics::{one_layer_weight, two_layer_weight, LossVariant};
use crate::conv_dynamics::real_fourier_basis;
use crate::error::{Error, Result};
use crate::gaussian_model::{sample_in_basis, seeded_rng, CovarianceModel};
use crate::quad::adaptive_simpson;
use crate::special_fn::ein;

/// EDM `ρ`-power noise grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
    pub num_steps: usize,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            sigma_min: 0.002,
            sigma_max: 80.0,
            rho: 7.0,
            num_steps: 20,
        }
    }
}

impl NoiseSchedule {
    pub fn with_steps(mut self, num_steps: usize) -> Self {
        self.num_steps = num_steps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0) {
            return Err(Error::param("schedule.sigma_min", "must be positive"));
        }
        if !(self.sigma_max > self.sigma_min) || !self.sigma_max.is_finite() {
            return Err(Error::param("schedule.sigma_max", "must be finite and exceed sigma_min"));
        }
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(Error::param("schedule.rho", "must be positive"));
        }
        if self.num_steps < 2 {
            return Err(Error::param("schedule.num_steps", "must be at least 2"));
        }
        Ok(())
    }

    /// `σ_i = (σ_max^{1/ρ} + i/(n−1)(σ_min^{1/ρ} − σ_max^{1/ρ}))^ρ`, decreasing.
    pub fn sigmas(&self) -> Vec<f64> {
        let n = self.num_steps;
        let a = self.sigma_max.powf(1.0 / self.rho);
        let b = self.sigma_min.powf(1.0 / self.rho);
        (0..n)
            .map(|i| {
                if i == 0 {
                    self.sigma_max
                } else if i == n - 1 {
                    self.sigma_min
                } else {
                    (a + i as f64 / (n - 1) as f64 * (b - a)).powf(self.rho)
                }
            })
            .collect()
    }
}

#[derive(Clone)]
pub struct NumericPhi {
    weight: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub tol: f64,
}

impl NumericPhi {
    pub fn new(weight: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            weight: Arc::new(weight),
            tol: 1e-11,
        }
    }
}

impl fmt::Debug for NumericPhi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NumericPhi").field("tol", &self.tol).finish_non_exhaustive()
    }
}

/// The per-mode integrating factor `Φ_k(σ)` for each solvable case.
#[derive(Debug, Clone)]
pub enum PhiFactor {
    OneLayer { lambda: f64, q: f64, eta: f64, tau: f64 },
    TwoLayerSymmetric { lambda: f64, q: f64, eta: f64, tau: f64 },
    Converged { lambda: f64 },
    FullWidthConv { mode_var: f64, gamma0: f64, eta: f64, tau: f64, n: usize },
    /// `Φ` by quadrature of an arbitrary weight schedule `ψ(σ)`.
    Numeric(NumericPhi),
}

impl PhiFactor {
    pub fn validate(&self) -> Result<()> {
        let check = |lambda: f64, eta: f64, tau: f64| -> Result<()> {
            if !(lambda >= 0.0) {
                return Err(Error::Domain(format!("mode variance must be nonnegative, got {lambda}")));
            }
            if !(eta > 0.0) {
                return Err(Error::Domain(format!("learning rate must be positive, got {eta}")));
            }
            if !(tau >= 0.0) {
                return Err(Error::Domain(format!("training time must be nonnegative, got {tau}")));
            }
            Ok(())
        };
        match *self {
            PhiFactor::OneLayer { lambda, eta, tau, .. } => check(lambda, eta, tau),
            PhiFactor::TwoLayerSymmetric { lambda, q, eta, tau } => {
                check(lambda, eta, tau)?;
                if !(q > 0.0) {
                    return Err(Error::Domain(format!(
                        "two-layer sampling needs Q > 0 (Q = {q} is a fixed point that never converges)"
                    )));
                }
                Ok(())
            }
            PhiFactor::Converged { lambda } => check(lambda, 1.0, 0.0),
            PhiFactor::FullWidthConv { mode_var, eta, tau, n, .. } => {
                check(mode_var, eta, tau)?;
                if n == 0 {
                    return Err(Error::Domain("signal length must be positive".into()));
                }
                Ok(())
            }
            PhiFactor::Numeric(_) => Ok(()),
        }
    }

    /// Denoiser weight `ψ(σ)` of the mode at this training time.
    pub fn weight(&self, sigma: f64) -> Result<f64> {
        match self {
            PhiFactor::OneLayer { lambda, q, eta, tau } => one_layer_weight(&LossVariant::EDM, *lambda, sigma, *q, *eta, *tau),
            PhiFactor::TwoLayerSymmetric { lambda, q, eta, tau } => {
                two_layer_weight(&LossVariant::EDM, *lambda, sigma, *q, *eta, *tau)
            }
            PhiFactor::Converged { lambda } => Ok(lambda / (lambda + sigma * sigma)),
            PhiFactor::FullWidthConv { mode_var, gamma0, eta, tau, n } => {
                one_layer_weight(&LossVariant::EDM, *mode_var, sigma, *gamma0, *eta * *n as f64, *tau)
            }
            PhiFactor::Numeric(p) => Ok((p.weight)(sigma)),
        }
    }

    /// `ln Φ(σ)` up to a σ-independent constant.
    pub fn ln_phi(&self, sigma: f64) -> Result<f64> {
        if !(sigma > 0.0) {
            return Err(Error::Domain(format!("Φ needs σ > 0, got {sigma}")));
        }
        self.validate()?;
        Ok(match self {
            PhiFactor::OneLayer { lambda, q, eta, tau } => ln_phi_one_layer(sigma, *tau, *lambda, *q, *eta),
            PhiFactor::TwoLayerSymmetric { lambda, q, eta, tau } => ln_phi_two_layer(sigma, *tau, *lambda, *q, *eta),
            PhiFactor::Converged { lambda } => 0.5 * (lambda + sigma * sigma).ln(),
            PhiFactor::FullWidthConv { mode_var, gamma0, eta, tau, n } => {
                ln_phi_one_layer(sigma, *tau, *mode_var, *gamma0, *eta * *n as f64)
            }
            PhiFactor::Numeric(p) => {
                let w = &p.weight;
                adaptive_simpson(|u| 1.0 - w(u.exp()), 0.0, sigma.ln(), p.tol)?
            }
        })
    }
}

/// One-layer `ln Φ` with the `γ + ln(2ητ)` divergence removed:
/// `(1−Q)e^{−aλ} ln σ − ((1−Q)/2)e^{−aλ} Ein(aσ²) + ½ Ein(a(σ²+λ))`, `a = 2ητ`.
///
/// Equals `½ln(λ+σ²) + ((1−Q)/2)e^{−aλ}Ei(−aσ²) − ½Ei(−a(σ²+λ))` plus a
/// constant, and reduces to `(1−Q) ln σ` at `τ = 0`.
fn ln_phi_one_layer(sigma: f64, tau: f64, lambda: f64, q: f64, eta: f64) -> f64 {
    let a = 2.0 * eta * tau;
    let s2 = sigma * sigma;
    let decay = (-a * lambda).exp();
    (1.0 - q) * decay * sigma.ln() - 0.5 * (1.0 - q) * decay * ein(a * s2) + 0.5 * ein(a * (s2 + lambda))
}

/// Public form of the one-layer factor for a single σ.
pub fn phi_one_layer(sigma: f64, tau: f64, lambda: f64, q: f64, eta: f64) -> Result<f64> {
    PhiFactor::OneLayer { lambda, q, eta, tau }.ln_phi(sigma).map(f64::exp)
}

/// Two-layer `ln Φ = (1 − Q/A) ln σ + (Q/2A) ln(A + Bσ²)` with
/// `A = E + Q(1−E)`, `B = Q(1−E)/λ`, `E = e^{−8ηλτ}`.
fn ln_phi_two_layer(sigma: f64, tau: f64, lambda: f64, q: f64, eta: f64) -> f64 {
    let x = 8.0 * eta * lambda * tau;
    let e = (-x).exp();
    let one_minus_e = -(-x).exp_m1();
    let g = 8.0 * eta * tau * crate::closed_form_dynamics::one_minus_exp_over(x);
    let a = e + q * one_minus_e;
    let b = q * g;
    (1.0 - q / a) * sigma.ln() + q / (2.0 * a) * (a + b * sigma * sigma).ln()
}

pub fn phi_two_layer(sigma: f64, tau: f64, lambda: f64, q: f64, eta: f64) -> Result<f64> {
    PhiFactor::TwoLayerSymmetric { lambda, q, eta, tau }.ln_phi(sigma).map(f64::exp)
}

/// `λ̃ = σ_T² Φ²(σ_min)/Φ²(σ_max)`.
pub fn generated_variance(phi: &PhiFactor, schedule: &NoiseSchedule) -> Result<f64> {
    schedule.validate()?;
    let lo = phi.ln_phi(schedule.sigma_min)?;
    let hi = phi.ln_phi(schedule.sigma_max)?;
    Ok(schedule.sigma_max.powi(2) * (2.0 * (lo - hi)).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BasisTag {
    Eigen,
    Fourier,
}

/// Gaussian produced by the sampler, stored per mode.
///
/// In the Fourier basis `mode_variances[k]` belongs to DFT frequency `k`
/// and `mean_modes` are coefficients on the columns of
/// [`real_fourier_basis`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratedDistribution {
    pub basis: BasisTag,
    pub mode_variances: Vec<f64>,
    pub mean_modes: Vec<f64>,
}

impl GeneratedDistribution {
    pub fn from_phis(phis: &[PhiFactor], schedule: &NoiseSchedule, basis: BasisTag) -> Result<Self> {
        let vars = phis.iter().map(|p| generated_variance(p, schedule)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            basis,
            mean_modes: vec![0.0; vars.len()],
            mode_variances: vars,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode_variances.len() != self.mean_modes.len() {
            return Err(Error::dim(self.mode_variances.len(), self.mean_modes.len()));
        }
        if self.mode_variances.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::Domain("generated variances must be nonnegative".into()));
        }
        Ok(())
    }

    /// Dense covariance `B diag(λ̃) Bᵀ` in data coordinates.
    pub fn covariance(&self, model: Option<&CovarianceModel>) -> Result<DMatrix<f64>> {
        let (basis, vars) = self.sampling_basis(model)?;
        let mut scaled = basis.clone();
        for (mut col, v) in scaled.column_iter_mut().zip(&vars) {
            col *= *v;
        }
        Ok(scaled * basis.transpose())
    }

    fn sampling_basis(&self, model: Option<&CovarianceModel>) -> Result<(DMatrix<f64>, Vec<f64>)> {
        self.validate()?;
        match self.basis {
            BasisTag::Eigen => {
                let m = model.ok_or_else(|| Error::param("model", "eigen-basis distributions need the data model"))?;
                if m.dim() != self.mode_variances.len() {
                    return Err(Error::dim(m.dim(), self.mode_variances.len()));
                }
                Ok((m.basis().clone(), self.mode_variances.clone()))
            }
            BasisTag::Fourier => {
                let n = self.mode_variances.len();
                let (b, freqs) = real_fourier_basis(n);
                let vars = freqs.iter().map(|&k| self.mode_variances[k]).collect();
                Ok((b, vars))
            }
        }
    }
}

/// `n` draws from the generated Gaussian.
pub fn sample_generated(
    dist: &GeneratedDistribution,
    model: Option<&CovarianceModel>,
    n: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let (basis, vars) = dist.sampling_basis(model)?;
    let mean = &basis * DVector::from_column_slice(&dist.mean_modes);
    sample_in_basis(&basis, &vars, &mean, n, &mut seeded_rng(seed))
}

fn check_finite(v: &[f64], sigma: f64, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Integration {
            at: sigma,
            reason: format!("non-finite {what}"),
        })
    }
}

/// Heun integration of the per-mode PF-ODE from `σ_max` to `σ_min`.
pub fn pf_ode_numeric<W, B>(weight_fn: W, bias_fn: B, schedule: &NoiseSchedule, x_t: &[f64]) -> Result<Vec<f64>>
where
    W: Fn(f64) -> Vec<f64>,
    B: Fn(f64) -> Vec<f64>,
{
    schedule.validate()?;
    let drift = |sigma: f64, x: &[f64]| -> Result<Vec<f64>> {
        let w = weight_fn(sigma);
        let b = bias_fn(sigma);
        check_finite(&w, sigma, "weight")?;
        check_finite(&b, sigma, "bias")?;
        if w.len() != x.len() || b.len() != x.len() {
            return Err(Error::dim(x.len(), w.len().max(b.len())));
        }
        Ok((0..x.len()).map(|i| -((w[i] - 1.0) * x[i] + b[i]) / sigma).collect())
    };
    let sigmas = schedule.sigmas();
    let mut x = x_t.to_vec();
    for pair in sigmas.windows(2) {
        let (s0, s1) = (pair[0], pair[1]);
        let h = s1 - s0;
        let d0 = drift(s0, &x)?;
        let pred: Vec<f64> = x.iter().zip(&d0).map(|(xi, di)| xi + h * di).collect();
        let d1 = drift(s1, &pred)?;
        for i in 0..x.len() {
            x[i] += 0.5 * h * (d0[i] + d1[i]);
        }
    }
    Ok(x)
}

/// Heun integration of the full affine PF-ODE with dense `W_σ`, `b_σ`.
pub fn pf_ode_dense<W, B>(weight_fn: W, bias_fn: B, schedule: &NoiseSchedule, x_t: &DVector<f64>) -> Result<DVector<f64>>
where
    W: Fn(f64) -> DMatrix<f64>,
    B: Fn(f64) -> DVector<f64>,
{
    schedule.validate()?;
    let d = x_t.len();
    let drift = |sigma: f64, x: &DVector<f64>| -> Result<DVector<f64>> {
        let w = weight_fn(sigma);
        let b = bias_fn(sigma);
        check_finite(w.as_slice(), sigma, "weight")?;
        check_finite(b.as_slice(), sigma, "bias")?;
        Ok(-((&w - DMatrix::identity(d, d)) * x + b) / sigma)
    };
    let sigmas = schedule.sigmas();
    let mut x = x_t.clone();
    for pair in sigmas.windows(2) {
        let (s0, s1) = (pair[0], pair[1]);
        let h = s1 - s0;
        let d0 = drift(s0, &x)?;
        let pred = &x + &d0 * h;
        let d1 = drift(s1, &pred)?;
        x += (d0 + d1) * (0.5 * h);
    }
    Ok(x)
}

/// `λ̃` from the numeric sampler: the squared scaling of a unit mode,
/// times `σ_T²`.
pub fn numeric_generated_variance(phi: &PhiFactor, schedule: &NoiseSchedule) -> Result<f64> {
    phi.validate()?;
    let err = std::cell::Cell::new(None);
    let c = pf_ode_numeric(
        |s| match phi.weight(s) {
            Ok(w) => vec![w],
            Err(e) => {
                err.set(Some(e));
                vec![f64::NAN]
            }
        },
        |_| vec![0.0],
        schedule,
        &[1.0],
    );
    if let Some(e) = err.take() {
        return Err(e);
    }
    Ok(schedule.sigma_max.powi(2) * c?[0].powi(2))
}

/// Mean of the generated mode,
/// `B = ∫_{σ_T}^{σ_0} −(b(s)/s) Φ(σ_0)/Φ(s) ds`, by adaptive Simpson in `ln σ`.
pub fn mean_transport<B: Fn(f64) -> f64>(bias_mode: B, phi: &PhiFactor, schedule: &NoiseSchedule, tol: f64) -> Result<f64> {
    schedule.validate()?;
    let ln_lo = phi.ln_phi(schedule.sigma_min)?;
    let failure = std::cell::Cell::new(None);
    let integrand = |u: f64| {
        let s = u.exp();
        let b = bias_mode(s);
        if b == 0.0 {
            return 0.0;
        }
        match phi.ln_phi(s) {
            Ok(l) => b * (ln_lo - l).exp(),
            Err(e) => {
                failure.set(Some(e));
                f64::NAN
            }
        }
    };
    let v = adaptive_simpson(integrand, schedule.sigma_min.ln(), schedule.sigma_max.ln(), tol);
    if let Some(e) = failure.take() {
        return Err(e);
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_grid_endpoints_and_order() {
        let s = NoiseSchedule::default().sigmas();
        assert_eq!(s.len(), 20);
        assert_eq!(s[0], 80.0);
        assert_eq!(s[19], 0.002);
        assert!(s.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn invalid_schedule_rejected() {
        let bad = NoiseSchedule {
            sigma_min: 1.0,
            sigma_max: 0.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_drift_keeps_sample() {
        let x = pf_ode_numeric(|_| vec![1.0, 1.0], |_| vec![0.0, 0.0], &NoiseSchedule::default(), &[0.3, -2.0]).unwrap();
        assert_eq!(x, vec![0.3, -2.0]);
    }

    #[test]
    fn pure_contraction_is_exact() {
        let sch = NoiseSchedule::default();
        let x = pf_ode_numeric(|_| vec![0.0], |_| vec![0.0], &sch, &[1.0]).unwrap();
        assert!((x[0] - sch.sigma_min / sch.sigma_max).abs() < 1e-15);
    }

    #[test]
    fn non_finite_weight_reports_sigma() {
        let r = pf_ode_numeric(|s| vec![if s < 1.0 { f64::NAN } else { 0.5 }], |_| vec![0.0], &NoiseSchedule::default(), &[1.0]);
        assert!(matches!(r, Err(Error::Integration { at, .. }) if at < 1.0));
    }

    #[test]
    fn two_layer_zero_init_is_domain_error() {
        let p = PhiFactor::TwoLayerSymmetric { lambda: 1.0, q: 0.0, eta: 1.0, tau: 1.0 };
        assert!(matches!(generated_variance(&p, &NoiseSchedule::default()), Err(Error::Domain(_))));
    }

    #[test]
    fn zero_bias_has_zero_mean() {
        let p = PhiFactor::OneLayer { lambda: 1.0, q: 0.1, eta: 1.0, tau: 1.0 };
        assert_eq!(mean_transport(|_| 0.0, &p, &NoiseSchedule::default(), 1e-9).unwrap(), 0.0);
    }

    #[test]
    fn converged_half_variance_case() {
        let sch = NoiseSchedule {
            sigma_min: 1e-9,
            ..Default::default()
        };
        let lam = sch.sigma_max.powi(2);
        let v = generated_variance(&PhiFactor::Converged { lambda: lam }, &sch).unwrap();
        assert!((v - lam / 2.0).abs() < 1e-9 * lam);
    }

    #[test]
    fn degenerate_generated_samples_equal_mean() {
        let d = GeneratedDistribution {
            basis: BasisTag::Fourier,
            mode_variances: vec![0.0; 4],
            mean_modes: vec![1.0, 0.0, 0.0, 0.5],
        };
        let x = sample_generated(&d, None, 3, 1).unwrap();
        let (b, _) = real_fourier_basis(4);
        let mean = b * DVector::from_column_slice(&d.mean_modes);
        for row in x.row_iter() {
            assert!((row.transpose() - &mean).amax() < 1e-15);
        }
    }
}
