//! Flow-matching training dynamics for linear velocity fields.
//!
//! The interpolant is `x_t = t·x + (1−t)·ε` with velocity target `x − ε`.
//! Samples are produced by `dx/dt = W_t x` from noise at `t = 0` to data
//! at `t = 1`, so each mode is scaled by `exp ∫₀¹ ψ(t) dt`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special_fn::{ein, erf_over_x};

/// Training setup for the flow-matching routines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub t_grid: Vec<f64>,
    pub eta: f64,
    pub init_q: Vec<f64>,
    pub tau_grid: Vec<f64>,
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::param("flow.eta", "must be positive"));
        }
        if self.t_grid.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(Error::param("flow.t", "grid values must lie strictly inside (0, 1)"));
        }
        if self.tau_grid.iter().any(|&t| !(t >= 0.0) || !t.is_finite()) {
            return Err(Error::param("flow.tau", "grid values must be finite and nonnegative"));
        }
        if self.init_q.iter().any(|q| !q.is_finite()) {
            return Err(Error::param("flow.q", "must be finite"));
        }
        Ok(())
    }
}

/// `w* = (tλ − (1−t)) / (t²λ + (1−t)²)`, with `w* = 1` at `t = 1, λ = 0`.
pub fn fm_optimal_weight(lambda: f64, t: f64) -> f64 {
    let num = t * lambda - (1.0 - t);
    let den = t * t * lambda + (1.0 - t) * (1.0 - t);
    if den == 0.0 {
        1.0
    } else {
        num / den
    }
}

/// `t²λ + (1−t)²`.
pub fn fm_rate(lambda: f64, t: f64) -> f64 {
    t * t * lambda + (1.0 - t) * (1.0 - t)
}

/// One-layer weight `w* + (Q − w*) exp(−2ητ(t²λ + (1−t)²))`.
pub fn fm_one_layer_weight(tau: f64, t: f64, lambda: f64, q: f64, eta: f64) -> f64 {
    let w = fm_optimal_weight(lambda, t);
    w + (q - w) * (-2.0 * eta * tau * fm_rate(lambda, t)).exp()
}

/// Scaling `c(t)/c(0) = √(t²λ + (1−t)²)` of a mode under the converged flow.
pub fn fm_sampling_converged(lambda: f64, t: f64) -> f64 {
    fm_rate(lambda, t).sqrt()
}

/// `λ̃/λ` after sampling with the one-layer flow trained for time `τ`.
///
/// `ln(λ̃/λ) = −ln λ − Ein(a) + Ein(aλ) + Q e^{−aλ/(λ+1)} √π (erf y + erf λy)/((λ+1) y)`
/// with `a = 2ητ` and `y = √(a/(λ+1))`.
pub fn fm_generated_variance_ratio(tau: f64, lambda: f64, q: f64, eta: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!("variance ratio needs λ > 0, got {lambda}")));
    }
    Ok((fm_ln_generated_variance(tau, lambda, q, eta)? - lambda.ln()).exp())
}

/// `ln λ̃`; defined for `λ = 0` as well.
pub fn fm_ln_generated_variance(tau: f64, lambda: f64, q: f64, eta: f64) -> Result<f64> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Domain(format!("mode variance must be nonnegative, got {lambda}")));
    }
    if !(tau >= 0.0) || !(eta > 0.0) {
        return Err(Error::Domain(format!("need τ ≥ 0 and η > 0, got τ = {tau}, η = {eta}")));
    }
    let a = 2.0 * eta * tau;
    let lp1 = lambda + 1.0;
    let y = (a / lp1).sqrt();
    let bracket = std::f64::consts::PI.sqrt() * (erf_over_x(y) + lambda * erf_over_x(lambda * y)) / lp1;
    Ok(ein(a * lambda) - ein(a) + q * (-a * lambda / lp1).exp() * bracket)
}

/// Two-layer weight and whether its attractor is the optimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FmTwoLayerWeight {
    pub value: f64,
    /// `false` when `t < 1/(λ+1)`, where the flow is drawn to 0 instead of `w*`.
    pub attainable: bool,
}

/// `ψ = Q·w* / (Q + (w* − Q) e^{−4ητ(tλ − (1−t))})`, written as
/// `Q / (E + Q r g)` so the boundary `t = 1/(λ+1)` stays finite.
pub fn fm_two_layer_weight(tau: f64, t: f64, lambda: f64, q: f64, eta: f64) -> Result<FmTwoLayerWeight> {
    if !(q > 0.0) {
        return Err(Error::Domain(format!("two-layer flow needs Q > 0, got {q}")));
    }
    let n = t * lambda - (1.0 - t);
    let r = fm_rate(lambda, t);
    let x = 4.0 * eta * n * tau;
    let e = (-x).exp();
    let g = 4.0 * eta * tau * crate::closed_form_dynamics::one_minus_exp_over(x);
    let value = if e.is_infinite() { 0.0 } else { q / (e + q * r * g) };
    Ok(FmTwoLayerWeight {
        value,
        attainable: n > 0.0,
    })
}

/// RK4 integration of `dc/dt = ψ(t) c` from `t = 0` to `t = 1` with `c(0) = 1`.
pub fn fm_sample_scaling_numeric<F: Fn(f64) -> f64>(weight: F, steps: usize) -> f64 {
    let h = 1.0 / steps as f64;
    let mut c = 1.0;
    for i in 0..steps {
        let t = i as f64 * h;
        let k1 = weight(t) * c;
        let k2 = weight(t + 0.5 * h) * (c + 0.5 * h * k1);
        let k3 = weight(t + 0.5 * h) * (c + 0.5 * h * k2);
        let k4 = weight(t + h) * (c + h * k3);
        c += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_cases() {
        assert_eq!(fm_one_layer_weight(0.0, 0.3, 2.0, 0.7, 1.0), 0.7);
        assert_eq!(fm_optimal_weight(5.0, 1.0), 1.0);
        assert_eq!(fm_rate(5.0, 1.0), 5.0);
        assert_eq!(fm_sampling_converged(3.0, 0.0), 1.0);
        assert_eq!(fm_sampling_converged(4.0, 1.0), 2.0);
    }

    #[test]
    fn untrained_flow_scales_by_exp_q() {
        let l = fm_ln_generated_variance(0.0, 0.3, 0.25, 1.0).unwrap();
        assert!((l - 0.5).abs() < 1e-15);
    }

    #[test]
    fn long_training_recovers_variance() {
        let r = fm_generated_variance_ratio(1e9, 0.1, 0.1, 1.0).unwrap();
        assert!((r - 1.0).abs() < 1e-4);
    }

    #[test]
    fn unattainable_branch_decays_to_zero() {
        let w = fm_two_layer_weight(1e4, 0.2, 1.0, 0.1, 1.0).unwrap();
        assert!(!w.attainable);
        assert!(w.value.abs() < 1e-12);
        let w = fm_two_layer_weight(1e4, 0.8, 1.0, 0.1, 1.0).unwrap();
        assert!(w.attainable);
        assert!((w.value - fm_optimal_weight(1.0, 0.8)).abs() < 1e-12);
    }
}
