//! Gaussian KL divergences and estimation errors of linear denoisers.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::closed_form_dynamics::ModeTrajectory;
use crate::error::{Error, Result};
use crate::gaussian_model::CovarianceModel;

/// Variances below this are raised to it before taking logarithms.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeKL {
    pub per_mode: Vec<f64>,
    pub total: f64,
    /// Number of variances raised to [`VARIANCE_FLOOR`].
    pub clamped: usize,
}

fn floored(v: f64, what: &str, k: usize, clamped: &mut usize) -> Result<f64> {
    if !(v > 0.0) {
        return Err(Error::Domain(format!("{what} variance of mode {k} must be positive, got {v}")));
    }
    if v < VARIANCE_FLOOR {
        *clamped += 1;
        Ok(VARIANCE_FLOOR)
    } else {
        Ok(v)
    }
}

/// `KL(N(μ1, U diag λ1 Uᵀ) ‖ N(μ2, U diag λ2 Uᵀ))`, split by mode:
/// `KL_k = ½(ρ − ln ρ − 1) + (u_kᵀ(μ2 − μ1))²/(2λ2_k)` with `ρ = λ1_k/λ2_k`.
pub fn kl_shared_basis(
    lambda1: &[f64],
    lambda2: &[f64],
    mu1: &DVector<f64>,
    mu2: &DVector<f64>,
    basis: &DMatrix<f64>,
) -> Result<ModeKL> {
    let d = lambda1.len();
    if lambda2.len() != d {
        return Err(Error::dim(d, lambda2.len()));
    }
    if mu1.len() != mu2.len() || basis.ncols() != d || basis.nrows() != mu1.len() {
        return Err(Error::dim(
            format!("means of length {} and a {}x{d} basis", basis.nrows(), basis.nrows()),
            format!("means of length {}/{} and a {}x{} basis", mu1.len(), mu2.len(), basis.nrows(), basis.ncols()),
        ));
    }
    let shift = basis.transpose() * (mu2 - mu1);
    let mut clamped = 0;
    let mut per_mode = Vec::with_capacity(d);
    for k in 0..d {
        let l1 = floored(lambda1[k], "first", k, &mut clamped)?;
        let l2 = floored(lambda2[k], "second", k, &mut clamped)?;
        let rho = l1 / l2;
        let var_term = 0.5 * (rho - rho.ln() - 1.0);
        per_mode.push(var_term.max(0.0) + shift[k] * shift[k] / (2.0 * l2));
    }
    Ok(ModeKL {
        total: per_mode.iter().sum(),
        per_mode,
        clamped,
    })
}

/// Zero-mean convenience wrapper; the basis drops out.
pub fn kl_spectra(lambda1: &[f64], lambda2: &[f64]) -> Result<ModeKL> {
    let d = lambda1.len();
    let zero = DVector::zeros(d);
    kl_shared_basis(lambda1, lambda2, &zero, &zero, &DMatrix::identity(d, d))
}

/// `E_D = tr[(W − W*)(σ²I + Σ)(W − W*)ᵀ] + ‖b‖²` for zero-mean data.
pub fn denoiser_error_at(w: &DMatrix<f64>, b: &DVector<f64>, model: &CovarianceModel, sigma: f64) -> Result<f64> {
    let d = model.dim();
    if w.shape() != (d, d) || b.len() != d {
        return Err(Error::dim(format!("{d}x{d} weight and length-{d} bias"), format!("{:?} and {}", w.shape(), b.len())));
    }
    let s2 = sigma * sigma;
    let dev = w * model.basis();
    let mut total = b.norm_squared();
    for (k, &lam) in model.spectrum().iter().enumerate() {
        let target = lam / (lam + s2);
        let mut col = dev.column(k).into_owned();
        col -= model.mode(k) * target;
        total += (s2 + lam) * col.norm_squared();
    }
    Ok(total)
}

/// Denoiser error along the one-layer flow from `(W0, b0)`:
/// `E_D(τ) = Σ_k (σ²+λ_k)‖δ_k‖² e^{−4η(σ²+λ_k)τ} + ‖b0‖² e^{−4ητ}`,
/// `δ_k = (W0 − W*) u_k`.
pub fn denoiser_error(
    w0: &DMatrix<f64>,
    b0: &DVector<f64>,
    model: &CovarianceModel,
    sigma: f64,
    eta: f64,
    taus: &[f64],
) -> Result<Vec<f64>> {
    let d = model.dim();
    if w0.shape() != (d, d) || b0.len() != d {
        return Err(Error::dim(format!("{d}x{d} weight and length-{d} bias"), format!("{:?} and {}", w0.shape(), b0.len())));
    }
    let s2 = sigma * sigma;
    let dev = w0 * model.basis();
    let deltas: Vec<(f64, f64)> = model
        .spectrum()
        .iter()
        .enumerate()
        .map(|(k, &lam)| {
            let mut col = dev.column(k).into_owned();
            col -= model.mode(k) * (lam / (lam + s2));
            (s2 + lam, col.norm_squared())
        })
        .collect();
    let b2 = b0.norm_squared();
    Ok(taus
        .iter()
        .map(|&t| {
            deltas.iter().map(|&(a, dd)| a * dd * (-4.0 * eta * a * t).exp()).sum::<f64>()
                + b2 * (-4.0 * eta * t).exp()
        })
        .collect())
}

/// Score error `E_s = E_D/σ⁴` along the one-layer flow.
pub fn score_error(
    w0: &DMatrix<f64>,
    b0: &DVector<f64>,
    model: &CovarianceModel,
    sigma: f64,
    eta: f64,
    taus: &[f64],
) -> Result<Vec<f64>> {
    let s4 = sigma.powi(4);
    Ok(denoiser_error(w0, b0, model, sigma, eta, taus)?.into_iter().map(|e| e / s4).collect())
}

/// Score error for aligned trajectories of any architecture; `bias_norms[i]`
/// is `‖b(τ_i)‖`.
pub fn score_error_from_modes(trajs: &[ModeTrajectory], bias_norms: &[f64], model: &CovarianceModel) -> Result<Vec<f64>> {
    let first = trajs.first().ok_or_else(|| Error::InsufficientData("no mode trajectories".into()))?;
    let n = first.taus.len();
    if bias_norms.len() != n {
        return Err(Error::dim(n, bias_norms.len()));
    }
    if trajs.len() != model.dim() {
        return Err(Error::dim(model.dim(), trajs.len()));
    }
    let sigma = first.sigma;
    let s2 = sigma * sigma;
    let mut out: Vec<f64> = bias_norms.iter().map(|b| b * b).collect();
    for tr in trajs {
        if tr.values.len() != n || tr.sigma != sigma {
            return Err(Error::Validation("trajectories must share the τ grid and noise scale".into()));
        }
        let a = s2 + model.spectrum()[tr.mode];
        for (o, v) in out.iter_mut().zip(&tr.values) {
            *o += a * (v - tr.target).powi(2);
        }
    }
    Ok(out.into_iter().map(|e| e / (s2 * s2)).collect())
}

/// `σ² Σ_k λ_k/(σ² + λ_k)`, the loss at the optimum.
pub fn loss_floor(model: &CovarianceModel, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    model.spectrum().iter().map(|l| s2 * l / (s2 + l)).sum()
}

/// Denoising loss of an affine denoiser on zero-mean data.
pub fn training_loss(w: &DMatrix<f64>, b: &DVector<f64>, sigma: f64, model: &CovarianceModel) -> Result<f64> {
    Ok(denoiser_error_at(w, b, model, sigma)? + loss_floor(model, sigma))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_examples() {
        let r = kl_spectra(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!(r.total, 0.0);
        let e = std::f64::consts::E;
        let r = kl_spectra(&[e], &[1.0]).unwrap();
        assert!((r.per_mode[0] - (e - 2.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn kl_rejects_nonpositive_and_counts_clamps() {
        assert!(matches!(kl_spectra(&[0.0], &[1.0]), Err(Error::Domain(_))));
        let r = kl_spectra(&[1e-20, 1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(r.clamped, 1);
    }

    #[test]
    fn single_mode_score_error() {
        let m = CovarianceModel::diagonal(vec![1.0]).unwrap();
        let w0 = DMatrix::from_element(1, 1, 1.5);
        let e = score_error(&w0, &DVector::zeros(1), &m, 1.0, 1.0, &[0.0]).unwrap();
        assert!((e[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn floor_values() {
        let m = CovarianceModel::diagonal(vec![1.0]).unwrap();
        assert_eq!(loss_floor(&m, 1.0), 0.5);
        let w = DMatrix::from_element(1, 1, 0.5);
        assert_eq!(training_loss(&w, &DVector::zeros(1), 1.0, &m).unwrap(), 0.5);
    }
}
