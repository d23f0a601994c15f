//! Brute-force references for the closed forms.
//!
//! Everything here works on raw matrices. The loss and its gradients are
//! written out from the data moments, the input/target coefficients are
//! kept in a private table, and no eigen-alignment is assumed anywhere.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use serde::Serialize;

use crate::closed_form_dynamics::{LossVariant, Schedule, VariantTag};
use crate::error::{Error, Result};
use crate::gaussian_model::DataMoments;
use crate::ode::{integrate, OdeSolveConfig};

/// Largest signal length accepted by [`dense_dft_diag`].
pub const DENSE_DFT_LIMIT: usize = 512;

/// `(a, b, c, d)` with input `a·x + b·ε` and target `c·x + d·ε`.
fn io_coefficients(variant: &LossVariant, s: f64) -> (f64, f64, f64, f64) {
    let (alpha, sig) = match variant.schedule {
        Schedule::Edm => (1.0, s),
        Schedule::Cosine => ((0.5 * std::f64::consts::PI * s).cos(), (0.5 * std::f64::consts::PI * s).sin()),
        Schedule::Linear => (1.0 - s, s),
    };
    match variant.tag {
        VariantTag::Edm => (1.0, s, 1.0, 0.0),
        VariantTag::XPred => (alpha, sig, 1.0, 0.0),
        VariantTag::EpsPred => (alpha, sig, 0.0, 1.0),
        VariantTag::VPred => (alpha, sig, -sig, alpha),
        VariantTag::FlowMatch => (s, 1.0 - s, 1.0, -1.0),
    }
}

struct Moments2 {
    sxx: DMatrix<f64>,
    syx: DMatrix<f64>,
    syy_trace: f64,
    mx: DVector<f64>,
    my: DVector<f64>,
}

fn second_moments(moments: &DataMoments, variant: &LossVariant, s: f64) -> Moments2 {
    let (a, b, c, d) = io_coefficients(variant, s);
    let n = moments.dim();
    let cov = &moments.covariance;
    let eye = DMatrix::<f64>::identity(n, n);
    Moments2 {
        sxx: cov * (a * a) + &eye * (b * b),
        syx: cov * (a * c) + &eye * (b * d),
        syy_trace: c * c * cov.trace() + d * d * n as f64,
        mx: &moments.mean * a,
        my: &moments.mean * c,
    }
}

/// Expected squared error `E‖W x_in + b − y‖²`.
pub fn loss(moments: &DataMoments, variant: &LossVariant, s: f64, w: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
    let m = second_moments(moments, variant, s);
    let resid = &m.my - w * &m.mx - b;
    m.syy_trace - 2.0 * (w * m.syx.transpose()).trace() + (w * &m.sxx * w.transpose()).trace() + resid.norm_squared()
}

/// `(∇_W L, ∇_b L)`.
pub fn loss_gradient(
    moments: &DataMoments,
    variant: &LossVariant,
    s: f64,
    w: &DMatrix<f64>,
    b: &DVector<f64>,
) -> (DMatrix<f64>, DVector<f64>) {
    let m = second_moments(moments, variant, s);
    let resid = &m.my - w * &m.mx - b;
    let gw = (w * &m.sxx - &m.syx) * 2.0 - &resid * m.mx.transpose() * 2.0;
    let gb = -resid * 2.0;
    (gw, gb)
}

/// How the effective weight is built from the trained parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Parametrization {
    Dense,
    /// `D(x) = c_skip·x + c_out·(F x + b_F)`.
    Residual { c_skip: f64, c_out: f64 },
    /// `W = P Pᵀ`.
    SymmetricTwoLayer,
    /// Circulant `W` from taps at offsets `−r..=r`.
    Circulant { half_width: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleTrajectory {
    pub taus: Vec<f64>,
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

fn circulant(taps_by_offset: &[f64], n: usize) -> DMatrix<f64> {
    let r = taps_by_offset.len() / 2;
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for (j, &t) in taps_by_offset.iter().enumerate() {
            let col = (i as i64 + j as i64 - r as i64).rem_euclid(n as i64) as usize;
            w[(i, col)] += t;
        }
    }
    w
}

fn symmetric_sqrt(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let asym = (w - w.transpose()).amax();
    if asym > 1e-12 * (1.0 + w.amax()) {
        return Err(Error::param("w0", "two-layer initialization must be symmetric"));
    }
    let eig = SymmetricEigen::new((w + w.transpose()) * 0.5);
    if eig.eigenvalues.iter().any(|&v| v < -1e-12 * (1.0 + w.amax())) {
        return Err(Error::param("w0", "two-layer initialization must be positive semidefinite"));
    }
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose())
}

/// Full-batch gradient flow `dθ/dτ = −η ∇_θ L` on raw matrices.
///
/// `w0` is the effective weight at `τ = 0`. For the two-layer case the
/// factor starts at its symmetric square root, which loses nothing since
/// the flow of `P Pᵀ` depends on `P` only through `P Pᵀ`.
#[allow(clippy::too_many_arguments)]
pub fn gradient_flow_full(
    moments: &DataMoments,
    sigma: f64,
    eta: f64,
    w0: &DMatrix<f64>,
    b0: &DVector<f64>,
    taus: &[f64],
    variant: &LossVariant,
    param: Parametrization,
    solver: &OdeSolveConfig,
) -> Result<OracleTrajectory> {
    let n = moments.dim();
    if w0.shape() != (n, n) || b0.len() != n {
        return Err(Error::dim(format!("{n}x{n} weight and length-{n} bias"), format!("{:?} and {}", w0.shape(), b0.len())));
    }
    if taus.windows(2).any(|w| w[1] <= w[0]) || taus.first().is_some_and(|&t| t < 0.0) {
        return Err(Error::param("tau", "grid must be nonnegative and strictly increasing"));
    }
    match param {
        Parametrization::Dense => {
            let rhs = |_t: f64, y: &DVector<f64>| {
                let (w, b) = unpack(y, n, n * n);
                let (gw, gb) = loss_gradient(moments, variant, sigma, &w, &b);
                pack(&(gw * -eta), &(gb * -eta))
            };
            let ys = integrate(rhs, 0.0, &pack(w0, b0), taus, solver)?;
            Ok(collect(taus, ys, |y| unpack(y, n, n * n)))
        }
        Parametrization::Residual { c_skip, c_out } => {
            if c_out == 0.0 {
                return Err(Error::param("c_out", "must be nonzero"));
            }
            let eye = DMatrix::<f64>::identity(n, n);
            let effective = |y: &DVector<f64>| {
                let (f, bf) = unpack(y, n, n * n);
                (&eye * c_skip + f * c_out, bf * c_out)
            };
            let rhs = |_t: f64, y: &DVector<f64>| {
                let (w, b) = effective(y);
                let (gw, gb) = loss_gradient(moments, variant, sigma, &w, &b);
                pack(&(gw * (-eta * c_out)), &(gb * (-eta * c_out)))
            };
            let f0 = (w0 - &eye * c_skip) / c_out;
            let ys = integrate(rhs, 0.0, &pack(&f0, &(b0 / c_out)), taus, solver)?;
            Ok(collect(taus, ys, effective))
        }
        Parametrization::SymmetricTwoLayer => {
            let p0 = symmetric_sqrt(w0)?;
            two_layer_flow(moments, sigma, eta, &p0, b0, taus, variant, solver)
        }
        Parametrization::Circulant { half_width } => {
            let k = 2 * half_width + 1;
            if k > n {
                return Err(Error::param("half_width", format!("filter width {k} exceeds signal length {n}")));
            }
            let taps0: Vec<f64> = (0..k)
                .map(|j| w0[(0, (j as i64 - half_width as i64).rem_euclid(n as i64) as usize)])
                .collect();
            if (circulant(&taps0, n) - w0).amax() > 1e-12 * (1.0 + w0.amax()) {
                return Err(Error::param("w0", "circulant initialization must be a banded circulant matrix"));
            }
            let rhs = |_t: f64, y: &DVector<f64>| {
                let w = circulant(&y.as_slice()[..k], n);
                let b = DVector::from_column_slice(&y.as_slice()[k..]);
                let (gw, gb) = loss_gradient(moments, variant, sigma, &w, &b);
                let mut out = DVector::zeros(k + n);
                for j in 0..k {
                    let off = j as i64 - half_width as i64;
                    let s: f64 = (0..n).map(|i| gw[(i, (i as i64 + off).rem_euclid(n as i64) as usize)]).sum();
                    out[j] = -eta * s;
                }
                out.rows_mut(k, n).copy_from(&(gb * -eta));
                out
            };
            let mut y0 = DVector::zeros(k + n);
            y0.rows_mut(0, k).copy_from(&DVector::from_column_slice(&taps0));
            y0.rows_mut(k, n).copy_from(b0);
            let ys = integrate(rhs, 0.0, &y0, taus, solver)?;
            Ok(collect(taus, ys, |y| {
                (circulant(&y.as_slice()[..k], n), DVector::from_column_slice(&y.as_slice()[k..]))
            }))
        }
    }
}

/// Symmetric two-layer flow from an explicit factor `P0`, which need not be
/// aligned with the data eigenbasis.
#[allow(clippy::too_many_arguments)]
pub fn two_layer_flow(
    moments: &DataMoments,
    sigma: f64,
    eta: f64,
    p0: &DMatrix<f64>,
    b0: &DVector<f64>,
    taus: &[f64],
    variant: &LossVariant,
    solver: &OdeSolveConfig,
) -> Result<OracleTrajectory> {
    let n = moments.dim();
    if p0.nrows() != n || b0.len() != n {
        return Err(Error::dim(format!("{n} rows"), p0.nrows()));
    }
    let h = p0.ncols();
    let split = |y: &DVector<f64>| {
        let p = DMatrix::from_column_slice(n, h, &y.as_slice()[..n * h]);
        let b = DVector::from_column_slice(&y.as_slice()[n * h..]);
        (p, b)
    };
    let rhs = |_t: f64, y: &DVector<f64>| {
        let (p, b) = split(y);
        let w = &p * p.transpose();
        let (gw, gb) = loss_gradient(moments, variant, sigma, &w, &b);
        let gp = (&gw + gw.transpose()) * &p;
        let mut out = DVector::zeros(n * h + n);
        out.rows_mut(0, n * h).copy_from_slice((gp * -eta).as_slice());
        out.rows_mut(n * h, n).copy_from(&(gb * -eta));
        out
    };
    let mut y0 = DVector::zeros(n * h + n);
    y0.rows_mut(0, n * h).copy_from_slice(p0.as_slice());
    y0.rows_mut(n * h, n).copy_from(b0);
    let ys = integrate(rhs, 0.0, &y0, taus, solver)?;
    Ok(collect(taus, ys, |y| {
        let (p, b) = split(y);
        (&p * p.transpose(), b)
    }))
}

/// Plain gradient descent `θ ← θ − η∇L`, returning `steps + 1` iterates.
pub fn discrete_gd_full(
    moments: &DataMoments,
    sigma: f64,
    eta: f64,
    w0: &DMatrix<f64>,
    b0: &DVector<f64>,
    steps: usize,
    variant: &LossVariant,
) -> Vec<(DMatrix<f64>, DVector<f64>)> {
    let mut out = Vec::with_capacity(steps + 1);
    let (mut w, mut b) = (w0.clone(), b0.clone());
    out.push((w.clone(), b.clone()));
    for _ in 0..steps {
        let (gw, gb) = loss_gradient(moments, variant, sigma, &w, &b);
        w -= gw * eta;
        b -= gb * eta;
        out.push((w.clone(), b.clone()));
    }
    out
}

fn pack(w: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut v = Vec::with_capacity(w.len() + b.len());
    v.extend_from_slice(w.as_slice());
    v.extend_from_slice(b.as_slice());
    DVector::from_vec(v)
}

fn unpack(y: &DVector<f64>, n: usize, nw: usize) -> (DMatrix<f64>, DVector<f64>) {
    (
        DMatrix::from_column_slice(n, nw / n, &y.as_slice()[..nw]),
        DVector::from_column_slice(&y.as_slice()[nw..]),
    )
}

fn collect(
    taus: &[f64],
    ys: Vec<DVector<f64>>,
    f: impl Fn(&DVector<f64>) -> (DMatrix<f64>, DVector<f64>),
) -> OracleTrajectory {
    let (weights, biases) = ys.iter().map(f).unzip();
    OracleTrajectory {
        taus: taus.to_vec(),
        weights,
        biases,
    }
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
}

fn mc_estimate(values: &[f64]) -> McEstimate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    McEstimate {
        mean,
        std_err: (var / n).sqrt(),
    }
}

fn draw_factor(moments: &DataMoments) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(moments.covariance.clone());
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root)
}

fn mc_pairs(moments: &DataMoments, n: usize, seed: u64, mut each: impl FnMut(&DVector<f64>, &DVector<f64>) -> f64) -> Result<McEstimate> {
    if n == 0 {
        return Err(Error::param("n", "must be at least 1"));
    }
    let d = moments.dim();
    let factor = draw_factor(moments);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        let g = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = &factor * g + &moments.mean;
        values.push(each(&x, &z));
    }
    Ok(mc_estimate(&values))
}

/// Monte Carlo denoising loss `E‖W(x + σz) + b − x‖²`.
pub fn mc_dsm_loss(
    w: &DMatrix<f64>,
    b: &DVector<f64>,
    moments: &DataMoments,
    sigma: f64,
    n: usize,
    seed: u64,
) -> Result<McEstimate> {
    mc_pairs(moments, n, seed, |x, z| (w * (x + z * sigma) + b - x).norm_squared())
}

/// Optimal affine denoiser `W* = Σ(Σ + σ²I)⁻¹`, `b* = (I − W*)μ`.
pub fn optimal_affine(moments: &DataMoments, sigma: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let d = moments.dim();
    let a = &moments.covariance + DMatrix::identity(d, d) * (sigma * sigma);
    let lu = a.lu();
    let wt = lu
        .solve(&moments.covariance)
        .ok_or_else(|| Error::Domain("Σ + σ²I is singular".into()))?;
    let w = wt.transpose();
    let b = &moments.mean - &w * &moments.mean;
    Ok((w, b))
}

/// Monte Carlo `E‖D(x̃) − D*(x̃)‖²` over noisy inputs `x̃ = x + σz`.
pub fn mc_denoiser_error(
    w: &DMatrix<f64>,
    b: &DVector<f64>,
    moments: &DataMoments,
    sigma: f64,
    n: usize,
    seed: u64,
) -> Result<McEstimate> {
    let (ws, bs) = optimal_affine(moments, sigma)?;
    let dw = w - ws;
    let db = b - bs;
    mc_pairs(moments, n, seed, |x, z| (&dw * (x + z * sigma) + &db).norm_squared())
}

/// Diagonal of `F* Σ F` with `F_jk = e^{−2πi jk/N}/√N`, by explicit
/// complex matrix products.
pub fn dense_dft_diag(sigma: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = sigma.nrows();
    if sigma.ncols() != n {
        return Err(Error::dim("square matrix", format!("{}x{}", n, sigma.ncols())));
    }
    if n > DENSE_DFT_LIMIT {
        return Err(Error::SizeGuard {
            size: n,
            limit: DENSE_DFT_LIMIT,
        });
    }
    let scale = 1.0 / (n as f64).sqrt();
    let f = DMatrix::from_fn(n, n, |j, k| {
        let ph = -2.0 * std::f64::consts::PI * ((j * k) % n) as f64 / n as f64;
        Complex64::from_polar(scale, ph)
    });
    let sc = sigma.map(|v| Complex64::new(v, 0.0));
    let prod = f.adjoint() * sc * &f;
    Ok((0..n).map(|k| prod[(k, k)].re).collect())
}
