//! Circular convolutional denoisers.
//!
//! A filter `w` with taps at offsets `−r..=r` acts on length-`N` signals as
//! the circulant matrix `W_ij = w_{(j−i) mod N}`. The DFT matrix
//! `F_mk = e^{−2πi mk/N}/√N` diagonalizes it with multipliers
//! `γ_l = Σ_k e^{−2πi kl/N} w_k`.

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::linalg::{asymmetry, spectral_apply, sym_eigen_desc};

const SYMMETRY_TOL: f64 = 1e-8;
const IMAG_TOL: f64 = 1e-10;

/// Filter of odd width `K = 2r + 1` on a circular signal of length `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct CirculantDenoiser {
    signal_len: usize,
    half_width: usize,
    filter: Vec<f64>,
    pub noise_scale: f64,
}

impl CirculantDenoiser {
    /// `filter[j]` is the tap at offset `j − r`.
    pub fn new(signal_len: usize, filter: Vec<f64>, noise_scale: f64) -> Result<Self> {
        let k = filter.len();
        if k.is_multiple_of(2) {
            return Err(Error::param("filter", format!("width must be odd, got {k}")));
        }
        if k > signal_len {
            return Err(Error::param("filter", format!("width {k} exceeds signal length {signal_len}")));
        }
        Ok(Self {
            signal_len,
            half_width: k / 2,
            filter,
            noise_scale,
        })
    }

    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    pub fn half_width(&self) -> usize {
        self.half_width
    }

    pub fn filter(&self) -> &[f64] {
        &self.filter
    }

    /// Taps laid out by residue: `out[(offset) mod N] = w_offset`.
    pub fn wrapped_taps(&self) -> Vec<f64> {
        let n = self.signal_len;
        let mut out = vec![0.0; n];
        for (j, &w) in self.filter.iter().enumerate() {
            let off = j as i64 - self.half_width as i64;
            out[off.rem_euclid(n as i64) as usize] += w;
        }
        out
    }

    pub fn circulant_matrix(&self) -> DMatrix<f64> {
        circulant_from_taps(&self.wrapped_taps())
    }
}

/// `W_ij = taps[(j − i) mod N]`.
pub fn circulant_from_taps(taps: &[f64]) -> DMatrix<f64> {
    let n = taps.len();
    DMatrix::from_fn(n, n, |i, j| taps[(j + n - i) % n])
}

/// Fourier multipliers and Fourier-mode variances.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierModeSet {
    pub gammas: Vec<Complex64>,
    pub mode_vars: Vec<f64>,
}

impl FourierModeSet {
    /// Frequencies `0..=N/2` with multiplicity 2 for the paired modes.
    pub fn half_spectrum(n: usize) -> Vec<(usize, usize)> {
        (0..=n / 2)
            .map(|k| {
                let paired = k != 0 && !(n.is_multiple_of(2) && k == n / 2);
                (k, if paired { 2 } else { 1 })
            })
            .collect()
    }
}

fn fft_forward(buf: &mut [Complex64]) {
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(buf.len()).process(buf);
}

/// `γ_l` from the nonzero taps. `mode_vars` is left empty.
pub fn filter_to_gammas(cd: &CirculantDenoiser) -> FourierModeSet {
    let mut buf: Vec<Complex64> = cd.wrapped_taps().into_iter().map(|w| Complex64::new(w, 0.0)).collect();
    fft_forward(&mut buf);
    FourierModeSet {
        gammas: buf,
        mode_vars: Vec::new(),
    }
}

/// Inverse of [`filter_to_gammas`] for a full-width filter: taps at
/// offsets `−r..=r` with `N = 2r + 1`.
pub fn gammas_to_filter(gammas: &[Complex64]) -> Result<Vec<f64>> {
    let n = gammas.len();
    if n.is_multiple_of(2) {
        return Err(Error::param("gammas", "full-width reconstruction needs odd N"));
    }
    let mut buf: Vec<Complex64> = gammas.iter().map(|g| g.conj()).collect();
    fft_forward(&mut buf);
    let wrapped: Vec<f64> = buf.iter().map(|c| c.conj().re / n as f64).collect();
    let r = n / 2;
    Ok((0..n)
        .map(|j| wrapped[(j as i64 - r as i64).rem_euclid(n as i64) as usize])
        .collect())
}

/// Diagonal of `F* Σ F`, i.e. `(1/N) Σ_mn Σ_mn e^{2πi k(m−n)/N}`.
pub fn dft_mode_variance(sigma: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = sigma.nrows();
    if sigma.ncols() != n {
        return Err(Error::dim("square matrix", format!("{}x{}", n, sigma.ncols())));
    }
    let asym = asymmetry(sigma);
    if asym > SYMMETRY_TOL * (1.0 + sigma.amax()) {
        return Err(Error::Validation(format!("covariance is not symmetric (deviation {asym:e})")));
    }
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    // rows[m][k] = Σ_n Σ_mn e^{−2πi nk/N}
    let mut rows: Vec<Vec<Complex64>> = (0..n)
        .map(|m| (0..n).map(|j| Complex64::new(sigma[(m, j)], 0.0)).collect())
        .collect();
    for row in &mut rows {
        fft.process(row);
    }
    let scale = 1.0 + sigma.amax();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut acc = Complex64::new(0.0, 0.0);
        for (m, row) in rows.iter().enumerate() {
            let ph = 2.0 * std::f64::consts::PI * ((m * k) % n) as f64 / n as f64;
            acc += Complex64::from_polar(1.0, ph) * row[k];
        }
        acc /= n as f64;
        if acc.im.abs() > IMAG_TOL * scale * n as f64 {
            return Err(Error::Validation(format!(
                "Fourier variance {k} has imaginary part {:e}",
                acc.im
            )));
        }
        out.push(acc.re.max(0.0));
    }
    Ok(out)
}

/// `γ_k(τ) = γ* + (γ0 − γ*) e^{−2Nη(σ² + Σ̃_kk)τ}`, `γ* = Σ̃_kk/(σ² + Σ̃_kk)`.
pub fn full_width_gamma_trajectory(mode_var: f64, gamma0: f64, sigma: f64, eta: f64, n: usize, tau: &[f64]) -> Vec<f64> {
    let a = sigma * sigma + mode_var;
    let target = mode_var / a;
    tau.iter()
        .map(|&t| target + (gamma0 - target) * (-2.0 * n as f64 * eta * a * t).exp())
        .collect()
}

/// Shift-averaged `K×K` covariance of circular patches of width `2r + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchCovariance {
    pub matrix: DMatrix<f64>,
}

impl PatchCovariance {
    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn half_width(&self) -> usize {
        self.size() / 2
    }

    pub fn is_toeplitz(&self, tol: f64) -> bool {
        let k = self.size();
        (1..k).all(|i| (1..k).all(|j| (self.matrix[(i, j)] - self.matrix[(i - 1, j - 1)]).abs() <= tol))
    }
}

/// `(Σ_patch)_ab = (1/N) Σ_i Σ_{i+a, i+b mod N}`.
pub fn patch_covariance(sigma: &DMatrix<f64>, r: usize) -> Result<PatchCovariance> {
    let n = sigma.nrows();
    if sigma.ncols() != n {
        return Err(Error::dim("square matrix", format!("{}x{}", n, sigma.ncols())));
    }
    let k = 2 * r + 1;
    if k > n {
        return Err(Error::param("r", format!("patch width {k} exceeds signal length {n}")));
    }
    // Shift average χ[δ] = (1/N) Σ_i Σ_{i, i+δ}; the patch matrix is χ[b − a].
    let chi: Vec<f64> = (0..n)
        .map(|delta| (0..n).map(|i| sigma[(i, (i + delta) % n)]).sum::<f64>() / n as f64)
        .collect();
    let m = DMatrix::from_fn(k, k, |a, b| {
        let delta = (b as i64 - a as i64).rem_euclid(n as i64) as usize;
        let back = (a as i64 - b as i64).rem_euclid(n as i64) as usize;
        0.5 * (chi[delta] + chi[back])
    });
    Ok(PatchCovariance { matrix: m })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchTrajectory {
    pub taus: Vec<f64>,
    pub filters: Vec<DVector<f64>>,
    pub optimum: DVector<f64>,
}

/// `w* = (σ²I + Σ_patch)^{-1} Σ_patch e_0` with `e_0` the center tap.
pub fn patch_optimum(pc: &PatchCovariance, sigma: f64) -> Result<DVector<f64>> {
    let k = pc.size();
    let a = &pc.matrix + DMatrix::identity(k, k) * (sigma * sigma);
    let rhs = pc.matrix.column(pc.half_width()).into_owned();
    a.cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or_else(|| Error::Domain("σ²I + Σ_patch is not positive definite".into()))
}

/// `w(τ) = w* + exp[−2Nητ(σ²I + Σ_patch)](w0 − w*)`.
pub fn patch_filter_trajectory(
    pc: &PatchCovariance,
    sigma: f64,
    eta: f64,
    n: usize,
    w0: &DVector<f64>,
    tau: &[f64],
) -> Result<PatchTrajectory> {
    let k = pc.size();
    if k.is_multiple_of(2) {
        return Err(Error::param("patch", "width must be odd"));
    }
    if w0.len() != k {
        return Err(Error::dim(k, w0.len()));
    }
    let a = &pc.matrix + DMatrix::identity(k, k) * (sigma * sigma);
    let (vals, vecs) = sym_eigen_desc(&a);
    let rhs = pc.matrix.column(pc.half_width()).into_owned();
    let optimum = spectral_apply(&vals, &vecs, |l| 1.0 / l, &rhs);
    let dev = w0 - &optimum;
    let filters = tau
        .iter()
        .map(|&t| &optimum + spectral_apply(&vals, &vecs, |l| (-2.0 * n as f64 * eta * t * l).exp(), &dev))
        .collect();
    Ok(PatchTrajectory {
        taus: tau.to_vec(),
        filters,
        optimum,
    })
}

/// Fixed point of a banded Toeplitz (non-circular) filter
/// `W = Σ_{|m|≤r} w_m S(m)`, with `S(m)` the `m`-th open shift.
///
/// Solves `T w = R` where `T[k,m] = Tr[S(m)(σ²I + Σ)S(k)ᵀ]` and
/// `R_k = Tr[S(k) Σ]`.
pub fn toeplitz_fixed_point(sigma_cov: &DMatrix<f64>, sigma: f64, r: usize) -> Result<DVector<f64>> {
    let n = sigma_cov.nrows();
    if 2 * r + 1 > n {
        return Err(Error::param("r", "filter wider than the signal"));
    }
    let shift = |m: i64| -> DMatrix<f64> { DMatrix::from_fn(n, n, |i, j| if j as i64 - i as i64 == m { 1.0 } else { 0.0 }) };
    let offsets: Vec<i64> = (-(r as i64)..=r as i64).collect();
    let a = sigma_cov + DMatrix::identity(n, n) * (sigma * sigma);
    let shifts: Vec<DMatrix<f64>> = offsets.iter().map(|&m| shift(m)).collect();
    let k = offsets.len();
    let t = DMatrix::from_fn(k, k, |i, j| (&shifts[j] * &a * shifts[i].transpose()).trace());
    let rv = DVector::from_fn(k, |i, _| (shifts[i].transpose() * sigma_cov).trace());
    t.cholesky()
        .map(|c| c.solve(&rv))
        .ok_or_else(|| Error::Domain("Toeplitz normal matrix is not positive definite".into()))
}

/// Orthonormal real Fourier basis of length `N`, with the DFT frequency
/// each column represents. Columns are the constant, then
/// `√2·cos` and `√2·sin` pairs, then the alternating Nyquist vector for
/// even `N`.
pub fn real_fourier_basis(n: usize) -> (DMatrix<f64>, Vec<usize>) {
    let mut cols = Vec::with_capacity(n);
    let mut freqs = Vec::with_capacity(n);
    let norm = 1.0 / (n as f64).sqrt();
    cols.push(DVector::from_element(n, norm));
    freqs.push(0);
    for k in 1..n.div_ceil(2) {
        let w = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
        cols.push(DVector::from_fn(n, |i, _| (w * i as f64).cos() * norm * std::f64::consts::SQRT_2));
        cols.push(DVector::from_fn(n, |i, _| (w * i as f64).sin() * norm * std::f64::consts::SQRT_2));
        freqs.push(k);
        freqs.push(k);
    }
    if n.is_multiple_of(2) && n > 1 {
        cols.push(DVector::from_fn(n, |i, _| if i % 2 == 0 { norm } else { -norm }));
        freqs.push(n / 2);
    }
    (DMatrix::from_columns(&cols), freqs)
}
