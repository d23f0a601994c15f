//! Gaussian data models, synthetic spectra, sampling and empirical moments.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{asymmetry, fix_signs, geomspace, sym_eigen_desc};

const ORTHONORMAL_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;

/// Seeded generator used for every random draw in the crate.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Orthonormal eigenbasis `U` (columns `u_k`) with a descending spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceModel {
    basis: DMatrix<f64>,
    spectrum: Vec<f64>,
}

impl CovarianceModel {
    pub fn new(basis: DMatrix<f64>, spectrum: Vec<f64>) -> Result<Self> {
        let d = spectrum.len();
        if d == 0 {
            return Err(Error::param("dim", "must be at least 1"));
        }
        if basis.nrows() != d || basis.ncols() != d {
            return Err(Error::dim(format!("{d}x{d} basis"), format!("{}x{}", basis.nrows(), basis.ncols())));
        }
        if spectrum.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
            return Err(Error::param("spectrum", "eigenvalues must be finite and nonnegative"));
        }
        if spectrum.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::param("spectrum", "eigenvalues must be sorted in descending order"));
        }
        let gram = basis.tr_mul(&basis);
        let dev = (gram - DMatrix::identity(d, d)).amax();
        if dev > ORTHONORMAL_TOL {
            return Err(Error::param("basis", format!("columns are not orthonormal (deviation {dev:e})")));
        }
        Ok(Self { basis, spectrum })
    }

    /// Model with the identity basis.
    pub fn diagonal(spectrum: Vec<f64>) -> Result<Self> {
        let d = spectrum.len();
        Self::new(DMatrix::identity(d, d), spectrum)
    }

    /// Eigendecomposition of a symmetric PSD covariance matrix.
    pub fn from_covariance(sigma: &DMatrix<f64>) -> Result<Self> {
        if sigma.nrows() != sigma.ncols() {
            return Err(Error::dim("square matrix", format!("{}x{}", sigma.nrows(), sigma.ncols())));
        }
        let (vals, vecs) = sym_eigen_desc(sigma);
        let vals = vals
            .into_iter()
            .map(|v| if v < 0.0 && v > -PSD_TOL * (1.0 + sigma.amax()) { 0.0 } else { v })
            .collect::<Vec<_>>();
        Self::new(vecs, vals)
    }

    pub fn dim(&self) -> usize {
        self.spectrum.len()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    pub fn mode(&self, k: usize) -> DVector<f64> {
        self.basis.column(k).into_owned()
    }

    /// `Σ = U Λ Uᵀ`.
    pub fn covariance(&self) -> DMatrix<f64> {
        self.compose(&self.spectrum)
    }

    /// `U diag(values) Uᵀ`.
    pub fn compose(&self, values: &[f64]) -> DMatrix<f64> {
        let mut scaled = self.basis.clone();
        for (mut col, &v) in scaled.column_iter_mut().zip(values) {
            col *= v;
        }
        let m = scaled * self.basis.transpose();
        (&m + m.transpose()) * 0.5
    }
}

/// First and second moments of a data distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMoments {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl DataMoments {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::dim(
                format!("{d}x{d} covariance"),
                format!("{}x{}", covariance.nrows(), covariance.ncols()),
            ));
        }
        let asym = asymmetry(&covariance);
        if asym > SYMMETRY_TOL * (1.0 + covariance.amax()) {
            return Err(Error::param("covariance", format!("not symmetric (deviation {asym:e})")));
        }
        let (vals, _) = sym_eigen_desc(&covariance);
        if let Some(&min) = vals.last() {
            if min < -PSD_TOL * (1.0 + covariance.amax()) {
                return Err(Error::param("covariance", format!("not positive semidefinite (eigenvalue {min:e})")));
            }
        }
        Ok(Self { mean, covariance })
    }

    pub fn zero_mean(model: &CovarianceModel) -> Self {
        Self {
            mean: DVector::zeros(model.dim()),
            covariance: model.covariance(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn eigen(&self) -> Result<CovarianceModel> {
        CovarianceModel::from_covariance(&self.covariance)
    }
}

/// Recipe for a synthetic eigenvalue spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SpectrumKind {
    /// `λ = exp(mu + sigma·z)` with `z` standard normal.
    LogNormal { mu: f64, sigma: f64 },
    /// Geometric grid from `hi` down to `lo`.
    LogSpaced { lo: f64, hi: f64 },
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSpec {
    pub kind: SpectrumKind,
    pub normalize_mean_to_one: bool,
}

impl SpectrumSpec {
    pub fn log_normal() -> Self {
        Self {
            kind: SpectrumKind::LogNormal { mu: 0.0, sigma: 1.0 },
            normalize_mean_to_one: true,
        }
    }

    pub fn log_spaced(lo: f64, hi: f64) -> Self {
        Self {
            kind: SpectrumKind::LogSpaced { lo, hi },
            normalize_mean_to_one: false,
        }
    }

    pub fn explicit(values: Vec<f64>) -> Self {
        Self {
            kind: SpectrumKind::Explicit(values),
            normalize_mean_to_one: false,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match &self.kind {
            SpectrumKind::LogNormal { mu, sigma } => {
                if !mu.is_finite() {
                    return Err(Error::param("spectrum.mu", "must be finite"));
                }
                if !(*sigma >= 0.0) || !sigma.is_finite() {
                    return Err(Error::param("spectrum.sigma", "must be finite and nonnegative"));
                }
            }
            SpectrumKind::LogSpaced { lo, hi } => {
                if !(*lo > 0.0) || !lo.is_finite() {
                    return Err(Error::param("spectrum.lo", "must be positive"));
                }
                if !(*hi >= *lo) || !hi.is_finite() {
                    return Err(Error::param("spectrum.hi", "must be finite and at least lo"));
                }
            }
            SpectrumKind::Explicit(v) => {
                if v.len() != dim {
                    return Err(Error::param("spectrum.values", format!("expected {dim} values, got {}", v.len())));
                }
                if v.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                    return Err(Error::param("spectrum.values", "must be finite and nonnegative"));
                }
            }
        }
        if self.normalize_mean_to_one {
            if let SpectrumKind::Explicit(v) = &self.kind {
                if v.iter().all(|&x| x == 0.0) {
                    return Err(Error::param("spectrum.normalize", "cannot normalize an all-zero spectrum"));
                }
            }
        }
        Ok(())
    }

    /// Eigenvalues sorted in descending order.
    pub fn generate<R: Rng>(&self, dim: usize, rng: &mut R) -> Result<Vec<f64>> {
        self.validate(dim)?;
        let mut values = match &self.kind {
            SpectrumKind::LogNormal { mu, sigma } => (0..dim)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    (mu + sigma * z).exp()
                })
                .collect(),
            SpectrumKind::LogSpaced { lo, hi } => geomspace(*hi, *lo, dim),
            SpectrumKind::Explicit(v) => v.clone(),
        };
        values.sort_by(|a, b| b.total_cmp(a));
        if self.normalize_mean_to_one {
            let mean = values.iter().sum::<f64>() / dim as f64;
            for v in &mut values {
                *v /= mean;
            }
        }
        Ok(values)
    }
}

/// Haar-like random orthogonal matrix from the QR factor of a Gaussian matrix.
pub fn random_orthogonal<R: Rng>(dim: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut q = g.qr().q();
    fix_signs(&mut q);
    q
}

/// Randomly rotated covariance with the requested spectrum.
pub fn make_covariance(spec: &SpectrumSpec, dim: usize, seed: u64) -> Result<CovarianceModel> {
    if dim == 0 {
        return Err(Error::param("dim", "must be at least 1"));
    }
    let mut rng = seeded_rng(seed);
    let spectrum = spec.generate(dim, &mut rng)?;
    let basis = random_orthogonal(dim, &mut rng);
    CovarianceModel::new(basis, spectrum)
}

/// `n` i.i.d. rows drawn from `N(mean, U Λ Uᵀ)`.
pub fn sample_gaussian(model: &CovarianceModel, mean: &DVector<f64>, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    sample_gaussian_with(model, mean, n, &mut seeded_rng(seed))
}

pub fn sample_gaussian_with<R: Rng>(
    model: &CovarianceModel,
    mean: &DVector<f64>,
    n: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    sample_in_basis(model.basis(), model.spectrum(), mean, n, rng)
}

pub(crate) fn sample_in_basis<R: Rng>(
    basis: &DMatrix<f64>,
    variances: &[f64],
    mean: &DVector<f64>,
    n: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let d = variances.len();
    if mean.len() != d {
        return Err(Error::dim(d, mean.len()));
    }
    if n == 0 {
        return Err(Error::param("n", "must be at least 1"));
    }
    let mut factor = basis.clone();
    for (mut col, &v) in factor.column_iter_mut().zip(variances) {
        col *= v.max(0.0).sqrt();
    }
    let z = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut x = z * factor.transpose();
    for mut row in x.row_iter_mut() {
        row += mean.transpose();
    }
    Ok(x)
}

/// Sample mean and unbiased (`n − 1`) covariance of the rows.
pub fn empirical_moments(samples: &DMatrix<f64>) -> Result<DataMoments> {
    let n = samples.nrows();
    if n < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 samples, got {n}")));
    }
    let mean = samples.row_mean().transpose();
    let mut centered = samples.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.tr_mul(&centered) / (n - 1) as f64;
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(DataMoments { mean, covariance: cov })
}

/// `λ̃_k = u_kᵀ Σ̂ u_k`.
pub fn project_variances(sigma_hat: &DMatrix<f64>, model: &CovarianceModel) -> Result<Vec<f64>> {
    let d = model.dim();
    if sigma_hat.nrows() != d || sigma_hat.ncols() != d {
        return Err(Error::dim(format!("{d}x{d}"), format!("{}x{}", sigma_hat.nrows(), sigma_hat.ncols())));
    }
    let u = model.basis();
    let su = sigma_hat * u;
    Ok((0..d).map(|k| u.column(k).dot(&su.column(k))).collect())
}
