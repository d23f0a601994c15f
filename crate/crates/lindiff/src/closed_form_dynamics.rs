//! Gradient-flow trajectories of linear denoisers along data eigenmodes.
//!
//! Every loss variant trains a linear map on an input `a·x + b·ε` against a
//! target `c·x + d·ε`. Along eigenmode `k` this gives the optimum
//! `w* = (acλ + bd)/(a²λ + b²)` and the rate `a²λ + b²`, and the one-layer
//! weight relaxes as `ψ(τ) = w* + (Q − w*) exp(−2η·rate·τ)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian_model::{CovarianceModel, DataMoments};
use crate::linalg::sym_eigen_desc;
use crate::ode::{integrate, OdeSolveConfig};

/// Noise schedule `(α_t, σ_t)` for the variants parametrized by time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Schedule {
    /// `α = 1`, `σ_t = s`.
    Edm,
    /// `α = cos(πt/2)`, `σ = sin(πt/2)`.
    Cosine,
    /// `α = 1 − t`, `σ = t`.
    Linear,
}

impl Schedule {
    pub fn alpha_sigma(&self, s: f64) -> (f64, f64) {
        match self {
            Schedule::Edm => (1.0, s),
            Schedule::Cosine => {
                let th = std::f64::consts::FRAC_PI_2 * s;
                (th.cos(), th.sin())
            }
            Schedule::Linear => (1.0 - s, s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VariantTag {
    Edm,
    XPred,
    EpsPred,
    VPred,
    FlowMatch,
}

/// Input and target coefficients: `x_in = a·x + b·ε`, `y = c·x + d·ε`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputTarget {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossVariant {
    pub tag: VariantTag,
    pub schedule: Schedule,
}

impl LossVariant {
    pub const EDM: LossVariant = LossVariant {
        tag: VariantTag::Edm,
        schedule: Schedule::Edm,
    };
    pub const FLOW_MATCH: LossVariant = LossVariant {
        tag: VariantTag::FlowMatch,
        schedule: Schedule::Linear,
    };

    pub fn new(tag: VariantTag, schedule: Schedule) -> Self {
        Self { tag, schedule }
    }

    /// Coefficients at noise level (or time) `s`.
    pub fn coefficients(&self, s: f64) -> InputTarget {
        match self.tag {
            VariantTag::Edm => InputTarget { a: 1.0, b: s, c: 1.0, d: 0.0 },
            VariantTag::XPred => {
                let (al, si) = self.schedule.alpha_sigma(s);
                InputTarget { a: al, b: si, c: 1.0, d: 0.0 }
            }
            VariantTag::EpsPred => {
                let (al, si) = self.schedule.alpha_sigma(s);
                InputTarget { a: al, b: si, c: 0.0, d: 1.0 }
            }
            VariantTag::VPred => {
                let (al, si) = self.schedule.alpha_sigma(s);
                InputTarget { a: al, b: si, c: -si, d: al }
            }
            VariantTag::FlowMatch => InputTarget {
                a: s,
                b: 1.0 - s,
                c: 1.0,
                d: -1.0,
            },
        }
    }

    pub fn check_finite(&self, grid: &[f64]) -> Result<()> {
        for &s in grid {
            let c = self.coefficients(s);
            if ![c.a, c.b, c.c, c.d].iter().all(|v| v.is_finite()) {
                return Err(Error::param("variant.schedule", format!("non-finite coefficients at {s}")));
            }
        }
        Ok(())
    }
}

/// Optimal aligned weight `w*_k` of a mode with variance `λ`.
pub fn optimal_mode_weight(variant: &LossVariant, lambda: f64, s: f64) -> Result<f64> {
    let InputTarget { a, b, c, d } = variant.coefficients(s);
    let den = a * a * lambda + b * b;
    if den == 0.0 {
        return Err(Error::Domain(format!(
            "optimal weight undefined for {:?} at lambda = {lambda}, s = {s}",
            variant.tag
        )));
    }
    let num = match variant.tag {
        VariantTag::Edm | VariantTag::XPred => a * lambda,
        VariantTag::EpsPred => b,
        VariantTag::VPred => a * b * (1.0 - lambda),
        VariantTag::FlowMatch => s * lambda - (1.0 - s),
    };
    debug_assert!((num - (a * c * lambda + b * d)).abs() <= 1e-12 * (1.0 + num.abs()));
    Ok(num / den)
}

/// Mode convergence rate `1/τ*`.
pub fn convergence_rate(variant: &LossVariant, lambda: f64, s: f64) -> f64 {
    let InputTarget { a, b, .. } = variant.coefficients(s);
    match variant.tag {
        VariantTag::Edm => lambda + s * s,
        _ => a * a * lambda + b * b,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Architecture {
    OneLayer,
    TwoLayerSymmetric,
    DeepLinear { depth: usize },
    Residual { c_skip: f64, c_out: f64 },
    DiscreteGd,
}

/// Training setup shared by the trajectory functions.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsConfig {
    pub eta: f64,
    pub tau_grid: Vec<f64>,
    /// Aligned initialization `u_kᵀ W(0) u_k` for every mode.
    pub init_q: Vec<f64>,
    /// Noise scale `σ`, or time `t` for the time-indexed variants.
    pub sigma: f64,
    pub architecture: Architecture,
    pub variant: LossVariant,
}

impl DynamicsConfig {
    pub fn new(eta: f64, tau_grid: Vec<f64>, init_q: Vec<f64>, sigma: f64, architecture: Architecture) -> Self {
        Self {
            eta,
            tau_grid,
            init_q,
            sigma,
            architecture,
            variant: LossVariant::EDM,
        }
    }

    pub fn with_variant(mut self, variant: LossVariant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::param("dynamics.eta", "must be positive"));
        }
        if self.tau_grid.is_empty() {
            return Err(Error::param("dynamics.tau", "grid is empty"));
        }
        if self.tau_grid.iter().any(|&t| !(t >= 0.0) || !t.is_finite()) {
            return Err(Error::param("dynamics.tau", "grid values must be finite and nonnegative"));
        }
        if self.tau_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("dynamics.tau", "grid must be strictly increasing"));
        }
        if self.init_q.len() != dim {
            return Err(Error::param(
                "dynamics.q",
                format!("expected {dim} initial values, got {}", self.init_q.len()),
            ));
        }
        if self.init_q.iter().any(|q| !q.is_finite()) {
            return Err(Error::param("dynamics.q", "must be finite"));
        }
        if !self.sigma.is_finite() || (self.variant.tag == VariantTag::Edm && !(self.sigma > 0.0)) {
            return Err(Error::param("dynamics.sigma", "must be positive"));
        }
        self.variant.check_finite(&[self.sigma])?;
        match self.architecture {
            Architecture::TwoLayerSymmetric if self.init_q.iter().any(|&q| q < 0.0) => {
                Err(Error::param("dynamics.q", "two-layer initialization is a squared norm and must be nonnegative"))
            }
            Architecture::DeepLinear { depth } if depth == 0 => Err(Error::param("dynamics.depth", "must be at least 1")),
            Architecture::Residual { c_out, .. } if c_out == 0.0 => Err(Error::param("dynamics.c_out", "must be nonzero")),
            _ => Ok(()),
        }
    }
}

/// Weight of one mode at one noise scale over the training-time grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeTrajectory {
    pub mode: usize,
    pub sigma: f64,
    pub taus: Vec<f64>,
    pub values: Vec<f64>,
    pub target: f64,
}

fn expect_arch(cfg: &DynamicsConfig, ok: bool, name: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::param(
            "dynamics.arch",
            format!("{name} requires a matching architecture, got {:?}", cfg.architecture),
        ))
    }
}

/// Scalar one-layer solution.
pub fn one_layer_weight(variant: &LossVariant, lambda: f64, s: f64, q: f64, eta: f64, tau: f64) -> Result<f64> {
    let w = optimal_mode_weight(variant, lambda, s)?;
    let r = convergence_rate(variant, lambda, s);
    Ok(w + (q - w) * (-2.0 * eta * r * tau).exp())
}

pub fn one_layer_trajectory(cfg: &DynamicsConfig, model: &CovarianceModel) -> Result<Vec<ModeTrajectory>> {
    expect_arch(cfg, cfg.architecture == Architecture::OneLayer, "one_layer_trajectory")?;
    cfg.validate(model.dim())?;
    one_layer_modes(cfg, model, cfg.eta, &cfg.init_q)
}

fn one_layer_modes(cfg: &DynamicsConfig, model: &CovarianceModel, eta: f64, q: &[f64]) -> Result<Vec<ModeTrajectory>> {
    model
        .spectrum()
        .iter()
        .zip(q)
        .enumerate()
        .map(|(k, (&lam, &q0))| {
            let target = optimal_mode_weight(&cfg.variant, lam, cfg.sigma)?;
            let values = cfg
                .tau_grid
                .iter()
                .map(|&t| one_layer_weight(&cfg.variant, lam, cfg.sigma, q0, eta, t))
                .collect::<Result<Vec<_>>>()?;
            Ok(ModeTrajectory {
                mode: k,
                sigma: cfg.sigma,
                taus: cfg.tau_grid.clone(),
                values,
                target,
            })
        })
        .collect()
}

/// `b0 · exp(−2ητ)`.
pub fn one_layer_bias(b0: &DVector<f64>, eta: f64, tau: f64) -> DVector<f64> {
    b0 * (-2.0 * eta * tau).exp()
}

/// `(1 − e^{−x})/x`, finite at zero.
pub(crate) fn one_minus_exp_over(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - 0.5 * x
    } else {
        -(-x).exp_m1() / x
    }
}

/// Scalar symmetric two-layer solution of `df/dτ = 8η(w*·r − r·f)f`.
///
/// Written as `Q / (E + Q·r·g)` with `E = e^{−8η w* r τ}` and
/// `g = (1 − E)/(w* r)`, which stays finite when `λ = 0`.
pub fn two_layer_weight(variant: &LossVariant, lambda: f64, s: f64, q: f64, eta: f64, tau: f64) -> Result<f64> {
    if q < 0.0 {
        return Err(Error::Domain(format!("two-layer initialization must be nonnegative, got {q}")));
    }
    let w = optimal_mode_weight(variant, lambda, s)?;
    if q == 0.0 {
        return Ok(0.0);
    }
    let r = convergence_rate(variant, lambda, s);
    let drive = w * r;
    let x = 8.0 * eta * drive * tau;
    let e = (-x).exp();
    let g = 8.0 * eta * tau * one_minus_exp_over(x);
    Ok(q / (e + q * r * g))
}

pub fn two_layer_trajectory(cfg: &DynamicsConfig, model: &CovarianceModel) -> Result<Vec<ModeTrajectory>> {
    expect_arch(cfg, cfg.architecture == Architecture::TwoLayerSymmetric, "two_layer_trajectory")?;
    cfg.validate(model.dim())?;
    model
        .spectrum()
        .iter()
        .zip(&cfg.init_q)
        .enumerate()
        .map(|(k, (&lam, &q0))| {
            let target = optimal_mode_weight(&cfg.variant, lam, cfg.sigma)?;
            let values = cfg
                .tau_grid
                .iter()
                .map(|&t| two_layer_weight(&cfg.variant, lam, cfg.sigma, q0, cfg.eta, t))
                .collect::<Result<Vec<_>>>()?;
            Ok(ModeTrajectory {
                mode: k,
                sigma: cfg.sigma,
                taus: cfg.tau_grid.clone(),
                values,
                target,
            })
        })
        .collect()
}

/// Per-mode ODE of a depth-`L` aligned linear network,
/// `dc/dτ = ηL[λ − (σ² + λ)c] c^{2 − 2/L}`.
///
/// With this convention `L = 1` matches [`one_layer_trajectory`] at `2η`
/// and `L = 2` matches [`two_layer_trajectory`] at `4η`; in general the
/// tied-weight rate is recovered with `η → 2Lη`.
pub fn deep_linear_mode(depth: usize, lambda: f64, sigma: f64, c0: f64, eta: f64, tau_grid: &[f64]) -> Result<Vec<f64>> {
    if depth == 0 {
        return Err(Error::param("depth", "must be at least 1"));
    }
    if depth >= 2 && !(c0 > 0.0) {
        return Err(Error::param("c0", "must be positive for depth 2 and above"));
    }
    let p = 2.0 - 2.0 / depth as f64;
    let l = depth as f64;
    let a = sigma * sigma + lambda;
    let rhs = move |_t: f64, y: &DVector<f64>| {
        let c = y[0];
        let pow = if p == 0.0 { 1.0 } else { c.max(0.0).powf(p) };
        DVector::from_element(1, eta * l * (lambda - a * c) * pow)
    };
    let y0 = DVector::from_element(1, c0);
    let cfg = OdeSolveConfig::adaptive(1e-12, 1e-15);
    match integrate(rhs, 0.0, &y0, tau_grid, &cfg) {
        Ok(ys) => Ok(ys.into_iter().map(|y| y[0]).collect()),
        Err(Error::Integration { at, .. }) => Err(Error::StalledAtSaddle { tau: at }),
        Err(e) => Err(e),
    }
}

/// Residual parametrization `W = c_skip·I + c_out·W′` with `W′` trained.
///
/// The effective map follows the one-layer solution with learning rate
/// `c_out²·η`, starting from `c_skip + c_out·Q_k`.
pub fn residual_reparam_trajectory(cfg: &DynamicsConfig, model: &CovarianceModel) -> Result<Vec<ModeTrajectory>> {
    let Architecture::Residual { c_skip, c_out } = cfg.architecture else {
        return expect_arch(cfg, false, "residual_reparam_trajectory").map(|_| Vec::new());
    };
    cfg.validate(model.dim())?;
    let q_eff: Vec<f64> = cfg.init_q.iter().map(|q| c_skip + c_out * q).collect();
    one_layer_modes(cfg, model, c_out * c_out * cfg.eta, &q_eff)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteGdTrajectory {
    pub mode: usize,
    pub iterates: Vec<f64>,
    pub target: f64,
    /// Per-step contraction factor `1 − 2η·rate`.
    pub factor: f64,
    pub diverged: bool,
}

/// Full-batch gradient descent with step `η`, solved per mode.
pub fn discrete_gd_trajectory(cfg: &DynamicsConfig, model: &CovarianceModel, steps: usize) -> Result<Vec<DiscreteGdTrajectory>> {
    expect_arch(cfg, cfg.architecture == Architecture::DiscreteGd, "discrete_gd_trajectory")?;
    if model.dim() != cfg.init_q.len() {
        return Err(Error::dim(model.dim(), cfg.init_q.len()));
    }
    if !(cfg.eta > 0.0) {
        return Err(Error::param("dynamics.eta", "must be positive"));
    }
    model
        .spectrum()
        .iter()
        .zip(&cfg.init_q)
        .enumerate()
        .map(|(k, (&lam, &q0))| {
            let target = optimal_mode_weight(&cfg.variant, lam, cfg.sigma)?;
            let factor = 1.0 - 2.0 * cfg.eta * convergence_rate(&cfg.variant, lam, cfg.sigma);
            let iterates = (0..=steps)
                .map(|t| target + (q0 - target) * factor.powi(t as i32))
                .collect();
            Ok(DiscreteGdTrajectory {
                mode: k,
                iterates,
                target,
                factor,
                diverged: factor.abs() >= 1.0,
            })
        })
        .collect()
}

/// Dispatches on `cfg.architecture`. Deep networks use
/// [`deep_linear_mode`] with the configured `η` unchanged; the discrete
/// case reads the τ grid as iteration counts.
pub fn trajectories(cfg: &DynamicsConfig, model: &CovarianceModel) -> Result<Vec<ModeTrajectory>> {
    match cfg.architecture {
        Architecture::OneLayer => one_layer_trajectory(cfg, model),
        Architecture::TwoLayerSymmetric => two_layer_trajectory(cfg, model),
        Architecture::Residual { .. } => residual_reparam_trajectory(cfg, model),
        Architecture::DeepLinear { depth } => {
            cfg.validate(model.dim())?;
            if cfg.variant.tag != VariantTag::Edm {
                return Err(Error::param("dynamics.variant", "deep networks are defined for the EDM loss only"));
            }
            model
                .spectrum()
                .iter()
                .zip(&cfg.init_q)
                .enumerate()
                .map(|(k, (&lam, &q0))| {
                    Ok(ModeTrajectory {
                        mode: k,
                        sigma: cfg.sigma,
                        taus: cfg.tau_grid.clone(),
                        values: deep_linear_mode(depth, lam, cfg.sigma, q0, cfg.eta, &cfg.tau_grid)?,
                        target: lam / (lam + cfg.sigma * cfg.sigma),
                    })
                })
                .collect()
        }
        Architecture::DiscreteGd => {
            cfg.validate(model.dim())?;
            let steps = cfg.tau_grid.last().copied().unwrap_or(0.0).round() as usize;
            let runs = discrete_gd_trajectory(cfg, model, steps)?;
            Ok(runs
                .into_iter()
                .map(|r| ModeTrajectory {
                    mode: r.mode,
                    sigma: cfg.sigma,
                    taus: cfg.tau_grid.clone(),
                    values: cfg.tau_grid.iter().map(|&t| r.iterates[t.round() as usize]).collect(),
                    target: r.target,
                })
                .collect())
        }
    }
}

/// Rank-one-plus-diagonal coupling between weights and bias for data with
/// nonzero mean.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanCovCoupling {
    /// `m_k = u_kᵀ μ`.
    pub overlaps: DVector<f64>,
    pub dynamics_matrix: DMatrix<f64>,
}

impl MeanCovCoupling {
    pub fn new(spectrum: &[f64], overlaps: DVector<f64>, sigma: f64) -> Result<Self> {
        let d = spectrum.len();
        if overlaps.len() != d {
            return Err(Error::dim(d, overlaps.len()));
        }
        let mut q = DVector::from_element(d + 1, 1.0);
        q.rows_mut(0, d).copy_from(&overlaps);
        let mut m = &q * q.transpose();
        for (k, &lam) in spectrum.iter().enumerate() {
            m[(k, k)] += sigma * sigma + lam;
        }
        Ok(Self {
            overlaps,
            dynamics_matrix: m,
        })
    }

    /// Diagonal part `D` of `M̃ = D + q qᵀ`.
    pub fn diagonal(&self) -> DVector<f64> {
        let q = self.q_vector();
        let qq = &q * q.transpose();
        (&self.dynamics_matrix - qq).diagonal()
    }

    pub fn q_vector(&self) -> DVector<f64> {
        let d = self.overlaps.len();
        let mut q = DVector::from_element(d + 1, 1.0);
        q.rows_mut(0, d).copy_from(&self.overlaps);
        q
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanCoupledTrajectory {
    pub taus: Vec<f64>,
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

/// One-layer denoiser with bias trained on data with mean `μ`.
///
/// The state stacks `v_k = W u_k` and `b̄ = b − μ` and obeys
/// `dS/dτ = −2η M̃ S + 2η F`, solved through the eigendecomposition of
/// the symmetric `M̃`. The weight starts aligned at `U diag(Q) Uᵀ` and
/// the bias at `b0`.
pub fn mean_coupled_trajectory(moments: &DataMoments, cfg: &DynamicsConfig, b0: &DVector<f64>) -> Result<MeanCoupledTrajectory> {
    expect_arch(cfg, cfg.architecture == Architecture::OneLayer, "mean_coupled_trajectory")?;
    if cfg.variant.tag != VariantTag::Edm {
        return Err(Error::param("dynamics.variant", "the mean-coupled solution is defined for the EDM loss"));
    }
    let model = moments.eigen()?;
    let d = model.dim();
    cfg.validate(d)?;
    if b0.len() != d {
        return Err(Error::dim(d, b0.len()));
    }
    let u = model.basis();
    let lam = model.spectrum();
    let m = u.tr_mul(&moments.mean);
    let coupling = MeanCovCoupling::new(lam, m, cfg.sigma)?;
    let (vals, vecs) = sym_eigen_desc(&coupling.dynamics_matrix);

    let mut forcing = DMatrix::zeros(d + 1, d);
    for k in 0..d {
        forcing.row_mut(k).copy_from(&(u.column(k) * lam[k]).transpose());
    }
    let mut s_star = vecs.tr_mul(&forcing);
    for (i, mut row) in s_star.row_iter_mut().enumerate() {
        row /= vals[i];
    }
    let s_star = &vecs * s_star;

    let mut s0 = DMatrix::zeros(d + 1, d);
    for k in 0..d {
        s0.row_mut(k).copy_from(&(u.column(k) * cfg.init_q[k]).transpose());
    }
    s0.row_mut(d).copy_from(&(b0 - &moments.mean).transpose());
    let dev0 = vecs.tr_mul(&(s0 - &s_star));

    let mut weights = Vec::with_capacity(cfg.tau_grid.len());
    let mut biases = Vec::with_capacity(cfg.tau_grid.len());
    for &tau in &cfg.tau_grid {
        let mut dev = dev0.clone();
        for (i, mut row) in dev.row_iter_mut().enumerate() {
            row *= (-2.0 * cfg.eta * vals[i] * tau).exp();
        }
        let s = &s_star + &vecs * dev;
        let v = s.rows(0, d);
        weights.push(v.transpose() * u.transpose());
        biases.push(s.row(d).transpose() + &moments.mean);
    }
    Ok(MeanCoupledTrajectory {
        taus: cfg.tau_grid.clone(),
        weights,
        biases,
    })
}

/// Overlaps `G_km = q_kᵀ q_m` of a symmetric two-layer network over τ.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapTrajectory {
    pub taus: Vec<f64>,
    pub overlaps: Vec<DMatrix<f64>>,
}

impl OverlapTrajectory {
    pub fn entry(&self, k: usize, m: usize) -> Vec<f64> {
        self.overlaps.iter().map(|g| g[(k, m)]).collect()
    }
}

/// Integrates the closed overlap dynamics of `W = P Pᵀ` in the eigenbasis,
/// `dG/dτ = η[4(ΛG + GΛ) − 4GÃG − 2(ÃG² + G²Ã)]`, `Ã = σ²I + Λ`.
///
/// Row `k` of `q_init` is `q_k = Pᵀ u_k` at initialization.
pub fn two_layer_overlap_simulation(
    model: &CovarianceModel,
    sigma: f64,
    eta: f64,
    q_init: &DMatrix<f64>,
    tau_grid: &[f64],
) -> Result<OverlapTrajectory> {
    let d = model.dim();
    if q_init.nrows() != d {
        return Err(Error::dim(format!("{d} rows"), q_init.nrows()));
    }
    let lam = DVector::from_column_slice(model.spectrum());
    let a = lam.map(|l| l + sigma * sigma);
    let g0 = q_init * q_init.transpose();
    let rhs = |_t: f64, y: &DVector<f64>| {
        let g = DMatrix::from_column_slice(d, d, y.as_slice());
        let lg = DMatrix::from_fn(d, d, |i, j| lam[i] * g[(i, j)]);
        let ag = DMatrix::from_fn(d, d, |i, j| a[i] * g[(i, j)]);
        let g2 = &g * &g;
        let ag2 = DMatrix::from_fn(d, d, |i, j| a[i] * g2[(i, j)]);
        let dg = (&lg + lg.transpose()) * 4.0 - (&g * &ag) * 4.0 - (&ag2 + ag2.transpose()) * 2.0;
        DVector::from_column_slice((dg * eta).as_slice())
    };
    let y0 = DVector::from_column_slice(g0.as_slice());
    let ys = integrate(rhs, 0.0, &y0, tau_grid, &OdeSolveConfig::adaptive(1e-11, 1e-14))?;
    Ok(OverlapTrajectory {
        taus: tau_grid.to_vec(),
        overlaps: ys
            .into_iter()
            .map(|y| {
                let g = DMatrix::from_column_slice(d, d, y.as_slice());
                (&g + g.transpose()) * 0.5
            })
            .collect(),
    })
}

/// Untied two-layer mode `W = f·g`:
/// `df/dτ = 2η(λ − (σ²+λ)fg)g`, `dg/dτ = 2η(λ − (σ²+λ)fg)f`.
/// The difference `f² − g²` is conserved.
pub fn general_two_layer_mode(lambda: f64, sigma: f64, f0: f64, g0: f64, eta: f64, tau_grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    let a = sigma * sigma + lambda;
    let rhs = |_t: f64, y: &DVector<f64>| {
        let err = lambda - a * y[0] * y[1];
        DVector::from_vec(vec![2.0 * eta * err * y[1], 2.0 * eta * err * y[0]])
    };
    let ys = integrate(rhs, 0.0, &DVector::from_vec(vec![f0, g0]), tau_grid, &OdeSolveConfig::adaptive(1e-12, 1e-15))?;
    Ok(ys.into_iter().map(|y| (y[0], y[1])).collect())
}

/// Right side of the reduced product dynamics `dh/dτ = √(4h² + C²)(A − Bh)`
/// for `h = fg`, `C = f² − g²`, `A = 2ηλ`, `B = 2η(σ² + λ)`.
pub fn reduced_two_layer_rate(h: f64, conserved: f64, lambda: f64, sigma: f64, eta: f64) -> f64 {
    let a = 2.0 * eta * lambda;
    let b = 2.0 * eta * (sigma * sigma + lambda);
    (4.0 * h * h + conserved * conserved).sqrt() * (a - b * h)
}
