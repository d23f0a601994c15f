//! Oracle cross-checks on the default desk-scale problems.
//!
//! Each suite returns one [`Check`] per measured quantity. The `validate`
//! subcommand runs them and exits nonzero if any bound is violated.

use std::fmt;

use lindiff::analysis::{emergence_time, power_law_fit, ModeEmergence};
use lindiff::closed_form_dynamics::{convergence_rate, mean_coupled_trajectory, optimal_mode_weight, two_layer_weight};
use lindiff::conv_dynamics::{
    circulant_from_taps, dft_mode_variance, full_width_gamma_trajectory, patch_covariance, patch_filter_trajectory,
    patch_optimum, CirculantDenoiser,
};
use lindiff::flow_matching_dynamics::{
    fm_generated_variance_ratio, fm_ln_generated_variance, fm_optimal_weight, fm_sample_scaling_numeric,
    fm_two_layer_weight,
};
use lindiff::gaussian_model::make_covariance;
use lindiff::linalg::geomspace;
use lindiff::metrics::{denoiser_error, kl_spectra, loss_floor, score_error};
use lindiff::oracle::{gradient_flow_full, loss_gradient, mc_dsm_loss, optimal_affine, two_layer_flow, Parametrization};
use lindiff::pf_sampler::{generated_variance, numeric_generated_variance};
use lindiff::special_fn::{erf, erfc, expint_ei, EULER_GAMMA};
use lindiff::{
    Architecture, DMatrix, DVector, DataMoments, DynamicsConfig, EmergenceCriterion, GrayZone,
    LossVariant, NoiseSchedule, OdeSolveConfig, PhiFactor, PowerLawFit, Schedule, SpectrumSpec, VariantTag,
};

use crate::config::{ExperimentConfig, RawConfig};
use crate::error::{CliError, CliResult};
use crate::experiment::{emergence, generated_limits, generated_variances, oracle_check, weight_trajectories, Setup};

pub const SUITES: &[&str] = &["closed-form", "variants", "sampler", "pipeline", "conv", "flow", "metrics", "special"];

/// Heun steps used by the sampler suite of `validate`.
pub const VALIDATE_HEUN_STEPS: usize = 640;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    AtMost(f64),
    AtLeast(f64),
    Within(f64, f64),
}

impl Bound {
    pub fn holds(&self, v: f64) -> bool {
        match *self {
            Bound::AtMost(hi) => v <= hi,
            Bound::AtLeast(lo) => v >= lo,
            Bound::Within(lo, hi) => v >= lo && v <= hi,
        }
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Bound::AtMost(hi) => write!(f, "<= {hi:e}"),
            Bound::AtLeast(lo) => write!(f, ">= {lo}"),
            Bound::Within(lo, hi) => write!(f, "in [{lo}, {hi}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    pub value: f64,
    pub bound: Bound,
}

impl Check {
    fn new(suite: &'static str, name: impl Into<String>, value: f64, bound: Bound) -> Self {
        Self {
            suite,
            name: name.into(),
            value,
            bound,
        }
    }

    pub fn passed(&self) -> bool {
        self.bound.holds(self.value)
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}/{}: {:.6e} (want {})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.suite,
            self.name,
            self.value,
            self.bound
        )
    }
}

fn tight() -> OdeSolveConfig {
    OdeSolveConfig::adaptive(1e-12, 1e-15)
}

fn setup_from(pairs: &[(&str, String)]) -> CliResult<Setup> {
    let mut raw = RawConfig::default();
    for (k, v) in pairs {
        raw.set(k, v)?;
    }
    Setup::load(ExperimentConfig::from_raw(&raw)?)
}

fn list(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(",")
}

/// Largest deviation between closed-form weights and the matrix oracle
/// for an architecture on a log-spaced spectrum.
pub fn architecture_vs_oracle(arch: &str, dim: usize, lo: f64, hi: f64, q: f64, sigma: f64, taus: &[f64]) -> CliResult<f64> {
    let setup = setup_from(&[
        ("model.dim", dim.to_string()),
        ("spectrum.kind", "log-spaced".into()),
        ("spectrum.lo", lo.to_string()),
        ("spectrum.hi", hi.to_string()),
        ("seed", "3".into()),
        ("dynamics.arch", arch.into()),
        ("dynamics.q", q.to_string()),
        ("dynamics.sigma", sigma.to_string()),
        ("dynamics.tau", list(taus)),
    ])?;
    let weights = weight_trajectories(&setup)?;
    Ok(oracle_check(&setup, &weights)?.max_relative_deviation)
}

/// Twenty log-spaced training times, scaled so every σ spans the same
/// range of `τ(1 + σ²)`.
pub fn tau_points(sigma: f64) -> Vec<f64> {
    geomspace(1e-3, 1e3, 20).iter().map(|t| t / (1.0 + sigma * sigma)).collect()
}

/// Weights and bias of data with a nonzero mean against the coupled flow.
fn coupled_deviation(moments: &DataMoments, sigma: f64, q: &[f64], b0: &DVector<f64>, taus: &[f64]) -> CliResult<f64> {
    let cfg = DynamicsConfig::new(1.0, taus.to_vec(), q.to_vec(), sigma, Architecture::OneLayer);
    let cf = mean_coupled_trajectory(moments, &cfg, b0)?;
    let model = moments.eigen()?;
    let run = gradient_flow_full(
        moments,
        sigma,
        1.0,
        &model.compose(q),
        b0,
        taus,
        &LossVariant::EDM,
        Parametrization::Dense,
        &tight(),
    )?;
    let mut worst = 0.0_f64;
    for i in 0..taus.len() {
        let scale = cf.weights[i].amax().max(cf.biases[i].amax());
        worst = worst.max((&run.weights[i] - &cf.weights[i]).amax() / scale);
        worst = worst.max((&run.biases[i] - &cf.biases[i]).amax() / scale);
    }
    Ok(worst)
}

pub fn closed_form_checks() -> CliResult<Vec<Check>> {
    const S: &str = "closed-form";
    let mut out = Vec::new();
    let mut one = 0.0_f64;
    for &sigma in &[0.1, 1.0, 10.0] {
        one = one.max(architecture_vs_oracle("one-layer", 16, 1e-3, 10.0, 0.1, sigma, &tau_points(sigma))?);
    }
    out.push(Check::new(S, "one-layer vs dense gradient flow, 16 modes", one, Bound::AtMost(1e-6)));

    let mut two = 0.0_f64;
    for &sigma in &[0.1, 1.0, 10.0] {
        two = two.max(architecture_vs_oracle("two-layer", 8, 1e-2, 4.0, 0.05, sigma, &tau_points(sigma))?);
    }
    out.push(Check::new(S, "two-layer vs factor gradient flow, 8 modes", two, Bound::AtMost(1e-6)));

    let mut emerge = 0.0_f64;
    for &lambda in &[0.1, 1.0, 5.0] {
        let sigma: f64 = 1.0;
        let target = lambda / (lambda + sigma * sigma);
        let q = 1e-4 * target;
        let taus = geomspace(1e-4 / lambda, 1e2 / lambda, 400);
        let vals = taus
            .iter()
            .map(|&t| two_layer_weight(&LossVariant::EDM, lambda, sigma, q, 1.0, t))
            .collect::<Result<Vec<_>, _>>()?;
        let tau = emergence_time(&taus, &vals, q, target, EmergenceCriterion::Harmonic)?
            .ok_or_else(|| CliError::Validation(format!("two-layer mode λ = {lambda} never emerged")))?;
        emerge = emerge.max((tau / (std::f64::consts::LN_2 / (8.0 * lambda)) - 1.0).abs());
    }
    out.push(Check::new(S, "two-layer emergence time vs ln2/(8ηλ)", emerge, Bound::AtMost(0.05)));

    let model = make_covariance(&SpectrumSpec::log_spaced(0.05, 3.0), 8, 12)?;
    let mean = DVector::from_fn(8, |i, _| 0.3 * (i as f64 - 3.5) / 3.5);
    let moments = DataMoments::new(mean, model.covariance())?;
    let coupled8 = coupled_deviation(&moments, 0.6, &[0.1; 8], &DVector::from_element(8, 0.2), &geomspace(1e-2, 1e2, 15))?;
    let unit = DataMoments::new(DVector::from_element(1, 1.0), DMatrix::identity(1, 1))?;
    let mut coupled1 = 0.0_f64;
    for &sigma in &[0.1, 1.5, 4.0] {
        coupled1 = coupled1.max(coupled_deviation(&unit, sigma, &[0.0], &DVector::zeros(1), &geomspace(1e-3, 1e2, 20))?);
    }
    out.push(Check::new(S, "mean-coupled weights and bias vs gradient flow, d = 8", coupled8, Bound::AtMost(1e-6)));
    out.push(Check::new(S, "mean-coupled unit example, m = 1, λ = 1", coupled1, Bound::AtMost(1e-6)));
    Ok(out)
}

pub fn table_variants() -> Vec<LossVariant> {
    vec![
        LossVariant::EDM,
        LossVariant::new(VariantTag::XPred, Schedule::Cosine),
        LossVariant::new(VariantTag::EpsPred, Schedule::Cosine),
        LossVariant::new(VariantTag::VPred, Schedule::Cosine),
        LossVariant::FLOW_MATCH,
    ]
}

/// Gradient norm at the tabulated optimum and the worst relative error of
/// the oracle's log-slope against `−2·rate`, for one variant on 5 modes.
pub fn variant_deviation(v: &LossVariant) -> CliResult<(f64, f64)> {
    let model = make_covariance(&SpectrumSpec::log_spaced(0.1, 3.0), 5, 9)?;
    let moments = DataMoments::zero_mean(&model);
    let s = 0.4;
    let w_star = model
        .spectrum()
        .iter()
        .map(|&l| optimal_mode_weight(v, l, s))
        .collect::<Result<Vec<_>, _>>()?;
    let (gw, gb) = loss_gradient(&moments, v, s, &model.compose(&w_star), &DVector::zeros(5));
    let grad = (gw.norm_squared() + gb.norm_squared()).sqrt();
    let taus = [0.5, 1.0];
    let run = gradient_flow_full(
        &moments,
        s,
        1.0,
        &DMatrix::zeros(5, 5),
        &DVector::zeros(5),
        &taus,
        v,
        Parametrization::Dense,
        &tight(),
    )?;
    let u = model.basis();
    let proj = |w: &DMatrix<f64>| (u.transpose() * w * u).diagonal();
    let (p0, p1) = (proj(&run.weights[0]), proj(&run.weights[1]));
    let mut worst = 0.0_f64;
    for k in 0..5 {
        let rate = convergence_rate(v, model.spectrum()[k], s);
        let slope = ((p1[k] - w_star[k]).abs().ln() - (p0[k] - w_star[k]).abs().ln()) / (taus[1] - taus[0]);
        worst = worst.max((slope / (-2.0 * rate) - 1.0).abs());
    }
    Ok((grad, worst))
}

pub fn variant_checks() -> CliResult<Vec<Check>> {
    let mut out = Vec::new();
    for v in table_variants() {
        let (grad, slope) = variant_deviation(&v)?;
        let tag = format!("{:?}/{:?}", v.tag, v.schedule);
        out.push(Check::new("variants", format!("{tag} gradient norm at optimum"), grad, Bound::AtMost(1e-8)));
        out.push(Check::new("variants", format!("{tag} log-slope vs -2 rate"), slope, Bound::AtMost(0.01)));
    }
    Ok(out)
}

/// Phi factors compared between the closed form and the Heun sampler.
pub fn sampler_cases() -> Vec<PhiFactor> {
    let mut cases = Vec::new();
    for &tau in &[0.01, 0.1, 1.0, 10.0] {
        for &lambda in &[1e-3, 0.05, 0.25, 1.0, 10.0] {
            cases.push(PhiFactor::OneLayer { lambda, q: 0.1, eta: 1.0, tau });
            cases.push(PhiFactor::TwoLayerSymmetric { lambda, q: 0.1, eta: 1.0, tau });
        }
    }
    cases
}

/// Worst relative gap between closed-form and Heun generated variances at
/// `steps`, and the smallest reduction factor when the step count doubles.
pub fn heun_gap(steps: usize) -> CliResult<(f64, f64)> {
    let base = NoiseSchedule::default();
    let mut worst = 0.0_f64;
    let mut min_ratio = f64::INFINITY;
    for phi in sampler_cases() {
        let exact = generated_variance(&phi, &base)?;
        let coarse = numeric_generated_variance(&phi, &base.with_steps(steps))?;
        let fine = numeric_generated_variance(&phi, &base.with_steps(2 * steps - 1))?;
        let gap = (coarse / exact - 1.0).abs();
        worst = worst.max(gap);
        if gap > 1e-10 {
            min_ratio = min_ratio.min(gap / (fine / exact - 1.0).abs());
        }
    }
    Ok((worst, min_ratio))
}

/// Worst relative errors of the large-τ and τ = 0 generated variances
/// against their limits.
pub fn asymptote_deviation() -> CliResult<(f64, f64)> {
    let sch = NoiseSchedule::default();
    let (s0, st) = (sch.sigma_min, sch.sigma_max);
    let (mut late, mut early) = (0.0_f64, 0.0_f64);
    for &lambda in &[1e-3, 0.05, 1.0, 10.0] {
        for &q in &[0.0, 0.1, 0.5] {
            let converged = st * st * (lambda + s0 * s0) / (lambda + st * st);
            let tau = 1e9 / lambda;
            let v = generated_variance(&PhiFactor::OneLayer { lambda, q, eta: 1.0, tau }, &sch)?;
            late = late.max((v / converged - 1.0).abs());
            let untrained = st * st * (s0 / st).powf(2.0 * (1.0 - q));
            for phi in [
                PhiFactor::OneLayer { lambda, q, eta: 1.0, tau: 0.0 },
                PhiFactor::OneLayer { lambda, q, eta: 1.0, tau: 1e-12 },
            ] {
                early = early.max((generated_variance(&phi, &sch)? / untrained - 1.0).abs());
            }
        }
    }
    Ok((late, early))
}

pub fn sampler_checks(steps: usize) -> CliResult<Vec<Check>> {
    const S: &str = "sampler";
    let (gap, ratio) = heun_gap(steps)?;
    let (late, early) = asymptote_deviation()?;
    Ok(vec![
        Check::new(S, format!("closed form vs Heun, {steps} steps"), gap, Bound::AtMost(1e-3)),
        Check::new(S, "Heun gap reduction on halving the step", ratio, Bound::AtLeast(3.0)),
        Check::new(S, "converged variance limit", late, Bound::AtMost(1e-6)),
        Check::new(S, "untrained variance limit", early, Bound::AtMost(1e-6)),
    ])
}

/// Power-law fits of the one-layer pipeline, 32 modes over 4 decades.
pub fn pipeline_fits(criterion: &str) -> CliResult<Vec<PowerLawFit>> {
    let setup = setup_from(&[
        ("model.dim", "32".into()),
        ("spectrum.kind", "log-spaced".into()),
        ("spectrum.lo", "1e-2".into()),
        ("spectrum.hi", "1e2".into()),
        ("dynamics.q", "0.1".into()),
        ("dynamics.tau_min", "1e-5".into()),
        ("dynamics.tau_max", "1e5".into()),
        ("dynamics.tau_points", "401".into()),
        ("analysis.criterion", criterion.into()),
    ])?;
    let generated = generated_variances(&setup, &setup.cfg.taus)?;
    let limits = generated_limits(&setup)?;
    let em = emergence(&setup, &generated, &limits)?;
    if em.fits.is_empty() {
        return Err(CliError::Validation(em.fit_note.unwrap_or_default()));
    }
    Ok(em.fits)
}

pub fn pipeline_checks() -> CliResult<Vec<Check>> {
    let mut out = Vec::new();
    for fit in pipeline_fits("geometric")? {
        let b = fit.branch;
        out.push(Check::new("pipeline", format!("geometric {b} exponent"), fit.alpha, Bound::Within(0.9, 1.1)));
        out.push(Check::new("pipeline", format!("geometric {b} R²"), fit.r_squared, Bound::AtLeast(0.98)));
    }
    Ok(out)
}

fn stationary_cov(n: usize, ell: f64) -> DMatrix<f64> {
    let taps: Vec<f64> = (0..n).map(|d| (-(d.min(n - d) as f64) / ell).exp()).collect();
    circulant_from_taps(&taps)
}

/// Covariance with no translation symmetry, built deterministically.
fn generic_cov(n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |i, j| ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.45 + if i == j { 0.3 } else { 0.0 });
    &a * a.transpose() / n as f64 + DMatrix::identity(n, n) * 0.05
}

pub fn conv_checks() -> CliResult<Vec<Check>> {
    const S: &str = "conv";
    let mut out = Vec::new();

    let n = 16;
    let vars = dft_mode_variance(&stationary_cov(n, 2.5))?;
    let taus = geomspace(1e-3, 1e2, 30);
    let (sigma, eta) = (0.7, 0.3);
    let mut full = 0.0_f64;
    for (l, &var) in vars.iter().enumerate() {
        let g0 = 0.05 * l as f64 - 0.2;
        let conv = full_width_gamma_trajectory(var, g0, sigma, eta, n, &taus);
        for (&tau, c) in taus.iter().zip(conv) {
            let dense = lindiff::closed_form_dynamics::one_layer_weight(&LossVariant::EDM, var, sigma, g0, eta * n as f64, tau)?;
            full = full.max((c - dense).abs());
        }
    }
    out.push(Check::new(S, "full-width multipliers vs one-layer with Nη", full, Bound::AtMost(1e-12)));

    let (n, r) = (11, 2);
    let s = generic_cov(n);
    let pc = patch_covariance(&s, r)?;
    let k = pc.size();
    let opt = patch_optimum(&pc, sigma)?;
    let a = &pc.matrix + DMatrix::identity(k, k) * (sigma * sigma);
    let direct = a
        .lu()
        .solve(&pc.matrix.column(r).into_owned())
        .ok_or_else(|| CliError::Validation("patch system is singular".into()))?;
    out.push(Check::new(S, "patch optimum vs direct solve", (&opt - &direct).amax(), Bound::AtMost(1e-10)));

    let moments = DataMoments::new(DVector::zeros(n), s.clone())?;
    let w0 = DVector::from_vec(vec![0.0, 0.1, 0.2, -0.05, 0.0]);
    let taus = geomspace(1e-3, 400.0, 15);
    let cf = patch_filter_trajectory(&pc, sigma, 0.05, n, &w0, &taus)?;
    let w0_mat = CirculantDenoiser::new(n, w0.as_slice().to_vec(), sigma)?.circulant_matrix();
    let run = gradient_flow_full(
        &moments,
        sigma,
        0.05,
        &w0_mat,
        &DVector::zeros(n),
        &taus,
        &LossVariant::EDM,
        Parametrization::Circulant { half_width: r },
        &tight(),
    )?;
    let mut traj = 0.0_f64;
    for (filt, w) in cf.filters.iter().zip(&run.weights) {
        let want = CirculantDenoiser::new(n, filt.as_slice().to_vec(), sigma)?.circulant_matrix();
        traj = traj.max((w - want).amax());
    }
    let last = CirculantDenoiser::new(n, opt.as_slice().to_vec(), sigma)?.circulant_matrix();
    let fixed = (run.weights.last().expect("nonempty grid") - last).amax();
    out.push(Check::new(S, "patch trajectory vs banded circulant flow", traj, Bound::AtMost(1e-6)));
    out.push(Check::new(S, "banded circulant flow reaches the patch optimum", fixed, Bound::AtMost(1e-6)));

    let a = CirculantDenoiser::new(13, vec![0.2, -0.4, 1.0, -0.4, 0.2], 1.0)?.circulant_matrix();
    let b = CirculantDenoiser::new(13, vec![0.3, 0.1, 0.7, 0.5, -0.2, 0.05, 0.9], 1.0)?.circulant_matrix();
    out.push(Check::new(S, "circulant weights commute", (&a * &b - &b * &a).amax(), Bound::AtMost(1e-10)));
    Ok(out)
}

/// Relative error of `c(1)/c(0) = √λ` for the converged flow, from both
/// the RK4 sampler and the closed form at very large τ.
pub fn fm_scaling_deviation() -> f64 {
    let mut worst = 0.0_f64;
    for &lambda in &[0.01, 0.3, 1.0, 4.0, 50.0] {
        let c = fm_sample_scaling_numeric(|t| fm_optimal_weight(lambda, t), 4000);
        worst = worst.max((c / lambda.sqrt() - 1.0).abs());
        if let Ok(l) = fm_ln_generated_variance(1e12, lambda, 0.1, 1.0) {
            worst = worst.max(((0.5 * l).exp() / lambda.sqrt() - 1.0).abs());
        }
    }
    worst
}

/// Oracle two-layer flow on one mode above and below `t = 1/(λ+1)`:
/// distance from `w*` above, from 0 below.
pub fn fm_attainability_deviation() -> CliResult<f64> {
    let mut worst = 0.0_f64;
    for &lambda in &[0.5, 2.0] {
        let cross = 1.0 / (lambda + 1.0);
        let moments = DataMoments::new(DVector::zeros(1), DMatrix::from_element(1, 1, lambda))?;
        for t in [cross + 0.15, cross - 0.15] {
            let n = t * lambda - (1.0 - t);
            let tau = 40.0 / n.abs();
            let q: f64 = 0.3;
            let run = two_layer_flow(
                &moments,
                t,
                0.5,
                &DMatrix::from_element(1, 1, q.sqrt()),
                &DVector::zeros(1),
                &[tau],
                &LossVariant::FLOW_MATCH,
                &tight(),
            )?;
            let got = run.weights[0][(0, 0)];
            let closed = fm_two_layer_weight(tau, t, lambda, q, 1.0)?;
            worst = worst.max((got - closed.value).abs());
            let dev = if closed.attainable {
                (got / fm_optimal_weight(lambda, t) - 1.0).abs()
            } else {
                got.abs()
            };
            worst = worst.max(dev);
        }
    }
    Ok(worst)
}

/// Per-branch fits of flow-matching emergence under the harmonic criterion.
pub fn fm_emergence_fits() -> CliResult<Vec<PowerLawFit>> {
    let lambdas = geomspace(1e-2, 1e2, 32);
    let taus = geomspace(1e-5, 1e5, 600);
    let q = 0.0;
    let modes = lambdas
        .iter()
        .map(|&lambda| {
            let vals = taus
                .iter()
                .map(|&tau| fm_generated_variance_ratio(tau, lambda, q, 1.0))
                .collect::<Result<Vec<_>, _>>()?;
            let v0 = fm_generated_variance_ratio(0.0, lambda, q, 1.0)?;
            Ok(ModeEmergence {
                lambda,
                tau: emergence_time(&taus, &vals, v0, 1.0, EmergenceCriterion::Harmonic)?,
                v0,
                target: 1.0,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(power_law_fit(&modes, &GrayZone::default())?)
}

pub fn flow_checks() -> CliResult<Vec<Check>> {
    const S: &str = "flow";
    let mut out = vec![
        Check::new(S, "converged sampler scaling vs sqrt(lambda)", fm_scaling_deviation(), Bound::AtMost(1e-8)),
        Check::new(S, "two-layer attainability split", fm_attainability_deviation()?, Bound::AtMost(1e-6)),
    ];
    for fit in fm_emergence_fits()? {
        out.push(Check::new(S, format!("emergence exponent, {} branch", fit.branch), fit.alpha, Bound::Within(0.8, 1.2)));
    }
    Ok(out)
}

/// Total KL between the generated distribution late in training and its
/// converged limit, over a 16-mode spectrum.
pub fn converged_kl() -> CliResult<f64> {
    let sch = NoiseSchedule::default();
    let spectrum = geomspace(1e-2, 10.0, 16);
    let mut late = Vec::new();
    let mut limit = Vec::new();
    for &lambda in &spectrum {
        late.push(generated_variance(&PhiFactor::OneLayer { lambda, q: 0.1, eta: 1.0, tau: 1e4 }, &sch)?);
        limit.push(generated_variance(&PhiFactor::Converged { lambda }, &sch)?);
    }
    Ok(kl_spectra(&late, &limit)?.total)
}

/// Distance of the Monte Carlo loss at the optimum from the exact floor,
/// in standard errors.
pub fn dsm_floor_z() -> CliResult<f64> {
    let model = make_covariance(&SpectrumSpec::log_spaced(0.05, 4.0), 6, 5)?;
    let moments = DataMoments::zero_mean(&model);
    let sigma = 0.8;
    let (w, b) = optimal_affine(&moments, sigma)?;
    let mc = mc_dsm_loss(&w, &b, &moments, sigma, 200_000, 21)?;
    Ok((mc.mean - loss_floor(&model, sigma)).abs() / mc.std_err)
}

/// Relative error of `E_D = σ⁴E_s` over a training trajectory.
pub fn error_identity_deviation() -> CliResult<f64> {
    let model = make_covariance(&SpectrumSpec::log_normal(), 6, 8)?;
    let w0 = DMatrix::from_fn(6, 6, |i, j| 0.1 * (i as f64 - j as f64) + if i == j { 0.2 } else { 0.0 });
    let b0 = DVector::from_element(6, 0.3);
    let taus = geomspace(1e-3, 1e2, 12);
    let mut worst = 0.0_f64;
    for &sigma in &[0.05, 0.7, 3.0] {
        let ed = denoiser_error(&w0, &b0, &model, sigma, 1.0, &taus)?;
        let es = score_error(&w0, &b0, &model, sigma, 1.0, &taus)?;
        for (d, s) in ed.iter().zip(&es) {
            worst = worst.max((d - sigma.powi(4) * s).abs() / d.abs().max(f64::MIN_POSITIVE));
        }
    }
    Ok(worst)
}

pub fn metrics_checks() -> CliResult<Vec<Check>> {
    const S: &str = "metrics";
    Ok(vec![
        Check::new(S, "KL to the converged distribution", converged_kl()?, Bound::AtMost(1e-8)),
        Check::new(S, "Monte Carlo loss at optimum, standard errors", dsm_floor_z()?, Bound::AtMost(3.0)),
        Check::new(S, "denoiser error vs scaled score error", error_identity_deviation()?, Bound::AtMost(1e-12)),
    ])
}

/// `Ei(x) = γ + ln|x| + e^{x/2} Σ (−1)^{n−1} xⁿ/(n! 2^{n−1}) Σ_{k<⌈n/2⌉} 1/(2k+1)`.
fn ei_ramanujan(x: f64) -> f64 {
    let mut outer = 0.0;
    let mut pow_over_fact = 1.0;
    let mut inner = 0.0;
    for n in 1..400 {
        pow_over_fact *= x / n as f64;
        if (n - 1) % 2 == 0 {
            inner += 1.0 / n as f64;
        }
        let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
        let term = sign * pow_over_fact / 2f64.powi(n - 1) * inner;
        outer += term;
        if term.abs() < 1e-18 * outer.abs() && n > 10 {
            break;
        }
    }
    EULER_GAMMA + x.abs().ln() + (x / 2.0).exp() * outer
}

/// `Ei(x) = γ + ln x + Σ xⁿ/(n·n!)`.
fn ei_power_series(x: f64) -> f64 {
    let mut sum = 0.0;
    let mut t = 1.0;
    for n in 1..2000 {
        t *= x / n as f64;
        let term = t / n as f64;
        sum += term;
        if term < 1e-18 * sum {
            break;
        }
    }
    EULER_GAMMA + x.ln() + sum
}

/// `E1(z) = e^{−z} ∫₀^∞ e^{−s}/(z + s) ds` by exp-sinh quadrature.
fn e1_quadrature(z: f64) -> f64 {
    let h = 1.0 / 128.0;
    let half_pi = std::f64::consts::FRAC_PI_2;
    let mut sum = 0.0;
    for k in -768..=768 {
        let t = k as f64 * h;
        let s = (half_pi * t.sinh()).exp();
        let ds = s * half_pi * t.cosh();
        let f = (-s).exp() / (z + s);
        if f.is_finite() && ds.is_finite() {
            sum += f * ds;
        }
    }
    (-z).exp() * sum * h
}

fn erf_maclaurin(x: f64) -> f64 {
    let mut sum = 0.0;
    let mut t = x;
    for n in 0..200 {
        let term = t / (2 * n + 1) as f64;
        sum += term;
        if term.abs() < 1e-20 {
            break;
        }
        t *= -x * x / (n + 1) as f64;
    }
    2.0 / std::f64::consts::PI.sqrt() * sum
}

/// `erf(x) = (2/√π) e^{−x²} Σ 2ⁿ x^{2n+1}/(2n+1)!!`.
fn erf_positive_series(x: f64) -> f64 {
    let mut sum = 0.0;
    let mut t = x;
    for n in 0..500 {
        sum += t;
        if t.abs() < 1e-18 * sum.abs() {
            break;
        }
        t *= 2.0 * x * x / (2 * n + 3) as f64;
    }
    2.0 / std::f64::consts::PI.sqrt() * (-x * x).exp() * sum
}

/// Worst error of `Ei` against series oracles at 200 points. Below −6 the
/// error is relative; elsewhere it is scaled by `1 + |Ei|`.
pub fn ei_deviation() -> CliResult<f64> {
    let mut worst = 0.0_f64;
    for i in 0..200 {
        let f = i as f64 / 200.0;
        let x = match i % 3 {
            0 => -6.0 + 5.95 * f,
            1 => 0.05 + 39.95 * f,
            _ => -6.0 - 694.0 * f * f - 0.01,
        };
        let oracle = if x > 0.0 {
            ei_power_series(x)
        } else if x >= -6.0 {
            ei_ramanujan(x)
        } else {
            -e1_quadrature(-x)
        };
        let scale = if x < -6.0 { oracle.abs() } else { 1.0 + oracle.abs() };
        worst = worst.max((expint_ei(x)? - oracle).abs() / scale);
    }
    Ok(worst)
}

pub fn erf_deviation() -> f64 {
    (0..200)
        .map(|i| {
            let x = -6.0 + 12.0 * (i as f64 + 0.5) / 200.0;
            let oracle = if x.abs() <= 2.0 { erf_maclaurin(x) } else { erf_positive_series(x) };
            (erf(x) - oracle).abs().max((erfc(x) - (1.0 - oracle)).abs())
        })
        .fold(0.0, f64::max)
}

/// Worst relative error of central differences of `Ei` and `erf` against
/// `eˣ/x` and `2e^{−x²}/√π`.
pub fn derivative_deviation() -> CliResult<f64> {
    let mut worst = 0.0_f64;
    for i in 0..50 {
        let x = if i < 25 { -10.0 + 9.9 * i as f64 / 24.0 } else { 0.1 + 4.9 * (i - 25) as f64 / 24.0 };
        let h = 1e-5 * x.abs().max(0.1);
        let fd = (expint_ei(x + h)? - expint_ei(x - h)?) / (2.0 * h);
        let exact = x.exp() / x;
        worst = worst.max(((fd - exact) / exact).abs());
    }
    for i in 0..50 {
        let x = -3.0 + 6.0 * (i as f64 + 0.5) / 50.0;
        let h = 1e-5;
        let fd = (erf(x + h) - erf(x - h)) / (2.0 * h);
        let exact = 2.0 / std::f64::consts::PI.sqrt() * (-x * x).exp();
        worst = worst.max(((fd - exact) / exact).abs());
    }
    Ok(worst)
}

pub fn special_checks() -> CliResult<Vec<Check>> {
    const S: &str = "special";
    Ok(vec![
        Check::new(S, "Ei vs series oracles, 200 points", ei_deviation()?, Bound::AtMost(1e-12)),
        Check::new(S, "erf vs series oracles, 200 points", erf_deviation(), Bound::AtMost(1e-12)),
        Check::new(S, "derivative identities by finite differences", derivative_deviation()?, Bound::AtMost(1e-6)),
    ])
}

pub fn run_suite(name: &str) -> CliResult<Vec<Check>> {
    match name {
        "all" => {
            let mut out = Vec::new();
            for s in SUITES {
                out.extend(run_suite(s)?);
            }
            Ok(out)
        }
        "closed-form" => closed_form_checks(),
        "variants" => variant_checks(),
        "sampler" => sampler_checks(VALIDATE_HEUN_STEPS),
        "pipeline" => pipeline_checks(),
        "conv" => conv_checks(),
        "flow" => flow_checks(),
        "metrics" => metrics_checks(),
        "special" => special_checks(),
        other => Err(CliError::Usage(format!("unknown suite `{other}`; expected all or one of {}", SUITES.join(", ")))),
    }
}
