use lindiff::closed_form_dynamics::{
    convergence_rate, deep_linear_mode, discrete_gd_trajectory, general_two_layer_mode, mean_coupled_trajectory,
    one_layer_bias, one_layer_trajectory, one_layer_weight, optimal_mode_weight, reduced_two_layer_rate,
    residual_reparam_trajectory, trajectories, two_layer_overlap_simulation, two_layer_trajectory, two_layer_weight,
    Architecture, DynamicsConfig, LossVariant, Schedule, VariantTag,
};
use lindiff::gaussian_model::{make_covariance, CovarianceModel, DataMoments, SpectrumSpec};
use lindiff::linalg::geomspace;
use lindiff::ode::{integrate, OdeSolveConfig};
use lindiff::oracle::{discrete_gd_full, gradient_flow_full, loss_gradient, two_layer_flow, Parametrization};
use lindiff::{DMatrix, DVector, Error};

fn aligned(model: &CovarianceModel, q: &[f64]) -> DMatrix<f64> {
    model.compose(q)
}

fn diag_proj(model: &CovarianceModel, w: &DMatrix<f64>) -> Vec<f64> {
    let u = model.basis();
    let p = u.transpose() * w * u;
    (0..model.dim()).map(|k| p[(k, k)]).collect()
}

fn tight() -> OdeSolveConfig {
    OdeSolveConfig::adaptive(1e-12, 1e-15)
}

/// Scalar classical RK4 with a fixed number of steps per output interval.
fn rk4_scalar(f: impl Fn(f64) -> f64, y0: f64, taus: &[f64], steps: usize) -> Vec<f64> {
    let mut t = 0.0;
    let mut y = y0;
    let mut out = Vec::new();
    for &target in taus {
        let h = (target - t) / steps as f64;
        for _ in 0..steps {
            let k1 = f(y);
            let k2 = f(y + 0.5 * h * k1);
            let k3 = f(y + 0.5 * h * k2);
            let k4 = f(y + h * k3);
            y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        t = target;
        out.push(y);
    }
    out
}

#[test]
fn one_layer_plug_in_values() {
    let v = LossVariant::EDM;
    assert_eq!(one_layer_weight(&v, 2.0, 1.0, 0.7, 1.0, 0.0).unwrap(), 0.7);
    let want = 0.3 * (-2.0f64).exp();
    assert!((one_layer_weight(&v, 0.0, 1.0, 0.3, 1.0, 1.0).unwrap() - want).abs() < 1e-16);
}

#[test]
fn one_layer_matches_scalar_gradient_flow() {
    let moments = DataMoments::new(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
    let run = gradient_flow_full(
        &moments,
        1.0,
        1.0,
        &DMatrix::zeros(1, 1),
        &DVector::zeros(1),
        &[0.25],
        &LossVariant::EDM,
        Parametrization::Dense,
        &OdeSolveConfig::Rk4 { substeps: 256 },
    )
    .unwrap();
    let cf = one_layer_weight(&LossVariant::EDM, 1.0, 1.0, 0.0, 1.0, 0.25).unwrap();
    assert!((cf - 0.316_060_279).abs() < 1e-9);
    assert!((run.weights[0][(0, 0)] - cf).abs() < 1e-12);
}

#[test]
fn bias_decay_matches_rk4() {
    let b0 = DVector::from_vec(vec![1.0, -2.0]);
    let taus = [0.1, 0.5, 2.0];
    let num = integrate(|_, b| b * -2.0 * 0.7, 0.0, &b0, &taus, &OdeSolveConfig::Rk4 { substeps: 200 }).unwrap();
    for (t, b) in taus.iter().zip(num) {
        assert!((one_layer_bias(&b0, 0.7, *t) - b).amax() < 1e-10);
    }
    assert_eq!(one_layer_bias(&b0, 0.7, 0.0), b0);
}

#[test]
fn one_layer_matches_dense_flow_on_rotated_spectrum() {
    let model = make_covariance(&SpectrumSpec::log_spaced(1e-3, 10.0), 16, 3).unwrap();
    let moments = DataMoments::zero_mean(&model);
    let q = vec![0.1; 16];
    for &sigma in &[0.1, 1.0, 10.0] {
        let taus = geomspace(1e-3, 1e3, 20).iter().map(|t| t / (1.0 + sigma * sigma)).collect::<Vec<_>>();
        let cfg = DynamicsConfig::new(1.0, taus.clone(), q.clone(), sigma, Architecture::OneLayer);
        let cf = one_layer_trajectory(&cfg, &model).unwrap();
        let run = gradient_flow_full(
            &moments,
            sigma,
            1.0,
            &aligned(&model, &q),
            &DVector::zeros(16),
            &taus,
            &LossVariant::EDM,
            Parametrization::Dense,
            &tight(),
        )
        .unwrap();
        for (i, w) in run.weights.iter().enumerate() {
            let proj = diag_proj(&model, w);
            for (k, tr) in cf.iter().enumerate() {
                let rel = (proj[k] - tr.values[i]).abs() / tr.values[i].abs();
                assert!(rel < 1e-6, "σ={sigma} τ={} mode {k}: rel {rel:e}", taus[i]);
            }
            let full = aligned(&model, &cf.iter().map(|t| t.values[i]).collect::<Vec<_>>());
            assert!((w - full).amax() < 1e-9);
        }
    }
}

#[test]
fn two_layer_matches_scalar_rk4() {
    let taus = geomspace(0.01, 20.0, 30);
    let (lam, sigma, q, eta) = (1.0, 1.0, 0.01, 1.0);
    let a = lam + sigma * sigma;
    let num = rk4_scalar(|f| 8.0 * eta * (lam - a * f) * f, q, &taus, 400);
    for (t, n) in taus.iter().zip(num) {
        let cf = two_layer_weight(&LossVariant::EDM, lam, sigma, q, eta, *t).unwrap();
        assert!((cf - n).abs() < 1e-8, "τ={t}: {cf} vs {n}");
    }
}

#[test]
fn two_layer_matches_factor_gradient_flow() {
    let model = make_covariance(&SpectrumSpec::log_spaced(1e-2, 4.0), 8, 17).unwrap();
    let moments = DataMoments::zero_mean(&model);
    let q: Vec<f64> = (0..8).map(|k| 0.02 + 0.01 * k as f64).collect();
    let sigma = 0.5;
    let taus = geomspace(1e-2, 300.0, 20);
    let cfg = DynamicsConfig::new(1.0, taus.clone(), q.clone(), sigma, Architecture::TwoLayerSymmetric);
    let cf = two_layer_trajectory(&cfg, &model).unwrap();
    let run = gradient_flow_full(
        &moments,
        sigma,
        1.0,
        &aligned(&model, &q),
        &DVector::zeros(8),
        &taus,
        &LossVariant::EDM,
        Parametrization::SymmetricTwoLayer,
        &tight(),
    )
    .unwrap();
    for (i, w) in run.weights.iter().enumerate() {
        let proj = diag_proj(&model, w);
        for (k, tr) in cf.iter().enumerate() {
            let rel = (proj[k] - tr.values[i]).abs() / tr.values[i].abs();
            assert!(rel < 1e-6, "τ={} mode {k}: rel {rel:e}", taus[i]);
        }
    }
}

#[test]
fn two_layer_harmonic_emergence_is_ln2_over_8_eta_lambda() {
    use lindiff::analysis::{emergence_time, EmergenceCriterion};
    for &lam in &[0.1, 1.0, 5.0] {
        let sigma = 1.0;
        let target = lam / (lam + sigma * sigma);
        let q = 1e-4 * target;
        let taus = geomspace(1e-4 / lam, 1e2 / lam, 400);
        let vals: Vec<f64> = taus
            .iter()
            .map(|&t| two_layer_weight(&LossVariant::EDM, lam, sigma, q, 1.0, t).unwrap())
            .collect();
        let tau = emergence_time(&taus, &vals, q, target, EmergenceCriterion::Harmonic).unwrap().unwrap();
        let predicted = std::f64::consts::LN_2 / (8.0 * lam);
        assert!((tau / predicted - 1.0).abs() < 0.05, "λ={lam}: {tau} vs {predicted}");
    }
}

#[test]
fn two_layer_saddle_and_negative_init() {
    let model = CovarianceModel::diagonal(vec![1.0, 0.5]).unwrap();
    let cfg = DynamicsConfig::new(1.0, vec![0.0, 1.0, 10.0], vec![0.0, 0.1], 1.0, Architecture::TwoLayerSymmetric);
    let tr = two_layer_trajectory(&cfg, &model).unwrap();
    assert!(tr[0].values.iter().all(|&v| v == 0.0));
    let bad = DynamicsConfig::new(1.0, vec![1.0], vec![-0.1, 0.1], 1.0, Architecture::TwoLayerSymmetric);
    assert!(two_layer_trajectory(&bad, &model).is_err());
}

#[test]
fn deep_linear_reproduces_shallow_cases() {
    let taus = geomspace(0.01, 10.0, 25);
    let (lam, sigma, c0) = (1.0, 1.0, 0.01);
    let deep2 = deep_linear_mode(2, lam, sigma, c0, 4.0, &taus).unwrap();
    let deep1 = deep_linear_mode(1, lam, sigma, c0, 2.0, &taus).unwrap();
    for (i, &t) in taus.iter().enumerate() {
        let two = two_layer_weight(&LossVariant::EDM, lam, sigma, c0, 1.0, t).unwrap();
        let one = one_layer_weight(&LossVariant::EDM, lam, sigma, c0, 1.0, t).unwrap();
        assert!((deep2[i] - two).abs() < 1e-6, "L=2 τ={t}");
        assert!((deep1[i] - one).abs() < 1e-6, "L=1 τ={t}");
    }
}

#[test]
fn deep_linear_fixed_point_and_attractor() {
    let taus = [0.5, 5.0, 50.0];
    for depth in 1..=5 {
        let v = deep_linear_mode(depth, 2.0, 1.0, 2.0 / 3.0, 1.0, &taus).unwrap();
        assert!(v.iter().all(|x| (x - 2.0 / 3.0).abs() < 1e-12));
    }
    let v = deep_linear_mode(4, 1.0, 1.0, 0.2, 1.0, &[200.0]).unwrap();
    assert!((v[0] - 0.5).abs() < 1e-6);
    assert!(deep_linear_mode(3, 1.0, 1.0, 0.0, 1.0, &taus).is_err());
}

#[test]
fn residual_examples_and_oracle() {
    let model = make_covariance(&SpectrumSpec::log_spaced(0.05, 3.0), 6, 4).unwrap();
    let taus = geomspace(0.01, 20.0, 12);
    let q = vec![0.05; 6];
    let plain = one_layer_trajectory(&DynamicsConfig::new(0.5, taus.clone(), q.clone(), 0.7, Architecture::OneLayer), &model).unwrap();
    let ident = DynamicsConfig::new(0.5, taus.clone(), q.clone(), 0.7, Architecture::Residual { c_skip: 0.0, c_out: 1.0 });
    assert_eq!(residual_reparam_trajectory(&ident, &model).unwrap(), plain);

    let (c_skip, c_out) = (0.3, 2.0);
    let cfg = DynamicsConfig::new(0.5, taus.clone(), q.clone(), 0.7, Architecture::Residual { c_skip, c_out });
    let cf = residual_reparam_trajectory(&cfg, &model).unwrap();
    let scaled = one_layer_trajectory(
        &DynamicsConfig::new(0.5, taus.iter().map(|t| t * 4.0).collect(), q.iter().map(|x| c_skip + c_out * x).collect(), 0.7, Architecture::OneLayer),
        &model,
    )
    .unwrap();
    for (a, b) in cf.iter().zip(&scaled) {
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    let w0 = aligned(&model, &q.iter().map(|x| c_skip + c_out * x).collect::<Vec<_>>());
    let run = gradient_flow_full(
        &DataMoments::zero_mean(&model),
        0.7,
        0.5,
        &w0,
        &DVector::zeros(6),
        &taus,
        &LossVariant::EDM,
        Parametrization::Residual { c_skip, c_out },
        &tight(),
    )
    .unwrap();
    for (i, w) in run.weights.iter().enumerate() {
        let proj = diag_proj(&model, w);
        for (k, tr) in cf.iter().enumerate() {
            assert!(((proj[k] - tr.values[i]) / tr.values[i]).abs() < 1e-6);
        }
    }
}

#[test]
fn discrete_gd_examples() {
    let model = CovarianceModel::diagonal(vec![1.5, 0.5]).unwrap();
    let cfg = DynamicsConfig::new(0.25, vec![1.0], vec![0.2, 0.9], 0.5, Architecture::DiscreteGd);
    let runs = discrete_gd_trajectory(&cfg, &model, 3).unwrap();
    assert!((runs[0].iterates[0] - 0.2).abs() < 1e-15);
    let cfg = DynamicsConfig::new(0.5 / 1.75, vec![1.0], vec![0.2, 0.9], 0.5, Architecture::DiscreteGd);
    let runs = discrete_gd_trajectory(&cfg, &model, 2).unwrap();
    assert!(runs[0].factor.abs() < 1e-15);
    assert!((runs[0].iterates[1] - runs[0].target).abs() < 1e-15);

    let big = DynamicsConfig::new(2.0, vec![1.0], vec![0.2, 0.9], 0.5, Architecture::DiscreteGd);
    assert!(discrete_gd_trajectory(&big, &model, 5).unwrap().iter().all(|r| r.diverged));
}

#[test]
fn discrete_gd_small_step_tracks_flow_and_matrix_oracle() {
    let model = make_covariance(&SpectrumSpec::log_spaced(0.1, 2.0), 4, 6).unwrap();
    let q = vec![0.3, 0.1, 0.0, 0.6];
    let eta = 1e-3;
    let steps = 2000;
    let cfg = DynamicsConfig::new(eta, vec![steps as f64], q.clone(), 1.0, Architecture::DiscreteGd);
    let runs = discrete_gd_trajectory(&cfg, &model, steps).unwrap();
    for (k, r) in runs.iter().enumerate() {
        let flow = one_layer_weight(&LossVariant::EDM, model.spectrum()[k], 1.0, q[k], eta, steps as f64).unwrap();
        assert!((r.iterates[steps] - flow).abs() < 1e-3);
    }
    let it = discrete_gd_full(
        &DataMoments::zero_mean(&model),
        1.0,
        0.05,
        &aligned(&model, &q),
        &DVector::zeros(4),
        30,
        &LossVariant::EDM,
    );
    let cfg = DynamicsConfig::new(0.05, vec![30.0], q.clone(), 1.0, Architecture::DiscreteGd);
    let runs = discrete_gd_trajectory(&cfg, &model, 30).unwrap();
    for t in [0, 1, 7, 30] {
        let proj = diag_proj(&model, &it[t].0);
        for (k, r) in runs.iter().enumerate() {
            assert!((proj[k] - r.iterates[t]).abs() < 1e-12);
        }
    }
    let as_grid = trajectories(&DynamicsConfig::new(0.05, vec![0.0, 7.0, 30.0], q, 1.0, Architecture::DiscreteGd), &model).unwrap();
    assert_eq!(as_grid[2].values[1], runs[2].iterates[7]);
}

#[test]
fn mean_coupled_zero_mean_decouples() {
    let model = make_covariance(&SpectrumSpec::log_spaced(0.01, 5.0), 6, 8).unwrap();
    let moments = DataMoments::zero_mean(&model);
    let taus = geomspace(0.01, 50.0, 10);
    let q = vec![0.2; 6];
    let cfg = DynamicsConfig::new(1.0, taus.clone(), q.clone(), 0.8, Architecture::OneLayer);
    let b0 = DVector::from_vec(vec![0.5, -0.2, 0.1, 0.0, 0.3, 1.0]);
    let mc = mean_coupled_trajectory(&moments, &cfg, &b0).unwrap();
    let plain = one_layer_trajectory(&cfg, &model).unwrap();
    for (i, &t) in taus.iter().enumerate() {
        let w = aligned(&model, &plain.iter().map(|p| p.values[i]).collect::<Vec<_>>());
        assert!((&mc.weights[i] - w).amax() < 1e-12);
        assert!((&mc.biases[i] - one_layer_bias(&b0, 1.0, t)).amax() < 1e-12);
    }
}

fn coupled_check(moments: &DataMoments, sigma: f64, q: &[f64], b0: &DVector<f64>, taus: &[f64]) {
    let cfg = DynamicsConfig::new(1.0, taus.to_vec(), q.to_vec(), sigma, Architecture::OneLayer);
    let cf = mean_coupled_trajectory(moments, &cfg, b0).unwrap();
    let model = moments.eigen().unwrap();
    let run = gradient_flow_full(
        moments,
        sigma,
        1.0,
        &aligned(&model, q),
        b0,
        taus,
        &LossVariant::EDM,
        Parametrization::Dense,
        &tight(),
    )
    .unwrap();
    for i in 0..taus.len() {
        let scale = cf.weights[i].amax().max(cf.biases[i].amax());
        assert!((&run.weights[i] - &cf.weights[i]).amax() < 1e-8 * scale, "σ={sigma} τ={}", taus[i]);
        assert!((&run.biases[i] - &cf.biases[i]).amax() < 1e-8 * scale);
    }
}

#[test]
fn mean_coupled_two_dimensional_example() {
    let moments = DataMoments::new(DVector::from_element(1, 1.0), DMatrix::identity(1, 1)).unwrap();
    for &sigma in &[0.1, 1.5, 4.0] {
        coupled_check(&moments, sigma, &[0.0], &DVector::zeros(1), &geomspace(1e-3, 1e2, 20));
    }
}

#[test]
fn mean_coupled_eight_dimensional() {
    let model = make_covariance(&SpectrumSpec::log_spaced(0.05, 3.0), 8, 12).unwrap();
    let mean = DVector::from_fn(8, |i, _| 0.3 * (i as f64 - 3.5) / 3.5);
    let moments = DataMoments::new(mean, model.covariance()).unwrap();
    coupled_check(&moments, 0.6, &[0.1; 8], &DVector::from_element(8, 0.2), &geomspace(1e-2, 1e2, 15));
}

#[test]
fn mean_coupled_fixed_point() {
    let model = make_covariance(&SpectrumSpec::log_spaced(0.2, 3.0), 4, 1).unwrap();
    let mu = DVector::from_vec(vec![1.0, -0.5, 0.25, 2.0]);
    let moments = DataMoments::new(mu.clone(), model.covariance()).unwrap();
    let sigma = 0.9;
    let cfg = DynamicsConfig::new(1.0, vec![500.0], vec![0.0; 4], sigma, Architecture::OneLayer);
    let r = mean_coupled_trajectory(&moments, &cfg, &DVector::zeros(4)).unwrap();
    let w_star = model.compose(&model.spectrum().iter().map(|l| l / (l + sigma * sigma)).collect::<Vec<_>>());
    assert!((&r.weights[0] - &w_star).amax() < 1e-10);
    let b_star = &mu - &w_star * &mu;
    assert!((&r.biases[0] - b_star).amax() < 1e-10);
}

#[test]
fn overlap_orthogonal_init_stays_diagonal() {
    let model = CovarianceModel::diagonal(vec![2.0, 1.0, 0.3]).unwrap();
    let q = DMatrix::from_diagonal(&DVector::from_vec(vec![0.1, 0.2, 0.05]));
    let taus = geomspace(0.01, 100.0, 30);
    let r = two_layer_overlap_simulation(&model, 0.5, 1.0, &q, &taus).unwrap();
    for g in &r.overlaps {
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!(g[(i, j)].abs() < 1e-9);
                }
            }
        }
    }
    let last = r.overlaps.last().unwrap();
    for (k, &l) in model.spectrum().iter().enumerate() {
        assert!((last[(k, k)] - l / (l + 0.25)).abs() < 1e-8);
    }
}

#[test]
fn overlap_off_diagonal_rises_then_decays() {
    let model = CovarianceModel::diagonal(vec![1.0, 0.1]).unwrap();
    let q = DMatrix::from_row_slice(2, 2, &[0.05, 0.02, 0.03, 0.04]);
    let taus = geomspace(1e-3, 500.0, 400);
    let r = two_layer_overlap_simulation(&model, 0.5, 1.0, &q, &taus).unwrap();
    let off = r.entry(0, 1);
    let peak = off
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    assert!(peak > 0 && peak < off.len() - 1);
    assert!(off[..=peak].windows(2).all(|w| w[1] >= w[0] - 1e-15));
    assert!(off[peak..].windows(2).all(|w| w[1] <= w[0] + 1e-15));
    assert!(off.last().unwrap().abs() < 1e-6);
}

#[test]
fn overlap_ode_matches_factor_flow() {
    let model = make_covariance(&SpectrumSpec::explicit(vec![1.5, 0.6, 0.2]), 3, 5).unwrap();
    let q = DMatrix::from_row_slice(3, 3, &[0.1, 0.05, -0.02, 0.03, 0.08, 0.01, -0.04, 0.02, 0.06]);
    let taus = geomspace(1e-2, 50.0, 12);
    let sim = two_layer_overlap_simulation(&model, 0.7, 1.0, &q, &taus).unwrap();
    // q_k = Pᵀ u_k, so P = U Q̂.
    let p0 = model.basis() * &q;
    let run = two_layer_flow(
        &DataMoments::zero_mean(&model),
        0.7,
        1.0,
        &p0,
        &DVector::zeros(3),
        &taus,
        &LossVariant::EDM,
        &tight(),
    )
    .unwrap();
    for (g, w) in sim.overlaps.iter().zip(&run.weights) {
        let rot = model.basis().transpose() * w * model.basis();
        assert!((g - rot).amax() < 1e-8);
    }
}

#[test]
fn general_two_layer_conservation_and_reduction() {
    let taus = geomspace(1e-3, 20.0, 40);
    let (lam, sigma, eta) = (0.8, 0.6, 1.0);
    let fg = general_two_layer_mode(lam, sigma, 0.3, 0.05, eta, &taus).unwrap();
    let c = 0.3f64.powi(2) - 0.05f64.powi(2);
    for &(f, g) in &fg {
        assert!((f * f - g * g - c).abs() < 1e-9);
    }
    let target = lam / (lam + sigma * sigma);
    assert!((fg.last().unwrap().0 * fg.last().unwrap().1 - target).abs() < 1e-6);
    let h: Vec<f64> = fg.iter().map(|(f, g)| f * g).collect();
    for i in 1..taus.len() - 1 {
        let mid = reduced_two_layer_rate(h[i], c, lam, sigma, eta);
        let dt = taus[i + 1] - taus[i - 1];
        let fd = (h[i + 1] - h[i - 1]) / dt;
        if dt < 0.05 {
            assert!((fd - mid).abs() < 1e-3 * (1.0 + mid.abs()), "τ={}", taus[i]);
        }
    }
}

fn variants() -> Vec<LossVariant> {
    vec![
        LossVariant::EDM,
        LossVariant::new(VariantTag::XPred, Schedule::Cosine),
        LossVariant::new(VariantTag::EpsPred, Schedule::Cosine),
        LossVariant::new(VariantTag::VPred, Schedule::Cosine),
        LossVariant::FLOW_MATCH,
    ]
}

#[test]
fn variant_table_examples() {
    assert_eq!(optimal_mode_weight(&LossVariant::EDM, 1.0, 1.0).unwrap(), 0.5);
    assert_eq!(convergence_rate(&LossVariant::EDM, 3.0, 1.0), 4.0);
    assert_eq!(convergence_rate(&LossVariant::FLOW_MATCH, 7.0, 0.0), 1.0);
    assert!(matches!(optimal_mode_weight(&LossVariant::FLOW_MATCH, 0.0, 1.0), Err(Error::Domain(_))));
}

#[test]
fn flow_matching_rate_is_slowest_at_crossover_time() {
    for &lam in &[0.1, 1.0, 4.0, 20.0] {
        let grid: Vec<f64> = (0..=100_000).map(|i| i as f64 / 100_000.0).collect();
        let t_min = grid
            .iter()
            .copied()
            .min_by(|a, b| convergence_rate(&LossVariant::FLOW_MATCH, lam, *a).total_cmp(&convergence_rate(&LossVariant::FLOW_MATCH, lam, *b)))
            .unwrap();
        assert!((t_min - 1.0 / (lam + 1.0)).abs() < 2e-5);
    }
}

#[test]
fn variant_optimum_is_stationary_and_rate_matches_oracle() {
    let model = make_covariance(&SpectrumSpec::log_spaced(0.1, 3.0), 5, 9).unwrap();
    let moments = DataMoments::zero_mean(&model);
    for v in variants() {
        let s = 0.4;
        let w_star: Vec<f64> = model.spectrum().iter().map(|&l| optimal_mode_weight(&v, l, s).unwrap()).collect();
        let (gw, gb) = loss_gradient(&moments, &v, s, &aligned(&model, &w_star), &DVector::zeros(5));
        assert!(gw.norm() < 1e-8 && gb.norm() < 1e-8, "{:?}", v.tag);

        let q = vec![0.0; 5];
        let taus = [0.5, 1.0];
        let run = gradient_flow_full(&moments, s, 1.0, &aligned(&model, &q), &DVector::zeros(5), &taus, &v, Parametrization::Dense, &tight()).unwrap();
        let p0 = diag_proj(&model, &run.weights[0]);
        let p1 = diag_proj(&model, &run.weights[1]);
        for k in 0..5 {
            let rate = convergence_rate(&v, model.spectrum()[k], s);
            let slope = ((p1[k] - w_star[k]).abs().ln() - (p0[k] - w_star[k]).abs().ln()) / 0.5;
            assert!((slope / (-2.0 * rate) - 1.0).abs() < 0.01, "{:?} mode {k}", v.tag);
        }
    }
}

#[test]
fn every_architecture_matches_oracles_on_sixteen_modes() {
    let model = make_covariance(&SpectrumSpec::log_spaced(1e-3, 10.0), 16, 21).unwrap();
    let moments = DataMoments::zero_mean(&model);
    let q = vec![0.1; 16];
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
    for &sigma in &[0.1, 1.0, 10.0] {
        let taus = geomspace(1e-3, 1e3, 20).iter().map(|t| t / (1.0 + sigma * sigma)).collect::<Vec<_>>();
        let w0 = aligned(&model, &q);
        let zero = DVector::zeros(16);

        let arch = [
            (Architecture::TwoLayerSymmetric, Parametrization::SymmetricTwoLayer),
            (Architecture::Residual { c_skip: 0.2, c_out: 0.8 }, Parametrization::Residual { c_skip: 0.2, c_out: 0.8 }),
        ];
        for (a, p) in arch {
            let init: Vec<f64> = match a {
                Architecture::Residual { c_skip, c_out } => q.iter().map(|x| (x - c_skip) / c_out).collect(),
                _ => q.clone(),
            };
            let cf = trajectories(&DynamicsConfig::new(1.0, taus.clone(), init, sigma, a), &model).unwrap();
            let run = gradient_flow_full(&moments, sigma, 1.0, &w0, &zero, &taus, &LossVariant::EDM, p, &tight()).unwrap();
            for (i, w) in run.weights.iter().enumerate() {
                let proj = diag_proj(&model, w);
                for (k, tr) in cf.iter().enumerate() {
                    assert!(rel(proj[k], tr.values[i]) < 1e-6, "{a:?} σ={sigma} τ={} mode {k}", taus[i]);
                }
            }
        }

        for depth in [2usize, 3, 4] {
            let p = 2.0 - 2.0 / depth as f64;
            for (k, &lam) in model.spectrum().iter().enumerate().step_by(5) {
                let a = lam + sigma * sigma;
                let cf = deep_linear_mode(depth, lam, sigma, q[k], 1.0, &taus).unwrap();
                let num = rk4_scalar(|c| depth as f64 * (lam - a * c) * c.powf(p), q[k], &taus, 4000);
                for i in 0..taus.len() {
                    assert!(rel(cf[i], num[i]) < 1e-6, "L={depth} σ={sigma} mode {k} τ={}", taus[i]);
                }
            }
        }
    }
}
