use lindiff::analysis::{alignment_score, emergence_time, fit_power_law, Branch, EmergenceCriterion};
use lindiff::closed_form_dynamics::{one_layer_weight, optimal_mode_weight, two_layer_weight};
use lindiff::conv_dynamics::{
    dft_mode_variance, filter_to_gammas, full_width_gamma_trajectory, patch_covariance, patch_optimum,
    CirculantDenoiser,
};
use lindiff::gaussian_model::{make_covariance, project_variances, random_orthogonal, seeded_rng};
use lindiff::metrics::{denoiser_error, kl_spectra, score_error};
use lindiff::{CovarianceModel, DMatrix, DVector, LossVariant, SpectrumSpec};
use proptest::prelude::*;

const EDM: LossVariant = LossVariant::EDM;

fn spectrum(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-3f64..10.0, 2..=max_len)
}

fn sym_matrix(d: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0f64..1.0, d * d).prop_map(move |v| {
        let a = DMatrix::from_vec(d, d, v);
        &a + a.transpose()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eigendecomposition_recovers_spectrum(spec in spectrum(8), seed in 0u64..1000) {
        let model = make_covariance(&SpectrumSpec::explicit(spec.clone()), spec.len(), seed).unwrap();
        let back = CovarianceModel::from_covariance(&model.covariance()).unwrap();
        let mut want = spec.clone();
        want.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in back.spectrum().iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn projection_is_linear(a in sym_matrix(5), b in sym_matrix(5), s in -3.0f64..3.0, t in -3.0f64..3.0, seed in 0u64..100) {
        let model = make_covariance(&SpectrumSpec::log_normal(), 5, seed).unwrap();
        let lhs = project_variances(&(&a * s + &b * t), &model).unwrap();
        let pa = project_variances(&a, &model).unwrap();
        let pb = project_variances(&b, &model).unwrap();
        for k in 0..5 {
            prop_assert!((lhs[k] - (s * pa[k] + t * pb[k])).abs() < 1e-12);
        }
    }

    #[test]
    fn larger_modes_close_their_gap_faster(
        lb in 1e-3f64..5.0, ratio in 1.1f64..10.0, sigma in 0.1f64..3.0, eta in 0.1f64..2.0, tau in 0.01f64..5.0,
    ) {
        let la = lb * ratio;
        let gap = |l: f64| {
            let target = optimal_mode_weight(&EDM, l, sigma).unwrap();
            (one_layer_weight(&EDM, l, sigma, 0.0, eta, tau).unwrap() - target).abs() / target
        };
        let (ga, gb) = (gap(la), gap(lb));
        if gb > 1e-250 {
            prop_assert!(ga < gb, "λa={la} gap {ga} vs λb={lb} gap {gb}");
        } else {
            prop_assert!(ga <= gb);
        }
    }

    #[test]
    fn two_layer_stays_between_init_and_target(
        lambda in 0.0f64..10.0, sigma in 0.1f64..3.0, q in 1e-4f64..1.5, eta in 0.1f64..2.0, tau in 0.0f64..100.0,
    ) {
        let target = lambda / (lambda + sigma * sigma);
        let v = two_layer_weight(&EDM, lambda, sigma, q, eta, tau).unwrap();
        let (lo, hi) = if q < target { (q, target) } else { (target, q) };
        prop_assert!(v >= lo * (1.0 - 1e-12) && v <= hi * (1.0 + 1e-12), "{v} outside [{lo}, {hi}]");
    }

    #[test]
    fn circulants_commute(
        n in 5usize..16,
        f1 in prop::collection::vec(-1.0f64..1.0, 1..=2),
        f2 in prop::collection::vec(-1.0f64..1.0, 5),
    ) {
        let mut a_taps = f1.clone();
        a_taps.push(0.3);
        a_taps.extend(f1.iter().rev());
        let a = CirculantDenoiser::new(n, a_taps, 1.0).unwrap().circulant_matrix();
        let b = CirculantDenoiser::new(n, f2, 1.0).unwrap().circulant_matrix();
        prop_assert!((&a * &b - &b * &a).amax() < 1e-10);
    }

    #[test]
    fn full_width_optimum_has_shrinkage_multipliers(r in 1usize..6, sigma in 0.2f64..2.0, seed in 0u64..500) {
        let n = 2 * r + 1;
        let mut rng = seeded_rng(seed);
        let u = random_orthogonal(n, &mut rng);
        let diag = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| 0.1 + i as f64 * 0.3));
        let s = &u * diag * u.transpose();
        let w = patch_optimum(&patch_covariance(&s, r).unwrap(), sigma).unwrap();
        let gammas = filter_to_gammas(&CirculantDenoiser::new(n, w.as_slice().to_vec(), sigma).unwrap()).gammas;
        let vars = dft_mode_variance(&s).unwrap();
        for (g, v) in gammas.iter().zip(&vars) {
            prop_assert!((g.re - v / (sigma * sigma + v)).abs() < 1e-8);
            prop_assert!(g.im.abs() < 1e-8);
        }
    }

    #[test]
    fn patch_optimum_is_center_column_of_gaussian_solution(r in 1usize..4, extra in 0usize..6, sigma in 0.2f64..2.0, seed in 0u64..500) {
        let n = 2 * r + 1 + extra;
        let model = make_covariance(&SpectrumSpec::log_normal(), n, seed).unwrap();
        let pc = patch_covariance(&model.covariance(), r).unwrap();
        let k = pc.size();
        let a = &pc.matrix + DMatrix::identity(k, k) * (sigma * sigma);
        let solved = a.lu().solve(&pc.matrix).unwrap();
        let w = patch_optimum(&pc, sigma).unwrap();
        for i in 0..k {
            prop_assert!((w[i] - solved[(i, r)]).abs() < 1e-10);
        }
    }

    #[test]
    fn full_width_is_dense_with_scaled_rate(
        var in 0.0f64..5.0, g0 in -1.0f64..1.0, sigma in 0.1f64..2.0, eta in 0.01f64..1.0, n in 1usize..64, tau in 0.0f64..10.0,
    ) {
        let conv = full_width_gamma_trajectory(var, g0, sigma, eta, n, &[tau])[0];
        let dense = one_layer_weight(&EDM, var, sigma, g0, eta * n as f64, tau).unwrap();
        prop_assert!((conv - dense).abs() <= 1e-14 * (1.0 + dense.abs()));
    }

    #[test]
    fn mode_kl_is_minimized_at_equal_variances(l2 in 1e-3f64..10.0, rho in 1e-3f64..1e3) {
        let at = |r: f64| kl_spectra(&[r * l2], &[l2]).unwrap().total;
        prop_assert!(at(1.0).abs() < 1e-15);
        prop_assert!(at(rho) >= 0.0);
        let (lo, hi) = (rho * 0.9, rho * 1.1);
        if rho < 0.9 {
            prop_assert!(at(lo) > at(rho) && at(rho) > at(hi));
        } else if rho > 1.1 {
            prop_assert!(at(lo) < at(rho) && at(rho) < at(hi));
        }
    }

    #[test]
    fn score_error_is_scaled_denoiser_error(sigma in 0.05f64..5.0, eta in 0.1f64..2.0, tau in 0.0f64..10.0, seed in 0u64..100) {
        let model = make_covariance(&SpectrumSpec::log_normal(), 4, seed).unwrap();
        let w0 = DMatrix::from_fn(4, 4, |i, j| 0.1 * (i as f64 - j as f64));
        let b0 = DVector::from_element(4, 0.2);
        let ed = denoiser_error(&w0, &b0, &model, sigma, eta, &[tau]).unwrap()[0];
        let es = score_error(&w0, &b0, &model, sigma, eta, &[tau]).unwrap()[0];
        prop_assert!((ed - sigma.powi(4) * es).abs() <= 1e-12 * ed.max(1e-300));
    }

    #[test]
    fn emergence_time_ignores_value_scale(k in -3i32..=3, rate in 0.1f64..10.0, v0 in 0.01f64..0.9, c in 0.01f64..100.0) {
        let taus: Vec<f64> = (0..60).map(|i| 1e-3 * 1.25f64.powi(i)).collect();
        let values: Vec<f64> = taus.iter().map(|&t| 1.0 + (v0 - 1.0) * (-rate * t).exp()).collect();
        for crit in [EmergenceCriterion::Geometric, EmergenceCriterion::Harmonic] {
            let base = emergence_time(&taus, &values, v0, 1.0, crit).unwrap();
            let exact = 4f64.powi(k);
            let scaled: Vec<f64> = values.iter().map(|v| v * exact).collect();
            prop_assert_eq!(emergence_time(&taus, &scaled, v0 * exact, exact, crit).unwrap(), base);
            let scaled: Vec<f64> = values.iter().map(|v| v * c).collect();
            let other = emergence_time(&taus, &scaled, v0 * c, c, crit).unwrap();
            match (base, other) {
                (Some(a), Some(b)) => prop_assert!((a / b - 1.0).abs() < 1e-12),
                (a, b) => prop_assert_eq!(a, b),
            }
        }
    }

    #[test]
    fn exact_power_law_is_recovered(alpha_idx in 0usize..3, lambdas in prop::collection::btree_set(1u32..100_000, 3..20), scale in 0.01f64..100.0) {
        let alpha = [0.5, 1.0, 2.0][alpha_idx];
        let ls: Vec<f64> = lambdas.iter().map(|&l| l as f64 * 1e-3).collect();
        let ts: Vec<f64> = ls.iter().map(|&l| scale * l.powf(-alpha)).collect();
        let fit = fit_power_law(&ls, &ts, Branch::Pooled).unwrap();
        prop_assert!((fit.alpha - alpha).abs() < 1e-10);
    }

    #[test]
    fn alignment_ignores_column_order_and_sign(m in sym_matrix(4), perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle(), signs in prop::collection::vec(prop::bool::ANY, 4), seed in 0u64..100) {
        let u = random_orthogonal(4, &mut seeded_rng(seed));
        let base = alignment_score(&m, &u);
        let cols: Vec<DVector<f64>> = perm
            .iter()
            .zip(&signs)
            .map(|(&p, &flip)| u.column(p).into_owned() * if flip { -1.0 } else { 1.0 })
            .collect();
        let v = DMatrix::from_columns(&cols);
        match base {
            Ok(a) => prop_assert!((alignment_score(&m, &v).unwrap() - a).abs() < 1e-12),
            Err(_) => prop_assert!(alignment_score(&m, &v).is_err()),
        }
    }
}
