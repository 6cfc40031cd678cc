use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

use plr_bvm::dgp::{
    simulate, DgpSpec, ErrorFamily, FunctionSpec, TruthSmoothness, TruthSpec, WLaw,
};
use plr_bvm::diagnostics::{effective_sample_size, ks_statistic_normal, wasserstein1_two_sample};
use plr_bvm::model::{cov_matrix, eta_from_nuisance, robinson_decompose, ModelConfig};
use plr_bvm::priors::{
    basis_eval, gram_matrix, sample_wavelet_prior, series_eval, MaternSpec, PriorSpec,
    WaveletPriorSpec,
};
use plr_bvm::samplers::{gibbs_beta_m, ChainConfig};
use plr_bvm::seeding::rng_from_seed;
use plr_bvm::{DatasetF32, ExperimentConfig};

fn truth_spec(amplitude: f64, beta0: f64) -> TruthSpec {
    TruthSpec {
        m01: None,
        eta0: Some(FunctionSpec::Sine {
            amplitude,
            frequency: 1.0,
            phase: 0.2,
            coordinate: 0,
        }),
        m02: vec![FunctionSpec::Sine {
            amplitude: 0.5,
            frequency: 2.0,
            phase: 0.0,
            coordinate: 0,
        }],
        beta0: vec![beta0],
        sigma01_sq: 1.0,
        sigma02_sq: 0.5,
        smoothness: TruthSmoothness::default(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn joint_covariance_determinant_is_free_of_beta(beta in -20.0f64..20.0, s1 in 0.01f64..5.0, s2 in 0.01f64..5.0) {
        let cfg = ModelConfig { sigma01_sq: s1, sigma02_sq: s2, ..ModelConfig::default() };
        let v = cov_matrix(beta, &cfg);
        let det = v.determinant();
        prop_assert!((det - s1 * s2).abs() <= 1e-9 * (1.0 + (s1 + s2 * beta * beta) * s2));
        prop_assert_eq!(v[(0, 1)], v[(1, 0)]);
    }

    #[test]
    fn robinson_round_trip(n in 1usize..12, dx in 1usize..4, seed in any::<u64>()) {
        let mut rng = rng_from_seed(seed);
        let eta = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        let m2 = DMatrix::from_fn(n, dx, |_, _| rng.random_range(-3.0..3.0));
        let beta = DVector::from_fn(dx, |_, _| rng.random_range(-3.0..3.0));
        let m1 = robinson_decompose(&eta, &beta, &m2).unwrap();
        let back = eta_from_nuisance(&m1, &m2, &beta).unwrap();
        prop_assert!((back - eta).amax() <= 1e-12);
    }

    #[test]
    fn gram_is_symmetric_with_unit_scale_diagonal(n in 2usize..15, alpha in 0.3f64..3.0, ell in 0.05f64..2.0, seed in any::<u64>()) {
        let mut rng = rng_from_seed(seed);
        let w = DMatrix::from_fn(n, 1, |_, _| rng.random::<f64>());
        let spec = MaternSpec { lengthscale: ell, ..MaternSpec::with_alpha(alpha) };
        let k = gram_matrix(&w, &spec);
        prop_assert_eq!(&k, &k.transpose());
        let d0 = k[(0, 0)];
        for i in 1..n {
            prop_assert!((k[(i, i)] - d0).abs() <= 1e-12 * d0);
        }
        for i in 0..n {
            for j in 0..n {
                prop_assert!(k[(i, j)] <= k[(i, i)] * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn wavelet_hats_vanish_off_their_dyadic_cell(l in 1usize..10, k_frac in 0.0f64..1.0, w in 0.0f64..=1.0) {
        let k = ((k_frac * (1u64 << l) as f64) as usize).min((1 << l) - 1);
        let v: f64 = basis_eval(l, k, w).unwrap();
        let scale = (1u64 << l) as f64;
        let inside = w > k as f64 / scale && w < (k + 1) as f64 / scale;
        if !inside {
            prop_assert_eq!(v, 0.0);
        }
        prop_assert!((0.0..=scale.sqrt() + 1e-12).contains(&v));
        prop_assert!(basis_eval::<f64>(l, 1 << l, 0.5).is_err());
    }

    #[test]
    fn wavelet_prior_draws_stay_in_the_box(alpha0 in 0.3f64..2.0, m in 0.1f64..3.0, levels in 0usize..8, seed in any::<u64>()) {
        let spec = WaveletPriorSpec::new(alpha0, m, None);
        let c = sample_wavelet_prior(&spec, levels, &mut rng_from_seed(seed));
        for (l, _, v) in c.iter() {
            prop_assert!(v.abs() <= spec.coefficient_bound(l));
        }
        let sup: f64 = (0..=100).map(|i| series_eval(&c, i as f64 / 100.0).abs()).fold(0.0, f64::max);
        let bound: f64 = (0..=levels).map(|l| spec.coefficient_bound(l) * 2f64.powf(l as f64 / 2.0)).sum();
        prop_assert!(sup <= bound + 1e-12);
    }

    #[test]
    fn simulation_is_a_function_of_the_seed(seed in any::<u64>(), n in 2usize..60) {
        let truth = truth_spec(1.0, 0.5).build::<f64>().unwrap();
        let spec = DgpSpec { n, d_x: 1, d_w: 1, error_family: ErrorFamily::ScaledLaplaceTruncated, w_law: WLaw::Uniform, seed };
        let a = simulate(&spec, &truth).unwrap();
        let b = simulate(&spec, &truth).unwrap();
        prop_assert_eq!(a.y(), b.y());
        prop_assert_eq!(a.x(), b.x());
        prop_assert_eq!(a.w(), b.w());
        prop_assert!(a.w().iter().all(|w| (0.0..=1.0).contains(w)));
    }

    #[test]
    fn identical_samples_are_at_distance_zero(xs in prop::collection::vec(-100.0f64..100.0, 1..200)) {
        prop_assert_eq!(wasserstein1_two_sample(&xs, &xs), 0.0);
        let d = ks_statistic_normal(&xs, 0.0, 1.0);
        prop_assert!((0.0..=1.0).contains(&d));
    }

    #[test]
    fn config_hash_tracks_content(n in 10usize..10_000) {
        let mut cfg = ExperimentConfig::smooth();
        let h0 = cfg.hash().unwrap();
        prop_assert_eq!(h0.len(), 16);
        cfg.dgp.n = n;
        prop_assert_eq!(cfg.hash().unwrap() == h0, n == 500);
    }
}

#[test]
fn errors_have_sub_gaussian_tails() {
    // every family is scaled to unit variance; check a sub-Gaussian tail
    // proxy on a large sample
    let mut rng = rng_from_seed(17);
    for fam in [
        ErrorFamily::Gaussian,
        ErrorFamily::ScaledUniform,
        ErrorFamily::ScaledLaplaceTruncated,
    ] {
        let xs: Vec<f64> = (0..200_000).map(|_| fam.sample(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.01, "{fam:?} mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "{fam:?} variance {var}");
        let tail = xs.iter().filter(|x| x.abs() > 4.0).count() as f64 / xs.len() as f64;
        assert!(tail < 0.01, "{fam:?} tail {tail}");
    }
}

#[test]
fn effective_sample_size_of_white_noise_is_near_length() {
    let mut rng = rng_from_seed(3);
    let xs: Vec<f64> = (0..4000)
        .map(|_| ErrorFamily::Gaussian.sample(&mut rng))
        .collect();
    let ess = effective_sample_size(&xs);
    assert!((3000.0..=5000.0).contains(&ess), "{ess}");
}

#[test]
fn single_precision_pipeline_runs() {
    let truth = truth_spec(1.0, 0.5).build::<f32>().unwrap();
    let spec = DgpSpec {
        n: 60,
        d_x: 1,
        d_w: 1,
        error_family: ErrorFamily::Gaussian,
        w_law: WLaw::Uniform,
        seed: 4,
    };
    let data: DatasetF32 = simulate(&spec, &truth).unwrap();
    let chain = ChainConfig {
        n_iter: 400,
        burn_in: 100,
        seed: 9,
        ..ChainConfig::default()
    };
    let draws = gibbs_beta_m(
        &data,
        &PriorSpec::matern(1.0f32, 1.0),
        &chain,
        &ModelConfig::default(),
    )
    .unwrap();
    assert_eq!(draws.n_draws(), 300);
    let mean = draws.beta_mean()[0];
    assert!(mean.is_finite() && (mean - 0.5).abs() < 1.0, "{mean}");
}
