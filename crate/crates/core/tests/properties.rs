use irtrel::datagen::{compare_calibrations, simulate_responses};
use irtrel::eqc::{eqc_calibrate, CalibrationResult, CalibrationStatus, EqcConfig, FrozenQuadrature};
use irtrel::items::{
    build_pool, copula_discriminations, conditional_discriminations, independent_discriminations,
    DifficultySource, DiscriminationSpec, ItemPool, ItemSpec, PoolConfig,
};
use irtrel::latent::{sample_latent, LatentSpec, Shape};
use irtrel::psychometrics::{
    analytic_ceiling, logistic_kernel, reliability_summary, test_information, test_information_dc, Metric,
    ScaleInterval,
};
use irtrel::sac::{polyak_average, sac_calibrate, SacConfig};
use irtrel::stats;
use proptest::prelude::*;

fn pool_strategy(max_items: usize) -> impl Strategy<Value = ItemPool> {
    prop::collection::vec((-4.0f64..4.0, 0.2f64..3.0), 1..max_items).prop_map(|items| {
        let (b, l): (Vec<f64>, Vec<f64>) = items.into_iter().unzip();
        ItemPool::custom(&b, Some(&l)).unwrap()
    })
}

fn shape_strategy() -> impl Strategy<Value = Shape> {
    prop_oneof![
        Just(Shape::Normal),
        (0.05f64..0.95).prop_map(|delta| Shape::Bimodal { delta }),
        (0.5f64..20.0).prop_map(|k| Shape::SkewPos { k }),
        (4.5f64..30.0).prop_map(|df| Shape::HeavyTail { df }),
    ]
}

proptest! {
    #[test]
    fn kernel_is_bounded_and_even(x in -700.0f64..700.0) {
        let h = logistic_kernel(x);
        prop_assert!((0.0..=0.25).contains(&h));
        prop_assert_eq!(h, logistic_kernel(-x));
        if x != 0.0 && x.abs() < 30.0 {
            prop_assert!(h < 0.25 && h > 0.0);
        }
    }

    #[test]
    fn information_below_pointwise_ceiling(pool in pool_strategy(40), theta in -6.0f64..6.0, c in 0.05f64..20.0) {
        let j = test_information(theta, &pool, c);
        let bound = c * c * pool.sum_sq_lambda() / 4.0;
        prop_assert!(j > 0.0);
        prop_assert!(j <= bound * (1.0 + 1e-12));
    }

    #[test]
    fn derivative_matches_central_difference(pool in pool_strategy(20), theta in -4.0f64..4.0, c in 0.1f64..5.0) {
        let h = 1e-5;
        let fd = (test_information(theta, &pool, c + h) - test_information(theta, &pool, c - h)) / (2.0 * h);
        let an = test_information_dc(theta, &pool, c);
        prop_assert!((an - fd).abs() < 1e-6 * (1.0 + an.abs()), "{} vs {}", an, fd);
    }

    #[test]
    fn jensen_ordering_and_ceiling(
        pool in pool_strategy(30),
        theta in prop::collection::vec(-3.0f64..3.0, 2..60),
        c in 0.1f64..6.0,
    ) {
        prop_assume!(stats::variance(&theta) > 1e-6);
        let r = reliability_summary(&theta, &pool, c, None).unwrap();
        prop_assert!(r.rho_tilde >= r.w_bar);
        let s = r.sigma2_theta * r.j_bar;
        prop_assert!((r.rho_tilde - s / (s + 1.0)).abs() < 1e-15);
        prop_assert!(r.rho_tilde <= analytic_ceiling(&pool, r.sigma2_theta, c) * (1.0 + 1e-12));
    }

    #[test]
    fn copula_never_touches_difficulties(seed in any::<u64>(), n in 2usize..300, rho in -1.0f64..1.0) {
        let cfg = PoolConfig {
            discrimination: DiscriminationSpec { rho, ..Default::default() },
            ..PoolConfig::twopl(n, DifficultySource::standard_normal())
        };
        let pool = build_pool(&cfg, seed).unwrap();
        let rasch = build_pool(&PoolConfig::rasch(n, DifficultySource::standard_normal()), seed).unwrap();
        prop_assert_eq!(pool.betas(), rasch.betas());
        let again = copula_discriminations(&pool.betas(), &cfg.discrimination, seed).unwrap();
        prop_assert!(again.iter().all(|l| *l > 0.0 && l.is_finite()));
    }

    #[test]
    fn location_scale_equivariance(shape in shape_strategy(), mu in -3.0f64..3.0, sigma in 0.1f64..4.0, seed in any::<u64>()) {
        let base = sample_latent(&LatentSpec::new(shape.clone()).with_seed(seed), 64).unwrap();
        let moved = sample_latent(&LatentSpec::new(shape).with_location_scale(mu, sigma).with_seed(seed), 64).unwrap();
        for (a, b) in base.theta.iter().zip(&moved.theta) {
            prop_assert!((mu + sigma * a - b).abs() < 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn pool_csv_round_trip_is_lossless(pool in pool_strategy(50)) {
        let mut buf = Vec::new();
        pool.write_csv(&mut buf).unwrap();
        let back = ItemPool::read_csv(buf.as_slice(), "mem").unwrap();
        prop_assert_eq!(back.items, pool.items);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn eqc_is_deterministic_and_exact(seed in any::<u64>(), target in 0.3f64..0.85, shape in shape_strategy()) {
        let cfg = EqcConfig {
            m_quadrature: 500,
            interval: ScaleInterval::WIDE,
            ..EqcConfig::new(
                target,
                LatentSpec::new(shape),
                ItemSpec::Generate(PoolConfig::twopl(20, DifficultySource::standard_normal())),
                seed,
            )
        };
        let a = eqc_calibrate(&cfg).unwrap();
        let b = eqc_calibrate(&cfg).unwrap();
        prop_assert_eq!(a.c_star.to_bits(), b.c_star.to_bits());
        if a.status == CalibrationStatus::Success {
            prop_assert!(a.abs_error < 1e-4);
            prop_assert!(a.c_star > cfg.interval.c_lower && a.c_star < cfg.interval.c_upper);
            prop_assert!(a.bracket.rho_lower < a.bracket.rho_upper);
        }
    }

    #[test]
    fn eqc_root_is_monotone_in_target(seed in any::<u64>(), t1 in 0.2f64..0.85, dt in 0.01f64..0.1) {
        let mk = |t: f64| EqcConfig {
            m_quadrature: 400,
            interval: ScaleInterval::WIDE,
            ..EqcConfig::new(
                t,
                LatentSpec::standard_normal(),
                ItemSpec::Generate(PoolConfig::rasch(25, DifficultySource::standard_normal())),
                seed,
            )
        };
        let a = eqc_calibrate(&mk(t1)).unwrap();
        let b = eqc_calibrate(&mk(t1 + dt)).unwrap();
        if a.status == CalibrationStatus::Success && b.status == CalibrationStatus::Success {
            prop_assert!(a.c_star < b.c_star);
        }
    }

    #[test]
    fn sac_projection_and_averaging_window(seed in any::<u64>(), target in 0.2f64..0.95, burn in 0usize..79) {
        let cfg = SacConfig {
            n_iter: 80,
            burn_in: burn,
            m_per_iter: 100,
            eval_m: Some(200),
            ..SacConfig::new(
                target,
                Metric::AvgInfo,
                LatentSpec::standard_normal(),
                ItemSpec::Generate(PoolConfig::rasch(10, DifficultySource::standard_normal())),
                seed,
            )
        };
        let r = sac_calibrate(&cfg).unwrap();
        prop_assert!(r.trace.iter().all(|p| cfg.interval.contains(p.c)));
        prop_assert_eq!(r.c_star, polyak_average(&r.trace, burn));
        let tail: Vec<f64> = r.trace[burn..].iter().map(|p| p.c).collect();
        prop_assert_eq!(r.c_star, stats::mean(&tail));
        for other in [0usize, 40] {
            let tail: Vec<f64> = r.trace[other..].iter().map(|p| p.c).collect();
            prop_assert_eq!(polyak_average(&r.trace, other), stats::mean(&tail));
        }
    }

    #[test]
    fn responses_are_binary_and_reproducible(seed in any::<u64>(), n in 1usize..200) {
        let cal = small_calibration();
        let a = simulate_responses(&cal, &LatentSpec::standard_normal(), n, seed).unwrap();
        let b = simulate_responses(&cal, &LatentSpec::standard_normal(), n, seed).unwrap();
        prop_assert_eq!(a.responses.len(), n * cal.pool.len());
        prop_assert!(a.responses.iter().all(|&y| y <= 1));
        prop_assert_eq!(a, b);
    }
}

fn small_calibration() -> CalibrationResult {
    let cfg = EqcConfig {
        m_quadrature: 300,
        ..EqcConfig::new(
            0.6,
            LatentSpec::standard_normal(),
            ItemSpec::Generate(PoolConfig::rasch(12, DifficultySource::standard_normal())),
            1,
        )
    };
    eqc_calibrate(&cfg).unwrap()
}

#[test]
fn log_discriminations_follow_their_marginal() {
    let betas = irtrel::items::gen_difficulties(&DifficultySource::bundled_pool(), 2000, 77).unwrap();
    let spec = DiscriminationSpec::default();
    for l in [
        copula_discriminations(&betas, &spec, 77).unwrap(),
        conditional_discriminations(&betas, &spec, 77).unwrap(),
        independent_discriminations(2000, &spec, 77).unwrap(),
    ] {
        let logs: Vec<f64> = l.iter().map(|v| v.ln()).collect();
        assert!(stats::ks_distance_normal(&logs, 0.0, 0.3) < 0.05);
    }
}

#[test]
fn rank_correlation_targets() {
    for &n in &[200usize, 1000, 4000] {
        let betas = irtrel::items::gen_difficulties(&DifficultySource::standard_normal(), n, n as u64).unwrap();
        let bound = 3.0 / (n as f64).sqrt();
        let spec = DiscriminationSpec::default();
        for l in [
            copula_discriminations(&betas, &spec, 5).unwrap(),
            conditional_discriminations(&betas, &spec, 5).unwrap(),
        ] {
            let logs: Vec<f64> = l.iter().map(|v| v.ln()).collect();
            assert!((stats::spearman(&betas, &logs) + 0.3).abs() < bound + 0.02);
        }
        let l = independent_discriminations(n, &spec, 5).unwrap();
        let logs: Vec<f64> = l.iter().map(|v| v.ln()).collect();
        assert!(stats::spearman(&betas, &logs).abs() < bound);
    }
}

#[test]
fn frozen_quadrature_self_consistency() {
    let cfg = EqcConfig {
        m_quadrature: 2000,
        interval: ScaleInterval::WIDE,
        ..EqcConfig::new(
            0.5,
            LatentSpec::new(Shape::Bimodal { delta: 0.8 }),
            ItemSpec::Generate(PoolConfig::rasch(30, DifficultySource::bundled_pool())),
            42,
        )
    };
    let quad = FrozenQuadrature::draw(&cfg.latent, &cfg.items, cfg.m_quadrature, cfg.seed, None).unwrap();
    let at_one = quad.reliability(1.0, Metric::AvgInfo);
    let r = eqc_calibrate(&EqcConfig { target_rho: at_one, ..cfg }).unwrap();
    assert!((r.c_star - 1.0).abs() < 1e-7, "{}", r.c_star);
    let cmp = compare_calibrations(&r, &r).unwrap();
    assert_eq!(cmp.pct_diff, 0.0);
}
