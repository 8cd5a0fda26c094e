use nalgebra::{DMatrix, Vector3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sixdma::baselines::{run_nested, SchemeId, TrialContext};
use sixdma::channel::{combined_gain, pattern_gain, propagation_dir, spherical_basis, ChannelSynth, GainModel};
use sixdma::fp_ao::{ao_solve, solve_dbf, sum_rate, AnalogBeamformer, AoProblem, Beamformers, FpState};
use sixdma::geometry::{pose_feasible, rotation_matrix, EulerAngles};
use sixdma::manifold::CirclePoint;
use sixdma::scenario::{build_scenario, default_geometry, trial_rng, SimConfig};
use sixdma::C64;

fn angles() -> impl Strategy<Value = EulerAngles> {
    (-3.1..3.1f64, -1.5..1.5f64, -3.1..3.1f64).prop_map(|(a, b, g)| EulerAngles::new(a, b, g))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn rotations_are_proper(a in angles()) {
        let r = rotation_matrix(&a);
        prop_assert!((r.transpose() * r - nalgebra::Matrix3::identity()).norm() < 1e-14);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-14);
    }

    /// Polarization can only lose power relative to the pattern alone.
    #[test]
    fn polarized_gain_bounded_by_pattern(
        a in angles(),
        theta in -1.5..1.5f64,
        phi in 0.0..std::f64::consts::PI,
        chi in 0.0..std::f64::consts::TAU,
    ) {
        let r = rotation_matrix(&a);
        let rho = propagation_dir(theta, phi);
        let (e_t, e_p) = spherical_basis(theta, phi);
        let p_r = e_t * chi.cos() + e_p * chi.sin();
        let local_elevation = r.column(2).dot(&rho).clamp(-1.0, 1.0).asin();
        let pattern = pattern_gain(local_elevation);
        prop_assert!(combined_gain(&r, &rho, &p_r).abs() <= pattern + 1e-12);
    }

    #[test]
    fn dbf_respects_any_budget(seed in 0u64..1000, budget in 1e-6..1e3f64) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let psi = DMatrix::from_fn(4, 3, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let state = FpState {
            u: (0..3).map(|_| rng.random_range(0.01..3.0)).collect(),
            v: (0..3).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect(),
        };
        let sol = solve_dbf(&psi, &state, budget).unwrap();
        prop_assert!(sol.w.norm_squared() <= budget * (1.0 + 1e-12));
        prop_assert!(sol.lambda >= 0.0);
    }

    /// Per-user phase rotations of the digital beamformer do not change the rate.
    #[test]
    fn rate_ignores_column_phases(seed in 0u64..200, p0 in 0.0..6.3f64, p1 in 0.0..6.3f64) {
        let cfg = SimConfig::default();
        let s = build_scenario(&cfg, &mut trial_rng(seed, 0)).unwrap();
        let (geom, poses) = default_geometry(&cfg);
        let h = ChannelSynth::new(&s.paths, GainModel::Polarized).channel(&geom, &poses).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::Rng;
        let digital = DMatrix::from_fn(4, 4, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let bf = Beamformers {
            digital: digital.clone(),
            analog: AnalogBeamformer::SubConnected { b: CirclePoint::ones(16), per_chain: 4 },
        };
        let mut rotated = bf.clone();
        for (k, p) in [(0, p0), (1, p1)] {
            let col = digital.column(k) * C64::cis(p);
            rotated.digital.set_column(k, &col);
        }
        let a = sum_rate(&h, &bf, &s.noise).unwrap();
        let b = sum_rate(&h, &rotated, &s.noise).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }
}

#[test]
fn solver_run_is_feasible_and_improves() {
    let cfg = SimConfig::default();
    let (geom, _) = default_geometry(&cfg);
    for seed in 0..3 {
        let s = build_scenario(&cfg, &mut trial_rng(seed, 1)).unwrap();
        let synth = ChannelSynth::new(&s.paths, GainModel::Polarized);
        let problem = AoProblem {
            geom: &geom,
            synth: &synth,
            noise: &s.noise,
            power: cfg.power_watts(),
        };
        let r = ao_solve(&problem, &cfg.ao_config()).unwrap();
        assert!(r.final_sum_rate() >= r.initial_sum_rate);
        assert!(r.beamformers.transmit_power() <= cfg.power_watts() * (1.0 + 1e-9));
        for (n, p) in r.poses.iter().enumerate() {
            assert!(pose_feasible(&geom, p, n));
        }
        // reported rate is the rate of the returned solution
        let h = synth.channel(&geom, &r.poses).unwrap();
        let rate = sum_rate(&h, &r.beamformers, &s.noise).unwrap();
        assert!((rate - r.final_sum_rate()).abs() < 1e-9 * rate);
    }
}

#[test]
fn nested_schemes_are_ordered_per_trial() {
    let cfg = SimConfig::default();
    let (geom, _) = default_geometry(&cfg);
    let s = build_scenario(&cfg, &mut trial_rng(4, 0)).unwrap();
    let ctx = TrialContext::new(&geom, &s.paths, &s.noise, cfg.power_watts(), cfg.ao_config());
    let ids = [
        SchemeId::SubConnectedFA,
        SchemeId::SubConnMAPosition,
        SchemeId::SubConnMAOrientation,
        SchemeId::SubConn6DMA,
    ];
    let reports = run_nested(&ids, &ctx, &|_| Vec::new()).unwrap();
    let rate: Vec<f64> = reports.iter().map(|r| r.sum_rate).collect();
    assert!(rate[1] >= rate[0] && rate[2] >= rate[0]);
    assert!(rate[3] >= rate[1].max(rate[2]));
    let origin = Vector3::zeros();
    assert!(reports[0].report.poses.iter().all(|p| p.angles.to_vector() == origin));
}
