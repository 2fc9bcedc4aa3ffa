use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wsaw_core::greenfn::{exponent_fit, fixed_point_q, two_point_profile};
use wsaw_core::mcsim::{gibbs_weight, sample_trajectory, sample_trajectory_from, Domain};
use wsaw_core::monotonicity::{bessel_ratio_check, hn_alpha_sum, hn_formula};
use wsaw_core::spectral::leading_eigenpair;
use wsaw_core::{build_grid, Discretization, ModelParams, PhiSpec, QuadRule};

fn coarse() -> Discretization {
    Discretization::new(build_grid(40.0, 20, 8, QuadRule::CompositeGaussLegendre).unwrap())
}

fn params(g: f64, nu: f64) -> ModelParams {
    ModelParams::new(g, nu, PhiSpec::quadratic()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn eigenvalue_decreases_in_nu_and_g(g in 0.05f64..3.0, nu in -1.5f64..1.0, d in 0.01f64..0.5) {
        let disc = coarse();
        let lam = |g: f64, nu: f64| leading_eigenpair(&disc.operator(&params(g, nu)).unwrap()).unwrap();
        let base = lam(g, nu);
        prop_assert!(lam(g, nu + d).lambda < base.lambda);
        prop_assert!(lam(g + d, nu).lambda < base.lambda);
        prop_assert!(base.dlambda_dnu < 0.0 && base.dlambda_dg < 0.0);
        prop_assert!(base.h.iter().all(|&x| x >= 0.0));
        prop_assert!((base.h.norm() - 1.0).abs() < 1e-12);
        prop_assert!(base.lambda2 < base.lambda);
    }

    #[test]
    fn subcritical_two_point_decays(g in 0.2f64..3.0, shift in 0.05f64..1.0) {
        let disc = coarse();
        let nu_c = wsaw_core::criticality::find_nu_c(
            g, &PhiSpec::quadratic(), &disc, &Default::default()).unwrap().point.nu_c;
        let op = disc.operator(&params(g, nu_c + shift)).unwrap();
        let q = fixed_point_q(&op).unwrap();
        // entries far out underflow to zero
        prop_assert!(q.q.iter().all(|&x| x >= 0.0) && q.q[0] > 0.0);
        let prof = two_point_profile(&op, &q, 10).unwrap();
        prop_assert!(prof.windows(2).all(|w| w[1] < w[0] && w[1] > 0.0));
    }

    #[test]
    fn trajectories_partition_time(seed in any::<u64>(), t in 0.01f64..30.0) {
        let tr = sample_trajectory(seed, t, Domain::Full).unwrap();
        let total: f64 = tr.local_times.values().sum();
        prop_assert!((total - t).abs() <= 1e-12 * t.max(1.0));
        prop_assert!(tr.positions.windows(2).all(|w| (w[1] - w[0]).abs() == 1));
        prop_assert!(tr.jump_times.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(tr.local_times.values().all(|&l| l >= 0.0));
    }

    #[test]
    fn box_walks_stay_inside(seed in any::<u64>(), n in 0usize..4, start in -3i64..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = start.clamp(-(n as i64), n as i64);
        let tr = sample_trajectory_from(&mut rng, start, 10.0, Domain::Box(n)).unwrap();
        prop_assert!(tr.positions.iter().all(|x| x.unsigned_abs() as usize <= n));
    }

    #[test]
    fn gibbs_weight_is_minus_g_sum_phi(seed in any::<u64>(), g in 0.0f64..5.0) {
        let tr = sample_trajectory(seed, 5.0, Domain::Full).unwrap();
        let p = if g == 0.0 { ModelParams::free_walk(0.0) } else { params(g, 0.0) };
        let direct: f64 = -g * tr.local_times.values().map(|l| l * l).sum::<f64>();
        let w = gibbs_weight(&tr, &p);
        prop_assert!(w <= 0.0);
        prop_assert!((w - direct).abs() <= 1e-12 * direct.abs().max(1.0));
        // a single site holds all the time when the walk never moves
        prop_assert!(w >= -g * 25.0 - 1e-9);
    }

    #[test]
    fn hn_formula_equals_weighted_double_sum(c in prop::collection::vec(-1.0f64..1.0, 2..30)) {
        for n in 1..c.len() {
            let a = hn_formula(&c, n).unwrap();
            let b = hn_alpha_sum(&c, n).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn bessel_ratio_is_nondecreasing(x in 0.0f64..150.0, y in 0.0f64..150.0) {
        let points: Vec<f64> = (0..200).map(|i| i as f64 * 0.75).collect();
        prop_assert!(bessel_ratio_check(x, y, &points).pass);
    }

    #[test]
    fn power_law_fit_recovers_exponent(a in -3.0f64..3.0, amp in 0.1f64..10.0) {
        let pts: Vec<(f64, f64)> = (0..8).map(|i| {
            let x = 2f64.powi(-i);
            (x, amp * x.powf(a))
        }).collect();
        let fit = exponent_fit(&pts).unwrap();
        prop_assert!((fit.exponent - a).abs() < 1e-10);
        prop_assert!((fit.amplitude - amp).abs() < 1e-9 * amp);
    }

    #[test]
    fn phi_spec_serde_round_trip(c2 in 0.0f64..5.0, c3 in 0.0f64..5.0, c4 in 0.001f64..5.0) {
        let phi = PhiSpec::new([(2, c2), (3, c3), (4, c4)]).unwrap();
        let text = serde_json::to_string(&phi).unwrap();
        let back: PhiSpec = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, phi);
    }
}
