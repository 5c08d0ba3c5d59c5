use proptest::prelude::*;
use shen_core::coeffs::Coefficients;
use shen_core::config::{parse_config, ExperimentConfig};
use shen_core::density::{default_grid, kde};
use shen_core::grid::{Field, GridSpec};
use shen_core::kernel::PhiEvaluator;
use shen_core::malliavin::propagate_derivative;
use shen_core::quadrature::Quadrature;
use shen_core::solver::{simulate_fn_sequence, Simulator, SolverConfig};
use shen_core::spectral::{h_norm_sq, HNorm, SpectralMeasure};
use shen_core::taylor::{final_interval_terms, PartitionPlan};

fn measure_strategy() -> impl Strategy<Value = SpectralMeasure> {
    prop_oneof![
        Just(SpectralMeasure::white(1).unwrap()),
        (0.01f64..0.99).prop_map(|e| SpectralMeasure::riesz(e, 1).unwrap()),
        (0.6f64..3.0).prop_map(|a| SpectralMeasure::bessel(a, 1).unwrap()),
        (0.5f64..4.0).prop_map(|l| SpectralMeasure::exponential(l, 1).unwrap()),
    ]
}

fn preset_strategy() -> impl Strategy<Value = &'static str> {
    prop_oneof![Just("linear"), Just("sine-diffusion"), Just("drift")]
}

fn small_sim(m: SpectralMeasure, preset: &str, steps: usize) -> Simulator {
    let grid = GridSpec::new(1, 32, 6.0).unwrap();
    let u0 = Field { grid, values: (0..32).map(|i| (i as f64 * 0.3).sin() * 0.2).collect() };
    Simulator::new(SolverConfig::new(grid, m, Coefficients::preset(preset).unwrap(), u0, 0.0078125, steps, grid.centre()).unwrap())
        .unwrap()
}

fn smooth_field(grid: GridSpec, coeffs: &[f64]) -> Field {
    let l = grid.length;
    let values = (0..grid.sites())
        .map(|i| {
            let x = i as f64 * grid.spacing();
            coeffs.iter().enumerate().map(|(k, c)| c * (2.0 * std::f64::consts::PI * (k + 1) as f64 * x / l).cos()).sum()
        })
        .collect();
    Field { grid, values }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn spectral_density_is_even_and_nonnegative(m in measure_strategy(), xi in -50.0f64..50.0) {
        let (a, b) = (m.density(&[xi]).unwrap(), m.density(&[-xi]).unwrap());
        prop_assert!(a >= 0.0);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn white_noise_norm_is_the_l2_norm(c in proptest::collection::vec(-2.0f64..2.0, 1..6)) {
        let grid = GridSpec::new(1, 64, 8.0).unwrap();
        let f = smooth_field(grid, &c);
        let l2: f64 = f.values.iter().map(|v| v * v).sum::<f64>() * grid.cell_volume();
        let h = h_norm_sq(&f, &SpectralMeasure::white(1).unwrap()).unwrap();
        prop_assert!((h - l2).abs() / l2.max(1e-12) < 1e-8);
    }

    #[test]
    fn h_norm_is_quadratic_and_nonnegative(m in measure_strategy(), c in proptest::collection::vec(-2.0f64..2.0, 1..6), a in -5.0f64..5.0) {
        let grid = GridSpec::new(1, 64, 8.0).unwrap();
        let f = smooth_field(grid, &c);
        let g = Field { grid, values: f.values.iter().map(|v| a * v).collect() };
        let (hf, hg) = (h_norm_sq(&f, &m).unwrap(), h_norm_sq(&g, &m).unwrap());
        prop_assert!(hf >= 0.0);
        prop_assert!((hg - a * a * hf).abs() <= 1e-12 * (a * a * hf).max(1e-300) + 1e-300);
    }

    #[test]
    fn phi_is_the_integral_of_j(m in measure_strategy(), t1 in 0.01f64..1.0, dt in 0.01f64..1.0) {
        let ev = PhiEvaluator::new(m);
        let t2 = t1 + dt;
        let direct = ev.phi(t2).unwrap() - ev.phi(t1).unwrap();
        let integral = Quadrature::default().finite(|s| ev.j_rate(s).unwrap(), t1, t2);
        prop_assert!((direct - integral).abs() < 1e-8, "{direct} vs {integral}");
        prop_assert!(direct > 0.0);
    }

    #[test]
    fn increment_lower_bound_holds(m in measure_strategy(), a in 0.0f64..1.0, b in 0.0f64..1.0, t in 0.05f64..1.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assume!(hi - lo > 1e-6);
        let ev = PhiEvaluator::new(m);
        let r = ev.phi_increment_lower(t, 1.0, lo * t, hi * t).unwrap();
        prop_assert!(r.holds, "{r:?}");
    }

    #[test]
    fn closed_forms_agree_with_quadrature(eta in 0.01f64..0.99, t in 0.01f64..2.0) {
        for m in [SpectralMeasure::white(1).unwrap(), SpectralMeasure::riesz(eta, 1).unwrap()] {
            let ev = PhiEvaluator::new(m);
            let exact = ev.phi_closed(t).unwrap();
            prop_assert!((ev.phi_quadrature(t).unwrap() - exact).abs() / exact < 1e-6);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn fn_sequence_telescopes(m in measure_strategy(), preset in preset_strategy(), seed in any::<u64>(), cut in 1usize..31) {
        let sim = small_sim(m, preset, 32);
        let path = sim.solve(seed, 3).unwrap();
        let fs = simulate_fn_sequence(&sim, &path, &[0, cut, 32]).unwrap();
        let u = path.states[32].values[sim.config().x_obs];
        prop_assert!((fs[2] - u).abs() < 1e-8 * (1.0 + u.abs()));
        prop_assert_eq!(&path.states[0].values, &sim.config().u0.values);
    }

    #[test]
    fn paths_are_bit_identical(preset in preset_strategy(), seed in any::<u64>(), p in 0u64..1000) {
        let sim = small_sim(SpectralMeasure::riesz(0.5, 1).unwrap(), preset, 16);
        let (a, b) = (sim.solve(seed, p).unwrap(), sim.solve(seed, p).unwrap());
        for (x, y) in a.states.iter().zip(&b.states) {
            prop_assert!(x.values.iter().zip(&y.values).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
    }

    #[test]
    fn taylor_decomposition_is_exact(m in measure_strategy(), preset in preset_strategy(), seed in any::<u64>(), w in 1usize..32) {
        let sim = small_sim(m, preset, 32);
        for t in final_interval_terms(&sim, &[w], 4, seed).unwrap().iter().flatten() {
            prop_assert!(t.identity_holds(), "{t:?}");
        }
    }

    #[test]
    fn partition_increments_telescope(m in measure_strategy(), mut cuts in proptest::collection::vec(1usize..64, 1..6)) {
        cuts.sort_unstable();
        cuts.dedup();
        let mut points = vec![0];
        points.extend(cuts);
        points.push(64);
        let ev = PhiEvaluator::new(m);
        let plan = PartitionPlan::new(points, 0.01, &ev).unwrap();
        let deltas: Vec<f64> = (1..=plan.intervals()).map(|n| plan.delta_g(n).unwrap()).collect();
        prop_assert!(deltas.iter().all(|&d| d > 0.0));
        let total: f64 = deltas.iter().sum();
        let phi = ev.phi(0.64).unwrap();
        prop_assert!((total - phi).abs() < 1e-8 * phi.max(1.0));
    }

    #[test]
    fn derivative_is_adapted(preset in preset_strategy(), seed in any::<u64>(), obs in 1usize..16) {
        let sim = small_sim(SpectralMeasure::white(1).unwrap(), preset, 16);
        let path = sim.solve(seed, 0).unwrap();
        let d = propagate_derivative(&sim, &path, obs).unwrap();
        for r in obs..16 {
            for z in [0, 7, 31] {
                prop_assert!(d.slice(r, z).iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn kick_scales_quadratically(lambda in 0.1f64..4.0, seed in any::<u64>()) {
        let grid = GridSpec::new(1, 32, 6.0).unwrap();
        let m = SpectralMeasure::white(1).unwrap();
        let norm = |s: f64| {
            let c = Coefficients { sigma: shen_core::coeffs::CoefficientFn::constant(s), drift: shen_core::coeffs::CoefficientFn::constant(0.0) };
            let sim = Simulator::new(SolverConfig::new(grid, m, c, Field::zeros(grid), 0.0078125, 16, grid.centre()).unwrap()).unwrap();
            let path = sim.solve(seed, 0).unwrap();
            let d = propagate_derivative(&sim, &path, 16).unwrap().observed(grid.centre());
            d.norm_steps(&HNorm::new(grid, &m).unwrap(), 0..16)
        };
        let (base, scaled) = (norm(1.0), norm(lambda));
        prop_assert!((scaled - lambda * lambda * base).abs() <= 1e-12 * lambda * lambda * base);
    }

    #[test]
    fn kde_has_unit_mass(seed in any::<u64>(), skew in 0.0f64..2.0) {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(seed);
        let xs: Vec<f64> = (0..2000)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z + skew * z.max(0.0).powi(2) * 0.3
            })
            .collect();
        let k = kde(&xs, &default_grid(&xs, 801).unwrap()).unwrap();
        prop_assert!((k.integral() - 1.0).abs() < 1e-3);
    }
}

fn config_strategy() -> impl Strategy<Value = ExperimentConfig> {
    (
        prop_oneof![Just(r#"{"family": "white"}"#.to_string()), (0.1f64..0.9).prop_map(|e| format!(r#"{{"family": "riesz", "eta": {e}}}"#))],
        preset_strategy(),
        1u32..4,
        any::<u32>(),
        1usize..5000,
        prop_oneof![
            (-1.0f64..1.0).prop_map(|v| format!(r#"{{"kind": "constant", "value": {v}}}"#)),
            (0.0f64..1.0, 1u32..4).prop_map(|(a, k)| format!(r#"{{"kind": "sine", "amplitude": {a}, "wavenumber": {k}}}"#)),
        ],
    )
        .prop_map(|(noise, preset, j, seed, paths, u0)| {
            let dt = 0.5 / (256u32 << j) as f64;
            parse_config(&format!(
                r#"{{"grid": {{"dim": 1, "n": 64, "length": 8}}, "noise": {noise}, "coefficients": "{preset}",
                    "u0": {u0}, "dt": {dt}, "horizon": 0.5, "paths": {paths}, "seed": {seed}}}"#
            ))
            .unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_round_trips(c in config_strategy()) {
        let again = parse_config(&c.emit()).unwrap();
        prop_assert_eq!(&again, &c);
        prop_assert_eq!(again.hash(), c.hash());
    }
}
