use std::f64::consts::{PI, TAU};

use pairwise_consensus::analysis::{fit_eps_dependence, ols, rss_change};
use pairwise_consensus::bounds::{
    expected_lyapunov, expected_state, t_eps_bound_interval, t_eps_bound_uniform_init,
};
use pairwise_consensus::dynamics::{
    geodesic_arc, run_trajectory, step_circle, step_scalar, step_vector, AngularConfiguration,
    Configuration, FrameRecorder, RngStream, ScalarConfiguration, TrajectoryOptions,
    VectorConfiguration,
};
use pairwise_consensus::observables::{
    circular_gaps, gamma_max, half_disk_witness, lyapunov_per_dimension, lyapunov_scalar,
    range_scalar, range_vector,
};
use pairwise_consensus::stopping::StoppingPolicy;
use proptest::prelude::*;

fn unit_values(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, 2..max)
}

fn angles(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..TAU, 2..max)
}

/// Angles bunched into an arc of width `spread` around `center`.
fn bunched(max: usize) -> impl Strategy<Value = Vec<f64>> {
    (0.0f64..TAU, 0.1f64..TAU, prop::collection::vec(0.0f64..1.0, 2..max)).prop_map(
        |(center, spread, us)| {
            us.into_iter()
                .map(|u| (center + spread * (u - 0.5)).rem_euclid(TAU) % TAU)
                .collect()
        },
    )
}

fn hull(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

fn changed(before: &[f64], after: &[f64]) -> usize {
    before.iter().zip(after).filter(|(a, b)| a != b).count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scalar_hull_shrinks_and_two_agents_move(values in unit_values(30), seed in any::<u64>()) {
        let mut rng = RngStream::from_seed(seed);
        let mut x = ScalarConfiguration::new(values).unwrap();
        for _ in 0..200 {
            let before = x.values().to_vec();
            let (i, j) = step_scalar(&mut rng, &mut x);
            let (lo0, hi0) = hull(&before);
            let (lo1, hi1) = hull(x.values());
            prop_assert!(lo0 <= lo1 && hi1 <= hi0);
            prop_assert!(changed(&before, x.values()) <= 2);
            for k in 0..before.len() {
                if k != i && k != j {
                    prop_assert_eq!(before[k], x.values()[k]);
                }
            }
        }
    }

    #[test]
    fn vector_hulls_nest_per_coordinate(
        rows in prop::collection::vec(prop::collection::vec(-2.0f64..3.0, 3), 2..20),
        seed in any::<u64>(),
    ) {
        let mut rng = RngStream::from_seed(seed);
        let mut x = VectorConfiguration::from_rows(&rows).unwrap();
        for _ in 0..200 {
            let before: Vec<Vec<f64>> = (0..3).map(|d| x.column(d)).collect();
            let (i, j) = step_vector(&mut rng, &mut x);
            for (d, col) in before.iter().enumerate() {
                let (lo0, hi0) = hull(col);
                let after = x.column(d);
                let (lo1, hi1) = hull(&after);
                prop_assert!(lo0 <= lo1 && hi1 <= hi0);
                for k in 0..col.len() {
                    if k != i && k != j {
                        prop_assert_eq!(col[k], after[k]);
                    }
                }
            }
        }
    }

    #[test]
    fn circle_updates_stay_on_the_geodesic(theta in angles(20), seed in any::<u64>()) {
        let mut rng = RngStream::from_seed(seed);
        let mut x = AngularConfiguration::new(theta).unwrap();
        for _ in 0..200 {
            let before = x.angles().to_vec();
            let (i, j) = step_circle(&mut rng, &mut x);
            let after = x.angles();
            prop_assert!(changed(&before, after) <= 2);
            match geodesic_arc(before[i], before[j]).unwrap() {
                Some(arc) => {
                    prop_assert!(arc.contains(after[i], 1e-12));
                    prop_assert!(arc.contains(after[j], 1e-12));
                }
                None => prop_assert_eq!(&before, after),
            }
            prop_assert!(after.iter().all(|t| (0.0..TAU).contains(t)));
        }
    }

    #[test]
    fn same_seed_same_trajectory(values in unit_values(15), seed in any::<u64>()) {
        let run = |values: Vec<f64>| {
            let mut rng = RngStream::from_seed(seed);
            let mut x = ScalarConfiguration::new(values).unwrap();
            for _ in 0..100 {
                step_scalar(&mut rng, &mut x);
            }
            x.into_values()
        };
        let a = run(values.clone());
        let b = run(values);
        prop_assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn gaps_sum_to_full_turn(theta in angles(60)) {
        let g = circular_gaps(&theta);
        let n = theta.len() as f64;
        prop_assert!((g.sum() - TAU).abs() <= 4.0 * n * f64::EPSILON * TAU);
        prop_assert!(g.gaps.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn witness_iff_gap_above_pi(theta in prop_oneof![angles(8), bunched(12)]) {
        let gmax = gamma_max(&theta);
        let grid = 10_000;
        // the sweep resolves witness windows wider than two grid cells
        prop_assume!((gmax - PI).abs() > 2.0 * TAU / grid as f64);
        let swept = (0..grid).any(|k| {
            let c = TAU * k as f64 / grid as f64;
            theta.iter().all(|t| (t - c).cos() > 0.0)
        });
        let w = half_disk_witness(&theta);
        prop_assert_eq!(swept, gmax > PI);
        prop_assert_eq!(w.is_some(), gmax > PI);
        if let Some(c) = w {
            prop_assert!(theta.iter().all(|t| (t - c).cos() > 0.0));
        }
    }

    #[test]
    fn lyapunov_range_sandwich(values in unit_values(40)) {
        let n = values.len() as f64;
        let l = lyapunov_scalar(&values);
        let r = range_scalar(&values);
        let slack = 1e-12 * (1.0 + l);
        prop_assert!(n * r * r <= l + slack);
        prop_assert!(l <= n * n / 2.0 * r * r + slack);
    }

    #[test]
    fn vector_lyapunov_range_sandwich(
        rows in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 2), 2..25),
    ) {
        let x = VectorConfiguration::from_rows(&rows).unwrap();
        let n = rows.len() as f64;
        let (_, total) = lyapunov_per_dimension(&x);
        let r = range_vector(&x);
        let slack = 1e-12 * (1.0 + total);
        prop_assert!(n * r * r <= total + slack);
        prop_assert!(total <= n.powi(3) / 2.0 * r * r + slack);
    }

    #[test]
    fn uniform_bound_below_worst_case(n in 2usize..2000, eps in 1e-5f64..0.5, a in -5.0f64..5.0, w in 0.01f64..10.0) {
        let u = t_eps_bound_uniform_init(n, eps, a, a + w).unwrap();
        let i = t_eps_bound_interval(n, eps, a, a + w).unwrap();
        prop_assert!(u.exact <= i.exact * (1.0 + 1e-12));
        prop_assert!(u.simplified <= i.simplified * (1.0 + 1e-12));
    }

    #[test]
    fn expected_lyapunov_composes(n in 2usize..500, k1 in 0u64..5000, k2 in 0u64..5000, l0 in 1e-6f64..1e6) {
        let direct = expected_lyapunov(k1 + k2, l0, n).unwrap();
        let chained = expected_lyapunov(k2, expected_lyapunov(k1, l0, n).unwrap(), n).unwrap();
        prop_assert!((direct - chained).abs() <= 1e-10 * direct.abs().max(f64::MIN_POSITIVE));
    }

    #[test]
    fn expected_state_is_affine(values in unit_values(20), k in 0u64..200, s in -3.0f64..3.0, t in -5.0f64..5.0) {
        let moved: Vec<f64> = values.iter().map(|x| s * x + t).collect();
        let lhs = expected_state(k, &moved).unwrap();
        let rhs = expected_state(k, &values).unwrap();
        for (l, r) in lhs.iter().zip(&rhs) {
            prop_assert!((l - (s * r + t)).abs() <= 1e-9 * (1.0 + t.abs() + s.abs()));
        }
    }

    #[test]
    fn ols_is_a_local_minimum(
        xs in prop::collection::vec(0.5f64..50.0, 6..20),
        noise in prop::collection::vec(-1.0f64..1.0, 20),
        coef in prop::collection::vec(-3.0f64..3.0, 3),
    ) {
        let design: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x * x.ln(), x, 1.0]).collect();
        let y: Vec<f64> = design
            .iter()
            .zip(&noise)
            .map(|(row, e)| row.iter().zip(&coef).map(|(a, b)| a * b).sum::<f64>() + e)
            .collect();
        let fit = ols(&design, &y);
        prop_assume!(fit.is_ok());
        let fit = fit.unwrap();
        for k in 0..3 {
            for delta in [1e-6, -1e-6] {
                prop_assert!(rss_change(&design, &y, &fit, k, delta) > 0.0);
            }
        }
    }

    #[test]
    fn eps_fit_ignores_point_order(perm in Just(vec![1e-3, 5e-3, 1e-2, 5e-2, 1e-1]).prop_shuffle(),
                                   g in 1.0f64..500.0, e in -100.0f64..100.0) {
        let series: Vec<(f64, f64)> = perm.iter().map(|&eps: &f64| (eps, -3.0 * g * eps.ln() + e)).collect();
        let mut sorted = series.clone();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let a = fit_eps_dependence(10, &series).unwrap();
        let b = fit_eps_dependence(10, &sorted).unwrap();
        prop_assert!((a.g - b.g).abs() <= 1e-9 * g);
        prop_assert!((a.e - b.e).abs() <= 1e-7 * (1.0 + e.abs()));
        prop_assert!((a.g - g).abs() <= 1e-9 * g);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scalar_stopping_is_monotone_and_ordered(n in 2usize..12, eps in 0.02f64..0.3, seed in any::<u64>()) {
        let mut rng = RngStream::from_seed(seed);
        let values: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        let init = Configuration::Scalar(ScalarConfiguration::new(values).unwrap());
        let nf = n as f64;
        let policies = [
            StoppingPolicy::RangeThreshold(eps),
            StoppingPolicy::LyapunovThreshold(nf * eps * eps),
        ];
        let mut rec = FrameRecorder::default();
        let opts = TrajectoryOptions { max_steps: 1_000_000, observe_every: Some(1) };
        let out = run_trajectory(&mut rng, init, &policies, opts, &mut rec).unwrap();
        let t_eps = out.stopping.first_hit(0).unwrap();
        let t_prime = out.stopping.first_hit(1).unwrap();
        prop_assert!(t_eps <= t_prime);
        for f in &rec.frames {
            prop_assert_eq!(f.range <= eps, f.step >= t_eps, "range at step {}", f.step);
            prop_assert_eq!(f.lyapunov.unwrap() <= nf * eps * eps, f.step >= t_prime);
        }
    }

    #[test]
    fn box_stopping_is_ordered(n in 2usize..10, eps in 0.05f64..0.3, seed in any::<u64>()) {
        let mut rng = RngStream::from_seed(seed);
        let values: Vec<f64> = (0..2 * n).map(|_| rng.uniform()).collect();
        let init = Configuration::Vector(VectorConfiguration::new(values, 2).unwrap());
        let policies = [
            StoppingPolicy::RangeThreshold(eps),
            StoppingPolicy::LyapunovThreshold(n as f64 * eps * eps),
        ];
        let opts = TrajectoryOptions { max_steps: 1_000_000, observe_every: None };
        let mut noop = pairwise_consensus::dynamics::NoopObserver;
        let out = run_trajectory(&mut rng, init, &policies, opts, &mut noop).unwrap();
        prop_assert!(out.stopping.first_hit(0).unwrap() <= out.stopping.first_hit(1).unwrap());
    }

    #[test]
    fn half_disk_is_absorbing_and_precedes_arc(n in 3usize..12, seed in any::<u64>()) {
        let mut rng = RngStream::from_seed(seed);
        let theta: Vec<f64> = (0..n).map(|_| rng.uniform() * TAU % TAU).collect();
        let init = Configuration::Angular(AngularConfiguration::new(theta).unwrap());
        let policies = [StoppingPolicy::HalfDisk, StoppingPolicy::CircleArc(0.1)];
        let mut rec = FrameRecorder::default();
        let opts = TrajectoryOptions { max_steps: 1_000_000, observe_every: Some(1) };
        let out = run_trajectory(&mut rng, init, &policies, opts, &mut rec).unwrap();
        let t_hd = out.stopping.first_hit(0).unwrap();
        let t_arc = out.stopping.first_hit(1).unwrap();
        prop_assert!(t_hd <= t_arc);
        for f in &rec.frames {
            prop_assert_eq!(f.has_half_disk(), f.step >= t_hd, "half-disk at step {}", f.step);
            prop_assert_eq!(f.gamma_max.unwrap() >= TAU - 0.1, f.step >= t_arc);
        }
    }
}
