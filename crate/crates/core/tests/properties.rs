mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;

use common::{kkt_violation, max_abs, xt_mul};
use qrscreen::bench::rejection_ratio;
use qrscreen::dual::{lambda_max, slab_ball_max, DualRegion, ScreenOptions, ScreeningGeometry};
use qrscreen::io::{load_csv, write_csv, Dataset, ResponseColumn};
use qrscreen::quantile::{
    pinball_conjugate, pinball_loss, pinball_prox, pinball_subdiff, soft_threshold, Extended,
};
use qrscreen::solver::{QuantileLasso, SolveOptions};
use qrscreen::QuantileLevel;

fn tau() -> impl Strategy<Value = f64> {
    0.01..0.99f64
}

fn problem(max_n: usize, max_p: usize) -> impl Strategy<Value = (DMatrix<f64>, Vec<f64>, f64)> {
    (3..=max_n, 2..=max_p, tau()).prop_flat_map(|(n, p, t)| {
        (
            proptest::collection::vec(-3.0..3.0f64, n * p),
            proptest::collection::vec(-5.0..5.0f64, n),
            Just((n, p, t)),
        )
            .prop_map(|(xs, y, (n, p, t))| (DMatrix::from_vec(n, p, xs), y, t))
    })
}

proptest! {
    #[test]
    fn pinball_is_convex_and_homogeneous(a in -50.0..50.0f64, b in -50.0..50.0f64, s in 0.0..1.0f64, c in 0.0..10.0f64, t in tau()) {
        let q = QuantileLevel::new(t).unwrap();
        let mid = pinball_loss(s * a + (1.0 - s) * b, q);
        prop_assert!(mid <= s * pinball_loss(a, q) + (1.0 - s) * pinball_loss(b, q) + 1e-10);
        prop_assert!((pinball_loss(c * a, q) - c * pinball_loss(a, q)).abs() <= 1e-10 * (1.0 + c * a.abs()));
    }

    #[test]
    fn subgradient_inequality(a in -20.0..20.0f64, b in -20.0..20.0f64, t in tau()) {
        let q = QuantileLevel::new(t).unwrap();
        let g = pinball_subdiff(a, q);
        for slope in [g.lo, g.hi] {
            prop_assert!(pinball_loss(b, q) >= pinball_loss(a, q) + slope * (b - a) - 1e-10);
        }
    }

    #[test]
    fn prox_satisfies_optimality(xi in -30.0..30.0f64, scale in 1e-3..20.0f64, t in tau()) {
        let q = QuantileLevel::new(t).unwrap();
        let u = pinball_prox(xi, q, scale);
        let g = (xi - u) / scale;
        prop_assert!(pinball_subdiff(u, q).contains(g, 1e-12), "slope {} at {}", g, u);
    }

    #[test]
    fn prox_is_monotone(a in -30.0..30.0f64, d in 0.0..10.0f64, scale in 1e-3..20.0f64, t in tau()) {
        let q = QuantileLevel::new(t).unwrap();
        prop_assert!(pinball_prox(a + d, q, scale) >= pinball_prox(a, q, scale));
    }

    #[test]
    fn fenchel_young(xi in -30.0..30.0f64, nu in -2.0..2.0f64, t in tau()) {
        let q = QuantileLevel::new(t).unwrap();
        match pinball_conjugate(nu, q) {
            Extended::Finite(v) => {
                prop_assert!(nu >= t - 1.0 && nu <= t);
                prop_assert!(pinball_loss(xi, q) + v >= xi * nu - 1e-12);
            }
            Extended::PosInfinity => prop_assert!(nu < t - 1.0 || nu > t),
        }
    }

    #[test]
    fn soft_threshold_shrinks(x in proptest::collection::vec(-10.0..10.0f64, 1..10), t in 0.0..5.0f64) {
        let u = soft_threshold(&x, t);
        for (a, b) in x.iter().zip(&u) {
            prop_assert!(b.abs() <= a.abs());
            prop_assert!(a * b >= 0.0);
            prop_assert!((a - b).abs() <= t + 1e-12);
            if a.abs() <= t {
                prop_assert_eq!(*b, 0.0);
            }
        }
    }

    #[test]
    fn slab_ball_max_is_homogeneous_and_monotone(
        c in proptest::collection::vec(-3.0..3.0f64, 3),
        y in proptest::collection::vec(0.1..3.0f64, 3),
        k in 0.1..10.0f64,
        widen in 0.0..2.0f64,
    ) {
        let y_norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let region = DualRegion { rho: 1.0, b1: 0.5 * y_norm, b2: -0.2 * y_norm, shift: 0.0, y_norm };
        let wider = DualRegion { b2: region.b2 - widen * y_norm, ..region };
        let base = slab_ball_max(&c, &y, &region).unwrap();
        let scaled: Vec<f64> = c.iter().map(|v| k * v).collect();
        let c_norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((slab_ball_max(&scaled, &y, &region).unwrap() - k * base).abs() <= 1e-10 * (1.0 + k * c_norm));
        prop_assert!(slab_ball_max(&c, &y, &wider).unwrap() >= base - 1e-12);
        prop_assert!(base <= region.rho * c_norm + 1e-12);
    }

    #[test]
    fn lambda_max_scales_with_response((x, y, t) in problem(8, 6), k in 0.1..10.0f64) {
        let q = QuantileLevel::new(t).unwrap();
        let scaled: Vec<f64> = y.iter().map(|v| k * v).collect();
        let a = lambda_max(&x, &y, q).unwrap();
        let b = lambda_max(&x, &scaled, q).unwrap();
        // the box does not depend on the magnitude of y, so neither does lambda_max
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a));
    }

    #[test]
    fn eliminated_sets_are_nested((x, y, t) in problem(10, 12), hi in 0.3..1.0f64, frac in 0.1..1.0f64) {
        let q = QuantileLevel::new(t).unwrap();
        let geometry = ScreeningGeometry::new(&x, &y, q).unwrap();
        prop_assume!(geometry.lambda_max() > 0.0);
        let lm = geometry.lambda_max();
        let opts = ScreenOptions::default();
        let upper = geometry.screen(hi * lm, None, &opts).unwrap();
        let lower = geometry.screen(frac * hi * lm, None, &opts).unwrap();
        for j in &lower.eliminated {
            prop_assert!(upper.eliminated.contains(j));
        }
    }

    #[test]
    fn rejection_ratio_in_unit_interval(zero in proptest::collection::btree_set(0usize..50, 0..30), keep in 0.0..1.0f64) {
        let zero: Vec<usize> = zero.into_iter().collect();
        let screened: Vec<usize> = zero.iter().copied().take((keep * zero.len() as f64) as usize).collect();
        let r = rejection_ratio(&screened, &zero).unwrap();
        prop_assert!((0.0..=1.0).contains(&r));
        if let Some(&extra) = (0..60).find(|j| !zero.contains(j)).as_ref() {
            let mut bad = screened.clone();
            bad.push(extra);
            prop_assert!(rejection_ratio(&bad, &zero).is_err());
        }
    }

    #[test]
    fn csv_round_trip(
        rows in 1usize..6,
        cols in 1usize..5,
        seed in proptest::collection::vec(-1e6..1e6f64, 30),
    ) {
        let x = DMatrix::from_fn(rows, cols, |i, j| seed[(i * cols + j) % seed.len()] / (1.0 + j as f64));
        let y: Vec<f64> = (0..rows).map(|i| seed[(i + 7) % seed.len()] * 1e-3).collect();
        let data = Dataset::new(x, y, None).unwrap();
        let mut buf = Vec::new();
        write_csv(&data, &mut buf, "response").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, &buf).unwrap();
        let back = load_csv(&path, &ResponseColumn::Name("response".into())).unwrap();
        prop_assert_eq!(back, data);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn warm_and_cold_starts_agree((x, y, t) in problem(8, 10), ratio in 0.2..0.9f64) {
        let q = QuantileLevel::new(t).unwrap();
        let lm = lambda_max(&x, &y, q).unwrap();
        prop_assume!(lm > 1e-6);
        let lam = ratio * lm;
        let problem = QuantileLasso::new(&x, &y, q).unwrap();
        let warm_from = problem.solve_tight(0.95 * lm, 1e-11, None).unwrap();
        let warm = problem.solve_tight(lam, 1e-11, Some(&warm_from)).unwrap();
        let cold = problem.solve_tight(lam, 1e-11, None).unwrap();
        let obj = |b: &[f64]| common::primal_objective(&x, &y, t, lam, None, b);
        prop_assert!((obj(&warm.beta) - obj(&cold.beta)).abs() <= 1e-8 * (1.0 + obj(&cold.beta)));
        prop_assert!(kkt_violation(&x, &y, t, lam, None, &warm.beta, &warm.alpha, &warm.theta) <= 1e-9);
    }

    #[test]
    fn dual_iterate_is_feasible((x, y, t) in problem(8, 10), ratio in 0.1..1.0f64) {
        let q = QuantileLevel::new(t).unwrap();
        let lm = lambda_max(&x, &y, q).unwrap();
        prop_assume!(lm > 1e-6);
        let lam = ratio * lm;
        let st = QuantileLasso::new(&x, &y, q).unwrap().solve(lam, &SolveOptions::tight(), None).unwrap();
        for &v in &st.theta {
            prop_assert!(v >= t - 1.0 - 1e-8 && v <= t + 1e-8);
        }
        prop_assert!(max_abs(&xt_mul(&x, &st.theta)) <= lam * (1.0 + 1e-6));
    }

    #[test]
    fn zero_above_lambda_max((x, y, t) in problem(8, 10), above in 1.0..3.0f64) {
        let q = QuantileLevel::new(t).unwrap();
        let lm = lambda_max(&x, &y, q).unwrap();
        prop_assume!(lm > 1e-6);
        let st = QuantileLasso::new(&x, &y, q).unwrap().solve(above * lm * 1.001, &SolveOptions::default(), None).unwrap();
        prop_assert!(st.beta.iter().all(|&b| b == 0.0));
    }
}
