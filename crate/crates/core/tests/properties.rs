use std::sync::Arc;

use fraclab::costs::{discretized_hedge, value_with_costs, CostSchedule};
use fraclab::fbm::{
    build_covariance_matrix, fbm_covariance, HurstIndex, PathKind, SamplePath, TimeGrid,
};
use fraclab::market::PricePath;
use fraclab::pathwise::{quadratic_variation, realized_qv};
use fraclab::strategies::{momentum_strategy, run_self_financing, Call, FnStrategy};
use fraclab::tree::{wick_product, WalshExpansion};
use proptest::prelude::*;

fn hurst() -> impl Strategy<Value = HurstIndex> {
    (0.05f64..0.95).prop_map(|h| HurstIndex::new(h).unwrap())
}

/// Positive price path on a uniform grid of `steps` over `[0,1]` from
/// log-increments.
fn price_path(log_steps: Vec<f64>) -> PricePath {
    let grid = Arc::new(TimeGrid::uniform(log_steps.len(), 1.0).unwrap());
    let mut values = vec![1.0];
    for x in &log_steps {
        let last = *values.last().unwrap();
        values.push(last * x.exp());
    }
    PricePath {
        price: SamplePath::new(grid, values, PathKind::Price).unwrap(),
        bm: None,
        fbm: None,
        spec: None,
    }
}

fn expansion(n: usize) -> impl Strategy<Value = WalshExpansion> {
    prop::collection::vec(-2.0f64..2.0, 1 << n)
        .prop_map(move |c| WalshExpansion::from_coefficients(n, c).unwrap())
}

fn close(a: &WalshExpansion, b: &WalshExpansion, tol: f64) -> bool {
    a.coefficients()
        .iter()
        .zip(b.coefficients())
        .all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs()))
}

proptest! {
    #[test]
    fn covariance_is_symmetric_with_variance_on_diagonal(
        h in hurst(), t in 0.0f64..5.0, s in 0.0f64..5.0,
    ) {
        let a = fbm_covariance(t, s, h).unwrap();
        prop_assert_eq!(a, fbm_covariance(s, t, h).unwrap());
        let v = fbm_covariance(t, t, h).unwrap();
        prop_assert!((v - t.powf(2.0 * h.value())).abs() < 1e-12 * (1.0 + v));
        // Cauchy–Schwarz
        let (vt, vs) = (v, fbm_covariance(s, s, h).unwrap());
        prop_assert!(a.abs() <= (vt * vs).sqrt() * (1.0 + 1e-12) + 1e-15);
    }

    #[test]
    fn covariance_matrix_factorizes(h in hurst(), level in 2u32..6) {
        let grid = TimeGrid::dyadic(level, 1.0).unwrap();
        let m = build_covariance_matrix(&grid, h);
        let (l, _) = m.cholesky().unwrap();
        let n = m.dim();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(m.get(i, j), m.get(j, i));
            }
            let diag: f64 = (0..=i).map(|k| l[i * n + k] * l[i * n + k]).sum();
            prop_assert!((diag - m.get(i, i)).abs() < 1e-9);
        }
    }

    #[test]
    fn self_financing_identity_holds(
        steps in prop::collection::vec(-0.2f64..0.2, 2..64),
        pos in prop::collection::vec(-50.0f64..50.0, 64),
        v0 in -10.0f64..10.0,
    ) {
        let path = price_path(steps);
        let mut strat = FnStrategy(|o: &fraclab::strategies::Observed<'_>| pos[o.index]);
        let ledger = run_self_financing(&mut strat, &path, v0).unwrap();
        prop_assert!(ledger.budget_residual() <= 1e-10);
        prop_assert_eq!(ledger.initial_value(), v0);
        let gains: f64 = ledger.positions.iter().zip(&ledger.price_moves).map(|(p, d)| p * d).sum();
        prop_assert!((ledger.terminal_value() - v0 - gains).abs() < 1e-9 * (1.0 + gains.abs()));
    }

    #[test]
    fn quadratic_variation_is_monotone_and_additive(
        xs in prop::collection::vec(-1.0f64..1.0, 16),
        cut in 1usize..16,
    ) {
        let grid = Arc::new(TimeGrid::dyadic(4, 1.0).unwrap());
        let mut values = vec![0.0];
        for x in &xs {
            let last = *values.last().unwrap();
            values.push(last + x);
        }
        let path = SamplePath::new(grid, values.clone(), PathKind::Mixed).unwrap();
        let qv = quadratic_variation(&path, 4).unwrap();
        prop_assert!(qv.windows(2).all(|w| w[1] >= w[0]));
        let head: f64 = values[..=cut].windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
        let tail: f64 = values[cut..].windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
        prop_assert!((qv[16] - head - tail).abs() < 1e-12);
        prop_assert!((qv[cut] - head).abs() < 1e-12);
        prop_assert_eq!(realized_qv(&path), qv);
    }

    #[test]
    fn wick_product_is_commutative_and_associative(
        a in expansion(3), b in expansion(3), c in expansion(3),
    ) {
        let ab = wick_product(&a, &b).unwrap();
        prop_assert!(close(&ab, &wick_product(&b, &a).unwrap(), 1e-14));
        let left = wick_product(&ab, &c).unwrap();
        let right = wick_product(&a, &wick_product(&b, &c).unwrap()).unwrap();
        prop_assert!(close(&left, &right, 1e-12));
    }

    #[test]
    fn wick_product_is_bilinear(
        a in expansion(3), b in expansion(3), c in expansion(3), s in -3.0f64..3.0,
    ) {
        let lhs = wick_product(&a.scale(s).add(&b).unwrap(), &c).unwrap();
        let rhs = wick_product(&a, &c).unwrap().scale(s).add(&wick_product(&b, &c).unwrap()).unwrap();
        prop_assert!(close(&lhs, &rhs, 1e-12));
    }

    #[test]
    fn momentum_value_is_invariant_under_price_scaling(
        steps in prop::collection::vec(-0.1f64..0.1, 8),
        c in 0.01f64..100.0,
    ) {
        let h = HurstIndex::new(0.75).unwrap();
        let path = price_path(steps);
        let scaled = PricePath {
            price: path.price.map(PathKind::Price, |_, s| c * s).unwrap(),
            ..path.clone()
        };
        let a = momentum_strategy(&path, 8, h).unwrap().terminal_value();
        let b = momentum_strategy(&scaled, 8, h).unwrap().terminal_value();
        prop_assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
    }

    #[test]
    fn costs_reduce_value_and_shrink_with_alpha(
        steps in prop::collection::vec(-0.05f64..0.05, 32),
        k0 in 0.0f64..2.0,
        a1 in 0.05f64..1.0,
        a2 in 0.05f64..1.0,
    ) {
        let path = price_path(steps);
        let call = Call { strike: 1.0 };
        let value = |alpha: f64| {
            let mut hedge = discretized_hedge(&call, &path, 8).unwrap();
            value_with_costs(&mut hedge, &path, &CostSchedule::new(k0, alpha, 8).unwrap()).unwrap()
        };
        let (lo, hi) = if a1 < a2 { (a1, a2) } else { (a2, a1) };
        let (v_lo, v_hi) = (value(lo), value(hi));
        prop_assert!(v_lo.value <= v_lo.frictionless);
        prop_assert!(v_lo.cost >= v_hi.cost);
        prop_assert_eq!(v_lo.frictionless, v_hi.frictionless);
    }
}
