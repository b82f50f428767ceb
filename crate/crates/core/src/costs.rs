//! Discretized hedging under proportional transaction costs and the
//! local-time functional describing the cost leakage at the critical rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbm::SamplePath;
use crate::market::PricePath;
use crate::quad::GaussLegendre;
use crate::strategies::{run_self_financing, CurvatureMeasure, Observed, Payoff, Strategy, ValueLedger};

/// Proportional cost rate `k_n = k0·n^{−α}` for `n` rebalancing dates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSchedule {
    pub k0: f64,
    pub alpha: f64,
    pub n: usize,
}

impl CostSchedule {
    pub fn new(k0: f64, alpha: f64, n: usize) -> Result<Self> {
        if !(k0 >= 0.0 && k0.is_finite()) {
            return Err(Error::Domain(format!("k0 must be nonnegative, got {k0}")));
        }
        if !(alpha > 0.0) {
            return Err(Error::Domain(format!("alpha must be positive, got {alpha}")));
        }
        if n == 0 {
            return Err(Error::Usage("cost schedule needs n ≥ 1".into()));
        }
        Ok(Self { k0, alpha, n })
    }

    pub fn rate(&self) -> f64 {
        self.k0 * (self.n as f64).powf(-self.alpha)
    }
}

/// `Φⁿ_t = f⁻_x(S_{t_{i−1}})` on `(t_{i−1}, t_i]`, `t_i = i/n`, evaluated on
/// a price grid that refines `{i/n}`.
pub struct DiscretizedHedge<'a> {
    payoff: &'a dyn Payoff,
    n: usize,
    stride: usize,
    /// `f⁻_x(S_{i/n})` for `i = 0..=n`.
    coarse: Vec<f64>,
    coarse_prices: Vec<f64>,
}

impl<'a> DiscretizedHedge<'a> {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Positions `f⁻_x(S_{i/n})`, `i = 0..=n`.
    pub fn coarse_positions(&self) -> &[f64] {
        &self.coarse
    }

    pub fn payoff(&self) -> &'a dyn Payoff {
        self.payoff
    }
}

impl Strategy for DiscretizedHedge<'_> {
    fn name(&self) -> &str {
        "discretized-hedge"
    }
    fn position(&mut self, obs: &Observed<'_>) -> f64 {
        self.coarse[obs.index / self.stride]
    }
}

pub fn discretized_hedge<'a>(
    payoff: &'a dyn Payoff,
    path: &PricePath,
    n: usize,
) -> Result<DiscretizedHedge<'a>> {
    let grid = path.grid();
    let steps = grid.steps();
    if n == 0
        || grid.uniform_step().is_none()
        || (grid.horizon() - 1.0).abs() > 1e-12
        || steps % n != 0
    {
        return Err(Error::Usage(format!(
            "discretized hedge needs a uniform grid on [0,1] refining {{i/{n}}}"
        )));
    }
    let stride = steps / n;
    let coarse_prices: Vec<f64> = path.values().iter().step_by(stride).copied().collect();
    let coarse = coarse_prices.iter().map(|&s| payoff.left_derivative(s)).collect();
    Ok(DiscretizedHedge {
        payoff,
        n,
        stride,
        coarse,
        coarse_prices,
    })
}

/// Terminal value of a discretized hedge with and without costs.
#[derive(Debug, Clone)]
pub struct CostedValue {
    /// `f(S_0) + ∫Φⁿ dS`.
    pub frictionless: f64,
    /// `k_n Σ_{i=1}^n S_{t_{i−1}} |f⁻_x(S_{t_i}) − f⁻_x(S_{t_{i−1}})|`.
    pub cost: f64,
    pub value: f64,
    /// `f(S_1)`.
    pub target: f64,
    /// Number of rebalancing dates (after entry) with a nonzero trade.
    pub trades: usize,
    pub ledger: ValueLedger,
}

impl CostedValue {
    /// `f(S_1) − V_1`.
    pub fn gap(&self) -> f64 {
        self.target - self.value
    }
}

pub fn value_with_costs(
    hedge: &mut DiscretizedHedge<'_>,
    path: &PricePath,
    schedule: &CostSchedule,
) -> Result<CostedValue> {
    if schedule.n != hedge.n {
        return Err(Error::Usage(format!(
            "cost schedule has n = {} but the hedge rebalances {} times",
            schedule.n, hedge.n
        )));
    }
    let payoff = hedge.payoff;
    let v0 = payoff.value(path.s0());
    let ledger = run_self_financing(hedge, path, v0)?;
    let mut turnover = 0.0;
    let mut trades = 0;
    for i in 1..=hedge.n {
        let d = (hedge.coarse[i] - hedge.coarse[i - 1]).abs();
        if d != 0.0 {
            trades += 1;
        }
        turnover += hedge.coarse_prices[i - 1] * d;
    }
    let cost = schedule.rate() * turnover;
    let frictionless = ledger.terminal_value();
    Ok(CostedValue {
        frictionless,
        cost,
        value: frictionless - cost,
        target: payoff.value(path.terminal()),
        trades,
        ledger,
    })
}

/// Running occupation-density estimate `(1/2ε)·Leb{s ≤ t : |B_s − x| < ε}`,
/// accumulated with left-point values.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalTimeEstimate {
    pub level: f64,
    pub eps: f64,
    pub running: Vec<f64>,
}

impl LocalTimeEstimate {
    pub fn terminal(&self) -> f64 {
        self.running[self.running.len() - 1]
    }
}

pub fn local_time_estimate(noise: &SamplePath, x: f64, eps: f64) -> Result<LocalTimeEstimate> {
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("bandwidth must be positive, got {eps}")));
    }
    let t = noise.times();
    let b = noise.values();
    let mut running = Vec::with_capacity(t.len());
    let mut acc = 0.0;
    running.push(0.0);
    for i in 0..t.len() - 1 {
        if (b[i] - x).abs() < eps {
            acc += (t[i + 1] - t[i]) / (2.0 * eps);
        }
        running.push(acc);
    }
    Ok(LocalTimeEstimate {
        level: x,
        eps,
        running,
    })
}

/// Default bandwidth `n^{−1/3}`.
pub fn default_bandwidth(n: usize) -> f64 {
    (n as f64).powf(-1.0 / 3.0)
}

/// `√(2/π)·k0·∫∫ S_t dl̂(ln a, t) μ^f(da)`, the predicted limit of the cost
/// term at `α = 1 − H`.
///
/// The price level `a` is mapped to the noise level
/// `(ln(a/s0) − μt)/ν`, which reduces to `ln a` for `s0 = 1, μ = 0, ν = 1`.
/// Densities in `μ^f` are integrated exactly over the bandwidth window of
/// each time step.
pub fn tc_limit_functional(
    path: &PricePath,
    curvature: &CurvatureMeasure,
    k0: f64,
    eps: f64,
) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("bandwidth must be positive, got {eps}")));
    }
    let spec = path
        .spec
        .ok_or_else(|| Error::Usage("local-time functional needs a simulated path".into()))?;
    let fbm = path
        .fbm
        .as_ref()
        .ok_or_else(|| Error::Usage("local-time functional needs the fractional noise".into()))?;
    let (s0, mu, nu) = (spec.s0(), spec.mu(), spec.nu());
    let t = path.times();
    let s = path.values();
    let b = fbm.values();
    let gl = GaussLegendre::new(8);
    let mut total = 0.0;
    for i in 0..t.len() - 1 {
        let w = (t[i + 1] - t[i]) / (2.0 * eps) * s[i];
        let mut mass = 0.0;
        for &(a, m) in &curvature.atoms {
            let level = ((a / s0).ln() - mu * t[i]) / nu;
            if (b[i] - level).abs() < eps {
                mass += m;
            }
        }
        if let Some(g) = &curvature.density {
            mass += gl.integrate(b[i] - eps, b[i] + eps, |y| {
                let a = s0 * (mu * t[i] + nu * y).exp();
                g(a) * nu * a
            });
        }
        total += w * mass;
    }
    Ok((2.0 / std::f64::consts::PI).sqrt() * k0 * total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::{HurstIndex, PathKind, TimeGrid};
    use crate::market::{simulate_model, ModelSpec};
    use crate::strategies::{Call, Square};
    use std::sync::Arc;

    fn injected(values: Vec<f64>) -> PricePath {
        let grid = Arc::new(TimeGrid::uniform(values.len() - 1, 1.0).unwrap());
        PricePath {
            price: SamplePath::new(grid, values, PathKind::Price).unwrap(),
            bm: None,
            fbm: None,
            spec: None,
        }
    }

    fn fbs_paths(level: u32, n: usize) -> Vec<PricePath> {
        let spec = ModelSpec::fbs(HurstIndex::new(0.75).unwrap());
        simulate_model(&spec, &TimeGrid::dyadic(level, 1.0).unwrap(), 12, n).unwrap()
    }

    #[test]
    fn schedule_rate() {
        let s = CostSchedule::new(2.0, 0.5, 16).unwrap();
        assert_eq!(s.rate(), 0.5);
        assert!(CostSchedule::new(1.0, 0.0, 4).is_err());
        assert!(CostSchedule::new(1.0, -1.0, 4).is_err());
    }

    #[test]
    fn single_rebalance_is_buy_and_hold() {
        let p = &fbs_paths(6, 1)[0];
        let call = Call { strike: 1.0 };
        let mut hd = discretized_hedge(&call, p, 1).unwrap();
        let cv = value_with_costs(&mut hd, p, &CostSchedule::new(1.0, 0.5, 1).unwrap()).unwrap();
        let phi = call.left_derivative(p.s0());
        assert!(cv.ledger.positions.iter().all(|&x| x == phi));
    }

    #[test]
    fn single_crossing_costs_one_unit() {
        // crosses K = 1 upward between t = 1/4 and t = 2/4
        let p = injected(vec![0.9, 0.95, 1.05, 1.1, 1.2]);
        let call = Call { strike: 1.0 };
        let mut hd = discretized_hedge(&call, &p, 4).unwrap();
        let sch = CostSchedule::new(1.0, 0.5, 4).unwrap();
        let cv = value_with_costs(&mut hd, &p, &sch).unwrap();
        assert_eq!(cv.trades, 1);
        assert!((cv.cost - 0.5 * 0.95).abs() < 1e-15);
        // no crossing: no trades after entry
        let q = injected(vec![0.9, 0.95, 0.85, 0.8, 0.9]);
        let mut hd = discretized_hedge(&call, &q, 4).unwrap();
        let cv = value_with_costs(&mut hd, &q, &sch).unwrap();
        assert_eq!(cv.trades, 0);
        assert_eq!(cv.cost, 0.0);
    }

    #[test]
    fn zero_cost_matches_frictionless_and_refines() {
        let p = &fbs_paths(8, 1)[0];
        let call = Call { strike: 1.0 };
        let mut hd = discretized_hedge(&call, p, 16).unwrap();
        let cv = value_with_costs(&mut hd, p, &CostSchedule::new(0.0, 0.5, 16).unwrap()).unwrap();
        assert_eq!(cv.value, cv.frictionless);
        assert!(discretized_hedge(&call, p, 3).is_err());
        let mut hd = discretized_hedge(&call, p, 16).unwrap();
        assert!(value_with_costs(&mut hd, p, &CostSchedule::new(1.0, 0.5, 8).unwrap()).is_err());
    }

    #[test]
    fn local_time_degenerate_cases() {
        let grid = Arc::new(TimeGrid::dyadic(4, 1.0).unwrap());
        let flat = SamplePath::new(grid.clone(), vec![0.0; 17], PathKind::Fbm).unwrap();
        let lt = local_time_estimate(&flat, 0.0, 0.1).unwrap();
        assert!((lt.terminal() - 1.0 / 0.2).abs() < 1e-12);
        let lt = local_time_estimate(&flat, 5.0, 0.1).unwrap();
        assert_eq!(lt.terminal(), 0.0);
        assert!(local_time_estimate(&flat, 0.0, 0.0).is_err());
    }

    #[test]
    fn functional_linearity_and_far_levels() {
        let p = &fbs_paths(10, 1)[0];
        let call = Call { strike: 1.0 };
        let one = tc_limit_functional(p, &call.curvature(), 1.0, 0.05).unwrap();
        let two = tc_limit_functional(p, &call.curvature().scaled(2.0), 1.0, 0.05).unwrap();
        assert_eq!(two, 2.0 * one);
        let far = Call { strike: 1e6 };
        assert_eq!(tc_limit_functional(p, &far.curvature(), 1.0, 0.05).unwrap(), 0.0);
        let sq = tc_limit_functional(p, &Square.curvature(), 1.0, 0.05).unwrap();
        assert!(sq > 0.0);
    }
}
