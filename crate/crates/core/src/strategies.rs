//! Self-financing portfolio engine and the explicit trading strategies.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::fbm::HurstIndex;
use crate::market::{ModelSpec, PricePath};
use crate::rng::{stream, Domain};

/// What a strategy may look at when choosing its position at `t_index`:
/// the history up to and including that time.
#[derive(Debug, Clone, Copy)]
pub struct Observed<'a> {
    pub index: usize,
    pub times: &'a [f64],
    pub prices: &'a [f64],
    pub value: f64,
}

impl Observed<'_> {
    pub fn time(&self) -> f64 {
        self.times[self.index]
    }

    pub fn price(&self) -> f64 {
        self.prices[self.index]
    }
}

/// A rule producing the stock position held over `(t_i, t_{i+1}]`.
pub trait Strategy {
    fn name(&self) -> &str;
    fn position(&mut self, obs: &Observed<'_>) -> f64;
}

/// Value process of a self-financing strategy along one path.
///
/// `positions[i]` is held over `(t_i, t_{i+1}]`, so `positions` and
/// `price_moves` have one entry fewer than `times`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueLedger {
    pub times: Vec<f64>,
    pub prices: Vec<f64>,
    pub price_moves: Vec<f64>,
    pub values: Vec<f64>,
    pub positions: Vec<f64>,
}

impl ValueLedger {
    pub fn initial_value(&self) -> f64 {
        self.values[0]
    }

    pub fn terminal_value(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Bond holdings `Φ⁰_i = V_i − Φ_i S_i`.
    pub fn bonds(&self) -> Vec<f64> {
        self.positions
            .iter()
            .enumerate()
            .map(|(i, p)| self.values[i] - p * self.prices[i])
            .collect()
    }

    /// Stock traded at each rebalancing time, entry trade included.
    pub fn trades(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.positions
            .iter()
            .map(|&p| {
                let d = p - prev;
                prev = p;
                d
            })
            .collect()
    }

    pub fn running_min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `max_i |Φ_i S_i|`, the largest amount of money held in the stock.
    pub fn max_money_in_stock(&self) -> f64 {
        self.positions
            .iter()
            .zip(&self.prices)
            .map(|(p, s)| (p * s).abs())
            .fold(0.0, f64::max)
    }

    /// Largest violation of `V_{i+1} − V_i = Φ_i ΔS_i`, each step measured
    /// relative to `max(1, |V_i|, |V_{i+1}|, |Φ_i ΔS_i|)`.
    pub fn budget_residual(&self) -> f64 {
        (0..self.positions.len())
            .map(|i| {
                let gain = self.positions[i] * self.price_moves[i];
                let scale = 1f64
                    .max(self.values[i].abs())
                    .max(self.values[i + 1].abs())
                    .max(gain.abs());
                (self.values[i + 1] - self.values[i] - gain).abs() / scale
            })
            .fold(0.0, f64::max)
    }
}

fn engine(
    strategy: &mut dyn Strategy,
    times: &[f64],
    prices: &[f64],
    price_moves: &[f64],
    v0: f64,
) -> Result<ValueLedger> {
    let n = price_moves.len();
    let mut values = Vec::with_capacity(n + 1);
    let mut positions = Vec::with_capacity(n);
    values.push(v0);
    for i in 0..n {
        let obs = Observed {
            index: i,
            times: &times[..=i],
            prices: &prices[..=i],
            value: values[i],
        };
        let phi = strategy.position(&obs);
        if !phi.is_finite() {
            return Err(Error::Strategy {
                index: i,
                value: phi,
            });
        }
        positions.push(phi);
        values.push(values[i] + phi * price_moves[i]);
    }
    Ok(ValueLedger {
        times: times.to_vec(),
        prices: prices.to_vec(),
        price_moves: price_moves.to_vec(),
        values,
        positions,
    })
}

/// Runs `strategy` along `path` from initial wealth `v0` using the budget
/// constraint `V_{i+1} = V_i + Φ_i (S_{i+1} − S_i)`.
pub fn run_self_financing(
    strategy: &mut dyn Strategy,
    path: &PricePath,
    v0: f64,
) -> Result<ValueLedger> {
    let s = path.values();
    let moves: Vec<f64> = s.windows(2).map(|w| w[1] - w[0]).collect();
    engine(strategy, path.times(), s, &moves, v0)
}

/// A constant position.
#[derive(Debug, Clone)]
pub struct Hold(pub f64);

impl Strategy for Hold {
    fn name(&self) -> &str {
        "hold"
    }
    fn position(&mut self, _obs: &Observed<'_>) -> f64 {
        self.0
    }
}

/// Any closure of the observed history.
pub struct FnStrategy<F>(pub F);

impl<F: FnMut(&Observed<'_>) -> f64> Strategy for FnStrategy<F> {
    fn name(&self) -> &str {
        "custom"
    }
    fn position(&mut self, obs: &Observed<'_>) -> f64 {
        (self.0)(obs)
    }
}

// ---------------------------------------------------------------------------
// Doubling

/// A Black–Scholes path (`σ = 1, μ = 0`) on the accumulating grid
/// `t_k = T(1 − 2^{−k})`, `k ≤ max_steps`, closed by the horizon `T`.
///
/// For large `k` neighbouring times and prices are equal in floating point,
/// so the exact step lengths and price moves are stored explicitly.
#[derive(Debug, Clone)]
pub struct DoublingPath {
    pub horizon: f64,
    pub times: Vec<f64>,
    pub gaps: Vec<f64>,
    pub prices: Vec<f64>,
    pub price_moves: Vec<f64>,
    /// Brownian increment over each gap divided by its standard deviation;
    /// the last entry belongs to the closing step to `T`.
    pub normalized: Vec<f64>,
}

impl DoublingPath {
    pub fn sample(horizon: f64, s0: f64, max_steps: usize, seed: u64, index: u64) -> Result<Self> {
        if !(horizon > 0.0) || !(s0 > 0.0) {
            return Err(Error::Domain("doubling path needs T > 0 and s0 > 0".into()));
        }
        if max_steps == 0 {
            return Err(Error::Usage("doubling needs max_steps ≥ 1".into()));
        }
        let mut rng = stream(seed, Domain::Doubling, index);
        let mut times = vec![0.0];
        let mut gaps = Vec::with_capacity(max_steps + 1);
        let mut prices = vec![s0];
        let mut moves = Vec::with_capacity(max_steps + 1);
        let mut normalized = Vec::with_capacity(max_steps + 1);
        for k in 1..=max_steps + 1 {
            // the closing step to T has the same length as the last regular one
            let e = if k > max_steps { max_steps } else { k } as i32;
            let g = horizon * 0.5f64.powi(e);
            let z: f64 = rng.sample(StandardNormal);
            let r = (g.sqrt() * z - 0.5 * g).exp_m1();
            let s = prices[k - 1];
            times.push(if k > max_steps {
                horizon
            } else {
                horizon * (1.0 - 0.5f64.powi(e))
            });
            gaps.push(g);
            moves.push(s * r);
            prices.push(s * (1.0 + r));
            normalized.push(z);
        }
        Ok(Self {
            horizon,
            times,
            gaps,
            prices,
            price_moves: moves,
            normalized,
        })
    }

    pub fn max_steps(&self) -> usize {
        self.gaps.len() - 1
    }
}

/// Result of the doubling strategy on one path.
#[derive(Debug, Clone)]
pub struct DoublingOutcome {
    pub ledger: ValueLedger,
    /// Index `k` of the stopping time `τ = t_k`, if reached within the budget.
    pub stopped_at: Option<usize>,
}

impl DoublingOutcome {
    pub fn stopped_value(&self) -> Option<f64> {
        self.stopped_at.map(|k| self.ledger.values[k])
    }
}

/// `c_k = exp(√(T2^{−k}) − T2^{−k}/2) − 1`.
pub fn doubling_threshold(horizon: f64, k: usize) -> f64 {
    let g = horizon * 0.5f64.powi(k as i32);
    (g.sqrt() - 0.5 * g).exp_m1()
}

/// Starting from `V_0 = 0`, holds `φ_{t_k} = (1 − V_{t_k})/(S_{t_k} c_{k+1})`
/// until the first step whose normalized Brownian increment is at least 1,
/// then holds nothing. The value is tracked through the deficit
/// `D = 1 − V`, which makes `V_τ ≥ 1` hold exactly in floating point.
pub fn doubling_strategy(path: &DoublingPath) -> DoublingOutcome {
    let n = path.max_steps();
    let mut deficit = 1.0;
    let mut values = vec![0.0];
    let mut positions = Vec::with_capacity(n + 1);
    let mut stopped_at = None;
    for k in 1..=n + 1 {
        if stopped_at.is_some() || k > n {
            positions.push(0.0);
            values.push(values[k - 1]);
            continue;
        }
        let c = doubling_threshold(path.horizon, k);
        let s = path.prices[k - 1];
        positions.push(deficit / (s * c));
        let x = path.price_moves[k - 1] / s / c;
        deficit *= 1.0 - x;
        values.push(1.0 - deficit);
        if path.normalized[k - 1] >= 1.0 {
            stopped_at = Some(k);
        }
    }
    DoublingOutcome {
        ledger: ValueLedger {
            times: path.times.clone(),
            prices: path.prices.clone(),
            price_moves: path.price_moves.clone(),
            values,
            positions,
        },
        stopped_at,
    }
}

// ---------------------------------------------------------------------------
// Momentum

/// `Φ = α_H n^{2H−1} (log S_{t_k} − log S_{t_{k−1}})/S_{t_k}` on
/// `(t_k, t_{k+1}]`, flat on the first interval; `α_H = ±1` by the side of
/// `H` relative to ½.
#[derive(Debug, Clone)]
pub struct Momentum {
    scale: f64,
    experimental: bool,
}

impl Momentum {
    pub fn new(n: usize, h: HurstIndex) -> Result<Self> {
        if n < 3 {
            return Err(Error::Usage(format!("momentum strategy needs n ≥ 3, got {n}")));
        }
        let hv = h.value();
        let alpha = if hv > 0.5 { 1.0 } else { -1.0 };
        Ok(Self {
            scale: alpha * (n as f64).powf(2.0 * hv - 1.0),
            experimental: hv < 0.5,
        })
    }

    /// For `H < ½` the pathwise limit is not established; results are not
    /// expected to converge.
    pub fn is_experimental(&self) -> bool {
        self.experimental
    }
}

impl Strategy for Momentum {
    fn name(&self) -> &str {
        "momentum"
    }
    fn position(&mut self, obs: &Observed<'_>) -> f64 {
        let k = obs.index;
        if k == 0 {
            return 0.0;
        }
        let s = obs.prices[k];
        self.scale * (s / obs.prices[k - 1]).ln() / s
    }
}

/// Momentum strategy with `V_0 = 0` on a uniform grid of `n` steps.
pub fn momentum_strategy(path: &PricePath, n: usize, h: HurstIndex) -> Result<ValueLedger> {
    if path.grid().uniform_step().is_none() || path.grid().steps() != n {
        return Err(Error::Usage(format!(
            "momentum strategy needs a uniform grid of {n} steps"
        )));
    }
    run_self_financing(&mut Momentum::new(n, h)?, path, 0.0)
}

// ---------------------------------------------------------------------------
// Heat kernel

/// `v(t,x) = exp(−x²/(2(T−t)))/√(2π(T−t))`.
pub fn heat_kernel(t: f64, x: f64, horizon: f64) -> f64 {
    let tau = horizon - t;
    (-x * x / (2.0 * tau)).exp() / (2.0 * std::f64::consts::PI * tau).sqrt()
}

/// `Φ_t = −∂_x v(t, W_t)/S_t` with `W_t = log(S_t/s0) + t/2`.
#[derive(Debug, Clone)]
pub struct HeatKernel {
    horizon: f64,
    s0: f64,
}

impl Strategy for HeatKernel {
    fn name(&self) -> &str {
        "heat-kernel"
    }
    fn position(&mut self, obs: &Observed<'_>) -> f64 {
        let t = obs.time();
        let s = obs.price();
        let w = (s / self.s0).ln() + 0.5 * t;
        w / (self.horizon - t) * heat_kernel(t, w, self.horizon) / s
    }
}

#[derive(Debug, Clone)]
pub struct HeatKernelOutcome {
    pub ledger: ValueLedger,
    /// `1/√(2πT)`.
    pub target: f64,
    /// Gain over the final grid step, where the position is the last one
    /// evaluated before the singularity at `T`.
    pub frozen_step_error: f64,
}

pub fn heat_kernel_strategy(path: &PricePath) -> Result<HeatKernelOutcome> {
    match path.spec {
        Some(ModelSpec::Bs { sigma, mu, .. }) if sigma == 1.0 && mu == 0.0 => {}
        None => {}
        _ => {
            return Err(Error::Usage(
                "heat-kernel strategy needs a Black–Scholes path with σ = 1, μ = 0".into(),
            ))
        }
    }
    let horizon = path.grid().horizon();
    let mut strat = HeatKernel {
        horizon,
        s0: path.s0(),
    };
    let ledger = run_self_financing(&mut strat, path, 0.0)?;
    let last = ledger.positions.len() - 1;
    let frozen_step_error = (ledger.positions[last] * ledger.price_moves[last]).abs();
    Ok(HeatKernelOutcome {
        ledger,
        target: 1.0 / (2.0 * std::f64::consts::PI * horizon).sqrt(),
        frozen_step_error,
    })
}

// ---------------------------------------------------------------------------
// Zero quadratic variation

/// `Φ_t = S_t − S_0`.
#[derive(Debug, Clone, Default)]
pub struct ZeroQv;

impl Strategy for ZeroQv {
    fn name(&self) -> &str {
        "zero-qv"
    }
    fn position(&mut self, obs: &Observed<'_>) -> f64 {
        obs.price() - obs.prices[0]
    }
}

fn require_fbs_above_half(path: &PricePath, what: &str) -> Result<()> {
    match path.spec {
        Some(ModelSpec::Fbs { h, .. }) if h.value() > 0.5 => Ok(()),
        None => Ok(()),
        _ => Err(Error::Usage(format!(
            "{what} needs a fractional Black–Scholes path with H > 1/2"
        ))),
    }
}

pub fn zero_qv_strategy(path: &PricePath) -> Result<ValueLedger> {
    require_fbs_above_half(path, "zero-QV strategy")?;
    run_self_financing(&mut ZeroQv, path, 0.0)
}

// ---------------------------------------------------------------------------
// Convex payoffs and their hedge

/// Second-derivative measure of a convex payoff: point masses `(a, mass)`
/// plus an optional density.
#[derive(Clone, Default)]
pub struct CurvatureMeasure {
    pub atoms: Vec<(f64, f64)>,
    pub density: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
}

impl fmt::Debug for CurvatureMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CurvatureMeasure")
            .field("atoms", &self.atoms)
            .field("density", &self.density.is_some())
            .finish()
    }
}

impl CurvatureMeasure {
    pub fn atom(at: f64, mass: f64) -> Self {
        Self {
            atoms: vec![(at, mass)],
            density: None,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            atoms: self.atoms.iter().map(|&(a, m)| (a, c * m)).collect(),
            density: self.density.clone().map(|d| {
                Arc::new(move |x: f64| c * d(x)) as Arc<dyn Fn(f64) -> f64 + Send + Sync>
            }),
        }
    }
}

/// A convex payoff with one-sided derivatives.
pub trait Payoff: Send + Sync {
    fn value(&self, x: f64) -> f64;
    fn right_derivative(&self, x: f64) -> f64;
    fn left_derivative(&self, x: f64) -> f64;
    fn curvature(&self) -> CurvatureMeasure;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Call {
    pub strike: f64,
}

impl Payoff for Call {
    fn value(&self, x: f64) -> f64 {
        (x - self.strike).max(0.0)
    }
    fn right_derivative(&self, x: f64) -> f64 {
        if x >= self.strike {
            1.0
        } else {
            0.0
        }
    }
    fn left_derivative(&self, x: f64) -> f64 {
        if x > self.strike {
            1.0
        } else {
            0.0
        }
    }
    fn curvature(&self) -> CurvatureMeasure {
        CurvatureMeasure::atom(self.strike, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Put {
    pub strike: f64,
}

impl Payoff for Put {
    fn value(&self, x: f64) -> f64 {
        (self.strike - x).max(0.0)
    }
    fn right_derivative(&self, x: f64) -> f64 {
        if x >= self.strike {
            0.0
        } else {
            -1.0
        }
    }
    fn left_derivative(&self, x: f64) -> f64 {
        if x > self.strike {
            0.0
        } else {
            -1.0
        }
    }
    fn curvature(&self) -> CurvatureMeasure {
        CurvatureMeasure::atom(self.strike, 1.0)
    }
}

/// `f(x) = slope·x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub slope: f64,
    pub intercept: f64,
}

impl Payoff for Linear {
    fn value(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
    fn right_derivative(&self, _x: f64) -> f64 {
        self.slope
    }
    fn left_derivative(&self, _x: f64) -> f64 {
        self.slope
    }
    fn curvature(&self) -> CurvatureMeasure {
        CurvatureMeasure::default()
    }
}

/// `f(x) = x²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Square;

impl Payoff for Square {
    fn value(&self, x: f64) -> f64 {
        x * x
    }
    fn right_derivative(&self, x: f64) -> f64 {
        2.0 * x
    }
    fn left_derivative(&self, x: f64) -> f64 {
        2.0 * x
    }
    fn curvature(&self) -> CurvatureMeasure {
        CurvatureMeasure {
            atoms: Vec::new(),
            density: Some(Arc::new(|_| 2.0)),
        }
    }
}

/// A payoff assembled from closures; convexity is checked when hedging.
pub struct CustomPayoff {
    pub value: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    pub right: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    pub left: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    pub curvature: CurvatureMeasure,
}

impl Payoff for CustomPayoff {
    fn value(&self, x: f64) -> f64 {
        (self.value)(x)
    }
    fn right_derivative(&self, x: f64) -> f64 {
        (self.right)(x)
    }
    fn left_derivative(&self, x: f64) -> f64 {
        (self.left)(x)
    }
    fn curvature(&self) -> CurvatureMeasure {
        self.curvature.clone()
    }
}

/// Checks that the right derivative is nondecreasing over `points` and
/// dominates the left derivative.
pub fn check_convex_on(payoff: &dyn Payoff, points: &[f64]) -> Result<()> {
    let mut xs = points.to_vec();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let mut prev = f64::NEG_INFINITY;
    for &x in &xs {
        let r = payoff.right_derivative(x);
        let l = payoff.left_derivative(x);
        if r < prev || l > r + 1e-12 * r.abs().max(1.0) {
            return Err(Error::Validation(format!(
                "payoff is not convex on the sampled range near x = {x}"
            )));
        }
        prev = r;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeSide {
    Right,
    Left,
}

/// `Φ_t = f'(S_t)` using the chosen one-sided derivative.
pub struct ConvexHedge<'a> {
    pub payoff: &'a dyn Payoff,
    pub side: DerivativeSide,
}

impl Strategy for ConvexHedge<'_> {
    fn name(&self) -> &str {
        "convex-hedge"
    }
    fn position(&mut self, obs: &Observed<'_>) -> f64 {
        match self.side {
            DerivativeSide::Right => self.payoff.right_derivative(obs.price()),
            DerivativeSide::Left => self.payoff.left_derivative(obs.price()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct HedgeOutcome {
    pub ledger: ValueLedger,
    /// `f(S_T) − V_T`.
    pub replication_error: f64,
}

/// Hedge with `Φ_t = f⁺_x(S_t)` from initial capital `f(S_0)`.
pub fn convex_hedge(payoff: &dyn Payoff, path: &PricePath) -> Result<HedgeOutcome> {
    convex_hedge_with(payoff, path, DerivativeSide::Right)
}

pub fn convex_hedge_with(
    payoff: &dyn Payoff,
    path: &PricePath,
    side: DerivativeSide,
) -> Result<HedgeOutcome> {
    require_fbs_above_half(path, "convex hedge")?;
    check_convex_on(payoff, path.values())?;
    let mut strat = ConvexHedge { payoff, side };
    let ledger = run_self_financing(&mut strat, path, payoff.value(path.s0()))?;
    let replication_error = payoff.value(path.terminal()) - ledger.terminal_value();
    Ok(HedgeOutcome {
        ledger,
        replication_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::{PathKind, SamplePath, TimeGrid};
    use crate::market::simulate_model;

    fn h(x: f64) -> HurstIndex {
        HurstIndex::new(x).unwrap()
    }

    fn injected(values: Vec<f64>) -> PricePath {
        let grid = Arc::new(TimeGrid::uniform(values.len() - 1, 1.0).unwrap());
        PricePath {
            price: SamplePath::new(grid, values, PathKind::Price).unwrap(),
            bm: None,
            fbm: None,
            spec: None,
        }
    }

    #[test]
    fn hold_strategies() {
        let p = &simulate_model(&ModelSpec::bs(), &TimeGrid::dyadic(8, 1.0).unwrap(), 1, 1)
            .unwrap()[0];
        let l = run_self_financing(&mut Hold(0.0), p, 2.5).unwrap();
        assert!(l.values.iter().all(|&v| v == 2.5));
        let l = run_self_financing(&mut Hold(1.0), p, p.s0()).unwrap();
        assert!((l.terminal_value() - p.terminal()).abs() < 1e-12);
        let l = run_self_financing(&mut Hold(-1.0), p, 0.0).unwrap();
        assert!((l.terminal_value() - (p.s0() - p.terminal())).abs() < 1e-12);
        assert!(l.budget_residual() < 1e-14);
    }

    #[test]
    fn non_finite_position_is_reported() {
        let p = injected(vec![1.0, 1.1, 1.2, 1.3]);
        let mut bad = FnStrategy(|o: &Observed<'_>| if o.index == 2 { f64::NAN } else { 1.0 });
        match run_self_financing(&mut bad, &p, 0.0) {
            Err(Error::Strategy { index, .. }) => assert_eq!(index, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ledger_bookkeeping() {
        let p = injected(vec![1.0, 2.0, 1.5]);
        let l = run_self_financing(&mut FnStrategy(|o: &Observed<'_>| o.index as f64 + 1.0), &p, 1.0)
            .unwrap();
        assert_eq!(l.values, vec![1.0, 2.0, 1.0]);
        assert_eq!(l.bonds(), vec![0.0, -2.0]);
        assert_eq!(l.trades(), vec![1.0, 1.0]);
        assert_eq!(l.max_money_in_stock(), 4.0);
        assert_eq!(l.running_min(), 1.0);
    }

    #[test]
    fn doubling_one_step() {
        for idx in 0..200 {
            let p = DoublingPath::sample(1.0, 1.0, 1, 3, idx).unwrap();
            let o = doubling_strategy(&p);
            if p.normalized[0] >= 1.0 {
                assert_eq!(o.stopped_at, Some(1));
                assert!(o.stopped_value().unwrap() >= 1.0);
            } else {
                assert!(o.stopped_at.is_none());
            }
        }
    }

    #[test]
    fn doubling_reaches_one_and_freezes() {
        let mut stopped = 0;
        for idx in 0..500 {
            let p = DoublingPath::sample(1.0, 1.0, 60, 5, idx).unwrap();
            let o = doubling_strategy(&p);
            assert!(o.ledger.budget_residual() < 1e-12);
            if let Some(k) = o.stopped_at {
                stopped += 1;
                assert!(o.ledger.values[k] >= 1.0);
                assert!(o.ledger.positions[k..].iter().all(|&x| x == 0.0));
                assert_eq!(o.ledger.terminal_value(), o.ledger.values[k]);
            }
        }
        assert!(stopped >= 495);
    }

    #[test]
    fn momentum_scale_invariance() {
        let g = TimeGrid::dyadic(8, 1.0).unwrap();
        let p = &simulate_model(&ModelSpec::fbs(h(0.75)), &g, 2, 1).unwrap()[0];
        let scaled = PricePath {
            price: p.price.map(PathKind::Price, |_, s| 10.0 * s).unwrap(),
            ..p.clone()
        };
        let a = momentum_strategy(p, 256, h(0.75)).unwrap();
        let b = momentum_strategy(&scaled, 256, h(0.75)).unwrap();
        let rel = (a.terminal_value() - b.terminal_value()).abs() / a.terminal_value().abs();
        assert!(rel < 1e-12, "{rel}");
        assert!(momentum_strategy(p, 128, h(0.75)).is_err());
        assert!(Momentum::new(2, h(0.75)).is_err());
        assert!(Momentum::new(8, h(0.3)).unwrap().is_experimental());
    }

    #[test]
    fn heat_kernel_identity() {
        assert!((heat_kernel(0.0, 0.0, 1.0) - 0.398_942_280_401_432_7).abs() < 1e-15);
        let spec = ModelSpec::bs();
        let g = TimeGrid::dyadic(12, 1.0).unwrap();
        let o = heat_kernel_strategy(&simulate_model(&spec, &g, 4, 1).unwrap()[0]).unwrap();
        assert_eq!(o.ledger.initial_value(), 0.0);
        assert!((o.target - 0.398_942_280_401_432_7).abs() < 1e-15);
        let fbs = &simulate_model(&ModelSpec::fbs(h(0.7)), &g, 4, 1).unwrap()[0];
        assert!(heat_kernel_strategy(fbs).is_err());
    }

    #[test]
    fn zero_qv_identity_is_exact_algebra() {
        let p = injected(vec![1.0, 1.3, 0.8, 1.1, 1.2]);
        let l = zero_qv_strategy(&p).unwrap();
        let s = p.values();
        let sq: f64 = s.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
        let expect = 0.5 * ((s[4] - s[0]).powi(2) - sq);
        assert!((l.terminal_value() - expect).abs() < 1e-14);
        let flat = injected(vec![1.0, 1.0, 1.0]);
        assert_eq!(zero_qv_strategy(&flat).unwrap().terminal_value(), 0.0);
    }

    #[test]
    fn linear_payoff_replicates_exactly() {
        let g = TimeGrid::dyadic(5, 1.0).unwrap();
        let p = &simulate_model(&ModelSpec::fbs(h(0.75)), &g, 6, 1).unwrap()[0];
        let f = Linear {
            slope: 2.0,
            intercept: -1.0,
        };
        let o = convex_hedge(&f, p).unwrap();
        assert!(o.replication_error.abs() < 1e-12);
    }

    #[test]
    fn non_convex_payoff_rejected() {
        let p = injected(vec![1.0, 1.3, 0.8]);
        let concave = CustomPayoff {
            value: Box::new(|x| -x * x),
            right: Box::new(|x| -2.0 * x),
            left: Box::new(|x| -2.0 * x),
            curvature: CurvatureMeasure::default(),
        };
        assert!(matches!(convex_hedge(&concave, &p), Err(Error::Validation(_))));
    }

    #[test]
    fn call_one_sided_derivatives() {
        let c = Call { strike: 1.0 };
        assert_eq!(c.right_derivative(1.0), 1.0);
        assert_eq!(c.left_derivative(1.0), 0.0);
        let p = injected(vec![1.0, 1.2, 1.0, 0.9, 1.1]);
        let r = convex_hedge_with(&c, &p, DerivativeSide::Right).unwrap();
        let l = convex_hedge_with(&c, &p, DerivativeSide::Left).unwrap();
        assert_ne!(r.ledger.positions, l.ledger.positions);
        let q = injected(vec![1.0 + 1e-3, 1.2, 0.95, 0.9, 1.1]);
        let r = convex_hedge_with(&c, &q, DerivativeSide::Right).unwrap();
        let l = convex_hedge_with(&c, &q, DerivativeSide::Left).unwrap();
        assert_eq!(r.ledger.positions, l.ledger.positions);
    }
}
