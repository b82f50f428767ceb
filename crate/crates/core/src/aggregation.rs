//! Aggregation models whose scaling limits are fractional: superposed
//! heavy-tailed renewal processes and a population of semi-Markov traders.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbm::{PathKind, SamplePath, TimeGrid};
use crate::rng::{stream, Domain};

/// Connection-rate ratio `m / a_m^β` below which the scaling regime is
/// doubtful.
pub const MIN_CONNECTION_RATIO: f64 = 10.0;

fn component_index(rep: u64, k: u64) -> u64 {
    (rep << 32) | k
}

/// Stationary renewal process with Pareto sojourns
/// `1 − G(t) = (1 + t/c)^{−(1+β)}`, where `c` is the time unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenewalSpec {
    pub beta: f64,
    #[serde(default = "unit")]
    pub time_unit: f64,
}

fn unit() -> f64 {
    1.0
}

impl RenewalSpec {
    pub fn new(beta: f64) -> Result<Self> {
        Self::with_time_unit(beta, 1.0)
    }

    pub fn with_time_unit(beta: f64, time_unit: f64) -> Result<Self> {
        let s = Self { beta, time_unit };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Domain(format!("β must lie in (0,1), got {}", self.beta)));
        }
        if !(self.time_unit > 0.0 && self.time_unit.is_finite()) {
            return Err(Error::Domain(format!(
                "time unit must be positive, got {}",
                self.time_unit
            )));
        }
        Ok(())
    }

    /// `μ = c/β`.
    pub fn mean(&self) -> f64 {
        self.time_unit / self.beta
    }

    /// `H = 1 − β/2`.
    pub fn hurst(&self) -> f64 {
        1.0 - self.beta / 2.0
    }

    /// `L` in `1 − G(t) ~ L t^{−(1+β)}`.
    pub fn tail_constant(&self) -> f64 {
        self.time_unit.powf(1.0 + self.beta)
    }

    /// `μ^{3/2} √(β(1−β)(2−β)/(2L))`.
    pub fn fluctuation_constant(&self) -> f64 {
        let b = self.beta;
        self.mean().powf(1.5) * (b * (1.0 - b) * (2.0 - b) / (2.0 * self.tail_constant())).sqrt()
    }

    pub fn sample_sojourn<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.time_unit * ((1.0 - u).powf(-1.0 / (1.0 + self.beta)) - 1.0)
    }

    /// First sojourn from `G₀(t) = (1/μ)∫_0^t (1 − G)`, whose tail is
    /// `(1 + t/c)^{−β}`.
    pub fn sample_first<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.time_unit * ((1.0 - u).powf(-1.0 / self.beta) - 1.0)
    }

    fn events(&self, rng: &mut ChaCha8Rng, horizon: f64) -> Vec<f64> {
        let mut out = Vec::new();
        let mut t = self.sample_first(rng);
        while t <= horizon {
            out.push(t);
            t += self.sample_sojourn(rng);
        }
        out
    }
}

/// Event times of one stationary renewal process in `[0, T]`.
pub fn sample_renewal_counting(spec: &RenewalSpec, horizon: f64, seed: u64, index: u64) -> Vec<f64> {
    spec.events(&mut stream(seed, Domain::Renewal, index), horizon)
}

/// `N_t` at each time of `times`.
pub fn count_at(events: &[f64], times: impl IntoIterator<Item = f64>) -> Vec<f64> {
    times
        .into_iter()
        .map(|t| events.partition_point(|&e| e <= t) as f64)
        .collect()
}

/// Size and time scale of a workload experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadParams {
    /// Number of superposed sources.
    pub m: usize,
    /// Time scale `a_m`.
    pub a_m: f64,
    pub horizon: f64,
    /// Grid steps over `[0, horizon]`.
    pub steps: usize,
}

impl WorkloadParams {
    pub fn validate(&self, spec: &RenewalSpec) -> Result<Option<String>> {
        spec.validate()?;
        if self.m == 0 || self.steps == 0 {
            return Err(Error::Usage("workload needs m ≥ 1 and at least one grid step".into()));
        }
        if !(self.a_m > 0.0 && self.horizon > 0.0) {
            return Err(Error::Domain("a_m and the horizon must be positive".into()));
        }
        let ratio = self.m as f64 / self.a_m.powf(spec.beta);
        Ok((ratio < MIN_CONNECTION_RATIO).then(|| {
            format!("connection-rate ratio m/a_m^β = {ratio:.3} is below {MIN_CONNECTION_RATIO}")
        }))
    }

    fn grid(&self) -> Result<Arc<TimeGrid>> {
        Ok(Arc::new(TimeGrid::uniform(self.steps, self.horizon)?))
    }
}

/// `W(m, a_m t)` on the rescaled grid, with each source's counts.
#[derive(Debug, Clone)]
pub struct Workload {
    pub path: SamplePath,
    pub components: Vec<Vec<f64>>,
    pub warning: Option<String>,
}

fn component_counts(
    spec: &RenewalSpec,
    p: &WorkloadParams,
    grid: &TimeGrid,
    seed: u64,
    rep: u64,
    k: usize,
) -> Vec<f64> {
    let mut rng = stream(seed, Domain::Renewal, component_index(rep, k as u64));
    let events = spec.events(&mut rng, p.a_m * p.horizon);
    count_at(&events, grid.points().iter().map(|t| p.a_m * t))
}

/// Replication `rep` of the superposed workload.
pub fn workload(spec: &RenewalSpec, p: &WorkloadParams, seed: u64, rep: u64) -> Result<Workload> {
    let warning = p.validate(spec)?;
    let grid = p.grid()?;
    let components: Vec<Vec<f64>> = (0..p.m)
        .into_par_iter()
        .map(|k| component_counts(spec, p, &grid, seed, rep, k))
        .collect();
    let mut total = vec![0.0; grid.len()];
    for c in &components {
        for (t, x) in total.iter_mut().zip(c) {
            *t += x;
        }
    }
    Ok(Workload {
        path: SamplePath::new(grid, total, PathKind::Counting)?,
        components,
        warning,
    })
}

/// Rescaled workload fluctuations `Yᵐ`, one path per replication.
#[derive(Debug, Clone)]
pub struct FluctuationRun {
    pub paths: Vec<SamplePath>,
    pub hurst: f64,
    pub warning: Option<String>,
}

/// `Yᵐ_t = K·(W(m, a_m t) − m a_m t/μ)/(√m a_m^{1−β/2})` with `K` from
/// [`RenewalSpec::fluctuation_constant`].
pub fn scaled_fluctuation(
    spec: &RenewalSpec,
    p: &WorkloadParams,
    seed: u64,
    n_reps: usize,
) -> Result<FluctuationRun> {
    let warning = p.validate(spec)?;
    let grid = p.grid()?;
    let mu = spec.mean();
    let m = p.m as f64;
    let scale = spec.fluctuation_constant() / (m.sqrt() * p.a_m.powf(1.0 - spec.beta / 2.0));
    let paths = (0..n_reps as u64)
        .into_par_iter()
        .map(|rep| {
            let mut total = vec![0.0; grid.len()];
            for k in 0..p.m {
                let c = component_counts(spec, p, &grid, seed, rep, k);
                for (t, x) in total.iter_mut().zip(c) {
                    *t += x;
                }
            }
            let values = grid
                .points()
                .iter()
                .zip(&total)
                .map(|(t, w)| scale * (w - m * p.a_m * t / mu))
                .collect();
            SamplePath::new(grid.clone(), values, PathKind::Fluctuation)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FluctuationRun {
        paths,
        hurst: spec.hurst(),
        warning,
    })
}

// ---------------------------------------------------------------------------
// Semi-Markov agents

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentStart {
    /// Time-stationary state and residual sojourn.
    Stationary,
    /// Fresh sojourn in the given state.
    State(usize),
}

/// Agents whose trading mood is a semi-Markov process on `states`. The idle
/// state `0` has Pareto sojourns with tail `(1 + t/s)^{−α}`, active states
/// have exponential sojourns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub states: Vec<f64>,
    /// Jump chain `p_ij`.
    pub transitions: Vec<Vec<f64>>,
    pub alpha: f64,
    #[serde(default = "unit")]
    pub idle_scale: f64,
    /// Exponential rate per state; the idle entry is ignored.
    pub active_rates: Vec<f64>,
    #[serde(default = "stationary_start")]
    pub start: AgentStart,
}

fn stationary_start() -> AgentStart {
    AgentStart::Stationary
}

impl AgentSpec {
    /// Moods `{0, +1, −1}` with a mild buying bias.
    pub fn standard(alpha: f64) -> Self {
        Self {
            states: vec![0.0, 1.0, -1.0],
            transitions: vec![
                vec![0.0, 0.6, 0.4],
                vec![0.5, 0.0, 0.5],
                vec![0.5, 0.5, 0.0],
            ],
            alpha,
            idle_scale: 1.0,
            active_rates: vec![0.0, 1.0, 1.0],
            start: AgentStart::Stationary,
        }
    }

    pub fn idle_index(&self) -> Option<usize> {
        self.states.iter().position(|&x| x == 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.states.len();
        let idle = self
            .idle_index()
            .ok_or_else(|| Error::Spec("mood states must contain 0".into()))?;
        if k < 2 || self.transitions.len() != k || self.active_rates.len() != k {
            return Err(Error::Spec(
                "states, transition rows and rates must have equal length ≥ 2".into(),
            ));
        }
        for (i, row) in self.transitions.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Spec(format!("transition row {i} has {} entries", row.len())));
            }
            if row.iter().enumerate().any(|(j, &p)| !(p >= 0.0) || (i != j && p <= 0.0)) {
                return Err(Error::Spec(format!(
                    "row {i} needs p_ij > 0 off the diagonal and p_ii ≥ 0"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::Spec(format!("transition row {i} sums to {sum}")));
            }
        }
        if !(self.alpha > 1.0 && self.alpha < 2.0) {
            return Err(Error::Domain(format!("α must lie in (1,2), got {}", self.alpha)));
        }
        if !(self.idle_scale > 0.0) {
            return Err(Error::Domain("idle scale must be positive".into()));
        }
        if (0..k).any(|i| i != idle && !(self.active_rates[i] > 0.0)) {
            return Err(Error::Domain("active states need positive sojourn rates".into()));
        }
        if let AgentStart::State(i) = self.start {
            if i >= k {
                return Err(Error::Spec(format!("start state {i} out of range")));
            }
        }
        Ok(())
    }

    /// `H = (3 − α)/2`.
    pub fn hurst(&self) -> f64 {
        (3.0 - self.alpha) / 2.0
    }

    /// `L = s^α` in the idle tail `~ L t^{−α}`.
    pub fn tail_constant(&self) -> f64 {
        self.idle_scale.powf(self.alpha)
    }

    pub fn mean_sojourns(&self) -> Vec<f64> {
        let idle = self.idle_index();
        (0..self.states.len())
            .map(|i| {
                if Some(i) == idle {
                    self.idle_scale / (self.alpha - 1.0)
                } else {
                    1.0 / self.active_rates[i]
                }
            })
            .collect()
    }

    /// Stationary law of the jump chain.
    pub fn embedded_stationary(&self) -> Result<Vec<f64>> {
        stationary_distribution(&self.transitions)
    }

    /// Fraction of time spent in each state.
    pub fn time_stationary(&self) -> Result<Vec<f64>> {
        let pi = self.embedded_stationary()?;
        let w: Vec<f64> = pi.iter().zip(self.mean_sojourns()).map(|(p, m)| p * m).collect();
        let total: f64 = w.iter().sum();
        Ok(w.into_iter().map(|x| x / total).collect())
    }

    /// Long-run mean mood `μ`.
    pub fn mean_mood(&self) -> Result<f64> {
        Ok(self
            .time_stationary()?
            .iter()
            .zip(&self.states)
            .map(|(w, x)| w * x)
            .sum())
    }

    fn sojourn(&self, rng: &mut ChaCha8Rng, state: usize, residual: bool) -> f64 {
        let u: f64 = rng.random();
        if self.states[state] == 0.0 {
            let tail = if residual { self.alpha - 1.0 } else { self.alpha };
            self.idle_scale * ((1.0 - u).powf(-1.0 / tail) - 1.0)
        } else {
            -(1.0 - u).ln() / self.active_rates[state]
        }
    }
}

fn pick(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Solves `π P = π`, `Σπ = 1` by Gaussian elimination.
pub fn stationary_distribution(p: &[Vec<f64>]) -> Result<Vec<f64>> {
    let k = p.len();
    // rows: equations Σ_i π_i (P_ij − δ_ij) = 0 for j < k−1, then Σπ = 1
    let mut a: Vec<Vec<f64>> = (0..k)
        .map(|j| {
            let mut row: Vec<f64> = if j + 1 < k {
                (0..k).map(|i| p[i][j] - if i == j { 1.0 } else { 0.0 }).collect()
            } else {
                vec![1.0; k]
            };
            row.push(if j + 1 < k { 0.0 } else { 1.0 });
            row
        })
        .collect();
    for col in 0..k {
        let piv = (col..k)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .expect("non-empty");
        if a[piv][col].abs() < 1e-14 {
            return Err(Error::Spec("transition matrix has no unique stationary law".into()));
        }
        a.swap(col, piv);
        for r in 0..k {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=k {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    Ok((0..k).map(|i| a[i][k] / a[i][i]).collect())
}

/// Population size and scaling of an agent experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentParams {
    pub n_agents: usize,
    /// Time-scale parameter `ε`: agents are simulated over `[0, T/ε]`.
    pub eps: f64,
    pub horizon: f64,
    pub steps: usize,
}

/// The normalized market imbalance of one replication.
#[derive(Debug, Clone)]
pub struct AgentRun {
    /// `(ε Xⁿ_{t/ε} − μnt)/(ε^{1−H}√(nL))`.
    pub path: SamplePath,
    /// Jump counts `i → j` over all agents.
    pub transitions: Vec<Vec<u64>>,
    pub mean_mood: f64,
}

struct AgentTrace {
    integrated: Vec<f64>,
    transitions: Vec<Vec<u64>>,
}

fn simulate_agent(spec: &AgentSpec, times: &[f64], rng: &mut ChaCha8Rng) -> AgentTrace {
    let k = spec.states.len();
    let horizon = *times.last().expect("grid is non-empty");
    let mut transitions = vec![vec![0u64; k]; k];
    let mut integrated = Vec::with_capacity(times.len());
    let (mut state, residual) = match spec.start {
        AgentStart::Stationary => {
            let w = spec.time_stationary().expect("validated spec");
            (pick(rng, &w), true)
        }
        AgentStart::State(i) => (i, false),
    };
    let mut start = 0.0;
    let mut end = spec.sojourn(rng, state, residual);
    let mut acc = 0.0;
    let mut next_time = 0;
    loop {
        while next_time < times.len() && times[next_time] <= end {
            integrated.push(acc + spec.states[state] * (times[next_time] - start));
            next_time += 1;
        }
        if next_time == times.len() || end > horizon {
            break;
        }
        acc += spec.states[state] * (end - start);
        let next = pick(rng, &spec.transitions[state]);
        transitions[state][next] += 1;
        state = next;
        start = end;
        end = start + spec.sojourn(rng, state, false);
    }
    AgentTrace {
        integrated,
        transitions,
    }
}

/// Replication `rep` of the agent model.
pub fn simulate_agents(spec: &AgentSpec, p: &AgentParams, seed: u64, rep: u64) -> Result<AgentRun> {
    spec.validate()?;
    let mu = spec.mean_mood()?;
    let scale: f64 = spec
        .time_stationary()?
        .iter()
        .zip(&spec.states)
        .map(|(w, x)| w * x.abs())
        .sum();
    if mu.abs() <= 1e-12 * scale {
        return Err(Error::Spec(
            "agent model requires a nonzero mean trading mood μ".into(),
        ));
    }
    if p.n_agents == 0 || p.steps == 0 {
        return Err(Error::Usage("need at least one agent and one grid step".into()));
    }
    if !(p.eps > 0.0 && p.horizon > 0.0) {
        return Err(Error::Domain("ε and the horizon must be positive".into()));
    }
    let grid = Arc::new(TimeGrid::uniform(p.steps, p.horizon)?);
    let fast: Vec<f64> = grid.points().iter().map(|t| t / p.eps).collect();
    let traces: Vec<AgentTrace> = (0..p.n_agents as u64)
        .into_par_iter()
        .map(|a| {
            let mut rng = stream(seed, Domain::Agents, component_index(rep, a));
            simulate_agent(spec, &fast, &mut rng)
        })
        .collect();
    let k = spec.states.len();
    let mut total = vec![0.0; grid.len()];
    let mut transitions = vec![vec![0u64; k]; k];
    for t in &traces {
        for (x, y) in total.iter_mut().zip(&t.integrated) {
            *x += y;
        }
        for (row, r) in transitions.iter_mut().zip(&t.transitions) {
            for (x, y) in row.iter_mut().zip(r) {
                *x += y;
            }
        }
    }
    let n = p.n_agents as f64;
    let h = spec.hurst();
    let norm = p.eps.powf(1.0 - h) * (n * spec.tail_constant()).sqrt();
    let values = grid
        .points()
        .iter()
        .zip(&total)
        .map(|(t, x)| (p.eps * x - mu * n * t) / norm)
        .collect();
    Ok(AgentRun {
        path: SamplePath::new(grid, values, PathKind::Fluctuation)?,
        transitions,
        mean_mood: mu,
    })
}

/// Empirical jump probabilities with binomial standard errors.
pub fn transition_frequencies(counts: &[Vec<u64>]) -> Vec<Vec<(f64, f64)>> {
    counts
        .iter()
        .map(|row| {
            let n: u64 = row.iter().sum();
            row.iter()
                .map(|&c| {
                    if n == 0 {
                        return (f64::NAN, f64::NAN);
                    }
                    let p = c as f64 / n as f64;
                    (p, (p * (1.0 - p) / n as f64).sqrt())
                })
                .collect()
        })
        .collect()
}

/// The unknown limit constant fitted by variance matching at grid index
/// `at`, so that `Var ≈ c² t^{2H}` there.
pub fn fit_constant(paths: &[SamplePath], at: usize, h: f64) -> f64 {
    let xs: Vec<f64> = paths.iter().map(|p| p.values()[at]).collect();
    let t = paths[0].times()[at];
    (crate::stats::variance(&xs) / t.powf(2.0 * h)).sqrt()
}

/// Correlation between the empirical covariance of `paths` at grid
/// indices `at` and the fBm covariance with Hurst index `h` there.
pub fn covariance_shape(paths: &[SamplePath], at: &[usize], h: f64) -> Result<f64> {
    let h = crate::fbm::HurstIndex::new(h)?;
    let rows: Vec<Vec<f64>> = paths
        .iter()
        .map(|p| at.iter().map(|&i| p.values()[i]).collect())
        .collect();
    let empirical = crate::stats::covariance_matrix(&rows);
    let times: Vec<f64> = at.iter().map(|&i| paths[0].times()[i]).collect();
    let exact = times
        .iter()
        .map(|&t| {
            times
                .iter()
                .map(|&s| crate::fbm::fbm_covariance(t, s, h))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(crate::stats::shape_correlation(&empirical, &exact))
}

/// `k` grid indices spread evenly over `1..=steps`.
pub fn shape_indices(steps: usize, k: usize) -> Vec<usize> {
    (1..=k).map(|i| (i * steps) / k).collect()
}

/// `Π (1 + ΔY)` along a fluctuation path.
pub fn linear_price(path: &SamplePath) -> Vec<f64> {
    let mut out = Vec::with_capacity(path.values().len());
    out.push(1.0);
    for w in path.values().windows(2) {
        let last = *out.last().expect("non-empty");
        out.push(last * (1.0 + w[1] - w[0]));
    }
    out
}
