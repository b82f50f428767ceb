use fraclab::market::ModelSpec;
use fraclab::tree::{MAX_EXHAUSTIVE_DEPTH, MAX_EXPANSION_DEPTH, MAX_WALK_STEPS};
use serde::{Deserialize, Serialize};

use crate::config::{Experiment, ExperimentConfig, Level, StrategyKind};

/// Largest dyadic level accepted for simulated grids.
pub const MAX_LEVEL: u32 = 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    pub field: String,
    pub message: String,
}

struct Findings(Vec<Finding>);

impl Findings {
    fn error(&mut self, field: &str, message: impl Into<String>) {
        self.0.push(Finding {
            severity: Severity::Error,
            field: field.into(),
            message: message.into(),
        });
    }

    fn warning(&mut self, field: &str, message: impl Into<String>) {
        self.0.push(Finding {
            severity: Severity::Warning,
            field: field.into(),
            message: message.into(),
        });
    }

    fn core(&mut self, field: &str, e: fraclab::Error) {
        let msg = match e {
            fraclab::Error::Spec(m)
            | fraclab::Error::Domain(m)
            | fraclab::Error::Usage(m)
            | fraclab::Error::Validation(m) => m,
            other => other.to_string(),
        };
        self.error(field, msg);
    }
}

fn fractional_above_half(model: &ModelSpec) -> bool {
    matches!(model, ModelSpec::Fbs { h, .. } if h.value() > 0.5)
}

/// Static checks of a configuration. Nothing is simulated.
pub fn validate(c: &ExperimentConfig) -> Vec<Finding> {
    let mut f = Findings(Vec::new());
    if c.paths == 0 {
        f.error("paths", "paths must be at least 1");
    }
    if !(c.horizon > 0.0 && c.horizon.is_finite()) {
        f.error("horizon", format!("horizon must be positive, got {}", c.horizon));
    }
    if c.threads == Some(0) {
        f.error("threads", "threads must be at least 1");
    }
    match c.level {
        Level::Fixed(l) if l > MAX_LEVEL => {
            f.error("level", format!("level {l} exceeds the cap {MAX_LEVEL}"))
        }
        Level::Auto(_) if !(c.experiment == Experiment::Qv && c.input.is_some()) => f.error(
            "level",
            "level `auto` is only meaningful for qv on an --input series",
        ),
        _ => {}
    }
    let uses_model = match c.experiment {
        Experiment::Simulate | Experiment::Hedge | Experiment::TransactionCosts => true,
        Experiment::Qv => c.input.is_none(),
        Experiment::Arbitrage => c.strategy() != StrategyKind::Doubling,
        _ => false,
    };
    if uses_model {
        if let Err(e) = c.model.validate() {
            f.core("model", e);
        }
    }
    match c.experiment {
        Experiment::Simulate => {
            let points = c.steps().unwrap_or(0).saturating_add(1);
            if points.saturating_mul(c.paths) > 50_000_000 {
                f.warning("paths", "the paths table will exceed 5e7 rows");
            }
        }
        Experiment::Qv => {
            if let Some(p) = &c.input {
                if !p.exists() {
                    f.error("input", format!("input file {} does not exist", p.display()));
                }
            }
        }
        Experiment::Arbitrage => match c.strategy() {
            StrategyKind::Momentum => {
                if c.model.hurst().is_none() {
                    f.error("model", "momentum strategy needs a fractional model");
                } else if c.hurst() < 0.5 {
                    f.warning("model", "momentum strategy with H < 1/2 is experimental");
                }
                if c.steps().is_some_and(|n| n < 3) {
                    f.error("n", "momentum strategy needs n ≥ 3");
                }
            }
            StrategyKind::HeatKernel => {
                if !matches!(c.model, ModelSpec::Bs { sigma, mu, .. } if sigma == 1.0 && mu == 0.0)
                {
                    f.error("model", "heat-kernel strategy needs the bs model with sigma = 1, mu = 0");
                }
            }
            StrategyKind::ZeroQv => {
                if !fractional_above_half(&c.model) {
                    f.error("model", "zero-QV strategy needs the fbs model with H > 1/2");
                }
            }
            StrategyKind::Doubling => {
                if c.max_steps == Some(0) {
                    f.error("max_steps", "doubling needs max_steps ≥ 1");
                }
                if c.max_steps.is_some_and(|m| m > 1000) {
                    f.error("max_steps", "max_steps above 1000 underflows the grid");
                }
            }
        },
        Experiment::Hedge => {
            if !fractional_above_half(&c.model) {
                f.error("model", "convex hedge needs the fbs model with H > 1/2");
            }
            if c.strike.is_some_and(|k| !(k > 0.0)) {
                f.error("strike", "strike must be positive");
            }
        }
        Experiment::TransactionCosts => {
            let costs = c.costs();
            if !(costs.alpha > 0.0) {
                f.error("costs.alpha", format!("transaction costs require α > 0, got {}", costs.alpha));
            }
            if !(costs.k0 >= 0.0) {
                f.error("costs.k0", format!("transaction costs require k0 ≥ 0, got {}", costs.k0));
            }
            if costs.eps.is_some_and(|e| !(e > 0.0)) {
                f.error("costs.eps", "bandwidth must be positive");
            }
            if !matches!(c.model, ModelSpec::Fbs { .. }) {
                f.error("model", "transaction-cost experiments use the fbs model");
            } else if !fractional_above_half(&c.model) {
                f.warning("model", "cost limits are stated for H > 1/2");
            }
            if c.horizon != 1.0 {
                f.error("horizon", "transaction-cost experiments run on [0,1]");
            }
            if let (Some(level), Some(n)) = (c.level.fixed(), c.n) {
                if n == 0 || (1usize << level.min(MAX_LEVEL)) % n != 0 {
                    f.error("n", format!("n = {n} must divide the 2^{level} grid steps"));
                }
            }
        }
        Experiment::Tree => {
            let n = c.n.unwrap_or(16);
            if c.hurst() < 0.5 {
                f.error("model", "tree kernels need H ≥ 1/2");
            }
            if n == 0 || n > MAX_WALK_STEPS {
                f.error("n", format!("tree depth must be in 1..={MAX_WALK_STEPS}"));
            } else if n > MAX_EXHAUSTIVE_DEPTH {
                f.warning(
                    "n",
                    format!(
                        "depth {n} exceeds the exhaustive cap {MAX_EXHAUSTIVE_DEPTH}; \
                         only the arbitrage search along the all-up path runs"
                    ),
                );
            }
        }
        Experiment::WickTree => {
            let n = c.n.unwrap_or(10);
            if c.hurst() < 0.5 {
                f.error("model", "tree kernels need H ≥ 1/2");
            }
            if n == 0 || n > MAX_EXPANSION_DEPTH {
                f.error(
                    "n",
                    format!("Wick tree depth {n} is outside the cap 1..={MAX_EXPANSION_DEPTH}"),
                );
            } else if n > MAX_EXHAUSTIVE_DEPTH {
                f.warning(
                    "n",
                    format!("depth {n} exceeds the exhaustive cap {MAX_EXHAUSTIVE_DEPTH}; leaves are skipped"),
                );
            }
        }
        Experiment::Aggregate => {
            let spec = c.renewal();
            match c.workload().validate(&spec) {
                Ok(Some(w)) => f.warning("workload", w),
                Ok(None) => {}
                Err(e) => f.core("workload", e),
            }
        }
        Experiment::Agents => {
            let spec = c.agents();
            match spec.validate() {
                Err(e) => f.core("agents", e),
                Ok(()) => match spec.mean_mood() {
                    Ok(mu) if mu == 0.0 => {
                        f.error("agents", "agent model requires a nonzero mean trading mood μ")
                    }
                    Err(e) => f.core("agents", e),
                    _ => {}
                },
            }
            let p = c.agent_params();
            if p.n_agents == 0 || p.steps == 0 || !(p.eps > 0.0) || !(p.horizon > 0.0) {
                f.error("agent_params", "need n_agents ≥ 1, steps ≥ 1, eps > 0, horizon > 0");
            }
        }
    }
    f.0
}

pub fn has_errors(findings: &[Finding]) -> bool {
    findings.iter().any(|f| f.severity == Severity::Error)
}
