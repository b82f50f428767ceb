use std::path::PathBuf;

use fraclab::aggregation::{AgentParams, AgentSpec, RenewalSpec, WorkloadParams};
use fraclab::fbm::HurstIndex;
use fraclab::market::ModelSpec;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "FRACLAB_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Simulate,
    Qv,
    Arbitrage,
    Hedge,
    TransactionCosts,
    Tree,
    WickTree,
    Aggregate,
    Agents,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Qv => "qv",
            Self::Arbitrage => "arbitrage",
            Self::Hedge => "hedge",
            Self::TransactionCosts => "transaction-costs",
            Self::Tree => "tree",
            Self::WickTree => "wick-tree",
            Self::Aggregate => "aggregate",
            Self::Agents => "agents",
        }
    }

    pub fn parse(name: &str) -> Result<Self, CliError> {
        <Self as clap::ValueEnum>::from_str(name, false)
            .map_err(|_| CliError::Usage(format!("unknown experiment `{name}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    Momentum,
    HeatKernel,
    ZeroQv,
    Doubling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AutoLevel {
    #[serde(rename = "auto")]
    Auto,
}

/// A dyadic level, or `auto` for the full grid of ingested data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Level {
    Fixed(u32),
    Auto(AutoLevel),
}

impl Level {
    pub fn parse(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(Self::Auto(AutoLevel::Auto));
        }
        s.parse()
            .map(Self::Fixed)
            .map_err(|_| format!("level must be a nonnegative integer or `auto`, got `{s}`"))
    }

    pub fn fixed(self) -> Option<u32> {
        match self {
            Self::Fixed(l) => Some(l),
            Self::Auto(_) => None,
        }
    }
}

impl Default for Level {
    fn default() -> Self {
        Self::Fixed(10)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostParams {
    pub k0: f64,
    pub alpha: f64,
    /// Local-time bandwidth; defaults to `steps^{−1/3}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            k0: 1.0,
            alpha: 0.25,
            eps: None,
        }
    }
}

/// Everything needed to reproduce one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default = "default_model")]
    pub model: ModelSpec,
    #[serde(default)]
    pub level: Level,
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default)]
    pub seed: u64,
    /// Rebalancing dates or tree depth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<StrategyKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strike: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub costs: Option<CostParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub renewal: Option<RenewalSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workload: Option<WorkloadParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agents: Option<AgentSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_params: Option<AgentParams>,
    /// `time,price` CSV to analyse instead of simulating.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

fn default_model() -> ModelSpec {
    ModelSpec::fbs(HurstIndex::new(0.75).expect("valid"))
}

fn default_paths() -> usize {
    100
}

fn default_horizon() -> f64 {
    1.0
}

impl ExperimentConfig {
    pub fn new(experiment: Experiment) -> Self {
        Self {
            experiment,
            model: default_model(),
            level: Level::default(),
            paths: default_paths(),
            horizon: default_horizon(),
            seed: 0,
            n: None,
            strategy: None,
            strike: None,
            costs: None,
            max_steps: None,
            renewal: None,
            workload: None,
            agents: None,
            agent_params: None,
            input: None,
            out: None,
            threads: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn strategy(&self) -> StrategyKind {
        self.strategy.unwrap_or(StrategyKind::Momentum)
    }

    pub fn costs(&self) -> CostParams {
        self.costs.unwrap_or_default()
    }

    pub fn renewal(&self) -> RenewalSpec {
        self.renewal.unwrap_or(RenewalSpec {
            beta: 0.6,
            time_unit: 1.0,
        })
    }

    pub fn workload(&self) -> WorkloadParams {
        self.workload.unwrap_or(WorkloadParams {
            m: 500,
            a_m: 50.0,
            horizon: self.horizon,
            steps: 64,
        })
    }

    pub fn agents(&self) -> AgentSpec {
        self.agents.clone().unwrap_or_else(|| AgentSpec::standard(1.5))
    }

    pub fn agent_params(&self) -> AgentParams {
        self.agent_params.unwrap_or(AgentParams {
            n_agents: 200,
            eps: 0.01,
            horizon: self.horizon,
            steps: 8,
        })
    }

    /// Number of steps for experiments on a dyadic grid, or the tree depth.
    pub fn steps(&self) -> Option<usize> {
        self.n
            .or_else(|| self.level.fixed().and_then(|l| 1usize.checked_shl(l)))
    }

    /// The Hurst index of the configured model, or ½ for Black–Scholes.
    pub fn hurst(&self) -> f64 {
        self.model.hurst().map_or(0.5, |h| h.value())
    }
}

/// Applies the seed precedence flag > `FRACLAB_SEED` > config.
pub fn resolve_seed(
    config_seed: u64,
    flag: Option<u64>,
    env: Option<&str>,
) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(v) = env {
        return v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV} must be an integer, got `{v}`")));
    }
    Ok(config_seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_json(r#"{"experiment":"simulate","pathz":3}"#);
        assert!(matches!(err, Err(CliError::Usage(_))));
    }

    #[test]
    fn levels_parse() {
        let c = ExperimentConfig::from_json(r#"{"experiment":"qv","level":"auto"}"#).unwrap();
        assert_eq!(c.level.fixed(), None);
        let c = ExperimentConfig::from_json(r#"{"experiment":"qv","level":12}"#).unwrap();
        assert_eq!(c.level, Level::Fixed(12));
        assert!(Level::parse("x").is_err());
    }

    #[test]
    fn seed_precedence() {
        assert_eq!(resolve_seed(1, Some(2), Some("3")).unwrap(), 2);
        assert_eq!(resolve_seed(1, None, Some("3")).unwrap(), 3);
        assert_eq!(resolve_seed(1, None, None).unwrap(), 1);
        assert!(resolve_seed(1, None, Some("x")).is_err());
    }

    #[test]
    fn config_round_trips() {
        let mut c = ExperimentConfig::new(Experiment::TransactionCosts);
        c.costs = Some(CostParams::default());
        c.n = Some(64);
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), c);
    }
}
