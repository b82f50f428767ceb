use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fraclab::aggregation::AgentParams;
use fraclab::fbm::HurstIndex;
use fraclab::market::ModelSpec;
use fraclab_cli::config::{
    resolve_seed, CostParams, Experiment, ExperimentConfig, Level, StrategyKind, SEED_ENV,
};
use fraclab_cli::{run_with_threads, validate, CliError, Severity};

#[derive(Parser)]
#[command(name = "fraclab", version, about = "Fractional market simulation laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its report
    Run(Flags),
    /// Check a configuration without running it
    Validate(Flags),
}

#[derive(Args)]
struct Flags {
    /// simulate | qv | arbitrage | hedge | transaction-costs | tree | wick-tree | aggregate | agents
    experiment: Option<String>,
    /// JSON configuration; flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = ["bs", "fbs", "mfbs"])]
    model: Option<String>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    s0: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    nu: Option<f64>,
    /// Dyadic level, or `auto` for ingested data
    #[arg(long, value_parser = Level::parse)]
    level: Option<Level>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    horizon: Option<f64>,
    /// Rebalancing dates or tree depth
    #[arg(long)]
    n: Option<usize>,
    /// Overrides FRACLAB_SEED and the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for report.json and CSV tables (stdout otherwise)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum)]
    strategy: Option<StrategyKind>,
    #[arg(long)]
    strike: Option<f64>,
    #[arg(long)]
    k0: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Local-time bandwidth
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// `time,price` CSV input
    #[arg(long)]
    input: Option<PathBuf>,
    /// Renewal tail index
    #[arg(long)]
    beta: Option<f64>,
    /// Number of agents
    #[arg(long)]
    agents: Option<usize>,
    /// Idle sojourn tail exponent of the agent model
    #[arg(long)]
    agent_alpha: Option<f64>,
    /// Time-scale parameter of the agent model
    #[arg(long)]
    agent_eps: Option<f64>,
}

fn model_with(base: ModelSpec, f: &Flags) -> Result<ModelSpec, CliError> {
    let h_default = base
        .hurst()
        .unwrap_or(HurstIndex::new(0.75).expect("valid"));
    let mut m = match f.model.as_deref() {
        Some("bs") if base.name() != "bs" => ModelSpec::bs(),
        Some("fbs") if base.name() != "fbs" => ModelSpec::fbs(h_default),
        Some("mfbs") if base.name() != "mfbs" => ModelSpec::mfbs(h_default),
        _ => base,
    };
    let h = f.h.map(HurstIndex::new).transpose()?;
    match &mut m {
        ModelSpec::Bs { s0, mu, sigma } => {
            if h.is_some() {
                return Err(CliError::Usage("--h has no meaning for the bs model".into()));
            }
            *s0 = f.s0.unwrap_or(*s0);
            *mu = f.mu.unwrap_or(*mu);
            *sigma = f.sigma.unwrap_or(*sigma);
        }
        ModelSpec::Fbs { s0, mu, nu, h: hh } => {
            *s0 = f.s0.unwrap_or(*s0);
            *mu = f.mu.unwrap_or(*mu);
            *nu = f.nu.unwrap_or(*nu);
            *hh = h.unwrap_or(*hh);
        }
        ModelSpec::Mfbs { s0, mu, sigma, nu, h: hh } => {
            *s0 = f.s0.unwrap_or(*s0);
            *mu = f.mu.unwrap_or(*mu);
            *sigma = f.sigma.unwrap_or(*sigma);
            *nu = f.nu.unwrap_or(*nu);
            *hh = h.unwrap_or(*hh);
        }
    }
    Ok(m)
}

fn build_config(f: &Flags) -> Result<ExperimentConfig, CliError> {
    let mut c = match &f.config {
        Some(p) => {
            let mut c = ExperimentConfig::from_json(&std::fs::read_to_string(p)?)?;
            if let Some(e) = &f.experiment {
                c.experiment = Experiment::parse(e)?;
            }
            c
        }
        None => {
            let e = f.experiment.as_deref().ok_or_else(|| {
                CliError::Usage("name an experiment or pass --config".into())
            })?;
            ExperimentConfig::new(Experiment::parse(e)?)
        }
    };
    c.model = model_with(c.model, f)?;
    c.level = f.level.unwrap_or(c.level);
    c.paths = f.paths.unwrap_or(c.paths);
    c.horizon = f.horizon.unwrap_or(c.horizon);
    c.n = f.n.or(c.n);
    c.strategy = f.strategy.or(c.strategy);
    c.strike = f.strike.or(c.strike);
    c.max_steps = f.max_steps.or(c.max_steps);
    c.input = f.input.clone().or(c.input.take());
    c.out = f.out.clone().or(c.out.take());
    c.threads = f.threads.or(c.threads);
    if f.k0.is_some() || f.alpha.is_some() || f.eps.is_some() {
        let base = c.costs();
        c.costs = Some(CostParams {
            k0: f.k0.unwrap_or(base.k0),
            alpha: f.alpha.unwrap_or(base.alpha),
            eps: f.eps.or(base.eps),
        });
    }
    if let Some(beta) = f.beta {
        c.renewal = Some(fraclab::aggregation::RenewalSpec {
            beta,
            ..c.renewal()
        });
    }
    if let Some(a) = f.agent_alpha {
        let mut spec = c.agents();
        spec.alpha = a;
        c.agents = Some(spec);
    }
    if f.agents.is_some() || f.agent_eps.is_some() {
        let base = c.agent_params();
        c.agent_params = Some(AgentParams {
            n_agents: f.agents.unwrap_or(base.n_agents),
            eps: f.agent_eps.unwrap_or(base.eps),
            ..base
        });
    }
    let env = std::env::var(SEED_ENV).ok();
    c.seed = resolve_seed(c.seed, f.seed, env.as_deref())?;
    Ok(c)
}

fn run(cmd: Command) -> Result<ExitCode, CliError> {
    match cmd {
        Command::Run(f) => {
            let c = build_config(&f)?;
            let outcome = run_with_threads(&c)?;
            match &c.out {
                Some(dir) => {
                    outcome.write_to_dir(dir)?;
                    for w in &outcome.report.warnings {
                        eprintln!("warning: {w}");
                    }
                    eprintln!("wrote {}", dir.join("report.json").display());
                }
                None => println!("{}", outcome.report.to_json()?),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate(f) => {
            let c = build_config(&f)?;
            let findings = validate(&c);
            println!("{}", serde_json::to_string_pretty(&findings)?);
            if findings.iter().any(|x| x.severity == Severity::Error) {
                Ok(ExitCode::from(2))
            } else {
                Ok(ExitCode::SUCCESS)
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
