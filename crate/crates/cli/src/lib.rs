//! Experiment runner: configuration, seeding, reports and CSV output.

pub mod config;
pub mod error;
pub mod experiments;
pub mod report;
pub mod validate;

pub use config::{Experiment, ExperimentConfig};
pub use error::CliError;
pub use report::{ExperimentReport, Outcome};
pub use validate::{Finding, Severity};

/// Validates and runs `config`. Warnings become report warnings, errors
/// abort with a usage error.
pub fn run(config: &ExperimentConfig) -> Result<Outcome, CliError> {
    let findings = validate::validate(config);
    if validate::has_errors(&findings) {
        let msg = findings
            .iter()
            .filter(|f| f.severity == Severity::Error)
            .map(|f| format!("{}: {}", f.field, f.message))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(CliError::Usage(msg));
    }
    let mut outcome = experiments::execute(config)?;
    for f in findings {
        outcome.report.warn(f.message);
    }
    Ok(outcome)
}

/// Runs `config` on a dedicated pool when `threads` is set.
pub fn run_with_threads(config: &ExperimentConfig) -> Result<Outcome, CliError> {
    match config.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?
            .install(|| run(config)),
        None => run(config),
    }
}

pub fn validate(config: &ExperimentConfig) -> Vec<Finding> {
    validate::validate(config)
}
