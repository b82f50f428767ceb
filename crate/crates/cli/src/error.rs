use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] fraclab::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 for bad input, 3 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use fraclab::Error as E;
        match self {
            Self::Usage(_) => 2,
            Self::Core(E::Usage(_) | E::Domain(_) | E::Spec(_) | E::Validation(_)) => 2,
            Self::Core(E::Numerical(_) | E::Strategy { .. }) => 3,
            _ => 1,
        }
    }
}
