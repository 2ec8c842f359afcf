use thiserror::Error;

/// Errors produced by the inference, baseline and harness layers.
#[derive(Debug, Error)]
pub enum PiicError {
    #[error("index error: {0}")]
    Index(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("factorization failed after jitter {max_jitter:e} (condition estimate {condition:e})")]
    Factorization { max_jitter: f64, condition: f64 },

    #[error("E-step failed at t={t}: {source}")]
    EStep {
        t: usize,
        #[source]
        source: Box<PiicError>,
    },

    #[error("M-step failed at t={t}{}: {message}", .coordinate.map(|p| format!(", p={p}")).unwrap_or_default())]
    MStep {
        t: usize,
        coordinate: Option<usize>,
        message: String,
    },

    #[error("EM iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<PiicError>,
    },

    #[error("ILQG solver: {0}")]
    Solver(String),

    #[error("rollout diverged at step {step}")]
    Divergence { step: usize },

    #[error("invalid configuration:{}", format_issues(.0))]
    Config(Vec<ConfigIssue>),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PiicError>;

/// One problem found in a scenario file, located by its key path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "`{}`: {}", self.path, self.message)
    }
}

fn format_issues(issues: &[ConfigIssue]) -> String {
    issues.iter().map(|i| format!("\n  {i}")).collect()
}

impl PiicError {
    pub(crate) fn at_time(self, t: usize) -> Self {
        PiicError::EStep {
            t,
            source: Box::new(self),
        }
    }
}
