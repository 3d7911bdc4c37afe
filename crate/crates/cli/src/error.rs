use synthpanel::dgp::DgpError;
use synthpanel::gsc::GscError;
use synthpanel::magnitude::MagnitudeError;
use synthpanel::panel::PanelError;
use synthpanel::placebo::PlaceboError;
use synthpanel::scm::ScmError;
use synthpanel::transform::TransformError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("source unreachable: {0}")]
    SourceUnreachable(String),
    #[error("unknown series code `{0}`")]
    UnknownSeriesCode(String),
    #[error("{failed} of {total} outcome(s) failed: {}", .messages.join("; "))]
    OutcomesFailed { failed: usize, total: usize, code: i32, messages: Vec<String> },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) | CliError::Io(_) | CliError::SourceUnreachable(_) | CliError::UnknownSeriesCode(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::OutcomesFailed { code, .. } => *code,
        }
    }
}

impl From<PanelError> for CliError {
    fn from(e: PanelError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TransformError> for CliError {
    fn from(e: TransformError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ScmError> for CliError {
    fn from(e: ScmError) -> Self {
        match e {
            ScmError::NumericalFailure { .. } => CliError::Numerical(e.to_string()),
            ScmError::Panel(p) => p.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<PlaceboError> for CliError {
    fn from(e: PlaceboError) -> Self {
        match e {
            PlaceboError::Scm(s) => s.into(),
            PlaceboError::Panel(p) => p.into(),
            PlaceboError::InvalidPseudoT0 { .. } => CliError::Config(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<GscError> for CliError {
    fn from(e: GscError) -> Self {
        match e {
            GscError::NonConvergence { .. }
            | GscError::RankDeficient { .. }
            | GscError::CollinearFactors
            | GscError::DegenerateResample { .. } => CliError::Numerical(e.to_string()),
            GscError::InvalidBootstrap(_) | GscError::InvalidFactorRange { .. } => CliError::Config(e.to_string()),
            GscError::Panel(p) => p.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<MagnitudeError> for CliError {
    fn from(e: MagnitudeError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<DgpError> for CliError {
    fn from(e: DgpError) -> Self {
        match e {
            DgpError::Panel(p) => p.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(std::io::Error::other(e.to_string()))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(std::io::Error::other(e.to_string()))
    }
}
