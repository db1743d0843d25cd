use std::path::Path;

use thiserror::Error;

use tsfl::datagen::DataError;
use tsfl::estimate::EstimateError;
use tsfl::fedsim::SimError;
use tsfl::plan::PlanError;
use tsfl::profiles::ProfileError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 2 divergence, 3 configuration, 4 uninformative probes, 5 infeasible
    /// precision, 1 anything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) | Self::Data(_) | Self::Profile(_) => 3,
            Self::Sim(e) | Self::Estimate(EstimateError::Sim(e)) => sim_code(e),
            Self::Estimate(EstimateError::NotInformative(_)) => 4,
            Self::Estimate(EstimateError::Invalid(_) | EstimateError::Profile(_)) => 3,
            Self::Plan(PlanError::Infeasible { .. } | PlanError::NoFeasibleSubset { .. }) => 5,
            Self::Plan(PlanError::Invalid(_)) => 3,
            Self::Io { .. } | Self::Estimate(EstimateError::ProbeFailed { .. }) => 1,
        }
    }
}

fn sim_code(e: &SimError) -> u8 {
    match e {
        SimError::Divergence { .. } => 2,
        SimError::Profile(_) | SimError::Learner(_) | SimError::InvalidConfig(_) => 3,
        SimError::StalenessDeadlock => 3,
    }
}
