use thiserror::Error;

use crate::{cmfc::CmfcError, cohort::CohortError, fc::FcError, gcn::GcnError, khop::KHopError, scoring::ScoringError, tree::TreeError};

/// Crate-level error. Each variant carries the failing module so callers can
/// report `module: message` on a single line.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cohort_io: {0}")]
    Cohort(#[from] CohortError),
    #[error("fc_builder: {0}")]
    Fc(#[from] FcError),
    #[error("khop_operator: {0}")]
    KHop(#[from] KHopError),
    #[error("age_gcn: {0}")]
    Gcn(#[from] GcnError),
    #[error("cmfc_loss: {0}")]
    Cmfc(#[from] CmfcError),
    #[error("node_scoring: {0}")]
    Scoring(#[from] ScoringError),
    #[error("brain_tree: {0}")]
    Tree(#[from] TreeError),
}

impl Error {
    /// Short module tag, e.g. `"fc_builder"`.
    pub fn module(&self) -> &'static str {
        match self {
            Error::Cohort(_) => "cohort_io",
            Error::Fc(_) => "fc_builder",
            Error::KHop(_) => "khop_operator",
            Error::Gcn(_) => "age_gcn",
            Error::Cmfc(_) => "cmfc_loss",
            Error::Scoring(_) => "node_scoring",
            Error::Tree(_) => "brain_tree",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
