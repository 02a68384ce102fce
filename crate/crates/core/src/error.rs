use thiserror::Error;

/// Pipeline step names used in failure reports and trial records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Step {
    Matchmakers,
    SeparatedParents,
    StagePlan,
    Init,
    Covering,
    Remainder,
    HallMatching,
    Verify,
}

impl std::fmt::Display for Step {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Step::Matchmakers => "matchmakers",
            Step::SeparatedParents => "separated_parents",
            Step::StagePlan => "stage_plan",
            Step::Init => "init",
            Step::Covering => "covering",
            Step::Remainder => "remainder",
            Step::HallMatching => "hall_matching",
            Step::Verify => "verify",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("infeasible parameters: {0}")]
    Infeasible(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("generation failed after {0} retries")]
    RetriesExhausted(usize),

    #[error("graph is not regular")]
    NotRegular,

    #[error("eigensolver did not converge within {0} iterations")]
    NoConvergence(usize),

    #[error("expansion hypothesis violated: {0}")]
    HypothesisViolation(String),

    #[error("stage plan infeasible: {0}")]
    PlanInfeasible(String),

    #[error("embedding failed at step {step}: {reason}")]
    EmbedFailed { step: Step, reason: String },

    #[error("no available neighbor to extend to")]
    DeadEnd,

    #[error("rollback budget of {0} exhausted")]
    RollbackBudget(usize),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("config error in field `{field}`: {msg}")]
    Config { field: &'static str, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
