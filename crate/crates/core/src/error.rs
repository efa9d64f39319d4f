use thiserror::Error;

use crate::qp::SolveStatus;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("polytope is empty")]
    EmptyPolytope,
    #[error("polytope is unbounded")]
    Unbounded,
    #[error("degenerate facets: {0}")]
    DegenerateFacets(String),
    #[error("vertex {vertex} has {active} active facets, expected {expected}")]
    NotSimple { vertex: usize, active: usize, expected: usize },
    #[error("cut does not separate the target vertex from the others")]
    CutNotSeparating,
    #[error("cut passes through vertex {0}")]
    CutThroughVertex(usize),
    #[error("vertex cannot be separated: support {zeta} does not exceed {best_other}")]
    CannotSeparate { zeta: f64, best_other: f64 },
    #[error("first set is not contained in the second (excess distance {0:e})")]
    NotNested(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("disturbance set is empty")]
    EmptyDisturbanceSet,
    #[error("no invariant set exists for this template and system")]
    InfeasibleTemplate,
    #[error("initial template admits no feasible size program")]
    InitialTemplateInfeasible,
    #[error("every refinement candidate was infeasible")]
    AllCutsInfeasible,
    #[error("template transformation became singular")]
    SingularT,
    #[error("stability condition Q + γ²R ⪯ R is violated (min eigenvalue {0:e})")]
    StabilityConditionViolated(f64),
    #[error("assumption violated: {0}")]
    AssumptionViolated(String),
    #[error("invalid vertex index set: {0}")]
    InvalidIndexSet(String),
    #[error("control law problem infeasible although the tube problem was solved")]
    InfeasibleControlLaw,
    #[error("optimization failed with status {0:?}")]
    Solver(SolveStatus),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
