use thiserror::Error;

/// Process exit codes.
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Core(#[from] cctmpc::Error),
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use cctmpc::Error as E;
        match self {
            CliError::Usage(_) | CliError::Io(_) => EXIT_USAGE,
            CliError::Invariant(_) => EXIT_INVARIANT,
            CliError::Core(e) => match e {
                E::InitialTemplateInfeasible
                | E::InfeasibleTemplate
                | E::AllCutsInfeasible
                | E::EmptyPolytope
                | E::EmptyDisturbanceSet
                | E::AssumptionViolated(_) => EXIT_INFEASIBLE,
                E::Solver(_) | E::SingularT => EXIT_NUMERICAL,
                E::InfeasibleControlLaw => EXIT_INVARIANT,
                _ => EXIT_USAGE,
            },
        }
    }
}
