//! The instrumental-variable simulation design and the replication study.

mod dgp;
mod study;

pub use dgp::{generate_dataset, oracle_late, DgpParams, Latents, OracleLate, Propensity, DIM, MIN_ORACLE_DRAWS};
pub use study::{
    run_study, run_study_with, summarize, Method, Replication, ScenarioConfig, SimRow, StudyResult, TableRow,
    DEFAULT_ORACLE_DRAWS, MAX_FAILURE_RATE,
};
