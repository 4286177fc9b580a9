//! Classroom simulator: scripted personas drive a session so behavior can be
//! checked end to end and reproduced from a seed.

pub mod driver;
pub mod persona;
pub mod runner;
pub mod scenario;
pub mod transcript;
pub mod verify;

pub use driver::{Driver, DriverError, InProcess};
pub use persona::{Persona, PersonaKind, PersonaSet};
pub use runner::{mutate, run, SIM_EPOCH_MS};
pub use scenario::{InstructorAction, Scenario, StudentAssignment, TimelineEntry};
pub use transcript::{Action, Metrics, Step, Transcript};
pub use verify::{verify, Assertion, AssertionFile, AssertionResult, Op, VerifyReport};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    ScenarioInvalid(String),
    #[error("endpoint unreachable: {0}")]
    EndpointUnreachable(String),
    #[error("session failure: {0}")]
    Driver(String),
}

/// Runs `scenario` against a fresh in-process session.
pub fn run_inproc(scenario: &Scenario, seed: u64, log: Option<std::path::PathBuf>) -> Result<Transcript, SimError> {
    let mut driver = InProcess::new(scenario.service.clone(), seed, SIM_EPOCH_MS, log).map_err(|e| match e {
        DriverError::Unreachable(m) => SimError::EndpointUnreachable(m),
        other => SimError::Driver(other.to_string()),
    })?;
    run(scenario, &mut driver, seed)
}
