//! How the simulator talks to a session: in process, or through an adapter
//! such as the HTTP client in the command-line tool.

use std::path::PathBuf;
use std::sync::Arc;

use crate::alerts::{Alert, ClassSnapshot};
use crate::config::ServiceConfig;
use crate::domain::{AlertId, FeedbackMode, StudentEvent, StudentId, TimestampMs};
use crate::session::clock::ManualClock;
use crate::session::{
    backend_from_config, EventReceipt, ModeReceipt, Service, ServiceError, SessionStats, TickReport,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DriverError {
    /// The session refused the command; the run goes on.
    #[error("rejected ({code}): {message}")]
    Rejected { code: String, message: String },
    #[error("endpoint unreachable: {0}")]
    Unreachable(String),
    #[error("{0}")]
    Fatal(String),
}

impl From<ServiceError> for DriverError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::Io(_) | ServiceError::CorruptLog { .. } | ServiceError::Config(_) => {
                DriverError::Fatal(e.to_string())
            }
            other => DriverError::Rejected { code: other.code().to_owned(), message: other.to_string() },
        }
    }
}

pub trait Driver {
    fn register(&mut self, id: &StudentId, name: Option<&str>) -> Result<(), DriverError>;
    /// Moves the session clock; called before every command.
    fn set_clock(&mut self, now: TimestampMs) -> Result<(), DriverError>;
    fn submit(&mut self, event: &StudentEvent) -> Result<EventReceipt, DriverError>;
    fn tick(&mut self, now: TimestampMs) -> Result<Vec<TickReport>, DriverError>;
    fn set_mode(&mut self, mode: FeedbackMode, students: Option<Vec<StudentId>>) -> Result<ModeReceipt, DriverError>;
    fn alerts(&mut self) -> Result<Vec<Alert>, DriverError>;
    fn mark_handled(&mut self, id: &AlertId) -> Result<Alert, DriverError>;
    fn snapshot(&mut self) -> Result<ClassSnapshot, DriverError>;
    fn stats(&mut self) -> Result<SessionStats, DriverError>;
}

/// Runs the session inside the simulator on a manual clock.
pub struct InProcess {
    service: Service,
    clock: Arc<ManualClock>,
}

impl InProcess {
    /// The mock seed and generation seed follow `seed`. With `log`, the
    /// session is durable and can be replayed afterwards.
    pub fn new(mut cfg: ServiceConfig, seed: u64, start: TimestampMs, log: Option<PathBuf>) -> Result<Self, DriverError> {
        cfg.llm.mock_seed = seed;
        cfg.llm.params.seed = Some(seed);
        let backend = backend_from_config(&cfg.llm)?;
        let clock = Arc::new(ManualClock::new(start));
        let service = match log {
            Some(path) => Service::create(cfg, &path, backend, clock.clone())?,
            None => Service::ephemeral(cfg, backend, clock.clone())?,
        };
        Ok(Self { service, clock })
    }

    pub fn service(&self) -> &Service {
        &self.service
    }

    pub fn into_service(self) -> Service {
        self.service
    }
}

impl Driver for InProcess {
    fn register(&mut self, id: &StudentId, name: Option<&str>) -> Result<(), DriverError> {
        match self.service.register_student(id.clone(), name.map(str::to_owned)) {
            Ok(_) | Err(ServiceError::DuplicateStudent(_)) => Ok(()),
            Err(e) => Err(e.into()),
        }
    }

    fn set_clock(&mut self, now: TimestampMs) -> Result<(), DriverError> {
        self.clock.set(now);
        Ok(())
    }

    fn submit(&mut self, event: &StudentEvent) -> Result<EventReceipt, DriverError> {
        Ok(self.service.submit_event(event.clone())?)
    }

    fn tick(&mut self, now: TimestampMs) -> Result<Vec<TickReport>, DriverError> {
        Ok(self.service.tick(now)?)
    }

    fn set_mode(&mut self, mode: FeedbackMode, students: Option<Vec<StudentId>>) -> Result<ModeReceipt, DriverError> {
        Ok(self.service.set_mode(mode, students)?)
    }

    fn alerts(&mut self) -> Result<Vec<Alert>, DriverError> {
        Ok(self.service.alerts())
    }

    fn mark_handled(&mut self, id: &AlertId) -> Result<Alert, DriverError> {
        Ok(self.service.mark_handled(id.as_str())?)
    }

    fn snapshot(&mut self) -> Result<ClassSnapshot, DriverError> {
        Ok(self.service.snapshot())
    }

    fn stats(&mut self) -> Result<SessionStats, DriverError> {
        Ok(self.service.stats())
    }
}
