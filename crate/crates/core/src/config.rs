//! Service configuration, loaded from a single TOML file.
//!
//! ```toml
//! [session]
//! session_id = "c1"
//! initial_mode = "auto"
//!
//! [[session.tasks]]
//! task_id = "task1"
//! description = "Histogram of scores"
//! expected_fields = [{ path = "mark", value = "bar" }]
//!
//! [triggers]
//! inactivity_secs = 240
//!
//! [weights.mode]
//! cognitive = 0.5
//! error = 0.2
//! history = 0.3
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alerts::AlertConfig;
use crate::analyzer::ExpectedField;
use crate::decision::{DecisionWeights, InterventionConfig};
use crate::domain::{FeedbackMode, SessionId, StudentId, TaskId};
use crate::llm::GenerationParams;
use crate::triggers::TriggerConfig;

pub const DATA_DIR_ENV: &str = "CLASSAID_DATA_DIR";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RubricWeights {
    /// Share of sections in the final spec without findings.
    pub completeness: f64,
    pub last_run: f64,
    pub clean_streak: f64,
}

impl Default for RubricWeights {
    fn default() -> Self {
        Self { completeness: 0.6, last_run: 0.2, clean_streak: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub task_id: TaskId,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub expected_fields: Vec<ExpectedField>,
    #[serde(default)]
    pub rubric: RubricWeights,
    /// Reference solution, used by the simulator only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solution: Option<String>,
}

impl TaskConfig {
    pub fn concepts(&self) -> Vec<String> {
        self.expected_fields.iter().map(|f| f.path.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RosterEntry {
    pub id: StudentId,
    #[serde(default)]
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionSection {
    pub session_id: SessionId,
    #[serde(default = "default_mode")]
    pub initial_mode: FeedbackMode,
    /// Required on dashboard subscriptions when set.
    #[serde(default, skip_serializing)]
    pub instructor_token: Option<String>,
    #[serde(default)]
    pub students: Vec<RosterEntry>,
    pub tasks: Vec<TaskConfig>,
}

fn default_mode() -> FeedbackMode {
    FeedbackMode::Auto
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSection {
    pub backend: BackendKind,
    pub model: String,
    pub max_in_flight: usize,
    /// Seed for the mock backend and for degraded fallback.
    pub mock_seed: u64,
    pub params: GenerationParams,
}

impl Default for LlmSection {
    fn default() -> Self {
        Self {
            backend: BackendKind::Mock,
            model: "gpt-4o".into(),
            max_in_flight: 8,
            mock_seed: 7,
            params: GenerationParams::default(),
        }
    }
}

/// Opt-in backend-mediated stages; the weighted rules stay the default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecisionFlags {
    pub backend_selection: bool,
    pub backend_intervention: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    pub session: SessionSection,
    #[serde(default)]
    pub llm: LlmSection,
    #[serde(default)]
    pub triggers: TriggerConfig,
    #[serde(default)]
    pub weights: DecisionWeights,
    #[serde(default)]
    pub intervention: InterventionConfig,
    #[serde(default)]
    pub alerts: AlertConfig,
    #[serde(default)]
    pub decision: DecisionFlags,
}

impl ServiceConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ServiceConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Minimal valid configuration with the given tasks.
    pub fn minimal(session_id: &str, tasks: Vec<TaskConfig>) -> Self {
        Self {
            session: SessionSection {
                session_id: session_id.into(),
                initial_mode: FeedbackMode::Auto,
                instructor_token: None,
                students: Vec::new(),
                tasks,
            },
            llm: LlmSection::default(),
            triggers: TriggerConfig::default(),
            weights: DecisionWeights::default(),
            intervention: InterventionConfig::default(),
            alerts: AlertConfig::default(),
            decision: DecisionFlags::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.session.session_id.as_str().is_empty() {
            return invalid("session_id must not be empty".into());
        }
        if self.session.tasks.is_empty() {
            return invalid("at least one task is required".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for t in &self.session.tasks {
            if !seen.insert(t.task_id.clone()) {
                return invalid(format!("duplicate task_id '{}'", t.task_id));
            }
            let r = t.rubric;
            let sum = r.completeness + r.last_run + r.clean_streak;
            if [r.completeness, r.last_run, r.clean_streak].iter().any(|w| *w < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return invalid(format!("rubric weights of task '{}' must be non-negative and sum to 1", t.task_id));
            }
        }
        let mut ids = std::collections::BTreeSet::new();
        for s in &self.session.students {
            if !ids.insert(s.id.clone()) {
                return invalid(format!("duplicate student '{}'", s.id));
            }
        }
        if self.llm.max_in_flight == 0 {
            return invalid("llm.max_in_flight must be positive".into());
        }
        self.weights.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.triggers.validate().map_err(ConfigError::Invalid)?;
        self.intervention.validate().map_err(ConfigError::Invalid)?;
        self.alerts.validate().map_err(ConfigError::Invalid)?;
        Ok(())
    }

    pub fn task(&self, index: usize) -> Option<&TaskConfig> {
        self.session.tasks.get(index)
    }

    pub fn all_concepts(&self) -> Vec<String> {
        let mut out: Vec<String> = self.session.tasks.iter().flat_map(|t| t.concepts()).collect();
        out.sort();
        out.dedup();
        out
    }
}
