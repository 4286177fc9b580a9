//! What a simulation run produced.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::alerts::{Alert, ClassSnapshot};
use crate::domain::{
    AlertId, ErrorCategory, FeedbackMode, FeedbackStyle, MessageId, QuestionType, RatingValue, StudentId, TaskId,
};
use crate::triggers::TriggerSubtype;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    Edit { delta_len: u64 },
    Run { broken: Option<ErrorCategory> },
    Question { intent: QuestionType, text: String },
    Activity,
    Complete { task_id: TaskId },
    Rate { message_id: MessageId, value: RatingValue },
    Tick,
    Mode { mode: FeedbackMode, students: Option<Vec<StudentId>> },
    HandleAlerts { handled: Vec<AlertId> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplyRef {
    pub student_id: StudentId,
    pub message_id: MessageId,
    pub style: Option<FeedbackStyle>,
    pub mode_at_time: FeedbackMode,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fired: Vec<TriggerSubtype>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub replies: Vec<ReplyRef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alerts: Vec<AlertId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    /// Milliseconds since the start of the run.
    pub at_ms: i64,
    pub actor: String,
    pub action: Action,
    pub result: StepResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSnapshot {
    pub at_ms: i64,
    pub label: String,
    pub snapshot: ClassSnapshot,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StudentMetrics {
    pub persona: String,
    pub events: usize,
    pub runs: usize,
    pub failed_runs: usize,
    pub failure_rate: f64,
    pub questions: usize,
    pub answer_seeking_questions: usize,
    pub answer_seeking_share: f64,
    pub agent_messages: usize,
    pub passive_triggers: usize,
    pub completed_tasks: usize,
    pub final_mode: Option<FeedbackMode>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PersonaMetrics {
    pub students: usize,
    /// Lowest failure rate among students of this persona who ran anything.
    pub min_failure_rate: Option<f64>,
    /// Lowest answer-seeking share among students who asked anything.
    pub min_answer_seeking_share: Option<f64>,
    pub questions: usize,
    pub agent_messages: usize,
    pub passive_triggers: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub events_emitted: usize,
    pub events_rejected: usize,
    /// Events the session reports having accepted.
    pub events_logged: usize,
    pub triggers_by_type: BTreeMap<String, usize>,
    pub feedback_by_style: BTreeMap<String, usize>,
    pub alerts_by_kind: BTreeMap<String, usize>,
    pub agent_messages: usize,
    /// Agent messages that reached a student the simulator had put in Silent mode.
    pub silent_agent_messages: usize,
    pub completed_tasks: usize,
    pub scores: BTreeMap<String, BTreeMap<String, f64>>,
    pub students: BTreeMap<String, StudentMetrics>,
    pub personas: BTreeMap<String, PersonaMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub scenario: String,
    pub seed: u64,
    pub students: Vec<StudentId>,
    pub steps: Vec<Step>,
    pub snapshots: Vec<LabeledSnapshot>,
    pub alerts: Vec<Alert>,
    pub metrics: Metrics,
}

impl Transcript {
    pub const FILE: &'static str = "transcript.json";

    pub fn save(&self, dir: &std::path::Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(dir.join(Self::FILE), text)?;
        let metrics = serde_json::to_string_pretty(&self.metrics).map_err(std::io::Error::other)?;
        std::fs::write(dir.join("metrics.json"), metrics)
    }

    /// Accepts the output directory or the transcript file itself.
    pub fn load(path: &std::path::Path) -> std::io::Result<Self> {
        let file = if path.is_dir() { path.join(Self::FILE) } else { path.to_owned() };
        let text = std::fs::read_to_string(file)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }
}
