//! Per-student session state and task scoring.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::alerts::StudentView;
use crate::analyzer::{check_spec, check_syntax, friendly_message};
use crate::config::{RubricWeights, ServiceConfig, TaskConfig};
use crate::domain::{
    AnalysisError, ErrorCategory, FeedbackMode, FeedbackStyle, MessageId, QuestionType, RatingValue,
    StudentId, TaskId, TaskScore, TimestampMs,
};
use crate::review::{ReviewSummary, StudentHistory};
use crate::triggers::{Trigger, TriggerSubtype, TriggerWindowState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Author {
    Student,
    Agent,
    System,
    Instructor,
}

/// Why the agent said what it said.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveryInfo {
    pub trigger: TriggerSubtype,
    pub intervention_reason: String,
    pub justification: String,
    pub response_score: f64,
    pub degraded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationEntry {
    pub message_id: MessageId,
    pub author: Author,
    pub text: String,
    pub auto_generated: bool,
    pub mode_at_time: FeedbackMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style: Option<FeedbackStyle>,
    pub timestamp: TimestampMs,
    #[serde(default)]
    pub rating: Option<RatingValue>,
    pub task_id: TaskId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delivery: Option<DeliveryInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Outcome {
    Delivered { message_id: MessageId },
    Withheld { reason: String },
    /// Student is in Silent mode; nothing was generated.
    Silenced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerOutcome {
    pub trigger: Trigger,
    #[serde(flatten)]
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub category: ErrorCategory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    pub message: String,
}

impl From<&AnalysisError> for Finding {
    fn from(e: &AnalysisError) -> Self {
        Self { category: e.category, path: e.path.clone(), message: friendly_message(e) }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct StudentState {
    pub id: StudentId,
    pub name: String,
    pub mode: FeedbackMode,
    pub task_index: usize,
    pub task_started_at: TimestampMs,
    pub finished: bool,
    pub history: StudentHistory,
    pub triggers: TriggerWindowState,
    pub conversation: Vec<ConversationEntry>,
    pub outcomes: Vec<TriggerOutcome>,
    pub last_review: Option<ReviewSummary>,
    pub latest_spec: String,
    pub latest_analysis: Vec<AnalysisError>,
    pub clean_streak: usize,
    pub failures_in_task: usize,
    pub last_run_ok: bool,
    pub questions: Vec<(TaskId, QuestionType)>,
    pub error_counts: BTreeMap<ErrorCategory, usize>,
    pub last_ts: TimestampMs,
}

impl StudentState {
    pub fn new(id: StudentId, name: Option<String>, mode: FeedbackMode, cfg: &ServiceConfig, at: TimestampMs) -> Self {
        let task = &cfg.session.tasks[0];
        Self {
            name: name.unwrap_or_else(|| id.to_string()),
            mode,
            task_index: 0,
            task_started_at: at,
            finished: false,
            history: StudentHistory::new(task.task_id.clone(), mode, task.concepts()),
            triggers: TriggerWindowState::new(id.clone(), at),
            conversation: Vec::new(),
            outcomes: Vec::new(),
            last_review: None,
            latest_spec: String::new(),
            latest_analysis: Vec::new(),
            clean_streak: 0,
            failures_in_task: 0,
            last_run_ok: false,
            questions: Vec::new(),
            error_counts: BTreeMap::new(),
            last_ts: at,
            id,
        }
    }

    pub fn current_task<'c>(&self, cfg: &'c ServiceConfig) -> &'c TaskConfig {
        &cfg.session.tasks[self.task_index]
    }

    pub fn message(&self, id: &MessageId) -> Option<usize> {
        self.conversation.iter().position(|m| &m.message_id == id)
    }

    pub fn record_run(&mut self, findings: &[AnalysisError]) {
        for e in findings {
            *self.error_counts.entry(e.category).or_default() += 1;
        }
        if findings.is_empty() {
            self.clean_streak += 1;
            self.last_run_ok = true;
        } else {
            self.clean_streak = 0;
            self.failures_in_task += 1;
            self.last_run_ok = false;
        }
    }

    /// Moves on to the next task, or marks the student finished.
    pub fn advance(&mut self, cfg: &ServiceConfig, at: TimestampMs) {
        self.clean_streak = 0;
        self.failures_in_task = 0;
        self.last_run_ok = false;
        self.latest_spec.clear();
        self.latest_analysis.clear();
        self.history.latest_sections = None;
        if self.task_index + 1 < cfg.session.tasks.len() {
            self.task_index += 1;
            let task = &cfg.session.tasks[self.task_index];
            self.history.current_task = task.task_id.clone();
            self.history.task_concepts = task.concepts();
            self.task_started_at = at;
        } else {
            self.finished = true;
        }
    }

    pub fn latest_score(&self) -> Option<&TaskScore> {
        self.history.completed.last()
    }

    pub fn view(&self) -> StudentView<'_> {
        StudentView {
            student_id: &self.id,
            display_name: &self.name,
            mode: self.mode,
            latest_score: self.latest_score(),
            questions: self.questions.iter().map(|(t, q)| (t, *q)).collect(),
            error_counts: self.error_counts.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreParts {
    /// Share of the four sections present without findings in the final spec.
    pub completeness: f64,
    pub last_run: f64,
    pub clean_streak: f64,
}

pub fn score_parts(final_spec: &str, task: &TaskConfig, last_run_ok: bool, streak: usize, failures: usize) -> ScoreParts {
    let completeness = match check_syntax(final_spec) {
        Err(_) => 0.0,
        Ok(doc) => {
            let s = doc.sections();
            let findings = check_spec(final_spec, &task.expected_fields);
            let clean = |present: bool, c: ErrorCategory| present && !findings.iter().any(|e| e.category == c);
            let n = [
                clean(s.has_schema, ErrorCategory::Schema),
                clean(s.has_data, ErrorCategory::Data),
                clean(s.has_mark, ErrorCategory::Mark),
                clean(s.has_encoding, ErrorCategory::Encoding),
            ]
            .into_iter()
            .filter(|b| *b)
            .count();
            n as f64 / 4.0
        }
    };
    let clean_streak = if streak + failures == 0 { 0.0 } else { streak as f64 / (streak + failures) as f64 };
    ScoreParts { completeness, last_run: if last_run_ok { 1.0 } else { 0.0 }, clean_streak }
}

pub fn rubric_score(parts: ScoreParts, w: &RubricWeights) -> f64 {
    let s = 5.0 * (w.completeness * parts.completeness + w.last_run * parts.last_run + w.clean_streak * parts.clean_streak);
    s.clamp(0.0, 5.0)
}

pub(crate) fn task_score(st: &StudentState, task: &TaskConfig, completed_at: TimestampMs) -> TaskScore {
    let parts = score_parts(&st.latest_spec, task, st.last_run_ok, st.clean_streak, st.failures_in_task);
    TaskScore {
        task_id: task.task_id.clone(),
        score: rubric_score(parts, &task.rubric),
        completed_at,
        duration_seconds: ((completed_at - st.task_started_at).max(0) / 1000) as u64,
    }
}
