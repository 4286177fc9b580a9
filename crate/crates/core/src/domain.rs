//! Shared vocabulary: modes, taxonomy levels, error categories, identifiers and
//! the student event wire format.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// Milliseconds since the Unix epoch.
pub type TimestampMs = i64;

macro_rules! opaque_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }

        impl std::borrow::Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }
    };
}

opaque_id!(StudentId);
opaque_id!(SessionId);
opaque_id!(MessageId);
opaque_id!(TaskId);
opaque_id!(AlertId);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown {kind} '{value}'")]
pub struct UnknownVariant {
    pub kind: &'static str,
    pub value: String,
}

/// Instructor-selected policy for the teaching assistant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackMode {
    Auto,
    Technical,
    Heuristic,
    Silent,
}

impl FeedbackMode {
    pub const ALL: [FeedbackMode; 4] = [
        FeedbackMode::Auto,
        FeedbackMode::Technical,
        FeedbackMode::Heuristic,
        FeedbackMode::Silent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeedbackMode::Auto => "auto",
            FeedbackMode::Technical => "technical",
            FeedbackMode::Heuristic => "heuristic",
            FeedbackMode::Silent => "silent",
        }
    }
}

impl fmt::Display for FeedbackMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeedbackMode {
    type Err = UnknownVariant;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FeedbackMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| UnknownVariant {
                kind: "feedback mode",
                value: s.to_owned(),
            })
    }
}

/// The two concrete response styles a mode can produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackStyle {
    Heuristic,
    Technical,
}

impl FeedbackStyle {
    pub fn as_str(self) -> &'static str {
        match self {
            FeedbackStyle::Heuristic => "heuristic",
            FeedbackStyle::Technical => "technical",
        }
    }

    /// The fixed mode that produces only this style.
    pub fn mode(self) -> FeedbackMode {
        match self {
            FeedbackStyle::Heuristic => FeedbackMode::Heuristic,
            FeedbackStyle::Technical => FeedbackMode::Technical,
        }
    }
}

impl fmt::Display for FeedbackStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Whether feedback answers an explicit question or was initiated by the agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Proactive,
    UserTriggered,
}

/// Six-level cognitive taxonomy, ordered from lowest to highest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BloomLevel {
    Remember,
    Understand,
    Apply,
    Analyze,
    Evaluate,
    Create,
}

impl BloomLevel {
    pub const ALL: [BloomLevel; 6] = [
        BloomLevel::Remember,
        BloomLevel::Understand,
        BloomLevel::Apply,
        BloomLevel::Analyze,
        BloomLevel::Evaluate,
        BloomLevel::Create,
    ];

    pub fn rank(self) -> u8 {
        bloom_rank(self)
    }

    pub fn from_rank(rank: u8) -> Option<BloomLevel> {
        match rank {
            1..=6 => Some(BloomLevel::ALL[usize::from(rank - 1)]),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BloomLevel::Remember => "remember",
            BloomLevel::Understand => "understand",
            BloomLevel::Apply => "apply",
            BloomLevel::Analyze => "analyze",
            BloomLevel::Evaluate => "evaluate",
            BloomLevel::Create => "create",
        }
    }

    /// Case-insensitive label lookup; accepts the British "analyse" spelling.
    pub fn from_label(label: &str) -> Option<BloomLevel> {
        let label = label.trim().to_ascii_lowercase();
        if label == "analyse" {
            return Some(BloomLevel::Analyze);
        }
        BloomLevel::ALL.into_iter().find(|l| l.as_str() == label)
    }
}

impl fmt::Display for BloomLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Remember → 1 … Create → 6.
pub fn bloom_rank(level: BloomLevel) -> u8 {
    match level {
        BloomLevel::Remember => 1,
        BloomLevel::Understand => 2,
        BloomLevel::Apply => 3,
        BloomLevel::Analyze => 4,
        BloomLevel::Evaluate => 5,
        BloomLevel::Create => 6,
    }
}

/// Failure classes reported for a visualization specification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    Schema,
    Data,
    Mark,
    Encoding,
    JsonSyntax,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 5] = [
        ErrorCategory::Schema,
        ErrorCategory::Data,
        ErrorCategory::Mark,
        ErrorCategory::Encoding,
        ErrorCategory::JsonSyntax,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Schema => "schema",
            ErrorCategory::Data => "data",
            ErrorCategory::Mark => "mark",
            ErrorCategory::Encoding => "encoding",
            ErrorCategory::JsonSyntax => "json_syntax",
        }
    }

    /// Syntax-level mistakes, as opposed to design-level ones.
    pub fn is_mechanical(self) -> bool {
        matches!(self, ErrorCategory::JsonSyntax | ErrorCategory::Schema)
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ErrorCategory {
    type Err = UnknownVariant;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ErrorCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| UnknownVariant {
                kind: "error category",
                value: s.to_owned(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionType {
    CriticalThinking,
    AnswerSeeking,
}

impl QuestionType {
    pub fn as_str(self) -> &'static str {
        match self {
            QuestionType::CriticalThinking => "critical_thinking",
            QuestionType::AnswerSeeking => "answer_seeking",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RatingValue {
    Like,
    Dislike,
}

/// A classified defect in a student's specification.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisError {
    pub category: ErrorCategory,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

impl AnalysisError {
    pub fn new(category: ErrorCategory, message: impl Into<String>) -> Self {
        let message = message.into();
        debug_assert!(!message.is_empty());
        Self {
            category,
            message,
            path: None,
        }
    }

    pub fn at(mut self, path: impl Into<String>) -> Self {
        self.path = Some(path.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub task_id: TaskId,
    /// Always within `[0, 5]`.
    pub score: f64,
    pub completed_at: TimestampMs,
    pub duration_seconds: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Edit,
    Run,
    Question,
    Rating,
    TaskComplete,
    Activity,
}

impl EventKind {
    pub const ALL: [EventKind; 6] = [
        EventKind::Edit,
        EventKind::Run,
        EventKind::Question,
        EventKind::Rating,
        EventKind::TaskComplete,
        EventKind::Activity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Edit => "edit",
            EventKind::Run => "run",
            EventKind::Question => "question",
            EventKind::Rating => "rating",
            EventKind::TaskComplete => "task_complete",
            EventKind::Activity => "activity",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventPayload {
    Edit { delta_len: u64 },
    Run { spec: String },
    Question { question: String, spec: String },
    Rating { message_id: MessageId, value: RatingValue },
    TaskComplete { task_id: TaskId },
    /// Coalesced keyboard/mouse heartbeat.
    Activity,
}

impl EventPayload {
    pub fn kind(&self) -> EventKind {
        match self {
            EventPayload::Edit { .. } => EventKind::Edit,
            EventPayload::Run { .. } => EventKind::Run,
            EventPayload::Question { .. } => EventKind::Question,
            EventPayload::Rating { .. } => EventKind::Rating,
            EventPayload::TaskComplete { .. } => EventKind::TaskComplete,
            EventPayload::Activity => EventKind::Activity,
        }
    }
}

/// One observed student action, flat on the wire:
/// `{"kind":"run","student_id":"s1","session_id":"c1","timestamp":1000,"spec":"..."}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentEvent {
    pub student_id: StudentId,
    pub session_id: SessionId,
    pub timestamp: TimestampMs,
    #[serde(flatten)]
    pub payload: EventPayload,
}

impl StudentEvent {
    pub fn new(
        student_id: impl Into<StudentId>,
        session_id: impl Into<SessionId>,
        timestamp: TimestampMs,
        payload: EventPayload,
    ) -> Self {
        Self {
            student_id: student_id.into(),
            session_id: session_id.into(),
            timestamp,
            payload,
        }
    }

    pub fn kind(&self) -> EventKind {
        self.payload.kind()
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("events always serialize")
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EventError {
    #[error("malformed event: field '{field}': {reason}")]
    MalformedEvent { field: String, reason: String },
    #[error("unknown event kind '{0}'")]
    UnknownKind(String),
    #[error("missing field '{0}'")]
    MissingField(String),
}

fn malformed(field: &str, reason: impl Into<String>) -> EventError {
    EventError::MalformedEvent {
        field: field.to_owned(),
        reason: reason.into(),
    }
}

fn required<'a>(obj: &'a Map<String, Value>, field: &str) -> Result<&'a Value, EventError> {
    match obj.get(field) {
        None | Some(Value::Null) => Err(EventError::MissingField(field.to_owned())),
        Some(v) => Ok(v),
    }
}

fn required_str(obj: &Map<String, Value>, field: &str) -> Result<String, EventError> {
    required(obj, field)?
        .as_str()
        .map(str::to_owned)
        .ok_or_else(|| malformed(field, "expected a string"))
}

fn required_id(obj: &Map<String, Value>, field: &str) -> Result<String, EventError> {
    let s = required_str(obj, field)?;
    if s.is_empty() {
        return Err(malformed(field, "must not be empty"));
    }
    Ok(s)
}

fn required_u64(obj: &Map<String, Value>, field: &str) -> Result<u64, EventError> {
    required(obj, field)?
        .as_u64()
        .ok_or_else(|| malformed(field, "expected a non-negative integer"))
}

/// Validates a raw wire document into a [`StudentEvent`]. Unknown fields are ignored.
pub fn parse_event(raw: &str) -> Result<StudentEvent, EventError> {
    let value: Value = serde_json::from_str(raw).map_err(|e| malformed("$", e.to_string()))?;
    event_from_value(&value)
}

pub fn event_from_value(value: &Value) -> Result<StudentEvent, EventError> {
    let obj = value
        .as_object()
        .ok_or_else(|| malformed("$", "expected a JSON object"))?;
    let kind = required_str(obj, "kind")?;
    let payload = match kind.as_str() {
        "edit" => EventPayload::Edit {
            delta_len: required_u64(obj, "delta_len")?,
        },
        "run" => EventPayload::Run {
            spec: required_str(obj, "spec")?,
        },
        "question" => {
            let question = required_str(obj, "question")?;
            if question.trim().is_empty() {
                return Err(malformed("question", "must not be empty"));
            }
            EventPayload::Question {
                question,
                spec: required_str(obj, "spec")?,
            }
        }
        "rating" => {
            let value = match required_str(obj, "value")?.as_str() {
                "like" => RatingValue::Like,
                "dislike" => RatingValue::Dislike,
                other => return Err(malformed("value", format!("expected like|dislike, got '{other}'"))),
            };
            EventPayload::Rating {
                message_id: MessageId::new(required_id(obj, "message_id")?),
                value,
            }
        }
        "task_complete" => EventPayload::TaskComplete {
            task_id: TaskId::new(required_id(obj, "task_id")?),
        },
        "activity" => EventPayload::Activity,
        other => return Err(EventError::UnknownKind(other.to_owned())),
    };
    let timestamp = required(obj, "timestamp")?
        .as_i64()
        .filter(|t| *t >= 0)
        .ok_or_else(|| malformed("timestamp", "expected milliseconds since epoch"))?;
    Ok(StudentEvent {
        student_id: StudentId::new(required_id(obj, "student_id")?),
        session_id: SessionId::new(required_id(obj, "session_id")?),
        timestamp,
        payload,
    })
}
