//! Classroom session: accepts student events and instructor commands, runs
//! the feedback pipeline, keeps the durable log and feeds the dashboard.
//!
//! Locking: a per-student mutex guards that student's state; one shared mutex
//! guards the log, the alert book, the push hub and the class mode. Locks are
//! always taken student-first, in roster order when several are needed.

pub mod clock;
pub mod log;
pub mod push;
mod state;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::alerts::{self, Alert, AlertBook, AlertError, ClassSnapshot, StudentCard};
use crate::analyzer::{check_spec, check_syntax};
use crate::cognition::{Classifier, KeywordTable};
use crate::config::{BackendKind, LlmSection, ServiceConfig};
use crate::decision::{
    decide_intervention, decide_intervention_via_backend, select_response, select_response_via_backend, ScoreContext,
};
use crate::domain::{
    event_from_value, AlertId, EventPayload, FeedbackMode, FeedbackStyle, MessageId, Origin, RatingValue, StudentEvent,
    StudentId, TaskId, TaskScore, TimestampMs,
};
use crate::feedback::{generate, PromptInput};
use crate::llm::{
    Gateway, GenerationRequest, GenerationResult, GatewayError, MockBackend, RemoteBackend, RemoteSettings,
    TextBackend,
};
use crate::review::{build_review, FiredTrigger, QuestionRecord, RatingRecord, RunRecord};
use crate::triggers::{Trigger, TriggerDetail, TriggerSubtype};

use self::clock::Clock;
use self::log::{read_log, CallOutcome, LogError, LogWriter, Record};
use self::push::{PushEvent, PushHub, Subscription};
use self::state::{task_score, StudentState};

pub use self::state::{
    rubric_score, score_parts, Author, ConversationEntry, DeliveryInfo, Finding, Outcome, ScoreParts,
    TriggerOutcome,
};

pub const RATING_CONFIRMATION: &str = "Thanks for your feedback!";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ServiceError {
    #[error("unknown session '{0}'")]
    UnknownSession(String),
    #[error("unknown student '{0}'")]
    UnknownStudent(String),
    #[error("student '{0}' is already registered")]
    DuplicateStudent(String),
    #[error("malformed event: {0}")]
    MalformedEvent(String),
    #[error("unknown message '{0}'")]
    UnknownMessage(String),
    #[error("message '{0}' was already rated")]
    AlreadyRated(String),
    #[error("message '{0}' was not written by the agent")]
    NotAgentMessage(String),
    #[error("task '{got}' is not the current task '{expected}'")]
    WrongTask { expected: String, got: String },
    #[error("student '{0}' has completed every task")]
    AlreadyCompleted(String),
    #[error("unknown alert '{0}'")]
    UnknownAlert(String),
    #[error("alert '{0}' was already handled")]
    AlreadyHandled(String),
    #[error("unauthorized")]
    Unauthorized,
    #[error("i/o error: {0}")]
    Io(String),
    #[error("corrupt log at line {line}: {reason}")]
    CorruptLog { line: usize, reason: String },
    #[error("configuration error: {0}")]
    Config(String),
}

impl ServiceError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::UnknownSession(_) => "unknown_session",
            ServiceError::UnknownStudent(_) => "unknown_student",
            ServiceError::DuplicateStudent(_) => "duplicate_student",
            ServiceError::MalformedEvent(_) => "malformed_event",
            ServiceError::UnknownMessage(_) => "unknown_message",
            ServiceError::AlreadyRated(_) => "already_rated",
            ServiceError::NotAgentMessage(_) => "not_agent_message",
            ServiceError::WrongTask { .. } => "wrong_task",
            ServiceError::AlreadyCompleted(_) => "already_completed",
            ServiceError::UnknownAlert(_) => "unknown_alert",
            ServiceError::AlreadyHandled(_) => "already_handled",
            ServiceError::Unauthorized => "unauthorized",
            ServiceError::Io(_) => "io",
            ServiceError::CorruptLog { .. } => "corrupt_log",
            ServiceError::Config(_) => "config",
        }
    }
}

impl From<LogError> for ServiceError {
    fn from(e: LogError) -> Self {
        match e {
            LogError::Io { .. } => ServiceError::Io(e.to_string()),
            LogError::Corrupt { line, reason, .. } => ServiceError::CorruptLog { line, reason },
        }
    }
}

impl From<AlertError> for ServiceError {
    fn from(e: AlertError) -> Self {
        match e {
            AlertError::UnknownAlert(id) => ServiceError::UnknownAlert(id),
            AlertError::AlreadyHandled(id) => ServiceError::AlreadyHandled(id),
        }
    }
}

/// Result of one accepted event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventReceipt {
    pub seq: u64,
    /// Effective timestamp after clamping to the student's timeline.
    pub timestamp: TimestampMs,
    pub fired: Vec<TriggerSubtype>,
    pub replies: Vec<ConversationEntry>,
    pub alerts: Vec<Alert>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<TaskScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReceipt {
    pub seq: u64,
    pub mode: FeedbackMode,
    pub student_ids: Vec<StudentId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickReport {
    pub student_id: StudentId,
    pub seq: u64,
    pub fired: Vec<TriggerSubtype>,
    pub replies: Vec<ConversationEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentDetail {
    pub student_id: StudentId,
    pub display_name: String,
    pub mode: FeedbackMode,
    pub current_task: TaskId,
    pub finished: bool,
    pub task_started_at: TimestampMs,
    pub scores: Vec<TaskScore>,
    pub conversation: Vec<ConversationEntry>,
    pub outcomes: Vec<TriggerOutcome>,
    pub latest_spec: String,
    pub findings: Vec<Finding>,
    pub last_review: Option<crate::review::ReviewSummary>,
    pub card: StudentCard,
}

/// Counters used to check that nothing was lost or duplicated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionStats {
    pub records: u64,
    pub students: usize,
    pub events: usize,
    pub questions: usize,
    pub fired_triggers: usize,
    pub delivered: usize,
    pub withheld: usize,
    pub silenced: usize,
    pub alerts: usize,
    pub completed_tasks: usize,
}

/// Backend chosen by `[llm]`, wrapped in the retrying gateway.
pub fn backend_from_config(llm: &LlmSection) -> Result<Arc<dyn TextBackend>, ServiceError> {
    let gateway = match llm.backend {
        BackendKind::Mock => Gateway::mock(llm.mock_seed),
        BackendKind::Remote => {
            let settings = RemoteSettings::from_env(&llm.model).ok_or_else(|| {
                ServiceError::Config(format!("remote backend needs {}", crate::llm::URL_ENV))
            })?;
            Gateway::new(Arc::new(RemoteBackend::new(settings)), llm.mock_seed, llm.max_in_flight)
        }
    };
    Ok(Arc::new(gateway.with_max_in_flight(llm.max_in_flight)))
}

pub fn log_path(data_dir: &Path, session_id: &str) -> PathBuf {
    data_dir.join(format!("{session_id}.log"))
}

/// Captures every backend outcome of one command, for the log.
struct Recorder<'a> {
    inner: &'a dyn TextBackend,
    calls: Mutex<Vec<CallOutcome>>,
}

impl TextBackend for Recorder<'_> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, req: &GenerationRequest) -> Result<GenerationResult, GatewayError> {
        let out = self.inner.complete(req);
        self.calls.lock().expect("recorder lock").push(out.clone());
        out
    }
}

/// Serves recorded outcomes in order; the mock covers anything missing.
struct Replayer {
    calls: Mutex<VecDeque<CallOutcome>>,
    mock: MockBackend,
}

impl TextBackend for Replayer {
    fn name(&self) -> &str {
        "replay"
    }

    fn complete(&self, req: &GenerationRequest) -> Result<GenerationResult, GatewayError> {
        let next = self.calls.lock().expect("replayer lock").pop_front();
        next.unwrap_or_else(|| {
            ::log::warn!("no recorded outcome left; using the mock");
            self.mock.complete(req)
        })
    }
}

#[derive(Default)]
struct Index {
    order: Vec<StudentId>,
    map: HashMap<StudentId, Arc<Mutex<StudentState>>>,
}

struct Shared {
    log: LogWriter,
    alerts: AlertBook,
    push: PushHub,
    class_mode: FeedbackMode,
    cards: BTreeMap<StudentId, StudentCard>,
}

/// Side effects of student processing that touch class-wide state.
enum Effect {
    Delivered { style: FeedbackStyle, mode: FeedbackMode, at: TimestampMs },
    Rated { task: TaskId, value: RatingValue, message_id: MessageId, at: TimestampMs },
    Completed { score: TaskScore },
}

struct Applied {
    replies: Vec<ConversationEntry>,
    effects: Vec<Effect>,
    score: Option<TaskScore>,
    fired: Vec<TriggerSubtype>,
}

pub struct Service {
    cfg: ServiceConfig,
    backend: Arc<dyn TextBackend>,
    clock: Arc<dyn Clock>,
    index: RwLock<Index>,
    shared: Mutex<Shared>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

impl Service {
    fn build(cfg: ServiceConfig, backend: Arc<dyn TextBackend>, clock: Arc<dyn Clock>, log: LogWriter) -> Self {
        let shared = Shared {
            log,
            alerts: AlertBook::new(cfg.alerts.clone()),
            push: PushHub::default(),
            class_mode: cfg.session.initial_mode,
            cards: BTreeMap::new(),
        };
        Self { cfg, backend, clock, index: RwLock::new(Index::default()), shared: Mutex::new(shared) }
    }

    /// Starts a new session whose log lives at `log_path`, which must not exist.
    pub fn create(
        cfg: ServiceConfig,
        log_path: &Path,
        backend: Arc<dyn TextBackend>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, ServiceError> {
        cfg.validate().map_err(|e| ServiceError::Config(e.to_string()))?;
        let writer = LogWriter::create(log_path)?;
        Self::start(cfg, backend, clock, writer)
    }

    /// A session without a durable log.
    pub fn ephemeral(cfg: ServiceConfig, backend: Arc<dyn TextBackend>, clock: Arc<dyn Clock>) -> Result<Self, ServiceError> {
        cfg.validate().map_err(|e| ServiceError::Config(e.to_string()))?;
        Self::start(cfg, backend, clock, LogWriter::detached(0))
    }

    fn start(
        cfg: ServiceConfig,
        backend: Arc<dyn TextBackend>,
        clock: Arc<dyn Clock>,
        writer: LogWriter,
    ) -> Result<Self, ServiceError> {
        let now = clock.now_ms();
        let svc = Self::build(cfg, backend, clock, writer);
        {
            let mut sh = lock(&svc.shared);
            sh.log.append(now, Record::Open { config: Box::new(svc.cfg.clone()) })?;
            sh.log.sync()?;
        }
        for entry in svc.cfg.session.students.clone() {
            svc.register_student(entry.id, entry.name)?;
        }
        Ok(svc)
    }

    /// Opens the log at `log_path`, replaying it when it exists.
    pub fn open(
        cfg: ServiceConfig,
        log_path: &Path,
        backend: Arc<dyn TextBackend>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, ServiceError> {
        if log_path.exists() {
            Self::recover(log_path, Some(cfg), backend, clock)
        } else {
            Self::create(cfg, log_path, backend, clock)
        }
    }

    /// Rebuilds a session from its log and keeps appending to it. The logged
    /// configuration wins; `overrides` only supplies the instructor token.
    pub fn recover(
        log_path: &Path,
        overrides: Option<ServiceConfig>,
        backend: Arc<dyn TextBackend>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, ServiceError> {
        let loaded = read_log(log_path)?;
        let n = loaded.records.len() as u64;
        let svc = Self::replay_records(&loaded.records, overrides, backend, clock)?;
        lock(&svc.shared).log = LogWriter::reopen(log_path, loaded.valid_len, n)?;
        Ok(svc)
    }

    /// Rebuilds a session from its log in memory, using only recorded
    /// backend outcomes.
    pub fn replay(log_path: &Path, clock: Arc<dyn Clock>) -> Result<Self, ServiceError> {
        let loaded = read_log(log_path)?;
        Self::replay_records(&loaded.records, None, Arc::new(MockBackend::new(0)), clock)
    }

    fn replay_records(
        records: &[log::LogRecord],
        overrides: Option<ServiceConfig>,
        backend: Arc<dyn TextBackend>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, ServiceError> {
        let corrupt = |seq: u64, reason: String| ServiceError::CorruptLog { line: seq as usize + 1, reason };
        let Record::Open { config } = &records[0].record else {
            return Err(corrupt(0, "first record must be 'open'".into()));
        };
        let mut cfg = (**config).clone();
        if let Some(o) = overrides {
            cfg.session.instructor_token = o.session.instructor_token;
        }
        cfg.validate().map_err(|e| corrupt(0, e.to_string()))?;
        let mut outcomes: HashMap<u64, Vec<CallOutcome>> = HashMap::new();
        for r in records {
            if let Record::Generation { ref_seq, calls } = &r.record {
                outcomes.entry(*ref_seq).or_default().extend(calls.iter().cloned());
            }
        }
        let svc = Self::build(cfg, backend, clock, LogWriter::detached(records.len() as u64));
        for r in &records[1..] {
            let replayer = Replayer {
                calls: Mutex::new(outcomes.remove(&r.seq).unwrap_or_default().into()),
                mock: MockBackend::new(svc.cfg.llm.mock_seed),
            };
            let res = match &r.record {
                Record::Open { .. } => Err(ServiceError::MalformedEvent("second 'open' record".into())),
                Record::Register { student_id, name } => svc.register_inner(Some(r.seq), r.ts, student_id, name.clone()),
                Record::Event { event } => svc.replay_event(r.seq, event, &replayer),
                Record::Mode { mode, student_ids, class_wide } => {
                    svc.mode_inner(Some(r.seq), r.ts, *mode, student_ids, *class_wide).map(|_| ())
                }
                Record::Tick { student_id, now } => svc.replay_tick(r.seq, student_id, *now, &replayer),
                Record::Note { student_id, text } => svc.note_inner(Some(r.seq), r.ts, student_id, text).map(|_| ()),
                Record::Handled { alert_id } => svc.handled_inner(true, r.ts, alert_id.as_str()).map(|_| ()),
                Record::Generation { .. } => Ok(()),
            };
            res.map_err(|e| corrupt(r.seq, format!("record does not apply: {e}")))?;
        }
        Ok(svc)
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.cfg
    }

    pub fn session_id(&self) -> &str {
        self.cfg.session.session_id.as_str()
    }

    pub fn now(&self) -> TimestampMs {
        self.clock.now_ms()
    }

    pub fn check_session(&self, session_id: &str) -> Result<(), ServiceError> {
        if session_id == self.session_id() {
            Ok(())
        } else {
            Err(ServiceError::UnknownSession(session_id.to_owned()))
        }
    }

    pub fn class_mode(&self) -> FeedbackMode {
        lock(&self.shared).class_mode
    }

    pub fn roster(&self) -> Vec<StudentId> {
        self.index.read().unwrap_or_else(|p| p.into_inner()).order.clone()
    }

    fn student(&self, id: &StudentId) -> Result<Arc<Mutex<StudentState>>, ServiceError> {
        let index = self.index.read().unwrap_or_else(|p| p.into_inner());
        index
            .map
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownStudent(id.to_string()))
    }

    fn all_students(&self) -> Vec<Arc<Mutex<StudentState>>> {
        let index = self.index.read().unwrap_or_else(|p| p.into_inner());
        index.order.iter().map(|id| index.map[id].clone()).collect()
    }

    pub fn register_student(&self, id: StudentId, name: Option<String>) -> Result<StudentCard, ServiceError> {
        if id.as_str().is_empty() {
            return Err(ServiceError::MalformedEvent("student id must not be empty".into()));
        }
        self.register_inner(None, self.now(), &id, name)?;
        self.card(&id)
    }

    /// Appends (live, `seq` is `None`) and applies a registration atomically.
    fn register_inner(
        &self,
        seq: Option<u64>,
        ts: TimestampMs,
        id: &StudentId,
        name: Option<String>,
    ) -> Result<(), ServiceError> {
        let mut index = self.index.write().unwrap_or_else(|p| p.into_inner());
        if index.map.contains_key(id) {
            return Err(ServiceError::DuplicateStudent(id.to_string()));
        }
        let mut sh = lock(&self.shared);
        if seq.is_none() {
            sh.log.append(ts, Record::Register { student_id: id.clone(), name: name.clone() })?;
        }
        let st = StudentState::new(id.clone(), name, sh.class_mode, &self.cfg, ts);
        let card = alerts::card(&st.view(), &sh.alerts);
        sh.cards.insert(id.clone(), card.clone());
        sh.push.publish(PushEvent::Card { card });
        index.order.push(id.clone());
        index.map.insert(id.clone(), Arc::new(Mutex::new(st)));
        Ok(())
    }

    /// Validates and processes a raw wire event.
    pub fn submit_value(&self, raw: &Value) -> Result<EventReceipt, ServiceError> {
        let event = event_from_value(raw).map_err(|e| ServiceError::MalformedEvent(e.to_string()))?;
        self.submit_event(event)
    }

    pub fn submit_event(&self, mut event: StudentEvent) -> Result<EventReceipt, ServiceError> {
        self.check_session(event.session_id.as_str())?;
        let handle = self.student(&event.student_id)?;
        let mut st = lock(&handle);
        self.validate_event(&st, &event)?;
        event.timestamp = event.timestamp.max(st.last_ts);
        let ts = event.timestamp;
        let seq = lock(&self.shared).log.append(ts, Record::Event { event: event.clone() })?;
        let recorder = Recorder { inner: &*self.backend, calls: Mutex::new(Vec::new()) };
        let applied = self.apply_event(&mut st, seq, &event, &recorder);
        let calls = recorder.calls.into_inner().expect("recorder lock");
        let mut sh = lock(&self.shared);
        if !calls.is_empty() {
            sh.log.append(ts, Record::Generation { ref_seq: seq, calls })?;
        }
        if applied.score.is_some() {
            sh.log.sync()?;
        }
        let alerts = self.apply_effects(&mut sh, &st, seq, applied.effects);
        Ok(EventReceipt { seq, timestamp: ts, fired: applied.fired, replies: applied.replies, alerts, score: applied.score })
    }

    fn replay_event(&self, seq: u64, event: &StudentEvent, backend: &dyn TextBackend) -> Result<(), ServiceError> {
        let handle = self.student(&event.student_id)?;
        let mut st = lock(&handle);
        self.validate_event(&st, event)?;
        let applied = self.apply_event(&mut st, seq, event, backend);
        let mut sh = lock(&self.shared);
        self.apply_effects(&mut sh, &st, seq, applied.effects);
        Ok(())
    }

    fn validate_event(&self, st: &StudentState, event: &StudentEvent) -> Result<(), ServiceError> {
        match &event.payload {
            EventPayload::Rating { message_id, .. } => {
                let i = st.message(message_id).ok_or_else(|| ServiceError::UnknownMessage(message_id.to_string()))?;
                let entry = &st.conversation[i];
                if entry.author != Author::Agent {
                    return Err(ServiceError::NotAgentMessage(message_id.to_string()));
                }
                if entry.rating.is_some() {
                    return Err(ServiceError::AlreadyRated(message_id.to_string()));
                }
            }
            EventPayload::TaskComplete { task_id } => {
                if st.finished {
                    return Err(ServiceError::AlreadyCompleted(st.id.to_string()));
                }
                let current = &st.current_task(&self.cfg).task_id;
                if task_id != current {
                    return Err(ServiceError::WrongTask { expected: current.to_string(), got: task_id.to_string() });
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn apply_event(&self, st: &mut StudentState, seq: u64, event: &StudentEvent, backend: &dyn TextBackend) -> Applied {
        let ts = event.timestamp;
        st.last_ts = ts;
        st.history.event_times.push(ts);
        let task_id = st.history.current_task.clone();
        let mut applied = Applied { replies: Vec::new(), effects: Vec::new(), score: None, fired: Vec::new() };
        let mut run_findings = None;
        let mut assessment = None;
        let mut question = None;
        match &event.payload {
            EventPayload::Edit { .. } | EventPayload::Activity => {}
            EventPayload::Run { spec } => {
                let findings = self.take_spec(st, spec);
                st.record_run(&findings);
                st.history.runs.push(RunRecord { ts, task_id: task_id.clone(), errors: findings.clone() });
                run_findings = Some(findings);
            }
            EventPayload::Question { question: text, spec } => {
                self.take_spec(st, spec);
                // Silent students never reach the backend, not even for classification.
                let classify_with = (st.mode != FeedbackMode::Silent).then_some(backend);
                let classifier = Classifier::new(classify_with, &self.cfg.llm.params, KeywordTable::builtin());
                let a = classifier.classify_bloom(text, spec).expect("question validated non-empty");
                let qt = classifier.classify_question_type(text).expect("question validated non-empty");
                st.history.questions.push(QuestionRecord {
                    ts,
                    task_id: task_id.clone(),
                    text: text.clone(),
                    assessment: a.clone(),
                    question_type: qt,
                });
                st.questions.push((task_id.clone(), qt));
                st.conversation.push(ConversationEntry {
                    message_id: MessageId::new(format!("m{seq}-0")),
                    author: Author::Student,
                    text: text.clone(),
                    auto_generated: false,
                    mode_at_time: st.mode,
                    style: None,
                    timestamp: ts,
                    rating: None,
                    task_id: task_id.clone(),
                    delivery: None,
                });
                assessment = Some(a);
                question = Some(text.as_str());
            }
            EventPayload::Rating { message_id, value } => {
                let i = st.message(message_id).expect("rating validated");
                let entry = &mut st.conversation[i];
                entry.rating = Some(*value);
                let record = RatingRecord { ts, task_id: entry.task_id.clone(), mode_at_time: entry.mode_at_time, value: *value };
                applied.effects.push(Effect::Rated {
                    task: record.task_id.clone(),
                    value: *value,
                    message_id: message_id.clone(),
                    at: ts,
                });
                st.history.ratings.push(record);
            }
            EventPayload::TaskComplete { .. } => {
                let score = task_score(st, st.current_task(&self.cfg), ts);
                st.history.completed.push(score.clone());
                st.advance(&self.cfg, ts);
                applied.effects.push(Effect::Completed { score: score.clone() });
                applied.score = Some(score);
            }
        }
        st.triggers.record(&self.cfg.triggers, event, run_findings.as_deref(), assessment.as_ref());
        let fired = st.triggers.fire(&self.cfg.triggers, ts);
        self.run_pipeline(st, seq, ts, &fired, question, 1, backend, &mut applied);
        applied
    }

    /// Adopts `spec` as the student's current code and returns its findings.
    fn take_spec(&self, st: &mut StudentState, spec: &str) -> Vec<crate::domain::AnalysisError> {
        let findings = check_spec(spec, &st.current_task(&self.cfg).expected_fields);
        st.history.latest_sections = check_syntax(spec).ok().map(|d| d.sections());
        st.latest_spec = spec.to_owned();
        st.latest_analysis = findings.clone();
        findings
    }

    #[allow(clippy::too_many_arguments)]
    fn run_pipeline(
        &self,
        st: &mut StudentState,
        seq: u64,
        ts: TimestampMs,
        fired: &[Trigger],
        question: Option<&str>,
        first_message: usize,
        backend: &dyn TextBackend,
        applied: &mut Applied,
    ) {
        for t in fired {
            st.history.triggers.push(FiredTrigger { at: t.fired_at, subtype: t.subtype });
            applied.fired.push(t.subtype);
        }
        let Some(top) = fired.first() else { return };
        if st.mode == FeedbackMode::Silent {
            st.outcomes.push(TriggerOutcome { trigger: top.clone(), outcome: Outcome::Silenced });
            return;
        }
        st.history.current_mode = st.mode;
        let review = build_review(&st.history, top);
        let (w, icfg, params) = (&self.cfg.weights, &self.cfg.intervention, &self.cfg.llm.params);
        let intervention = if self.cfg.decision.backend_intervention {
            decide_intervention_via_backend(&review, top, st.mode, &w.intervention, icfg, backend, params)
        } else {
            decide_intervention(&review, top, &w.intervention, icfg)
        };
        st.last_review = Some(review.clone());
        if !intervention.should_intervene {
            st.outcomes.push(TriggerOutcome {
                trigger: top.clone(),
                outcome: Outcome::Withheld { reason: intervention.reason },
            });
            return;
        }
        let origin = if top.subtype == TriggerSubtype::QuestionSubmitted { Origin::UserTriggered } else { Origin::Proactive };
        let message = match question {
            Some(q) if top.subtype == TriggerSubtype::QuestionSubmitted => q.to_owned(),
            _ => describe(top, &st.latest_analysis),
        };
        let task = st.current_task(&self.cfg);
        let qa = st.history.questions.last().filter(|q| q.ts == ts && question.is_some());
        let input = PromptInput {
            review: &review,
            message: &message,
            spec: &st.latest_spec,
            analysis: &st.latest_analysis,
            sections: st.history.latest_sections,
            question_analysis: qa.map(|q| (q.assessment.level, q.assessment.confidence, q.question_type)),
            data_rows: data_rows(&st.latest_spec),
            task_description: Some(task.description.as_str()).filter(|d| !d.is_empty()),
        };
        let set = generate(&input, st.mode, origin, backend, params);
        let ctx = ScoreContext { question, errors: &st.latest_analysis, review: &review };
        let chosen = if self.cfg.decision.backend_selection {
            select_response_via_backend(&set, &ctx, &st.latest_spec, w, backend, params)
        } else {
            select_response(&set, &ctx, w)
        };
        let decision = match chosen {
            Ok(d) => d,
            Err(e) => {
                st.outcomes.push(TriggerOutcome {
                    trigger: top.clone(),
                    outcome: Outcome::Withheld { reason: e.to_string() },
                });
                return;
            }
        };
        let message_id = MessageId::new(format!("m{seq}-{first_message}"));
        let entry = ConversationEntry {
            message_id: message_id.clone(),
            author: Author::Agent,
            text: decision.candidate.text.clone(),
            auto_generated: decision.candidate.auto_generated(),
            mode_at_time: st.mode,
            style: Some(decision.candidate.style),
            timestamp: ts,
            rating: None,
            task_id: st.history.current_task.clone(),
            delivery: Some(DeliveryInfo {
                trigger: top.subtype,
                intervention_reason: intervention.reason,
                justification: decision.justification,
                response_score: decision.score.total,
                degraded: set.degraded,
            }),
        };
        st.conversation.push(entry.clone());
        st.outcomes.push(TriggerOutcome { trigger: top.clone(), outcome: Outcome::Delivered { message_id } });
        applied.effects.push(Effect::Delivered { style: decision.candidate.style, mode: st.mode, at: ts });
        applied.replies.push(entry);
    }

    fn apply_effects(&self, sh: &mut Shared, st: &StudentState, seq: u64, effects: Vec<Effect>) -> Vec<Alert> {
        let mut raised = Vec::new();
        for (k, effect) in effects.into_iter().enumerate() {
            let id = AlertId::new(format!("a{seq}-{k}"));
            let alert = match effect {
                Effect::Delivered { style, mode, at } => sh.alerts.on_feedback_delivered(&st.id, style, mode, id, at),
                Effect::Rated { task, value, message_id, at } => {
                    sh.push.publish(PushEvent::RatingConfirmed {
                        student_id: st.id.clone(),
                        message_id,
                        text: RATING_CONFIRMATION.into(),
                    });
                    sh.alerts.on_rating(&st.id, &task, value, id, at)
                }
                Effect::Completed { score } => sh.alerts.on_task_complete(&st.id, &score, id),
            };
            if let Some(a) = alert {
                sh.push.publish(PushEvent::AlertRaised { alert: a.clone() });
                raised.push(a);
            }
        }
        Self::refresh_card(sh, st);
        raised
    }

    fn refresh_card(sh: &mut Shared, st: &StudentState) {
        let card = alerts::card(&st.view(), &sh.alerts);
        if sh.cards.get(&st.id) != Some(&card) {
            sh.cards.insert(st.id.clone(), card.clone());
            sh.push.publish(PushEvent::Card { card });
        }
    }

    /// Changes the mode of `students`, or of the whole class when `None`.
    pub fn set_mode(&self, mode: FeedbackMode, students: Option<Vec<StudentId>>) -> Result<ModeReceipt, ServiceError> {
        let class_wide = students.is_none();
        let ids = match students {
            Some(ids) => {
                for id in &ids {
                    self.student(id)?;
                }
                let roster = self.roster();
                roster.into_iter().filter(|r| ids.contains(r)).collect()
            }
            None => self.roster(),
        };
        let seq = self.mode_inner(None, self.now(), mode, &ids, class_wide)?;
        Ok(ModeReceipt { seq, mode, student_ids: ids })
    }

    fn ordered(&self, ids: &[StudentId]) -> Result<Vec<Arc<Mutex<StudentState>>>, ServiceError> {
        let roster = self.roster();
        roster.iter().filter(|r| ids.contains(r)).map(|id| self.student(id)).collect()
    }

    /// Holding every affected student keeps the change atomic with respect to
    /// their pipelines.
    fn mode_inner(
        &self,
        seq: Option<u64>,
        ts: TimestampMs,
        mode: FeedbackMode,
        ids: &[StudentId],
        class_wide: bool,
    ) -> Result<u64, ServiceError> {
        let handles = self.ordered(ids)?;
        let mut guards: Vec<_> = handles.iter().map(|h| lock(h)).collect();
        let mut sh = lock(&self.shared);
        let seq = match seq {
            Some(s) => s,
            None => {
                let s = sh.log.append(ts, Record::Mode { mode, student_ids: ids.to_vec(), class_wide })?;
                sh.log.sync()?;
                s
            }
        };
        if class_wide {
            sh.class_mode = mode;
        }
        for (i, st) in guards.iter_mut().enumerate() {
            st.mode = mode;
            st.history.current_mode = mode;
            let task_id = st.history.current_task.clone();
            st.conversation.push(ConversationEntry {
                message_id: MessageId::new(format!("m{seq}-{i}")),
                author: Author::System,
                text: format!("The instructor switched feedback to {mode} mode."),
                auto_generated: true,
                mode_at_time: mode,
                style: None,
                timestamp: ts,
                rating: None,
                task_id,
                delivery: None,
            });
            sh.alerts.on_mode_change(&st.id);
        }
        sh.push.publish(PushEvent::ModeBanner { mode, student_ids: ids.to_vec() });
        for st in &guards {
            Self::refresh_card(&mut sh, st);
        }
        Ok(seq)
    }

    pub fn complete_task(
        &self,
        student: &StudentId,
        task: &TaskId,
        at: Option<TimestampMs>,
    ) -> Result<EventReceipt, ServiceError> {
        let ev = StudentEvent::new(
            student.clone(),
            self.cfg.session.session_id.clone(),
            at.unwrap_or_else(|| self.now()),
            EventPayload::TaskComplete { task_id: task.clone() },
        );
        self.submit_event(ev)
    }

    pub fn rate_message(
        &self,
        student: &StudentId,
        message: &MessageId,
        value: RatingValue,
        at: Option<TimestampMs>,
    ) -> Result<EventReceipt, ServiceError> {
        let ev = StudentEvent::new(
            student.clone(),
            self.cfg.session.session_id.clone(),
            at.unwrap_or_else(|| self.now()),
            EventPayload::Rating { message_id: message.clone(), value },
        );
        self.submit_event(ev)
    }

    /// Evaluates time-based triggers at `now` for every student still working.
    pub fn tick(&self, now: TimestampMs) -> Result<Vec<TickReport>, ServiceError> {
        let mut reports = Vec::new();
        for handle in self.all_students() {
            let mut st = lock(&handle);
            if st.finished || now < st.last_ts || st.triggers.evaluate(&self.cfg.triggers, now).is_empty() {
                continue;
            }
            let seq = lock(&self.shared).log.append(now, Record::Tick { student_id: st.id.clone(), now })?;
            let recorder = Recorder { inner: &*self.backend, calls: Mutex::new(Vec::new()) };
            let applied = self.apply_tick(&mut st, seq, now, &recorder);
            let calls = recorder.calls.into_inner().expect("recorder lock");
            let mut sh = lock(&self.shared);
            if !calls.is_empty() {
                sh.log.append(now, Record::Generation { ref_seq: seq, calls })?;
            }
            self.apply_effects(&mut sh, &st, seq, applied.effects);
            reports.push(TickReport { student_id: st.id.clone(), seq, fired: applied.fired, replies: applied.replies });
        }
        Ok(reports)
    }

    pub fn tick_now(&self) -> Result<Vec<TickReport>, ServiceError> {
        self.tick(self.now())
    }

    fn apply_tick(&self, st: &mut StudentState, seq: u64, now: TimestampMs, backend: &dyn TextBackend) -> Applied {
        st.last_ts = st.last_ts.max(now);
        let fired = st.triggers.fire(&self.cfg.triggers, now);
        let mut applied = Applied { replies: Vec::new(), effects: Vec::new(), score: None, fired: Vec::new() };
        self.run_pipeline(st, seq, now, &fired, None, 0, backend, &mut applied);
        applied
    }

    fn replay_tick(&self, seq: u64, id: &StudentId, now: TimestampMs, backend: &dyn TextBackend) -> Result<(), ServiceError> {
        let handle = self.student(id)?;
        let mut st = lock(&handle);
        let applied = self.apply_tick(&mut st, seq, now, backend);
        let mut sh = lock(&self.shared);
        self.apply_effects(&mut sh, &st, seq, applied.effects);
        Ok(())
    }

    pub fn mark_handled(&self, alert_id: &str) -> Result<Alert, ServiceError> {
        self.handled_inner(false, self.now(), alert_id)
    }

    fn handled_inner(&self, replaying: bool, ts: TimestampMs, alert_id: &str) -> Result<Alert, ServiceError> {
        let student = lock(&self.shared)
            .alerts
            .get(alert_id)
            .map(|a| a.student_id.clone())
            .ok_or_else(|| ServiceError::UnknownAlert(alert_id.to_owned()))?;
        let handle = self.student(&student)?;
        let st = lock(&handle);
        let mut sh = lock(&self.shared);
        if sh.alerts.get(alert_id).is_some_and(|a| a.handled) {
            return Err(ServiceError::AlreadyHandled(alert_id.to_owned()));
        }
        if !replaying {
            sh.log.append(ts, Record::Handled { alert_id: AlertId::new(alert_id) })?;
        }
        let alert = sh.alerts.mark_handled(alert_id)?;
        sh.push.publish(PushEvent::AlertHandled { alert: alert.clone() });
        Self::refresh_card(&mut sh, &st);
        Ok(alert)
    }

    /// Instructor remark attached to a student's conversation, for example
    /// after helping in person.
    pub fn add_note(&self, student: &StudentId, text: &str) -> Result<ConversationEntry, ServiceError> {
        if text.trim().is_empty() {
            return Err(ServiceError::MalformedEvent("note text must not be empty".into()));
        }
        self.note_inner(None, self.now(), student, text)
    }

    fn note_inner(
        &self,
        seq: Option<u64>,
        ts: TimestampMs,
        student: &StudentId,
        text: &str,
    ) -> Result<ConversationEntry, ServiceError> {
        let handle = self.student(student)?;
        let mut st = lock(&handle);
        let seq = match seq {
            Some(s) => s,
            None => lock(&self.shared)
                .log
                .append(ts, Record::Note { student_id: student.clone(), text: text.to_owned() })?,
        };
        let entry = ConversationEntry {
            message_id: MessageId::new(format!("m{seq}-0")),
            author: Author::Instructor,
            text: text.to_owned(),
            auto_generated: false,
            mode_at_time: st.mode,
            style: None,
            timestamp: ts,
            rating: None,
            task_id: st.history.current_task.clone(),
            delivery: None,
        };
        st.conversation.push(entry.clone());
        Ok(entry)
    }

    /// Every alert, ordered by time raised then id.
    pub fn alerts(&self) -> Vec<Alert> {
        let mut out = lock(&self.shared).alerts.alerts().to_vec();
        out.sort_by(|a, b| a.raised_at.cmp(&b.raised_at).then_with(|| a.id.cmp(&b.id)));
        out
    }

    pub fn card(&self, id: &StudentId) -> Result<StudentCard, ServiceError> {
        let handle = self.student(id)?;
        let st = lock(&handle);
        let sh = lock(&self.shared);
        Ok(alerts::card(&st.view(), &sh.alerts))
    }

    pub fn student_detail(&self, id: &StudentId) -> Result<StudentDetail, ServiceError> {
        let handle = self.student(id)?;
        let st = lock(&handle);
        let card = alerts::card(&st.view(), &lock(&self.shared).alerts);
        Ok(StudentDetail {
            student_id: st.id.clone(),
            display_name: st.name.clone(),
            mode: st.mode,
            current_task: st.history.current_task.clone(),
            finished: st.finished,
            task_started_at: st.task_started_at,
            scores: st.history.completed.clone(),
            conversation: st.conversation.clone(),
            outcomes: st.outcomes.clone(),
            latest_spec: st.latest_spec.clone(),
            findings: st.latest_analysis.iter().map(Finding::from).collect(),
            last_review: st.last_review.clone(),
            card,
        })
    }

    pub fn snapshot(&self) -> ClassSnapshot {
        let handles = self.all_students();
        let guards: Vec<_> = handles.iter().map(|h| lock(h)).collect();
        let sh = lock(&self.shared);
        let views: Vec<_> = guards.iter().map(|st| st.view()).collect();
        alerts::snapshot(&views, &sh.alerts)
    }

    /// Opens a dashboard stream. Resuming from a still-buffered epoch replays
    /// what was missed; otherwise the stream starts with a full snapshot.
    pub fn subscribe(&self, token: Option<&str>, resume_from: Option<u64>) -> Result<Subscription, ServiceError> {
        if let Some(expected) = &self.cfg.session.instructor_token {
            if token != Some(expected.as_str()) {
                return Err(ServiceError::Unauthorized);
            }
        }
        let handles = self.all_students();
        let guards: Vec<_> = handles.iter().map(|h| lock(h)).collect();
        let mut sh = lock(&self.shared);
        let Shared { push, alerts: book, .. } = &mut *sh;
        Ok(push.subscribe(resume_from, || {
            let views: Vec<_> = guards.iter().map(|st| st.view()).collect();
            alerts::snapshot(&views, book)
        }))
    }

    pub fn authorize(&self, token: Option<&str>) -> Result<(), ServiceError> {
        match &self.cfg.session.instructor_token {
            Some(expected) if token != Some(expected.as_str()) => Err(ServiceError::Unauthorized),
            _ => Ok(()),
        }
    }

    pub fn push_epoch(&self) -> u64 {
        lock(&self.shared).push.epoch()
    }

    pub fn log_path(&self) -> PathBuf {
        lock(&self.shared).log.path().to_owned()
    }

    pub fn stats(&self) -> SessionStats {
        let handles = self.all_students();
        let guards: Vec<_> = handles.iter().map(|h| lock(h)).collect();
        let sh = lock(&self.shared);
        let mut s = SessionStats {
            records: sh.log.next_seq(),
            students: guards.len(),
            alerts: sh.alerts.alerts().len(),
            ..Default::default()
        };
        for st in &guards {
            s.events += st.history.event_times.len();
            s.questions += st.history.questions.len();
            s.fired_triggers += st.history.triggers.len();
            s.completed_tasks += st.history.completed.len();
            for o in &st.outcomes {
                match o.outcome {
                    Outcome::Delivered { .. } => s.delivered += 1,
                    Outcome::Withheld { .. } => s.withheld += 1,
                    Outcome::Silenced => s.silenced += 1,
                }
            }
        }
        s
    }
}

/// What the agent is told about a trigger it was not asked about.
fn describe(t: &Trigger, findings: &[crate::domain::AnalysisError]) -> String {
    match &t.detail {
        TriggerDetail::Question { question } => question.clone(),
        TriggerDetail::RunFailed { .. } => {
            let lines: Vec<String> = findings.iter().map(crate::analyzer::headline).collect();
            format!("The student's last run failed. {}", lines.join(" "))
        }
        TriggerDetail::Inactivity { duration_secs } => {
            format!("The student has not interacted with the editor for {duration_secs} seconds.")
        }
        TriggerDetail::RepeatedRunFailures { failures, window_secs } => {
            format!("The student's last {failures} runs failed within {window_secs} seconds.")
        }
        TriggerDetail::RepeatedErrors { category, count } => {
            format!("The student has made the same {category} error {count} times in this task.")
        }
        TriggerDetail::BloomShift { from, to } => {
            format!("The student's questions moved from the {from} level to the {to} level.")
        }
    }
}

fn data_rows(spec: &str) -> Option<usize> {
    let v: Value = serde_json::from_str(spec).ok()?;
    v.pointer("/data/values")?.as_array().map(Vec::len)
}
