//! Turns the per-student event stream into prioritized triggers.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cognition::CognitiveAssessment;
use crate::domain::{
    AnalysisError, BloomLevel, ErrorCategory, EventPayload, StudentEvent, StudentId, TimestampMs,
};

const MS: i64 = 1000;

/// Thresholds, all overridable under `[triggers]` in the service config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TriggerConfig {
    pub inactivity_secs: u64,
    pub pause_window_secs: u64,
    pub max_pause_fires: usize,
    pub cooldown_secs: u64,
    pub run_failure_count: usize,
    pub run_failure_window_secs: u64,
    pub repeated_error_count: usize,
    pub bloom_window: usize,
    pub bloom_shift: u8,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        Self {
            inactivity_secs: 240,
            pause_window_secs: 300,
            max_pause_fires: 2,
            cooldown_secs: 120,
            run_failure_count: 3,
            run_failure_window_secs: 120,
            repeated_error_count: 3,
            bloom_window: 5,
            bloom_shift: 2,
        }
    }
}

impl TriggerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.run_failure_count == 0 || self.repeated_error_count == 0 {
            return Err("trigger counts must be positive".into());
        }
        if self.bloom_window < 2 {
            return Err("bloom_window must be at least 2".into());
        }
        if self.bloom_shift == 0 || self.bloom_shift > 5 {
            return Err("bloom_shift must be within 1..=5".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerKind {
    Passive,
    Proactive,
    Predictive,
}

impl TriggerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TriggerKind::Passive => "passive",
            TriggerKind::Proactive => "proactive",
            TriggerKind::Predictive => "predictive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerSubtype {
    QuestionSubmitted,
    RunFailed,
    Inactivity,
    RepeatedRunFailures,
    RepeatedErrors,
    BloomShift,
}

impl TriggerSubtype {
    pub const ALL: [TriggerSubtype; 6] = [
        TriggerSubtype::QuestionSubmitted,
        TriggerSubtype::RunFailed,
        TriggerSubtype::Inactivity,
        TriggerSubtype::RepeatedRunFailures,
        TriggerSubtype::RepeatedErrors,
        TriggerSubtype::BloomShift,
    ];

    pub fn kind(self) -> TriggerKind {
        match self {
            TriggerSubtype::QuestionSubmitted | TriggerSubtype::RunFailed => TriggerKind::Passive,
            TriggerSubtype::Inactivity | TriggerSubtype::RepeatedRunFailures => TriggerKind::Proactive,
            TriggerSubtype::RepeatedErrors | TriggerSubtype::BloomShift => TriggerKind::Predictive,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TriggerSubtype::QuestionSubmitted => "question_submitted",
            TriggerSubtype::RunFailed => "run_failed",
            TriggerSubtype::Inactivity => "inactivity",
            TriggerSubtype::RepeatedRunFailures => "repeated_run_failures",
            TriggerSubtype::RepeatedErrors => "repeated_errors",
            TriggerSubtype::BloomShift => "bloom_shift",
        }
    }
}

impl fmt::Display for TriggerSubtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TriggerDetail {
    Question { question: String },
    RunFailed { categories: Vec<ErrorCategory> },
    Inactivity { duration_secs: u64 },
    RepeatedRunFailures { failures: usize, window_secs: u64 },
    RepeatedErrors { category: ErrorCategory, count: usize },
    BloomShift { from: BloomLevel, to: BloomLevel },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trigger {
    pub kind: TriggerKind,
    pub subtype: TriggerSubtype,
    pub student_id: StudentId,
    pub fired_at: TimestampMs,
    pub detail: TriggerDetail,
}

impl Trigger {
    pub fn new(subtype: TriggerSubtype, student_id: StudentId, fired_at: TimestampMs, detail: TriggerDetail) -> Self {
        Self {
            kind: subtype.kind(),
            subtype,
            student_id,
            fired_at,
            detail,
        }
    }

    pub fn is_passive(&self) -> bool {
        self.kind == TriggerKind::Passive
    }

    /// Idle seconds for inactivity triggers.
    pub fn inactivity_secs(&self) -> Option<u64> {
        match self.detail {
            TriggerDetail::Inactivity { duration_secs } => Some(duration_secs),
            _ => None,
        }
    }
}

/// Passive < Proactive < Predictive, then `fired_at`, then subtype name.
pub fn sort_triggers(triggers: &mut [Trigger]) {
    triggers.sort_by(|a, b| {
        a.kind
            .cmp(&b.kind)
            .then(a.fired_at.cmp(&b.fired_at))
            .then(a.subtype.as_str().cmp(b.subtype.as_str()))
    });
}

/// A help request carried by the event itself, if any.
pub fn on_passive(event: &StudentEvent, analysis: Option<&[AnalysisError]>) -> Option<Trigger> {
    let sid = event.student_id.clone();
    match &event.payload {
        EventPayload::Question { question, .. } => Some(Trigger::new(
            TriggerSubtype::QuestionSubmitted,
            sid,
            event.timestamp,
            TriggerDetail::Question { question: question.clone() },
        )),
        EventPayload::Run { .. } => {
            let errors = analysis.filter(|a| !a.is_empty())?;
            Some(Trigger::new(
                TriggerSubtype::RunFailed,
                sid,
                event.timestamp,
                TriggerDetail::RunFailed {
                    categories: errors.iter().map(|e| e.category).collect(),
                },
            ))
        }
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerWindowState {
    pub student_id: StudentId,
    pub last_non_passive_fire: Option<TimestampMs>,
    pub pause_fires_in_window: VecDeque<TimestampMs>,
    pub last_activity: TimestampMs,
    pub recent_run_failures: VecDeque<TimestampMs>,
    pub bloom_history: VecDeque<CognitiveAssessment>,
    /// Categories observed in failed runs of the current task.
    pub error_history: Vec<ErrorCategory>,
    /// Help request from the most recently recorded event, not yet evaluated.
    pub pending_passive: Option<Trigger>,
}

impl TriggerWindowState {
    pub fn new(student_id: StudentId, started_at: TimestampMs) -> Self {
        Self {
            student_id,
            last_non_passive_fire: None,
            pause_fires_in_window: VecDeque::new(),
            last_activity: started_at,
            recent_run_failures: VecDeque::new(),
            bloom_history: VecDeque::new(),
            error_history: Vec::new(),
            pending_passive: None,
        }
    }

    pub fn record(
        &mut self,
        cfg: &TriggerConfig,
        event: &StudentEvent,
        analysis: Option<&[AnalysisError]>,
        assessment: Option<&CognitiveAssessment>,
    ) {
        debug_assert_eq!(event.student_id, self.student_id);
        let ts = event.timestamp;
        self.pending_passive = on_passive(event, analysis);
        match &event.payload {
            EventPayload::Edit { .. } | EventPayload::Activity | EventPayload::Question { .. } => {
                self.last_activity = ts;
            }
            EventPayload::Run { .. } => {
                self.last_activity = ts;
                match analysis {
                    Some(errors) if !errors.is_empty() => {
                        self.recent_run_failures.push_back(ts);
                        self.error_history.extend(errors.iter().map(|e| e.category));
                    }
                    _ => self.recent_run_failures.clear(),
                }
            }
            EventPayload::TaskComplete { .. } => {
                // The next task starts now, with a clean slate.
                self.last_activity = ts;
                self.error_history.clear();
                self.recent_run_failures.clear();
            }
            EventPayload::Rating { .. } => {}
        }
        if let Some(a) = assessment {
            self.bloom_history.push_back(a.clone());
            while self.bloom_history.len() > cfg.bloom_window {
                self.bloom_history.pop_front();
            }
        }
        let horizon = cfg.run_failure_window_secs as i64 * MS;
        while self.recent_run_failures.front().is_some_and(|&t| ts - t > horizon) {
            self.recent_run_failures.pop_front();
        }
    }

    fn in_cooldown(&self, cfg: &TriggerConfig, now: TimestampMs) -> bool {
        self.last_non_passive_fire
            .is_some_and(|t| now - t < cfg.cooldown_secs as i64 * MS)
    }

    fn pause_fires_within(&self, cfg: &TriggerConfig, now: TimestampMs) -> usize {
        let window = cfg.pause_window_secs as i64 * MS;
        self.pause_fires_in_window
            .iter()
            .filter(|&&t| now - t < window)
            .count()
    }

    /// Non-passive conditions currently met, before gating, in priority order.
    pub fn candidates(&self, cfg: &TriggerConfig, now: TimestampMs) -> Vec<Trigger> {
        let sid = || self.student_id.clone();
        let mut out = Vec::new();
        let idle = now - self.last_activity;
        if idle > cfg.inactivity_secs as i64 * MS {
            out.push(Trigger::new(
                TriggerSubtype::Inactivity,
                sid(),
                now,
                TriggerDetail::Inactivity { duration_secs: (idle / MS) as u64 },
            ));
        }
        let window = cfg.run_failure_window_secs as i64 * MS;
        let failures = self
            .recent_run_failures
            .iter()
            .filter(|&&t| t <= now && now - t <= window)
            .count();
        if failures >= cfg.run_failure_count {
            out.push(Trigger::new(
                TriggerSubtype::RepeatedRunFailures,
                sid(),
                now,
                TriggerDetail::RepeatedRunFailures {
                    failures,
                    window_secs: cfg.run_failure_window_secs,
                },
            ));
        }
        let mut counts: BTreeMap<ErrorCategory, usize> = BTreeMap::new();
        for c in &self.error_history {
            *counts.entry(*c).or_default() += 1;
        }
        if let Some((&category, &count)) = counts
            .iter()
            .filter(|(_, &n)| n >= cfg.repeated_error_count)
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        {
            out.push(Trigger::new(
                TriggerSubtype::RepeatedErrors,
                sid(),
                now,
                TriggerDetail::RepeatedErrors { category, count },
            ));
        }
        if self.bloom_history.len() >= cfg.bloom_window {
            let recent: Vec<_> = self.bloom_history.iter().rev().take(cfg.bloom_window).collect();
            let (newest, oldest) = (recent[0].level, recent[recent.len() - 1].level);
            if (newest.rank() as i16 - oldest.rank() as i16).unsigned_abs() >= cfg.bloom_shift as u16 {
                out.push(Trigger::new(
                    TriggerSubtype::BloomShift,
                    sid(),
                    now,
                    TriggerDetail::BloomShift { from: oldest, to: newest },
                ));
            }
        }
        sort_triggers(&mut out);
        out
    }

    /// Triggers that would fire at `now`. Read-only; see [`commit`](Self::commit).
    ///
    /// Passive help requests always pass. At most one non-passive trigger is
    /// returned per call, and none while the cooldown is running.
    pub fn evaluate(&self, cfg: &TriggerConfig, now: TimestampMs) -> Vec<Trigger> {
        let mut out: Vec<Trigger> = self.pending_passive.iter().cloned().collect();
        if !self.in_cooldown(cfg, now) {
            let pause_full = self.pause_fires_within(cfg, now) >= cfg.max_pause_fires;
            if let Some(t) = self
                .candidates(cfg, now)
                .into_iter()
                .find(|t| !(t.subtype == TriggerSubtype::Inactivity && pause_full))
            {
                out.push(t);
            }
        }
        sort_triggers(&mut out);
        out
    }

    /// Records that `fired` (the output of [`evaluate`](Self::evaluate)) went out.
    pub fn commit(&mut self, cfg: &TriggerConfig, now: TimestampMs, fired: &[Trigger]) {
        self.pending_passive = None;
        for t in fired.iter().filter(|t| !t.is_passive()) {
            self.last_non_passive_fire = Some(now);
            match &t.detail {
                TriggerDetail::Inactivity { .. } => self.pause_fires_in_window.push_back(now),
                TriggerDetail::RepeatedRunFailures { .. } => self.recent_run_failures.clear(),
                TriggerDetail::RepeatedErrors { category, .. } => {
                    self.error_history.retain(|c| c != category)
                }
                TriggerDetail::BloomShift { .. } => {
                    let keep = self.bloom_history.pop_back();
                    self.bloom_history.clear();
                    self.bloom_history.extend(keep);
                }
                TriggerDetail::Question { .. } | TriggerDetail::RunFailed { .. } => {}
            }
        }
        let window = cfg.pause_window_secs as i64 * MS;
        self.pause_fires_in_window.retain(|&t| now - t < window);
    }

    /// `evaluate` followed by `commit`.
    pub fn fire(&mut self, cfg: &TriggerConfig, now: TimestampMs) -> Vec<Trigger> {
        let fired = self.evaluate(cfg, now);
        self.commit(cfg, now, &fired);
        fired
    }
}
