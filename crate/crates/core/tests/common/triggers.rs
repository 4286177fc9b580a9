//! Random trigger scenarios checked against independent bookkeeping.

use classaid_core::domain::{AnalysisError, ErrorCategory, EventPayload, StudentEvent, TimestampMs};
use classaid_core::triggers::{Trigger, TriggerConfig, TriggerKind, TriggerSubtype, TriggerWindowState};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const S: i64 = 1000;
const IDLE_LIMIT_MS: i64 = 240 * S;
const PAUSE_WINDOW_MS: i64 = 300 * S;
const COOLDOWN_MS: i64 = 120 * S;
const FAILURE_WINDOW_MS: i64 = 120 * S;

#[derive(Debug, Clone)]
pub enum OpKind {
    Edit,
    Activity,
    Question,
    RunOk,
    RunFail(ErrorCategory),
    Complete,
    Rating,
    Tick,
}

#[derive(Debug, Clone)]
pub struct Op {
    pub gap_ms: i64,
    pub kind: OpKind,
}

pub const CATEGORIES: [ErrorCategory; 5] = [
    ErrorCategory::JsonSyntax,
    ErrorCategory::Schema,
    ErrorCategory::Data,
    ErrorCategory::Mark,
    ErrorCategory::Encoding,
];

pub fn kind_from(index: u8, category: u8) -> OpKind {
    match index % 8 {
        0 => OpKind::Edit,
        1 => OpKind::Activity,
        2 => OpKind::Question,
        3 => OpKind::RunOk,
        4 => OpKind::RunFail(CATEGORIES[category as usize % CATEGORIES.len()]),
        5 => OpKind::Complete,
        6 => OpKind::Rating,
        _ => OpKind::Tick,
    }
}

/// Gaps mix bursts, mid-range waits and long pauses so every gate gets exercised.
pub fn random_ops(rng: &mut ChaCha8Rng, len: usize) -> Vec<Op> {
    (0..len)
        .map(|_| {
            let gap_ms = match rng.random_range(0..10) {
                0..4 => rng.random_range(0..5 * S),
                4..7 => rng.random_range(5 * S..60 * S),
                7..9 => rng.random_range(60 * S..200 * S),
                _ => rng.random_range(200 * S..400 * S),
            };
            let tick_bias = rng.random_bool(0.35);
            let kind = if tick_bias { OpKind::Tick } else { kind_from(rng.random_range(0..7), rng.random_range(0..5)) };
            Op { gap_ms, kind }
        })
        .collect()
}

#[derive(Debug, Default, Clone)]
pub struct Tally {
    pub fires: usize,
    pub inactivity: usize,
    pub run_failures: usize,
    pub passive: usize,
}

fn payload(kind: &OpKind) -> Option<(EventPayload, Option<Vec<AnalysisError>>)> {
    let spec = || "{}".to_owned();
    Some(match kind {
        OpKind::Edit => (EventPayload::Edit { delta_len: 3 }, None),
        OpKind::Activity => (EventPayload::Activity, None),
        OpKind::Question => (EventPayload::Question { question: "why?".into(), spec: spec() }, None),
        OpKind::RunOk => (EventPayload::Run { spec: spec() }, Some(vec![])),
        OpKind::RunFail(c) => (EventPayload::Run { spec: spec() }, Some(vec![AnalysisError::new(*c, "broken")])),
        OpKind::Complete => (EventPayload::TaskComplete { task_id: "t1".into() }, None),
        OpKind::Rating => (
            EventPayload::Rating { message_id: "m1-1".into(), value: classaid_core::domain::RatingValue::Like },
            None,
        ),
        OpKind::Tick => return None,
    })
}

/// Replays `ops` through the default trigger rules and checks each
/// evaluation against separately tracked state. Returns what fired.
pub fn check_sequence(ops: &[Op]) -> Result<Tally, String> {
    let cfg = TriggerConfig::default();
    let mut state = TriggerWindowState::new("s1".into(), 0);
    let mut now: TimestampMs = 0;
    let mut last_activity: TimestampMs = 0;
    let mut failures: Vec<TimestampMs> = Vec::new();
    let mut non_passive_fires: Vec<TimestampMs> = Vec::new();
    let mut inactivity_fires: Vec<TimestampMs> = Vec::new();
    let mut tally = Tally::default();

    for (i, op) in ops.iter().enumerate() {
        now += op.gap_ms;
        let wants_passive = matches!(op.kind, OpKind::Question | OpKind::RunFail(_));
        if let Some((p, analysis)) = payload(&op.kind) {
            let event = StudentEvent::new("s1", "c1", now, p);
            state.record(&cfg, &event, analysis.as_deref(), None);
            match op.kind {
                OpKind::Rating => {}
                OpKind::RunFail(_) => {
                    last_activity = now;
                    failures.push(now);
                }
                OpKind::RunOk | OpKind::Complete => {
                    last_activity = now;
                    failures.clear();
                }
                _ => last_activity = now,
            }
        }

        let idle = now - last_activity;
        let cooling = non_passive_fires.last().is_some_and(|&t| now - t < COOLDOWN_MS);
        let pauses = inactivity_fires.iter().filter(|&&t| now - t < PAUSE_WINDOW_MS).count();
        let recent_failures = failures.iter().filter(|&&t| now - t <= FAILURE_WINDOW_MS).count();

        let fired = state.fire(&cfg, now);
        let at = |msg: String| format!("op {i} at {now} ms ({:?}): {msg}; fired {:?}", op.kind, subtypes(&fired));

        let passive: Vec<&Trigger> = fired.iter().filter(|t| t.is_passive()).collect();
        let active: Vec<&Trigger> = fired.iter().filter(|t| !t.is_passive()).collect();
        if wants_passive != (passive.len() == 1) || passive.len() > 1 {
            return Err(at("passive trigger must accompany exactly questions and failed runs".into()));
        }
        if active.len() > 1 {
            return Err(at("more than one non-passive trigger".into()));
        }
        let ranks: Vec<TriggerKind> = fired.iter().map(|t| t.kind).collect();
        if ranks.windows(2).any(|w| w[0] > w[1]) {
            return Err(at("output not ordered by priority".into()));
        }
        if cooling && !active.is_empty() {
            return Err(at("fired during cooldown".into()));
        }
        let first = active.first();
        if !cooling && idle > IDLE_LIMIT_MS && pauses < 2 && first.map(|t| t.subtype) != Some(TriggerSubtype::Inactivity) {
            return Err(at(format!("idle {idle} ms with open gates must fire inactivity")));
        }
        if !cooling && recent_failures >= 3 && first.map(|t| t.kind) != Some(TriggerKind::Proactive) {
            return Err(at(format!("{recent_failures} recent failures must fire a proactive trigger")));
        }
        if let Some(t) = active.first() {
            match t.subtype {
                TriggerSubtype::Inactivity => {
                    if idle <= IDLE_LIMIT_MS || pauses >= 2 {
                        return Err(at(format!("inactivity after {idle} ms with {pauses} pauses in window")));
                    }
                    if t.inactivity_secs() != Some((idle / S) as u64) {
                        return Err(at("inactivity duration disagrees".into()));
                    }
                    inactivity_fires.push(now);
                    tally.inactivity += 1;
                }
                TriggerSubtype::RepeatedRunFailures => {
                    if recent_failures < 3 {
                        return Err(at(format!("run-failure trigger with {recent_failures} recent failures")));
                    }
                    failures.clear();
                    tally.run_failures += 1;
                }
                _ => {}
            }
            if let Some(&prev) = non_passive_fires.last() {
                if now - prev < COOLDOWN_MS {
                    return Err(at("non-passive fires closer than the cooldown".into()));
                }
            }
            non_passive_fires.push(now);
            tally.fires += 1;
        }
        tally.passive += passive.len();
    }

    for (k, &t) in inactivity_fires.iter().enumerate() {
        let in_window = inactivity_fires[..=k].iter().filter(|&&u| t - u < PAUSE_WINDOW_MS).count();
        if in_window > 2 {
            return Err(format!("{in_window} inactivity fires in the 300 s window ending at {t}"));
        }
    }
    Ok(tally)
}

fn subtypes(fired: &[Trigger]) -> Vec<TriggerSubtype> {
    fired.iter().map(|t| t.subtype).collect()
}
