//! Discrete-event loop that plays a scenario against a driver.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use crate::alerts::AlertKind;
use crate::analyzer::check_spec;
use crate::config::TaskConfig;
use crate::domain::{
    ErrorCategory, EventPayload, FeedbackMode, FeedbackStyle, MessageId, QuestionType, RatingValue, StudentEvent,
    StudentId, TimestampMs,
};
use crate::session::{Author, ConversationEntry};
use crate::triggers::{TriggerKind, TriggerSubtype};

use super::driver::{Driver, DriverError};
use super::persona::Persona;
use super::scenario::{InstructorAction, Scenario};
use super::transcript::{
    Action, LabeledSnapshot, Metrics, ReplyRef, Step, StepResult, StudentMetrics, Transcript,
};
use super::SimError;

/// Wall-clock origin of every simulated session.
pub const SIM_EPOCH_MS: TimestampMs = 1_700_000_000_000;

/// Breaks `solution` so that the analyzer reports `category`.
pub fn mutate(solution: &str, category: ErrorCategory) -> String {
    let Ok(mut doc) = serde_json::from_str::<Value>(solution) else {
        return solution.to_owned();
    };
    let obj = doc.as_object_mut().expect("solutions are objects");
    match category {
        ErrorCategory::JsonSyntax => {
            let text = serde_json::to_string_pretty(&doc).expect("values serialize");
            let cut = text.rfind('}').unwrap_or(text.len());
            return text[..cut].to_owned();
        }
        ErrorCategory::Schema => {
            obj.insert("$schema".into(), Value::String("https://example.com/chart-schema.json".into()));
        }
        ErrorCategory::Data => {
            obj.remove("data");
        }
        ErrorCategory::Mark => {
            obj.insert("mark".into(), Value::String("bars".into()));
        }
        ErrorCategory::Encoding => {
            obj.remove("encoding");
        }
    }
    serde_json::to_string_pretty(&doc).expect("values serialize")
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

fn secs_to_ms(s: f64) -> i64 {
    (s * 1000.0).round() as i64
}

#[derive(Debug, Clone)]
enum Pending {
    Tick,
    Instructor(usize),
    Act(usize),
    Rate { student: usize, message_id: MessageId, value: RatingValue },
}

struct SimStudent {
    id: StudentId,
    persona: Persona,
    rng: ChaCha8Rng,
    task: usize,
    task_started: i64,
    task_target: i64,
    error_rate: f64,
    spec: String,
    last_clean: bool,
    runs_in_task: usize,
    done: bool,
    mode: FeedbackMode,
    m: StudentMetrics,
}

struct Runner<'a> {
    scenario: &'a Scenario,
    driver: &'a mut dyn Driver,
    students: Vec<SimStudent>,
    queue: BTreeMap<(i64, u64), Pending>,
    order: u64,
    steps: Vec<Step>,
    snapshots: Vec<LabeledSnapshot>,
    metrics: Metrics,
}

fn fatal(e: DriverError) -> SimError {
    match e {
        DriverError::Unreachable(m) => SimError::EndpointUnreachable(m),
        other => SimError::Driver(other.to_string()),
    }
}

/// Mixes the master seed into a student's own seed.
fn student_seed(master: u64, own: u64) -> u64 {
    own ^ master.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17)
}

/// Plays `scenario` to its end. The same scenario, seed and session produce
/// the same transcript.
pub fn run(scenario: &Scenario, driver: &mut dyn Driver, seed: u64) -> Result<Transcript, SimError> {
    let initial = scenario.service.session.initial_mode;
    let students = scenario
        .students
        .iter()
        .map(|a| {
            let persona = scenario.persona_of(a).clone();
            SimStudent {
                id: a.student_id.clone(),
                rng: ChaCha8Rng::seed_from_u64(student_seed(seed, a.rng_seed)),
                error_rate: persona.errors.rate,
                m: StudentMetrics { persona: persona.name.clone(), ..Default::default() },
                persona,
                task: 0,
                task_started: 0,
                task_target: 0,
                spec: String::new(),
                last_clean: false,
                runs_in_task: 0,
                done: false,
                mode: initial,
            }
        })
        .collect();
    let mut r = Runner {
        scenario,
        driver,
        students,
        queue: BTreeMap::new(),
        order: 0,
        steps: Vec::new(),
        snapshots: Vec::new(),
        metrics: Metrics::default(),
    };
    r.start()?;
    r.main_loop()?;
    r.finish(seed)
}

impl Runner<'_> {
    fn push(&mut self, at: i64, p: Pending) {
        self.order += 1;
        self.queue.insert((at, self.order), p);
    }

    fn task(&self, i: usize) -> &TaskConfig {
        &self.scenario.service.session.tasks[i]
    }

    fn solution(&self, i: usize) -> &str {
        self.task(i).solution.as_deref().expect("scenarios require solutions")
    }

    fn start(&mut self) -> Result<(), SimError> {
        self.driver.set_clock(SIM_EPOCH_MS).map_err(fatal)?;
        for a in &self.scenario.students {
            self.driver.register(&a.student_id, a.name.as_deref()).map_err(fatal)?;
        }
        for i in 0..self.students.len() {
            let s = &mut self.students[i];
            s.task_target = secs_to_ms(uniform(&mut s.rng, s.persona.task_secs));
            let first = secs_to_ms(uniform(&mut s.rng, s.persona.think_secs));
            self.push(first, Pending::Act(i));
        }
        for (i, t) in self.scenario.timeline.iter().enumerate() {
            self.push(t.at_secs as i64 * 1000, Pending::Instructor(i));
        }
        let tick = self.scenario.tick_secs as i64 * 1000;
        let end = self.scenario.duration_secs as i64 * 1000;
        let mut t = tick;
        while t <= end {
            self.push(t, Pending::Tick);
            t += tick;
        }
        Ok(())
    }

    fn main_loop(&mut self) -> Result<(), SimError> {
        let end = self.scenario.duration_secs as i64 * 1000;
        while let Some(((at, _), pending)) = self.queue.pop_first() {
            if at > end {
                break;
            }
            self.driver.set_clock(SIM_EPOCH_MS + at).map_err(fatal)?;
            match pending {
                Pending::Tick => self.tick(at)?,
                Pending::Instructor(i) => self.instructor(at, i)?,
                Pending::Act(i) => self.act(at, i)?,
                Pending::Rate { student, message_id, value } => {
                    let ev = self.event(student, at, EventPayload::Rating { message_id: message_id.clone(), value });
                    self.submit(at, student, ev, Action::Rate { message_id, value })?;
                }
            }
        }
        Ok(())
    }

    fn event(&self, i: usize, at: i64, payload: EventPayload) -> StudentEvent {
        StudentEvent::new(
            self.students[i].id.clone(),
            self.scenario.service.session.session_id.clone(),
            SIM_EPOCH_MS + at,
            payload,
        )
    }

    fn count_fired(&mut self, student: usize, fired: &[TriggerSubtype]) {
        for f in fired {
            *self.metrics.triggers_by_type.entry(f.as_str().to_owned()).or_default() += 1;
            if f.kind() == TriggerKind::Passive {
                self.students[student].m.passive_triggers += 1;
            }
        }
    }

    /// Books replies and lets the student react to them.
    fn take_replies(&mut self, at: i64, student: usize, replies: &[ConversationEntry]) -> Vec<ReplyRef> {
        let mut refs = Vec::new();
        for reply in replies.iter().filter(|r| r.author == Author::Agent) {
            self.metrics.agent_messages += 1;
            if let Some(style) = reply.style {
                *self.metrics.feedback_by_style.entry(style.as_str().to_owned()).or_default() += 1;
            }
            let s = &mut self.students[student];
            s.m.agent_messages += 1;
            if s.mode == FeedbackMode::Silent {
                self.metrics.silent_agent_messages += 1;
            }
            s.error_rate *= 1.0 - s.persona.errors.learning;
            let rp = s.persona.ratings;
            if s.rng.random::<f64>() < rp.probability {
                let dislike = match reply.style {
                    Some(FeedbackStyle::Technical) => rp.dislike_technical,
                    _ => rp.dislike_heuristic,
                };
                let value = if s.rng.random::<f64>() < dislike { RatingValue::Dislike } else { RatingValue::Like };
                let delay = secs_to_ms(uniform(&mut s.rng, rp.delay_secs)).max(1);
                self.push(at + delay, Pending::Rate { student, message_id: reply.message_id.clone(), value });
            }
            refs.push(ReplyRef {
                student_id: self.students[student].id.clone(),
                message_id: reply.message_id.clone(),
                style: reply.style,
                mode_at_time: reply.mode_at_time,
            });
        }
        refs
    }

    fn submit(&mut self, at: i64, i: usize, ev: StudentEvent, action: Action) -> Result<bool, SimError> {
        let actor = self.students[i].id.to_string();
        let result = match self.driver.submit(&ev) {
            Ok(receipt) => {
                self.metrics.events_emitted += 1;
                self.students[i].m.events += 1;
                self.count_fired(i, &receipt.fired);
                if let Some(score) = &receipt.score {
                    self.metrics
                        .scores
                        .entry(actor.clone())
                        .or_default()
                        .insert(score.task_id.to_string(), score.score);
                }
                let replies = self.take_replies(at, i, &receipt.replies);
                StepResult {
                    seq: Some(receipt.seq),
                    fired: receipt.fired,
                    replies,
                    alerts: receipt.alerts.into_iter().map(|a| a.id).collect(),
                    error: None,
                }
            }
            Err(DriverError::Rejected { code, message }) => {
                self.metrics.events_rejected += 1;
                StepResult { error: Some(format!("{code}: {message}")), ..Default::default() }
            }
            Err(e) => return Err(fatal(e)),
        };
        let ok = result.error.is_none();
        self.steps.push(Step { at_ms: at, actor, action, result });
        Ok(ok)
    }

    fn act(&mut self, at: i64, i: usize) -> Result<(), SimError> {
        if self.students[i].done {
            return Ok(());
        }
        let elapsed = at - self.students[i].task_started;
        let (due, clean) = (elapsed >= self.students[i].task_target, self.students[i].last_clean);
        if due && clean {
            self.complete(at, i)?;
        } else if due {
            self.run_spec(at, i)?;
        } else {
            let s = &mut self.students[i];
            let a = s.persona.actions;
            let q_weight = if s.m.questions < s.persona.questions.max { a.question } else { 0.0 };
            let total = a.edit + a.run + q_weight + a.activity;
            let mut roll = s.rng.random::<f64>() * total;
            let choice = [a.edit, a.run, q_weight, a.activity]
                .iter()
                .position(|w| {
                    roll -= w;
                    roll < 0.0
                })
                .unwrap_or(1);
            match choice {
                0 => {
                    let delta_len = s.rng.random_range(1..80);
                    let ev = self.event(i, at, EventPayload::Edit { delta_len });
                    self.submit(at, i, ev, Action::Edit { delta_len })?;
                }
                2 => self.ask(at, i)?,
                3 => {
                    let ev = self.event(i, at, EventPayload::Activity);
                    self.submit(at, i, ev, Action::Activity)?;
                }
                _ => self.run_spec(at, i)?,
            }
        }
        let s = &mut self.students[i];
        if !s.done {
            let mut gap = uniform(&mut s.rng, s.persona.think_secs);
            if s.rng.random::<f64>() < s.persona.pause.probability {
                gap = uniform(&mut s.rng, s.persona.pause.secs);
            }
            self.push(at + secs_to_ms(gap).max(1), Pending::Act(i));
        }
        Ok(())
    }

    fn run_spec(&mut self, at: i64, i: usize) -> Result<(), SimError> {
        let solution = self.solution(self.students[i].task).to_owned();
        let expected = self.task(self.students[i].task).expected_fields.clone();
        let s = &mut self.students[i];
        let wants_clean = s.rng.random::<f64>() >= s.error_rate;
        let broken = if wants_clean && s.persona.clean_allowed(s.m.runs, s.m.failed_runs) {
            None
        } else {
            Some(s.persona.error_category(&mut s.rng))
        };
        let spec = match broken {
            Some(c) => mutate(&solution, c),
            None => solution,
        };
        let clean = check_spec(&spec, &expected).is_empty();
        let ev = self.event(i, at, EventPayload::Run { spec: spec.clone() });
        if self.submit(at, i, ev, Action::Run { broken })? {
            let s = &mut self.students[i];
            s.m.runs += 1;
            s.runs_in_task += 1;
            if !clean {
                s.m.failed_runs += 1;
            }
            s.last_clean = clean;
            s.spec = spec;
        }
        Ok(())
    }

    fn ask(&mut self, at: i64, i: usize) -> Result<(), SimError> {
        let s = &mut self.students[i];
        let (intent, text) = s.persona.question(&mut s.rng, s.m.questions, s.m.answer_seeking_questions);
        let spec = s.spec.clone();
        let ev = self.event(i, at, EventPayload::Question { question: text.clone(), spec });
        if self.submit(at, i, ev, Action::Question { intent, text })? {
            let s = &mut self.students[i];
            s.m.questions += 1;
            if intent == QuestionType::AnswerSeeking {
                s.m.answer_seeking_questions += 1;
            }
        }
        Ok(())
    }

    fn complete(&mut self, at: i64, i: usize) -> Result<(), SimError> {
        let task_id = self.task(self.students[i].task).task_id.clone();
        let ev = self.event(i, at, EventPayload::TaskComplete { task_id: task_id.clone() });
        if self.submit(at, i, ev, Action::Complete { task_id })? {
            let n_tasks = self.scenario.service.session.tasks.len();
            let s = &mut self.students[i];
            s.m.completed_tasks += 1;
            s.task += 1;
            s.task_started = at;
            s.last_clean = false;
            s.runs_in_task = 0;
            s.spec.clear();
            if s.task >= n_tasks {
                s.done = true;
            } else {
                s.task_target = secs_to_ms(uniform(&mut s.rng, s.persona.task_secs));
            }
        }
        Ok(())
    }

    fn tick(&mut self, at: i64) -> Result<(), SimError> {
        let reports = match self.driver.tick(SIM_EPOCH_MS + at) {
            Ok(r) => r,
            Err(DriverError::Rejected { code, message }) => {
                self.steps.push(Step {
                    at_ms: at,
                    actor: "clock".into(),
                    action: Action::Tick,
                    result: StepResult { error: Some(format!("{code}: {message}")), ..Default::default() },
                });
                return Ok(());
            }
            Err(e) => return Err(fatal(e)),
        };
        for report in reports {
            let Some(i) = self.students.iter().position(|s| s.id == report.student_id) else {
                continue;
            };
            self.count_fired(i, &report.fired);
            let replies = self.take_replies(at, i, &report.replies);
            self.steps.push(Step {
                at_ms: at,
                actor: report.student_id.to_string(),
                action: Action::Tick,
                result: StepResult { seq: Some(report.seq), fired: report.fired, replies, ..Default::default() },
            });
        }
        Ok(())
    }

    fn instructor(&mut self, at: i64, index: usize) -> Result<(), SimError> {
        let entry = self.scenario.timeline[index].clone();
        let (action, result) = match entry.action {
            InstructorAction::Mode { mode, students } => {
                let result = match self.driver.set_mode(mode, students.clone()) {
                    Ok(receipt) => {
                        for s in &mut self.students {
                            if receipt.student_ids.contains(&s.id) {
                                s.mode = mode;
                            }
                        }
                        StepResult { seq: Some(receipt.seq), ..Default::default() }
                    }
                    Err(DriverError::Rejected { code, message }) => {
                        StepResult { error: Some(format!("{code}: {message}")), ..Default::default() }
                    }
                    Err(e) => return Err(fatal(e)),
                };
                (Action::Mode { mode, students }, result)
            }
            InstructorAction::HandleAlerts { kind } => {
                let open: Vec<_> = self
                    .driver
                    .alerts()
                    .map_err(fatal)?
                    .into_iter()
                    .filter(|a| !a.handled && kind.is_none_or(|k| a.kind == k))
                    .collect();
                let mut handled = Vec::new();
                let mut error = None;
                for a in open {
                    match self.driver.mark_handled(&a.id) {
                        Ok(_) => handled.push(a.id),
                        Err(DriverError::Rejected { code, message }) => error = Some(format!("{code}: {message}")),
                        Err(e) => return Err(fatal(e)),
                    }
                }
                (Action::HandleAlerts { handled: handled.clone() }, StepResult { alerts: handled, error, ..Default::default() })
            }
        };
        self.steps.push(Step { at_ms: at, actor: "instructor".into(), action, result });
        let snapshot = self.driver.snapshot().map_err(fatal)?;
        self.snapshots.push(LabeledSnapshot { at_ms: at, label: format!("after timeline entry {index}"), snapshot });
        Ok(())
    }

    fn finish(mut self, seed: u64) -> Result<Transcript, SimError> {
        let end = self.scenario.duration_secs as i64 * 1000;
        self.driver.set_clock(SIM_EPOCH_MS + end).map_err(fatal)?;
        let snapshot = self.driver.snapshot().map_err(fatal)?;
        let alerts = self.driver.alerts().map_err(fatal)?;
        let stats = self.driver.stats().map_err(fatal)?;

        let mut m = std::mem::take(&mut self.metrics);
        m.events_logged = stats.events;
        for t in TriggerSubtype::ALL {
            m.triggers_by_type.entry(t.as_str().to_owned()).or_default();
        }
        for s in [FeedbackStyle::Technical, FeedbackStyle::Heuristic] {
            m.feedback_by_style.entry(s.as_str().to_owned()).or_default();
        }
        for k in AlertKind::ALL {
            m.alerts_by_kind.insert(k.as_str().to_owned(), alerts.iter().filter(|a| a.kind == k).count());
        }
        for s in &mut self.students {
            let card_mode = snapshot.cards.iter().find(|c| c.student_id == s.id).map(|c| c.mode);
            s.m.final_mode = card_mode;
            s.m.failure_rate = ratio(s.m.failed_runs, s.m.runs);
            s.m.answer_seeking_share = ratio(s.m.answer_seeking_questions, s.m.questions);
            m.completed_tasks += s.m.completed_tasks;
            let p = m.personas.entry(s.m.persona.clone()).or_default();
            p.students += 1;
            p.questions += s.m.questions;
            p.agent_messages += s.m.agent_messages;
            p.passive_triggers += s.m.passive_triggers;
            if s.m.runs > 0 {
                p.min_failure_rate = Some(p.min_failure_rate.map_or(s.m.failure_rate, |v| v.min(s.m.failure_rate)));
            }
            if s.m.questions > 0 {
                let share = s.m.answer_seeking_share;
                p.min_answer_seeking_share = Some(p.min_answer_seeking_share.map_or(share, |v| v.min(share)));
            }
            m.students.insert(s.id.to_string(), s.m.clone());
        }
        self.snapshots.push(LabeledSnapshot { at_ms: end, label: "end".into(), snapshot });
        Ok(Transcript {
            scenario: self.scenario.name.clone(),
            seed,
            students: self.students.iter().map(|s| s.id.clone()).collect(),
            steps: self.steps,
            snapshots: self.snapshots,
            alerts,
            metrics: m,
        })
    }
}

fn ratio(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analyzer::check_spec;

    const SOLUTION: &str = r#"{"$schema":"https://vega.github.io/schema/vega-lite/v5.json","data":{"values":[{"a":1}]},"mark":"bar","encoding":{"x":{"field":"a","type":"nominal"}}}"#;

    #[test]
    fn each_mutation_is_reported_under_its_category() {
        assert!(check_spec(SOLUTION, &[]).is_empty());
        for c in ErrorCategory::ALL {
            let broken = mutate(SOLUTION, c);
            let found = check_spec(&broken, &[]);
            assert!(found.iter().any(|e| e.category == c), "{c:?}: {found:?}");
        }
    }
}
