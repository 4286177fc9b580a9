use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use classaid_core::config::{ServiceConfig, TaskConfig};
use classaid_core::domain::{EventPayload, FeedbackMode, FeedbackStyle, RatingValue, StudentEvent, StudentId, TaskId};
use classaid_core::llm::{Gateway, GatewayError, GenerationRequest, GenerationResult, TextBackend};
use classaid_core::session::clock::ManualClock;
use classaid_core::session::push::PushEvent;
use classaid_core::session::{log_path, Author, Outcome, Service, ServiceError};
use classaid_core::alerts::AlertKind;
use serde_json::json;

const S: i64 = 1000;
const T0: i64 = 1_700_000_000_000;

struct Counting {
    inner: Gateway,
    calls: AtomicUsize,
}

impl TextBackend for Counting {
    fn name(&self) -> &str {
        "counting"
    }
    fn complete(&self, req: &GenerationRequest) -> Result<GenerationResult, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(req)
    }
}

fn counting() -> Arc<Counting> {
    Arc::new(Counting { inner: Gateway::mock(7), calls: AtomicUsize::new(0) })
}

fn config(students: &[&str]) -> ServiceConfig {
    let task = |id: &str| TaskConfig {
        task_id: id.into(),
        description: "Bar chart of counts".into(),
        expected_fields: vec![],
        rubric: Default::default(),
        solution: None,
    };
    let mut cfg = ServiceConfig::minimal("c1", vec![task("t1"), task("t2")]);
    cfg.session.students = students
        .iter()
        .map(|s| classaid_core::config::RosterEntry { id: (*s).into(), name: None })
        .collect();
    cfg
}

struct Fixture {
    _dir: tempfile::TempDir,
    path: std::path::PathBuf,
    clock: Arc<ManualClock>,
    backend: Arc<Counting>,
    svc: Service,
}

fn fixture(cfg: ServiceConfig) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let path = log_path(dir.path(), "c1");
    let clock = Arc::new(ManualClock::new(T0));
    let backend = counting();
    let svc = Service::create(cfg, &path, backend.clone(), clock.clone()).unwrap();
    Fixture { _dir: dir, path, clock, backend, svc }
}

fn ev(student: &str, at: i64, payload: EventPayload) -> StudentEvent {
    StudentEvent::new(student, "c1", T0 + at, payload)
}

fn question(text: &str) -> EventPayload {
    EventPayload::Question { question: text.into(), spec: r#"{"mark":"bar"}"#.into() }
}

fn broken_run() -> EventPayload {
    EventPayload::Run { spec: r#"{"mark": "bar",}"#.into() }
}

const GOOD: &str = r#"{"$schema":"https://vega.github.io/schema/vega-lite/v5.json","data":{"values":[{"a":"x","b":2}]},"mark":"bar","encoding":{"x":{"field":"a","type":"nominal"},"y":{"field":"b","type":"quantitative"}}}"#;

#[test]
fn question_gets_a_reply_and_both_entries_are_logged() {
    let f = fixture(config(&["s1"]));
    let r = f.svc.submit_event(ev("s1", S, question("How do I make the bars horizontal?"))).unwrap();
    assert_eq!(r.replies.len(), 1);
    let reply = &r.replies[0];
    assert_eq!(reply.author, Author::Agent);
    assert!(!reply.auto_generated);
    assert_eq!(reply.message_id.as_str(), format!("m{}-1", r.seq));
    let d = f.svc.student_detail(&"s1".into()).unwrap();
    assert_eq!(d.conversation.len(), 2);
    assert_eq!(d.conversation[0].author, Author::Student);
    assert!(f.backend.calls.load(Ordering::SeqCst) >= 3);
}

#[test]
fn silent_mode_makes_no_backend_calls() {
    let mut cfg = config(&["s1"]);
    cfg.session.initial_mode = FeedbackMode::Silent;
    let f = fixture(cfg);
    f.svc.submit_event(ev("s1", S, question("What is a mark?"))).unwrap();
    f.svc.submit_event(ev("s1", 2 * S, broken_run())).unwrap();
    f.svc.tick(T0 + 400 * S).unwrap();
    assert_eq!(f.backend.calls.load(Ordering::SeqCst), 0);
    let d = f.svc.student_detail(&"s1".into()).unwrap();
    assert!(d.conversation.iter().all(|m| m.author != Author::Agent));
    assert!(d.outcomes.iter().all(|o| o.outcome == Outcome::Silenced));
    assert_eq!(d.outcomes.len(), 3);
}

#[test]
fn unknown_targets_are_rejected_without_logging() {
    let f = fixture(config(&["s1"]));
    let before = f.svc.stats().records;
    assert!(matches!(f.svc.submit_event(ev("nobody", S, EventPayload::Activity)), Err(ServiceError::UnknownStudent(_))));
    let other = StudentEvent::new("s1", "c9", T0, EventPayload::Activity);
    assert!(matches!(f.svc.submit_event(other), Err(ServiceError::UnknownSession(_))));
    assert!(matches!(
        f.svc.submit_value(&json!({"kind":"question","student_id":"s1","session_id":"c1","timestamp":1,"question":"  ","spec":""})),
        Err(ServiceError::MalformedEvent(_))
    ));
    assert!(matches!(
        f.svc.rate_message(&"s1".into(), &"m1-1".into(), RatingValue::Like, None),
        Err(ServiceError::UnknownMessage(_))
    ));
    assert!(matches!(
        f.svc.complete_task(&"s1".into(), &"t2".into(), None),
        Err(ServiceError::WrongTask { .. })
    ));
    assert!(matches!(f.svc.mark_handled("a0-0"), Err(ServiceError::UnknownAlert(_))));
    assert_eq!(f.svc.stats().records, before);
}

#[test]
fn rating_rules_and_process_alert_on_third_dislike() {
    let f = fixture(config(&["s1"]));
    let mut replies = Vec::new();
    for i in 0..4 {
        let r = f.svc.submit_event(ev("s1", (i + 1) * 10 * S, question("Why is my chart empty?"))).unwrap();
        replies.push(r.replies[0].message_id.clone());
    }
    let student_msg = f.svc.student_detail(&"s1".into()).unwrap().conversation[0].message_id.clone();
    assert!(matches!(
        f.svc.rate_message(&"s1".into(), &student_msg, RatingValue::Like, None),
        Err(ServiceError::NotAgentMessage(_))
    ));
    let sub = f.svc.subscribe(None, Some(f.svc.push_epoch())).unwrap();
    let mut raised = Vec::new();
    for m in &replies {
        raised.extend(f.svc.rate_message(&"s1".into(), m, RatingValue::Dislike, Some(T0 + 100 * S)).unwrap().alerts);
    }
    assert_eq!(raised.len(), 1, "exactly the third dislike raises");
    assert_eq!(raised[0].kind, AlertKind::Process);
    assert!(matches!(
        f.svc.rate_message(&"s1".into(), &replies[0], RatingValue::Like, None),
        Err(ServiceError::AlreadyRated(_))
    ));
    let msgs: Vec<_> = sub.receiver.try_iter().collect();
    let confirmations = msgs.iter().filter(|m| matches!(&m.event, PushEvent::RatingConfirmed { text, .. } if text == "Thanks for your feedback!")).count();
    assert_eq!(confirmations, 4);
    assert!(msgs.iter().any(|m| m.event.name() == "alert_raised"));
    let card = f.svc.card(&"s1".into()).unwrap();
    assert!(card.active_alert_kinds.contains(&AlertKind::Process));
    f.svc.mark_handled(raised[0].id.as_str()).unwrap();
    assert!(matches!(f.svc.mark_handled(raised[0].id.as_str()), Err(ServiceError::AlreadyHandled(_))));
    assert!(f.svc.card(&"s1".into()).unwrap().active_alert_kinds.is_empty());
}

#[test]
fn outcome_alert_boundary_and_task_progression() {
    let f = fixture(config(&["fast", "slow"]));
    f.svc.submit_event(ev("fast", S, EventPayload::Run { spec: GOOD.into() })).unwrap();
    let fast = f.svc.complete_task(&"fast".into(), &"t1".into(), Some(T0 + 179 * S + 999)).unwrap();
    assert_eq!(fast.score.as_ref().unwrap().duration_seconds, 179);
    assert_eq!(fast.alerts.len(), 1);
    assert_eq!(fast.alerts[0].kind, AlertKind::Outcome);
    let slow = f.svc.complete_task(&"slow".into(), &"t1".into(), Some(T0 + 180 * S)).unwrap();
    assert!(slow.alerts.is_empty());
    let score = fast.score.unwrap();
    assert!((score.score - 5.0).abs() < 1e-9, "{score:?}");
    assert_eq!(slow.score.unwrap().score, 0.0);
    let d = f.svc.student_detail(&"fast".into()).unwrap();
    assert_eq!(d.current_task, TaskId::from("t2"));
    f.svc.complete_task(&"fast".into(), &"t2".into(), Some(T0 + 600 * S)).unwrap();
    assert!(matches!(
        f.svc.complete_task(&"fast".into(), &"t2".into(), None),
        Err(ServiceError::AlreadyCompleted(_))
    ));
    let card = f.svc.card(&"fast".into()).unwrap();
    assert_eq!(card.score_text, "0.0");
}

#[test]
fn agent_alert_after_three_technical_deliveries_in_auto() {
    let f = fixture(config(&["s1"]));
    let mut alerts = Vec::new();
    let mut styles = Vec::new();
    for i in 0..3 {
        let r = f.svc.submit_event(ev("s1", (i + 1) * 5 * S, broken_run())).unwrap();
        styles.extend(r.replies.iter().map(|m| m.style.unwrap()));
        alerts.extend(r.alerts);
    }
    assert_eq!(styles, vec![FeedbackStyle::Technical; 3]);
    assert_eq!(alerts.len(), 1);
    assert_eq!(alerts[0].kind, AlertKind::Agent);
}

#[test]
fn mode_change_adds_system_entries_and_resets_streak() {
    let f = fixture(config(&["s1", "s2"]));
    f.svc.submit_event(ev("s1", S, broken_run())).unwrap();
    f.svc.submit_event(ev("s1", 2 * S, broken_run())).unwrap();
    let sub = f.svc.subscribe(None, None).unwrap();
    assert_eq!(sub.backlog[0].event.name(), "snapshot");
    let m = f.svc.set_mode(FeedbackMode::Technical, Some(vec!["s1".into()])).unwrap();
    assert_eq!(m.student_ids, vec![StudentId::from("s1")]);
    f.svc.set_mode(FeedbackMode::Auto, Some(vec!["s1".into()])).unwrap();
    let r = f.svc.submit_event(ev("s1", 3 * S, broken_run())).unwrap();
    assert!(r.alerts.is_empty(), "streak restarted after the mode change");
    let d = f.svc.student_detail(&"s1".into()).unwrap();
    assert_eq!(d.conversation.iter().filter(|c| c.author == Author::System).count(), 2);
    assert_eq!(f.svc.card(&"s2".into()).unwrap().mode, FeedbackMode::Auto);
    let names: Vec<_> = sub.receiver.try_iter().map(|m| m.event.name()).collect();
    assert!(names.contains(&"mode_banner") && names.contains(&"card"));
    f.svc.set_mode(FeedbackMode::Heuristic, None).unwrap();
    assert_eq!(f.svc.class_mode(), FeedbackMode::Heuristic);
    f.svc.register_student("late".into(), Some("Late".into())).unwrap();
    assert_eq!(f.svc.card(&"late".into()).unwrap().mode, FeedbackMode::Heuristic);
    assert!(matches!(f.svc.register_student("late".into(), None), Err(ServiceError::DuplicateStudent(_))));
}

#[test]
fn inactivity_ticks_fire_after_the_threshold() {
    let f = fixture(config(&["s1"]));
    f.svc.submit_event(ev("s1", 0, EventPayload::Activity)).unwrap();
    assert!(f.svc.tick(T0 + 240 * S).unwrap().is_empty());
    let fired = f.svc.tick(T0 + 241 * S).unwrap();
    assert_eq!(fired.len(), 1);
    assert_eq!(fired[0].replies.len(), 1, "stagnation intervenes immediately");
    assert!(fired[0].replies[0].auto_generated);
    assert!(f.svc.tick(T0 + 300 * S).unwrap().is_empty(), "cooldown");
}

#[test]
fn replay_reproduces_the_live_state() {
    let f = fixture(config(&["s1", "s2", "s3"]));
    f.svc.submit_event(ev("s1", S, question("What is an encoding?"))).unwrap();
    f.svc.submit_event(ev("s2", S, broken_run())).unwrap();
    f.svc.set_mode(FeedbackMode::Silent, Some(vec!["s3".into()])).unwrap();
    f.svc.submit_event(ev("s3", 2 * S, broken_run())).unwrap();
    let r = f.svc.submit_event(ev("s2", 3 * S, question("Can you give me the answer?"))).unwrap();
    f.svc.rate_message(&"s2".into(), &r.replies[0].message_id, RatingValue::Like, None).unwrap();
    f.svc.tick(T0 + 400 * S).unwrap();
    f.svc.complete_task(&"s1".into(), &"t1".into(), Some(T0 + 500 * S)).unwrap();
    let alert = f.svc.alerts()[0].id.clone();
    f.svc.mark_handled(alert.as_str()).unwrap();
    f.svc.register_student("s4".into(), None).unwrap();

    let replayed = Service::replay(&f.path, f.clock.clone()).unwrap();
    let live = serde_json::to_string(&f.svc.snapshot()).unwrap();
    assert_eq!(serde_json::to_string(&replayed.snapshot()).unwrap(), live);
    assert_eq!(replayed.stats(), f.svc.stats());
    for s in ["s1", "s2", "s3", "s4"] {
        assert_eq!(replayed.student_detail(&s.into()).unwrap(), f.svc.student_detail(&s.into()).unwrap());
    }
    assert_eq!(replayed.alerts(), f.svc.alerts());
}

#[test]
fn recovery_continues_the_same_log() {
    let f = fixture(config(&["s1"]));
    f.svc.submit_event(ev("s1", S, question("What is a mark?"))).unwrap();
    let calls = f.backend.calls.load(Ordering::SeqCst);
    let before = f.svc.snapshot();
    let path = f.path.clone();
    let clock = f.clock.clone();
    let backend = f.backend.clone();
    drop(f.svc);
    let svc = Service::recover(&path, None, backend.clone(), clock).unwrap();
    assert_eq!(backend.calls.load(Ordering::SeqCst), calls, "recovery uses recorded outcomes");
    assert_eq!(svc.snapshot(), before);
    svc.submit_event(ev("s1", 2 * S, EventPayload::Activity)).unwrap();
    let again = Service::replay(&path, Arc::new(ManualClock::new(T0))).unwrap();
    assert_eq!(again.stats().events, 2);
}

#[test]
fn corrupt_log_names_the_line() {
    let f = fixture(config(&["s1"]));
    f.svc.submit_event(ev("s1", S, EventPayload::Activity)).unwrap();
    let text = std::fs::read_to_string(&f.path).unwrap();
    let broken = text.replacen("\"kind\":\"event\"", "\"kind\":\"evnt\"", 1);
    std::fs::write(&f.path, broken).unwrap();
    match Service::replay(&f.path, f.clock.clone()) {
        Err(ServiceError::CorruptLog { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected a corrupt log, got {:?}", other.err()),
    }
}

#[test]
fn subscriptions_require_the_instructor_token() {
    let mut cfg = config(&["s1"]);
    cfg.session.instructor_token = Some("secret".into());
    let f = fixture(cfg);
    assert!(matches!(f.svc.subscribe(None, None), Err(ServiceError::Unauthorized)));
    assert!(matches!(f.svc.subscribe(Some("nope"), None), Err(ServiceError::Unauthorized)));
    let sub = f.svc.subscribe(Some("secret"), None).unwrap();
    let PushEvent::Snapshot { snapshot } = &sub.backlog[0].event else { panic!() };
    assert_eq!(snapshot.class_size, 1);
    assert!(!std::fs::read_to_string(&f.path).unwrap().contains("secret"));
}

#[test]
fn out_of_order_timestamps_are_clamped() {
    let f = fixture(config(&["s1"]));
    f.svc.submit_event(ev("s1", 50 * S, EventPayload::Activity)).unwrap();
    let r = f.svc.submit_event(ev("s1", 10 * S, EventPayload::Activity)).unwrap();
    assert_eq!(r.timestamp, T0 + 50 * S);
}

#[test]
fn concurrent_students_do_not_interfere() {
    let f = fixture(config(&["a", "b", "c", "d"]));
    let svc = &f.svc;
    std::thread::scope(|s| {
        for id in ["a", "b", "c", "d"] {
            s.spawn(move || {
                for i in 0..10 {
                    svc.submit_event(ev(id, i * 7 * S, broken_run())).unwrap();
                    svc.submit_event(ev(id, i * 7 * S + S, question("Why does it fail?"))).unwrap();
                }
            });
        }
        s.spawn(|| {
            for i in 0..5 {
                svc.set_mode(if i % 2 == 0 { FeedbackMode::Technical } else { FeedbackMode::Auto }, None).unwrap();
            }
        });
    });
    assert_eq!(svc.stats().events, 80);
    let replayed = Service::replay(&f.path, f.clock.clone()).unwrap();
    assert_eq!(replayed.snapshot(), svc.snapshot());
    assert_eq!(replayed.stats(), svc.stats());
}

#[test]
fn instructor_notes_are_logged_and_replayed() {
    let f = fixture(config(&["s1"]));
    let note = f.svc.add_note(&"s1".into(), "Helped in person with the x encoding.").unwrap();
    assert_eq!(note.author, Author::Instructor);
    assert!(matches!(f.svc.add_note(&"s1".into(), " "), Err(ServiceError::MalformedEvent(_))));
    assert!(matches!(f.svc.add_note(&"zz".into(), "hi"), Err(ServiceError::UnknownStudent(_))));
    let replayed = Service::replay(&f.path, f.clock.clone()).unwrap();
    assert_eq!(replayed.student_detail(&"s1".into()).unwrap().conversation, vec![note]);
}
