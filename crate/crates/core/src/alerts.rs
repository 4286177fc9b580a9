//! Instructor alerts and class-level aggregates.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    AlertId, ErrorCategory, FeedbackMode, FeedbackStyle, QuestionType, RatingValue, StudentId,
    TaskId, TaskScore, TimestampMs,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertKind {
    Agent,
    Process,
    Outcome,
}

impl AlertKind {
    pub const ALL: [AlertKind; 3] = [AlertKind::Agent, AlertKind::Process, AlertKind::Outcome];

    pub fn as_str(self) -> &'static str {
        match self {
            AlertKind::Agent => "agent",
            AlertKind::Process => "process",
            AlertKind::Outcome => "outcome",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub id: AlertId,
    pub kind: AlertKind,
    pub student_id: StudentId,
    pub raised_at: TimestampMs,
    pub detail: String,
    pub handled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlertConfig {
    /// Consecutive technical deliveries in Auto mode that raise an Agent alert.
    pub agent_streak: usize,
    /// Dislikes within one task that raise a Process alert.
    pub process_dislikes: usize,
    /// Completions strictly faster than this raise an Outcome alert.
    pub outcome_min_secs: u64,
}

impl Default for AlertConfig {
    fn default() -> Self {
        Self {
            agent_streak: 3,
            process_dislikes: 3,
            outcome_min_secs: 180,
        }
    }
}

impl AlertConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.agent_streak == 0 || self.process_dislikes == 0 {
            return Err("alert counts must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AlertError {
    #[error("unknown alert '{0}'")]
    UnknownAlert(String),
    #[error("alert '{0}' is already handled")]
    AlreadyHandled(String),
}

/// Alert state machine for a whole class.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AlertBook {
    config: AlertConfig,
    alerts: Vec<Alert>,
    index: BTreeMap<AlertId, usize>,
    tech_streak: BTreeMap<StudentId, usize>,
    dislikes: BTreeMap<StudentId, BTreeMap<TaskId, usize>>,
    ever: BTreeMap<AlertKind, BTreeSet<StudentId>>,
}

impl AlertBook {
    pub fn new(config: AlertConfig) -> Self {
        Self { config, ..Default::default() }
    }

    pub fn config(&self) -> &AlertConfig {
        &self.config
    }

    fn raise(&mut self, id: AlertId, kind: AlertKind, student: &StudentId, at: TimestampMs, detail: String) -> Alert {
        let alert = Alert {
            id: id.clone(),
            kind,
            student_id: student.clone(),
            raised_at: at,
            detail,
            handled: false,
        };
        debug_assert!(!self.index.contains_key(&id), "duplicate alert id {id}");
        self.index.insert(id, self.alerts.len());
        self.alerts.push(alert.clone());
        self.ever.entry(kind).or_default().insert(student.clone());
        alert
    }

    pub fn tech_streak(&self, student: &StudentId) -> usize {
        self.tech_streak.get(student).copied().unwrap_or(0)
    }

    pub fn on_feedback_delivered(
        &mut self,
        student: &StudentId,
        style: FeedbackStyle,
        mode_at_delivery: FeedbackMode,
        id: AlertId,
        at: TimestampMs,
    ) -> Option<Alert> {
        let streak = self.tech_streak.entry(student.clone()).or_default();
        if mode_at_delivery != FeedbackMode::Auto || style == FeedbackStyle::Heuristic {
            *streak = 0;
            return None;
        }
        *streak += 1;
        if *streak < self.config.agent_streak {
            return None;
        }
        *streak = 0;
        let detail = format!(
            "Agent delivered technical feedback {} consecutive times in Auto mode",
            self.config.agent_streak
        );
        Some(self.raise(id, AlertKind::Agent, student, at, detail))
    }

    pub fn on_mode_change(&mut self, student: &StudentId) {
        self.tech_streak.insert(student.clone(), 0);
    }

    pub fn on_rating(
        &mut self,
        student: &StudentId,
        task: &TaskId,
        value: RatingValue,
        id: AlertId,
        at: TimestampMs,
    ) -> Option<Alert> {
        if value != RatingValue::Dislike {
            return None;
        }
        let n = self
            .dislikes
            .entry(student.clone())
            .or_default()
            .entry(task.clone())
            .or_default();
        *n += 1;
        if *n != self.config.process_dislikes {
            return None;
        }
        let detail = format!("{} dislikes on feedback within task {task}", self.config.process_dislikes);
        Some(self.raise(id, AlertKind::Process, student, at, detail))
    }

    pub fn on_task_complete(&mut self, student: &StudentId, score: &TaskScore, id: AlertId) -> Option<Alert> {
        if score.duration_seconds >= self.config.outcome_min_secs {
            return None;
        }
        let detail = format!(
            "Task {} completed in {} s (under {} s)",
            score.task_id, score.duration_seconds, self.config.outcome_min_secs
        );
        Some(self.raise(id, AlertKind::Outcome, student, score.completed_at, detail))
    }

    pub fn mark_handled(&mut self, id: &str) -> Result<Alert, AlertError> {
        let &i = self.index.get(id).ok_or_else(|| AlertError::UnknownAlert(id.to_owned()))?;
        let alert = &mut self.alerts[i];
        if alert.handled {
            return Err(AlertError::AlreadyHandled(id.to_owned()));
        }
        alert.handled = true;
        Ok(alert.clone())
    }

    pub fn get(&self, id: &str) -> Option<&Alert> {
        self.index.get(id).map(|&i| &self.alerts[i])
    }

    pub fn alerts(&self) -> &[Alert] {
        &self.alerts
    }

    pub fn active_kinds(&self, student: &StudentId) -> BTreeSet<AlertKind> {
        self.alerts
            .iter()
            .filter(|a| !a.handled && &a.student_id == student)
            .map(|a| a.kind)
            .collect()
    }

    pub fn tabs(&self) -> Vec<AlertTab> {
        AlertKind::ALL
            .iter()
            .map(|&kind| AlertTab {
                kind,
                ever_triggered_count: self.ever.get(&kind).map_or(0, BTreeSet::len),
                unresolved_count: self.alerts.iter().filter(|a| a.kind == kind && !a.handled).count(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreColor {
    White,
    Red,
    Green,
}

impl ScoreColor {
    pub fn for_score(score: Option<f64>) -> Self {
        match score {
            None => ScoreColor::White,
            Some(s) if s < 3.0 => ScoreColor::Red,
            Some(_) => ScoreColor::Green,
        }
    }
}

/// Display text for a card's score.
pub fn score_text(score: Option<f64>) -> String {
    match score {
        None => "---".into(),
        Some(s) => format!("{s:.1}"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentCard {
    pub student_id: StudentId,
    pub display_name: String,
    pub latest_score: Option<TaskScore>,
    pub score_text: String,
    pub score_color: ScoreColor,
    pub mode: FeedbackMode,
    /// Background token; the UI maps it to a color.
    pub background: FeedbackMode,
    pub active_alert_kinds: BTreeSet<AlertKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertTab {
    pub kind: AlertKind,
    pub ever_triggered_count: usize,
    pub unresolved_count: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionCounts {
    pub answer_seeking: usize,
    pub critical_thinking: usize,
}

impl QuestionCounts {
    pub fn total(&self) -> usize {
        self.answer_seeking + self.critical_thinking
    }

    fn add(&mut self, qt: QuestionType) {
        match qt {
            QuestionType::AnswerSeeking => self.answer_seeking += 1,
            QuestionType::CriticalThinking => self.critical_thinking += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PyramidRow {
    pub student_id: StudentId,
    pub display_name: String,
    pub answer_seeking_count: usize,
    pub critical_thinking_count: usize,
    pub total: usize,
    pub per_task_breakdown: BTreeMap<TaskId, QuestionCounts>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentErrorCount {
    pub student_id: StudentId,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBar {
    pub category: ErrorCategory,
    pub total: usize,
    pub students_sorted_by_frequency: Vec<StudentErrorCount>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSnapshot {
    pub class_size: usize,
    pub cards: Vec<StudentCard>,
    pub alert_tabs: Vec<AlertTab>,
    pub pyramid: Vec<PyramidRow>,
    pub error_bars: Vec<ErrorBar>,
}

/// What the snapshot needs to know about one student.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentView<'a> {
    pub student_id: &'a StudentId,
    pub display_name: &'a str,
    pub mode: FeedbackMode,
    pub latest_score: Option<&'a TaskScore>,
    pub questions: Vec<(&'a TaskId, QuestionType)>,
    pub error_counts: BTreeMap<ErrorCategory, usize>,
}

pub fn card(view: &StudentView<'_>, book: &AlertBook) -> StudentCard {
    let score = view.latest_score.map(|s| s.score);
    StudentCard {
        student_id: view.student_id.clone(),
        display_name: view.display_name.to_owned(),
        latest_score: view.latest_score.cloned(),
        score_text: score_text(score),
        score_color: ScoreColor::for_score(score),
        mode: view.mode,
        background: view.mode,
        active_alert_kinds: book.active_kinds(view.student_id),
    }
}

/// Class aggregate over `views`, which must be in roster order.
pub fn snapshot(views: &[StudentView<'_>], book: &AlertBook) -> ClassSnapshot {
    let cards = views.iter().map(|v| card(v, book)).collect();

    let mut pyramid: Vec<PyramidRow> = views
        .iter()
        .map(|v| {
            let mut overall = QuestionCounts::default();
            let mut per_task: BTreeMap<TaskId, QuestionCounts> = BTreeMap::new();
            for (task, qt) in &v.questions {
                overall.add(*qt);
                per_task.entry((*task).clone()).or_default().add(*qt);
            }
            PyramidRow {
                student_id: v.student_id.clone(),
                display_name: v.display_name.to_owned(),
                answer_seeking_count: overall.answer_seeking,
                critical_thinking_count: overall.critical_thinking,
                total: overall.total(),
                per_task_breakdown: per_task,
            }
        })
        .collect();
    // Stable: equal totals keep roster order.
    pyramid.sort_by_key(|p| std::cmp::Reverse(p.total));

    let error_bars = ErrorCategory::ALL
        .iter()
        .map(|&category| {
            let mut students: Vec<StudentErrorCount> = views
                .iter()
                .filter_map(|v| {
                    let n = v.error_counts.get(&category).copied().unwrap_or(0);
                    (n > 0).then(|| StudentErrorCount { student_id: v.student_id.clone(), count: n })
                })
                .collect();
            students.sort_by_key(|s| std::cmp::Reverse(s.count));
            ErrorBar {
                category,
                total: students.iter().map(|s| s.count).sum(),
                students_sorted_by_frequency: students,
            }
        })
        .collect();

    ClassSnapshot {
        class_size: views.len(),
        cards,
        alert_tabs: book.tabs(),
        pyramid,
        error_bars,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sid(s: &str) -> StudentId {
        s.into()
    }

    fn deliver(book: &mut AlertBook, style: FeedbackStyle, mode: FeedbackMode, n: usize) -> Option<Alert> {
        book.on_feedback_delivered(&sid("s1"), style, mode, AlertId::new(format!("a{n}")), n as i64)
    }

    #[test]
    fn three_technical_in_auto_raise_one_agent_alert() {
        let mut b = AlertBook::new(AlertConfig::default());
        assert!(deliver(&mut b, FeedbackStyle::Technical, FeedbackMode::Auto, 1).is_none());
        assert!(deliver(&mut b, FeedbackStyle::Technical, FeedbackMode::Auto, 2).is_none());
        let a = deliver(&mut b, FeedbackStyle::Technical, FeedbackMode::Auto, 3).unwrap();
        assert_eq!(a.kind, AlertKind::Agent);
        assert_eq!(b.tech_streak(&sid("s1")), 0);
        assert!(deliver(&mut b, FeedbackStyle::Technical, FeedbackMode::Auto, 4).is_none());
    }

    #[test]
    fn heuristic_or_fixed_mode_breaks_streak() {
        let mut b = AlertBook::new(AlertConfig::default());
        deliver(&mut b, FeedbackStyle::Technical, FeedbackMode::Auto, 1);
        deliver(&mut b, FeedbackStyle::Technical, FeedbackMode::Auto, 2);
        assert!(deliver(&mut b, FeedbackStyle::Heuristic, FeedbackMode::Auto, 3).is_none());
        assert_eq!(b.tech_streak(&sid("s1")), 0);
        for n in 0..5 {
            assert!(deliver(&mut b, FeedbackStyle::Technical, FeedbackMode::Technical, 10 + n).is_none());
        }
        deliver(&mut b, FeedbackStyle::Technical, FeedbackMode::Auto, 20);
        b.on_mode_change(&sid("s1"));
        assert_eq!(b.tech_streak(&sid("s1")), 0);
    }

    #[test]
    fn dislikes_are_counted_per_task_once() {
        let mut b = AlertBook::new(AlertConfig::default());
        let rate = |b: &mut AlertBook, task: &str, v, n: i64| {
            b.on_rating(&sid("s1"), &TaskId::from(task), v, AlertId::new(format!("p{n}")), n)
        };
        assert!(rate(&mut b, "t1", RatingValue::Dislike, 1).is_none());
        assert!(rate(&mut b, "t1", RatingValue::Like, 2).is_none());
        assert!(rate(&mut b, "t1", RatingValue::Dislike, 3).is_none());
        assert!(rate(&mut b, "t2", RatingValue::Dislike, 4).is_none());
        assert!(rate(&mut b, "t1", RatingValue::Dislike, 5).is_some());
        assert!(rate(&mut b, "t1", RatingValue::Dislike, 6).is_none());
        assert_eq!(b.tabs()[1].unresolved_count, 1);
    }

    #[test]
    fn fast_completion_boundary() {
        let mut b = AlertBook::new(AlertConfig::default());
        let score = |d| TaskScore { task_id: "t1".into(), score: 5.0, completed_at: 0, duration_seconds: d };
        assert!(b.on_task_complete(&sid("s1"), &score(179), "o1".into()).is_some());
        assert!(b.on_task_complete(&sid("s1"), &score(180), "o2".into()).is_none());
        assert!(b.on_task_complete(&sid("s1"), &score(1200), "o3".into()).is_none());
    }

    #[test]
    fn handling_alerts() {
        let mut b = AlertBook::new(AlertConfig::default());
        let score = TaskScore { task_id: "t1".into(), score: 5.0, completed_at: 0, duration_seconds: 1 };
        b.on_task_complete(&sid("s1"), &score, "o1".into());
        assert!(b.mark_handled("o1").unwrap().handled);
        assert_eq!(b.mark_handled("o1"), Err(AlertError::AlreadyHandled("o1".into())));
        assert_eq!(b.mark_handled("zz"), Err(AlertError::UnknownAlert("zz".into())));
        let tab = &b.tabs()[2];
        assert_eq!((tab.ever_triggered_count, tab.unresolved_count), (1, 0));
    }

    #[test]
    fn snapshot_orders_and_colors() {
        let (a, b_) = (sid("a"), sid("b"));
        let t1 = TaskId::from("t1");
        let score = TaskScore { task_id: t1.clone(), score: 2.5, completed_at: 0, duration_seconds: 500 };
        let views = vec![
            StudentView {
                student_id: &a,
                display_name: "A",
                mode: FeedbackMode::Auto,
                latest_score: None,
                questions: vec![(&t1, QuestionType::AnswerSeeking); 5],
                error_counts: [(ErrorCategory::Data, 1)].into_iter().collect(),
            },
            StudentView {
                student_id: &b_,
                display_name: "B",
                mode: FeedbackMode::Heuristic,
                latest_score: Some(&score),
                questions: vec![(&t1, QuestionType::CriticalThinking); 9],
                error_counts: [(ErrorCategory::Data, 4)].into_iter().collect(),
            },
        ];
        let s = snapshot(&views, &AlertBook::default());
        assert_eq!(s.pyramid[0].student_id, b_);
        assert_eq!(s.pyramid[1].total, 5);
        assert_eq!(s.cards[0].score_text, "---");
        assert_eq!(s.cards[0].score_color, ScoreColor::White);
        assert_eq!(s.cards[1].score_color, ScoreColor::Red);
        assert_eq!(s.cards[1].background, FeedbackMode::Heuristic);
        let data = s.error_bars.iter().find(|e| e.category == ErrorCategory::Data).unwrap();
        assert_eq!(data.total, 5);
        assert_eq!(data.students_sorted_by_frequency[0].student_id, b_);

        let empty = snapshot(&[], &AlertBook::default());
        assert!(empty.cards.is_empty() && empty.pyramid.is_empty());
        assert!(empty.alert_tabs.iter().all(|t| t.ever_triggered_count == 0 && t.unresolved_count == 0));
    }

    #[test]
    fn score_color_rule() {
        assert_eq!(ScoreColor::for_score(Some(2.99)), ScoreColor::Red);
        assert_eq!(ScoreColor::for_score(Some(3.0)), ScoreColor::Green);
        assert_eq!(ScoreColor::for_score(Some(5.0)), ScoreColor::Green);
        assert_eq!(score_text(Some(4.25)), "4.2");
    }
}
