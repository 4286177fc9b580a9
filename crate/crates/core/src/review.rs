//! Five-dimension summary of one student's logged history.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analyzer::SectionPresence;
use crate::cognition::{CognitiveAssessment, FALLBACK_CONFIDENCE};
use crate::domain::{
    AnalysisError, BloomLevel, ErrorCategory, FeedbackMode, QuestionType, RatingValue, TaskId,
    TaskScore, TimestampMs,
};
use crate::triggers::{Trigger, TriggerSubtype};

/// Horizon for "recent" activity and triggers.
pub const RECENT_WINDOW_MS: i64 = 300_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub ts: TimestampMs,
    pub task_id: TaskId,
    pub errors: Vec<AnalysisError>,
}

impl RunRecord {
    pub fn succeeded(&self) -> bool {
        self.errors.is_empty()
    }

    fn parsed(&self) -> bool {
        !self.errors.iter().any(|e| e.category == ErrorCategory::JsonSyntax)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub ts: TimestampMs,
    pub task_id: TaskId,
    pub text: String,
    pub assessment: CognitiveAssessment,
    pub question_type: QuestionType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub ts: TimestampMs,
    pub task_id: TaskId,
    pub mode_at_time: FeedbackMode,
    pub value: RatingValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiredTrigger {
    pub at: TimestampMs,
    pub subtype: TriggerSubtype,
}

/// Everything the review needs, accumulated by the session as events arrive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentHistory {
    pub current_task: TaskId,
    pub current_mode: FeedbackMode,
    /// Concepts named by task configuration (expected-field paths).
    pub task_concepts: Vec<String>,
    pub event_times: Vec<TimestampMs>,
    pub runs: Vec<RunRecord>,
    pub questions: Vec<QuestionRecord>,
    pub ratings: Vec<RatingRecord>,
    pub completed: Vec<TaskScore>,
    pub triggers: Vec<FiredTrigger>,
    /// Sections present in the most recent spec seen; `None` when it did not parse.
    pub latest_sections: Option<SectionPresence>,
}

impl StudentHistory {
    pub fn new(task: TaskId, mode: FeedbackMode, task_concepts: Vec<String>) -> Self {
        Self {
            current_task: task,
            current_mode: mode,
            task_concepts,
            event_times: Vec::new(),
            runs: Vec::new(),
            questions: Vec::new(),
            ratings: Vec::new(),
            completed: Vec::new(),
            triggers: Vec::new(),
            latest_sections: None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.event_times.is_empty()
    }

    pub fn assessments(&self) -> impl Iterator<Item = &CognitiveAssessment> {
        self.questions.iter().map(|q| &q.assessment)
    }

    pub fn success_rate(&self) -> f64 {
        ratio(self.runs.iter().filter(|r| r.succeeded()).count(), self.runs.len())
    }

    pub fn help_frequency(&self) -> f64 {
        ratio(self.questions.len(), self.questions.len() + self.runs.len())
    }

    /// Error categories from the current task's runs, one entry per occurrence.
    pub fn recent_errors(&self) -> Vec<ErrorCategory> {
        self.runs
            .iter()
            .filter(|r| r.task_id == self.current_task)
            .flat_map(|r| r.errors.iter().map(|e| e.category))
            .collect()
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    Improving,
    Stagnant,
    Regressing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CognitiveSection {
    pub level: BloomLevel,
    pub confidence: f64,
    /// Not separately observable; mirrors `confidence`.
    pub understanding: f64,
    pub trend: Trend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSection {
    pub counts: BTreeMap<ErrorCategory, usize>,
    pub most_common: Option<ErrorCategory>,
    /// Occurrences in the current task, which drive the decision engine.
    pub recent: BTreeMap<ErrorCategory, usize>,
}

impl ErrorSection {
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn recent_total(&self) -> usize {
        self.recent.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistorySection {
    pub preferred_mode: FeedbackMode,
    pub completed_tasks: usize,
    pub success_rate: f64,
    pub help_frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurrentSection {
    pub task_id: TaskId,
    pub recent_triggers: Vec<TriggerSubtype>,
    pub activity_level: usize,
    pub code_complete_fraction: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeState {
    pub mastered: Vec<String>,
    pub struggling: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewSummary {
    pub cognitive: CognitiveSection,
    pub errors: ErrorSection,
    pub history: HistorySection,
    pub current: CurrentSection,
    pub knowledge: KnowledgeState,
    pub is_auto_generated: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReviewError {
    #[error("student has no recorded history")]
    EmptyHistory,
}

/// Split-means over ranks: later half versus earlier half.
pub fn detect_trend(levels: &[BloomLevel]) -> Trend {
    let n = levels.len();
    if n < 2 {
        return Trend::Stagnant;
    }
    let early = n / 2;
    // Means compared by cross-multiplied integer sums, so ties are exact.
    let sum = |s: &[BloomLevel]| s.iter().map(|l| l.rank() as i64).sum::<i64>();
    let lhs = sum(&levels[early..]) * early as i64;
    let rhs = sum(&levels[..early]) * (n - early) as i64;
    match lhs.cmp(&rhs) {
        std::cmp::Ordering::Greater => Trend::Improving,
        std::cmp::Ordering::Less => Trend::Regressing,
        std::cmp::Ordering::Equal => Trend::Stagnant,
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct ConceptTally {
    erred: bool,
    unresolved: usize,
    clean_streak: usize,
}

/// Mastered and struggling concepts over all runs.
pub fn knowledge_state(history: &StudentHistory) -> KnowledgeState {
    let mut tallies: BTreeMap<String, ConceptTally> = BTreeMap::new();
    let concepts: Vec<String> = ErrorCategory::ALL
        .iter()
        .map(|c| c.as_str().to_owned())
        .chain(history.task_concepts.iter().cloned())
        .collect();
    for run in &history.runs {
        for concept in &concepts {
            let category = ErrorCategory::ALL.iter().find(|c| c.as_str() == concept);
            let erred = match category {
                Some(c) => run.errors.iter().any(|e| e.category == *c),
                None => run.errors.iter().any(|e| e.path.as_deref() == Some(concept.as_str())),
            };
            // A syntax failure hides every structural concept.
            let touched = erred || category == Some(&ErrorCategory::JsonSyntax) || run.parsed();
            if !touched {
                continue;
            }
            let t = tallies.entry(concept.clone()).or_default();
            if erred {
                t.erred = true;
                t.unresolved += 1;
                t.clean_streak = 0;
            } else if t.erred {
                t.clean_streak += 1;
                if t.clean_streak >= 2 {
                    t.unresolved = 0;
                }
            }
        }
    }
    let mut out = KnowledgeState::default();
    for (concept, t) in tallies {
        if t.erred && t.clean_streak >= 2 {
            out.mastered.push(concept);
        } else if t.unresolved >= 2 {
            out.struggling.push(concept);
        }
    }
    out
}

fn preferred_mode(history: &StudentHistory) -> FeedbackMode {
    let mut likes: BTreeMap<FeedbackMode, usize> = BTreeMap::new();
    for r in history.ratings.iter().filter(|r| r.value == RatingValue::Like) {
        *likes.entry(r.mode_at_time).or_default() += 1;
    }
    let best = likes.values().copied().max().unwrap_or(0);
    let leaders: Vec<_> = likes.iter().filter(|(_, &n)| n == best).collect();
    match leaders.as_slice() {
        [(mode, _)] if best > 0 => **mode,
        _ => history.current_mode,
    }
}

fn count(categories: impl IntoIterator<Item = ErrorCategory>) -> BTreeMap<ErrorCategory, usize> {
    let mut out = BTreeMap::new();
    for c in categories {
        *out.entry(c).or_default() += 1;
    }
    out
}

fn most_common(counts: &BTreeMap<ErrorCategory, usize>) -> Option<ErrorCategory> {
    // Ties go to the category checked first.
    counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(c, _)| *c)
}

/// Summary used when there is nothing to review.
pub fn default_summary(history: &StudentHistory, trigger: Option<&Trigger>) -> ReviewSummary {
    ReviewSummary {
        cognitive: CognitiveSection {
            level: BloomLevel::Remember,
            confidence: FALLBACK_CONFIDENCE,
            understanding: FALLBACK_CONFIDENCE,
            trend: Trend::Stagnant,
        },
        errors: ErrorSection {
            counts: BTreeMap::new(),
            most_common: None,
            recent: BTreeMap::new(),
        },
        history: HistorySection {
            preferred_mode: history.current_mode,
            completed_tasks: history.completed.len(),
            success_rate: 0.0,
            help_frequency: 0.0,
        },
        current: CurrentSection {
            task_id: history.current_task.clone(),
            recent_triggers: Vec::new(),
            activity_level: 0,
            code_complete_fraction: 0.0,
        },
        knowledge: KnowledgeState::default(),
        is_auto_generated: trigger.is_some_and(|t| !t.is_passive()),
    }
}

pub fn try_build_review(
    history: &StudentHistory,
    trigger: &Trigger,
) -> Result<ReviewSummary, ReviewError> {
    if history.is_empty() {
        return Err(ReviewError::EmptyHistory);
    }
    let now = trigger.fired_at;
    let levels: Vec<BloomLevel> = history.assessments().map(|a| a.level).collect();
    let (level, confidence) = history
        .assessments()
        .last()
        .map(|a| (a.level, a.confidence))
        .unwrap_or((BloomLevel::Remember, FALLBACK_CONFIDENCE));
    let counts = count(history.runs.iter().flat_map(|r| r.errors.iter().map(|e| e.category)));
    let in_window = |t: TimestampMs| t <= now && now - t < RECENT_WINDOW_MS;
    Ok(ReviewSummary {
        cognitive: CognitiveSection {
            level,
            confidence,
            understanding: confidence,
            trend: detect_trend(&levels),
        },
        errors: ErrorSection {
            most_common: most_common(&counts),
            counts,
            recent: count(history.recent_errors()),
        },
        history: HistorySection {
            preferred_mode: preferred_mode(history),
            completed_tasks: history.completed.len(),
            success_rate: history.success_rate(),
            help_frequency: history.help_frequency(),
        },
        current: CurrentSection {
            task_id: history.current_task.clone(),
            recent_triggers: history
                .triggers
                .iter()
                .filter(|t| in_window(t.at))
                .map(|t| t.subtype)
                .collect(),
            activity_level: history.event_times.iter().filter(|&&t| in_window(t)).count(),
            code_complete_fraction: history
                .latest_sections
                .map(|s| s.fraction_present())
                .unwrap_or(0.0),
        },
        knowledge: knowledge_state(history),
        is_auto_generated: !trigger.is_passive(),
    })
}

/// Review for `trigger`; an empty history yields [`default_summary`].
pub fn build_review(history: &StudentHistory, trigger: &Trigger) -> ReviewSummary {
    try_build_review(history, trigger).unwrap_or_else(|_| default_summary(history, Some(trigger)))
}
