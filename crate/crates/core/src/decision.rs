//! Style selection, candidate scoring, and the intervene/withhold decision.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::cognition::extract_json_object;
use crate::domain::{AnalysisError, ErrorCategory, FeedbackMode, FeedbackStyle};
use crate::feedback::{CandidateSet, FeedbackCandidate};
use crate::llm::{GenerationParams, GenerationRequest, TextBackend};
use crate::prompts;
use crate::review::ReviewSummary;
use crate::triggers::{Trigger, TriggerSubtype};

const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeightError {
    #[error("{group} weights sum to {sum}, expected 1")]
    BadSum { group: &'static str, sum: f64 },
    #[error("{group} weight {name} = {value} is outside [0, 1]")]
    OutOfRange { group: &'static str, name: &'static str, value: f64 },
}

fn check_group(group: &'static str, parts: &[(&'static str, f64)]) -> Result<(), WeightError> {
    for &(name, value) in parts {
        if !(0.0..=1.0).contains(&value) {
            return Err(WeightError::OutOfRange { group, name, value });
        }
    }
    let sum: f64 = parts.iter().map(|p| p.1).sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(WeightError::BadSum { group, sum });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModeWeights {
    pub cognitive: f64,
    pub error: f64,
    pub history: f64,
}

impl Default for ModeWeights {
    fn default() -> Self {
        Self { cognitive: 0.5, error: 0.2, history: 0.3 }
    }
}

impl ModeWeights {
    pub fn validate(&self) -> Result<(), WeightError> {
        check_group(
            "mode",
            &[("cognitive", self.cognitive), ("error", self.error), ("history", self.history)],
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResponseWeights {
    pub relevance: f64,
    pub complexity: f64,
    pub consistency: f64,
    pub clarity: f64,
    pub urgency: f64,
}

impl Default for ResponseWeights {
    fn default() -> Self {
        Self {
            relevance: 0.40,
            complexity: 0.20,
            consistency: 0.20,
            clarity: 0.15,
            urgency: 0.05,
        }
    }
}

impl ResponseWeights {
    pub fn validate(&self) -> Result<(), WeightError> {
        check_group(
            "response",
            &[
                ("relevance", self.relevance),
                ("complexity", self.complexity),
                ("consistency", self.consistency),
                ("clarity", self.clarity),
                ("urgency", self.urgency),
            ],
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterventionWeights {
    pub error: f64,
    pub cognitive: f64,
    pub history: f64,
}

impl Default for InterventionWeights {
    fn default() -> Self {
        Self { error: 0.4, cognitive: 0.3, history: 0.3 }
    }
}

impl InterventionWeights {
    pub fn validate(&self) -> Result<(), WeightError> {
        check_group(
            "intervention",
            &[("error", self.error), ("cognitive", self.cognitive), ("history", self.history)],
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeverityTable {
    pub json_syntax: f64,
    pub schema: f64,
    pub mark: f64,
    pub data: f64,
    pub encoding: f64,
}

impl Default for SeverityTable {
    fn default() -> Self {
        Self {
            json_syntax: 0.4,
            schema: 0.6,
            mark: 0.5,
            data: 0.7,
            encoding: 0.7,
        }
    }
}

impl SeverityTable {
    pub fn get(&self, category: ErrorCategory) -> f64 {
        match category {
            ErrorCategory::JsonSyntax => self.json_syntax,
            ErrorCategory::Schema => self.schema,
            ErrorCategory::Mark => self.mark,
            ErrorCategory::Data => self.data,
            ErrorCategory::Encoding => self.encoding,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterventionConfig {
    pub threshold: f64,
    /// Idle time beyond which an inactivity trigger calls for immediate help.
    pub stagnation_secs: u64,
    /// Occurrences at which an error category reaches full severity.
    pub saturation_count: usize,
    pub severity: SeverityTable,
}

impl Default for InterventionConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            stagnation_secs: 60,
            saturation_count: 3,
            severity: SeverityTable::default(),
        }
    }
}

impl InterventionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(format!("intervention threshold {} is outside [0, 1]", self.threshold));
        }
        if self.saturation_count == 0 {
            return Err("saturation_count must be positive".into());
        }
        let s = &self.severity;
        if [s.json_syntax, s.schema, s.mark, s.data, s.encoding]
            .iter()
            .any(|v| !(0.0..=1.0).contains(v))
        {
            return Err("severities must lie within [0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeComponents {
    pub cognitive_vote: f64,
    pub error_vote: f64,
    pub history_vote: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeDecision {
    pub chosen: FeedbackStyle,
    pub technical_inclination: f64,
    pub components: ModeComponents,
}

pub fn mode_inclination(c: &ModeComponents, w: &ModeWeights) -> f64 {
    w.cognitive * c.cognitive_vote + w.error * c.error_vote + w.history * c.history_vote
}

pub fn mode_components(review: &ReviewSummary) -> ModeComponents {
    let rank = review.cognitive.level.rank() as f64;
    let total = review.errors.recent_total();
    let mechanical: usize = review
        .errors
        .recent
        .iter()
        .filter(|(c, _)| c.is_mechanical())
        .map(|(_, n)| n)
        .sum();
    ModeComponents {
        cognitive_vote: 1.0 - (rank - 1.0) / 5.0,
        error_vote: if total == 0 { 0.0 } else { mechanical as f64 / total as f64 },
        history_vote: 1.0 - review.history.success_rate,
    }
}

/// Technical iff inclination exceeds one half; ties go to heuristic.
pub fn decide_mode(components: ModeComponents, w: &ModeWeights) -> ModeDecision {
    let technical_inclination = mode_inclination(&components, w);
    ModeDecision {
        chosen: if technical_inclination > 0.5 {
            FeedbackStyle::Technical
        } else {
            FeedbackStyle::Heuristic
        },
        technical_inclination,
        components,
    }
}

pub fn select_mode(review: &ReviewSummary, w: &ModeWeights) -> ModeDecision {
    decide_mode(mode_components(review), w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseComponents {
    pub relevance: f64,
    pub complexity_fit: f64,
    pub consistency: f64,
    pub clarity: f64,
    pub urgency: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseScore {
    #[serde(flatten)]
    pub components: ResponseComponents,
    pub total: f64,
}

pub fn response_total(c: &ResponseComponents, w: &ResponseWeights) -> f64 {
    w.relevance * c.relevance
        + w.complexity * c.complexity_fit
        + w.consistency * c.consistency
        + w.clarity * c.clarity
        + w.urgency * c.urgency
}

#[derive(Debug, Clone, Copy)]
pub struct ScoreContext<'a> {
    pub question: Option<&'a str>,
    /// Findings of the current run check.
    pub errors: &'a [AnalysisError],
    pub review: &'a ReviewSummary,
}

pub fn tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn reference_tokens(ctx: &ScoreContext<'_>) -> BTreeSet<String> {
    let mut out = ctx.question.map(tokens).unwrap_or_default();
    for e in ctx.errors {
        out.extend(tokens(e.category.as_str()));
        out.extend(tokens(&e.message));
    }
    out
}

fn sentence_count(paragraph: &str) -> usize {
    let prose: Vec<&str> = paragraph
        .lines()
        .filter(|l| !l.starts_with("    ") && !l.trim().is_empty())
        .collect();
    let text = prose.join(" ");
    let chars: Vec<char> = text.chars().collect();
    let mut n = 0;
    for (i, c) in chars.iter().enumerate() {
        if matches!(c, '.' | '?' | '!') && chars.get(i + 1).is_none_or(|n| n.is_whitespace()) {
            n += 1;
        }
    }
    // Trailing text without terminal punctuation is a sentence too.
    if chars.iter().rev().find(|c| !c.is_whitespace()).is_some_and(|c| !matches!(c, '.' | '?' | '!')) {
        n += 1;
    }
    n
}

pub fn clarity(c: &FeedbackCandidate) -> f64 {
    let short_paragraphs = c.text.split("\n\n").all(|p| sentence_count(p) <= 3);
    let has_code = c.style == FeedbackStyle::Heuristic || c.code_lines > 0;
    if short_paragraphs && has_code {
        1.0
    } else {
        0.5
    }
}

pub fn response_components(c: &FeedbackCandidate, ctx: &ScoreContext<'_>) -> ResponseComponents {
    let reference = reference_tokens(ctx);
    let relevance = if reference.is_empty() {
        0.0
    } else {
        tokens(&c.text).intersection(&reference).count() as f64 / reference.len() as f64
    };
    let target = ctx.review.cognitive.level.rank() as f64 / 6.0;
    let length = (c.word_count as f64 / 100.0).min(1.0);
    ResponseComponents {
        relevance,
        complexity_fit: 1.0 - (target - length).abs(),
        consistency: if c.style.mode() == ctx.review.history.preferred_mode { 1.0 } else { 0.0 },
        clarity: clarity(c),
        urgency: if ctx.errors.is_empty() { 0.0 } else { 1.0 },
    }
}

pub fn score_candidate(c: &FeedbackCandidate, ctx: &ScoreContext<'_>, w: &ResponseWeights) -> ResponseScore {
    let components = response_components(c, ctx);
    ResponseScore { total: response_total(&components, w), components }
}

/// Index of the highest total; the earliest wins ties.
pub fn argmax(totals: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &t) in totals.iter().enumerate() {
        if best.is_none_or(|b| t > totals[b]) {
            best = Some(i);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackDecision {
    pub candidate: FeedbackCandidate,
    pub candidate_index: usize,
    /// Present only when the style was chosen adaptively.
    pub mode_decision: Option<ModeDecision>,
    pub score: ResponseScore,
    pub scores: Vec<ResponseScore>,
    pub justification: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecisionError {
    #[error("candidate set is empty")]
    EmptySet,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecisionWeights {
    pub mode: ModeWeights,
    pub response: ResponseWeights,
    pub intervention: InterventionWeights,
}

impl DecisionWeights {
    pub fn validate(&self) -> Result<(), WeightError> {
        self.mode.validate()?;
        self.response.validate()?;
        self.intervention.validate()
    }
}

pub fn select_response(
    set: &CandidateSet,
    ctx: &ScoreContext<'_>,
    w: &DecisionWeights,
) -> Result<FeedbackDecision, DecisionError> {
    if set.is_empty() {
        return Err(DecisionError::EmptySet);
    }
    let (style, mode_decision) = if !set.technical.is_empty() && !set.heuristic.is_empty() {
        let d = select_mode(ctx.review, &w.mode);
        (d.chosen, Some(d))
    } else if set.technical.is_empty() {
        (FeedbackStyle::Heuristic, None)
    } else {
        (FeedbackStyle::Technical, None)
    };
    let pool = set.style(style);
    let scores: Vec<ResponseScore> = pool.iter().map(|c| score_candidate(c, ctx, &w.response)).collect();
    let totals: Vec<f64> = scores.iter().map(|s| s.total).collect();
    let idx = argmax(&totals).expect("pool is non-empty");
    let justification = match &mode_decision {
        Some(d) => format!(
            "{style} style (technical inclination {:.3}); candidate {} scored {:.3}",
            d.technical_inclination,
            idx + 1,
            totals[idx]
        ),
        None => format!("{style} mode is fixed; candidate {} scored {:.3}", idx + 1, totals[idx]),
    };
    Ok(FeedbackDecision {
        candidate: pool[idx].clone(),
        candidate_index: idx,
        mode_decision,
        score: scores[idx],
        scores,
        justification,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterventionComponents {
    pub error_severity: f64,
    pub cognitive_need: f64,
    pub history_need: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionDecision {
    pub should_intervene: bool,
    pub score: f64,
    pub components: InterventionComponents,
    pub reason: String,
    pub immediate: bool,
}

pub fn intervention_score(c: &InterventionComponents, w: &InterventionWeights) -> f64 {
    w.error * c.error_severity + w.cognitive * c.cognitive_need + w.history * c.history_need
}

pub fn error_severity(recent: &BTreeMap<ErrorCategory, usize>, cfg: &InterventionConfig) -> f64 {
    recent
        .iter()
        .map(|(c, &n)| cfg.severity.get(*c) * (n as f64 / cfg.saturation_count as f64).min(1.0))
        .fold(0.0, f64::max)
}

pub fn intervention_components(review: &ReviewSummary, cfg: &InterventionConfig) -> InterventionComponents {
    let rank = review.cognitive.level.rank() as f64;
    InterventionComponents {
        error_severity: error_severity(&review.errors.recent, cfg),
        cognitive_need: 1.0 - review.cognitive.understanding * (rank / 6.0),
        history_need: 0.5 * review.history.help_frequency + 0.5 * (1.0 - review.history.success_rate),
    }
}

/// Help requests and stagnation act at once; everything else is weighed.
pub fn immediate_reason(trigger: &Trigger, cfg: &InterventionConfig) -> Option<String> {
    if trigger.is_passive() {
        return Some(format!("explicit help request ({})", trigger.subtype));
    }
    match trigger.inactivity_secs() {
        Some(secs) if trigger.subtype == TriggerSubtype::Inactivity && secs > cfg.stagnation_secs => Some(
            format!("student stagnant for {secs} s (over {} s)", cfg.stagnation_secs),
        ),
        _ => None,
    }
}

pub fn decide_from(
    components: InterventionComponents,
    immediate: Option<String>,
    w: &InterventionWeights,
    cfg: &InterventionConfig,
) -> InterventionDecision {
    let score = intervention_score(&components, w);
    match immediate {
        Some(reason) => InterventionDecision {
            should_intervene: true,
            score,
            components,
            reason,
            immediate: true,
        },
        None => {
            let should_intervene = score > cfg.threshold;
            InterventionDecision {
                should_intervene,
                score,
                components,
                reason: format!(
                    "score {score:.3} {} threshold {:.3}",
                    if should_intervene { "exceeds" } else { "does not exceed" },
                    cfg.threshold
                ),
                immediate: false,
            }
        }
    }
}

pub fn decide_intervention(
    review: &ReviewSummary,
    trigger: &Trigger,
    w: &InterventionWeights,
    cfg: &InterventionConfig,
) -> InterventionDecision {
    decide_from(intervention_components(review, cfg), immediate_reason(trigger, cfg), w, cfg)
}

fn pct(x: f64) -> String {
    format!("{}", (x * 100.0).round())
}

/// Backend-mediated selection. Falls back to [`select_response`] when the
/// reply is unusable or names a response that is not in the set.
pub fn select_response_via_backend(
    set: &CandidateSet,
    ctx: &ScoreContext<'_>,
    spec: &str,
    w: &DecisionWeights,
    backend: &dyn TextBackend,
    params: &GenerationParams,
) -> Result<FeedbackDecision, DecisionError> {
    let fallback = select_response(set, ctx, w)?;
    let texts = |v: &[FeedbackCandidate]| v.iter().map(|c| c.text.clone()).collect::<Vec<_>>();
    let thoughts = json!({"technical": texts(&set.technical), "heuristic": texts(&set.heuristic)});
    let r = ctx.review;
    let prompt = prompts::render(
        prompts::SELECT_RESPONSE,
        &[
            ("w_mode_cognitive", &pct(w.mode.cognitive)),
            ("w_mode_error", &pct(w.mode.error)),
            ("w_mode_history", &pct(w.mode.history)),
            ("w_relevance", &pct(w.response.relevance)),
            ("w_complexity", &pct(w.response.complexity)),
            ("w_consistency", &pct(w.response.consistency)),
            ("w_clarity", &pct(w.response.clarity)),
            ("w_urgency", &pct(w.response.urgency)),
            ("question", ctx.question.unwrap_or("(none)")),
            ("code", &spec.replace('\n', " ")),
            ("thoughts", &thoughts.to_string()),
            ("cognitive_info", &serde_json::to_string(&r.cognitive).unwrap_or_default()),
            ("error_info", &serde_json::to_string(&r.errors).unwrap_or_default()),
            ("learning_history", &serde_json::to_string(&r.history).unwrap_or_default()),
            ("code_analysis", &json!({"errors": ctx.errors}).to_string()),
        ],
    );
    let req = GenerationRequest::new(prompt, params);
    let Some(reply) = backend.complete(&req).ok().and_then(|r| extract_json_object(&r.text)) else {
        return Ok(fallback);
    };
    let style = match reply.get("selected_mode").and_then(Value::as_str) {
        Some("technical") => FeedbackStyle::Technical,
        Some("heuristic") => FeedbackStyle::Heuristic,
        _ => return Ok(fallback),
    };
    let chosen = reply.get("selected_response").and_then(Value::as_str).unwrap_or_default();
    let pool = set.style(style);
    let Some(idx) = pool.iter().position(|c| c.text.trim() == chosen.trim()) else {
        return Ok(fallback);
    };
    let scores: Vec<ResponseScore> = pool.iter().map(|c| score_candidate(c, ctx, &w.response)).collect();
    Ok(FeedbackDecision {
        candidate: pool[idx].clone(),
        candidate_index: idx,
        mode_decision: fallback.mode_decision,
        score: scores[idx],
        scores,
        justification: reply
            .get("justification")
            .and_then(Value::as_str)
            .unwrap_or("selected by backend")
            .to_owned(),
    })
}

/// Backend-mediated intervention decision. Immediate cases never reach the
/// backend; unusable replies fall back to the weighted rule.
pub fn decide_intervention_via_backend(
    review: &ReviewSummary,
    trigger: &Trigger,
    mode: FeedbackMode,
    w: &InterventionWeights,
    cfg: &InterventionConfig,
    backend: &dyn TextBackend,
    params: &GenerationParams,
) -> InterventionDecision {
    let fallback = decide_intervention(review, trigger, w, cfg);
    if fallback.immediate {
        return fallback;
    }
    let trigger_info = json!({
        "type": trigger.kind.as_str(),
        "subtype": trigger.subtype.as_str(),
        "is_auto_generated": !trigger.is_passive(),
        "is_stagnant": false,
        "duration": trigger.inactivity_secs(),
    });
    let prompt = prompts::render(
        prompts::INTERVENTION,
        &[
            ("stagnation_secs", &cfg.stagnation_secs.to_string()),
            ("w_error", &pct(w.error)),
            ("w_cognitive", &pct(w.cognitive)),
            ("w_history", &pct(w.history)),
            ("threshold", &cfg.threshold.to_string()),
            ("mode", mode.as_str()),
            ("cognitive_analysis", &serde_json::to_string(&review.cognitive).unwrap_or_default()),
            ("error_analysis", &serde_json::to_string(&review.errors).unwrap_or_default()),
            ("learning_history", &serde_json::to_string(&review.history).unwrap_or_default()),
            ("trigger_info", &trigger_info.to_string()),
        ],
    );
    let req = GenerationRequest::new(prompt, params);
    let Some(reply) = backend.complete(&req).ok().and_then(|r| extract_json_object(&r.text)) else {
        return fallback;
    };
    match (
        reply.get("should_intervene").and_then(Value::as_bool),
        reply.get("intervention_score").and_then(Value::as_f64),
    ) {
        (Some(should_intervene), Some(score)) if (0.0..=1.0).contains(&score) => InterventionDecision {
            should_intervene,
            score,
            components: fallback.components,
            reason: reply
                .get("reason")
                .and_then(Value::as_str)
                .unwrap_or("decided by backend")
                .to_owned(),
            immediate: false,
        },
        _ => fallback,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{BloomLevel, Origin};
    use crate::feedback::CandidateMetadata;
    use crate::llm::MockBackend;
    use crate::review::{build_review, StudentHistory};
    use crate::triggers::TriggerDetail;

    fn review_with(level: BloomLevel, recent: &[(ErrorCategory, usize)], success: f64) -> ReviewSummary {
        let h = StudentHistory::new("t1".into(), FeedbackMode::Auto, vec![]);
        let mut r = build_review(&h, &question_trigger());
        r.cognitive.level = level;
        r.errors.recent = recent.iter().copied().collect();
        r.history.success_rate = success;
        r
    }

    fn question_trigger() -> Trigger {
        Trigger::new(TriggerSubtype::QuestionSubmitted, "s".into(), 0, TriggerDetail::Question {
            question: "q".into(),
        })
    }

    fn inactivity(secs: u64) -> Trigger {
        Trigger::new(TriggerSubtype::Inactivity, "s".into(), 0, TriggerDetail::Inactivity {
            duration_secs: secs,
        })
    }

    #[test]
    fn mode_examples() {
        let w = ModeWeights::default();
        let d = select_mode(&review_with(BloomLevel::Remember, &[(ErrorCategory::JsonSyntax, 2)], 0.0), &w);
        assert!((d.technical_inclination - 1.0).abs() < 1e-12);
        assert_eq!(d.chosen, FeedbackStyle::Technical);
        let d = select_mode(&review_with(BloomLevel::Apply, &[(ErrorCategory::Encoding, 2)], 0.9), &w);
        assert!((d.technical_inclination - 0.33).abs() < 1e-12);
        assert_eq!(d.chosen, FeedbackStyle::Heuristic);
        let c = mode_components(&review_with(BloomLevel::Apply, &[], 0.0));
        assert_eq!((c.error_vote, c.history_vote), (0.0, 1.0));
    }

    #[test]
    fn mode_tie_goes_heuristic() {
        let c = ModeComponents { cognitive_vote: 0.5, error_vote: 0.5, history_vote: 0.5 };
        let d = decide_mode(c, &ModeWeights { cognitive: 0.5, error: 0.25, history: 0.25 });
        assert_eq!(d.technical_inclination, 0.5);
        assert_eq!(d.chosen, FeedbackStyle::Heuristic);
    }

    #[test]
    fn weight_validation() {
        assert!(DecisionWeights::default().validate().is_ok());
        let bad = ModeWeights { cognitive: 0.6, error: 0.2, history: 0.3 };
        assert!(matches!(bad.validate(), Err(WeightError::BadSum { group: "mode", .. })));
        let neg = InterventionWeights { error: -0.1, cognitive: 0.6, history: 0.5 };
        assert!(matches!(neg.validate(), Err(WeightError::OutOfRange { .. })));
    }

    #[test]
    fn intervention_boundaries() {
        let w = InterventionWeights::default();
        let cfg = InterventionConfig::default();
        let at = |e, c, h| decide_from(
            InterventionComponents { error_severity: e, cognitive_need: c, history_need: h },
            None,
            &w,
            &cfg,
        );
        assert!(!at(0.0, 0.0, 0.0).should_intervene);
        assert!(at(1.0, 1.0, 1.0).should_intervene);
        let half = at(0.5, 0.5, 0.5);
        assert_eq!(half.score, 0.5);
        assert!(!half.should_intervene);
    }

    #[test]
    fn stagnation_and_help_requests_are_immediate() {
        let r = review_with(BloomLevel::Create, &[], 1.0);
        let w = InterventionWeights::default();
        let cfg = InterventionConfig::default();
        let d = decide_intervention(&r, &inactivity(140), &w, &cfg);
        assert!(d.immediate && d.should_intervene);
        assert!(decide_intervention(&r, &question_trigger(), &w, &cfg).should_intervene);
        assert!(!decide_intervention(&r, &inactivity(60), &w, &cfg).immediate);
    }

    #[test]
    fn severity_scales_with_frequency() {
        let cfg = InterventionConfig::default();
        let one: BTreeMap<_, _> = [(ErrorCategory::Encoding, 1)].into_iter().collect();
        assert!((error_severity(&one, &cfg) - 0.7 / 3.0).abs() < 1e-12);
        let many: BTreeMap<_, _> = [(ErrorCategory::Encoding, 5), (ErrorCategory::JsonSyntax, 9)].into_iter().collect();
        assert!((error_severity(&many, &cfg) - 0.7).abs() < 1e-12);
    }

    fn candidate(style: FeedbackStyle, text: &str) -> FeedbackCandidate {
        FeedbackCandidate::new(style, Origin::UserTriggered, text)
    }

    #[test]
    fn sub_scorers() {
        let r = review_with(BloomLevel::Apply, &[], 0.5);
        let ctx = ScoreContext { question: Some("why no bars"), errors: &[], review: &r };
        let c = response_components(&candidate(FeedbackStyle::Technical, "Completely unrelated."), &ctx);
        assert_eq!(c.relevance, 0.0);
        assert_eq!(c.urgency, 0.0);
        assert_eq!(c.consistency, 0.0);
        assert_eq!(c.clarity, 0.5);
        let c = response_components(&candidate(FeedbackStyle::Heuristic, "Why are there no bars?"), &ctx);
        assert_eq!(c.relevance, 1.0);
        assert_eq!(c.clarity, 1.0);
        let errs = [AnalysisError::new(ErrorCategory::Encoding, "Missing encoding specification")];
        let ctx = ScoreContext { question: None, errors: &errs, review: &r };
        assert_eq!(response_components(&candidate(FeedbackStyle::Heuristic, "x"), &ctx).urgency, 1.0);
    }

    #[test]
    fn argmax_prefers_earliest() {
        assert_eq!(argmax(&[0.6, 0.8, 0.7]), Some(1));
        assert_eq!(argmax(&[0.5, 0.5]), Some(0));
        assert_eq!(argmax(&[]), None);
    }

    fn set(tech: Vec<FeedbackCandidate>, heur: Vec<FeedbackCandidate>, r: &ReviewSummary) -> CandidateSet {
        CandidateSet {
            technical: tech,
            heuristic: heur,
            mode_used: FeedbackMode::Auto,
            is_automatic: false,
            metadata: CandidateMetadata {
                bloom_level: r.cognitive.level,
                confidence: r.cognitive.confidence,
                most_common_error: None,
                success_rate: r.history.success_rate,
                preferred_mode: r.history.preferred_mode,
            },
            degraded: false,
        }
    }

    #[test]
    fn auto_selection_draws_from_chosen_style() {
        let r = review_with(BloomLevel::Apply, &[(ErrorCategory::Encoding, 1)], 0.9);
        let ctx = ScoreContext { question: Some("why"), errors: &[], review: &r };
        let s = set(
            vec![candidate(FeedbackStyle::Technical, "why why")],
            vec![candidate(FeedbackStyle::Heuristic, "hm"), candidate(FeedbackStyle::Heuristic, "why?")],
            &r,
        );
        let d = select_response(&s, &ctx, &DecisionWeights::default()).unwrap();
        assert_eq!(d.candidate.style, FeedbackStyle::Heuristic);
        assert_eq!(d.candidate_index, 1);
        assert!(d.mode_decision.is_some());
        let empty = set(vec![], vec![], &r);
        assert_eq!(select_response(&empty, &ctx, &DecisionWeights::default()), Err(DecisionError::EmptySet));
    }

    #[test]
    fn backend_paths_agree_with_mock() {
        let r = review_with(BloomLevel::Remember, &[(ErrorCategory::JsonSyntax, 1)], 0.0);
        let ctx = ScoreContext { question: Some("fix"), errors: &[], review: &r };
        let s = set(
            vec![candidate(FeedbackStyle::Technical, "Use this:\n    {}")],
            vec![candidate(FeedbackStyle::Heuristic, "What do you think?")],
            &r,
        );
        let mock = MockBackend::new(1);
        let p = GenerationParams::default();
        let d = select_response_via_backend(&s, &ctx, "{}", &DecisionWeights::default(), &mock, &p).unwrap();
        assert_eq!(d.candidate.style, FeedbackStyle::Technical);
        let w = InterventionWeights::default();
        let cfg = InterventionConfig::default();
        let d = decide_intervention_via_backend(&r, &inactivity(140), FeedbackMode::Auto, &w, &cfg, &mock, &p);
        assert!(d.immediate);
        let t = Trigger::new(TriggerSubtype::BloomShift, "s".into(), 0, TriggerDetail::BloomShift {
            from: BloomLevel::Apply,
            to: BloomLevel::Remember,
        });
        let d = decide_intervention_via_backend(&r, &t, FeedbackMode::Auto, &w, &cfg, &mock, &p);
        assert!(!d.should_intervene);
    }
}
