//! Question classification: taxonomy level and question type.
//!
//! The backend is asked first. Replies are accepted only when they name
//! exactly one known label; anything else falls back to the keyword table in
//! `data/bloom_keywords.toml`, whose confidence is fixed at
//! [`FALLBACK_CONFIDENCE`].

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::domain::{BloomLevel, QuestionType};
use crate::llm::{GenerationParams, GenerationRequest, TextBackend};
use crate::prompts;

pub const FALLBACK_CONFIDENCE: f64 = 0.5;

const BUILTIN_TABLE: &str = include_str!("../assets/data/bloom_keywords.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssessmentSource {
    Backend,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CognitiveAssessment {
    pub level: BloomLevel,
    /// Within `[0, 1]`.
    pub confidence: f64,
    pub reasoning: String,
    pub source: AssessmentSource,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CognitionError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("invalid keyword table: {0}")]
    InvalidTable(String),
}

#[derive(Debug, Clone, Deserialize)]
struct RawTable {
    version: u32,
    default_level: String,
    levels: BTreeMap<String, Vec<String>>,
    question_type: RawQuestionType,
}

#[derive(Debug, Clone, Deserialize)]
struct RawQuestionType {
    answer_seeking: Vec<String>,
}

/// Keyword rules for the offline classifiers.
#[derive(Debug, Clone)]
pub struct KeywordTable {
    pub version: u32,
    default_level: BloomLevel,
    /// Highest level first.
    levels: Vec<(BloomLevel, Vec<String>)>,
    answer_seeking: Vec<String>,
}

impl KeywordTable {
    pub fn from_toml(text: &str) -> Result<Self, CognitionError> {
        let raw: RawTable =
            toml::from_str(text).map_err(|e| CognitionError::InvalidTable(e.to_string()))?;
        let parse_level = |name: &str| {
            BloomLevel::from_label(name)
                .ok_or_else(|| CognitionError::InvalidTable(format!("unknown level '{name}'")))
        };
        let mut levels = raw
            .levels
            .iter()
            .map(|(name, phrases)| {
                Ok((parse_level(name)?, phrases.iter().map(|p| p.to_lowercase()).collect()))
            })
            .collect::<Result<Vec<(BloomLevel, Vec<String>)>, CognitionError>>()?;
        levels.sort_by_key(|l| std::cmp::Reverse(l.0));
        Ok(Self {
            version: raw.version,
            default_level: parse_level(&raw.default_level)?,
            levels,
            answer_seeking: raw
                .question_type
                .answer_seeking
                .iter()
                .map(|p| p.to_lowercase())
                .collect(),
        })
    }

    pub fn builtin() -> &'static KeywordTable {
        static TABLE: OnceLock<KeywordTable> = OnceLock::new();
        TABLE.get_or_init(|| KeywordTable::from_toml(BUILTIN_TABLE).expect("builtin table parses"))
    }

    /// The highest level whose phrase list matches, with the matched phrase.
    pub fn bloom_level(&self, question: &str) -> (BloomLevel, Option<&str>) {
        let text = question.to_lowercase();
        for (level, phrases) in &self.levels {
            if let Some(p) = phrases.iter().find(|p| contains_phrase(&text, p)) {
                return (*level, Some(p.as_str()));
            }
        }
        (self.default_level, None)
    }

    pub fn question_type(&self, question: &str) -> (QuestionType, Option<&str>) {
        let text = question.to_lowercase();
        match self.answer_seeking.iter().find(|p| contains_phrase(&text, p)) {
            Some(p) => (QuestionType::AnswerSeeking, Some(p.as_str())),
            None => (QuestionType::CriticalThinking, None),
        }
    }
}

/// Substring match that only accepts hits on word boundaries.
fn contains_phrase(text: &str, phrase: &str) -> bool {
    if phrase.is_empty() {
        return false;
    }
    let is_word = |c: char| c.is_alphanumeric() || c == '\'';
    text.match_indices(phrase).any(|(i, _)| {
        let before = text[..i].chars().next_back();
        let after = text[i + phrase.len()..].chars().next();
        !before.is_some_and(is_word) && !after.is_some_and(is_word)
    })
}

pub fn fallback_bloom(question: &str, table: &KeywordTable) -> CognitiveAssessment {
    let (level, phrase) = table.bloom_level(question);
    let reasoning = match phrase {
        Some(p) => format!("Keyword rule matched '{p}', which indicates the {level} level."),
        None => format!("No keyword rule matched; defaulting to the {level} level."),
    };
    CognitiveAssessment {
        level,
        confidence: FALLBACK_CONFIDENCE,
        reasoning,
        source: AssessmentSource::Fallback,
    }
}

pub fn cognitive_prompt(question: &str, code_context: &str) -> String {
    let code = if code_context.trim().is_empty() { "(none)" } else { code_context };
    prompts::render(prompts::COGNITIVE_ANALYSIS, &[("question", question), ("code", code)])
}

pub fn question_type_prompt(question: &str) -> String {
    prompts::render(prompts::QUESTION_TYPE, &[("question", question)])
}

/// First JSON object embedded in `text`, tolerating surrounding prose or code fences.
pub(crate) fn extract_json_object(text: &str) -> Option<Value> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    if end <= start {
        return None;
    }
    serde_json::from_str::<Value>(&text[start..=end])
        .ok()
        .filter(Value::is_object)
}

/// Accepts `{"level": ...}` (optionally nested under `cognitive_analysis`) or
/// `level: apply` lines. Rejects anything that does not name exactly one level.
pub fn parse_bloom_reply(reply: &str) -> Option<CognitiveAssessment> {
    let (label, confidence, reasoning) = match extract_json_object(reply) {
        Some(v) => {
            let v = v.get("cognitive_analysis").cloned().unwrap_or(v);
            (
                v.get("level")?.as_str()?.to_owned(),
                v.get("confidence").and_then(Value::as_f64),
                v.get("reasoning").and_then(Value::as_str).map(str::to_owned),
            )
        }
        None => {
            let field = |name: &str| {
                reply.lines().find_map(|l| {
                    let (k, v) = l.split_once(':')?;
                    (k.trim().eq_ignore_ascii_case(name)).then(|| v.trim().to_owned())
                })
            };
            (
                field("level")?,
                field("confidence").and_then(|c| c.parse().ok()),
                field("reasoning"),
            )
        }
    };
    let level = BloomLevel::from_label(label.trim_matches(|c: char| !c.is_alphabetic()))?;
    let confidence = confidence.filter(|c| c.is_finite()).unwrap_or(0.8).clamp(0.0, 1.0);
    let reasoning = reasoning
        .filter(|r| !r.trim().is_empty())
        .unwrap_or_else(|| format!("The backend classified the question at the {level} level."));
    Some(CognitiveAssessment {
        level,
        confidence,
        reasoning,
        source: AssessmentSource::Backend,
    })
}

/// Accepts a reply naming exactly one of the two question-type labels.
pub fn parse_question_type_reply(reply: &str) -> Option<QuestionType> {
    let label = match extract_json_object(reply) {
        Some(v) => v.get("question_type")?.as_str()?.trim().to_lowercase(),
        None => reply.trim().to_lowercase(),
    };
    let ct = label.contains("critical_thinking") || label.contains("critical thinking");
    let asq = label.contains("answer_seeking") || label.contains("answer seeking");
    match (ct, asq) {
        (true, false) => Some(QuestionType::CriticalThinking),
        (false, true) => Some(QuestionType::AnswerSeeking),
        _ => None,
    }
}

pub struct Classifier<'a> {
    pub backend: Option<&'a dyn TextBackend>,
    pub params: &'a GenerationParams,
    pub table: &'a KeywordTable,
}

impl<'a> Classifier<'a> {
    pub fn new(
        backend: Option<&'a dyn TextBackend>,
        params: &'a GenerationParams,
        table: &'a KeywordTable,
    ) -> Self {
        Self { backend, params, table }
    }

    fn ask(&self, prompt: String) -> Option<String> {
        let backend = self.backend?;
        let req = GenerationRequest::new(prompt, self.params).with_system(prompts::CONTEXT.trim());
        match backend.complete(&req) {
            Ok(r) => Some(r.text),
            Err(e) => {
                log::warn!("classification backend failed: {e}");
                None
            }
        }
    }

    pub fn classify_bloom(
        &self,
        question: &str,
        code_context: &str,
    ) -> Result<CognitiveAssessment, CognitionError> {
        if question.trim().is_empty() {
            return Err(CognitionError::EmptyQuestion);
        }
        let from_backend = self
            .ask(cognitive_prompt(question, code_context))
            .and_then(|reply| parse_bloom_reply(&reply));
        Ok(from_backend.unwrap_or_else(|| fallback_bloom(question, self.table)))
    }

    pub fn classify_question_type(&self, question: &str) -> Result<QuestionType, CognitionError> {
        if question.trim().is_empty() {
            return Err(CognitionError::EmptyQuestion);
        }
        let from_backend = self
            .ask(question_type_prompt(question))
            .and_then(|reply| parse_question_type_reply(&reply));
        Ok(from_backend.unwrap_or_else(|| self.table.question_type(question).0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{GatewayError, GenerationResult, MockBackend};

    struct Canned(&'static str);

    impl TextBackend for Canned {
        fn name(&self) -> &str {
            "canned"
        }
        fn complete(&self, _: &GenerationRequest) -> Result<GenerationResult, GatewayError> {
            Ok(GenerationResult {
                text: self.0.into(),
                latency_ms: 0,
                backend_name: "canned".into(),
                degraded: false,
            })
        }
    }

    struct Down;

    impl TextBackend for Down {
        fn name(&self) -> &str {
            "down"
        }
        fn complete(&self, _: &GenerationRequest) -> Result<GenerationResult, GatewayError> {
            Err(GatewayError::Timeout { after_ms: 1 })
        }
    }

    fn params() -> GenerationParams {
        GenerationParams::default()
    }

    #[test]
    fn backend_path_reproduces_apply_example() {
        let mock = MockBackend::new(7);
        let p = params();
        let c = Classifier::new(Some(&mock), &p, KeywordTable::builtin());
        let a = c
            .classify_bloom("How do I apply a specific encoding to this chart?", "{}")
            .unwrap();
        assert_eq!(a.level, BloomLevel::Apply);
        assert_eq!(a.confidence, 0.8);
        assert_eq!(a.source, AssessmentSource::Backend);
        assert!(!a.reasoning.is_empty());
    }

    #[test]
    fn empty_question_is_rejected() {
        let p = params();
        let c = Classifier::new(None, &p, KeywordTable::builtin());
        assert_eq!(c.classify_bloom("  ", ""), Err(CognitionError::EmptyQuestion));
        assert_eq!(c.classify_question_type(""), Err(CognitionError::EmptyQuestion));
    }

    #[test]
    fn fallback_golden_values() {
        let p = params();
        let c = Classifier::new(Some(&Down), &p, KeywordTable::builtin());
        let a = c.classify_bloom("What does 'mark' mean?", "").unwrap();
        // Frozen from the shipped table: "what does" is an Understand phrase.
        assert_eq!(a.level, BloomLevel::Understand);
        assert_eq!(a.confidence, FALLBACK_CONFIDENCE);
        assert_eq!(a.source, AssessmentSource::Fallback);
    }

    #[test]
    fn question_type_rules() {
        let p = params();
        let c = Classifier::new(None, &p, KeywordTable::builtin());
        assert_eq!(
            c.classify_question_type("Give me the full code for Task 1").unwrap(),
            QuestionType::AnswerSeeking
        );
        assert_eq!(
            c.classify_question_type("Why would binning change what the y-axis means?").unwrap(),
            QuestionType::CriticalThinking
        );
        assert_eq!(
            c.classify_question_type("What do you expect the Y-axis to represent?").unwrap(),
            QuestionType::CriticalThinking
        );
    }

    #[test]
    fn unparsable_replies_fall_back() {
        let p = params();
        for reply in [
            "I think this is probably apply or analyze",
            r#"{"level": "apply or analyze", "confidence": 0.9}"#,
            r#"{"level": "synthesis"}"#,
            "",
        ] {
            let canned = Canned(reply);
            let c = Classifier::new(Some(&canned), &p, KeywordTable::builtin());
            let a = c.classify_bloom("Why is the chart empty?", "").unwrap();
            assert_eq!(a.source, AssessmentSource::Fallback, "reply {reply:?}");
            assert!(a.confidence <= FALLBACK_CONFIDENCE);
        }
        let canned = Canned(r#"{"question_type": "critical_thinking or answer_seeking"}"#);
        let c = Classifier::new(Some(&canned), &p, KeywordTable::builtin());
        assert_eq!(
            c.classify_question_type("just tell me the answer").unwrap(),
            QuestionType::AnswerSeeking
        );
    }

    #[test]
    fn structured_replies_are_accepted() {
        let a = parse_bloom_reply("```json\n{\"cognitive_analysis\": {\"level\": \"Analyze\", \"confidence\": 1.7}}\n```").unwrap();
        assert_eq!(a.level, BloomLevel::Analyze);
        assert_eq!(a.confidence, 1.0);
        let a = parse_bloom_reply("level: evaluate\nconfidence: 0.6\nreasoning: compares designs").unwrap();
        assert_eq!(a.level, BloomLevel::Evaluate);
        assert_eq!(a.confidence, 0.6);
        assert_eq!(parse_question_type_reply("answer_seeking"), Some(QuestionType::AnswerSeeking));
    }

    #[test]
    fn phrases_match_on_word_boundaries() {
        assert!(contains_phrase("how do i use it", "use"));
        assert!(!contains_phrase("because it fails", "use"));
        assert!(!contains_phrase("the means", "mean"));
        let (level, _) = KeywordTable::builtin().bloom_level("What is the difference between bin and timeUnit?");
        assert_eq!(level, BloomLevel::Analyze);
    }

    #[test]
    fn fallback_is_deterministic() {
        let t = KeywordTable::builtin();
        for q in ["Why is it blank?", "Give me the answer", "Design a new chart", "hmm"] {
            assert_eq!(fallback_bloom(q, t), fallback_bloom(q, t));
        }
    }
}
