//! Prompt construction, candidate parsing, and response-constraint enforcement.

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::analyzer::SectionPresence;
use crate::domain::{AnalysisError, BloomLevel, ErrorCategory, FeedbackMode, FeedbackStyle, Origin, QuestionType};
use crate::llm::{mock_complete, GenerationParams, GenerationRequest, TextBackend};
use crate::prompts::{self, RESPONSE_MARKER};
use crate::review::ReviewSummary;

pub const PROACTIVE_HEURISTIC_MAX_WORDS: usize = 50;
pub const USER_HEURISTIC_MAX_WORDS: usize = 100;
pub const MIN_PROACTIVE_CODE_LINES: usize = 3;
pub const MAX_PROACTIVE_CODE_LINES: usize = 5;
pub const CANDIDATES_PER_STYLE: usize = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FeedbackError {
    #[error("silent mode produces no feedback")]
    SilentMode,
    #[error("reply is empty")]
    EmptyReply,
    #[error("reply has no '---RESPONSE---' marker")]
    NoMarkerFound,
    #[error("expected 3 responses, found {found}")]
    WrongCount { found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    /// Proactive technical feedback outside the 3 to 5 code-line range.
    CodeLines,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackCandidate {
    pub style: FeedbackStyle,
    pub origin: Origin,
    pub text: String,
    pub code_lines: usize,
    pub word_count: usize,
    pub truncated: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<Violation>,
}

impl FeedbackCandidate {
    pub fn new(style: FeedbackStyle, origin: Origin, raw: &str) -> Self {
        let mut text = strip_markdown(raw.trim());
        let mut truncated = false;
        if let Some(limit) = word_limit(style, origin) {
            if word_count(&text) > limit {
                text = truncate_words(&text, limit);
                truncated = true;
            }
        }
        let code_lines = code_line_count(&text);
        let mut violations = Vec::new();
        if style == FeedbackStyle::Technical
            && origin == Origin::Proactive
            && !(MIN_PROACTIVE_CODE_LINES..=MAX_PROACTIVE_CODE_LINES).contains(&code_lines)
        {
            violations.push(Violation::CodeLines);
        }
        Self {
            style,
            origin,
            word_count: word_count(&text),
            code_lines,
            text,
            truncated,
            violations,
        }
    }

    pub fn auto_generated(&self) -> bool {
        self.origin == Origin::Proactive
    }
}

pub fn word_limit(style: FeedbackStyle, origin: Origin) -> Option<usize> {
    match (style, origin) {
        (FeedbackStyle::Heuristic, Origin::Proactive) => Some(PROACTIVE_HEURISTIC_MAX_WORDS),
        (FeedbackStyle::Heuristic, Origin::UserTriggered) => Some(USER_HEURISTIC_MAX_WORDS),
        (FeedbackStyle::Technical, _) => None,
    }
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Lines indented by at least four spaces.
pub fn code_line_count(text: &str) -> usize {
    text.lines()
        .filter(|l| l.starts_with("    ") && !l.trim().is_empty())
        .count()
}

fn is_code(line: &str) -> bool {
    line.starts_with("    ") || line.starts_with('\t')
}

/// Keeps the longest run of whole sentences within `limit` words. A single
/// overlong first sentence is cut at the word limit.
pub fn truncate_words(text: &str, limit: usize) -> String {
    let mut best: Option<usize> = None;
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    for (i, &(idx, c)) in chars.iter().enumerate() {
        let next = chars.get(i + 1).map(|&(_, n)| n);
        let boundary = match c {
            '.' | '?' | '!' => next.is_none_or(char::is_whitespace),
            '\n' => true,
            _ => false,
        };
        if !boundary {
            continue;
        }
        let end = idx + c.len_utf8();
        if word_count(&text[..end]) <= limit {
            best = Some(end);
        } else {
            break;
        }
    }
    match best {
        Some(end) if word_count(&text[..end]) > 0 => text[..end].trim_end().to_owned(),
        _ => text.split_whitespace().take(limit).collect::<Vec<_>>().join(" "),
    }
}

/// Removes emphasis markers from prose lines and turns fenced code into
/// four-space indented blocks.
pub fn strip_markdown(text: &str) -> String {
    let mut out = Vec::new();
    let mut in_fence = false;
    for line in text.lines() {
        if line.trim_start().starts_with("```") {
            in_fence = !in_fence;
            continue;
        }
        if in_fence {
            out.push(format!("    {line}"));
        } else if is_code(line) {
            out.push(line.to_owned());
        } else {
            out.push(strip_emphasis(line));
        }
    }
    out.join("\n")
}

fn strip_emphasis(line: &str) -> String {
    let line = line.replace("**", "").replace("__", "");
    let line = strip_paired(&line, '*');
    strip_paired(&line, '_')
}

fn strip_paired(line: &str, marker: char) -> String {
    let chars: Vec<char> = line.chars().collect();
    let opens = |i: usize| {
        chars[i] == marker
            && (i == 0 || !chars[i - 1].is_alphanumeric())
            && chars.get(i + 1).is_some_and(|c| !c.is_whitespace())
    };
    let closes = |i: usize| {
        chars[i] == marker
            && i > 0
            && !chars[i - 1].is_whitespace()
            && chars.get(i + 1).is_none_or(|c| !c.is_alphanumeric())
    };
    let mut drop = vec![false; chars.len()];
    let mut i = 0;
    while i < chars.len() {
        if opens(i) {
            if let Some(j) = (i + 1..chars.len()).find(|&j| closes(j)) {
                drop[i] = true;
                drop[j] = true;
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    chars
        .iter()
        .zip(drop)
        .filter(|(_, d)| !d)
        .map(|(c, _)| *c)
        .collect()
}

pub fn parse_candidates(
    raw: &str,
    style: FeedbackStyle,
    origin: Origin,
) -> Result<Vec<FeedbackCandidate>, FeedbackError> {
    if raw.trim().is_empty() {
        return Err(FeedbackError::EmptyReply);
    }
    if !raw.contains(RESPONSE_MARKER) {
        return Err(FeedbackError::NoMarkerFound);
    }
    let blocks: Vec<&str> = raw
        .split(RESPONSE_MARKER)
        .map(str::trim)
        .filter(|b| !b.is_empty())
        .collect();
    if blocks.len() != CANDIDATES_PER_STYLE {
        return Err(FeedbackError::WrongCount { found: blocks.len() });
    }
    Ok(blocks
        .into_iter()
        .map(|b| FeedbackCandidate::new(style, origin, b))
        .collect())
}

/// Inputs that fill a feedback template.
#[derive(Debug, Clone, Copy)]
pub struct PromptInput<'a> {
    pub review: &'a ReviewSummary,
    /// The student's question, or the system's description of a detected issue.
    pub message: &'a str,
    pub spec: &'a str,
    pub analysis: &'a [AnalysisError],
    pub sections: Option<SectionPresence>,
    pub question_analysis: Option<(BloomLevel, f64, QuestionType)>,
    pub data_rows: Option<usize>,
    pub task_description: Option<&'a str>,
}

pub fn code_analysis_json(sections: Option<SectionPresence>, analysis: &[AnalysisError]) -> String {
    let s = sections.unwrap_or_default();
    json!({
        "valid_json": sections.is_some(),
        "has_schema": s.has_schema,
        "has_data": s.has_data,
        "has_mark": s.has_mark,
        "has_encoding": s.has_encoding,
        "errors": analysis.iter().map(|e| format!("{}: {}", e.category, e.message)).collect::<Vec<_>>(),
    })
    .to_string()
}

fn error_list(review: &ReviewSummary) -> String {
    if review.errors.recent.is_empty() {
        return "none".into();
    }
    ErrorCategory::ALL
        .iter()
        .filter_map(|c| review.errors.recent.get(c).map(|n| format!("{c} x{n}")))
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn build_prompt(input: &PromptInput<'_>, style: FeedbackStyle, origin: Origin) -> String {
    let r = input.review;
    let question_analysis = match input.question_analysis {
        Some((level, confidence, qtype)) => json!({
            "bloom_level": level.as_str(),
            "confidence": confidence,
            "question_type": qtype.as_str(),
        })
        .to_string(),
        None => "none".into(),
    };
    let data_status = match input.data_rows {
        Some(0) => "data block present but empty".to_owned(),
        Some(n) => format!("{n} data rows available"),
        None => "no inline data values".to_owned(),
    };
    let task_context = input
        .task_description
        .map(|d| format!("- Task: {}", d.trim()))
        .unwrap_or_default();
    let cognitive = format!(
        "{} (confidence {:.2}, trend {})",
        r.cognitive.level,
        r.cognitive.confidence,
        serde_json::to_value(r.cognitive.trend).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
    );
    let process = format!(
        "success rate {:.2}, help frequency {:.2}, completed tasks {}, preferred mode {}",
        r.history.success_rate, r.history.help_frequency, r.history.completed_tasks, r.history.preferred_mode
    );
    prompts::render(
        prompts::feedback_template(style, origin),
        &[
            ("user_message", input.message.trim()),
            ("current_code", input.spec.trim()),
            ("code_analysis", &code_analysis_json(input.sections, input.analysis)),
            ("question_analysis", &question_analysis),
            ("data_status", &data_status),
            ("task_context", &task_context),
            ("cognitive_level", &cognitive),
            ("error_list", &error_list(r)),
            ("student_process", &process),
        ],
    )
}

/// One prompt per style the mode calls for.
pub fn prompts_for_mode(
    input: &PromptInput<'_>,
    mode: FeedbackMode,
    origin: Origin,
) -> Result<Vec<(FeedbackStyle, String)>, FeedbackError> {
    let styles: &[FeedbackStyle] = match mode {
        FeedbackMode::Silent => return Err(FeedbackError::SilentMode),
        FeedbackMode::Auto => &[FeedbackStyle::Technical, FeedbackStyle::Heuristic],
        FeedbackMode::Technical => &[FeedbackStyle::Technical],
        FeedbackMode::Heuristic => &[FeedbackStyle::Heuristic],
    };
    Ok(styles
        .iter()
        .map(|&s| (s, build_prompt(input, s, origin)))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateMetadata {
    pub bloom_level: BloomLevel,
    pub confidence: f64,
    pub most_common_error: Option<ErrorCategory>,
    pub success_rate: f64,
    pub preferred_mode: FeedbackMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub technical: Vec<FeedbackCandidate>,
    pub heuristic: Vec<FeedbackCandidate>,
    pub mode_used: FeedbackMode,
    pub is_automatic: bool,
    pub metadata: CandidateMetadata,
    /// Set when any style fell back to mock output.
    pub degraded: bool,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.technical.len() + self.heuristic.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn style(&self, style: FeedbackStyle) -> &[FeedbackCandidate] {
        match style {
            FeedbackStyle::Technical => &self.technical,
            FeedbackStyle::Heuristic => &self.heuristic,
        }
    }
}

fn metadata(review: &ReviewSummary) -> CandidateMetadata {
    CandidateMetadata {
        bloom_level: review.cognitive.level,
        confidence: review.cognitive.confidence,
        most_common_error: review.errors.most_common,
        success_rate: review.history.success_rate,
        preferred_mode: review.history.preferred_mode,
    }
}

/// Generates candidates for `mode`. Silent returns an empty set without
/// touching the backend. A reply that fails to parse is requested once more;
/// after that the mock stands in and the set is marked degraded.
pub fn generate(
    input: &PromptInput<'_>,
    mode: FeedbackMode,
    origin: Origin,
    backend: &dyn TextBackend,
    params: &GenerationParams,
) -> CandidateSet {
    let mut set = CandidateSet {
        technical: Vec::new(),
        heuristic: Vec::new(),
        mode_used: mode,
        is_automatic: origin == Origin::Proactive,
        metadata: metadata(input.review),
        degraded: false,
    };
    let Ok(prompts) = prompts_for_mode(input, mode, origin) else {
        return set;
    };
    for (style, prompt) in prompts {
        let req = GenerationRequest::new(prompt, params).with_system(prompts::CONTEXT.trim());
        let mut parsed = None;
        for attempt in 0..2 {
            match backend.complete(&req) {
                Ok(reply) => match parse_candidates(&reply.text, style, origin) {
                    Ok(c) => {
                        set.degraded |= reply.degraded;
                        parsed = Some(c);
                        break;
                    }
                    Err(e) => log::warn!("unusable {style} reply (attempt {}): {e}", attempt + 1),
                },
                Err(e) => log::warn!("{style} generation failed (attempt {}): {e}", attempt + 1),
            }
        }
        let candidates = parsed.unwrap_or_else(|| {
            set.degraded = true;
            let text = mock_complete(&req.prompt, params.seed.unwrap_or_default());
            parse_candidates(&text, style, origin).expect("mock output always parses")
        });
        match style {
            FeedbackStyle::Technical => set.technical = candidates,
            FeedbackStyle::Heuristic => set.heuristic = candidates,
        }
    }
    set
}
