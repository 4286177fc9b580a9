//! Versioned prompt templates. Placeholders are written `{{name}}`.

use crate::domain::{FeedbackStyle, Origin};

pub const TEMPLATE_VERSION: u32 = 1;

/// Separator between generated responses; bit-exact on the wire.
pub const RESPONSE_MARKER: &str = "---RESPONSE---";

pub const CONTEXT: &str = include_str!("../assets/prompts/context.txt");
pub const COGNITIVE_ANALYSIS: &str = include_str!("../assets/prompts/cognitive_analysis.txt");
pub const QUESTION_TYPE: &str = include_str!("../assets/prompts/question_type.txt");
pub const TECHNICAL_PROACTIVE: &str = include_str!("../assets/prompts/technical_proactive.txt");
pub const TECHNICAL_USER: &str = include_str!("../assets/prompts/technical_user.txt");
pub const HEURISTIC_PROACTIVE: &str = include_str!("../assets/prompts/heuristic_proactive.txt");
pub const HEURISTIC_USER: &str = include_str!("../assets/prompts/heuristic_user.txt");
pub const SELECT_RESPONSE: &str = include_str!("../assets/prompts/select_response.txt");
pub const INTERVENTION: &str = include_str!("../assets/prompts/intervention.txt");
pub const REVIEW_SUMMARY: &str = include_str!("../assets/prompts/review_summary.txt");

pub fn feedback_template(style: FeedbackStyle, origin: Origin) -> &'static str {
    match (style, origin) {
        (FeedbackStyle::Technical, Origin::Proactive) => TECHNICAL_PROACTIVE,
        (FeedbackStyle::Technical, Origin::UserTriggered) => TECHNICAL_USER,
        (FeedbackStyle::Heuristic, Origin::Proactive) => HEURISTIC_PROACTIVE,
        (FeedbackStyle::Heuristic, Origin::UserTriggered) => HEURISTIC_USER,
    }
}

/// Which template a prompt was built from, judged by its opening line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptKind {
    Feedback(FeedbackStyle, Origin),
    CognitiveAnalysis,
    QuestionType,
    SelectResponse,
    Intervention,
    ReviewSummary,
    Other,
}

pub fn detect_kind(prompt: &str) -> PromptKind {
    let first = prompt.trim_start().lines().next().unwrap_or_default();
    let table = [
        (TECHNICAL_PROACTIVE, PromptKind::Feedback(FeedbackStyle::Technical, Origin::Proactive)),
        (TECHNICAL_USER, PromptKind::Feedback(FeedbackStyle::Technical, Origin::UserTriggered)),
        (HEURISTIC_PROACTIVE, PromptKind::Feedback(FeedbackStyle::Heuristic, Origin::Proactive)),
        (HEURISTIC_USER, PromptKind::Feedback(FeedbackStyle::Heuristic, Origin::UserTriggered)),
        (COGNITIVE_ANALYSIS, PromptKind::CognitiveAnalysis),
        (QUESTION_TYPE, PromptKind::QuestionType),
        (SELECT_RESPONSE, PromptKind::SelectResponse),
        (INTERVENTION, PromptKind::Intervention),
        (REVIEW_SUMMARY, PromptKind::ReviewSummary),
    ];
    table
        .into_iter()
        .find(|(t, _)| first == opening(t))
        .map(|(_, k)| k)
        .unwrap_or(PromptKind::Other)
}

/// Substitutes every `{{name}}` placeholder. Unknown placeholders are left as-is.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_owned();
    for (name, value) in vars {
        out = out.replace(&format!("{{{{{name}}}}}"), value);
    }
    out
}

/// Placeholders still present in a rendered prompt.
pub fn unresolved(text: &str) -> Vec<String> {
    let mut found = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) => {
                let name = &after[..end];
                if !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                    found.push(name.to_owned());
                }
                rest = &after[end + 2..];
            }
            None => break,
        }
    }
    found
}

fn opening(template: &str) -> &str {
    template.lines().next().unwrap_or_default()
}

/// Value of the first `label` line (e.g. `- Code Analysis: `), if present.
pub fn field_line<'a>(prompt: &'a str, label: &str) -> Option<&'a str> {
    prompt
        .lines()
        .find_map(|l| l.trim_start().strip_prefix(label))
        .map(str::trim)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feedback_templates_keep_the_marker() {
        for style in [FeedbackStyle::Technical, FeedbackStyle::Heuristic] {
            for origin in [Origin::Proactive, Origin::UserTriggered] {
                let t = feedback_template(style, origin);
                assert!(t.contains("generate 3 different"));
                assert_eq!(t.matches(RESPONSE_MARKER).count(), 4);
                assert_eq!(detect_kind(t), PromptKind::Feedback(style, origin));
            }
        }
    }

    #[test]
    fn openings_are_distinct() {
        assert!(TECHNICAL_PROACTIVE.starts_with(
            "As a proactive technical tutor, generate 3 different responses"
        ));
        assert!(TECHNICAL_USER.starts_with("As a technical tutor"));
        assert_eq!(detect_kind(COGNITIVE_ANALYSIS), PromptKind::CognitiveAnalysis);
        assert_eq!(detect_kind(QUESTION_TYPE), PromptKind::QuestionType);
        assert_eq!(detect_kind(SELECT_RESPONSE), PromptKind::SelectResponse);
        assert_eq!(detect_kind(INTERVENTION), PromptKind::Intervention);
        assert_eq!(detect_kind("hello"), PromptKind::Other);
    }

    #[test]
    fn render_fills_placeholders() {
        let out = render("Q: {{question}} / {\"json\": 1} {{question}}", &[("question", "why?")]);
        assert_eq!(out, "Q: why? / {\"json\": 1} why?");
        assert!(unresolved(&out).is_empty());
        assert_eq!(unresolved(COGNITIVE_ANALYSIS), vec!["question", "code"]);
    }
}
