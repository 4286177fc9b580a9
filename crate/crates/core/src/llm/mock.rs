//! Deterministic stand-in backend. Output depends only on `(prompt, seed)` and
//! always satisfies the response-format constraints of the feedback pipeline.

use std::hash::{Hash, Hasher};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::{GatewayError, GenerationRequest, GenerationResult, TextBackend};
use crate::cognition::{extract_json_object, KeywordTable};
use crate::domain::{FeedbackStyle, Origin};
use crate::prompts::{self, PromptKind, RESPONSE_MARKER};

#[derive(Debug, Clone)]
pub struct MockBackend {
    seed: u64,
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

impl TextBackend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, req: &GenerationRequest) -> Result<GenerationResult, GatewayError> {
        req.validate()?;
        let started = Instant::now();
        let text = mock_complete(&req.prompt, req.seed.unwrap_or(self.seed));
        Ok(GenerationResult {
            text,
            latency_ms: started.elapsed().as_millis() as u64,
            backend_name: "mock".into(),
            degraded: false,
        })
    }
}

fn rng_for(prompt: &str, seed: u64) -> ChaCha8Rng {
    // SipHash with fixed keys: stable across runs and platforms.
    #[allow(deprecated)]
    let mut h = std::hash::SipHasher::new_with_keys(0x636c_6173, 0x7361_6964);
    prompt.hash(&mut h);
    ChaCha8Rng::seed_from_u64(h.finish() ^ seed)
}

pub fn mock_complete(prompt: &str, seed: u64) -> String {
    let mut rng = rng_for(prompt, seed);
    match prompts::detect_kind(prompt) {
        PromptKind::Feedback(style, origin) => feedback_reply(prompt, style, origin, &mut rng),
        PromptKind::CognitiveAnalysis => bloom_reply(prompt),
        PromptKind::QuestionType => question_type_reply(prompt),
        PromptKind::SelectResponse => selection_reply(prompt),
        PromptKind::Intervention => intervention_reply(prompt),
        PromptKind::ReviewSummary => review_reply(),
        PromptKind::Other => feedback_reply(prompt, FeedbackStyle::Heuristic, Origin::Proactive, &mut rng),
    }
}

fn question_line(prompt: &str) -> String {
    prompts::field_line(prompt, "Student question:")
        .unwrap_or_default()
        .to_owned()
}

fn bloom_reply(prompt: &str) -> String {
    let question = question_line(prompt);
    let (level, _) = KeywordTable::builtin().bloom_level(&question);
    let label = level.as_str();
    let mut name = label.to_owned();
    name[..1].make_ascii_uppercase();
    json!({
        "level": label,
        "confidence": 0.8,
        "reasoning": format!("The student's question \"{question}\" aligns with the {name} level."),
    })
    .to_string()
}

fn question_type_reply(prompt: &str) -> String {
    let question = question_line(prompt);
    let (qt, phrase) = KeywordTable::builtin().question_type(&question);
    let reasoning = match phrase {
        Some(p) => format!("The student asks for a direct result ('{p}')."),
        None => "The student reasons about the problem instead of requesting the answer.".into(),
    };
    json!({"question_type": qt.as_str(), "reasoning": reasoning}).to_string()
}

fn selection_reply(prompt: &str) -> String {
    let thoughts = prompts::field_line(prompt, "thoughts:")
        .and_then(extract_json_object)
        .unwrap_or(Value::Null);
    let level = prompts::field_line(prompt, "cognitive_info:")
        .and_then(extract_json_object)
        .and_then(|v| v.get("level").and_then(Value::as_str).map(str::to_owned))
        .unwrap_or_default();
    let high = matches!(level.as_str(), "apply" | "analyze" | "evaluate" | "create");
    let mode = if high { "heuristic" } else { "technical" };
    let pick = thoughts
        .get(mode)
        .and_then(Value::as_array)
        .and_then(|a| a.first())
        .and_then(Value::as_str)
        .unwrap_or_default();
    json!({
        "selected_mode": mode,
        "selected_response": pick,
        "justification": format!("The student's cognitive level ({level}) suggests {mode} feedback."),
    })
    .to_string()
}

fn intervention_reply(prompt: &str) -> String {
    let stagnant = prompts::field_line(prompt, "trigger_info:")
        .is_some_and(|t| t.contains("\"passive\"") || t.contains("\"is_stagnant\":true"));
    json!({
        "should_intervene": stagnant,
        "intervention_score": if stagnant { 0.85 } else { 0.3 },
        "mode": if stagnant { "proactive" } else { "passive" },
        "reason": if stagnant {
            "The student requested help or has been stagnant; timely support is warranted."
        } else {
            "No strong signal of need; leaving room for independent exploration."
        },
    })
    .to_string()
}

fn review_reply() -> String {
    json!({
        "cognitive_analysis": {"level": "understand", "confidence": 0.5, "reasoning": "mock"},
        "error_analysis": {},
        "learning_history": {},
        "current_state": {},
        "knowledge_state": {},
        "metadata": {"is_auto_generated": true},
    })
    .to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Topic {
    Syntax,
    Schema,
    Data,
    Mark,
    Encoding,
    Polish,
}

fn topic_of(prompt: &str) -> Topic {
    if let Some(analysis) = prompts::field_line(prompt, "- Code Analysis:").and_then(extract_json_object) {
        let flag = |k: &str| analysis.get(k).and_then(Value::as_bool);
        if flag("valid_json") == Some(false) {
            return Topic::Syntax;
        }
        if flag("has_data") == Some(false) {
            return Topic::Data;
        }
        if flag("has_mark") == Some(false) {
            return Topic::Mark;
        }
        if flag("has_encoding") == Some(false) {
            return Topic::Encoding;
        }
    }
    let errors = prompts::field_line(prompt, "- Error Patterns:").unwrap_or_default();
    [
        ("json_syntax", Topic::Syntax),
        ("schema", Topic::Schema),
        ("data", Topic::Data),
        ("mark", Topic::Mark),
        ("encoding", Topic::Encoding),
    ]
    .into_iter()
    .find(|(k, _)| errors.contains(k))
    .map(|(_, t)| t)
    .unwrap_or(Topic::Polish)
}

struct TopicText {
    observation: &'static str,
    explanation: &'static str,
    snippets: [&'static str; 2],
    guiding: [&'static str; 3],
    prompts: [&'static str; 3],
}

fn topic_text(topic: Topic) -> TopicText {
    match topic {
        Topic::Syntax => TopicText {
            observation: "your specification is not valid JSON, so the chart cannot be parsed",
            explanation: "The editor could not read the specification because a bracket, quote, or comma is out of place.",
            snippets: [
                "{\n  \"mark\": \"bar\",\n  \"data\": {\"values\": [{\"score\": 72, \"category\": \"A\"}]}\n}",
                "{\n  \"data\": {\"url\": \"scores.json\"},\n  \"mark\": \"bar\",\n  \"encoding\": {}\n}",
            ],
            guiding: [
                "Which bracket or quote near the reported line might be missing its partner?",
                "Can you match every opening brace with a closing one, reading from the top?",
                "Is there a comma missing between two properties near the error position?",
            ],
            prompts: [
                "Look at the line and column in the error message.",
                "Check whether every key is wrapped in double quotes.",
                "Compare your brackets with the starter template.",
            ],
        },
        Topic::Schema => TopicText {
            observation: "your specification uses a top-level property that Vega-Lite does not recognize",
            explanation: "Vega-Lite only accepts a fixed set of top-level properties, so an unknown key makes the specification invalid.",
            snippets: [
                "{\n  \"$schema\": \"https://vega.github.io/schema/vega-lite/v5.json\",\n  \"mark\": \"bar\"\n}",
                "{\n  \"$schema\": \"https://vega.github.io/schema/vega-lite/v5.json\",\n  \"title\": \"Score distribution\",\n  \"mark\": \"bar\"\n}",
            ],
            guiding: [
                "Which of your top-level properties appears in the Vega-Lite documentation?",
                "Is every top-level key spelled the way the examples spell it?",
                "What does the schema line at the top of a Vega-Lite file tell the editor?",
            ],
            prompts: [
                "List your top-level keys and compare them with an example.",
                "Check the spelling of each property name.",
                "Think about what the $schema line is for.",
            ],
        },
        Topic::Data => TopicText {
            observation: "the data block has no values, so there is nothing to draw",
            explanation: "The chart is empty because the data field does not contain any rows for Vega-Lite to plot.",
            snippets: [
                "\"data\": {\n  \"values\": [\n    {\"score\": 72, \"category\": \"A\"}\n  ]\n}",
                "\"data\": {\n  \"url\": \"data/scores.json\"\n}",
            ],
            guiding: [
                "Where in your specification does Vega-Lite find the rows it should plot?",
                "What is missing from the data definition?",
                "How does your data structure match the fields used in the encoding?",
            ],
            prompts: [
                "Think about where each bar gets its value.",
                "Check whether the data block lists any records.",
                "Compare the field names in your data with those in your encoding.",
            ],
        },
        Topic::Mark => TopicText {
            observation: "the mark type is missing or is not one Vega-Lite knows",
            explanation: "Vega-Lite needs a valid mark type such as bar, line, or point to know which shape to draw.",
            snippets: [
                "\"mark\": {\n  \"type\": \"bar\",\n  \"tooltip\": true\n}",
                "\"mark\": {\n  \"type\": \"bar\",\n  \"color\": \"steelblue\"\n}",
            ],
            guiding: [
                "Which shape should represent each record in this chart?",
                "Does your mark name match one of the mark types listed in the documentation?",
                "What would change if you tried a different mark type here?",
            ],
            prompts: [
                "Think about which mark fits a distribution.",
                "Check the spelling of your mark type.",
                "Compare bar and point marks for this task.",
            ],
        },
        Topic::Encoding => TopicText {
            observation: "your chart does not have a complete encoding, which prevents Vega-Lite from drawing the bars",
            explanation: "Vega-Lite does not know what to plot on the axes, so the bars cannot be positioned.",
            snippets: [
                "\"encoding\": {\n  \"x\": {\"field\": \"score\", \"bin\": true, \"type\": \"quantitative\"},\n  \"y\": {\"aggregate\": \"count\", \"type\": \"quantitative\"}\n}",
                "\"encoding\": {\n  \"x\": {\"field\": \"category\", \"type\": \"nominal\"},\n  \"y\": {\"aggregate\": \"mean\", \"field\": \"score\", \"type\": \"quantitative\"}\n}",
            ],
            guiding: [
                "What do you expect the Y-axis to represent in your bar chart?",
                "Which fields are you trying to display on the x and y axes?",
                "What would happen if you tried adding a count aggregation for Y?",
            ],
            prompts: [
                "Think about raw counts versus averages.",
                "Check whether both axes have a field or an aggregate.",
                "Consider what each bar's height should mean.",
            ],
        },
        Topic::Polish => TopicText {
            observation: "the chart renders, and a title and clearer axis labels would make it easier to read",
            explanation: "Your specification is valid; adding a title and axis titles makes the chart easier to interpret.",
            snippets: [
                "\"title\": \"Score distribution\",\n\"encoding\": {\n  \"x\": {\"field\": \"score\", \"bin\": true, \"title\": \"Score range\"}\n}",
                "\"encoding\": {\n  \"color\": {\"field\": \"category\", \"type\": \"nominal\"},\n  \"y\": {\"aggregate\": \"mean\", \"field\": \"score\", \"title\": \"Average score\"}\n}",
            ],
            guiding: [
                "How would a classmate know what each axis means without asking you?",
                "Which story should a reader take away from this chart?",
                "What could make the categories easier to tell apart?",
            ],
            prompts: [
                "Think about the title a reader sees first.",
                "Check whether the axis labels explain the units.",
                "Consider whether color would help here.",
            ],
        },
    }
}

fn indent(code: &str) -> String {
    code.lines().map(|l| format!("    {l}")).collect::<Vec<_>>().join("\n")
}

fn feedback_reply(prompt: &str, style: FeedbackStyle, origin: Origin, rng: &mut ChaCha8Rng) -> String {
    let text = topic_text(topic_of(prompt));
    let mut guiding = text.guiding;
    guiding.shuffle(rng);
    let mut thinking = text.prompts;
    thinking.shuffle(rng);
    let supportive = ["You are making good progress.", "You are close, keep going.", "Nice work so far."];
    let blocks: Vec<String> = (0..3)
        .map(|i| {
            let snippet = indent(text.snippets[(i + rng.random_range(0..2)) % 2]);
            match (style, origin) {
                (FeedbackStyle::Technical, Origin::Proactive) => format!(
                    "I noticed {}. You can try this change:\n{snippet}\nThis small change should let the chart render as expected.",
                    text.observation
                ),
                (FeedbackStyle::Technical, Origin::UserTriggered) => format!(
                    "{} For example:\n{snippet}\nThis works because every mark needs data rows and encoded fields before Vega-Lite can position it.",
                    text.explanation
                ),
                (FeedbackStyle::Heuristic, Origin::Proactive) => {
                    format!("I noticed {}. {}", text.observation, guiding[i])
                }
                (FeedbackStyle::Heuristic, Origin::UserTriggered) => format!(
                    "{} {} {} {}",
                    guiding[i],
                    thinking[i],
                    thinking[(i + 1) % 3],
                    supportive[i]
                ),
            }
        })
        .collect();
    blocks
        .iter()
        .map(|b| format!("{RESPONSE_MARKER}\n{b}\n"))
        .collect::<Vec<_>>()
        .join("\n")
}
