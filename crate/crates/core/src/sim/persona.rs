//! Student personas: parameter files describing how a simulated student behaves.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{ErrorCategory, QuestionType};

use super::SimError;

const BUILTIN: [(&str, &str); 3] = [
    ("independent", include_str!("../../assets/sim/personas/independent.toml")),
    ("struggler", include_str!("../../assets/sim/personas/struggler.toml")),
    ("answer_seeker", include_str!("../../assets/sim/personas/answer_seeker.toml")),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PersonaKind {
    Independent,
    Struggler,
    AnswerSeeker,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionWeights {
    pub edit: f64,
    pub run: f64,
    pub question: f64,
    pub activity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PauseParams {
    /// Chance that the gap before an action becomes a long pause.
    pub probability: f64,
    pub secs: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorParams {
    /// Initial chance that a run is broken.
    pub rate: f64,
    /// Broken runs never drop below this share of all runs.
    pub min_failure_rate: f64,
    /// Relative drop of `rate` after each agent reply.
    pub learning: f64,
    pub weights: BTreeMap<ErrorCategory, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionParams {
    pub answer_seeking_prob: f64,
    /// Answer-seeking questions never drop below this share of all questions.
    pub min_answer_seeking_share: f64,
    pub max: usize,
    pub answer_seeking: Vec<String>,
    pub critical_thinking: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatingParams {
    pub probability: f64,
    pub dislike_technical: f64,
    pub dislike_heuristic: f64,
    pub delay_secs: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Persona {
    pub name: String,
    pub kind: PersonaKind,
    /// Gap between consecutive actions.
    pub think_secs: [f64; 2],
    /// Time spent on a task before trying to hand it in.
    pub task_secs: [f64; 2],
    pub actions: ActionWeights,
    pub pause: PauseParams,
    pub errors: ErrorParams,
    pub questions: QuestionParams,
    pub ratings: RatingParams,
}

fn probability(name: &str, p: f64) -> Result<(), String> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(format!("{name} = {p} is outside [0, 1]"))
    }
}

fn range(name: &str, r: [f64; 2]) -> Result<(), String> {
    if r[0] >= 0.0 && r[0] <= r[1] && r[1].is_finite() {
        Ok(())
    } else {
        Err(format!("{name} = {r:?} is not a range"))
    }
}

impl Persona {
    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        let value: toml::Value = toml::from_str(text).map_err(|e| SimError::ScenarioInvalid(e.to_string()))?;
        Self::from_value(value)
    }

    pub fn from_value(value: toml::Value) -> Result<Self, SimError> {
        let p: Persona = value.try_into().map_err(|e: toml::de::Error| SimError::ScenarioInvalid(e.to_string()))?;
        p.validate().map_err(|e| SimError::ScenarioInvalid(format!("persona '{}': {e}", p.name)))?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), String> {
        range("think_secs", self.think_secs)?;
        range("task_secs", self.task_secs)?;
        range("pause.secs", self.pause.secs)?;
        range("ratings.delay_secs", self.ratings.delay_secs)?;
        if self.think_secs[1] <= 0.0 {
            return Err("think_secs must allow a positive gap".into());
        }
        probability("pause.probability", self.pause.probability)?;
        probability("errors.rate", self.errors.rate)?;
        probability("errors.min_failure_rate", self.errors.min_failure_rate)?;
        probability("errors.learning", self.errors.learning)?;
        probability("questions.answer_seeking_prob", self.questions.answer_seeking_prob)?;
        probability("questions.min_answer_seeking_share", self.questions.min_answer_seeking_share)?;
        probability("ratings.probability", self.ratings.probability)?;
        probability("ratings.dislike_technical", self.ratings.dislike_technical)?;
        probability("ratings.dislike_heuristic", self.ratings.dislike_heuristic)?;
        if self.errors.min_failure_rate >= 1.0 {
            return Err("errors.min_failure_rate must stay below 1 so tasks can finish".into());
        }
        let a = &self.actions;
        let weights = [a.edit, a.run, a.question, a.activity];
        if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) || a.run <= 0.0 {
            return Err("action weights must be non-negative with a positive run weight".into());
        }
        let needs_errors = self.errors.rate > 0.0 || self.errors.min_failure_rate > 0.0;
        if needs_errors && !self.errors.weights.values().any(|w| *w > 0.0) {
            return Err("errors.weights needs a positive entry".into());
        }
        if self.errors.weights.values().any(|w| *w < 0.0) {
            return Err("errors.weights must be non-negative".into());
        }
        let q = &self.questions;
        if a.question > 0.0 && q.max > 0 {
            if q.answer_seeking.is_empty() && (q.answer_seeking_prob > 0.0 || q.min_answer_seeking_share > 0.0) {
                return Err("questions.answer_seeking is empty".into());
            }
            if q.critical_thinking.is_empty() && q.min_answer_seeking_share < 1.0 && q.answer_seeking_prob < 1.0 {
                return Err("questions.critical_thinking is empty".into());
            }
        }
        Ok(())
    }

    /// Picks the category of a broken run.
    pub fn error_category(&self, rng: &mut impl Rng) -> ErrorCategory {
        let entries: Vec<(ErrorCategory, f64)> =
            self.errors.weights.iter().filter(|(_, w)| **w > 0.0).map(|(c, w)| (*c, *w)).collect();
        match WeightedIndex::new(entries.iter().map(|e| e.1)) {
            Ok(dist) => entries[dist.sample(rng)].0,
            Err(_) => ErrorCategory::Encoding,
        }
    }

    /// Whether a clean run keeps the failure floor.
    pub fn clean_allowed(&self, runs: usize, failures: usize) -> bool {
        failures as f64 / (runs + 1) as f64 >= self.errors.min_failure_rate
    }

    /// Whether a critical-thinking question keeps the answer-seeking floor.
    pub fn critical_allowed(&self, asked: usize, answer_seeking: usize) -> bool {
        answer_seeking as f64 / (asked + 1) as f64 >= self.questions.min_answer_seeking_share
    }

    pub fn question(&self, rng: &mut impl Rng, asked: usize, answer_seeking: usize) -> (QuestionType, String) {
        let q = &self.questions;
        let roll: f64 = rng.random();
        let seeking = q.critical_thinking.is_empty()
            || roll < q.answer_seeking_prob
            || !self.critical_allowed(asked, answer_seeking);
        let (kind, pool) = if seeking && !q.answer_seeking.is_empty() {
            (QuestionType::AnswerSeeking, &q.answer_seeking)
        } else {
            (QuestionType::CriticalThinking, &q.critical_thinking)
        };
        (kind, pool[rng.random_range(0..pool.len())].clone())
    }
}

/// Source text of a builtin persona.
pub fn builtin_source(name: &str) -> Option<&'static str> {
    BUILTIN.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn builtin_names() -> impl Iterator<Item = &'static str> {
    BUILTIN.iter().map(|(n, _)| *n)
}

/// Recursively overlays `top` onto `base`; tables merge, anything else replaces.
pub fn merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(existing) => merge(existing, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}

/// Resolves persona tables that may `extends` another persona, builtin or
/// defined alongside.
pub struct PersonaSet {
    raw: BTreeMap<String, toml::Value>,
}

impl PersonaSet {
    pub fn new() -> Self {
        let raw = BUILTIN
            .iter()
            .map(|(n, s)| (n.to_string(), toml::from_str(s).expect("builtin personas parse")))
            .collect();
        Self { raw }
    }

    pub fn insert(&mut self, name: &str, mut table: toml::Value) {
        if let toml::Value::Table(t) = &mut table {
            t.entry("name").or_insert_with(|| toml::Value::String(name.to_owned()));
        }
        self.raw.insert(name.to_owned(), table);
    }

    pub fn contains(&self, name: &str) -> bool {
        self.raw.contains_key(name)
    }

    pub fn resolve(&self, name: &str) -> Result<Persona, SimError> {
        let value = self.flatten(name, &mut Vec::new())?;
        Persona::from_value(value)
    }

    fn flatten(&self, name: &str, seen: &mut Vec<String>) -> Result<toml::Value, SimError> {
        if seen.iter().any(|s| s == name) {
            return Err(SimError::ScenarioInvalid(format!("persona '{name}' extends itself")));
        }
        seen.push(name.to_owned());
        let mut own = self
            .raw
            .get(name)
            .cloned()
            .ok_or_else(|| SimError::ScenarioInvalid(format!("unknown persona '{name}'")))?;
        let parent = match &mut own {
            toml::Value::Table(t) => t.remove("extends"),
            _ => return Err(SimError::ScenarioInvalid(format!("persona '{name}' is not a table"))),
        };
        match parent {
            None => Ok(own),
            Some(toml::Value::String(p)) => {
                let mut base = self.flatten(&p, seen)?;
                if let toml::Value::Table(t) = &mut base {
                    t.insert("name".into(), toml::Value::String(name.to_owned()));
                }
                merge(&mut base, own);
                Ok(base)
            }
            Some(_) => Err(SimError::ScenarioInvalid(format!("persona '{name}': extends must be a name"))),
        }
    }
}

impl Default for PersonaSet {
    fn default() -> Self {
        Self::new()
    }
}
