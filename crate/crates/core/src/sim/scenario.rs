//! Scenario files: who is in the room, what the instructor does and when.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::alerts::AlertKind;
use crate::config::ServiceConfig;
use crate::domain::{FeedbackMode, StudentId};

use super::persona::{Persona, PersonaSet};
use super::SimError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudentAssignment {
    pub student_id: StudentId,
    pub persona: String,
    pub rng_seed: u64,
    #[serde(default)]
    pub name: Option<String>,
}

/// Shorthand for `count` students sharing a persona; ids are `{prefix}{nn}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cohort {
    pub persona: String,
    pub count: usize,
    pub prefix: String,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum InstructorAction {
    /// Whole class when `students` is absent.
    Mode {
        mode: FeedbackMode,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        students: Option<Vec<StudentId>>,
    },
    HandleAlerts {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        kind: Option<AlertKind>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub at_secs: u64,
    #[serde(flatten)]
    pub action: InstructorAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ServiceSource {
    Path(PathBuf),
    Inline(Box<ServiceConfig>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: String,
    duration_secs: u64,
    #[serde(default = "default_tick")]
    tick_secs: u64,
    service: ServiceSource,
    #[serde(default)]
    initial_mode: Option<FeedbackMode>,
    #[serde(default)]
    students: Vec<StudentAssignment>,
    #[serde(default)]
    cohorts: Vec<Cohort>,
    #[serde(default)]
    timeline: Vec<TimelineEntry>,
    #[serde(default)]
    persona_files: Vec<PathBuf>,
    #[serde(default)]
    personas: BTreeMap<String, toml::Value>,
}

fn default_tick() -> u64 {
    10
}

/// A fully resolved scenario, ready to run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub name: String,
    pub duration_secs: u64,
    pub tick_secs: u64,
    pub service: ServiceConfig,
    pub students: Vec<StudentAssignment>,
    /// Sorted by time; ties keep file order.
    pub timeline: Vec<TimelineEntry>,
    pub personas: BTreeMap<String, Persona>,
}

fn invalid(msg: impl Into<String>) -> SimError {
    SimError::ScenarioInvalid(msg.into())
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Relative paths inside the scenario resolve against `base`.
    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self, SimError> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        let mut service = match raw.service {
            ServiceSource::Path(p) => ServiceConfig::load(&base.join(p)).map_err(|e| invalid(e.to_string()))?,
            ServiceSource::Inline(c) => *c,
        };
        if let Some(mode) = raw.initial_mode {
            service.session.initial_mode = mode;
        }
        service.validate().map_err(|e| invalid(e.to_string()))?;
        for t in &service.session.tasks {
            if t.solution.is_none() {
                return Err(invalid(format!("task '{}' has no solution to simulate from", t.task_id)));
            }
        }

        let mut set = PersonaSet::new();
        for file in &raw.persona_files {
            let path = base.join(file);
            let text = std::fs::read_to_string(&path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
            let value: toml::Value = toml::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
            let name = value
                .get("name")
                .and_then(|n| n.as_str())
                .map(str::to_owned)
                .or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()))
                .ok_or_else(|| invalid(format!("{}: persona needs a name", path.display())))?;
            set.insert(&name, value);
        }
        for (name, table) in raw.personas {
            set.insert(&name, table);
        }

        let mut students = raw.students;
        for c in &raw.cohorts {
            let width = c.count.to_string().len().max(2);
            for i in 1..=c.count {
                students.push(StudentAssignment {
                    student_id: StudentId::new(format!("{}{:0width$}", c.prefix, i)),
                    persona: c.persona.clone(),
                    rng_seed: c.rng_seed.wrapping_add(i as u64),
                    name: None,
                });
            }
        }
        if students.is_empty() {
            return Err(invalid("scenario has no students"));
        }
        let mut ids = BTreeSet::new();
        for s in &students {
            if s.student_id.as_str().is_empty() {
                return Err(invalid("empty student id"));
            }
            if !ids.insert(s.student_id.clone()) {
                return Err(invalid(format!("student '{}' appears twice", s.student_id)));
            }
        }
        if raw.duration_secs == 0 || raw.tick_secs == 0 {
            return Err(invalid("duration_secs and tick_secs must be positive"));
        }

        let mut personas = BTreeMap::new();
        for s in &students {
            if !personas.contains_key(&s.persona) {
                personas.insert(s.persona.clone(), set.resolve(&s.persona)?);
            }
        }

        let mut timeline = raw.timeline;
        for t in &timeline {
            if t.at_secs > raw.duration_secs {
                return Err(invalid(format!("timeline entry at {} s is after the end", t.at_secs)));
            }
            if let InstructorAction::Mode { students: Some(list), .. } = &t.action {
                if list.is_empty() {
                    return Err(invalid(format!("mode change at {} s names no students", t.at_secs)));
                }
                if let Some(unknown) = list.iter().find(|s| !ids.contains(*s)) {
                    return Err(invalid(format!("mode change at {} s names unknown student '{unknown}'", t.at_secs)));
                }
            }
        }
        timeline.sort_by_key(|t| t.at_secs);

        Ok(Self {
            name: raw.name,
            duration_secs: raw.duration_secs,
            tick_secs: raw.tick_secs,
            service,
            students,
            timeline,
            personas,
        })
    }

    pub fn persona_of(&self, student: &StudentAssignment) -> &Persona {
        &self.personas[&student.persona]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const INLINE: &str = r#"
name = "inline"
duration_secs = 600

[service.session]
session_id = "x"
[[service.session.tasks]]
task_id = "t1"
description = "bar chart"
expected_fields = [{ path = "mark", value = "bar" }]
solution = '{"$schema":"https://vega.github.io/schema/vega-lite/v5.json","data":{"values":[{"a":1}]},"mark":"bar","encoding":{"x":{"field":"a","type":"nominal"}}}'

[[students]]
student_id = "s1"
persona = "quiet"
rng_seed = 1

[[cohorts]]
persona = "struggler"
count = 3
prefix = "st"
rng_seed = 50

[[timeline]]
at_secs = 300
action = "mode"
mode = "silent"
students = ["st02"]

[[timeline]]
at_secs = 120
action = "handle_alerts"

[personas.quiet]
extends = "independent"
[personas.quiet.actions]
question = 0.0
"#;

    #[test]
    fn inline_scenario_resolves() {
        let s = Scenario::from_toml_str(INLINE, Path::new(".")).unwrap();
        assert_eq!(s.students.len(), 4);
        assert_eq!(s.students[2].student_id.as_str(), "st02");
        assert_eq!(s.tick_secs, 10);
        assert_eq!(s.timeline[0].at_secs, 120);
        assert_eq!(s.personas["quiet"].actions.question, 0.0);
        assert!(matches!(s.timeline[1].action, InstructorAction::Mode { mode: FeedbackMode::Silent, .. }));
    }

    #[test]
    fn bad_scenarios_are_reported() {
        let cases = [
            INLINE.replace("\"st02\"", "\"ghost\""),
            INLINE.replace("persona = \"quiet\"", "persona = \"nobody\""),
            INLINE.replace("at_secs = 300", "at_secs = 9000"),
            INLINE.replace("prefix = \"st\"", "prefix = \"s\"").replace("student_id = \"s1\"", "student_id = \"s01\""),
            INLINE.replace("solution = ", "# "),
            INLINE.replace("duration_secs = 600", "duration_secs = 0"),
        ];
        for text in cases {
            assert!(matches!(Scenario::from_toml_str(&text, Path::new(".")), Err(SimError::ScenarioInvalid(_))), "{text}");
        }
    }
}
