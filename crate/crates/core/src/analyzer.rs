//! Run-time check of a student's Vega-Lite specification.
//!
//! Structural completeness stands in for renderability: a document with no
//! findings is treated as renderable. Findings are reported one per section in
//! the fixed order schema → data → mark → encoding so messages stay stable.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::domain::{AnalysisError, ErrorCategory};

/// A successfully parsed specification tree.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecDocument {
    root: Value,
}

impl SpecDocument {
    pub fn root(&self) -> &Value {
        &self.root
    }

    /// Which of the four checked sections are structurally present.
    pub fn sections(&self) -> SectionPresence {
        let obj = self.root.as_object();
        let has = |key: &str| {
            obj.and_then(|o| o.get(key)).is_some_and(|v| match v {
                Value::Object(m) => !m.is_empty(),
                Value::Null => false,
                _ => true,
            })
        };
        SectionPresence {
            has_schema: has("$schema"),
            has_data: has("data"),
            has_mark: has("mark") || has("layer"),
            has_encoding: has("encoding") || has("layer"),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionPresence {
    pub has_schema: bool,
    pub has_data: bool,
    pub has_mark: bool,
    pub has_encoding: bool,
}

impl SectionPresence {
    pub fn fraction_present(&self) -> f64 {
        let n = [self.has_schema, self.has_data, self.has_mark, self.has_encoding]
            .into_iter()
            .filter(|b| *b)
            .count();
        n as f64 / 4.0
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SyntaxFailure {
    #[error("specification text is empty")]
    EmptyInput,
    #[error("{}", .0.message)]
    Invalid(AnalysisError),
}

/// A field the current task expects, optionally with an exact value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedField {
    /// Dotted path from the document root, e.g. `encoding.x.bin`.
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Value>,
}

impl ExpectedField {
    pub fn category(&self) -> ErrorCategory {
        section_category(self.path.split('.').next().unwrap_or_default())
    }
}

fn section_category(head: &str) -> ErrorCategory {
    match head {
        "data" | "transform" | "datasets" => ErrorCategory::Data,
        "mark" => ErrorCategory::Mark,
        "encoding" => ErrorCategory::Encoding,
        _ => ErrorCategory::Schema,
    }
}

pub const VALID_MARKS: &[&str] = &[
    "arc", "area", "bar", "boxplot", "circle", "errorband", "errorbar", "geoshape", "image",
    "line", "point", "rect", "rule", "square", "text", "tick", "trail",
];

const TOP_LEVEL_KEYS: &[&str] = &[
    "$schema", "align", "autosize", "background", "bounds", "center", "columns", "concat",
    "config", "data", "datasets", "description", "encoding", "facet", "hconcat", "height",
    "layer", "mark", "name", "padding", "params", "projection", "repeat", "resolve",
    "selection", "spacing", "spec", "title", "transform", "usermeta", "vconcat", "view",
    "width",
];

const POSITIONAL_CHANNELS: &[&str] = &[
    "x", "y", "x2", "y2", "theta", "theta2", "radius", "radius2", "latitude", "longitude",
    "latitude2", "longitude2",
];

const OTHER_CHANNELS: &[&str] = &[
    "xOffset", "yOffset", "xError", "xError2", "yError", "yError2", "color", "fill", "stroke",
    "opacity", "fillOpacity", "strokeOpacity", "strokeWidth", "strokeDash", "size", "angle",
    "shape", "text", "tooltip", "href", "url", "description", "detail", "key", "order",
    "facet", "row", "column",
];

const FIELD_TYPES: &[&str] = &["quantitative", "temporal", "ordinal", "nominal", "geojson"];

/// Parses raw text. Failures carry the approximate line and column.
pub fn check_syntax(text: &str) -> Result<SpecDocument, SyntaxFailure> {
    if text.trim().is_empty() {
        return Err(SyntaxFailure::EmptyInput);
    }
    match serde_json::from_str::<Value>(text) {
        Ok(root) => Ok(SpecDocument { root }),
        Err(e) => {
            let what = describe_json_error(&e);
            let position = format!("line {}, column {}", e.line(), e.column());
            Err(SyntaxFailure::Invalid(
                AnalysisError::new(
                    ErrorCategory::JsonSyntax,
                    format!("Invalid JSON syntax: {what} ({position})"),
                )
                .at(position),
            ))
        }
    }
}

fn describe_json_error(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    if msg.starts_with("EOF while parsing an object") {
        "unterminated object".into()
    } else if msg.starts_with("EOF while parsing a list") {
        "unterminated array".into()
    } else if msg.starts_with("EOF while parsing a string") {
        "unterminated string".into()
    } else if msg.starts_with("EOF while parsing") {
        "unexpected end of input".into()
    } else if msg.starts_with("trailing comma") {
        "trailing comma".into()
    } else if msg.starts_with("key must be a string") {
        "object key must be a double-quoted string".into()
    } else if msg.starts_with("expected `,` or `}`") {
        "expected ',' or '}' between object members".into()
    } else if msg.starts_with("expected `,` or `]`") {
        "expected ',' or ']' between array elements".into()
    } else if msg.starts_with("expected `:`") {
        "expected ':' after object key".into()
    } else if msg.starts_with("trailing characters") {
        "unexpected characters after the end of the document".into()
    } else {
        // serde_json appends " at line L column C"; the position is reported separately.
        msg.split(" at line ").next().unwrap_or(&msg).to_owned()
    }
}

/// Structural findings, at most one per section, in check order.
pub fn analyze(doc: &SpecDocument, expected: &[ExpectedField]) -> Vec<AnalysisError> {
    let Some(root) = doc.root.as_object() else {
        return vec![AnalysisError::new(
            ErrorCategory::Schema,
            "Specification must be a JSON object",
        )];
    };
    let misplaced = misplaced_keys(root);
    let mut out = Vec::new();

    let task_error = |category: ErrorCategory| -> Option<AnalysisError> {
        expected
            .iter()
            .filter(|f| f.category() == category)
            .find_map(|f| check_expected(root, f))
    };

    if let Some(e) = check_schema(root, &misplaced).or_else(|| task_error(ErrorCategory::Schema)) {
        out.push(e);
    }
    if let Some(e) = check_data(root, &misplaced).or_else(|| task_error(ErrorCategory::Data)) {
        out.push(e);
    }
    let composite = ["concat", "hconcat", "vconcat", "facet", "repeat"]
        .iter()
        .any(|k| root.contains_key(*k));
    if !composite {
        if let Some(e) = check_mark(root, &misplaced).or_else(|| task_error(ErrorCategory::Mark)) {
            out.push(e);
        }
        if let Some(e) =
            check_encoding(root, &misplaced).or_else(|| task_error(ErrorCategory::Encoding))
        {
            out.push(e);
        }
    }
    out
}

/// Parse then analyze: the full run check.
pub fn check_spec(text: &str, expected: &[ExpectedField]) -> Vec<AnalysisError> {
    match check_syntax(text) {
        Ok(doc) => analyze(&doc, expected),
        Err(SyntaxFailure::EmptyInput) => vec![AnalysisError::new(
            ErrorCategory::JsonSyntax,
            "Invalid JSON syntax: the specification is empty",
        )],
        Err(SyntaxFailure::Invalid(e)) => vec![e],
    }
}

/// Unknown top-level keys that look like a misspelling of a section key,
/// paired with the section they were probably meant to be.
fn misplaced_keys(root: &Map<String, Value>) -> Vec<(String, &'static str)> {
    root.keys()
        .filter(|k| !TOP_LEVEL_KEYS.contains(&k.as_str()))
        .filter_map(|k| {
            ["data", "mark", "encoding"]
                .into_iter()
                .find(|section| near_miss(k, section))
                .map(|section| (k.clone(), section))
        })
        .collect()
}

fn near_miss(key: &str, section: &str) -> bool {
    let key = key.to_ascii_lowercase();
    key == section
        || key.trim_end_matches('s') == section
        || (key.len() >= 3 && strsim::levenshtein(&key, section) <= 2)
}

fn misplaced_for<'a>(misplaced: &'a [(String, &'static str)], section: &str) -> Option<&'a str> {
    misplaced
        .iter()
        .find(|(_, s)| *s == section)
        .map(|(k, _)| k.as_str())
}

fn check_schema(
    root: &Map<String, Value>,
    misplaced: &[(String, &'static str)],
) -> Option<AnalysisError> {
    if let Some(schema) = root.get("$schema") {
        let ok = schema.as_str().is_some_and(|s| s.contains("vega-lite"));
        if !ok {
            return Some(
                AnalysisError::new(
                    ErrorCategory::Schema,
                    "Invalid $schema: expected a Vega-Lite schema URL",
                )
                .at("$schema"),
            );
        }
    }
    let unknown: BTreeSet<&str> = root
        .keys()
        .map(String::as_str)
        .filter(|k| !TOP_LEVEL_KEYS.contains(k))
        .filter(|k| !misplaced.iter().any(|(m, _)| m == k))
        .collect();
    let first = unknown.iter().next()?;
    let msg = if unknown.len() == 1 {
        format!("Unknown top-level property '{first}'")
    } else {
        format!(
            "Unknown top-level properties: {}",
            unknown.iter().map(|k| format!("'{k}'")).collect::<Vec<_>>().join(", ")
        )
    };
    Some(AnalysisError::new(ErrorCategory::Schema, msg).at(*first))
}

fn check_data(
    root: &Map<String, Value>,
    misplaced: &[(String, &'static str)],
) -> Option<AnalysisError> {
    if let Some(t) = root.get("transform") {
        if !t.is_array() {
            return Some(
                AnalysisError::new(ErrorCategory::Data, "Invalid transform: expected an array")
                    .at("transform"),
            );
        }
    }
    let Some(data) = root.get("data") else {
        if let Some(key) = misplaced_for(misplaced, "data") {
            return Some(
                AnalysisError::new(
                    ErrorCategory::Data,
                    format!("Unknown property '{key}'; did you mean 'data'?"),
                )
                .at(key),
            );
        }
        // Layers may each carry their own data.
        let layered = root
            .get("layer")
            .and_then(Value::as_array)
            .is_some_and(|ls| !ls.is_empty() && ls.iter().all(|l| l.get("data").is_some()));
        if layered {
            return None;
        }
        return Some(AnalysisError::new(ErrorCategory::Data, "Missing data specification").at("data"));
    };
    let Some(data) = data.as_object() else {
        return Some(
            AnalysisError::new(ErrorCategory::Data, "Invalid data specification: expected an object")
                .at("data"),
        );
    };
    let non_empty = |v: &Value| match v {
        Value::Array(a) => !a.is_empty(),
        Value::Object(o) => !o.is_empty(),
        Value::String(s) => !s.trim().is_empty(),
        _ => false,
    };
    let has_source = data.get("values").is_some_and(non_empty)
        || data.get("url").is_some_and(non_empty)
        || data.get("name").is_some_and(Value::is_string)
        || ["sequence", "sphere", "graticule"]
            .iter()
            .any(|k| data.contains_key(*k));
    if has_source {
        None
    } else {
        Some(AnalysisError::new(ErrorCategory::Data, "Missing values field").at("data.values"))
    }
}

fn mark_error(mark: &Value, path: &str) -> Option<AnalysisError> {
    let name = match mark {
        Value::String(s) => s.as_str(),
        Value::Object(o) => match o.get("type") {
            Some(Value::String(s)) => s.as_str(),
            _ => {
                return Some(
                    AnalysisError::new(ErrorCategory::Mark, "Mark definition is missing a type")
                        .at(path),
                )
            }
        },
        _ => {
            return Some(
                AnalysisError::new(
                    ErrorCategory::Mark,
                    "Invalid mark specification: expected a mark type name",
                )
                .at(path),
            )
        }
    };
    if VALID_MARKS.contains(&name) {
        None
    } else {
        Some(AnalysisError::new(ErrorCategory::Mark, format!("Invalid mark type '{name}'")).at(path))
    }
}

fn layers(root: &Map<String, Value>) -> Option<&Vec<Value>> {
    root.get("layer").and_then(Value::as_array).filter(|l| !l.is_empty())
}

fn check_mark(
    root: &Map<String, Value>,
    misplaced: &[(String, &'static str)],
) -> Option<AnalysisError> {
    if let Some(mark) = root.get("mark") {
        return mark_error(mark, "mark");
    }
    if let Some(layers) = layers(root) {
        return layers.iter().enumerate().find_map(|(i, layer)| match layer.get("mark") {
            Some(m) => mark_error(m, &format!("layer[{i}].mark")),
            None => Some(
                AnalysisError::new(ErrorCategory::Mark, "Missing mark specification")
                    .at(format!("layer[{i}].mark")),
            ),
        });
    }
    if let Some(key) = misplaced_for(misplaced, "mark") {
        return Some(
            AnalysisError::new(
                ErrorCategory::Mark,
                format!("Unknown property '{key}'; did you mean 'mark'?"),
            )
            .at(key),
        );
    }
    Some(AnalysisError::new(ErrorCategory::Mark, "Missing mark specification").at("mark"))
}

/// Field names defined by inline rows or derived by transforms, if knowable.
fn known_fields(root: &Map<String, Value>) -> Option<BTreeSet<String>> {
    let rows = root.get("data")?.get("values")?.as_array()?;
    let mut fields = BTreeSet::new();
    for row in rows {
        fields.extend(row.as_object()?.keys().cloned());
    }
    if let Some(transforms) = root.get("transform").and_then(Value::as_array) {
        for t in transforms {
            collect_as_names(t, &mut fields);
        }
    }
    Some(fields)
}

fn collect_as_names(v: &Value, out: &mut BTreeSet<String>) {
    match v {
        Value::Object(o) => {
            for (k, v) in o {
                if k == "as" {
                    match v {
                        Value::String(s) => {
                            out.insert(s.clone());
                        }
                        Value::Array(a) => {
                            out.extend(a.iter().filter_map(Value::as_str).map(str::to_owned))
                        }
                        _ => {}
                    }
                }
                collect_as_names(v, out);
            }
        }
        Value::Array(a) => a.iter().for_each(|x| collect_as_names(x, out)),
        _ => {}
    }
}

fn channel_error(
    channel: &str,
    def: &Value,
    fields: Option<&BTreeSet<String>>,
    path: &str,
) -> Option<AnalysisError> {
    let err = |msg: String| Some(AnalysisError::new(ErrorCategory::Encoding, msg).at(path));
    if !POSITIONAL_CHANNELS.contains(&channel) && !OTHER_CHANNELS.contains(&channel) {
        return err(format!("Unknown encoding channel '{channel}'"));
    }
    let defs: Vec<&Value> = match def {
        Value::Array(items) if matches!(channel, "tooltip" | "detail" | "order") => {
            items.iter().collect()
        }
        other => vec![other],
    };
    for def in defs {
        let Some(obj) = def.as_object() else {
            return err(format!("Invalid definition for encoding channel '{channel}'"));
        };
        let has_source = ["field", "aggregate", "value", "datum", "condition", "repeat"]
            .iter()
            .any(|k| obj.contains_key(*k));
        if !has_source {
            return err(format!(
                "Encoding channel '{channel}' needs a field, aggregate, value, or datum"
            ));
        }
        if let Some(t) = obj.get("type") {
            let ok = t.as_str().is_some_and(|t| FIELD_TYPES.contains(&t));
            if !ok {
                return err(format!(
                    "Invalid type {t} for encoding channel '{channel}'"
                ));
            }
        }
        if let (Some(Value::String(field)), Some(known)) = (obj.get("field"), fields) {
            let simple = !field.contains(['.', '[', '\\']);
            if simple && !known.contains(field) {
                return err(format!(
                    "Field '{field}' in channel '{channel}' was not found in the data"
                ));
            }
        }
    }
    None
}

fn check_encoding(
    root: &Map<String, Value>,
    misplaced: &[(String, &'static str)],
) -> Option<AnalysisError> {
    let fields = known_fields(root);
    let missing = || {
        Some(AnalysisError::new(ErrorCategory::Encoding, "Missing encoding specification").at("encoding"))
    };
    let top = match root.get("encoding") {
        None => None,
        Some(Value::Object(o)) => Some(o),
        Some(_) => {
            return Some(
                AnalysisError::new(
                    ErrorCategory::Encoding,
                    "Invalid encoding specification: expected an object",
                )
                .at("encoding"),
            )
        }
    };

    let mut units: Vec<(Map<String, Value>, String)> = Vec::new();
    if let Some(layers) = layers(root) {
        for (i, layer) in layers.iter().enumerate() {
            let mut merged = top.cloned().unwrap_or_default();
            if let Some(own) = layer.get("encoding").and_then(Value::as_object) {
                merged.extend(own.clone());
            }
            units.push((merged, format!("layer[{i}].encoding")));
        }
    } else {
        match top {
            Some(o) => units.push((o.clone(), "encoding".into())),
            None => {
                if let Some(key) = misplaced_for(misplaced, "encoding") {
                    return Some(
                        AnalysisError::new(
                            ErrorCategory::Encoding,
                            format!("Unknown property '{key}'; did you mean 'encoding'?"),
                        )
                        .at(key),
                    );
                }
                return missing();
            }
        }
    }

    for (enc, base) in &units {
        if enc.is_empty() {
            return missing();
        }
        for (channel, def) in enc {
            if let Some(e) = channel_error(channel, def, fields.as_ref(), &format!("{base}.{channel}")) {
                return Some(e);
            }
        }
        if !enc.keys().any(|k| POSITIONAL_CHANNELS.contains(&k.as_str())) {
            return Some(
                AnalysisError::new(
                    ErrorCategory::Encoding,
                    "Missing positional encoding channel (x or y)",
                )
                .at(base.clone()),
            );
        }
    }
    None
}

fn lookup<'a>(root: &'a Map<String, Value>, path: &str) -> Option<&'a Value> {
    let mut parts = path.split('.');
    let mut cur = root.get(parts.next()?)?;
    for p in parts {
        cur = cur.get(p)?;
    }
    Some(cur)
}

fn check_expected(root: &Map<String, Value>, field: &ExpectedField) -> Option<AnalysisError> {
    let category = field.category();
    match (lookup(root, &field.path), &field.value) {
        (None, _) => Some(
            AnalysisError::new(
                category,
                format!("Missing expected field '{}' for this task", field.path),
            )
            .at(field.path.clone()),
        ),
        (Some(actual), Some(want)) if !value_matches(actual, want) => Some(
            AnalysisError::new(
                category,
                format!("Expected '{}' to be {want}, found {actual}", field.path),
            )
            .at(field.path.clone()),
        ),
        _ => None,
    }
}

fn value_matches(actual: &Value, want: &Value) -> bool {
    if actual == want {
        return true;
    }
    // `"mark": {"type": "bar"}` satisfies an expected `"bar"`.
    matches!((actual, want), (Value::Object(o), Value::String(_)) if o.get("type") == Some(want))
}

fn recommendation(err: &AnalysisError) -> String {
    match err.category {
        ErrorCategory::Schema => "Recommendation: use \"$schema\": \"https://vega.github.io/schema/vega-lite/v5.json\" and only standard top-level properties such as data, mark, encoding, transform, title, width and height.".into(),
        ErrorCategory::Data => "Recommendation: provide your rows inline as \"data\": {\"values\": [ ... ]} or point to a file with \"data\": {\"url\": \"...\"}.".into(),
        ErrorCategory::Mark => format!(
            "Recommendation: set \"mark\" to a valid mark type such as {}.",
            ["bar", "line", "point", "area", "arc"]
                .iter()
                .map(|m| format!("\"{m}\""))
                .collect::<Vec<_>>()
                .join(", ")
        ),
        ErrorCategory::Encoding => "Recommendation: add an \"encoding\" object with x and y channels, for example \"x\": {\"field\": \"category\", \"type\": \"nominal\"} and \"y\": {\"aggregate\": \"count\", \"type\": \"quantitative\"}.".into(),
        ErrorCategory::JsonSyntax => format!(
            "Recommendation: check for a missing comma, quote, or closing bracket near {}.",
            err.path.as_deref().unwrap_or("the reported position")
        ),
    }
}

/// Student-facing text: an `Error: ...` line followed by one recommendation line.
pub fn friendly_message(err: &AnalysisError) -> String {
    format!("{}\n{}", headline(err), recommendation(err))
}

pub fn headline(err: &AnalysisError) -> String {
    format!("Error: {}", err.message)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(text: &str) -> SpecDocument {
        check_syntax(text).unwrap()
    }

    fn categories(text: &str) -> Vec<ErrorCategory> {
        analyze(&doc(text), &[]).into_iter().map(|e| e.category).collect()
    }

    const COMPLETE: &str = r#"{"mark":"bar","data":{"values":[{"a":1,"b":2}]},"encoding":{"x":{"field":"a","type":"nominal"},"y":{"field":"b","type":"quantitative"}}}"#;

    #[test]
    fn well_formed_document_parses() {
        assert!(check_syntax(r#"{"mark":"bar"}"#).is_ok());
    }

    #[test]
    fn unterminated_object_is_reported() {
        let Err(SyntaxFailure::Invalid(e)) = check_syntax(r#"{"mark":"bar""#) else {
            panic!("expected a syntax error");
        };
        assert_eq!(e.category, ErrorCategory::JsonSyntax);
        assert!(e.message.contains("unterminated object"), "{}", e.message);
        assert!(e.message.contains("line 1"));
    }

    #[test]
    fn empty_input() {
        assert_eq!(check_syntax(""), Err(SyntaxFailure::EmptyInput));
        assert_eq!(check_syntax("  \n\t"), Err(SyntaxFailure::EmptyInput));
    }

    #[test]
    fn complete_minimal_spec_has_no_findings() {
        assert!(analyze(&doc(COMPLETE), &[]).is_empty());
    }

    #[test]
    fn missing_encoding() {
        let errs = analyze(&doc(r#"{"mark":"bar","data":{"values":[{"a":1}]}}"#), &[]);
        assert_eq!(errs.len(), 1);
        assert_eq!(headline(&errs[0]), "Error: Missing encoding specification");
        let errs = analyze(&doc(r#"{"mark":"bar","data":{"values":[{"a":1}]},"encoding":{}}"#), &[]);
        assert_eq!(headline(&errs[0]), "Error: Missing encoding specification");
    }

    #[test]
    fn missing_values() {
        for data in [r#"{}"#, r#"{"values":[]}"#] {
            let text = format!(
                r#"{{"mark":"bar","data":{data},"encoding":{{"x":{{"aggregate":"count"}}}}}}"#
            );
            let errs = analyze(&doc(&text), &[]);
            assert_eq!(errs.len(), 1, "{errs:?}");
            assert_eq!(errs[0].category, ErrorCategory::Data);
            assert_eq!(errs[0].message, "Missing values field");
        }
    }

    #[test]
    fn findings_follow_check_order() {
        let errs = categories(r#"{"$schema":"x","foo":1}"#);
        assert_eq!(
            errs,
            vec![
                ErrorCategory::Schema,
                ErrorCategory::Data,
                ErrorCategory::Mark,
                ErrorCategory::Encoding
            ]
        );
    }

    #[test]
    fn aggregate_only_channel_is_accepted() {
        let text = r#"{"mark":"bar","data":{"values":[{"a":1}]},"encoding":{"y":{"aggregate":"count","type":"quantitative"}}}"#;
        assert!(categories(text).is_empty());
    }

    #[test]
    fn near_miss_key_maps_to_one_category() {
        let text = r#"{"mark":"bar","data":{"values":[{"a":1}]},"encodings":{"x":{"field":"a","type":"nominal"}}}"#;
        let errs = analyze(&doc(text), &[]);
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].category, ErrorCategory::Encoding);
        assert!(errs[0].message.contains("did you mean 'encoding'"));
    }

    #[test]
    fn non_object_root_is_a_single_schema_error() {
        assert_eq!(categories("[1,2,3]"), vec![ErrorCategory::Schema]);
    }

    #[test]
    fn expected_fields_from_task() {
        let expected = vec![
            ExpectedField { path: "encoding.x.bin".into(), value: None },
            ExpectedField { path: "mark".into(), value: Some(Value::String("bar".into())) },
        ];
        let errs = analyze(&doc(COMPLETE), &expected);
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].category, ErrorCategory::Encoding);
        assert_eq!(errs[0].path.as_deref(), Some("encoding.x.bin"));

        let line = COMPLETE.replace(r#""mark":"bar""#, r#""mark":{"type":"line"}"#);
        let errs = analyze(&doc(&line), &expected);
        assert_eq!(errs[0].category, ErrorCategory::Mark);
    }

    #[test]
    fn unknown_field_reference() {
        let text = COMPLETE.replace(r#""field":"b""#, r#""field":"score""#);
        let errs = analyze(&doc(&text), &[]);
        assert_eq!(errs.len(), 1);
        assert!(errs[0].message.contains("'score'"));
    }

    #[test]
    fn transform_outputs_count_as_fields() {
        let text = r#"{"data":{"values":[{"s":1}]},"transform":[{"calculate":"datum.s*2","as":"d"}],"mark":"bar","encoding":{"x":{"field":"d","type":"quantitative"}}}"#;
        assert!(categories(text).is_empty());
    }

    #[test]
    fn layered_spec() {
        let text = r#"{"data":{"values":[{"a":1,"b":2}]},"encoding":{"x":{"field":"a","type":"nominal"}},"layer":[{"mark":"bar"},{"mark":"rule","encoding":{"y":{"aggregate":"mean","field":"b"}}}]}"#;
        assert!(categories(text).is_empty());
        let bad = text.replace(r#""mark":"rule""#, r#""mark":"rules""#);
        assert_eq!(categories(&bad), vec![ErrorCategory::Mark]);
    }

    #[test]
    fn friendly_messages_carry_recommendations() {
        let mark = AnalysisError::new(ErrorCategory::Mark, "Invalid mark type 'bars'");
        let text = friendly_message(&mark);
        assert!(text.starts_with("Error: Invalid mark type 'bars'\n"));
        assert!(text.contains("\"bar\"") && text.contains("\"line\""));
        assert_eq!(text.lines().count(), 2);

        let Err(SyntaxFailure::Invalid(syn)) = check_syntax("{\n  \"mark\": \"bar\",\n}") else {
            panic!()
        };
        let text = friendly_message(&syn);
        assert!(text.contains("line 3"), "{text}");
    }

    #[test]
    fn section_presence() {
        let p = doc(COMPLETE).sections();
        assert!(p.has_data && p.has_mark && p.has_encoding && !p.has_schema);
        assert_eq!(p.fraction_present(), 0.75);
    }
}
