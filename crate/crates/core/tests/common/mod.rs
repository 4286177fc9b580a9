#![allow(dead_code)]

pub mod triggers;

use std::path::{Path, PathBuf};

use classaid_core::analyzer::{check_spec, friendly_message};
use classaid_core::domain::ErrorCategory;
use serde::Deserialize;

pub fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/corpus")
}

#[derive(Debug, Deserialize)]
pub struct Recommendations {
    pub schema: String,
    pub data: String,
    pub mark: String,
    pub encoding: String,
}

#[derive(Debug, Deserialize)]
pub struct Labelled {
    pub file: String,
    pub categories: Vec<ErrorCategory>,
    pub headline: Option<String>,
    pub prefix: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct Labels {
    pub recommendations: Recommendations,
    pub spec: Vec<Labelled>,
}

pub fn labels() -> Labels {
    toml::from_str(&std::fs::read_to_string(corpus_dir().join("labels.toml")).unwrap()).unwrap()
}

impl Recommendations {
    fn for_category(&self, c: ErrorCategory) -> Option<&str> {
        match c {
            ErrorCategory::Schema => Some(&self.schema),
            ErrorCategory::Data => Some(&self.data),
            ErrorCategory::Mark => Some(&self.mark),
            ErrorCategory::Encoding => Some(&self.encoding),
            ErrorCategory::JsonSyntax => None,
        }
    }
}

/// Checks one labelled spec; `Err` explains the mismatch.
pub fn check_labelled(labels: &Labels, l: &Labelled) -> Result<(), String> {
    let text = std::fs::read_to_string(corpus_dir().join(&l.file)).map_err(|e| e.to_string())?;
    let found = check_spec(&text, &[]);
    let cats: Vec<ErrorCategory> = found.iter().map(|e| e.category).collect();
    if cats != l.categories {
        return Err(format!("{}: categories {cats:?}, labelled {:?}", l.file, l.categories));
    }
    let oracle_valid = json_is_valid(&text);
    if oracle_valid == cats.contains(&ErrorCategory::JsonSyntax) {
        return Err(format!("{}: recognizer says valid={oracle_valid}, analyzer disagrees", l.file));
    }
    let Some(first) = found.first() else { return Ok(()) };
    let friendly = friendly_message(first);
    if let Some(h) = &l.headline {
        let rec = labels.recommendations.for_category(first.category).unwrap_or_default();
        let want = format!("{h}\n{rec}");
        if friendly != want {
            return Err(format!("{}:\n got  {friendly:?}\n want {want:?}", l.file));
        }
    }
    if let Some(p) = &l.prefix {
        if !friendly.starts_with(p.as_str()) {
            return Err(format!("{}: {friendly:?} does not start with {p:?}", l.file));
        }
    }
    Ok(())
}

/// Minimal RFC 8259 recognizer, independent of the parser under test.
pub fn json_is_valid(text: &str) -> bool {
    let b = text.as_bytes();
    let mut i = 0;
    ws(b, &mut i);
    if !value(b, &mut i) {
        return false;
    }
    ws(b, &mut i);
    i == b.len()
}

fn ws(b: &[u8], i: &mut usize) {
    while *i < b.len() && matches!(b[*i], b' ' | b'\t' | b'\n' | b'\r') {
        *i += 1;
    }
}

fn lit(b: &[u8], i: &mut usize, word: &[u8]) -> bool {
    if b[*i..].starts_with(word) {
        *i += word.len();
        true
    } else {
        false
    }
}

fn value(b: &[u8], i: &mut usize) -> bool {
    match b.get(*i) {
        Some(b'{') => object(b, i),
        Some(b'[') => array(b, i),
        Some(b'"') => string(b, i),
        Some(b't') => lit(b, i, b"true"),
        Some(b'f') => lit(b, i, b"false"),
        Some(b'n') => lit(b, i, b"null"),
        Some(c) if *c == b'-' || c.is_ascii_digit() => number(b, i),
        _ => false,
    }
}

fn digits(b: &[u8], i: &mut usize) -> bool {
    let start = *i;
    while *i < b.len() && b[*i].is_ascii_digit() {
        *i += 1;
    }
    *i > start
}

fn number(b: &[u8], i: &mut usize) -> bool {
    if b.get(*i) == Some(&b'-') {
        *i += 1;
    }
    match b.get(*i) {
        Some(b'0') => *i += 1,
        Some(c) if c.is_ascii_digit() => {
            digits(b, i);
        }
        _ => return false,
    }
    if b.get(*i) == Some(&b'.') {
        *i += 1;
        if !digits(b, i) {
            return false;
        }
    }
    if matches!(b.get(*i), Some(b'e' | b'E')) {
        *i += 1;
        if matches!(b.get(*i), Some(b'+' | b'-')) {
            *i += 1;
        }
        if !digits(b, i) {
            return false;
        }
    }
    true
}

fn string(b: &[u8], i: &mut usize) -> bool {
    *i += 1;
    while let Some(&c) = b.get(*i) {
        *i += 1;
        match c {
            b'"' => return true,
            b'\\' => match b.get(*i) {
                Some(b'"' | b'\\' | b'/' | b'b' | b'f' | b'n' | b'r' | b't') => *i += 1,
                Some(b'u') => {
                    if b.len() < *i + 5 || !b[*i + 1..*i + 5].iter().all(u8::is_ascii_hexdigit) {
                        return false;
                    }
                    *i += 5;
                }
                _ => return false,
            },
            c if c < 0x20 => return false,
            _ => {}
        }
    }
    false
}

fn array(b: &[u8], i: &mut usize) -> bool {
    *i += 1;
    ws(b, i);
    if b.get(*i) == Some(&b']') {
        *i += 1;
        return true;
    }
    loop {
        ws(b, i);
        if !value(b, i) {
            return false;
        }
        ws(b, i);
        match b.get(*i) {
            Some(b',') => *i += 1,
            Some(b']') => {
                *i += 1;
                return true;
            }
            _ => return false,
        }
    }
}

fn object(b: &[u8], i: &mut usize) -> bool {
    *i += 1;
    ws(b, i);
    if b.get(*i) == Some(&b'}') {
        *i += 1;
        return true;
    }
    loop {
        ws(b, i);
        if b.get(*i) != Some(&b'"') || !string(b, i) {
            return false;
        }
        ws(b, i);
        if b.get(*i) != Some(&b':') {
            return false;
        }
        *i += 1;
        ws(b, i);
        if !value(b, i) {
            return false;
        }
        ws(b, i);
        match b.get(*i) {
            Some(b',') => *i += 1,
            Some(b'}') => {
                *i += 1;
                return true;
            }
            _ => return false,
        }
    }
}
