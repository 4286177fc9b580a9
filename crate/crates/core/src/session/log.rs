//! Append-only JSON-lines session log. One record per accepted command, plus
//! the backend outcomes each command consumed so replay needs no network.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ServiceConfig;
use crate::domain::{AlertId, FeedbackMode, StudentEvent, StudentId, TimestampMs};
use crate::llm::{GatewayError, GenerationResult};

pub type CallOutcome = Result<GenerationResult, GatewayError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Record {
    Open { config: Box<ServiceConfig> },
    Register { student_id: StudentId, name: Option<String> },
    Event { event: StudentEvent },
    Mode { mode: FeedbackMode, student_ids: Vec<StudentId>, class_wide: bool },
    /// Written only when the evaluation fired something.
    Tick { student_id: StudentId, now: TimestampMs },
    Handled { alert_id: AlertId },
    Note { student_id: StudentId, text: String },
    Generation { ref_seq: u64, calls: Vec<CallOutcome> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub seq: u64,
    pub ts: TimestampMs,
    #[serde(flatten)]
    pub record: Record,
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("log i/o on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("corrupt log {path} at line {line}: {reason}")]
    Corrupt { path: String, line: usize, reason: String },
}

pub struct LogWriter {
    path: PathBuf,
    file: Option<File>,
    next_seq: u64,
}

impl LogWriter {
    pub fn create(path: &Path) -> Result<Self, LogError> {
        let io = |source| LogError::Io { path: path.display().to_string(), source };
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        let file = OpenOptions::new().create_new(true).append(true).open(path).map_err(io)?;
        Ok(Self { path: path.to_owned(), file: Some(file), next_seq: 0 })
    }

    /// Reopens an existing log after `records` were read from it, cutting off
    /// a torn final line if there was one.
    pub fn reopen(path: &Path, valid_len: u64, next_seq: u64) -> Result<Self, LogError> {
        let io = |source| LogError::Io { path: path.display().to_string(), source };
        let file = OpenOptions::new().append(true).open(path).map_err(io)?;
        if file.metadata().map_err(io)?.len() != valid_len {
            file.set_len(valid_len).map_err(io)?;
        }
        Ok(Self { path: path.to_owned(), file: Some(file), next_seq })
    }

    /// Discards records; used while replaying.
    pub fn detached(next_seq: u64) -> Self {
        Self { path: PathBuf::new(), file: None, next_seq }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn append(&mut self, ts: TimestampMs, record: Record) -> Result<u64, LogError> {
        let seq = self.next_seq;
        if let Some(file) = &mut self.file {
            let rec = LogRecord { seq, ts, record };
            let mut line = serde_json::to_string(&rec).expect("log records always serialize");
            line.push('\n');
            file.write_all(line.as_bytes()).map_err(|source| LogError::Io {
                path: self.path.display().to_string(),
                source,
            })?;
        }
        self.next_seq += 1;
        Ok(seq)
    }

    /// Forces appended records to stable storage.
    pub fn sync(&mut self) -> Result<(), LogError> {
        match &self.file {
            Some(f) => f.sync_data().map_err(|source| LogError::Io { path: self.path.display().to_string(), source }),
            None => Ok(()),
        }
    }
}

pub struct LoadedLog {
    pub records: Vec<LogRecord>,
    /// Byte length of the well-formed prefix.
    pub valid_len: u64,
}

pub fn read_log(path: &Path) -> Result<LoadedLog, LogError> {
    let name = path.display().to_string();
    let file = File::open(path).map_err(|source| LogError::Io { path: name.clone(), source })?;
    let mut reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut valid_len = 0u64;
    let mut buf = String::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        let n = reader
            .read_line(&mut buf)
            .map_err(|source| LogError::Io { path: name.clone(), source })?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let complete = buf.ends_with('\n');
        let corrupt = |reason: String| LogError::Corrupt { path: name.clone(), line: line_no, reason };
        match serde_json::from_str::<LogRecord>(buf.trim_end()) {
            Ok(rec) if complete => {
                if rec.seq != records.len() as u64 {
                    return Err(corrupt(format!("expected seq {}, found {}", records.len(), rec.seq)));
                }
                if line_no == 1 && !matches!(rec.record, Record::Open { .. }) {
                    return Err(corrupt("first record must be 'open'".into()));
                }
                records.push(rec);
                valid_len += n as u64;
            }
            // A crash mid-append leaves an unterminated last line.
            _ if !complete => {
                log::warn!("dropping torn final line {line_no} of {name}");
                break;
            }
            Ok(_) => unreachable!(),
            Err(e) => return Err(corrupt(e.to_string())),
        }
    }
    if records.is_empty() {
        return Err(LogError::Corrupt { path: name, line: 1, reason: "log is empty".into() });
    }
    Ok(LoadedLog { records, valid_len })
}
