//! Append-only JSON-lines audit stream.
//!
//! Each module serializes its own record shape; the log only guarantees
//! one line per record and append order per sink.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::Serialize;
use serde_json::Value;

pub trait AuditSink: Send + Sync {
    fn append(&self, line: &str) -> io::Result<()>;
}

/// Keeps lines in memory; used by tests and as the default sink.
#[derive(Debug, Default)]
pub struct MemorySink {
    lines: Mutex<Vec<String>>,
}

impl MemorySink {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn lines(&self) -> Vec<String> {
        self.lines.lock().clone()
    }

    pub fn records(&self) -> Vec<Value> {
        self.lines
            .lock()
            .iter()
            .filter_map(|l| serde_json::from_str(l).ok())
            .collect()
    }
}

impl AuditSink for MemorySink {
    fn append(&self, line: &str) -> io::Result<()> {
        self.lines.lock().push(line.to_string());
        Ok(())
    }
}

pub struct JsonLinesFile {
    file: Mutex<File>,
}

impl JsonLinesFile {
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            file: Mutex::new(file),
        })
    }
}

impl AuditSink for JsonLinesFile {
    fn append(&self, line: &str) -> io::Result<()> {
        let mut f = self.file.lock();
        f.write_all(line.as_bytes())?;
        f.write_all(b"\n")?;
        f.flush()
    }
}

#[derive(Debug, Default)]
pub struct StdoutSink;

impl AuditSink for StdoutSink {
    fn append(&self, line: &str) -> io::Result<()> {
        let mut out = io::stdout().lock();
        writeln!(out, "{line}")
    }
}

/// For command-line use, where stdout carries command output.
#[derive(Debug, Default)]
pub struct StderrSink;

impl AuditSink for StderrSink {
    fn append(&self, line: &str) -> io::Result<()> {
        let mut err = io::stderr().lock();
        writeln!(err, "{line}")
    }
}

#[derive(Clone)]
pub struct AuditLog {
    sink: Arc<dyn AuditSink>,
}

impl std::fmt::Debug for AuditLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("AuditLog")
    }
}

impl AuditLog {
    pub fn new(sink: Arc<dyn AuditSink>) -> Self {
        Self { sink }
    }

    pub fn memory() -> (Self, Arc<MemorySink>) {
        let sink = MemorySink::new();
        (Self::new(sink.clone()), sink)
    }

    pub fn record<T: Serialize>(&self, record: &T) {
        match serde_json::to_string(record) {
            Ok(line) => {
                if let Err(e) = self.sink.append(&line) {
                    tracing::error!(error = %e, "audit sink append failed");
                }
            }
            Err(e) => tracing::error!(error = %e, "audit record not serializable"),
        }
    }
}

/// Identity, authentication, MFA, and group-administration events.
#[derive(Debug, Clone, Serialize)]
pub struct AuditEvent {
    pub time: DateTime<Utc>,
    pub op: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub actor: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    pub outcome: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<Value>,
}

impl AuditEvent {
    pub fn ok(time: DateTime<Utc>, op: &'static str) -> Self {
        Self {
            time,
            op,
            actor: None,
            subject: None,
            outcome: "ok".into(),
            detail: None,
        }
    }

    pub fn failed(time: DateTime<Utc>, op: &'static str, code: &str) -> Self {
        Self {
            outcome: code.to_string(),
            ..Self::ok(time, op)
        }
    }

    pub fn actor(mut self, actor: impl Into<String>) -> Self {
        self.actor = Some(actor.into());
        self
    }

    pub fn subject(mut self, subject: impl Into<String>) -> Self {
        self.subject = Some(subject.into());
        self
    }

    pub fn detail(mut self, detail: Value) -> Self {
        self.detail = Some(detail);
        self
    }
}

#[derive(Debug, Clone, Default)]
pub struct AuditFilter {
    pub op: Option<String>,
    pub actor: Option<String>,
    pub since: Option<DateTime<Utc>>,
}

impl AuditFilter {
    pub fn matches(&self, record: &Value) -> bool {
        if let Some(op) = &self.op {
            if record.get("op").and_then(Value::as_str) != Some(op.as_str()) {
                return false;
            }
        }
        if let Some(actor) = &self.actor {
            if record.get("actor").and_then(Value::as_str) != Some(actor.as_str()) {
                return false;
            }
        }
        if let Some(since) = self.since {
            let time = record
                .get("time")
                .and_then(Value::as_str)
                .and_then(|t| DateTime::parse_from_rfc3339(t).ok());
            match time {
                Some(t) if t >= since => {}
                _ => return false,
            }
        }
        true
    }
}

/// Streams the records of a JSON-lines audit file that pass `filter`.
/// Lines that are not JSON objects are skipped.
pub fn query(reader: impl BufRead, filter: &AuditFilter) -> io::Result<Vec<Value>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if let Ok(v) = serde_json::from_str::<Value>(&line) {
            if v.is_object() && filter.matches(&v) {
                out.push(v);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    #[test]
    fn filter_by_op_and_since() {
        let (log, sink) = AuditLog::memory();
        let t0 = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
        log.record(&AuditEvent::ok(t0, "rotate").actor("a"));
        log.record(&AuditEvent::ok(t0 + chrono::Duration::hours(1), "store").actor("a"));
        log.record(&AuditEvent::ok(t0 + chrono::Duration::hours(2), "rotate").actor("b"));
        let text = sink.lines().join("\n");

        let rotations = query(
            text.as_bytes(),
            &AuditFilter {
                op: Some("rotate".into()),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(rotations.len(), 2);

        let recent = query(
            text.as_bytes(),
            &AuditFilter {
                since: Some(t0 + chrono::Duration::minutes(30)),
                actor: Some("a".into()),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(recent.len(), 1);
        assert_eq!(recent[0]["op"], "store");
    }

    #[test]
    fn file_sink_appends_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.jsonl");
        let log = AuditLog::new(Arc::new(JsonLinesFile::open(&path).unwrap()));
        log.record(&AuditEvent::ok(Utc::now(), "register"));
        log.record(&AuditEvent::ok(Utc::now(), "login"));
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
    }
}
