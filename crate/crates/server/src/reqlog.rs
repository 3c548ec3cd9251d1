use std::io::Write;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use chrono::{SecondsFormat, Utc};
use mivs_core::sync::SourceScan;
use serde_json::{json, Value};

/// Structured log: one JSON object per line, flushed as written.
pub struct RequestLog {
    sink: Mutex<Box<dyn Write + Send>>,
}

impl RequestLog {
    pub fn stderr() -> RequestLog {
        RequestLog::new(Box::new(std::io::stderr()))
    }

    pub fn to_file(path: &Path) -> std::io::Result<RequestLog> {
        let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        Ok(RequestLog::new(Box::new(file)))
    }

    pub fn new(sink: Box<dyn Write + Send>) -> RequestLog {
        RequestLog { sink: Mutex::new(sink) }
    }

    pub fn line(&self, mut value: Value) {
        if let Some(obj) = value.as_object_mut() {
            obj.insert("ts".into(), Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true).into());
        }
        let mut sink = self.sink.lock().unwrap_or_else(|e| e.into_inner());
        let _ = writeln!(sink, "{value}");
        let _ = sink.flush();
    }

    pub fn request(&self, method: &str, path: &str, status: u16, elapsed: Duration) {
        self.line(json!({
            "kind": "request",
            "method": method,
            "path": path,
            "status": status,
            "latency_ms": (elapsed.as_secs_f64() * 1e6).round() / 1e3,
        }));
    }

    pub fn scan(&self, scans: &[SourceScan]) {
        for s in scans {
            let entry = match &s.result {
                Ok(events) => {
                    if events.is_empty() {
                        continue;
                    }
                    let count = |k: &str| events.iter().filter(|e| e.kind() == k).count();
                    json!({
                        "kind": "scan",
                        "source_id": s.source_id,
                        "added": count("added"),
                        "rejected": count("rejected"),
                        "removed": count("removed"),
                    })
                }
                Err(e) => json!({"kind": "scan", "source_id": s.source_id, "error": e.to_string()}),
            };
            self.line(entry);
        }
    }

    pub fn flush(&self) {
        let _ = self.sink.lock().unwrap_or_else(|e| e.into_inner()).flush();
    }
}
