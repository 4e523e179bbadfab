//! One JSON object per line for every ingest, decision and actuation.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use chrono::Utc;
use prbcast_core::ts::format_timestamp;
use serde_json::{Map, Value};

#[derive(Default)]
pub struct EventLog {
    sink: Option<Mutex<Box<dyn Write + Send>>>,
}

impl EventLog {
    /// Discards every event.
    pub fn disabled() -> Self {
        Self { sink: None }
    }

    pub fn to_file(path: &Path) -> std::io::Result<Self> {
        Ok(Self::to_writer(BufWriter::new(File::create(path)?)))
    }

    pub fn to_writer(w: impl Write + Send + 'static) -> Self {
        Self {
            sink: Some(Mutex::new(Box::new(w))),
        }
    }

    /// Writes `{"event": kind, "logged_at": now, ...fields}`.
    pub fn log(&self, kind: &str, fields: Value) {
        let Some(sink) = &self.sink else { return };
        let mut obj = Map::new();
        obj.insert("event".into(), kind.into());
        obj.insert("logged_at".into(), format_timestamp(Utc::now()).into());
        if let Value::Object(extra) = fields {
            obj.extend(extra);
        }
        let mut w = sink.lock().unwrap_or_else(|e| e.into_inner());
        // logging is best effort; a full disk must not stop the control loop
        let _ = serde_json::to_writer(&mut *w, &Value::Object(obj));
        let _ = w.write_all(b"\n");
    }

    pub fn flush(&self) {
        if let Some(sink) = &self.sink {
            let _ = sink.lock().unwrap_or_else(|e| e.into_inner()).flush();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;
    use std::sync::Arc;

    #[derive(Clone, Default)]
    struct Shared(Arc<Mutex<Vec<u8>>>);

    impl Write for Shared {
        fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
            self.0.lock().unwrap().extend_from_slice(buf);
            Ok(buf.len())
        }
        fn flush(&mut self) -> std::io::Result<()> {
            Ok(())
        }
    }

    #[test]
    fn one_object_per_line() {
        let buf = Shared::default();
        let log = EventLog::to_writer(buf.clone());
        log.log("ingest", json!({"tenant_id": "a", "note": "two\nlines"}));
        log.log("decide", json!({"prbs": [1, 2]}));
        let text = String::from_utf8(buf.0.lock().unwrap().clone()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let v: Value = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(v["event"], "ingest");
        assert_eq!(v["tenant_id"], "a");
    }
}
