//! JSON-lines logger on stderr.

use std::io::Write;
use std::time::{SystemTime, UNIX_EPOCH};

use log::{Level, LevelFilter, Log, Metadata, Record};
use serde_json::json;

struct JsonLogger {
    level: LevelFilter,
}

impl Log for JsonLogger {
    fn enabled(&self, metadata: &Metadata) -> bool {
        metadata.level() <= self.level
    }

    fn log(&self, record: &Record) {
        if !self.enabled(record.metadata()) {
            return;
        }
        let ts = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        let line = json!({
            "ts": ts,
            "level": record.level().as_str().to_ascii_lowercase(),
            "target": record.target(),
            "message": record.args().to_string(),
        });
        let _ = writeln!(std::io::stderr().lock(), "{line}");
    }

    fn flush(&self) {}
}

pub fn init(level: LevelFilter) {
    let _ = log::set_boxed_logger(Box::new(JsonLogger { level }));
    log::set_max_level(level);
}

/// The single-line error record emitted before a nonzero exit.
pub fn error_line(code: i32, kind: &str, message: &str) -> String {
    json!({
        "level": Level::Error.as_str().to_ascii_lowercase(),
        "code": code,
        "kind": kind,
        "message": message,
    })
    .to_string()
}
