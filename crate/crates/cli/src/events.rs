//! Structured event log: one JSON object per line on stderr, so failure
//! forensics can be asserted on in tests while stdout stays reserved for
//! command output.

use std::str::FromStr;

use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Level {
    Error,
    Warn,
    Info,
    Debug,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Error => "error",
            Level::Warn => "warn",
            Level::Info => "info",
            Level::Debug => "debug",
        }
    }
}

impl FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "error" => Ok(Level::Error),
            "warn" | "warning" => Ok(Level::Warn),
            "info" => Ok(Level::Info),
            "debug" => Ok(Level::Debug),
            other => Err(format!("unknown log level {other:?}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EventLog {
    verbosity: Level,
}

impl EventLog {
    pub fn new(verbosity: Level) -> Self {
        EventLog { verbosity }
    }

    /// Emits one event line; `fields` must be a JSON object.
    pub fn emit(&self, level: Level, event: &str, fields: Value) {
        if level > self.verbosity {
            return;
        }
        let mut map = serde_json::Map::new();
        map.insert("level".into(), Value::String(level.as_str().into()));
        map.insert("event".into(), Value::String(event.into()));
        if let Value::Object(extra) = fields {
            map.extend(extra);
        }
        eprintln!("{}", Value::Object(map));
    }

    pub fn error(&self, event: &str, fields: Value) {
        self.emit(Level::Error, event, fields);
    }

    pub fn warn(&self, event: &str, fields: Value) {
        self.emit(Level::Warn, event, fields);
    }

    pub fn info(&self, event: &str, fields: Value) {
        self.emit(Level::Info, event, fields);
    }

    pub fn debug(&self, event: &str, fields: Value) {
        self.emit(Level::Debug, event, fields);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn levels_order_by_verbosity() {
        assert!(Level::Error < Level::Warn);
        assert!(Level::Info < Level::Debug);
        assert_eq!("warning".parse::<Level>().unwrap(), Level::Warn);
        assert!("loud".parse::<Level>().is_err());
    }
}
