//! Line logger: `[<ISO-8601 timestamp>]: <message>` to stderr and a file.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use chrono::{DateTime, SecondsFormat, Utc};

pub fn format_line(at: DateTime<Utc>, message: &str) -> String {
    format!("[{}]: {message}", at.to_rfc3339_opts(SecondsFormat::Millis, true))
}

pub struct LineLogger {
    file: Option<Mutex<File>>,
    level: log::LevelFilter,
}

impl LineLogger {
    pub fn new(path: Option<&Path>, level: log::LevelFilter) -> std::io::Result<Self> {
        let file = match path {
            Some(p) => Some(Mutex::new(OpenOptions::new().create(true).append(true).open(p)?)),
            None => None,
        };
        Ok(Self { file, level })
    }

    /// Installs this logger process-wide; later calls are ignored.
    pub fn install(self) {
        let level = self.level;
        if log::set_boxed_logger(Box::new(self)).is_ok() {
            log::set_max_level(level);
        }
    }
}

impl log::Log for LineLogger {
    fn enabled(&self, metadata: &log::Metadata) -> bool {
        metadata.level() <= self.level
    }

    fn log(&self, record: &log::Record) {
        if !self.enabled(record.metadata()) {
            return;
        }
        let line = format_line(Utc::now(), &record.args().to_string());
        eprintln!("{line}");
        if let Some(f) = &self.file {
            let mut f = f.lock().unwrap();
            let _ = writeln!(f, "{line}");
        }
    }

    fn flush(&self) {
        if let Some(f) = &self.file {
            let _ = f.lock().unwrap().flush();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    #[test]
    fn line_shape() {
        let at = Utc.with_ymd_and_hms(2024, 3, 9, 7, 5, 1).unwrap();
        assert_eq!(format_line(at, "node up"), "[2024-03-09T07:05:01.000Z]: node up");
    }
}
