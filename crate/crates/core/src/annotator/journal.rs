//! Append-only run journal for crash-safe resume.
//!
//! Each completed run is appended and flushed immediately. On restart the
//! journal (and any previous final records file) seeds the done-set, so
//! only missing (item, run) pairs are re-attempted. A truncated final line
//! from an interrupted append is tolerated and simply redone.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::RunRecord;
use crate::jsonl::{self, JsonlError};

pub struct JournalWriter {
    out: BufWriter<File>,
    path: PathBuf,
}

impl JournalWriter {
    /// Opens (or creates) the journal for appending.
    pub fn append_to(path: &Path) -> std::io::Result<JournalWriter> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(JournalWriter {
            out: BufWriter::new(file),
            path: path.to_owned(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends one record and flushes so it survives a crash.
    pub fn append(&mut self, record: &RunRecord) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        self.out.flush()
    }
}

/// Loads journal records, dropping malformed lines. Returns the records
/// and the line numbers that were skipped.
pub fn load(path: &Path) -> Result<(Vec<RunRecord>, Vec<usize>), JsonlError> {
    jsonl::read_jsonl_skip_invalid(path)
}
