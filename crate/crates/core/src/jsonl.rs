//! Line-oriented JSON IO shared by all pipeline stages.
//!
//! Readers report the 1-based line number of the first malformed line.
//! Writes go through a sibling temp file and a rename so a crash never
//! leaves a half-written output in place.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> JsonlError {
    JsonlError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Reads every line as one `T`. Blank lines are skipped; the first
/// malformed line aborts with its line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|source| JsonlError::Parse {
            path: path.to_owned(),
            line: idx + 1,
            source,
        })?;
        out.push(item);
    }
    Ok(out)
}

/// Tolerant reader for resume journals: malformed lines (for example a
/// truncated tail from an interrupted append) are dropped and their line
/// numbers returned so the caller can warn.
pub fn read_jsonl_skip_invalid<T: DeserializeOwned>(
    path: &Path,
) -> Result<(Vec<T>, Vec<usize>), JsonlError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(item) => out.push(item),
            Err(_) => skipped.push(idx + 1),
        }
    }
    Ok((out, skipped))
}

/// Serializes items one per line and atomically replaces `path`.
pub fn write_jsonl<T, I>(path: &Path, items: I) -> Result<(), JsonlError>
where
    T: Serialize,
    I: IntoIterator<Item = T>,
{
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, &item).map_err(|source| JsonlError::Parse {
            path: path.to_owned(),
            line: 0,
            source,
        })?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

/// Writes raw bytes through a temp sibling plus rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), JsonlError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut file = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
        file.write_all(bytes).map_err(|e| io_err(&tmp, e))?;
        file.sync_all().map_err(|e| io_err(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}
