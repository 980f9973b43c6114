//! Versioned line-delimited JSON files.
//!
//! Every file starts with the header line [`FORMAT_HEADER`], followed by one
//! JSON record per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

pub const FORMAT_HEADER: &str = "format=earl-lab/v1";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {error}")]
    Io {
        path: String,
        error: std::io::Error,
    },
    #[error("{path}: missing or unsupported header, expected `{FORMAT_HEADER}`")]
    BadHeader { path: String },
    #[error("{path}:{line}: {message}")]
    Malformed { path: String, line: usize, message: String },
}

impl FormatError {
    pub fn malformed(path: &Path, line: usize, message: impl Into<String>) -> Self {
        FormatError::Malformed { path: path.display().to_string(), line, message: message.into() }
    }

    fn io(path: &Path, error: std::io::Error) -> Self {
        FormatError::Io { path: path.display().to_string(), error }
    }
}

/// Serializes records to the header-prefixed line format.
pub fn to_jsonl_string<T: Serialize>(records: &[T]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(FORMAT_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize to JSON"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), FormatError> {
    let file = File::create(path).map_err(|e| FormatError::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(to_jsonl_string(records).as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| FormatError::io(path, e))
}

/// Reads records, returning each with its 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>, FormatError> {
    let file = File::open(path).map_err(|e| FormatError::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    match lines.next() {
        Some(Ok(h)) if h.trim_end() == FORMAT_HEADER => {}
        Some(Err(e)) => return Err(FormatError::io(path, e)),
        _ => return Err(FormatError::BadHeader { path: path.display().to_string() }),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.map_err(|e| FormatError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| FormatError::malformed(path, line_no, e.to_string()))?;
        out.push((line_no, record));
    }
    Ok(out)
}
