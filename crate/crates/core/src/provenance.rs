//! Provenance headers and JSONL helpers shared by every record stream.
//!
//! A JSONL stream starts with one header line of the form
//! `{"provenance": {"command": ..., "seed": ..., "version": ...}}`; every
//! following line is a record. Readers skip the header.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub version: String,
}

impl Provenance {
    pub fn new(command: impl Into<String>, seed: Option<u64>) -> Self {
        Self {
            command: command.into(),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    provenance: Provenance,
}

pub fn write_jsonl<T: Serialize>(
    path: impl AsRef<Path>,
    provenance: Option<&Provenance>,
    records: &[T],
) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    if let Some(p) = provenance {
        serde_json::to_writer(&mut out, &Header { provenance: p.clone() })?;
        out.push(b'\n');
    }
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text)
}

pub fn parse_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    let mut records = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if !trimmed.is_empty() {
            let is_header = records.is_empty()
                && trimmed.starts_with("{\"provenance\"")
                && serde_json::from_str::<Header>(trimmed).is_ok();
            if !is_header {
                let record = serde_json::from_str(trimmed).map_err(|e| Error::Format {
                    offset: offset + e.column().saturating_sub(1),
                    message: e.to_string(),
                })?;
                records.push(record);
            }
        }
        offset += line.len();
    }
    Ok(records)
}

/// Writes pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| crate::annotations::format_error(&bytes, &e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        let p = Provenance::new("qmd test", Some(1));
        write_jsonl(&path, Some(&p), &[1u32, 2, 3]).unwrap();
        let back: Vec<u32> = read_jsonl(&path).unwrap();
        assert_eq!(back, vec![1, 2, 3]);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("{\"provenance\""));
    }

    #[test]
    fn bad_record_reports_offset() {
        let err = parse_jsonl::<u32>("1\n2\nx\n").unwrap_err();
        match err {
            Error::Format { offset, .. } => assert_eq!(offset, 4),
            other => panic!("{other:?}"),
        }
    }
}
