//! Line-delimited JSON persistence for entries and annotations.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Entry;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
    #[error("{path}:{line}: duplicate id {id:?}")]
    DuplicateId { path: PathBuf, line: usize, id: String },
}

/// A manual location label for one entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedExample {
    pub entry_id: String,
    pub label: bool,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

/// Writes one JSON object per line. The file is written to a temporary
/// sibling and renamed into place, so readers never observe a partial file.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), DatasetError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io_err(&dir))?;
    {
        let mut out = BufWriter::new(tmp.as_file());
        for record in records {
            serde_json::to_writer(&mut out, record).map_err(|e| DatasetError::Io {
                path: path.to_path_buf(),
                source: e.into(),
            })?;
            out.write_all(b"\n").map_err(io_err(path))?;
        }
        out.flush().map_err(io_err(path))?;
    }
    tmp.persist(path).map_err(|e| DatasetError::Io { path: path.to_path_buf(), source: e.error })?;
    Ok(())
}

/// Reads one JSON object per line. Blank lines are skipped; any other
/// unparsable line is an error carrying its 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DatasetError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| DatasetError::Malformed {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

pub fn save_dataset(path: &Path, entries: &[Entry]) -> Result<(), DatasetError> {
    write_jsonl(path, entries)
}

/// Loads a dataset, rejecting duplicate entry ids.
pub fn load_dataset(path: &Path) -> Result<Vec<Entry>, DatasetError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut entries: Vec<Entry> = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: Entry = serde_json::from_str(&line).map_err(|e| DatasetError::Malformed {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        if !seen.insert(entry.id.clone()) {
            return Err(DatasetError::DuplicateId { path: path.to_path_buf(), line: idx + 1, id: entry.id });
        }
        entries.push(entry);
    }
    Ok(entries)
}

pub fn load_annotations(path: &Path) -> Result<Vec<AnnotatedExample>, DatasetError> {
    read_jsonl(path)
}
