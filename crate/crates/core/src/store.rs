//! Line-delimited JSON record files.
//!
//! Every persistent store in the pipeline (reports, specs, artifacts, seeds,
//! findings, transcripts) is a UTF-8 file holding one JSON object per line.
//! Records that carry a stable identifier implement [`Keyed`] so that stores
//! can reject duplicates on write and report the offending line on read.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: corrupt record: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate id `{id}`")]
    DuplicateId { id: String },
    #[error("{path}:{line}: duplicate id `{id}`")]
    DuplicateIdAt { path: PathBuf, line: usize, id: String },
    #[error("serialize record `{id}`: {message}")]
    Serialize { id: String, message: String },
}

/// A record with a store-unique identifier.
pub trait Keyed {
    fn key(&self) -> &str;
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn check_unique<'a, T: Keyed + 'a>(
    records: impl IntoIterator<Item = &'a T>,
    seen: &mut HashSet<String>,
) -> Result<(), StoreError> {
    for record in records {
        if !seen.insert(record.key().to_string()) {
            return Err(StoreError::DuplicateId {
                id: record.key().to_string(),
            });
        }
    }
    Ok(())
}

fn encode<T: Serialize + Keyed>(record: &T) -> Result<String, StoreError> {
    serde_json::to_string(record).map_err(|e| StoreError::Serialize {
        id: record.key().to_string(),
        message: e.to_string(),
    })
}

fn ensure_parent(path: &Path) -> Result<(), StoreError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
    }
    Ok(())
}

/// Writes `records` to `path`, replacing any previous content.
pub fn write_records<T: Serialize + Keyed>(path: &Path, records: &[T]) -> Result<(), StoreError> {
    check_unique(records, &mut HashSet::new())?;
    ensure_parent(path)?;
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for record in records {
        let line = encode(record)?;
        writeln!(out, "{line}").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// Reads every record, failing on the first corrupt line or repeated id.
pub fn read_records<T: DeserializeOwned + Keyed>(path: &Path) -> Result<Vec<T>, StoreError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        if !seen.insert(record.key().to_string()) {
            return Err(StoreError::DuplicateIdAt {
                path: path.to_path_buf(),
                line: idx + 1,
                id: record.key().to_string(),
            });
        }
        records.push(record);
    }
    Ok(records)
}

/// Like [`read_records`] but a missing file reads as empty.
pub fn read_records_or_empty<T: DeserializeOwned + Keyed>(
    path: &Path,
) -> Result<Vec<T>, StoreError> {
    if path.exists() {
        read_records(path)
    } else {
        Ok(Vec::new())
    }
}

/// Serialized appender for a record file.
///
/// Keeps the set of ids already present so that appends stay duplicate-free
/// across process restarts.
pub struct Appender {
    path: PathBuf,
    inner: Mutex<AppenderState>,
}

struct AppenderState {
    out: BufWriter<File>,
    seen: HashSet<String>,
}

impl Appender {
    /// Opens `path` for appending. Existing records are scanned for their ids.
    pub fn open<T: DeserializeOwned + Keyed>(path: &Path) -> Result<Self, StoreError> {
        let existing: Vec<T> = read_records_or_empty(path)?;
        let seen = existing.iter().map(|r| r.key().to_string()).collect();
        ensure_parent(path)?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            inner: Mutex::new(AppenderState {
                out: BufWriter::new(file),
                seen,
            }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn contains(&self, id: &str) -> bool {
        self.inner.lock().expect("appender lock").seen.contains(id)
    }

    /// Appends one record and flushes it to disk.
    pub fn append<T: Serialize + Keyed>(&self, record: &T) -> Result<(), StoreError> {
        let line = encode(record)?;
        let mut state = self.inner.lock().expect("appender lock");
        if state.seen.contains(record.key()) {
            return Err(StoreError::DuplicateId {
                id: record.key().to_string(),
            });
        }
        writeln!(state.out, "{line}").map_err(io_err(&self.path))?;
        state.out.flush().map_err(io_err(&self.path))?;
        state.seen.insert(record.key().to_string());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Rec {
        id: String,
        v: u32,
    }

    impl Keyed for Rec {
        fn key(&self) -> &str {
            &self.id
        }
    }

    fn rec(id: &str, v: u32) -> Rec {
        Rec { id: id.into(), v }
    }

    #[test]
    fn empty_store_is_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        write_records::<Rec>(&path, &[]).unwrap();
        assert_eq!(fs::read(&path).unwrap().len(), 0);
        assert!(read_records::<Rec>(&path).unwrap().is_empty());
    }

    #[test]
    fn duplicate_rejected_on_write() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        let err = write_records(&path, &[rec("a", 1), rec("a", 2)]).unwrap_err();
        assert!(matches!(err, StoreError::DuplicateId { ref id } if id == "a"));
    }

    #[test]
    fn duplicate_on_read_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        fs::write(
            &path,
            "{\"id\":\"a\",\"v\":1}\n{\"id\":\"b\",\"v\":1}\n{\"id\":\"a\",\"v\":3}\n",
        )
        .unwrap();
        match read_records::<Rec>(&path).unwrap_err() {
            StoreError::DuplicateIdAt { line, id, .. } => {
                assert_eq!(line, 3);
                assert_eq!(id, "a");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn corrupt_line_reports_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        fs::write(&path, "{\"id\":\"a\",\"v\":1}\nnot json\n").unwrap();
        match read_records::<Rec>(&path).unwrap_err() {
            StoreError::Corrupt { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn appender_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        {
            let app = Appender::open::<Rec>(&path).unwrap();
            app.append(&rec("a", 1)).unwrap();
        }
        let app = Appender::open::<Rec>(&path).unwrap();
        assert!(app.contains("a"));
        assert!(app.append(&rec("a", 9)).is_err());
        app.append(&rec("b", 2)).unwrap();
        let all: Vec<Rec> = read_records(&path).unwrap();
        assert_eq!(all, vec![rec("a", 1), rec("b", 2)]);
    }
}
