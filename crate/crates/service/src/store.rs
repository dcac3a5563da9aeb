//! Append-only JSON-lines logs, one file per session, fsynced on every write.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::record::SessionEvent;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("invalid session id {0:?}")]
    BadId(String),
}

#[derive(Debug, Clone)]
pub struct SessionStore {
    dir: PathBuf,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-')
}

fn encode(events: &[SessionEvent]) -> Vec<u8> {
    let mut buf = Vec::new();
    for e in events {
        serde_json::to_writer(&mut buf, e).expect("events serialize");
        buf.push(b'\n');
    }
    buf
}

impl SessionStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|source| StoreError::Io {
            path: dir.clone(),
            source,
        })?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, id: &str) -> Result<PathBuf, StoreError> {
        if !valid_id(id) {
            return Err(StoreError::BadId(id.to_string()));
        }
        Ok(self.dir.join(format!("{id}.jsonl")))
    }

    fn io<T>(path: &Path, r: io::Result<T>) -> Result<T, StoreError> {
        r.map_err(|source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Creates the log with its first events. Fails if it already exists.
    pub fn create(&self, id: &str, events: &[SessionEvent]) -> Result<(), StoreError> {
        let path = self.path(id)?;
        let mut f = Self::io(&path, OpenOptions::new().write(true).create_new(true).open(&path))?;
        Self::io(&path, f.write_all(&encode(events)))?;
        Self::io(&path, f.sync_all())?;
        // make the new directory entry durable too
        if let Ok(d) = File::open(&self.dir) {
            let _ = d.sync_all();
        }
        Ok(())
    }

    /// Appends events in one write followed by an fsync.
    pub fn append(&self, id: &str, events: &[SessionEvent]) -> Result<(), StoreError> {
        let path = self.path(id)?;
        let mut f = Self::io(&path, OpenOptions::new().append(true).open(&path))?;
        Self::io(&path, f.write_all(&encode(events)))?;
        Self::io(&path, f.sync_data())
    }

    /// Reads a log. A final line cut short by a crash is dropped.
    pub fn read(&self, id: &str) -> Result<Vec<SessionEvent>, StoreError> {
        let path = self.path(id)?;
        let text = Self::io(&path, fs::read_to_string(&path))?;
        let complete = text.ends_with('\n');
        let lines: Vec<&str> = text.lines().collect();
        let mut events = Vec::with_capacity(lines.len());
        for (k, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(line) {
                Ok(e) => events.push(e),
                Err(_) if k + 1 == lines.len() && !complete => break,
                Err(e) => {
                    return Err(StoreError::Corrupt {
                        path,
                        line: k + 1,
                        message: e.to_string(),
                    })
                }
            }
        }
        Ok(events)
    }

    /// Ids of every stored session, sorted.
    pub fn list(&self) -> Result<Vec<String>, StoreError> {
        let entries = Self::io(&self.dir, fs::read_dir(&self.dir))?;
        let mut ids: Vec<String> = entries
            .filter_map(Result::ok)
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                let id = name.strip_suffix(".jsonl")?.to_string();
                valid_id(&id).then_some(id)
            })
            .collect();
        ids.sort();
        Ok(ids)
    }
}
