//! Append-only JSON-lines log with atomic snapshot files.
//!
//! Each event is one line, flushed and synced before `append` returns. A
//! final line without its newline is the trace of a crash mid-write and is
//! dropped on replay; a malformed line anywhere else is corruption.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("journal i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("journal {path} is corrupt at line {line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("cannot encode journal entry: {0}")]
    Encode(#[from] serde_json::Error),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> JournalError + '_ {
    move |source| JournalError::Io { path: path.to_path_buf(), source }
}

pub struct Journal<E> {
    path: PathBuf,
    file: File,
    len: usize,
    _event: PhantomData<fn() -> E>,
}

/// Events read back by [`Journal::open`].
pub struct Replay<E> {
    pub events: Vec<E>,
    /// A partially written final line was discarded.
    pub torn_tail: bool,
}

impl<E: Serialize + DeserializeOwned> Journal<E> {
    /// Opens (creating if needed) the log at `path` and reads every complete event.
    pub fn open(path: &Path) -> Result<(Self, Replay<E>), JournalError> {
        let mut events = Vec::new();
        let mut torn_tail = false;
        let mut valid_bytes = 0u64;
        if path.exists() {
            let mut reader = BufReader::new(File::open(path).map_err(io(path))?);
            let mut line = String::new();
            let mut number = 0;
            loop {
                line.clear();
                let read = reader.read_line(&mut line).map_err(io(path))?;
                if read == 0 {
                    break;
                }
                number += 1;
                if !line.ends_with('\n') {
                    torn_tail = true;
                    break;
                }
                let body = line.trim();
                if !body.is_empty() {
                    let event = serde_json::from_str(body).map_err(|e| JournalError::Corrupt {
                        path: path.to_path_buf(),
                        line: number,
                        message: e.to_string(),
                    })?;
                    events.push(event);
                }
                valid_bytes += read as u64;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io(path))?;
        if torn_tail {
            file.set_len(valid_bytes).map_err(io(path))?;
        }
        let len = events.len();
        Ok((Self { path: path.to_path_buf(), file, len, _event: PhantomData }, Replay { events, torn_tail }))
    }

    pub fn append(&mut self, event: &E) -> Result<(), JournalError> {
        let mut line = serde_json::to_vec(event)?;
        line.push(b'\n');
        self.file.write_all(&line).map_err(io(&self.path))?;
        self.file.sync_data().map_err(io(&self.path))?;
        self.len += 1;
        Ok(())
    }

    /// Events appended since the last truncation.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Drops every event, after their effect has been folded into a snapshot.
    pub fn truncate(&mut self) -> Result<(), JournalError> {
        self.file.set_len(0).map_err(io(&self.path))?;
        self.file.sync_all().map_err(io(&self.path))?;
        self.len = 0;
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), JournalError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp).map_err(io(&tmp))?;
        f.write_all(bytes).map_err(io(&tmp))?;
        f.sync_all().map_err(io(&tmp))?;
    }
    std::fs::rename(&tmp, path).map_err(io(path))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        // make the rename itself durable
        if let Ok(d) = File::open(dir) {
            let _ = d.sync_all();
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Ev {
        n: u32,
    }

    #[test]
    fn replays_and_drops_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        {
            let (mut j, replay) = Journal::<Ev>::open(&path).unwrap();
            assert!(replay.events.is_empty());
            j.append(&Ev { n: 1 }).unwrap();
            j.append(&Ev { n: 2 }).unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"n\":").unwrap();
        drop(f);
        let (mut j, replay) = Journal::<Ev>::open(&path).unwrap();
        assert!(replay.torn_tail);
        assert_eq!(replay.events, vec![Ev { n: 1 }, Ev { n: 2 }]);
        j.append(&Ev { n: 3 }).unwrap();
        drop(j);
        let (_, replay) = Journal::<Ev>::open(&path).unwrap();
        assert!(!replay.torn_tail);
        assert_eq!(replay.events.len(), 3);
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        std::fs::write(&path, "{\"n\":1}\nnot json\n{\"n\":2}\n").unwrap();
        match Journal::<Ev>::open(&path) {
            Err(JournalError::Corrupt { line: 2, .. }) => {}
            other => panic!("unexpected: {:?}", other.map(|(_, r)| r.events)),
        }
    }
}
