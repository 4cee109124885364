//! Append-only JSONL event log.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::queue::Event;
use crate::ServiceError;

#[derive(Debug)]
pub struct Journal {
    file: Option<(PathBuf, File)>,
}

impl Journal {
    /// Keeps nothing on disk.
    pub fn memory() -> Self {
        Self { file: None }
    }

    /// Opens (or creates) the log at `path` and returns it with the events
    /// already recorded. A torn final line, left by a crash mid-append, is
    /// cut off; a malformed line anywhere else is an error.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, Vec<Event>), ServiceError> {
        let path = path.as_ref().to_path_buf();
        let io = |source| ServiceError::Io {
            path: path.clone(),
            source,
        };
        let mut events = Vec::new();
        let mut good_len = 0u64;
        if path.exists() {
            let mut reader = BufReader::new(File::open(&path).map_err(io)?);
            let mut line = String::new();
            let mut number = 0;
            loop {
                line.clear();
                let n = reader.read_line(&mut line).map_err(io)?;
                if n == 0 {
                    break;
                }
                number += 1;
                if !line.ends_with('\n') {
                    log::warn!("{}: dropping torn record on line {number}", path.display());
                    break;
                }
                if !line.trim().is_empty() {
                    let event = serde_json::from_str::<Event>(&line).map_err(|e| {
                        ServiceError::Journal(format!("{} line {number}: {e}", path.display()))
                    })?;
                    events.push(event);
                }
                good_len += n as u64;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io)?;
        file.set_len(good_len).map_err(io)?;
        Ok((
            Self {
                file: Some((path, file)),
            },
            events,
        ))
    }

    /// Returns once the event is on stable storage.
    pub fn append(&mut self, event: &Event) -> Result<(), ServiceError> {
        let Some((path, file)) = &mut self.file else {
            return Ok(());
        };
        let mut line = serde_json::to_string(event).expect("events always serialize");
        line.push('\n');
        file.write_all(line.as_bytes())
            .and_then(|_| file.sync_data())
            .map_err(|source| ServiceError::Io {
                path: path.clone(),
                source,
            })
    }

    pub fn path(&self) -> Option<&Path> {
        self.file.as_ref().map(|(p, _)| p.as_path())
    }
}
