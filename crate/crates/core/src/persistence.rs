//! Run directories: `runs/<run_id>/{config.json, log.jsonl, transcript.jsonl,
//! snapshots/<tick>.json, meta.json}`.
//!
//! Log lines are appended with a single write followed by flush and fsync,
//! so a crash leaves at most one torn final line, which readers drop.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ConfigBundle;
use crate::runlog::{LogEntry, RunOptions};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("storage failure: {0}")]
    Storage(#[from] io::Error),
    #[error("corrupt {what}: {message}")]
    Corrupt { what: String, message: String },
    #[error("unsupported format_version {0}")]
    Version(u32),
    #[error("run is finished; append rejected")]
    Closed,
}

impl PersistError {
    pub fn code(&self) -> &'static str {
        match self {
            PersistError::NotFound(_) => "NOT_FOUND",
            PersistError::Storage(_) => "STORAGE_ERROR",
            PersistError::Corrupt { .. } | PersistError::Version(_) => "CORRUPT_RUN",
            PersistError::Closed => "STATE_ERROR",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub format_version: u32,
    pub run_id: String,
    pub provider: String,
    pub options: RunOptions,
    /// Wall-clock times; informational only.
    pub created_at: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<String>,
}

/// Handle on one run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Creates `data_dir/<run_id>` with an empty snapshot directory.
    pub fn create(data_dir: &Path, run_id: &str) -> Result<Self, PersistError> {
        let root = data_dir.join(run_id);
        fs::create_dir_all(root.join("snapshots"))?;
        Ok(Self { root })
    }

    pub fn create_at(root: &Path) -> Result<Self, PersistError> {
        fs::create_dir_all(root.join("snapshots"))?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn open(root: &Path) -> Result<Self, PersistError> {
        if !root.join("log.jsonl").is_file() {
            return Err(PersistError::NotFound(root.display().to_string()));
        }
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn log_path(&self) -> PathBuf {
        self.root.join("log.jsonl")
    }

    pub fn transcript_path(&self) -> PathBuf {
        self.root.join("transcript.jsonl")
    }

    pub fn meta_path(&self) -> PathBuf {
        self.root.join("meta.json")
    }

    pub fn snapshot_path(&self, tick: u64) -> PathBuf {
        self.root.join("snapshots").join(format!("{tick}.json"))
    }

    pub fn write_config(&self, config: &ConfigBundle) -> Result<(), PersistError> {
        write_atomic(&self.config_path(), config.to_json().as_bytes())
    }

    pub fn write_meta(&self, meta: &RunMeta) -> Result<(), PersistError> {
        let json = serde_json::to_string_pretty(meta).expect("meta serializes");
        write_atomic(&self.meta_path(), json.as_bytes())
    }

    pub fn read_meta(&self) -> Result<RunMeta, PersistError> {
        let text = read_existing(&self.meta_path())?;
        let meta: RunMeta = serde_json::from_str(&text).map_err(|e| PersistError::Corrupt {
            what: "meta.json".into(),
            message: e.to_string(),
        })?;
        if meta.format_version != FORMAT_VERSION {
            return Err(PersistError::Version(meta.format_version));
        }
        Ok(meta)
    }

    pub fn read_log(&self) -> Result<Vec<LogEntry>, PersistError> {
        read_log(&self.log_path())
    }

    pub fn log_writer(&self) -> Result<LogWriter, PersistError> {
        LogWriter::open(&self.log_path())
    }

    pub fn write_snapshot<T: Serialize>(&self, tick: u64, snapshot: &T) -> Result<PathBuf, PersistError> {
        let path = self.snapshot_path(tick);
        let json = serde_json::to_string(snapshot).expect("snapshot serializes");
        write_atomic(&path, json.as_bytes())?;
        Ok(path)
    }

    pub fn read_snapshot<T: for<'de> Deserialize<'de>>(&self, tick: u64) -> Result<T, PersistError> {
        let path = self.snapshot_path(tick);
        let text = read_existing(&path)?;
        serde_json::from_str(&text).map_err(|e| PersistError::Corrupt {
            what: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// Ticks with a stored snapshot, ascending.
    pub fn snapshots(&self) -> Result<Vec<u64>, PersistError> {
        let mut ticks: Vec<u64> = fs::read_dir(self.root.join("snapshots"))?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str()?.strip_suffix(".json")?.parse().ok())
            .collect();
        ticks.sort_unstable();
        Ok(ticks)
    }
}

fn read_existing(path: &Path) -> Result<String, PersistError> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => PersistError::NotFound(path.display().to_string()),
        _ => PersistError::Storage(e),
    })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PersistError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Append-only JSON-lines log writer. The file is reopened for every
/// append, so a log that disappears or becomes unwritable fails loudly.
#[derive(Debug)]
pub struct LogWriter {
    path: PathBuf,
    next_seq: u64,
    closed: bool,
}

impl LogWriter {
    /// Opens for appending, first cutting off a torn final line.
    pub fn open(path: &Path) -> Result<Self, PersistError> {
        let existing = if path.exists() {
            let entries = read_log(path)?;
            let keep: u64 = entries.iter().map(|e| e.to_line().len() as u64 + 1).sum();
            let f = OpenOptions::new().write(true).open(path)?;
            if f.metadata()?.len() != keep {
                f.set_len(keep)?;
                f.sync_all()?;
            }
            entries.len() as u64
        } else {
            0
        };
        OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            next_seq: existing,
            closed: false,
        })
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Durably appends `entries`, which must continue the sequence.
    pub fn append(&mut self, entries: &[LogEntry]) -> Result<u64, PersistError> {
        if self.closed {
            return Err(PersistError::Closed);
        }
        let mut buf = String::new();
        for (i, e) in entries.iter().enumerate() {
            if e.seq != self.next_seq + i as u64 {
                return Err(PersistError::Corrupt {
                    what: "append".into(),
                    message: format!("sequence {} does not follow {}", e.seq, self.next_seq + i as u64),
                });
            }
            buf.push_str(&e.to_line());
            buf.push('\n');
        }
        let mut file = OpenOptions::new().append(true).open(&self.path)?;
        file.write_all(buf.as_bytes())?;
        file.flush()?;
        file.sync_data()?;
        self.next_seq += entries.len() as u64;
        Ok(self.next_seq)
    }

    /// Rejects further appends.
    pub fn close(&mut self) {
        self.closed = true;
    }
}

/// Reads a log, dropping a torn or unparsable final line. Corruption
/// anywhere else is an error.
pub fn read_log(path: &Path) -> Result<Vec<LogEntry>, PersistError> {
    let file = File::open(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => PersistError::NotFound(path.display().to_string()),
        _ => PersistError::Storage(e),
    })?;
    let lines: Vec<String> = BufReader::new(file).lines().collect::<Result<_, _>>()?;
    let mut out = Vec::with_capacity(lines.len());
    let last = lines.len().saturating_sub(1);
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<LogEntry>(line) {
            Ok(e) => out.push(e),
            Err(_) if i == last => break,
            Err(e) => {
                return Err(PersistError::Corrupt {
                    what: format!("log line {}", i + 1),
                    message: e.to_string(),
                })
            }
        }
    }
    for (i, e) in out.iter().enumerate() {
        if e.seq != i as u64 {
            return Err(PersistError::Corrupt {
                what: "log".into(),
                message: format!("sequence gap at line {}", i + 1),
            });
        }
    }
    Ok(out)
}

/// Raw log lines, for byte-level comparison.
pub fn read_log_lines(path: &Path) -> Result<Vec<String>, PersistError> {
    Ok(read_log(path)?.iter().map(LogEntry::to_line).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runlog::LogRecord;

    fn entry(seq: u64) -> LogEntry {
        LogEntry {
            seq,
            tick: 0,
            record: LogRecord::TickCommit {
                next_tick: 1,
                finished: false,
            },
        }
    }

    #[test]
    fn appends_are_sequenced() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::create(dir.path(), "r").unwrap();
        let mut w = run.log_writer().unwrap();
        assert_eq!(w.append(&[entry(0)]).unwrap(), 1);
        assert_eq!(w.append(&[entry(1)]).unwrap(), 2);
        assert!(w.append(&[entry(5)]).is_err());
        w.close();
        assert_eq!(w.append(&[entry(2)]).unwrap_err().code(), "STATE_ERROR");
        assert_eq!(run.read_log().unwrap().len(), 2);
        // reopening continues the sequence
        assert_eq!(RunDir::open(run.root()).unwrap().log_writer().unwrap().next_seq(), 2);
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::create(dir.path(), "r").unwrap();
        run.log_writer().unwrap().append(&[entry(0), entry(1)]).unwrap();
        let mut f = OpenOptions::new().append(true).open(run.log_path()).unwrap();
        f.write_all(br#"{"seq":2,"tick":0,"ty"#).unwrap();
        assert_eq!(run.read_log().unwrap().len(), 2);
        let mut w = run.log_writer().unwrap();
        w.append(&[entry(2)]).unwrap();
        assert_eq!(run.read_log().unwrap().len(), 3);
    }

    #[test]
    fn missing_snapshot_is_not_found() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::create(dir.path(), "r").unwrap();
        let err = run.read_snapshot::<serde_json::Value>(3).unwrap_err();
        assert_eq!(err.code(), "NOT_FOUND");
        run.write_snapshot(3, &serde_json::json!({"a": 1})).unwrap();
        assert_eq!(run.snapshots().unwrap(), vec![3]);
    }
}
