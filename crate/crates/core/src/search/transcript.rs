//! JSONL run transcript. One header line, then per iteration one line per
//! pool candidate and one summary line, then the dev scores and the result.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::Component;
use crate::eval::SampleItem;
use crate::prompt::{EditKind, EditOp, Prompt};

use super::{RunConfig, SearchError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OriginKind {
    Initial,
    Elite,
    Add,
    Rephrase,
    Swap,
    Delete,
}

impl From<EditKind> for OriginKind {
    fn from(kind: EditKind) -> Self {
        match kind {
            EditKind::Add => OriginKind::Add,
            EditKind::Rephrase => OriginKind::Rephrase,
            EditKind::Swap => OriginKind::Swap,
            EditKind::Delete => OriginKind::Delete,
        }
    }
}

/// How a pool entry came to be in this iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Origin {
    pub kind: OriginKind,
    pub parent_key: Option<String>,
    pub edit: Option<EditOp>,
}

impl Origin {
    pub fn initial() -> Self {
        Origin {
            kind: OriginKind::Initial,
            parent_key: None,
            edit: None,
        }
    }

    pub fn elite() -> Self {
        Origin {
            kind: OriginKind::Elite,
            parent_key: None,
            edit: None,
        }
    }

    pub fn edit(parent_key: String, edit: EditOp) -> Self {
        Origin {
            kind: edit.kind().into(),
            parent_key: Some(parent_key),
            edit: Some(edit),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeaderRecord {
    pub schema_version: u32,
    pub config_hash: String,
    pub extraction_policy: String,
    pub config: RunConfig,
    pub corpus: Vec<Component>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub iteration: usize,
    pub key: String,
    pub origin: Origin,
    pub prompt: Prompt,
    pub score: f64,
    pub parent_score: Option<f64>,
    /// Bandit reward, Adds only.
    pub reward: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub sample_seed: u64,
    pub sample: Vec<SampleItem>,
    pub shortlist: Vec<String>,
    pub candidates: usize,
    pub skipped_rephrases: usize,
    pub beam: Vec<super::BeamEntry>,
    pub best_score: f64,
    pub bandit_n: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevRecord {
    pub key: String,
    pub prompt: Prompt,
    pub score: f64,
    pub per_task: std::collections::BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub best_key: String,
    pub best_prompt: Prompt,
    pub rendered: String,
    pub dev_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Record {
    Header(Box<HeaderRecord>),
    Candidate(CandidateRecord),
    Iteration(IterationRecord),
    Dev(DevRecord),
    Result(ResultRecord),
}

/// Append-only writer that knows its byte length, so a checkpoint can say
/// exactly where a resumed run picks up.
pub struct Transcript {
    path: PathBuf,
    file: File,
    len: u64,
}

impl Transcript {
    pub fn create(path: impl Into<PathBuf>) -> Result<Self, SearchError> {
        let path = path.into();
        let file = File::create(&path).map_err(SearchError::io(&path))?;
        Ok(Transcript { path, file, len: 0 })
    }

    /// Reopens a transcript and drops everything past `len`.
    pub fn reopen_at(path: impl Into<PathBuf>, len: u64) -> Result<Self, SearchError> {
        let path = path.into();
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .open(&path)
            .map_err(SearchError::io(&path))?;
        let actual = file.metadata().map_err(SearchError::io(&path))?.len();
        if actual < len {
            return Err(SearchError::Transcript {
                path,
                line: 0,
                message: format!("is {actual} bytes, shorter than the checkpointed {len}"),
            });
        }
        file.set_len(len).map_err(SearchError::io(&path))?;
        file.seek(SeekFrom::End(0)).map_err(SearchError::io(&path))?;
        Ok(Transcript { path, file, len })
    }

    pub fn append(&mut self, record: &Record) -> Result<(), SearchError> {
        let mut line = serde_json::to_vec(record).expect("records serialize");
        line.push(b'\n');
        self.file.write_all(&line).map_err(SearchError::io(&self.path))?;
        self.len += line.len() as u64;
        Ok(())
    }

    /// Flushes to disk and returns the byte length.
    pub fn sync(&mut self) -> Result<u64, SearchError> {
        self.file.flush().map_err(SearchError::io(&self.path))?;
        self.file.sync_data().map_err(SearchError::io(&self.path))?;
        Ok(self.len)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

pub fn read_transcript(path: impl AsRef<Path>) -> Result<Vec<Record>, SearchError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(SearchError::io(path))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(SearchError::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| SearchError::Transcript {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if let Record::Header(h) = &record {
            if h.schema_version != SCHEMA_VERSION {
                return Err(SearchError::Transcript {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!(
                        "schema version {} is not supported (expected {SCHEMA_VERSION})",
                        h.schema_version
                    ),
                });
            }
        }
        records.push(record);
    }
    match records.first() {
        Some(Record::Header(_)) => Ok(records),
        _ => Err(SearchError::Transcript {
            path: path.to_path_buf(),
            line: 1,
            message: "first record must be the header".into(),
        }),
    }
}
