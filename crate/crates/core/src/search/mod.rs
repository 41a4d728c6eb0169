//! The optimization loop: shortlist Adds by UCB, expand every beam prompt,
//! score the pool on a per-iteration sample, promote the best, and finally
//! pick the dev-best prompt among everything that was ever promoted.

mod config;
mod engine;
mod transcript;

use std::path::PathBuf;

use crate::bandit::BanditError;
use crate::corpus::CorpusError;
use crate::eval::EvalError;
use crate::llm::LlmError;
use crate::prompt::PromptError;

pub use config::{
    BanditPolicy, CacheConfig, RunConfig, DEFAULT_BEAM_SIZE, DEFAULT_C, DEFAULT_K, DEFAULT_SHORTLIST,
    DEFAULT_STEPS,
};
pub use engine::{
    beam_step, init_beam, resume, resume_with, run, run_with, select_best, BeamEntry, BeamState,
    BestPrompt, Checkpoint, Engine, RngState, RunResult, Services, StepContext, StepOutput,
    BEST_PROMPT_FILE, CHECKPOINT_FILE,
    TRANSCRIPT_FILE,
};
pub use transcript::{
    read_transcript, CandidateRecord, DevRecord, HeaderRecord, IterationRecord, Origin, OriginKind,
    Record, ResultRecord, Transcript, SCHEMA_VERSION,
};

#[derive(Debug, thiserror::Error)]
pub enum SearchError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Bandit(#[from] BanditError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("checkpoint was written for config {expected}, but the supplied config hashes to {found}")]
    ConfigMismatch { expected: String, found: String },
    #[error("transcript {path}:{line}: {message}")]
    Transcript {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("beam is empty")]
    EmptyBeam,
    #[error("iteration {0} produced no candidates")]
    EmptyPool(usize),
}

impl SearchError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> SearchError {
        let path = path.into();
        move |source| SearchError::Io { path, source }
    }
}
