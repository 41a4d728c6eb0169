//! Command-line driver: `optimize`, `evaluate`, `analyze`, `corpus stats`.
//!
//! Exit status is 0 on success, 2 for usage and configuration errors, and 1
//! for anything that fails at run time.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use crate::analysis::{self, AnalysisError};
use crate::corpus::Corpus;
use crate::eval::{evaluate_prompt, EvalSample, Split, TaskSet};
use crate::llm::{Backend, CachedBackend};
use crate::prompt::Prompt;
use crate::search::{self, read_transcript, RunConfig, SearchError, CHECKPOINT_FILE};

pub const CONFIG_SNAPSHOT_FILE: &str = "config_snapshot.toml";
pub const ANALYSIS_DIR: &str = "analysis";

#[derive(Debug, Parser)]
#[command(name = "promptbeam", version, about = "Optimize a task-agnostic system prompt by edit-based beam search")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the search and write a run directory.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        /// Continue from a checkpoint; the run directory is the checkpoint's.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Run directory (default: a timestamped directory under output_dir).
        #[arg(long, conflicts_with = "resume")]
        out: Option<PathBuf>,
    },
    /// Score one system prompt on a full split and print the report.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        /// Rendered text, a best_prompt.json, or a JSON array of components.
        #[arg(long)]
        prompt: PathBuf,
        #[arg(long, value_enum)]
        split: SplitArg,
    },
    /// Compute analysis reports from a transcript.
    Analyze {
        #[arg(long)]
        transcript: PathBuf,
        /// Two answer files of {question_id, correct} lines.
        #[arg(long, num_args = 2, value_names = ["A", "B"])]
        compare: Option<Vec<PathBuf>>,
        /// Output directory (default: analysis/ next to the transcript).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Corpus utilities.
    Corpus {
        #[command(subcommand)]
        command: CorpusCommand,
    },
}

#[derive(Debug, Subcommand)]
pub enum CorpusCommand {
    /// Print per-category counts and fractions as JSON.
    Stats { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Dev,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Dev => Split::Dev,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<SearchError> for CliError {
    fn from(e: SearchError) -> Self {
        match e {
            SearchError::Config(_) | SearchError::ConfigMismatch { .. } => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::IdMismatch { .. } => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("output serializes"));
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Optimize { config, resume, out } => cmd_optimize(&config, resume.as_deref(), out.as_deref()),
        Command::Evaluate { config, prompt, split } => cmd_evaluate(&config, &prompt, split.into()),
        Command::Analyze { transcript, compare, out } => {
            let pair = compare.map(|v| (v[0].clone(), v[1].clone()));
            cmd_analyze(&transcript, pair.as_ref().map(|(a, b)| (a.as_path(), b.as_path())), out.as_deref())
        }
        Command::Corpus {
            command: CorpusCommand::Stats { path },
        } => {
            let corpus = Corpus::load(&path).map_err(runtime)?;
            print_json(&corpus.stats());
            Ok(())
        }
    }
}

fn timestamped_dir(parent: &Path) -> PathBuf {
    let stamp = chrono::Local::now().format("run-%Y%m%d-%H%M%S").to_string();
    let mut dir = parent.join(&stamp);
    let mut n = 1;
    while dir.exists() {
        dir = parent.join(format!("{stamp}-{n}"));
        n += 1;
    }
    dir
}

pub fn cmd_optimize(config_path: &Path, resume: Option<&Path>, out: Option<&Path>) -> Result<(), CliError> {
    let config = RunConfig::load(config_path)?;
    let result = match resume {
        Some(checkpoint) => search::resume(config, checkpoint)?,
        None => {
            let run_dir = match (out, &config.output_dir) {
                (Some(dir), _) => dir.to_path_buf(),
                (None, Some(parent)) => timestamped_dir(parent),
                (None, None) => timestamped_dir(&config_path.parent().unwrap_or(Path::new(".")).join("runs")),
            };
            fs::create_dir_all(&run_dir).map_err(runtime)?;
            fs::copy(config_path, run_dir.join(CONFIG_SNAPSHOT_FILE)).map_err(runtime)?;
            eprintln!("run directory: {}", run_dir.display());
            search::run(config, &run_dir)?
        }
    };
    let records = read_transcript(&result.transcript)?;
    analysis::write_transcript_reports(&records, &result.run_dir.join(ANALYSIS_DIR))?;
    print_json(&serde_json::json!({
        "run_dir": result.run_dir,
        "checkpoint": result.run_dir.join(CHECKPOINT_FILE),
        "dev_score": result.dev_score,
        "best_prompt": result.best_prompt.render(),
        "components": result.best_prompt.source_ids().collect::<Vec<_>>(),
    }));
    Ok(())
}

/// Accepts a best_prompt.json object, a JSON array of components, a JSON
/// string, or plain text.
pub fn read_prompt_file(path: &Path) -> Result<String, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    match serde_json::from_str::<serde_json::Value>(&text) {
        Ok(serde_json::Value::Object(obj)) => obj
            .get("rendered")
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or_else(|| CliError::Usage(format!("{}: object has no \"rendered\" string", path.display()))),
        Ok(v @ serde_json::Value::Array(_)) => serde_json::from_value::<Prompt>(v)
            .map(|p| p.render())
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display()))),
        Ok(serde_json::Value::String(s)) => Ok(s),
        _ => Ok(text.strip_suffix('\n').unwrap_or(&text).to_string()),
    }
}

pub fn cmd_evaluate(config_path: &Path, prompt_path: &Path, split: Split) -> Result<(), CliError> {
    let config = RunConfig::load(config_path)?;
    let system = read_prompt_file(prompt_path)?;
    let tasks = TaskSet::load(&config.tasks, config.splits, config.split_seed).map_err(runtime)?;
    let raw = config.backend.build().map_err(runtime)?;
    let backend: Arc<dyn Backend> = match (&config.cache.dir, config.cache.enabled) {
        (Some(dir), true) => Arc::new(CachedBackend::new(raw, dir).map_err(runtime)?),
        _ => raw,
    };
    let sample = EvalSample::full_split(tasks.tasks(), split).map_err(runtime)?;
    let report = evaluate_prompt(&system, &sample, &tasks, backend.as_ref(), &config.generation()).map_err(runtime)?;
    print_json(&report);
    Ok(())
}

pub fn cmd_analyze(transcript: &Path, compare: Option<(&Path, &Path)>, out: Option<&Path>) -> Result<(), CliError> {
    let out_dir = match out {
        Some(dir) => dir.to_path_buf(),
        None => transcript.parent().unwrap_or(Path::new(".")).join(ANALYSIS_DIR),
    };
    let records = read_transcript(transcript)?;
    let mut written = analysis::write_transcript_reports(&records, &out_dir)?;
    if let Some((a, b)) = compare {
        let table = analysis::agreement_table(&analysis::read_answers(a)?, &analysis::read_answers(b)?)?;
        written.extend(analysis::write_agreement_report(&table, &out_dir)?);
    }
    print_json(&written);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_commands() {
        let cli = Cli::try_parse_from(["pb", "optimize", "--config", "c.toml", "--out", "o"]).unwrap();
        assert!(matches!(cli.command, Command::Optimize { out: Some(_), .. }));
        let cli = Cli::try_parse_from(["pb", "analyze", "--transcript", "t", "--compare", "a", "b"]).unwrap();
        assert!(matches!(cli.command, Command::Analyze { compare: Some(ref v), .. } if v.len() == 2));
        assert!(Cli::try_parse_from(["pb", "corpus", "stats", "x.jsonl"]).is_ok());
    }

    #[test]
    fn bad_usage_exits_2() {
        assert_eq!(run_cli(["pb", "evaluate", "--config", "c", "--prompt", "p", "--split", "valid"]), 2);
        assert_eq!(run_cli(["pb", "frobnicate"]), 2);
        assert_eq!(run_cli(["pb", "optimize", "--config", "/nonexistent/c.toml"]), 2);
    }

    #[test]
    fn prompt_file_forms() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p");
        fs::write(&p, "Be brief.\n").unwrap();
        assert_eq!(read_prompt_file(&p).unwrap(), "Be brief.");
        fs::write(&p, r#"{"rendered":"Be brief.","parts":[]}"#).unwrap();
        assert_eq!(read_prompt_file(&p).unwrap(), "Be brief.");
        fs::write(&p, r#"[{"source_id":"a","text":"One.","rephrase_depth":0},{"source_id":"b","text":"Two.","rephrase_depth":1}]"#).unwrap();
        assert_eq!(read_prompt_file(&p).unwrap(), "One. Two.");
        fs::write(&p, "").unwrap();
        assert_eq!(read_prompt_file(&p).unwrap(), "");
    }
}
