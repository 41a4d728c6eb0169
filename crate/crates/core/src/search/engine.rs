use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bandit::BanditState;
use crate::corpus::Corpus;
use crate::eval::{evaluate_prompts, sample_eval_set, EvalSample, Split, TaskSet, EXTRACTION_POLICY};
use crate::llm::{Backend, CachedBackend, Paraphraser};
use crate::parallel::par_map;
use crate::prompt::{apply_edit, enumerate_edit_ops, EditOp, Prompt, PromptError};
use crate::seed::derive_seed;

use super::transcript::{
    CandidateRecord, DevRecord, HeaderRecord, IterationRecord, Origin, Record, ResultRecord, Transcript,
    SCHEMA_VERSION,
};
use super::{RunConfig, SearchError};

pub const TRANSCRIPT_FILE: &str = "transcript.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const BEST_PROMPT_FILE: &str = "best_prompt.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamEntry {
    pub key: String,
    pub prompt: Prompt,
    /// Score on the sample of the iteration that promoted it; unset for the
    /// initial beam.
    pub score: Option<f64>,
    pub origin: Origin,
}

/// Prompts carried into iteration `iteration`, sorted by score descending
/// with ties broken by ascending canonical key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamState {
    pub iteration: usize,
    pub entries: Vec<BeamEntry>,
}

/// The empty prompt, or the configured seed prompts (duplicates dropped).
pub fn init_beam(config: &RunConfig, corpus: &Corpus) -> Result<BeamState, SearchError> {
    let prompts = if config.seed_prompts.is_empty() {
        vec![Prompt::empty()]
    } else {
        config
            .seed_prompts
            .iter()
            .map(|ids| Prompt::from_ids(corpus, ids))
            .collect::<Result<Vec<_>, _>>()?
    };
    let mut seen = HashSet::new();
    let entries = prompts
        .into_iter()
        .filter(|p| seen.insert(p.key()))
        .map(|prompt| BeamEntry {
            key: prompt.key(),
            prompt,
            score: None,
            origin: Origin::initial(),
        })
        .collect();
    Ok(BeamState { iteration: 0, entries })
}

/// Everything a step reads but does not change.
pub struct StepContext<'a> {
    pub config: &'a RunConfig,
    pub corpus: &'a Corpus,
    pub tasks: &'a TaskSet,
    pub backend: &'a dyn Backend,
    pub paraphraser: &'a dyn Paraphraser,
}

pub struct StepOutput {
    pub beam: BeamState,
    pub candidates: Vec<CandidateRecord>,
    pub record: IterationRecord,
}

struct PoolEntry {
    key: String,
    prompt: Prompt,
    origin: Origin,
    parent: Option<usize>,
}

fn sample_seed(config: &RunConfig, iteration: usize) -> u64 {
    let index = if config.fixed_sample { 0 } else { iteration as u64 };
    derive_seed(config.seed, "sample", index)
}

/// One iteration. The bandit is only updated once every evaluation has
/// succeeded, so a failed step leaves it untouched.
pub fn beam_step(ctx: &StepContext<'_>, beam: &BeamState, bandit: &mut BanditState) -> Result<StepOutput, SearchError> {
    let config = ctx.config;
    let iteration = beam.iteration;
    if beam.entries.is_empty() {
        return Err(SearchError::EmptyBeam);
    }
    let seed = sample_seed(config, iteration);
    let sample = sample_eval_set(ctx.tasks.tasks(), config.k, seed, Split::Train)?;
    let shortlist = bandit.select_shortlist(ctx.corpus, config.shortlist_size, config.c);

    let mut jobs: Vec<(usize, EditOp)> = Vec::new();
    for (p, entry) in beam.entries.iter().enumerate() {
        let len = entry.prompt.len();
        let adds_allowed = config.max_components == 0 || len < config.max_components;
        jobs.extend(
            enumerate_edit_ops(len, &shortlist)
                .into_iter()
                .filter(|op| adds_allowed || !matches!(op, EditOp::Add { .. }))
                .map(|op| (p, op)),
        );
    }
    let children = par_map(&jobs, config.backend.parallelism, |(p, op)| {
        Ok::<_, std::convert::Infallible>(apply_edit(&beam.entries[*p].prompt, op, ctx.corpus, ctx.paraphraser))
    })
    .unwrap_or_else(|never| match never {});

    let mut pool: Vec<PoolEntry> = Vec::new();
    let mut seen = HashSet::new();
    if config.elitism {
        for entry in &beam.entries {
            if seen.insert(entry.key.clone()) {
                pool.push(PoolEntry {
                    key: entry.key.clone(),
                    prompt: entry.prompt.clone(),
                    origin: Origin::elite(),
                    parent: None,
                });
            }
        }
    }
    let mut skipped_rephrases = 0;
    for ((p, op), child) in jobs.into_iter().zip(children) {
        let parent = &beam.entries[p];
        let child = match child {
            Ok(child) => child,
            Err(PromptError::Paraphrase { index, source }) => {
                log::warn!("iteration {iteration}: skipping Rephrase({index}) of {}: {source}", parent.key);
                skipped_rephrases += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        if let EditOp::Rephrase { index } = op {
            if child.parts[index].text == parent.prompt.parts[index].text {
                skipped_rephrases += 1;
                continue;
            }
        }
        let key = child.key();
        if seen.insert(key.clone()) {
            pool.push(PoolEntry {
                key,
                prompt: child,
                origin: Origin::edit(parent.key.clone(), op),
                parent: Some(p),
            });
        }
    }
    if pool.is_empty() {
        return Err(SearchError::EmptyPool(iteration));
    }

    // Parents and pool share one evaluation; prompts that render the same
    // are only scored once.
    let mut texts: Vec<String> = Vec::new();
    let mut text_index: HashMap<String, usize> = HashMap::new();
    let mut slot = |text: String| -> usize {
        *text_index.entry(text.clone()).or_insert_with(|| {
            texts.push(text);
            texts.len() - 1
        })
    };
    let parent_slots: Vec<usize> = beam.entries.iter().map(|e| slot(e.prompt.render())).collect();
    let pool_slots: Vec<usize> = pool.iter().map(|e| slot(e.prompt.render())).collect();
    let reports = evaluate_prompts(&texts, &sample, ctx.tasks, ctx.backend, &config.generation())?;
    let score_of = |s: usize| reports[s].average_score;

    let mut candidates = Vec::with_capacity(pool.len());
    let mut rewards = Vec::new();
    for (entry, &s) in pool.iter().zip(&pool_slots) {
        let score = score_of(s);
        let parent_score = entry.parent.map(|p| score_of(parent_slots[p]));
        let reward = match (&entry.origin.edit, parent_score) {
            (Some(EditOp::Add { component_id }), Some(ps)) => {
                rewards.push((component_id.clone(), score - ps));
                Some(score - ps)
            }
            _ => None,
        };
        candidates.push(CandidateRecord {
            iteration,
            key: entry.key.clone(),
            origin: entry.origin.clone(),
            prompt: entry.prompt.clone(),
            score,
            parent_score,
            reward,
        });
    }
    for (id, reward) in &rewards {
        bandit.record_outcome(id, *reward)?;
    }

    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| {
        candidates[b]
            .score
            .total_cmp(&candidates[a].score)
            .then_with(|| candidates[a].key.cmp(&candidates[b].key))
    });
    order.truncate(config.beam_size);
    let entries: Vec<BeamEntry> = order
        .into_iter()
        .map(|i| BeamEntry {
            key: candidates[i].key.clone(),
            prompt: candidates[i].prompt.clone(),
            score: Some(candidates[i].score),
            origin: candidates[i].origin.clone(),
        })
        .collect();
    let record = IterationRecord {
        iteration,
        sample_seed: seed,
        sample: sample.items,
        shortlist,
        candidates: candidates.len(),
        skipped_rephrases,
        best_score: entries[0].score.unwrap_or_default(),
        beam: entries.clone(),
        bandit_n: bandit.total(),
    };
    Ok(StepOutput {
        beam: BeamState {
            iteration: iteration + 1,
            entries,
        },
        candidates,
        record,
    })
}

/// Index of the dev-best prompt: highest score, then fewest components, then
/// smallest canonical key.
pub fn select_best(scored: &[(Prompt, f64)]) -> Option<usize> {
    (0..scored.len()).min_by(|&a, &b| {
        let (pa, sa) = &scored[a];
        let (pb, sb) = &scored[b];
        sb.total_cmp(sa)
            .then_with(|| pa.len().cmp(&pb.len()))
            .then_with(|| pa.key().cmp(&pb.key()))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    /// Index of the next per-iteration sample draw.
    pub next_sample: u64,
}

/// Written atomically after initialization and after every completed step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub config_hash: String,
    pub iteration: usize,
    pub beam: BeamState,
    pub bandit: BanditState,
    pub rng: RngState,
    pub cache_dir: Option<PathBuf>,
    pub transcript: String,
    pub transcript_bytes: u64,
    /// Every distinct prompt that has been in a beam, in first-seen order.
    pub promoted: Vec<Prompt>,
}

impl Checkpoint {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SearchError> {
        let path = path.as_ref();
        let bad = |message: String| SearchError::Checkpoint {
            path: path.to_path_buf(),
            message,
        };
        let bytes = fs::read(path).map_err(SearchError::io(path))?;
        let cp: Checkpoint = serde_json::from_slice(&bytes).map_err(|e| bad(e.to_string()))?;
        if cp.schema_version != SCHEMA_VERSION {
            return Err(bad(format!("unsupported schema version {}", cp.schema_version)));
        }
        if cp.iteration != cp.beam.iteration {
            return Err(bad("iteration does not match the beam".into()));
        }
        Ok(cp)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SearchError> {
        let path = path.as_ref();
        let tmp = path.with_extension("json.tmp");
        let mut bytes = serde_json::to_vec_pretty(self).expect("checkpoint serializes");
        bytes.push(b'\n');
        fs::write(&tmp, bytes).map_err(SearchError::io(&tmp))?;
        fs::rename(&tmp, path).map_err(SearchError::io(path))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestPrompt {
    pub rendered: String,
    pub parts: Prompt,
    pub key: String,
    pub dev_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub best_prompt: Prompt,
    pub dev_score: f64,
    pub transcript: PathBuf,
    pub run_dir: PathBuf,
}

/// Generation backend, paraphraser, and where responses are cached.
#[derive(Clone)]
pub struct Services {
    pub backend: Arc<dyn Backend>,
    pub paraphraser: Arc<dyn Paraphraser>,
    pub cache_dir: Option<PathBuf>,
}

impl Services {
    pub fn new(backend: Arc<dyn Backend>, paraphraser: Arc<dyn Paraphraser>) -> Self {
        Services {
            backend,
            paraphraser,
            cache_dir: None,
        }
    }

    /// Builds from config, putting the response cache in front of the
    /// backend when enabled.
    pub fn from_config(config: &RunConfig, run_dir: &Path) -> Result<Self, SearchError> {
        let raw = config.backend.build()?;
        let paraphraser = config.paraphraser.build()?;
        if !config.cache.enabled {
            return Ok(Services::new(raw, paraphraser));
        }
        let dir = config.cache.dir.clone().unwrap_or_else(|| run_dir.join("cache"));
        let cached = CachedBackend::new(raw, &dir)?;
        Ok(Services {
            backend: Arc::new(cached),
            paraphraser,
            cache_dir: Some(dir),
        })
    }
}

/// A run in progress. Every completed step is appended to the transcript
/// and checkpointed before `step` returns.
pub struct Engine {
    config: RunConfig,
    config_hash: String,
    run_dir: PathBuf,
    corpus: Corpus,
    tasks: TaskSet,
    services: Services,
    beam: BeamState,
    bandit: BanditState,
    promoted: Vec<Prompt>,
    promoted_keys: HashSet<String>,
    transcript: Transcript,
}

fn load_inputs(config: &RunConfig) -> Result<(Corpus, TaskSet), SearchError> {
    let corpus = Corpus::load(&config.corpus)?;
    let tasks = TaskSet::load(&config.tasks, config.splits, config.split_seed)?;
    Ok((corpus, tasks))
}

impl Engine {
    pub fn start(config: RunConfig, run_dir: impl Into<PathBuf>, services: Services) -> Result<Self, SearchError> {
        config.validate()?;
        let run_dir = run_dir.into();
        fs::create_dir_all(&run_dir).map_err(SearchError::io(&run_dir))?;
        let (corpus, tasks) = load_inputs(&config)?;
        let beam = init_beam(&config, &corpus)?;
        let bandit = BanditState::for_corpus(&corpus);
        let config_hash = config.hash();
        let mut transcript = Transcript::create(run_dir.join(TRANSCRIPT_FILE))?;
        let mut embedded = config.clone();
        embedded.output_dir = None;
        transcript.append(&Record::Header(Box::new(HeaderRecord {
            schema_version: SCHEMA_VERSION,
            config_hash: config_hash.clone(),
            extraction_policy: EXTRACTION_POLICY.to_string(),
            config: embedded,
            corpus: corpus.components().to_vec(),
        })))?;
        let mut engine = Engine {
            config,
            config_hash,
            run_dir,
            corpus,
            tasks,
            services,
            beam,
            bandit,
            promoted: Vec::new(),
            promoted_keys: HashSet::new(),
            transcript,
        };
        engine.note_promoted();
        engine.checkpoint()?;
        Ok(engine)
    }

    /// Continues from a checkpoint. The transcript is cut back to the length
    /// recorded in the checkpoint, so anything written by an interrupted
    /// step is discarded.
    pub fn resume(config: RunConfig, checkpoint_path: impl AsRef<Path>, services: Services) -> Result<Self, SearchError> {
        config.validate()?;
        let checkpoint_path = checkpoint_path.as_ref();
        let cp = Checkpoint::load(checkpoint_path)?;
        let found = config.hash();
        if cp.config_hash != found {
            return Err(SearchError::ConfigMismatch {
                expected: cp.config_hash,
                found,
            });
        }
        let run_dir = checkpoint_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let (corpus, tasks) = load_inputs(&config)?;
        for id in cp.bandit.arms().map(|(id, _)| id) {
            if !corpus.contains(id) {
                return Err(SearchError::Checkpoint {
                    path: checkpoint_path.to_path_buf(),
                    message: format!("bandit arm {id:?} is not in the corpus"),
                });
            }
        }
        let transcript = Transcript::reopen_at(run_dir.join(&cp.transcript), cp.transcript_bytes)?;
        let promoted_keys = cp.promoted.iter().map(Prompt::key).collect();
        Ok(Engine {
            config_hash: cp.config_hash,
            run_dir,
            corpus,
            tasks,
            services,
            beam: cp.beam,
            bandit: cp.bandit,
            promoted: cp.promoted,
            promoted_keys,
            transcript,
            config,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn beam(&self) -> &BeamState {
        &self.beam
    }

    pub fn bandit(&self) -> &BanditState {
        &self.bandit
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }

    pub fn is_done(&self) -> bool {
        self.beam.iteration >= self.config.steps
    }

    fn note_promoted(&mut self) {
        for entry in &self.beam.entries {
            if self.promoted_keys.insert(entry.key.clone()) {
                self.promoted.push(entry.prompt.clone());
            }
        }
    }

    fn checkpoint(&mut self) -> Result<(), SearchError> {
        let transcript_bytes = self.transcript.sync()?;
        Checkpoint {
            schema_version: SCHEMA_VERSION,
            config_hash: self.config_hash.clone(),
            iteration: self.beam.iteration,
            beam: self.beam.clone(),
            bandit: self.bandit.clone(),
            rng: RngState {
                seed: self.config.seed,
                next_sample: if self.config.fixed_sample { 0 } else { self.beam.iteration as u64 },
            },
            cache_dir: self.services.cache_dir.clone(),
            transcript: TRANSCRIPT_FILE.to_string(),
            transcript_bytes,
            promoted: self.promoted.clone(),
        }
        .save(self.run_dir.join(CHECKPOINT_FILE))
    }

    pub fn step(&mut self) -> Result<IterationRecord, SearchError> {
        let ctx = StepContext {
            config: &self.config,
            corpus: &self.corpus,
            tasks: &self.tasks,
            backend: self.services.backend.as_ref(),
            paraphraser: self.services.paraphraser.as_ref(),
        };
        let mut bandit = self.bandit.clone();
        let out = beam_step(&ctx, &self.beam, &mut bandit)?;
        for c in out.candidates {
            self.transcript.append(&Record::Candidate(c))?;
        }
        self.transcript.append(&Record::Iteration(out.record.clone()))?;
        self.bandit = bandit;
        self.beam = out.beam;
        self.note_promoted();
        self.checkpoint()?;
        Ok(out.record)
    }

    /// Scores every promoted prompt on the full dev split and writes the
    /// winner. The checkpoint keeps pointing before the dev records, so a
    /// resumed run redoes this phase instead of duplicating it.
    pub fn finish(mut self) -> Result<RunResult, SearchError> {
        let dev = EvalSample::full_split(self.tasks.tasks(), Split::Dev)?;
        let texts: Vec<String> = self.promoted.iter().map(Prompt::render).collect();
        let mut unique: Vec<String> = Vec::new();
        let mut index: BTreeMap<&str, usize> = BTreeMap::new();
        for t in &texts {
            if !index.contains_key(t.as_str()) {
                index.insert(t, unique.len());
                unique.push(t.clone());
            }
        }
        let reports = evaluate_prompts(
            &unique,
            &dev,
            &self.tasks,
            self.services.backend.as_ref(),
            &self.config.generation(),
        )?;
        let mut scored = Vec::with_capacity(self.promoted.len());
        for (prompt, text) in self.promoted.iter().zip(&texts) {
            let report = &reports[index[text.as_str()]];
            self.transcript.append(&Record::Dev(DevRecord {
                key: prompt.key(),
                prompt: prompt.clone(),
                score: report.average_score,
                per_task: report.per_task.clone(),
            }))?;
            scored.push((prompt.clone(), report.average_score));
        }
        let best = select_best(&scored).ok_or(SearchError::EmptyBeam)?;
        let (best_prompt, dev_score) = scored.swap_remove(best);
        let best_file = BestPrompt {
            rendered: best_prompt.render(),
            parts: best_prompt.clone(),
            key: best_prompt.key(),
            dev_score,
        };
        self.transcript.append(&Record::Result(ResultRecord {
            best_key: best_file.key.clone(),
            best_prompt: best_prompt.clone(),
            rendered: best_file.rendered.clone(),
            dev_score,
        }))?;
        self.transcript.sync()?;
        let path = self.run_dir.join(BEST_PROMPT_FILE);
        let mut bytes = serde_json::to_vec_pretty(&best_file).expect("best prompt serializes");
        bytes.push(b'\n');
        fs::write(&path, bytes).map_err(SearchError::io(&path))?;
        Ok(RunResult {
            best_prompt,
            dev_score,
            transcript: self.transcript.path().to_path_buf(),
            run_dir: self.run_dir,
        })
    }

    pub fn run_to_end(mut self) -> Result<RunResult, SearchError> {
        while !self.is_done() {
            self.step()?;
        }
        self.finish()
    }
}

pub fn run_with(config: RunConfig, run_dir: impl Into<PathBuf>, services: Services) -> Result<RunResult, SearchError> {
    Engine::start(config, run_dir, services)?.run_to_end()
}

pub fn resume_with(
    config: RunConfig,
    checkpoint_path: impl AsRef<Path>,
    services: Services,
) -> Result<RunResult, SearchError> {
    Engine::resume(config, checkpoint_path, services)?.run_to_end()
}

/// Runs with the backend and paraphraser the config describes.
pub fn run(config: RunConfig, run_dir: impl Into<PathBuf>) -> Result<RunResult, SearchError> {
    let run_dir = run_dir.into();
    let services = Services::from_config(&config, &run_dir)?;
    run_with(config, run_dir, services)
}

pub fn resume(config: RunConfig, checkpoint_path: impl AsRef<Path>) -> Result<RunResult, SearchError> {
    let checkpoint_path = checkpoint_path.as_ref();
    let run_dir = checkpoint_path.parent().unwrap_or(Path::new("."));
    let services = Services::from_config(&config, run_dir)?;
    resume_with(config, checkpoint_path, services)
}
