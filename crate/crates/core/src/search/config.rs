use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::eval::{GenerationSettings, SplitRatios};
use crate::llm::{BackendConfig, ParaphraserConfig};

use super::SearchError;

pub const DEFAULT_BEAM_SIZE: usize = 10;
pub const DEFAULT_K: usize = 10;
pub const DEFAULT_STEPS: usize = 10;
pub const DEFAULT_SHORTLIST: usize = 60;
pub const DEFAULT_C: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BanditPolicy {
    #[default]
    Ucb,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheConfig {
    #[serde(default = "default_true")]
    pub enabled: bool,
    /// Defaults to `<run dir>/cache`.
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            enabled: true,
            dir: None,
        }
    }
}

fn default_true() -> bool {
    true
}

/// Everything that determines a search run. Loaded from TOML; unknown keys
/// are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub tasks: Vec<PathBuf>,
    /// Where timestamped run directories are created. Not part of the
    /// config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "RunConfig::default_beam_size")]
    pub beam_size: usize,
    #[serde(default = "RunConfig::default_k")]
    pub k: usize,
    #[serde(default = "RunConfig::default_steps")]
    pub steps: usize,
    #[serde(default = "RunConfig::default_c")]
    pub c: f64,
    #[serde(default = "RunConfig::default_shortlist")]
    pub shortlist_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub elitism: bool,
    /// 0 means unlimited.
    #[serde(default)]
    pub max_components: usize,
    /// Test mode: reuse one evaluation sample for every iteration.
    #[serde(default)]
    pub fixed_sample: bool,
    #[serde(default)]
    pub policy: BanditPolicy,
    #[serde(default)]
    pub splits: SplitRatios,
    #[serde(default)]
    pub split_seed: u64,
    /// Initial beam as lists of component ids; empty means the empty prompt.
    #[serde(default)]
    pub seed_prompts: Vec<Vec<String>>,
    pub backend: BackendConfig,
    #[serde(default)]
    pub paraphraser: ParaphraserConfig,
    #[serde(default)]
    pub cache: CacheConfig,
}

impl RunConfig {
    fn default_beam_size() -> usize {
        DEFAULT_BEAM_SIZE
    }
    fn default_k() -> usize {
        DEFAULT_K
    }
    fn default_steps() -> usize {
        DEFAULT_STEPS
    }
    fn default_c() -> f64 {
        DEFAULT_C
    }
    fn default_shortlist() -> usize {
        DEFAULT_SHORTLIST
    }

    /// A config with every optional key at its default.
    pub fn new(corpus: impl Into<PathBuf>, tasks: Vec<PathBuf>, backend: BackendConfig) -> Self {
        RunConfig {
            corpus: corpus.into(),
            tasks,
            output_dir: None,
            beam_size: DEFAULT_BEAM_SIZE,
            k: DEFAULT_K,
            steps: DEFAULT_STEPS,
            c: DEFAULT_C,
            shortlist_size: DEFAULT_SHORTLIST,
            seed: 0,
            elitism: true,
            max_components: 0,
            fixed_sample: false,
            policy: BanditPolicy::Ucb,
            splits: SplitRatios::default(),
            split_seed: 0,
            seed_prompts: Vec::new(),
            backend,
            paraphraser: ParaphraserConfig::default(),
            cache: CacheConfig::default(),
        }
    }

    /// Parses TOML and resolves relative paths against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, SearchError> {
        let mut config: RunConfig =
            toml::from_str(text).map_err(|e| SearchError::Config(e.to_string()))?;
        config.resolve_paths(base_dir);
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SearchError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| SearchError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::from_toml_str(&text, base).map_err(|e| match e {
            SearchError::Config(msg) => SearchError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.corpus);
        self.tasks.iter_mut().for_each(join);
        if let Some(dir) = self.output_dir.as_mut() {
            join(dir);
        }
        if let Some(dir) = self.cache.dir.as_mut() {
            join(dir);
        }
        self.backend.resolve_paths(base);
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |msg: &str| Err(SearchError::Config(msg.to_string()));
        if self.beam_size == 0 {
            return bad("beam_size must be positive");
        }
        if self.k == 0 {
            return bad("k must be positive");
        }
        if self.shortlist_size == 0 {
            return bad("shortlist_size must be positive");
        }
        if !(self.c.is_finite() && self.c >= 0.0) {
            return bad("c must be a finite non-negative number");
        }
        if self.tasks.is_empty() {
            return bad("at least one task file is required");
        }
        self.splits
            .validate()
            .map_err(|e| SearchError::Config(e.to_string()))?;
        self.backend
            .validate()
            .map_err(|e| SearchError::Config(e.to_string()))?;
        Ok(())
    }

    /// SHA-256 over the canonical JSON form, ignoring `output_dir`.
    pub fn hash(&self) -> String {
        let mut hashed = self.clone();
        hashed.output_dir = None;
        let bytes = serde_json::to_vec(&hashed).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn generation(&self) -> GenerationSettings {
        GenerationSettings {
            model: self.backend.model.clone(),
            temperature: self.backend.temperature,
            max_tokens: self.backend.max_tokens,
            parallelism: self.backend.parallelism,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
corpus = "corpus.jsonl"
tasks = ["tasks/a.jsonl"]

[backend]
kind = "hash_mock"
"#;

    #[test]
    fn defaults_and_path_resolution() {
        let cfg = RunConfig::from_toml_str(MINIMAL, Path::new("/base")).unwrap();
        assert_eq!(cfg.beam_size, 10);
        assert_eq!(cfg.k, 10);
        assert_eq!(cfg.steps, 10);
        assert_eq!(cfg.shortlist_size, 60);
        assert_eq!(cfg.c, std::f64::consts::SQRT_2);
        assert!(cfg.elitism);
        assert_eq!(cfg.backend.temperature, 0.0);
        assert_eq!(cfg.corpus, PathBuf::from("/base/corpus.jsonl"));
        assert_eq!(cfg.tasks[0], PathBuf::from("/base/tasks/a.jsonl"));
    }

    #[test]
    fn unknown_keys_are_named() {
        let text = format!("beam_width = 3\n{MINIMAL}");
        let err = RunConfig::from_toml_str(&text, Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("beam_width"), "{err}");
        let policy = format!("policy = \"thompson\"\n{MINIMAL}");
        assert!(RunConfig::from_toml_str(&policy, Path::new(".")).is_err());
    }

    #[test]
    fn validation() {
        let zero_beam = format!("beam_size = 0\n{MINIMAL}");
        assert!(RunConfig::from_toml_str(&zero_beam, Path::new(".")).is_err());
        let negative_c = format!("c = -1.0\n{MINIMAL}");
        assert!(RunConfig::from_toml_str(&negative_c, Path::new(".")).is_err());
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = RunConfig::from_toml_str(MINIMAL, Path::new("/x")).unwrap();
        let mut b = a.clone();
        b.output_dir = Some("/elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
