use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, ChatRequest, LlmError};

/// Everything that determines a response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheKey {
    pub model: String,
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl CacheKey {
    pub fn of(request: &ChatRequest) -> Self {
        CacheKey {
            model: request.model.clone(),
            system: request.system.clone(),
            user: request.user.clone(),
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        }
    }

    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("cache key serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Serialize, Deserialize)]
struct Entry {
    key: CacheKey,
    response: String,
}

/// Content-addressed response cache in front of another backend.
///
/// Entries live at `<dir>/<first two hex chars>/<sha256>.json`. Writes go
/// through a temporary file and a rename, so concurrent writers of the same
/// key never expose a torn entry.
pub struct CachedBackend<B> {
    inner: B,
    dir: PathBuf,
    counter: AtomicU64,
}

impl<B: Backend> CachedBackend<B> {
    pub fn new(inner: B, dir: impl Into<PathBuf>) -> Result<Self, LlmError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(CachedBackend {
            inner,
            dir,
            counter: AtomicU64::new(0),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, digest: &str) -> PathBuf {
        self.dir.join(&digest[..2]).join(format!("{digest}.json"))
    }

    fn lookup(&self, path: &Path, key: &CacheKey) -> Option<String> {
        let bytes = fs::read(path).ok()?;
        let entry: Entry = serde_json::from_slice(&bytes).ok()?;
        (entry.key == *key).then_some(entry.response)
    }

    fn store(&self, path: &Path, key: CacheKey, response: &str) -> Result<(), LlmError> {
        let parent = path.parent().expect("entry path has a parent");
        fs::create_dir_all(parent)?;
        let tmp = parent.join(format!(
            ".tmp-{}-{}",
            std::process::id(),
            self.counter.fetch_add(1, Ordering::Relaxed)
        ));
        let entry = Entry {
            key,
            response: response.to_string(),
        };
        let mut file = fs::File::create(&tmp)?;
        file.write_all(&serde_json::to_vec(&entry).expect("entry serializes"))?;
        file.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    }
}

impl<B: Backend> Backend for CachedBackend<B> {
    fn generate(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let key = CacheKey::of(request);
        let path = self.path_for(&key.digest());
        if let Some(hit) = self.lookup(&path, &key) {
            return Ok(hit);
        }
        let response = self.inner.generate(request)?;
        self.store(&path, key, &response)?;
        Ok(response)
    }
}
