//! Deterministic in-process backends for tests and offline runs.

use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, ChatRequest, LlmError};

/// One scripted reply. Every condition that is set must hold for the rule to
/// fire; the first matching rule in file order wins.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_contains: Option<String>,
    pub response: String,
}

impl ScriptRule {
    pub fn exact(system: &str, user: &str, response: &str) -> Self {
        ScriptRule {
            system: Some(system.into()),
            user: Some(user.into()),
            response: response.into(),
            ..Default::default()
        }
    }

    pub fn matches(&self, request: &ChatRequest) -> bool {
        self.system.as_ref().is_none_or(|s| *s == request.system)
            && self.user.as_ref().is_none_or(|u| *u == request.user)
            && self
                .system_contains
                .as_ref()
                .is_none_or(|s| request.system.contains(s.as_str()))
            && self
                .user_contains
                .as_ref()
                .is_none_or(|u| request.user.contains(u.as_str()))
    }
}

/// Lookup-table backend.
#[derive(Debug, Clone, Default)]
pub struct ScriptedMock {
    rules: Vec<ScriptRule>,
    default_response: Option<String>,
}

impl ScriptedMock {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        ScriptedMock {
            rules,
            default_response: None,
        }
    }

    pub fn with_default(mut self, response: impl Into<String>) -> Self {
        self.default_response = Some(response.into());
        self
    }

    /// Reads rules from a JSONL file, one [`ScriptRule`] per line.
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let file = std::fs::File::open(path)?;
        let mut rules = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rule: ScriptRule = serde_json::from_str(&line).map_err(|e| {
                LlmError::Config(format!("{}:{}: {e}", path.display(), i + 1))
            })?;
            rules.push(rule);
        }
        Ok(ScriptedMock::new(rules))
    }
}

impl Backend for ScriptedMock {
    fn generate(&self, request: &ChatRequest) -> Result<String, LlmError> {
        request.validate()?;
        self.rules
            .iter()
            .find(|r| r.matches(request))
            .map(|r| r.response.clone())
            .or_else(|| self.default_response.clone())
            .ok_or_else(|| LlmError::NoScriptMatch {
                system: request.system.clone(),
                user: request.user.clone(),
            })
    }
}

/// Answers "The answer is (X)." with X chosen by a stable hash of the
/// system and user messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashMock {
    labels: Vec<String>,
}

impl HashMock {
    pub fn new(labels: Vec<String>) -> Self {
        assert!(!labels.is_empty(), "hash mock needs at least one label");
        HashMock { labels }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn pick(&self, system: &str, user: &str) -> &str {
        let mut hasher = Sha256::new();
        hasher.update(system.as_bytes());
        hasher.update([0u8]);
        hasher.update(user.as_bytes());
        let digest = hasher.finalize();
        let mut head = [0u8; 8];
        head.copy_from_slice(&digest[..8]);
        let idx = u64::from_be_bytes(head) % self.labels.len() as u64;
        &self.labels[idx as usize]
    }
}

impl Default for HashMock {
    fn default() -> Self {
        HashMock::new(["A", "B", "C", "D"].map(String::from).to_vec())
    }
}

impl Backend for HashMock {
    fn generate(&self, request: &ChatRequest) -> Result<String, LlmError> {
        request.validate()?;
        Ok(format!(
            "The answer is ({}).",
            self.pick(&request.system, &request.user)
        ))
    }
}

/// Adapts a closure into a backend.
pub struct FnBackend<F>(pub F);

impl<F> Backend for FnBackend<F>
where
    F: Fn(&ChatRequest) -> Result<String, LlmError> + Send + Sync,
{
    fn generate(&self, request: &ChatRequest) -> Result<String, LlmError> {
        request.validate()?;
        (self.0)(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(system: &str, user: &str) -> ChatRequest {
        ChatRequest {
            model: "mock".into(),
            system: system.into(),
            user: user.into(),
            temperature: 0.0,
            max_tokens: 8,
        }
    }

    #[test]
    fn scripted_lookup() {
        let mock = ScriptedMock::new(vec![ScriptRule::exact("s", "u", "The answer is (B).")]);
        assert_eq!(mock.generate(&req("s", "u")).unwrap(), "The answer is (B).");
        assert!(matches!(
            mock.generate(&req("s", "other")),
            Err(LlmError::NoScriptMatch { .. })
        ));
    }

    #[test]
    fn scripted_contains_and_default() {
        let rule = ScriptRule {
            system_contains: Some("mathematician".into()),
            response: "A".into(),
            ..Default::default()
        };
        let mock = ScriptedMock::new(vec![rule]).with_default("C");
        assert_eq!(mock.generate(&req("You are a mathematician.", "q")).unwrap(), "A");
        assert_eq!(mock.generate(&req("", "q")).unwrap(), "C");
    }

    #[test]
    fn hash_mock_is_stable() {
        let mock = HashMock::default();
        let a = mock.generate(&req("sys", "question 1")).unwrap();
        let b = mock.generate(&req("sys", "question 1")).unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with("The answer is ("));
        // Spread across labels over many inputs.
        let distinct: std::collections::BTreeSet<_> = (0..64)
            .map(|i| mock.pick("", &format!("q{i}")).to_string())
            .collect();
        assert_eq!(distinct.len(), 4);
    }
}
