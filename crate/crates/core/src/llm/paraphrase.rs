use std::sync::LazyLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::http::{classify, RetryPolicy};
use super::LlmError;

/// Produces one deterministic rewrite of a component sentence.
pub trait Paraphraser: Send + Sync {
    fn paraphrase(&self, text: &str) -> Result<String, LlmError>;
}

impl<P: Paraphraser + ?Sized> Paraphraser for std::sync::Arc<P> {
    fn paraphrase(&self, text: &str) -> Result<String, LlmError> {
        (**self).paraphrase(text)
    }
}

const CONTRACTIONS: &[(&str, &str)] = &[
    ("Let's", "Let us"),
    ("let's", "let us"),
    ("You're", "You are"),
    ("you're", "you are"),
    ("You've", "You have"),
    ("you've", "you have"),
    ("You'll", "You will"),
    ("you'll", "you will"),
    ("We're", "We are"),
    ("we're", "we are"),
    ("I'm", "I am"),
    ("I'll", "I will"),
    ("I've", "I have"),
    ("It's", "It is"),
    ("it's", "it is"),
    ("That's", "That is"),
    ("that's", "that is"),
    ("There's", "There is"),
    ("there's", "there is"),
    ("Don't", "Do not"),
    ("don't", "do not"),
    ("Doesn't", "Does not"),
    ("doesn't", "does not"),
    ("Can't", "Cannot"),
    ("can't", "cannot"),
    ("Won't", "Will not"),
    ("won't", "will not"),
    ("Isn't", "Is not"),
    ("isn't", "is not"),
    ("Aren't", "Are not"),
    ("aren't", "are not"),
];

/// Leading-phrase rewrites, tried in order after contraction expansion.
const LEADING: &[(&str, &str)] = &[
    ("You are a ", "Act as a "),
    ("You are an ", "Act as an "),
    ("You are ", "Be "),
    ("Act like ", "Behave like "),
    ("Act as ", "Take on the role of "),
    ("Before you respond, ", "Prior to responding, "),
    ("If you are unsure, ", "When uncertain, "),
    ("Make sure ", "Ensure "),
    ("Do not ", "Never "),
    ("Always ", "Consistently "),
    ("Write ", "Compose "),
    ("Use ", "Employ "),
    ("Think ", "Reason "),
];

static CONTRACTION_RE: LazyLock<Regex> = LazyLock::new(|| {
    let stems: Vec<String> = CONTRACTIONS
        .iter()
        .map(|(from, _)| regex::escape(&from.replace('\'', "\u{1}")).replace('\u{1}', "['’]"))
        .collect();
    Regex::new(&format!(r"\b(?:{})\b", stems.join("|"))).expect("contraction regex")
});

fn expand_contractions(text: &str) -> Option<String> {
    if !CONTRACTION_RE.is_match(text) {
        return None;
    }
    let out = CONTRACTION_RE.replace_all(text, |caps: &regex::Captures<'_>| {
        let found = caps[0].replace('’', "'");
        CONTRACTIONS
            .iter()
            .find(|(from, _)| *from == found)
            .map(|(_, to)| (*to).to_string())
            .unwrap_or(found)
    });
    Some(out.into_owned())
}

/// Offline fallback: applies the first rule that changes the text, or
/// returns the input unchanged.
///
/// Rule order: contraction expansion, then the leading-phrase table.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleParaphraser;

impl RuleParaphraser {
    pub fn rewrite(text: &str) -> String {
        if let Some(expanded) = expand_contractions(text) {
            return expanded;
        }
        for (prefix, replacement) in LEADING {
            if let Some(rest) = text.strip_prefix(prefix) {
                return format!("{replacement}{rest}");
            }
        }
        text.to_string()
    }
}

impl Paraphraser for RuleParaphraser {
    fn paraphrase(&self, text: &str) -> Result<String, LlmError> {
        if text.trim().is_empty() {
            return Err(LlmError::InvalidRequest("cannot paraphrase empty text".into()));
        }
        Ok(Self::rewrite(text))
    }
}

#[derive(Serialize)]
struct ParaphraseRequest<'a> {
    text: &'a str,
    num_return_sequences: u32,
}

#[derive(Deserialize)]
struct ParaphraseResponse {
    paraphrases: Vec<String>,
}

/// Client for a paraphrase service (for instance a seq2seq paraphrase model
/// behind a small HTTP wrapper).
///
/// Wire format: `POST {url}` with `{"text", "num_return_sequences"}`, answered
/// by `{"paraphrases": [...]}` in rank order. The first entry is used.
pub struct HttpParaphraser {
    client: reqwest::blocking::Client,
    url: String,
    num_candidates: u32,
    retry: RetryPolicy,
}

impl HttpParaphraser {
    pub fn new(
        url: String,
        num_candidates: u32,
        retry: RetryPolicy,
        timeout: Duration,
    ) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(HttpParaphraser {
            client,
            url,
            num_candidates: num_candidates.max(1),
            retry,
        })
    }

    fn attempt(&self, text: &str) -> Result<String, LlmError> {
        let response = self
            .client
            .post(&self.url)
            .json(&ParaphraseRequest {
                text,
                num_return_sequences: self.num_candidates,
            })
            .send()
            .map_err(classify)?;
        let status = response.status();
        let body = response.text().map_err(classify)?;
        if !status.is_success() {
            return Err(LlmError::Status {
                status: status.as_u16(),
                body,
            });
        }
        let parsed: ParaphraseResponse =
            serde_json::from_str(&body).map_err(|e| LlmError::Decode(e.to_string()))?;
        parsed
            .paraphrases
            .into_iter()
            .map(|p| p.trim().to_string())
            .find(|p| !p.is_empty())
            .ok_or_else(|| LlmError::Decode("no paraphrase returned".into()))
    }
}

impl Paraphraser for HttpParaphraser {
    fn paraphrase(&self, text: &str) -> Result<String, LlmError> {
        if text.trim().is_empty() {
            return Err(LlmError::InvalidRequest("cannot paraphrase empty text".into()));
        }
        self.retry.run(|| self.attempt(text))
    }
}
