//! UCB statistics over corpus components, used to shortlist `Add` edits.
//!
//! Each component is an arm. Its reward is the score improvement an `Add` of
//! that component produced over its parent prompt, and
//!
//! ```text
//! ucb_i = mean_reward_i + c * sqrt(ln(n) / n_i)
//! ```
//!
//! where `n` counts all selections and `n_i` those of arm `i`. Arms that were
//! never selected score `+inf`, so every arm is tried once before any repeats.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BanditError {
    #[error("unknown arm {0:?}")]
    UnknownArm(String),
    #[error("bandit state is inconsistent: n = {n} but arm counts sum to {sum}")]
    Inconsistent { n: u64, sum: u64 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ArmStats {
    pub pulls: u64,
    pub reward_sum: f64,
}

impl ArmStats {
    pub fn mean(&self) -> Option<f64> {
        (self.pulls > 0).then(|| self.reward_sum / self.pulls as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BanditState {
    n: u64,
    arms: BTreeMap<String, ArmStats>,
}

impl BanditState {
    pub fn new<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        BanditState {
            n: 0,
            arms: ids.into_iter().map(|id| (id.into(), ArmStats::default())).collect(),
        }
    }

    pub fn for_corpus(corpus: &Corpus) -> Self {
        BanditState::new(corpus.ids())
    }

    pub fn total(&self) -> u64 {
        self.n
    }

    pub fn arm(&self, id: &str) -> Option<&ArmStats> {
        self.arms.get(id)
    }

    pub fn arms(&self) -> impl Iterator<Item = (&str, &ArmStats)> {
        self.arms.iter().map(|(id, s)| (id.as_str(), s))
    }

    pub fn ucb_score(&self, id: &str, c: f64) -> Result<f64, BanditError> {
        let arm = self
            .arms
            .get(id)
            .ok_or_else(|| BanditError::UnknownArm(id.to_string()))?;
        Ok(ucb(arm.reward_sum, arm.pulls, self.n, c))
    }

    pub fn record_outcome(&mut self, id: &str, reward: f64) -> Result<(), BanditError> {
        let arm = self
            .arms
            .get_mut(id)
            .ok_or_else(|| BanditError::UnknownArm(id.to_string()))?;
        arm.pulls += 1;
        arm.reward_sum += reward;
        self.n += 1;
        Ok(())
    }

    /// The `m` corpus components with the highest UCB, ties by ascending id.
    pub fn select_shortlist(&self, corpus: &Corpus, m: usize, c: f64) -> Vec<String> {
        let mut scored: Vec<(f64, &str)> = corpus
            .ids()
            .map(|id| {
                let score = self
                    .arms
                    .get(id)
                    .map_or(f64::INFINITY, |a| ucb(a.reward_sum, a.pulls, self.n, c));
                (score, id)
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        scored
            .into_iter()
            .take(m)
            .map(|(_, id)| id.to_string())
            .collect()
    }
}

fn ucb(reward_sum: f64, pulls: u64, total: u64, c: f64) -> f64 {
    if pulls == 0 || total == 0 {
        return f64::INFINITY;
    }
    let n_i = pulls as f64;
    reward_sum / n_i + c * ((total as f64).ln() / n_i).sqrt()
}

pub fn ucb_score(state: &BanditState, id: &str, c: f64) -> Result<f64, BanditError> {
    state.ucb_score(id, c)
}

pub fn select_shortlist(state: &BanditState, corpus: &Corpus, m: usize, c: f64) -> Vec<String> {
    state.select_shortlist(corpus, m, c)
}

pub fn record_outcome(state: &mut BanditState, id: &str, reward: f64) -> Result<(), BanditError> {
    state.record_outcome(id, reward)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArmRecord {
    id: String,
    n_i: u64,
    reward_sum: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateRecord {
    n: u64,
    arms: Vec<ArmRecord>,
}

impl Serialize for BanditState {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        StateRecord {
            n: self.n,
            arms: self
                .arms
                .iter()
                .map(|(id, a)| ArmRecord {
                    id: id.clone(),
                    n_i: a.pulls,
                    reward_sum: a.reward_sum,
                })
                .collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BanditState {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let record = StateRecord::deserialize(deserializer)?;
        let sum: u64 = record.arms.iter().map(|a| a.n_i).sum();
        if sum != record.n {
            return Err(serde::de::Error::custom(BanditError::Inconsistent {
                n: record.n,
                sum,
            }));
        }
        Ok(BanditState {
            n: record.n,
            arms: record
                .arms
                .into_iter()
                .map(|a| {
                    (
                        a.id,
                        ArmStats {
                            pulls: a.n_i,
                            reward_sum: a.reward_sum,
                        },
                    )
                })
                .collect(),
        })
    }
}
