//! Benchmark evaluation: task loading, splits, sampling, answer extraction,
//! metrics, and the Average Score.

mod extract;
mod metrics;
mod task;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::llm::{Backend, ChatRequest, LlmError};
use crate::parallel::par_map;

pub use extract::{canonical_number, extract_answer, EXTRACTION_POLICY};
pub use metrics::{accuracy, bleu, bleu_accuracy, bleu_tokens, macro_f1, MetricError, BLEU_MAX_ORDER};
pub use task::{
    assign_splits, load_task, sample_eval_set, AnswerKind, Choice, DomainTag, EvalSample, Instance,
    Metric, SampleItem, Split, SplitRatios, Task, TaskHeader, TaskSet,
};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("read error: {0}")]
    Read(#[from] std::io::Error),
    #[error("{source_name}:{line}: {message}")]
    Schema {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("unknown split {0:?} (expected train, dev or test)")]
    UnknownSplit(String),
    #[error("split ratios {0:?} must be in [0,1] and sum to 1")]
    BadRatios(SplitRatios),
    #[error("task {task:?} has {count} instances; at least 3 are needed to split")]
    TooFewInstances { task: String, count: usize },
    #[error("task {task:?} has no {split} instances")]
    EmptySplit { task: String, split: Split },
    #[error("sample size k must be positive")]
    InvalidSampleSize,
    #[error("duplicate task id {0:?}")]
    DuplicateTask(String),
    #[error("sample references unknown item {task}/{instance}")]
    UnknownItem { task: String, instance: String },
    #[error("evaluation sample is empty")]
    EmptySample,
    #[error("task {task:?}: {source}")]
    Metric {
        task: String,
        #[source]
        source: MetricError,
    },
    #[error("generation failed for {task}/{instance}: {source}")]
    Backend {
        task: String,
        instance: String,
        #[source]
        source: LlmError,
    },
}

/// Request parameters shared by every generation in a run.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationSettings {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub parallelism: usize,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        GenerationSettings {
            model: "default".into(),
            temperature: 0.0,
            max_tokens: 512,
            parallelism: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceOutcome {
    pub response: String,
    pub extracted: Option<String>,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub per_task: BTreeMap<String, f64>,
    pub average_score: f64,
    /// task id -> instance id -> outcome
    pub per_instance: BTreeMap<String, BTreeMap<String, InstanceOutcome>>,
}

impl ScoreReport {
    pub fn from_task_scores(
        per_task: BTreeMap<String, f64>,
        per_instance: BTreeMap<String, BTreeMap<String, InstanceOutcome>>,
    ) -> Self {
        let average_score = if per_task.is_empty() {
            0.0
        } else {
            per_task.values().sum::<f64>() / per_task.len() as f64
        };
        ScoreReport {
            per_task,
            average_score,
            per_instance,
        }
    }
}

/// The user turn: the task's simple prompt, the instance input, and the
/// options when choices carry text.
pub fn build_user_message(task: &Task, instance: &Instance) -> String {
    let mut msg = String::new();
    if !task.simple_task_prompt.trim().is_empty() {
        msg.push_str(task.simple_task_prompt.trim_end());
        msg.push_str("\n\n");
    }
    msg.push_str(&instance.input);
    let choices = instance.choices.as_deref().unwrap_or_default();
    if choices.iter().any(|c| c.text.is_some()) {
        msg.push('\n');
        for c in choices {
            msg.push_str(&format!("\n({}) {}", c.label, c.text.as_deref().unwrap_or("")));
        }
    }
    msg
}

fn labels_equal(a: &str, b: &str) -> bool {
    a.to_lowercase() == b.to_lowercase()
}

/// The gold answer in the form extraction produces it.
fn canonical_gold(task: &Task, instance: &Instance) -> Option<String> {
    let gold = instance.gold.as_deref()?;
    match task.answer_kind {
        AnswerKind::MultipleChoice | AnswerKind::Classification => instance
            .labels()
            .find(|l| labels_equal(l, gold))
            .map(str::to_string),
        AnswerKind::Numeric => canonical_number(gold),
        AnswerKind::OpenEnded => Some(gold.to_string()),
    }
}

/// Scores one task's responses with the task's metric.
pub fn score_task(
    task: &Task,
    instances: &[&Instance],
    responses: &[String],
) -> Result<(f64, BTreeMap<String, InstanceOutcome>), EvalError> {
    let metric_err = |source| EvalError::Metric {
        task: task.id.clone(),
        source,
    };
    let extracted: Vec<Option<String>> = instances
        .iter()
        .zip(responses)
        .map(|(inst, resp)| extract_answer(resp, task, inst))
        .collect();

    let (score, correct): (f64, Vec<bool>) = match task.metric {
        Metric::BleuAccuracy => {
            let hits = instances
                .iter()
                .zip(responses)
                .map(|(inst, resp)| {
                    bleu_accuracy(
                        resp,
                        inst.correct_refs.as_deref().unwrap_or_default(),
                        inst.incorrect_refs.as_deref().unwrap_or_default(),
                    )
                    .map(|v| v == 1)
                })
                .collect::<Result<Vec<bool>, _>>()
                .map_err(metric_err)?;
            if hits.is_empty() {
                return Err(metric_err(MetricError::Empty));
            }
            let score = hits.iter().filter(|h| **h).count() as f64 / hits.len() as f64;
            (score, hits)
        }
        Metric::Accuracy | Metric::MacroF1 => {
            let golds: Vec<String> = instances
                .iter()
                .map(|inst| canonical_gold(task, inst).unwrap_or_default())
                .collect();
            let correct = extracted
                .iter()
                .zip(&golds)
                .map(|(p, g)| p.as_deref() == Some(g.as_str()))
                .collect();
            let score = if task.metric == Metric::Accuracy {
                accuracy(&extracted, &golds)
            } else {
                macro_f1(&extracted, &golds, &task.label_set())
            }
            .map_err(metric_err)?;
            (score, correct)
        }
    };

    let outcomes = instances
        .iter()
        .zip(responses)
        .zip(extracted)
        .zip(correct)
        .map(|(((inst, resp), extracted), correct)| {
            (
                inst.id.clone(),
                InstanceOutcome {
                    response: resp.clone(),
                    extracted,
                    correct,
                },
            )
        })
        .collect();
    Ok((score, outcomes))
}

/// Evaluates several system prompts on the same sample. Every (prompt,
/// item) generation is independent and runs on up to
/// `settings.parallelism` threads; reports come back in prompt order.
pub fn evaluate_prompts(
    system_prompts: &[String],
    sample: &EvalSample,
    tasks: &TaskSet,
    backend: &dyn Backend,
    settings: &GenerationSettings,
) -> Result<Vec<ScoreReport>, EvalError> {
    if sample.is_empty() {
        return Err(EvalError::EmptySample);
    }
    // Resolve the sample once, grouped by task in sample order.
    let mut groups: Vec<(&Task, Vec<&Instance>)> = Vec::new();
    let mut group_of: HashMap<&str, usize> = HashMap::new();
    for item in &sample.items {
        let unknown = || EvalError::UnknownItem {
            task: item.task_id.clone(),
            instance: item.instance_id.clone(),
        };
        let task = tasks.get(&item.task_id).ok_or_else(unknown)?;
        let inst = task.instance(&item.instance_id).ok_or_else(unknown)?;
        let g = *group_of.entry(task.id.as_str()).or_insert_with(|| {
            groups.push((task, Vec::new()));
            groups.len() - 1
        });
        groups[g].1.push(inst);
    }
    let user_messages: Vec<Vec<String>> = groups
        .iter()
        .map(|(task, insts)| insts.iter().map(|i| build_user_message(task, i)).collect())
        .collect();

    let mut jobs = Vec::new();
    for (p, system) in system_prompts.iter().enumerate() {
        for (g, (task, insts)) in groups.iter().enumerate() {
            for (i, inst) in insts.iter().enumerate() {
                jobs.push((p, system.as_str(), g, i, task.id.as_str(), inst.id.as_str()));
            }
        }
    }
    let responses = par_map(&jobs, settings.parallelism, |&(_, system, g, i, task_id, inst_id)| {
        let request = ChatRequest {
            model: settings.model.clone(),
            system: system.to_string(),
            user: user_messages[g][i].clone(),
            temperature: settings.temperature,
            max_tokens: settings.max_tokens,
        };
        backend.generate(&request).map_err(|source| EvalError::Backend {
            task: task_id.to_string(),
            instance: inst_id.to_string(),
            source,
        })
    })?;

    let mut responses = responses.into_iter();
    let mut reports = Vec::with_capacity(system_prompts.len());
    for _ in system_prompts {
        let mut per_task = BTreeMap::new();
        let mut per_instance = BTreeMap::new();
        for (task, insts) in &groups {
            let resp: Vec<String> = responses.by_ref().take(insts.len()).collect();
            let (score, outcomes) = score_task(task, insts, &resp)?;
            per_task.insert(task.id.clone(), score);
            per_instance.insert(task.id.clone(), outcomes);
        }
        reports.push(ScoreReport::from_task_scores(per_task, per_instance));
    }
    Ok(reports)
}

pub fn evaluate_prompt(
    system_prompt: &str,
    sample: &EvalSample,
    tasks: &TaskSet,
    backend: &dyn Backend,
    settings: &GenerationSettings,
) -> Result<ScoreReport, EvalError> {
    let mut reports = evaluate_prompts(&[system_prompt.to_string()], sample, tasks, backend, settings)?;
    Ok(reports.remove(0))
}
