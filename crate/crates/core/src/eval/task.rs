//! Benchmark task files, splits, and per-iteration question sampling.
//!
//! A task file is JSONL: the first non-blank line is the task header, every
//! following line is one instance.
//!
//! ```text
//! {"id":"arc","name":"ARC","domain_tags":["reasoning"],"metric":"accuracy","answer_kind":"multiple_choice","simple_task_prompt":"Answer the multiple choice question."}
//! {"id":"q1","input":"Which ...?","choices":[{"label":"A","text":"..."},{"label":"B","text":"..."}],"gold":"A"}
//! ```

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::extract::canonical_number;
use super::EvalError;
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    Reasoning,
    Math,
    SocialUnderstanding,
    Commonsense,
    Faithfulness,
    Knowledge,
    LanguageUnderstanding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    MacroF1,
    BleuAccuracy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKind {
    MultipleChoice,
    Classification,
    Numeric,
    OpenEnded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(EvalError::UnknownSplit(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Choice {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Instance {
    pub id: String,
    pub input: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<Choice>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct_refs: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub incorrect_refs: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl Instance {
    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.choices.iter().flatten().map(|c| c.label.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskHeader {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub domain_tags: BTreeSet<DomainTag>,
    pub metric: Metric,
    pub answer_kind: AnswerKind,
    pub simple_task_prompt: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    pub id: String,
    pub name: String,
    pub domain_tags: BTreeSet<DomainTag>,
    pub metric: Metric,
    pub answer_kind: AnswerKind,
    pub simple_task_prompt: String,
    pub instances: Vec<Instance>,
}

impl Task {
    pub fn new(header: TaskHeader, instances: Vec<Instance>) -> Result<Self, EvalError> {
        let task = Task {
            id: header.id,
            name: header.name,
            domain_tags: header.domain_tags,
            metric: header.metric,
            answer_kind: header.answer_kind,
            simple_task_prompt: header.simple_task_prompt,
            instances,
        };
        task.validate_header()
            .map_err(|message| task.schema_error(1, message))?;
        let mut ids = HashSet::new();
        for (i, inst) in task.instances.iter().enumerate() {
            let line = i + 2;
            if !ids.insert(inst.id.as_str()) {
                return Err(task.schema_error(line, format!("duplicate instance id {:?}", inst.id)));
            }
            task.validate_instance(inst)
                .map_err(|message| task.schema_error(line, message))?;
        }
        Ok(task)
    }

    pub fn header(&self) -> TaskHeader {
        TaskHeader {
            id: self.id.clone(),
            name: self.name.clone(),
            domain_tags: self.domain_tags.clone(),
            metric: self.metric,
            answer_kind: self.answer_kind,
            simple_task_prompt: self.simple_task_prompt.clone(),
        }
    }

    fn schema_error(&self, line: usize, message: String) -> EvalError {
        EvalError::Schema {
            source_name: self.id.clone(),
            line,
            message,
        }
    }

    fn validate_header(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("task id is empty".into());
        }
        match (self.metric, self.answer_kind) {
            (Metric::BleuAccuracy, kind) if kind != AnswerKind::OpenEnded => {
                Err(format!("metric bleu_accuracy requires answer_kind open_ended, got {kind:?}"))
            }
            (Metric::MacroF1, kind) if kind != AnswerKind::Classification => {
                Err(format!("metric macro_f1 requires answer_kind classification, got {kind:?}"))
            }
            _ => Ok(()),
        }
    }

    fn validate_instance(&self, inst: &Instance) -> Result<(), String> {
        if inst.input.trim().is_empty() {
            return Err(format!("instance {:?} has empty input", inst.id));
        }
        let labelled = matches!(
            self.answer_kind,
            AnswerKind::MultipleChoice | AnswerKind::Classification
        );
        if labelled {
            let choices = inst.choices.as_deref().unwrap_or_default();
            if choices.is_empty() {
                return Err(format!("instance {:?} needs non-empty choices", inst.id));
            }
            let mut seen = HashSet::new();
            for c in choices {
                if c.label.trim().is_empty() || !seen.insert(c.label.to_lowercase()) {
                    return Err(format!("instance {:?} has an empty or repeated label", inst.id));
                }
            }
            let gold = inst
                .gold
                .as_deref()
                .ok_or_else(|| format!("instance {:?} is missing gold", inst.id))?;
            if !seen.contains(&gold.to_lowercase()) {
                return Err(format!("instance {:?}: gold {gold:?} is not a choice label", inst.id));
            }
        }
        match self.answer_kind {
            AnswerKind::Numeric => {
                let gold = inst
                    .gold
                    .as_deref()
                    .ok_or_else(|| format!("instance {:?} is missing gold", inst.id))?;
                if canonical_number(gold).is_none() {
                    return Err(format!("instance {:?}: gold {gold:?} is not a number", inst.id));
                }
            }
            AnswerKind::OpenEnded if self.metric == Metric::BleuAccuracy => {
                let non_empty = |refs: &Option<Vec<String>>| refs.as_ref().is_some_and(|r| !r.is_empty());
                if !non_empty(&inst.correct_refs) {
                    return Err(format!("instance {:?} is missing correct_refs", inst.id));
                }
                if !non_empty(&inst.incorrect_refs) {
                    return Err(format!("instance {:?} is missing incorrect_refs", inst.id));
                }
            }
            AnswerKind::OpenEnded if inst.gold.is_none() => {
                return Err(format!("instance {:?} is missing gold", inst.id));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn instance(&self, id: &str) -> Option<&Instance> {
        self.instances.iter().find(|i| i.id == id)
    }

    pub fn split_instances(&self, split: Split) -> impl Iterator<Item = &Instance> {
        self.instances.iter().filter(move |i| i.split == Some(split))
    }

    pub fn has_splits(&self) -> bool {
        self.instances.iter().all(|i| i.split.is_some())
    }

    /// Union of choice labels across instances, in first-seen order.
    pub fn label_set(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.instances
            .iter()
            .flat_map(|i| i.labels())
            .filter(|l| seen.insert(*l))
            .map(str::to_string)
            .collect()
    }

    pub fn from_reader<R: Read>(reader: R, source_name: &str) -> Result<Self, EvalError> {
        let schema = |line: usize, message: String| EvalError::Schema {
            source_name: source_name.to_string(),
            line,
            message,
        };
        let mut header: Option<TaskHeader> = None;
        let mut instances = Vec::new();
        let mut ids = HashSet::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            if header.is_none() {
                header = Some(
                    serde_json::from_str(&line)
                        .map_err(|e| schema(line_no, format!("task header: {e}")))?,
                );
                continue;
            }
            let inst: Instance =
                serde_json::from_str(&line).map_err(|e| schema(line_no, e.to_string()))?;
            if !ids.insert(inst.id.clone()) {
                return Err(schema(line_no, format!("duplicate instance id {:?}", inst.id)));
            }
            instances.push((line_no, inst));
        }
        let header = header.ok_or_else(|| schema(1, "missing task header".into()))?;
        let task = Task {
            id: header.id,
            name: header.name,
            domain_tags: header.domain_tags,
            metric: header.metric,
            answer_kind: header.answer_kind,
            simple_task_prompt: header.simple_task_prompt,
            instances: Vec::with_capacity(instances.len()),
        };
        task.validate_header().map_err(|m| schema(1, m))?;
        let mut task = task;
        for (line_no, inst) in instances {
            task.validate_instance(&inst).map_err(|m| schema(line_no, m))?;
            task.instances.push(inst);
        }
        Ok(task)
    }
}

pub fn load_task(path: impl AsRef<Path>) -> Result<Task, EvalError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| EvalError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Task::from_reader(file, &path.display().to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.4,
            dev: 0.2,
            test: 0.4,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<(), EvalError> {
        let parts = [self.train, self.dev, self.test];
        if parts.iter().any(|r| !(0.0..=1.0).contains(r)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(EvalError::BadRatios(*self));
        }
        Ok(())
    }

    /// Floor-based counts; the remainder goes to test.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        // The epsilon absorbs representation error such as 0.4 * 10 = 4.000000000000001
        // or 0.2 * 35 = 6.999999999999999.
        let floor = |r: f64| ((r * n as f64) + 1e-9).floor() as usize;
        let train = floor(self.train).min(n);
        let dev = floor(self.dev).min(n - train);
        (train, dev, n - train - dev)
    }
}

/// Shuffles instances with a seeded RNG, then assigns contiguous
/// train/dev/test blocks. Instances keep their file order in the result.
pub fn assign_splits(task: &Task, ratios: SplitRatios, seed: u64) -> Result<Task, EvalError> {
    ratios.validate()?;
    let n = task.instances.len();
    if n < 3 {
        return Err(EvalError::TooFewInstances {
            task: task.id.clone(),
            count: n,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, "splits", 0));
    let (train, dev, _) = ratios.counts(n);
    let mut out = task.clone();
    for (rank, &idx) in order.iter().enumerate() {
        out.instances[idx].split = Some(if rank < train {
            Split::Train
        } else if rank < train + dev {
            Split::Dev
        } else {
            Split::Test
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SampleItem {
    pub task_id: String,
    pub instance_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSample {
    pub seed: u64,
    pub split: Split,
    pub items: Vec<SampleItem>,
}

impl EvalSample {
    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    /// Every instance of `split` in every task.
    pub fn full_split(tasks: &[Task], split: Split) -> Result<Self, EvalError> {
        let mut items = Vec::new();
        for task in tasks {
            let before = items.len();
            items.extend(task.split_instances(split).map(|i| SampleItem {
                task_id: task.id.clone(),
                instance_id: i.id.clone(),
            }));
            if items.len() == before {
                return Err(EvalError::EmptySplit {
                    task: task.id.clone(),
                    split,
                });
            }
        }
        Ok(EvalSample {
            seed: 0,
            split,
            items,
        })
    }
}

/// Draws `min(k, available)` instances per task without replacement. Each
/// task's draw depends only on `(seed, task id)`. Selected instances are
/// listed in file order.
pub fn sample_eval_set(tasks: &[Task], k: usize, seed: u64, split: Split) -> Result<EvalSample, EvalError> {
    if k == 0 {
        return Err(EvalError::InvalidSampleSize);
    }
    let mut items = Vec::new();
    for task in tasks {
        let pool: Vec<&Instance> = task.split_instances(split).collect();
        if pool.is_empty() {
            return Err(EvalError::EmptySplit {
                task: task.id.clone(),
                split,
            });
        }
        let mut rng = rng_for(seed, &task.id, 0);
        let mut picked: Vec<usize> =
            rand::seq::index::sample(&mut rng, pool.len(), k.min(pool.len())).into_vec();
        picked.sort_unstable();
        items.extend(picked.into_iter().map(|i| SampleItem {
            task_id: task.id.clone(),
            instance_id: pool[i].id.clone(),
        }));
    }
    Ok(EvalSample { seed, split, items })
}

/// Tasks indexed by id, in configuration order.
#[derive(Debug, Clone, Default)]
pub struct TaskSet {
    tasks: Vec<Task>,
    index: HashMap<String, usize>,
}

impl TaskSet {
    pub fn new(tasks: Vec<Task>) -> Result<Self, EvalError> {
        let mut index = HashMap::new();
        for (i, t) in tasks.iter().enumerate() {
            if index.insert(t.id.clone(), i).is_some() {
                return Err(EvalError::DuplicateTask(t.id.clone()));
            }
        }
        Ok(TaskSet { tasks, index })
    }

    /// Loads task files and assigns splits to any task whose file does not
    /// carry them for every instance.
    pub fn load<P: AsRef<Path>>(paths: &[P], ratios: SplitRatios, split_seed: u64) -> Result<Self, EvalError> {
        let tasks = paths
            .iter()
            .map(|p| {
                let task = load_task(p)?;
                if task.has_splits() {
                    Ok(task)
                } else {
                    assign_splits(&task, ratios, crate::seed::derive_seed(split_seed, &task.id, 0))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        TaskSet::new(tasks)
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn get(&self, id: &str) -> Option<&Task> {
        self.index.get(id).map(|&i| &self.tasks[i])
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}
