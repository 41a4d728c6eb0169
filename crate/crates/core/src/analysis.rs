//! Post-hoc analyses over run transcripts and answer files. Every function
//! here is a pure function of its inputs.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{Category, Corpus, CorpusError};
use crate::search::{IterationRecord, OriginKind, Record};

/// Two-sided 5% critical value of the standard normal.
pub const Z_CRITICAL: f64 = 1.96;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("transcript has no header record")]
    MissingHeader,
    #[error("transcript header corpus is invalid: {0}")]
    Corpus(#[from] CorpusError),
    #[error("iteration {iteration}: component {id:?} is not in the corpus")]
    UnknownComponent { iteration: usize, id: String },
    #[error("question ids differ: only in a: {only_in_a:?}; only in b: {only_in_b:?}")]
    IdMismatch {
        only_in_a: Vec<String>,
        only_in_b: Vec<String>,
    },
    #[error("no questions to compare")]
    NoQuestions,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AnalysisError + '_ {
    move |source| AnalysisError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// The corpus embedded in the transcript header.
pub fn transcript_corpus(records: &[Record]) -> Result<Corpus, AnalysisError> {
    match records.first() {
        Some(Record::Header(h)) => Ok(Corpus::from_components(h.corpus.clone())?),
        _ => Err(AnalysisError::MissingHeader),
    }
}

fn iterations(records: &[Record]) -> impl Iterator<Item = &IterationRecord> {
    records.iter().filter_map(|r| match r {
        Record::Iteration(it) => Some(it),
        _ => None,
    })
}

fn category_counts(
    it: &IterationRecord,
    corpus: &Corpus,
) -> Result<(BTreeMap<Category, usize>, usize), AnalysisError> {
    let mut counts: BTreeMap<Category, usize> = Category::ALL.iter().map(|&c| (c, 0)).collect();
    let mut total = 0;
    for entry in &it.beam {
        for id in entry.prompt.source_ids() {
            let cat = corpus.category_of(id).ok_or_else(|| AnalysisError::UnknownComponent {
                iteration: it.iteration,
                id: id.to_string(),
            })?;
            *counts.get_mut(&cat).expect("all categories present") += 1;
            total += 1;
        }
    }
    Ok((counts, total))
}

/// Binomial normal-approximation z of `observed` successes in `n` draws
/// with success probability `p`. Undefined when `n = 0` or `p` is 0 or 1.
pub fn z_score(observed: usize, n: usize, p: f64) -> Option<f64> {
    if n == 0 || p <= 0.0 || p >= 1.0 {
        return None;
    }
    let n = n as f64;
    Some((observed as f64 - n * p) / (n * p * (1.0 - p)).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryZ {
    pub category: Category,
    pub observed: usize,
    pub expected: f64,
    pub z: Option<f64>,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationZScores {
    pub iteration: usize,
    pub n_additions: usize,
    pub categories: Vec<CategoryZ>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryZScores {
    pub iterations: Vec<IterationZScores>,
}

/// Per iteration, how over- or under-represented each category is among
/// the components of the promoted beam, against draws proportional to the
/// corpus category sizes. Rephrased components count under their source.
pub fn category_z_scores(records: &[Record], corpus: &Corpus) -> Result<CategoryZScores, AnalysisError> {
    let stats = corpus.stats();
    let mut out = Vec::new();
    for it in iterations(records) {
        let (counts, n) = category_counts(it, corpus)?;
        let categories = counts
            .into_iter()
            .map(|(category, observed)| {
                let p = stats.fraction(category);
                let z = z_score(observed, n, p);
                CategoryZ {
                    category,
                    observed,
                    expected: n as f64 * p,
                    z,
                    significant: z.is_some_and(|z| z.abs() >= Z_CRITICAL),
                }
            })
            .collect();
        out.push(IterationZScores {
            iteration: it.iteration,
            n_additions: n,
            categories,
        });
    }
    Ok(CategoryZScores { iterations: out })
}

pub const EDIT_TYPES: [OriginKind; 5] = [
    OriginKind::Add,
    OriginKind::Rephrase,
    OriginKind::Swap,
    OriginKind::Delete,
    OriginKind::Elite,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationEditTypes {
    pub iteration: usize,
    pub beam_size: usize,
    pub counts: BTreeMap<OriginKind, usize>,
    pub fractions: BTreeMap<OriginKind, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditTypeStats {
    pub iterations: Vec<IterationEditTypes>,
}

/// Per iteration, the share of promoted entries created by each edit type.
pub fn edit_type_distribution(records: &[Record]) -> EditTypeStats {
    let iterations = iterations(records)
        .map(|it| {
            let mut counts: BTreeMap<OriginKind, usize> = EDIT_TYPES.iter().map(|&k| (k, 0)).collect();
            for entry in &it.beam {
                *counts.entry(entry.origin.kind).or_insert(0) += 1;
            }
            let total = it.beam.len();
            let fractions = counts
                .iter()
                .map(|(&k, &c)| (k, if total == 0 { 0.0 } else { c as f64 / total as f64 }))
                .collect();
            IterationEditTypes {
                iteration: it.iteration,
                beam_size: total,
                counts,
                fractions,
            }
        })
        .collect();
    EditTypeStats { iterations }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationComponentCounts {
    pub iteration: usize,
    pub mean_counts: BTreeMap<Category, f64>,
}

/// Per iteration, the mean number of components of each category per beam
/// prompt.
pub fn component_count_trajectory(
    records: &[Record],
    corpus: &Corpus,
) -> Result<Vec<IterationComponentCounts>, AnalysisError> {
    iterations(records)
        .map(|it| {
            let (counts, _) = category_counts(it, corpus)?;
            let prompts = it.beam.len();
            let mean_counts = counts
                .into_iter()
                .map(|(c, n)| (c, if prompts == 0 { 0.0 } else { n as f64 / prompts as f64 }))
                .collect();
            Ok(IterationComponentCounts {
                iteration: it.iteration,
                mean_counts,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementTable {
    pub questions: usize,
    pub both_correct: f64,
    pub only_a_correct: f64,
    pub only_b_correct: f64,
    pub both_wrong: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnswerLine {
    question_id: String,
    correct: bool,
}

/// Reads `{question_id, correct}` JSONL into a map. Repeated ids are an
/// error.
pub fn read_answers(path: impl AsRef<Path>) -> Result<BTreeMap<String, bool>, AnalysisError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |message: String| AnalysisError::Schema {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let a: AnswerLine = serde_json::from_str(&line).map_err(|e| schema(e.to_string()))?;
        if out.insert(a.question_id.clone(), a.correct).is_some() {
            return Err(schema(format!("duplicate question_id {:?}", a.question_id)));
        }
    }
    Ok(out)
}

/// 2x2 contingency fractions of per-question correctness.
pub fn agreement_table(a: &BTreeMap<String, bool>, b: &BTreeMap<String, bool>) -> Result<AgreementTable, AnalysisError> {
    let ka: BTreeSet<&String> = a.keys().collect();
    let kb: BTreeSet<&String> = b.keys().collect();
    if ka != kb {
        return Err(AnalysisError::IdMismatch {
            only_in_a: ka.difference(&kb).map(|s| s.to_string()).collect(),
            only_in_b: kb.difference(&ka).map(|s| s.to_string()).collect(),
        });
    }
    if a.is_empty() {
        return Err(AnalysisError::NoQuestions);
    }
    let mut cells = [0usize; 4];
    for (id, &ca) in a {
        let cb = b[id];
        cells[match (ca, cb) {
            (true, true) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (false, false) => 3,
        }] += 1;
    }
    let n = a.len() as f64;
    Ok(AgreementTable {
        questions: a.len(),
        both_correct: cells[0] as f64 / n,
        only_a_correct: cells[1] as f64 / n,
        only_b_correct: cells[2] as f64 / n,
        both_wrong: cells[3] as f64 / n,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), AnalysisError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("reports serialize");
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(io_err(path))
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush().map_err(io_err(path))
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes z-scores, edit types and component counts as JSON and CSV into
/// `out_dir`. Returns the written paths.
pub fn write_transcript_reports(records: &[Record], out_dir: &Path) -> Result<Vec<PathBuf>, AnalysisError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let corpus = transcript_corpus(records)?;
    let z = category_z_scores(records, &corpus)?;
    let edits = edit_type_distribution(records);
    let counts = component_count_trajectory(records, &corpus)?;
    let path = |name: &str| out_dir.join(name);
    let mut written = Vec::new();

    write_json(&path("category_z_scores.json"), &z)?;
    let rows = z
        .iterations
        .iter()
        .flat_map(|it| {
            it.categories.iter().map(move |c| {
                vec![
                    it.iteration.to_string(),
                    it.n_additions.to_string(),
                    c.category.to_string(),
                    c.observed.to_string(),
                    c.expected.to_string(),
                    opt(c.z),
                    c.significant.to_string(),
                ]
            })
        })
        .collect();
    write_csv(
        &path("category_z_scores.csv"),
        &["iteration", "n_additions", "category", "observed", "expected", "z", "significant"],
        rows,
    )?;
    written.extend([path("category_z_scores.json"), path("category_z_scores.csv")]);

    write_json(&path("edit_types.json"), &edits)?;
    let rows = edits
        .iterations
        .iter()
        .flat_map(|it| {
            it.counts.iter().map(move |(kind, n)| {
                let name = serde_json::to_value(kind).expect("kind serializes");
                vec![
                    it.iteration.to_string(),
                    name.as_str().unwrap_or_default().to_string(),
                    n.to_string(),
                    it.fractions[kind].to_string(),
                ]
            })
        })
        .collect();
    write_csv(&path("edit_types.csv"), &["iteration", "edit_type", "count", "fraction"], rows)?;
    written.extend([path("edit_types.json"), path("edit_types.csv")]);

    write_json(&path("component_counts.json"), &counts)?;
    let rows = counts
        .iter()
        .flat_map(|it| {
            it.mean_counts
                .iter()
                .map(move |(c, m)| vec![it.iteration.to_string(), c.to_string(), m.to_string()])
        })
        .collect();
    write_csv(&path("component_counts.csv"), &["iteration", "category", "mean_count"], rows)?;
    written.extend([path("component_counts.json"), path("component_counts.csv")]);
    Ok(written)
}

pub fn write_agreement_report(table: &AgreementTable, out_dir: &Path) -> Result<Vec<PathBuf>, AnalysisError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let json = out_dir.join("agreement.json");
    let csv_path = out_dir.join("agreement.csv");
    write_json(&json, table)?;
    write_csv(
        &csv_path,
        &["questions", "both_correct", "only_a_correct", "only_b_correct", "both_wrong"],
        vec![vec![
            table.questions.to_string(),
            table.both_correct.to_string(),
            table.only_a_correct.to_string(),
            table.only_b_correct.to_string(),
            table.both_wrong.to_string(),
        ]],
    )?;
    Ok(vec![json, csv_path])
}
