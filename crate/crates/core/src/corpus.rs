//! Prompt-component corpus: the gene pool the search draws `Add` edits from.
//!
//! A corpus is a JSONL file with one `{"id", "text", "category"}` object per
//! line. Components are immutable after loading; ordering follows the file.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("failed to read corpus: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed component: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: unknown category {name:?}")]
    UnknownCategory { line: usize, name: String },
    #[error("line {line}: component {id:?} has empty text")]
    EmptyText { line: usize, id: String },
    #[error("line {line}: duplicate component id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("empty corpus")]
    Empty,
}

/// The nine component categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    GoodProperty,
    Role,
    Style,
    Emotion,
    Scenario,
    Jailbreak,
    Safety,
    Behavioral,
    Cot,
}

impl Category {
    pub const ALL: [Category; 9] = [
        Category::GoodProperty,
        Category::Role,
        Category::Style,
        Category::Emotion,
        Category::Scenario,
        Category::Jailbreak,
        Category::Safety,
        Category::Behavioral,
        Category::Cot,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::GoodProperty => "good_property",
            Category::Role => "role",
            Category::Style => "style",
            Category::Emotion => "emotion",
            Category::Scenario => "scenario",
            Category::Jailbreak => "jailbreak",
            Category::Safety => "safety",
            Category::Behavioral => "behavioral",
            Category::Cot => "cot",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown category {0:?}")]
pub struct ParseCategoryError(pub String);

impl FromStr for Category {
    type Err = ParseCategoryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| ParseCategoryError(s.to_string()))
    }
}

/// A single instruction sentence with its category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub id: String,
    pub text: String,
    pub category: Category,
}

// Raw line shape; category stays a string so unknown values get a dedicated error.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawComponent {
    id: String,
    text: String,
    category: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    components: Vec<Component>,
    index: BTreeMap<String, usize>,
    by_category: BTreeMap<Category, Vec<String>>,
}

/// Per-category counts and fractions of a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub total: usize,
    pub counts: BTreeMap<Category, usize>,
    pub fractions: BTreeMap<Category, f64>,
}

impl CategoryCounts {
    pub fn count(&self, category: Category) -> usize {
        self.counts.get(&category).copied().unwrap_or(0)
    }

    pub fn fraction(&self, category: Category) -> f64 {
        self.fractions.get(&category).copied().unwrap_or(0.0)
    }
}

impl Corpus {
    /// Builds a corpus from already-parsed components, enforcing id uniqueness
    /// and non-empty text. Line numbers in errors are 1-based positions.
    pub fn from_components(components: Vec<Component>) -> Result<Self, CorpusError> {
        if components.is_empty() {
            return Err(CorpusError::Empty);
        }
        let mut index = BTreeMap::new();
        let mut by_category: BTreeMap<Category, Vec<String>> = BTreeMap::new();
        for (pos, component) in components.iter().enumerate() {
            if component.text.trim().is_empty() {
                return Err(CorpusError::EmptyText {
                    line: pos + 1,
                    id: component.id.clone(),
                });
            }
            if index.insert(component.id.clone(), pos).is_some() {
                return Err(CorpusError::DuplicateId {
                    line: pos + 1,
                    id: component.id.clone(),
                });
            }
            by_category
                .entry(component.category)
                .or_default()
                .push(component.id.clone());
        }
        Ok(Corpus {
            components,
            index,
            by_category,
        })
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self, CorpusError> {
        let mut components = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawComponent =
                serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                    line: line_no,
                    message: e.to_string(),
                })?;
            let category = raw
                .category
                .parse::<Category>()
                .map_err(|e| CorpusError::UnknownCategory {
                    line: line_no,
                    name: e.0,
                })?;
            if raw.text.trim().is_empty() {
                return Err(CorpusError::EmptyText {
                    line: line_no,
                    id: raw.id,
                });
            }
            if !seen.insert(raw.id.clone()) {
                return Err(CorpusError::DuplicateId {
                    line: line_no,
                    id: raw.id,
                });
            }
            components.push(Component {
                id: raw.id,
                text: raw.text,
                category,
            });
        }
        Corpus::from_components(components)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let file = std::fs::File::open(path.as_ref())?;
        Corpus::from_reader(file)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for component in &self.components {
            serde_json::to_writer(&mut out, component)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Component> {
        self.index.get(id).map(|&i| &self.components[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.components.iter().map(|c| c.id.as_str())
    }

    pub fn by_category(&self) -> &BTreeMap<Category, Vec<String>> {
        &self.by_category
    }

    pub fn category_of(&self, id: &str) -> Option<Category> {
        self.get(id).map(|c| c.category)
    }

    pub fn stats(&self) -> CategoryCounts {
        corpus_stats(self)
    }
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    Corpus::load(path)
}

pub fn corpus_stats(corpus: &Corpus) -> CategoryCounts {
    let total = corpus.len();
    let counts: BTreeMap<Category, usize> = corpus
        .by_category
        .iter()
        .map(|(cat, ids)| (*cat, ids.len()))
        .collect();
    let fractions = counts
        .iter()
        .map(|(cat, n)| (*cat, *n as f64 / total as f64))
        .collect();
    CategoryCounts {
        total,
        counts,
        fractions,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<Corpus, CorpusError> {
        Corpus::from_reader(s.as_bytes())
    }

    const TWO: &str = concat!(
        r#"{"id":"cot-01","text":"Let's think step by step.","category":"cot"}"#,
        "\n",
        r#"{"id":"role-01","text":"You are a mathematician.","category":"role"}"#,
        "\n"
    );

    #[test]
    fn loads_two_components() {
        let corpus = parse(TWO).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus.components()[0].id, "cot-01");
        let stats = corpus.stats();
        assert_eq!(stats.count(Category::Cot), 1);
        assert_eq!(stats.count(Category::Role), 1);
        assert_eq!(stats.fraction(Category::Cot), 0.5);
        assert_eq!(stats.fraction(Category::Role), 0.5);
        assert_eq!(stats.counts.len(), 2);
    }

    #[test]
    fn empty_file_is_an_error() {
        let err = parse("").unwrap_err();
        assert_eq!(err.to_string(), "empty corpus");
        assert!(matches!(parse("\n\n"), Err(CorpusError::Empty)));
    }

    #[test]
    fn duplicate_id_names_the_id() {
        let text = concat!(
            r#"{"id":"x","text":"A.","category":"cot"}"#,
            "\n",
            r#"{"id":"x","text":"B.","category":"role"}"#
        );
        let err = parse(text).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId { line: 2, ref id } if id == "x"));
        assert!(err.to_string().contains("\"x\""));
    }

    #[test]
    fn rejects_bad_rows() {
        let unknown = r#"{"id":"a","text":"A.","category":"persona"}"#;
        assert!(matches!(
            parse(unknown),
            Err(CorpusError::UnknownCategory { line: 1, .. })
        ));
        let empty = r#"{"id":"a","text":"   ","category":"cot"}"#;
        assert!(matches!(parse(empty), Err(CorpusError::EmptyText { .. })));
        let extra = r#"{"id":"a","text":"A.","category":"cot","weight":2}"#;
        assert!(matches!(parse(extra), Err(CorpusError::Malformed { line: 1, .. })));
        let broken = format!("{}\n{{not json", r#"{"id":"a","text":"A.","category":"cot"}"#);
        assert!(matches!(parse(&broken), Err(CorpusError::Malformed { line: 2, .. })));
    }

    #[test]
    fn single_category_fraction_is_one() {
        let text = concat!(
            r#"{"id":"a","text":"A.","category":"safety"}"#,
            "\n",
            r#"{"id":"b","text":"B.","category":"safety"}"#
        );
        let stats = parse(text).unwrap().stats();
        assert_eq!(stats.fraction(Category::Safety), 1.0);
        assert_eq!(stats.total, 2);
    }

    #[test]
    fn category_names_round_trip() {
        for cat in Category::ALL {
            assert_eq!(cat.as_str().parse::<Category>().unwrap(), cat);
            let json = serde_json::to_string(&cat).unwrap();
            assert_eq!(json, format!("\"{}\"", cat.as_str()));
        }
        assert!("Chain-of-Thought".parse::<Category>().is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let corpus = parse(TWO).unwrap();
        let mut buf = Vec::new();
        corpus.write_jsonl(&mut buf).unwrap();
        assert_eq!(Corpus::from_reader(buf.as_slice()).unwrap(), corpus);
    }
}
