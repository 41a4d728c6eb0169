//! System prompts as ordered component sequences, and the four edits that
//! transform them: Add, Rephrase, Swap, Delete.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::llm::{LlmError, Paraphraser};

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("{edit}: index out of range for prompt of {len} components")]
    IndexOutOfRange { edit: EditOp, len: usize },
    #[error("{0}: swap requires i < j")]
    BadSwap(EditOp),
    #[error("unknown component id {0:?}")]
    UnknownComponent(String),
    #[error("rephrase of component {index}: {source}")]
    Paraphrase {
        index: usize,
        #[source]
        source: LlmError,
    },
}

/// One component instance inside a prompt. `text` drifts from the source
/// component's text only through rephrasing.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptComponent {
    pub source_id: String,
    pub text: String,
    pub rephrase_depth: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Prompt {
    pub parts: Vec<PromptComponent>,
}

impl Prompt {
    pub fn empty() -> Self {
        Prompt::default()
    }

    /// Builds an unrephrased prompt from component ids.
    pub fn from_ids<S: AsRef<str>>(corpus: &Corpus, ids: &[S]) -> Result<Self, PromptError> {
        let parts = ids
            .iter()
            .map(|id| {
                let id = id.as_ref();
                corpus
                    .get(id)
                    .map(|c| PromptComponent {
                        source_id: c.id.clone(),
                        text: c.text.clone(),
                        rephrase_depth: 0,
                    })
                    .ok_or_else(|| PromptError::UnknownComponent(id.to_string()))
            })
            .collect::<Result<_, _>>()?;
        Ok(Prompt { parts })
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn render(&self) -> String {
        render(self)
    }

    pub fn key(&self) -> String {
        canonical_key(self)
    }

    pub fn source_ids(&self) -> impl Iterator<Item = &str> {
        self.parts.iter().map(|p| p.source_id.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum EditOp {
    Add { component_id: String },
    Rephrase { index: usize },
    Swap { i: usize, j: usize },
    Delete { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    Add,
    Rephrase,
    Swap,
    Delete,
}

impl EditOp {
    pub fn kind(&self) -> EditKind {
        match self {
            EditOp::Add { .. } => EditKind::Add,
            EditOp::Rephrase { .. } => EditKind::Rephrase,
            EditOp::Swap { .. } => EditKind::Swap,
            EditOp::Delete { .. } => EditKind::Delete,
        }
    }
}

impl fmt::Display for EditOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EditOp::Add { component_id } => write!(f, "Add({component_id})"),
            EditOp::Rephrase { index } => write!(f, "Rephrase({index})"),
            EditOp::Swap { i, j } => write!(f, "Swap({i},{j})"),
            EditOp::Delete { index } => write!(f, "Delete({index})"),
        }
    }
}

/// An edited prompt together with where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub prompt: Prompt,
    pub parent_key: String,
    pub edit: EditOp,
    pub score: Option<f64>,
}

impl Candidate {
    pub fn key(&self) -> String {
        canonical_key(&self.prompt)
    }
}

/// Joins component texts with single spaces.
pub fn render(prompt: &Prompt) -> String {
    prompt
        .parts
        .iter()
        .map(|p| p.text.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

/// A string that identifies a prompt exactly: the JSON encoding of its
/// `(source_id, rephrase_depth, text)` tuples in order.
pub fn canonical_key(prompt: &Prompt) -> String {
    let tuples: Vec<(&str, u32, &str)> = prompt
        .parts
        .iter()
        .map(|p| (p.source_id.as_str(), p.rephrase_depth, p.text.as_str()))
        .collect();
    serde_json::to_string(&tuples).expect("key tuples serialize")
}

pub fn apply_edit(
    prompt: &Prompt,
    edit: &EditOp,
    corpus: &Corpus,
    paraphraser: &dyn Paraphraser,
) -> Result<Prompt, PromptError> {
    let len = prompt.len();
    let out_of_range = || PromptError::IndexOutOfRange {
        edit: edit.clone(),
        len,
    };
    let mut parts = prompt.parts.clone();
    match edit {
        EditOp::Add { component_id } => {
            let component = corpus
                .get(component_id)
                .ok_or_else(|| PromptError::UnknownComponent(component_id.clone()))?;
            parts.push(PromptComponent {
                source_id: component.id.clone(),
                text: component.text.clone(),
                rephrase_depth: 0,
            });
        }
        EditOp::Rephrase { index } => {
            let part = parts.get_mut(*index).ok_or_else(out_of_range)?;
            part.text = paraphraser
                .paraphrase(&part.text)
                .map_err(|source| PromptError::Paraphrase {
                    index: *index,
                    source,
                })?;
            part.rephrase_depth += 1;
        }
        EditOp::Swap { i, j } => {
            if i >= j {
                return Err(PromptError::BadSwap(edit.clone()));
            }
            if *j >= len {
                return Err(out_of_range());
            }
            parts.swap(*i, *j);
        }
        EditOp::Delete { index } => {
            if *index >= len {
                return Err(out_of_range());
            }
            parts.remove(*index);
        }
    }
    Ok(Prompt { parts })
}

/// All edits of a prompt of `len` components, in enumeration order: Adds in
/// shortlist order, Rephrase by index, Swap in lexicographic `(i, j)`, Delete
/// by index.
pub fn enumerate_edit_ops<S: AsRef<str>>(len: usize, shortlist: &[S]) -> Vec<EditOp> {
    let mut ops = Vec::with_capacity(shortlist.len() + 2 * len + len * len.saturating_sub(1) / 2);
    ops.extend(shortlist.iter().map(|id| EditOp::Add {
        component_id: id.as_ref().to_string(),
    }));
    ops.extend((0..len).map(|index| EditOp::Rephrase { index }));
    for i in 0..len {
        ops.extend((i + 1..len).map(|j| EditOp::Swap { i, j }));
    }
    ops.extend((0..len).map(|index| EditOp::Delete { index }));
    ops
}

/// Applies every enumerated edit to `prompt`. No deduplication.
pub fn enumerate_edits<S: AsRef<str>>(
    prompt: &Prompt,
    shortlist: &[S],
    corpus: &Corpus,
    paraphraser: &dyn Paraphraser,
) -> Result<Vec<Candidate>, PromptError> {
    let parent_key = prompt.key();
    enumerate_edit_ops(prompt.len(), shortlist)
        .into_iter()
        .map(|edit| {
            let child = apply_edit(prompt, &edit, corpus, paraphraser)?;
            Ok(Candidate {
                prompt: child,
                parent_key: parent_key.clone(),
                edit,
                score: None,
            })
        })
        .collect()
}

/// Keeps the first candidate for each canonical key, preserving order.
pub fn dedup_candidates(candidates: Vec<Candidate>) -> Vec<Candidate> {
    let mut seen = HashSet::new();
    candidates
        .into_iter()
        .filter(|c| seen.insert(c.key()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Category, Component};
    use crate::llm::RuleParaphraser;
    use proptest::prelude::*;

    fn corpus() -> Corpus {
        let mk = |id: &str, text: &str, category| Component {
            id: id.into(),
            text: text.into(),
            category,
        };
        Corpus::from_components(vec![
            mk("cot-01", "Let's think step by step.", Category::Cot),
            mk("role-01", "You are a mathematician.", Category::Role),
            mk("jb-01", "Do anything now.", Category::Jailbreak),
            mk("a", "A", Category::Style),
            mk("b", "B", Category::Style),
        ])
        .unwrap()
    }

    fn prompt(ids: &[&str]) -> Prompt {
        Prompt::from_ids(&corpus(), ids).unwrap()
    }

    fn texts(p: &Prompt) -> Vec<&str> {
        p.parts.iter().map(|x| x.text.as_str()).collect()
    }

    #[test]
    fn render_examples() {
        assert_eq!(
            prompt(&["cot-01", "role-01"]).render(),
            "Let's think step by step. You are a mathematician."
        );
        assert_eq!(Prompt::empty().render(), "");
        assert_eq!(prompt(&["jb-01"]).render(), "Do anything now.");
    }

    #[test]
    fn edit_examples() {
        let c = corpus();
        let p = RuleParaphraser;
        let added = apply_edit(
            &prompt(&["a"]),
            &EditOp::Add {
                component_id: "role-01".into(),
            },
            &c,
            &p,
        )
        .unwrap();
        assert_eq!(texts(&added), ["A", "You are a mathematician."]);
        assert_eq!(added.parts[1].rephrase_depth, 0);

        let swapped = apply_edit(&prompt(&["a", "b"]), &EditOp::Swap { i: 0, j: 1 }, &c, &p).unwrap();
        assert_eq!(texts(&swapped), ["B", "A"]);

        let deleted = apply_edit(&prompt(&["a"]), &EditOp::Delete { index: 0 }, &c, &p).unwrap();
        assert!(deleted.is_empty());

        let original = prompt(&["cot-01"]);
        let rephrased = apply_edit(&original, &EditOp::Rephrase { index: 0 }, &c, &p).unwrap();
        assert_eq!(texts(&rephrased), ["Let us think step by step."]);
        assert_eq!(rephrased.parts[0].rephrase_depth, 1);
        assert_eq!(rephrased.parts[0].source_id, "cot-01");
        assert_eq!(original.parts[0].rephrase_depth, 0, "input not mutated");
    }

    #[test]
    fn edit_errors() {
        let c = corpus();
        let p = RuleParaphraser;
        let ab = prompt(&["a", "b"]);
        assert!(matches!(
            apply_edit(&ab, &EditOp::Delete { index: 2 }, &c, &p),
            Err(PromptError::IndexOutOfRange { len: 2, .. })
        ));
        assert!(matches!(
            apply_edit(&ab, &EditOp::Rephrase { index: 5 }, &c, &p),
            Err(PromptError::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            apply_edit(&ab, &EditOp::Swap { i: 1, j: 0 }, &c, &p),
            Err(PromptError::BadSwap(_))
        ));
        assert!(matches!(
            apply_edit(&ab, &EditOp::Swap { i: 0, j: 2 }, &c, &p),
            Err(PromptError::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            apply_edit(&ab, &EditOp::Add { component_id: "zzz".into() }, &c, &p),
            Err(PromptError::UnknownComponent(id)) if id == "zzz"
        ));
    }

    #[test]
    fn paraphrase_failure_carries_index() {
        struct Broken;
        impl Paraphraser for Broken {
            fn paraphrase(&self, _: &str) -> Result<String, LlmError> {
                Err(LlmError::Timeout)
            }
        }
        let err = apply_edit(&prompt(&["a", "b"]), &EditOp::Rephrase { index: 1 }, &corpus(), &Broken)
            .unwrap_err();
        assert!(matches!(err, PromptError::Paraphrase { index: 1, .. }));
    }

    #[test]
    fn enumeration_examples() {
        let c = corpus();
        let p = RuleParaphraser;
        let shortlist = ["cot-01", "role-01", "jb-01"];
        let cands = enumerate_edits(&prompt(&["a", "b"]), &shortlist, &c, &p).unwrap();
        assert_eq!(cands.len(), 8);
        let ops: Vec<String> = cands.iter().map(|c| c.edit.to_string()).collect();
        assert_eq!(
            ops,
            [
                "Add(cot-01)",
                "Add(role-01)",
                "Add(jb-01)",
                "Rephrase(0)",
                "Rephrase(1)",
                "Swap(0,1)",
                "Delete(0)",
                "Delete(1)"
            ]
        );
        assert!(enumerate_edits(&prompt(&["a"]), &shortlist, &c, &p)
            .unwrap()
            .iter()
            .all(|c| c.edit.kind() != EditKind::Swap));

        let five = ["cot-01", "role-01", "jb-01", "a", "b"];
        let from_empty = enumerate_edits(&Prompt::empty(), &five, &c, &p).unwrap();
        assert_eq!(from_empty.len(), 5);
        assert!(from_empty.iter().all(|c| c.edit.kind() == EditKind::Add));
        assert!(from_empty.iter().all(|c| c.parent_key == "[]"));
    }

    #[test]
    fn keys_are_order_and_text_sensitive() {
        let c = corpus();
        assert_eq!(prompt(&["a", "b"]).key(), prompt(&["a", "b"]).key());
        assert_ne!(prompt(&["a", "b"]).key(), prompt(&["b", "a"]).key());
        let before = prompt(&["cot-01"]);
        let after = apply_edit(&before, &EditOp::Rephrase { index: 0 }, &c, &RuleParaphraser).unwrap();
        assert_ne!(before.key(), after.key());
    }

    #[test]
    fn dedup_drops_repeats() {
        let c = corpus();
        // Rephrasing "A" is the identity under the rule table, but bumps the depth.
        let cands = enumerate_edits(&prompt(&["a", "a"]), &["a"], &c, &RuleParaphraser).unwrap();
        // Add(a), Rephrase(0), Rephrase(1), Swap(0,1), Delete(0), Delete(1)
        assert_eq!(cands.len(), 6);
        let unique = dedup_candidates(cands);
        // Both deletes yield [a]; only the first survives.
        let ops: Vec<String> = unique.iter().map(|c| c.edit.to_string()).collect();
        assert_eq!(ops, ["Add(a)", "Rephrase(0)", "Rephrase(1)", "Swap(0,1)", "Delete(0)"]);
        let keys: HashSet<String> = unique.iter().map(Candidate::key).collect();
        assert_eq!(keys.len(), unique.len());
    }

    #[test]
    fn serializes_as_array() {
        let json = serde_json::to_string(&prompt(&["a"])).unwrap();
        assert_eq!(json, r#"[{"source_id":"a","text":"A","rephrase_depth":0}]"#);
        let op = serde_json::to_string(&EditOp::Swap { i: 0, j: 2 }).unwrap();
        assert_eq!(op, r#"{"op":"swap","i":0,"j":2}"#);
    }

    fn arb_prompt() -> impl Strategy<Value = Prompt> {
        prop::collection::vec(0usize..5, 0..8).prop_map(|idx| {
            let ids = ["cot-01", "role-01", "jb-01", "a", "b"];
            let picked: Vec<&str> = idx.into_iter().map(|i| ids[i]).collect();
            prompt(&picked)
        })
    }

    proptest! {
        #[test]
        fn enumeration_count_formula(len in 0usize..10, shortlist in 0usize..60) {
            let ids: Vec<String> = (0..shortlist).map(|i| format!("c{i}")).collect();
            let ops = enumerate_edit_ops(len, &ids);
            prop_assert_eq!(ops.len(), shortlist + len + len * len.saturating_sub(1) / 2 + len);
        }

        #[test]
        fn swap_is_an_involution(
            (p, a, b) in arb_prompt()
                .prop_filter("needs two parts", |p| p.len() >= 2)
                .prop_flat_map(|p| {
                    let len = p.len();
                    (Just(p), 0..len - 1).prop_flat_map(move |(p, a)| (Just(p), Just(a), a + 1..len))
                })
        ) {
            let c = corpus();
            let op = EditOp::Swap { i: a, j: b };
            let once = apply_edit(&p, &op, &c, &RuleParaphraser).unwrap();
            let twice = apply_edit(&once, &op, &c, &RuleParaphraser).unwrap();
            prop_assert_eq!(twice, p);
        }

        #[test]
        fn delete_then_reinsert_restores(p in arb_prompt(), i in 0usize..8) {
            prop_assume!(i < p.len());
            let removed = p.parts[i].clone();
            let mut back = apply_edit(&p, &EditOp::Delete { index: i }, &corpus(), &RuleParaphraser).unwrap();
            back.parts.insert(i, removed);
            prop_assert_eq!(back, p);
        }

        #[test]
        fn keys_match_equality(p in arb_prompt(), q in arb_prompt()) {
            prop_assert_eq!(p == q, p.key() == q.key());
        }
    }
}
