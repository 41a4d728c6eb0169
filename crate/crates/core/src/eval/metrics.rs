//! Scoring functions. All outputs lie in `[0, 1]`.

use std::collections::HashMap;
use std::hash::Hash;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("predictions ({preds}) and golds ({golds}) differ in length")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("no items to score")]
    Empty,
    #[error("label set is empty")]
    EmptyLabels,
    #[error("gold label is not in the label set")]
    UnknownGold,
    #[error("reference list is empty")]
    EmptyReferences,
}

fn check_lengths<P, G>(preds: &[P], golds: &[G]) -> Result<(), MetricError> {
    if preds.len() != golds.len() {
        return Err(MetricError::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    if golds.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

/// Fraction of predictions equal to their gold. `None` never matches.
pub fn accuracy<T: PartialEq>(preds: &[Option<T>], golds: &[T]) -> Result<f64, MetricError> {
    check_lengths(preds, golds)?;
    let hits = preds
        .iter()
        .zip(golds)
        .filter(|(p, g)| p.as_ref() == Some(*g))
        .count();
    Ok(hits as f64 / golds.len() as f64)
}

/// Unweighted mean of per-class F1 over the labels that occur in `golds` or
/// `preds`. A class with a zero F1 denominator contributes 0. `None`
/// predictions (and predictions outside `labels`) are wrong for every class.
pub fn macro_f1<T: Eq + Hash>(preds: &[Option<T>], golds: &[T], labels: &[T]) -> Result<f64, MetricError> {
    if labels.is_empty() {
        return Err(MetricError::EmptyLabels);
    }
    check_lengths(preds, golds)?;
    let index: HashMap<&T, usize> = labels.iter().enumerate().map(|(i, l)| (l, i)).collect();
    // Per class: true positives, false positives, false negatives, present.
    let mut tp = vec![0usize; labels.len()];
    let mut fp = vec![0usize; labels.len()];
    let mut fn_ = vec![0usize; labels.len()];
    let mut present = vec![false; labels.len()];
    for (pred, gold) in preds.iter().zip(golds) {
        let g = *index.get(gold).ok_or(MetricError::UnknownGold)?;
        present[g] = true;
        let p = pred.as_ref().and_then(|p| index.get(p).copied());
        if let Some(p) = p {
            present[p] = true;
        }
        match p {
            Some(p) if p == g => tp[g] += 1,
            Some(p) => {
                fp[p] += 1;
                fn_[g] += 1;
            }
            None => fn_[g] += 1,
        }
    }
    let mut sum = 0.0;
    let mut classes = 0usize;
    for c in 0..labels.len() {
        if !present[c] {
            continue;
        }
        classes += 1;
        let denom = 2 * tp[c] + fp[c] + fn_[c];
        if denom > 0 {
            sum += (2 * tp[c]) as f64 / denom as f64;
        }
    }
    Ok(sum / classes as f64)
}

pub const BLEU_MAX_ORDER: usize = 4;

/// Lowercases, then splits into runs of alphanumeric characters, with every
/// other non-space character as a token of its own.
pub fn bleu_tokens(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            word.push(ch);
            continue;
        }
        if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            tokens.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Sentence BLEU with clipped n-gram precisions up to order
/// `min(4, |candidate|, |reference|)`, uniform weights and the standard
/// brevity penalty. Any order without a single match scores 0, as does an
/// empty candidate or reference.
pub fn bleu(candidate: &str, reference: &str) -> f64 {
    let cand = bleu_tokens(candidate);
    let refs = bleu_tokens(reference);
    if cand.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let max_order = BLEU_MAX_ORDER.min(cand.len()).min(refs.len());
    let mut log_sum = 0.0;
    for n in 1..=max_order {
        let cand_counts = ngram_counts(&cand, n);
        let ref_counts = ngram_counts(&refs, n);
        let matched: usize = cand_counts
            .iter()
            .map(|(gram, &c)| c.min(ref_counts.get(gram).copied().unwrap_or(0)))
            .sum();
        if matched == 0 {
            return 0.0;
        }
        let total = cand.len() + 1 - n;
        log_sum += (matched as f64 / total as f64).ln();
    }
    let (c, r) = (cand.len() as f64, refs.len() as f64);
    let brevity = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    (brevity * (log_sum / max_order as f64).exp()).clamp(0.0, 1.0)
}

/// 1 when the best BLEU against a correct reference strictly beats the best
/// BLEU against an incorrect one, else 0.
pub fn bleu_accuracy<S: AsRef<str>>(
    response: &str,
    correct_refs: &[S],
    incorrect_refs: &[S],
) -> Result<u8, MetricError> {
    if correct_refs.is_empty() || incorrect_refs.is_empty() {
        return Err(MetricError::EmptyReferences);
    }
    let best = |refs: &[S]| {
        refs.iter()
            .map(|r| bleu(response, r.as_ref()))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    Ok(u8::from(best(correct_refs) > best(incorrect_refs)))
}
