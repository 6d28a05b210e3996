//! N-gram diversity and repetition metrics over whitespace tokens.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Identifier of the sentence segmentation used by [`split_sentences`].
pub const SEGMENTATION_RULE: &str = "split-after-.?!-before-whitespace/v1";

pub fn words(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

/// Splits after `.`, `?` or `!` when the next character is whitespace or the
/// end of the text. Sentences without tokens are dropped.
pub fn split_sentences(text: &str) -> Vec<Vec<&str>> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '?' | '!') {
            let boundary = chars.peek().is_none_or(|&(_, n)| n.is_whitespace());
            if boundary {
                let end = i + c.len_utf8();
                out.push(words(&text[start..end]));
                start = end;
            }
        }
    }
    out.push(words(&text[start..]));
    out.retain(|s| !s.is_empty());
    out
}

/// Unique over total 3-grams, in percent; `None` below three tokens.
pub fn distinct3<T: AsRef<str>>(tokens: &[T]) -> Option<f64> {
    let (unique, total) = distinct_counts(std::slice::from_ref(&tokens));
    (total > 0).then(|| 100.0 * unique as f64 / total as f64)
}

/// Unique and total 3-grams across documents; n-grams never span documents.
fn distinct_counts<T: AsRef<str>, D: AsRef<[T]>>(docs: &[D]) -> (usize, usize) {
    let mut seen = HashSet::new();
    let mut total = 0;
    for d in docs {
        for w in d.as_ref().windows(3) {
            seen.insert([w[0].as_ref(), w[1].as_ref(), w[2].as_ref()]);
            total += 1;
        }
    }
    (seen.len(), total)
}

/// Whether some 4-gram occurs more than once inside the sentence.
pub fn has_repeated_4gram<T: AsRef<str>>(sentence: &[T]) -> bool {
    let mut seen = HashSet::new();
    sentence
        .windows(4)
        .any(|w| !seen.insert([w[0].as_ref(), w[1].as_ref(), w[2].as_ref(), w[3].as_ref()]))
}

/// Percentage of sentences with a repeated 4-gram; `None` without sentences.
pub fn repetition4<T: AsRef<str>, S: AsRef<[T]>>(sentences: &[S]) -> Option<f64> {
    if sentences.is_empty() {
        return None;
    }
    let hits = sentences.iter().filter(|s| has_repeated_4gram(s.as_ref())).count();
    Some(100.0 * hits as f64 / sentences.len() as f64)
}

/// Percentage of distinct 4-gram types that occur at least `n` times.
pub fn lexical_repetition<T: AsRef<str>>(tokens: &[T], n: usize) -> Result<f64> {
    let (frequent, types) = lexical_counts(std::slice::from_ref(&tokens), n)?;
    Ok(if types == 0 { 0.0 } else { 100.0 * frequent as f64 / types as f64 })
}

fn lexical_counts<T: AsRef<str>, D: AsRef<[T]>>(docs: &[D], n: usize) -> Result<(usize, usize)> {
    ensure!(n >= 2, Config, "lexical repetition needs n >= 2, got {n}");
    let mut counts: HashMap<[&str; 4], usize> = HashMap::new();
    for d in docs {
        for w in d.as_ref().windows(4) {
            *counts
                .entry([w[0].as_ref(), w[1].as_ref(), w[2].as_ref(), w[3].as_ref()])
                .or_default() += 1;
        }
    }
    Ok((counts.values().filter(|&&c| c >= n).count(), counts.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionReport {
    /// `None` when the corpus has no 3-gram.
    pub distinct3: Option<f64>,
    /// `None` when the corpus has no sentence.
    pub repetition4: Option<f64>,
    pub lexical_repetition: f64,
    pub lr_n: usize,
    pub unique_3grams: usize,
    pub total_3grams: usize,
    pub frequent_4gram_types: usize,
    pub total_4gram_types: usize,
    /// One flag per sentence, in corpus order.
    pub sentence_repeats: Vec<bool>,
    pub segmentation_rule: String,
}

impl RepetitionReport {
    /// Metrics over a corpus of documents; n-grams stay inside documents and
    /// 4-gram repetition inside sentences.
    pub fn compute<S: AsRef<str>>(docs: &[S], lr_n: usize) -> Result<Self> {
        let tokenized: Vec<Vec<&str>> = docs.iter().map(|d| words(d.as_ref())).collect();
        let sentences: Vec<Vec<&str>> = docs.iter().flat_map(|d| split_sentences(d.as_ref())).collect();
        let (unique_3grams, total_3grams) = distinct_counts(&tokenized);
        let (frequent_4gram_types, total_4gram_types) = lexical_counts(&tokenized, lr_n)?;
        let sentence_repeats: Vec<bool> = sentences.iter().map(|s| has_repeated_4gram(s)).collect();
        Ok(Self {
            distinct3: (total_3grams > 0).then(|| 100.0 * unique_3grams as f64 / total_3grams as f64),
            repetition4: repetition4(&sentences),
            lexical_repetition: if total_4gram_types == 0 {
                0.0
            } else {
                100.0 * frequent_4gram_types as f64 / total_4gram_types as f64
            },
            lr_n,
            unique_3grams,
            total_3grams,
            frequent_4gram_types,
            total_4gram_types,
            sentence_repeats,
            segmentation_rule: SEGMENTATION_RULE.to_string(),
        })
    }

    pub fn render(&self, label: &str) -> String {
        let pct = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"));
        format!(
            "{:<20} {:>8} {:>8} {:>10}\n{:<20} {:>8} {:>8} {:>10.2}\n",
            "corpus",
            "D-3",
            "R-4",
            format!("LR-{}", self.lr_n),
            label,
            pct(self.distinct3),
            pct(self.repetition4),
            self.lexical_repetition
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segmentation_needs_trailing_space() {
        let s = split_sentences("a b. c d? e!f g");
        assert_eq!(s, vec![vec!["a", "b."], vec!["c", "d?"], vec!["e!f", "g"]]);
        assert!(split_sentences("  ").is_empty());
    }

    #[test]
    fn report_matches_single_document_functions() {
        let text = "the cat sat the cat sat the cat";
        let r = RepetitionReport::compute(&[text], 2).unwrap();
        assert_eq!(r.distinct3, distinct3(&words(text)));
        assert_eq!((r.unique_3grams, r.total_3grams), (3, 6));
        assert_eq!(r.lexical_repetition, lexical_repetition(&words(text), 2).unwrap());
    }

    #[test]
    fn ngrams_do_not_cross_documents() {
        let r = RepetitionReport::compute(&["a b", "c d"], 2).unwrap();
        assert_eq!(r.total_3grams, 0);
        assert_eq!(r.distinct3, None);
    }
}
