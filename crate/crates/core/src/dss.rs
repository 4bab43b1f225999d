//! Query-biased extractive summaries.
//!
//! Each sentence gets a title-overlap, location, term-frequency and
//! query-overlap component. The summary keeps the top-scoring sentences,
//! at most 15% of the sentence count (rounded up), never more than five and
//! never fewer than one, and presents them in document order.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Analyzer, Document};
use crate::pirs::WeightedQuery;

/// Hard cap on summary length in sentences.
pub const MAX_SUMMARY_SENTENCES: usize = 5;
/// Summary budget as a percentage of the sentence count.
pub const SUMMARY_PERCENT: usize = 15;

const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "mt", "gen", "gov", "sen", "rep", "col",
    "lt", "sgt", "capt", "inc", "co", "corp", "ltd", "bros", "vs", "etc", "jan", "feb", "mar",
    "apr", "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec", "no", "e.g", "i.e", "u.s",
    "u.k", "a.m", "p.m",
];

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '\u{201d}' | '\u{2019}')
}

fn is_opener(c: char) -> bool {
    matches!(c, '"' | '\'' | '(' | '[' | '\u{201c}' | '\u{2018}')
}

/// True if the word ending right before `dot_at` is a known abbreviation or
/// a single-letter initial.
fn ends_with_abbreviation(text: &str, dot_at: usize) -> bool {
    let head = &text[..dot_at];
    let word_start = head
        .rfind(|c: char| c.is_whitespace() || is_opener(c))
        .map(|i| i + head[i..].chars().next().map_or(1, char::len_utf8))
        .unwrap_or(0);
    let word = head[word_start..].to_lowercase();
    if word.chars().count() == 1 && word.chars().all(char::is_alphabetic) {
        return true;
    }
    ABBREVIATIONS.contains(&word.as_str())
}

/// Splits text at `.`, `!` or `?` followed by whitespace and a capital letter,
/// except after abbreviations. Sentences are trimmed; nothing else is dropped.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0usize;
    let mut i = 0;
    while i < chars.len() {
        let (at, c) = chars[i];
        if !is_terminator(c) {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < chars.len() && (is_terminator(chars[j].1) || is_closer(chars[j].1)) {
            j += 1;
        }
        let end = chars.get(j).map_or(text.len(), |&(b, _)| b);
        let mut k = j;
        while k < chars.len() && chars[k].1.is_whitespace() {
            k += 1;
        }
        let has_space = k > j;
        let mut m = k;
        while m < chars.len() && is_opener(chars[m].1) {
            m += 1;
        }
        let capital_follows = chars.get(m).is_some_and(|&(_, n)| n.is_uppercase());
        let abbreviation = c == '.' && j == i + 1 && ends_with_abbreviation(text, at);
        if has_space && capital_follows && !abbreviation {
            let s = text[start..end].trim();
            if !s.is_empty() {
                out.push(s.to_string());
            }
            start = chars[k].0;
            i = k;
        } else {
            i = j;
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail.to_string());
    }
    out
}

/// Component weights of the sentence score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SummaryWeights {
    pub title: f64,
    pub location: f64,
    pub tf: f64,
    pub query: f64,
}

impl Default for SummaryWeights {
    fn default() -> Self {
        Self {
            title: 1.0,
            location: 1.0,
            tf: 1.0,
            query: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentenceScore {
    pub sentence_index: usize,
    pub title_score: f64,
    pub location_score: f64,
    pub tf_score: f64,
    pub query_score: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub doc_id: String,
    /// Selected sentence indexes, strictly increasing.
    pub selected: Vec<usize>,
    pub text: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SummaryError {
    #[error("document {0:?} has no sentences to summarize")]
    EmptyDocument(String),
    #[error("sentence {index} is out of range for document {doc_id:?}")]
    NoSuchSentence { doc_id: String, index: usize },
}

/// Number of sentences a summary of an `sentence_count`-sentence document keeps.
pub fn summary_length(sentence_count: usize) -> usize {
    let budget = (SUMMARY_PERCENT * sentence_count).div_ceil(100);
    budget.clamp(1, MAX_SUMMARY_SENTENCES)
}

/// Per-document statistics shared by all of its sentence scores.
struct DocProfile {
    title_terms: BTreeSet<String>,
    sentence_terms: Vec<BTreeSet<String>>,
    tf: HashMap<String, u32>,
    max_tf: u32,
}

impl DocProfile {
    fn new(doc: &Document, analyzer: &Analyzer) -> Self {
        let title_terms = analyzer.terms(&doc.title).into_iter().collect();
        let mut tf: HashMap<String, u32> = HashMap::new();
        let sentence_terms = doc
            .sentences
            .iter()
            .map(|s| {
                let terms = analyzer.terms(s);
                for t in &terms {
                    *tf.entry(t.clone()).or_default() += 1;
                }
                terms.into_iter().collect()
            })
            .collect();
        let max_tf = tf.values().copied().max().unwrap_or(0);
        Self {
            title_terms,
            sentence_terms,
            tf,
            max_tf,
        }
    }

    fn score(&self, index: usize, query: &BTreeSet<&str>, w: &SummaryWeights) -> SentenceScore {
        let terms = &self.sentence_terms[index];
        let title_score = if self.title_terms.is_empty() {
            0.0
        } else {
            terms.intersection(&self.title_terms).count() as f64 / self.title_terms.len() as f64
        };
        let location_score = if index < 2 { 1.0 } else { 0.0 };
        let tf_score = if terms.is_empty() || self.max_tf == 0 {
            0.0
        } else {
            let sum: u32 = terms.iter().map(|t| self.tf[t]).sum();
            f64::from(sum) / terms.len() as f64 / f64::from(self.max_tf)
        };
        let query_score = if query.is_empty() {
            0.0
        } else {
            let present = query.iter().filter(|q| terms.contains(**q)).count() as f64;
            present * present / query.len() as f64
        };
        SentenceScore {
            sentence_index: index,
            title_score,
            location_score,
            tf_score,
            query_score,
            total: w.title * title_score
                + w.location * location_score
                + w.tf * tf_score
                + w.query * query_score,
        }
    }
}

fn query_terms(query: &WeightedQuery) -> BTreeSet<&str> {
    query.terms.iter().map(|t| t.term.as_str()).collect()
}

/// Scores one sentence of `doc`.
pub fn score_sentence(
    index: usize,
    doc: &Document,
    analyzer: &Analyzer,
    query: &WeightedQuery,
    weights: &SummaryWeights,
) -> Result<SentenceScore, SummaryError> {
    if index >= doc.sentences.len() {
        return Err(SummaryError::NoSuchSentence {
            doc_id: doc.doc_id.clone(),
            index,
        });
    }
    Ok(DocProfile::new(doc, analyzer).score(index, &query_terms(query), weights))
}

/// Scores every sentence of `doc`, in order.
pub fn score_sentences(
    doc: &Document,
    analyzer: &Analyzer,
    query: &WeightedQuery,
    weights: &SummaryWeights,
) -> Vec<SentenceScore> {
    let profile = DocProfile::new(doc, analyzer);
    let q = query_terms(query);
    (0..doc.sentences.len())
        .map(|i| profile.score(i, &q, weights))
        .collect()
}

/// Builds the query-biased summary of `doc`.
pub fn summarize(
    doc: &Document,
    analyzer: &Analyzer,
    query: &WeightedQuery,
    weights: &SummaryWeights,
) -> Result<Summary, SummaryError> {
    if doc.sentences.is_empty() {
        return Err(SummaryError::EmptyDocument(doc.doc_id.clone()));
    }
    let mut scores = score_sentences(doc, analyzer, query, weights);
    scores.sort_by(|a, b| {
        b.total
            .total_cmp(&a.total)
            .then(a.sentence_index.cmp(&b.sentence_index))
    });
    let mut selected: Vec<usize> = scores
        .iter()
        .take(summary_length(doc.sentences.len()))
        .map(|s| s.sentence_index)
        .collect();
    selected.sort_unstable();
    let text = selected
        .iter()
        .map(|&i| doc.sentences[i].as_str())
        .collect::<Vec<_>>()
        .join(" ");
    Ok(Summary {
        doc_id: doc.doc_id.clone(),
        selected,
        text,
    })
}
