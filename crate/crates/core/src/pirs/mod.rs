//! Probabilistic ranking over confidence-weighted queries.
//!
//! A document's score is the sum, over query terms, of
//! `confidence · weight · idf · sat(tf)` with
//! `idf = ln((N − df + 0.5)/(df + 0.5) + 1)` and Okapi saturation
//! `sat = tf·(k1+1) / (tf + k1·(1 − b + b·len/avglen))`.

mod feedback;
mod phonetic;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Analyzer, DocOrd, InvertedIndex};

pub use feedback::{detect_misrecognitions, relevance_feedback, MisrecognitionSuggestion};
pub use phonetic::{soundex, sounds_alike, word_similarity, SoundexError};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PirsError {
    #[error("document {0:?} is not in the index")]
    UnknownDocument(String),
    #[error("relevance feedback needs at least one marked document")]
    NoMarkedDocuments,
}

/// How recognition confidence enters the term weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConfidenceMode {
    /// Each term's contribution is multiplied by its confidence.
    #[default]
    Multiplicative,
    /// Confidence is ignored (every term counts fully).
    Ignore,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankingParams {
    pub k1: f64,
    pub b: f64,
    /// Per-document confidence boost rate during feedback.
    pub alpha: f64,
    /// Query weight of feedback expansion terms.
    pub beta: f64,
    pub k_expansion: usize,
    pub sim_threshold: f64,
    pub default_threshold: f64,
    pub confidence_mode: ConfidenceMode,
}

impl Default for RankingParams {
    fn default() -> Self {
        Self {
            k1: 1.2,
            b: 0.75,
            alpha: 0.5,
            beta: 0.5,
            k_expansion: 5,
            sim_threshold: 0.75,
            default_threshold: 0.0,
            confidence_mode: ConfidenceMode::Multiplicative,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryTerm {
    pub term: String,
    /// The word as uttered or recognized.
    pub surface: String,
    pub weight: f64,
    /// Recognition confidence in `[0, 1]`.
    pub confidence: f64,
}

impl QueryTerm {
    /// A term with weight 1 and full confidence.
    pub fn new(term: impl Into<String>, surface: impl Into<String>) -> Self {
        Self {
            term: term.into(),
            surface: surface.into(),
            weight: 1.0,
            confidence: 1.0,
        }
    }

    pub fn with_confidence(mut self, confidence: f64) -> Self {
        self.confidence = confidence.clamp(0.0, 1.0);
        self
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight.max(0.0);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryOrigin {
    Typed,
    SpokenSimulated,
    FeedbackRefined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedQuery {
    pub terms: Vec<QueryTerm>,
    pub origin: QueryOrigin,
}

impl WeightedQuery {
    pub fn new(terms: Vec<QueryTerm>, origin: QueryOrigin) -> Self {
        Self { terms, origin }
    }

    /// A typed query: every non-stop token at full confidence.
    pub fn typed(text: &str, analyzer: &Analyzer) -> Self {
        Self::new(
            analyzer
                .tokenize(text)
                .into_iter()
                .map(|t| QueryTerm::new(t.term, t.surface))
                .collect(),
            QueryOrigin::Typed,
        )
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn contains_term(&self, term: &str) -> bool {
        self.terms.iter().any(|t| t.term == term)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub doc_id: String,
    pub score: f64,
}

/// Documents in non-increasing score order (ties by ascending id), with the
/// prefix meeting `threshold` counted as surely relevant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub entries: Vec<RankedEntry>,
    pub threshold: f64,
    surely_relevant: usize,
}

impl RankedList {
    pub fn new(mut entries: Vec<RankedEntry>, threshold: f64) -> Self {
        entries.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.doc_id.cmp(&b.doc_id))
        });
        let surely_relevant = entries.iter().take_while(|e| e.score >= threshold).count();
        Self {
            entries,
            threshold,
            surely_relevant,
        }
    }

    pub fn surely_relevant(&self) -> &[RankedEntry] {
        &self.entries[..self.surely_relevant]
    }

    pub fn surely_relevant_count(&self) -> usize {
        self.surely_relevant
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }
}

/// `ln((N − df + 0.5)/(df + 0.5) + 1)`; positive for every df ≤ N.
pub fn idf(doc_count: usize, df: usize) -> f64 {
    let (n, df) = (doc_count as f64, df as f64);
    ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
}

/// Okapi term-frequency saturation.
pub fn saturation(tf: u32, doc_len: u32, avg_doc_len: f64, params: &RankingParams) -> f64 {
    let tf = f64::from(tf);
    let ratio = if avg_doc_len > 0.0 {
        f64::from(doc_len) / avg_doc_len
    } else {
        0.0
    };
    tf * (params.k1 + 1.0) / (tf + params.k1 * (1.0 - params.b + params.b * ratio))
}

fn effective_confidence(term: &QueryTerm, params: &RankingParams) -> f64 {
    match params.confidence_mode {
        ConfidenceMode::Multiplicative => term.confidence,
        ConfidenceMode::Ignore => 1.0,
    }
}

fn contribution(term: &QueryTerm, idf: f64, sat: f64, params: &RankingParams) -> f64 {
    effective_confidence(term, params) * term.weight * idf * sat
}

/// Score of one document.
pub fn score(
    query: &WeightedQuery,
    doc_id: &str,
    index: &InvertedIndex,
    params: &RankingParams,
) -> Result<f64, PirsError> {
    let ord = index
        .doc_ord(doc_id)
        .ok_or_else(|| PirsError::UnknownDocument(doc_id.to_string()))?;
    Ok(score_ord(query, ord, index, params))
}

fn score_ord(
    query: &WeightedQuery,
    ord: DocOrd,
    index: &InvertedIndex,
    params: &RankingParams,
) -> f64 {
    let n = index.doc_count();
    let len = index.doc_length(ord);
    let mut total = 0.0;
    for term in &query.terms {
        let tf = index.tf(&term.term, ord);
        if tf == 0 {
            continue;
        }
        let w = idf(n, index.df(&term.term));
        let s = saturation(tf, len, index.avg_doc_length(), params);
        total += contribution(term, w, s, params);
    }
    total
}

/// Ranks every document with a positive score.
pub fn rank(
    query: &WeightedQuery,
    index: &InvertedIndex,
    params: &RankingParams,
    threshold: f64,
) -> RankedList {
    let n = index.doc_count();
    let mut acc = vec![0.0f64; n];
    let mut touched = vec![false; n];
    for term in &query.terms {
        let postings = index.postings(&term.term);
        if postings.is_empty() {
            continue;
        }
        let w = idf(n, postings.len());
        for p in postings {
            let s = saturation(
                p.tf,
                index.doc_length(p.doc),
                index.avg_doc_length(),
                params,
            );
            acc[p.doc as usize] += contribution(term, w, s, params);
            touched[p.doc as usize] = true;
        }
    }
    let entries = acc
        .into_iter()
        .enumerate()
        .filter(|&(i, s)| touched[i] && s > 0.0)
        .map(|(i, score)| RankedEntry {
            doc_id: index.doc_id(i as DocOrd).to_string(),
            score,
        })
        .collect();
    RankedList::new(entries, threshold)
}
