//! Relevance feedback: confidence boosting, query expansion and detection
//! of query words that were probably misrecognized.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{idf, PirsError, QueryOrigin, QueryTerm, RankingParams, WeightedQuery};
use crate::corpus::{DocOrd, InvertedIndex, TermId};
use crate::edit::normalized_similarity;

/// A query word missing from every marked document, and an in-document word
/// that looks or sounds like it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisrecognitionSuggestion {
    pub original: QueryTerm,
    pub candidate: String,
    pub similarity: f64,
    /// Marked documents containing the candidate.
    pub support: usize,
}

fn marked_ords(marked: &[String], index: &InvertedIndex) -> Result<Vec<DocOrd>, PirsError> {
    if marked.is_empty() {
        return Err(PirsError::NoMarkedDocuments);
    }
    let set: BTreeSet<DocOrd> = marked
        .iter()
        .map(|id| {
            index
                .doc_ord(id)
                .ok_or_else(|| PirsError::UnknownDocument(id.clone()))
        })
        .collect::<Result<_, _>>()?;
    Ok(set.into_iter().collect())
}

/// Term id → (number of marked documents containing it, summed tf).
fn marked_term_stats(ords: &[DocOrd], index: &InvertedIndex) -> BTreeMap<TermId, (usize, u32)> {
    let mut stats: BTreeMap<TermId, (usize, u32)> = BTreeMap::new();
    for &ord in ords {
        for &(tid, tf) in index.doc_terms(ord) {
            let e = stats.entry(tid).or_default();
            e.0 += 1;
            e.1 += tf;
        }
    }
    stats
}

/// Refines `query` from the documents the user marked relevant.
///
/// Terms found in `r` marked documents get `c' = 1 − (1−c)(1−alpha)^r`;
/// the `k_expansion` best other terms by `r · idf` are appended with weight
/// `beta` and full confidence.
pub fn relevance_feedback(
    query: &WeightedQuery,
    marked: &[String],
    index: &InvertedIndex,
    params: &RankingParams,
) -> Result<WeightedQuery, PirsError> {
    let ords = marked_ords(marked, index)?;
    let stats = marked_term_stats(&ords, index);
    let r_of = |term: &str| {
        index
            .term_id(term)
            .and_then(|id| stats.get(&id))
            .map_or(0, |s| s.0)
    };

    let mut terms: Vec<QueryTerm> = query
        .terms
        .iter()
        .map(|t| {
            let r = r_of(&t.term);
            let mut boosted = t.clone();
            if r > 0 {
                let miss = (1.0 - t.confidence) * (1.0 - params.alpha).powi(r as i32);
                boosted.confidence = (1.0 - miss).clamp(t.confidence, 1.0);
            }
            boosted
        })
        .collect();

    let n = index.doc_count();
    let mut offers: Vec<(f64, &str)> = stats
        .iter()
        .map(|(&tid, &(r, _))| {
            let term = index.term(tid);
            (r as f64 * idf(n, index.postings_by_id(tid).len()), term)
        })
        .filter(|(_, term)| !query.contains_term(term))
        .collect();
    offers.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    terms.extend(
        offers
            .into_iter()
            .take(params.k_expansion)
            .map(|(_, term)| QueryTerm::new(term, term).with_weight(params.beta)),
    );

    Ok(WeightedQuery::new(terms, QueryOrigin::FeedbackRefined))
}

/// Finds in-document replacements for query words absent from every marked
/// document.
///
/// Ordering: support, then similarity, then lower recognition confidence of
/// the query word, then spelling similarity, then how often the candidate
/// occurs in the marked documents, then query position and candidate text.
pub fn detect_misrecognitions(
    query: &WeightedQuery,
    marked: &[String],
    index: &InvertedIndex,
    sim_threshold: f64,
) -> Result<Vec<MisrecognitionSuggestion>, PirsError> {
    let ords = marked_ords(marked, index)?;
    let stats = marked_term_stats(&ords, index);
    let present: BTreeSet<&str> = stats.keys().map(|&id| index.term(id)).collect();

    let mut scored = Vec::new();
    let mut seen = BTreeSet::new();
    for (pos, qt) in query.terms.iter().enumerate() {
        if present.contains(qt.term.as_str()) || !seen.insert(qt.term.as_str()) {
            continue;
        }
        let spoken = if qt.surface.is_empty() {
            qt.term.to_lowercase()
        } else {
            qt.surface.to_lowercase()
        };
        for (&tid, &(support, tf)) in &stats {
            let candidate = index.term(tid);
            if query.contains_term(candidate) {
                continue;
            }
            let spelling = normalized_similarity(&spoken, candidate);
            let similarity = if super::sounds_alike(&spoken, candidate) {
                1.0
            } else {
                spelling
            };
            if similarity >= sim_threshold {
                scored.push((
                    spelling,
                    tf,
                    pos,
                    MisrecognitionSuggestion {
                        original: qt.clone(),
                        candidate: candidate.to_string(),
                        similarity,
                        support,
                    },
                ));
            }
        }
    }
    scored.sort_by(|a, b| {
        b.3.support
            .cmp(&a.3.support)
            .then(b.3.similarity.total_cmp(&a.3.similarity))
            .then(a.3.original.confidence.total_cmp(&b.3.original.confidence))
            .then(b.0.total_cmp(&a.0))
            .then(b.1.cmp(&a.1))
            .then(a.2.cmp(&b.2))
            .then_with(|| a.3.candidate.cmp(&b.3.candidate))
    });
    Ok(scored.into_iter().map(|s| s.3).collect())
}
