//! Simulated speech recognition: a parametric word-error model with
//! confidences, multi-recognizer merging and word error measurement.
//!
//! Everything here is a pure function of its inputs and an explicit seed.

mod merge;
mod wer;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::{Arc, Mutex};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{normalize_term, raw_tokens, Analyzer};
use crate::pirs::{word_similarity, QueryOrigin, QueryTerm, WeightedQuery};

pub use merge::{merge_transcripts, MergedTranscript, MergedWord};
pub use wer::{align_words, word_accuracy, AlignOp, WerReport};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("nothing to recognize: the utterance has no words")]
    EmptyUtterance,
    #[error("substitution errors need a non-empty confusion vocabulary")]
    EmptyVocabulary,
    #[error("at least one transcript is required")]
    NoTranscripts,
    #[error("the reference must contain at least one word")]
    EmptyReference,
    #[error("invalid error model: {0}")]
    InvalidModel(String),
    #[error("line {line}: {reason}")]
    BadTranscriptLine { line: usize, reason: String },
}

/// Proportions of substitution, deletion and insertion among errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMix {
    pub substitution: f64,
    pub deletion: f64,
    pub insertion: f64,
}

impl Default for ErrorMix {
    fn default() -> Self {
        Self {
            substitution: 0.7,
            deletion: 0.2,
            insertion: 0.1,
        }
    }
}

/// Closed interval inside `[0, 1]` that confidences are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRange {
    pub low: f64,
    pub high: f64,
}

impl ConfidenceRange {
    pub const fn new(low: f64, high: f64) -> Self {
        Self { low, high }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.high > self.low {
            rng.random_range(self.low..=self.high)
        } else {
            self.low
        }
    }

    fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.low) && (0.0..=1.0).contains(&self.high) && self.low <= self.high
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ErrorModel {
    /// Probability that a word is recognized without any error.
    pub accuracy: f64,
    pub error_mix: ErrorMix,
    pub conf_correct: ConfidenceRange,
    pub conf_error: ConfidenceRange,
}

impl Default for ErrorModel {
    fn default() -> Self {
        Self {
            accuracy: 0.8,
            error_mix: ErrorMix::default(),
            conf_correct: ConfidenceRange::new(0.7, 1.0),
            conf_error: ConfidenceRange::new(0.2, 0.8),
        }
    }
}

impl ErrorModel {
    pub fn with_accuracy(mut self, accuracy: f64) -> Self {
        self.accuracy = accuracy;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidModel(m.to_string()));
        if !(0.0..=1.0).contains(&self.accuracy) {
            return bad("accuracy must lie in [0, 1]");
        }
        let ErrorMix {
            substitution: s,
            deletion: d,
            insertion: i,
        } = self.error_mix;
        if s < 0.0 || d < 0.0 || i < 0.0 || ((s + d + i) - 1.0).abs() > 1e-9 {
            return bad("error mix must be nonnegative and sum to 1");
        }
        if !self.conf_correct.is_valid() || !self.conf_error.is_valid() {
            return bad("confidence intervals must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Similarity-weighted substitution candidates for one word.
struct Confusions {
    candidates: Vec<u32>,
    dist: Option<WeightedIndex<f64>>,
}

struct VocabInner {
    words: Vec<String>,
    cache: Mutex<HashMap<String, Arc<Confusions>>>,
}

/// Words a simulated recognizer can emit in error, with cached
/// substitution distributions.
#[derive(Clone)]
pub struct ConfusionVocabulary(Arc<VocabInner>);

impl std::fmt::Debug for ConfusionVocabulary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConfusionVocabulary")
            .field("len", &self.0.words.len())
            .finish()
    }
}

impl ConfusionVocabulary {
    /// Deduplicates and sorts `words`.
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut words: Vec<String> = words.into_iter().map(Into::into).collect();
        words.sort();
        words.dedup();
        Self(Arc::new(VocabInner {
            words,
            cache: Mutex::new(HashMap::new()),
        }))
    }

    pub fn words(&self) -> &[String] {
        &self.0.words
    }

    pub fn len(&self) -> usize {
        self.0.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.words.is_empty()
    }

    fn confusions(&self, word: &str) -> Arc<Confusions> {
        if let Some(c) = self.0.cache.lock().expect("cache lock").get(word) {
            return Arc::clone(c);
        }
        let mut candidates = Vec::new();
        let mut weights = Vec::new();
        for (i, v) in self.0.words.iter().enumerate() {
            if v == word {
                continue;
            }
            let s = word_similarity(word, v);
            if s > 0.0 {
                candidates.push(i as u32);
                weights.push(s);
            }
        }
        let dist = WeightedIndex::new(&weights).ok();
        let built = Arc::new(Confusions { candidates, dist });
        self.0
            .cache
            .lock()
            .expect("cache lock")
            .entry(word.to_string())
            .or_insert(built)
            .clone()
    }

    /// Draws a substitute for `word`, with probability proportional to
    /// spelling/sound similarity. Falls back to a uniform draw when no
    /// vocabulary word resembles `word` at all.
    pub fn substitute(&self, word: &str, rng: &mut impl Rng) -> Option<&str> {
        let conf = self.confusions(word);
        if let Some(dist) = &conf.dist {
            let i = conf.candidates[dist.sample(rng)];
            return Some(&self.0.words[i as usize]);
        }
        let others: Vec<&String> = self.0.words.iter().filter(|v| *v != word).collect();
        if others.is_empty() {
            return None;
        }
        Some(others[rng.random_range(0..others.len())])
    }

    pub fn uniform(&self, rng: &mut impl Rng) -> Option<&str> {
        if self.0.words.is_empty() {
            return None;
        }
        Some(&self.0.words[rng.random_range(0..self.0.words.len())])
    }
}

/// Simulation bookkeeping on an emitted word. Never read by retrieval.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WordTruth {
    Correct,
    Substituted { original: String },
    Inserted,
}

/// What happened to one uttered word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WordOutcome {
    Correct,
    Substituted,
    Deleted,
    /// Recognized, then followed by a spurious extra word.
    Inserted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscribedWord {
    pub surface: String,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<WordTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub recognizer_id: String,
    pub words: Vec<TranscribedWord>,
    /// One entry per uttered word; empty outside simulation.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub outcomes: Vec<WordOutcome>,
}

impl Transcript {
    pub fn surfaces(&self) -> Vec<&str> {
        self.words.iter().map(|w| w.surface.as_str()).collect()
    }

    /// Fraction of uttered words recognized without an error event.
    pub fn correct_fraction(&self) -> Option<f64> {
        if self.outcomes.is_empty() {
            return None;
        }
        let ok = self
            .outcomes
            .iter()
            .filter(|o| **o == WordOutcome::Correct)
            .count();
        Some(ok as f64 / self.outcomes.len() as f64)
    }

    /// `surface TAB confidence` lines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for w in &self.words {
            let _ = writeln!(out, "{}\t{}", w.surface, w.confidence);
        }
        out
    }

    pub fn from_tsv(recognizer_id: &str, text: &str) -> Result<Self, SimError> {
        let mut words = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |reason: &str| SimError::BadTranscriptLine {
                line: i + 1,
                reason: reason.to_string(),
            };
            let (surface, conf) = line
                .split_once('\t')
                .ok_or_else(|| bad("expected surface<TAB>confidence"))?;
            let confidence: f64 = conf
                .trim()
                .parse()
                .map_err(|_| bad("confidence is not a number"))?;
            if !(0.0..=1.0).contains(&confidence) {
                return Err(bad("confidence outside [0, 1]"));
            }
            if surface.is_empty() {
                return Err(bad("empty surface"));
            }
            words.push(TranscribedWord {
                surface: surface.to_string(),
                confidence,
                truth: None,
            });
        }
        Ok(Self {
            recognizer_id: recognizer_id.to_string(),
            words,
            outcomes: Vec::new(),
        })
    }
}

/// Mixes a stream number into a seed (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Corrupts `true_words` through the error model.
pub fn corrupt<S: AsRef<str>>(
    true_words: &[S],
    model: &ErrorModel,
    vocabulary: &ConfusionVocabulary,
    seed: u64,
) -> Result<Transcript, SimError> {
    corrupt_as("sim", true_words, model, vocabulary, seed)
}

fn corrupt_as<S: AsRef<str>>(
    recognizer_id: &str,
    true_words: &[S],
    model: &ErrorModel,
    vocabulary: &ConfusionVocabulary,
    seed: u64,
) -> Result<Transcript, SimError> {
    if true_words.is_empty() {
        return Err(SimError::EmptyUtterance);
    }
    model.validate()?;
    let needs_vocab = model.accuracy < 1.0
        && (model.error_mix.substitution > 0.0 || model.error_mix.insertion > 0.0);
    if needs_vocab && vocabulary.is_empty() {
        return Err(SimError::EmptyVocabulary);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut words = Vec::with_capacity(true_words.len() + 2);
    let mut outcomes = Vec::with_capacity(true_words.len());
    let mix = model.error_mix;
    for w in true_words {
        let w = w.as_ref();
        let correct = |rng: &mut ChaCha8Rng| TranscribedWord {
            surface: w.to_string(),
            confidence: model.conf_correct.sample(rng),
            truth: Some(WordTruth::Correct),
        };
        if rng.random::<f64>() < model.accuracy {
            words.push(correct(&mut rng));
            outcomes.push(WordOutcome::Correct);
            continue;
        }
        let kind = rng.random::<f64>();
        if kind < mix.substitution {
            let sub = vocabulary
                .substitute(w, &mut rng)
                .ok_or(SimError::EmptyVocabulary)?
                .to_string();
            words.push(TranscribedWord {
                surface: sub,
                confidence: model.conf_error.sample(&mut rng),
                truth: Some(WordTruth::Substituted {
                    original: w.to_string(),
                }),
            });
            outcomes.push(WordOutcome::Substituted);
        } else if kind < mix.substitution + mix.deletion {
            outcomes.push(WordOutcome::Deleted);
        } else {
            words.push(correct(&mut rng));
            let extra = vocabulary
                .uniform(&mut rng)
                .ok_or(SimError::EmptyVocabulary)?
                .to_string();
            words.push(TranscribedWord {
                surface: extra,
                confidence: model.conf_error.sample(&mut rng),
                truth: Some(WordTruth::Inserted),
            });
            outcomes.push(WordOutcome::Inserted);
        }
    }
    Ok(Transcript {
        recognizer_id: recognizer_id.to_string(),
        words,
        outcomes,
    })
}

/// Output of one simulated multi-recognizer utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcription {
    /// The uttered words after tokenization.
    pub reference: Vec<String>,
    pub merged: MergedTranscript,
    pub transcripts: Vec<Transcript>,
}

/// Words of an utterance as a recognizer would hear them: every token,
/// stopwords included, case-folded.
pub fn utterance_words(text: &str) -> Vec<String> {
    raw_tokens(text).into_iter().map(|t| t.term).collect()
}

/// Runs `n_recognizers` independent corruptions of `true_query` and merges them.
/// Recognizer `i` uses seed `derive_seed(seed, i)`.
pub fn transcribe_query(
    true_query: &str,
    n_recognizers: usize,
    model: &ErrorModel,
    vocabulary: &ConfusionVocabulary,
    seed: u64,
) -> Result<Transcription, SimError> {
    transcribe_words(
        utterance_words(true_query),
        n_recognizers,
        model,
        vocabulary,
        seed,
    )
}

pub fn transcribe_words(
    reference: Vec<String>,
    n_recognizers: usize,
    model: &ErrorModel,
    vocabulary: &ConfusionVocabulary,
    seed: u64,
) -> Result<Transcription, SimError> {
    if n_recognizers == 0 {
        return Err(SimError::NoTranscripts);
    }
    let transcripts = (0..n_recognizers)
        .map(|i| {
            corrupt_as(
                &format!("rec{i}"),
                &reference,
                model,
                vocabulary,
                derive_seed(seed, i as u64),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let merged = merge_transcripts(&transcripts)?;
    Ok(Transcription {
        reference,
        merged,
        transcripts,
    })
}

/// A query term together with the merged-transcript position it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionedTerm {
    pub position: usize,
    pub term: QueryTerm,
}

/// Turns a merged transcript into query terms, dropping stopwords.
/// Each term's confidence is the combined confidence of its word.
pub fn spoken_terms(merged: &MergedTranscript, analyzer: &Analyzer) -> Vec<PositionedTerm> {
    merged
        .words
        .iter()
        .enumerate()
        .filter_map(|(position, w)| {
            let term = normalize_term(&w.surface);
            if term.is_empty() || analyzer.is_stopword(&term) {
                return None;
            }
            Some(PositionedTerm {
                position,
                term: QueryTerm::new(term, w.surface.clone())
                    .with_confidence(w.combined_confidence),
            })
        })
        .collect()
}

pub fn spoken_query(merged: &MergedTranscript, analyzer: &Analyzer) -> WeightedQuery {
    WeightedQuery::new(
        spoken_terms(merged, analyzer)
            .into_iter()
            .map(|p| p.term)
            .collect(),
        QueryOrigin::SpokenSimulated,
    )
}
