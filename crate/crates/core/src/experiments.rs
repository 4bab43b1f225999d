//! Monte-Carlo experiments on spoken-query degradation: transcript merging,
//! rare-word substitutions, word deletions and misrecognition recovery.
//!
//! Trials run in parallel but every result is collected in trial order and
//! reduced sequentially, so output does not depend on thread scheduling.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{load_corpus, Collection, CorpusError, CorpusFormat};
use crate::eval::{average_precision, parse_qrels, EvalError, Qrels};
use crate::pirs::{
    self, detect_misrecognitions, soundex, ConfidenceMode, QueryOrigin, QueryTerm, RankingParams,
    WeightedQuery,
};
use crate::synth::{parse_queries, Query};
use crate::vdm_sim::{self, derive_seed, word_accuracy, ConfusionVocabulary, ErrorModel, SimError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{path}: {reason}")]
    Input { path: String, reason: String },
    #[error("invalid experiment setup: {0}")]
    Setup(String),
}

/// A collection with queries and relevance judgments.
#[derive(Debug)]
pub struct Workbench {
    pub collection: Collection,
    pub queries: Vec<Query>,
    pub qrels: Qrels,
    pub params: RankingParams,
    vocabulary: ConfusionVocabulary,
}

impl Workbench {
    pub fn new(collection: Collection, queries: Vec<Query>, qrels: Qrels) -> Self {
        let vocabulary = ConfusionVocabulary::new(collection.index().vocabulary().iter().cloned());
        Self {
            collection,
            queries,
            qrels,
            params: RankingParams::default(),
            vocabulary,
        }
    }

    /// Loads `corpus.trec`, `queries.tsv` and `qrels.tsv` from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, ExperimentError> {
        let collection = Collection::build(
            load_corpus(
                &dir.join("corpus.trec"),
                CorpusFormat::TrecSgml,
                &Default::default(),
            )?,
            Default::default(),
        )?;
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read_to_string(&p).map_err(|e| ExperimentError::Input {
                path: p.display().to_string(),
                reason: e.to_string(),
            })
        };
        let queries =
            parse_queries(&read("queries.tsv")?).map_err(|reason| ExperimentError::Input {
                path: dir.join("queries.tsv").display().to_string(),
                reason,
            })?;
        let qrels = parse_qrels(&read("qrels.tsv")?)?;
        Ok(Self::new(collection, queries, qrels))
    }

    pub fn vocabulary(&self) -> &ConfusionVocabulary {
        &self.vocabulary
    }

    /// The typed form of query `i`.
    pub fn clean_query(&self, i: usize) -> WeightedQuery {
        WeightedQuery::typed(&self.queries[i].text, self.collection.analyzer())
    }

    /// Average precision of `query` for query `i` under `mode`.
    pub fn average_precision(&self, i: usize, query: &WeightedQuery, mode: ConfidenceMode) -> f64 {
        let params = RankingParams {
            confidence_mode: mode,
            ..self.params
        };
        let ranked = pirs::rank(
            query,
            self.collection.index(),
            &params,
            params.default_threshold,
        );
        let ids: Vec<&str> = ranked.doc_ids().collect();
        let empty = BTreeSet::new();
        average_precision(
            &ids,
            self.qrels.get(&self.queries[i].query_id).unwrap_or(&empty),
        )
    }

    /// Mean average precision of the clean queries.
    pub fn clean_map(&self) -> f64 {
        mean(
            (0..self.queries.len())
                .map(|i| self.average_precision(i, &self.clean_query(i), ConfidenceMode::Ignore)),
        )
    }

    /// Index terms occurring in at least one and at most `max_df` documents.
    pub fn rare_terms(&self, max_df: usize) -> Vec<&str> {
        let index = self.collection.index();
        index
            .vocabulary()
            .iter()
            .filter(|t| (1..=max_df).contains(&index.df(t)))
            .map(String::as_str)
            .collect()
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeExperimentConfig {
    pub accuracies: Vec<f64>,
    pub n_recognizers: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    /// Everything but the accuracy, which each row overrides.
    pub model: ErrorModel,
}

impl Default for MergeExperimentConfig {
    fn default() -> Self {
        Self {
            accuracies: vec![0.6, 0.8, 0.95, 1.0],
            n_recognizers: vec![1, 2, 3],
            trials: 100,
            seed: 42,
            model: ErrorModel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeExperimentRow {
    pub accuracy: f64,
    pub n_recognizers: usize,
    pub trials: usize,
    pub mean_wer: f64,
    pub mean_word_accuracy: f64,
    pub mean_map_weighted: f64,
    pub mean_map_unweighted: f64,
}

struct TrialScore {
    wer: f64,
    accuracy: f64,
    ap_weighted: f64,
    ap_unweighted: f64,
}

/// For every (accuracy, n) pair, transcribes each query `trials` times with
/// `n` recognizers, merges, and scores WER and MAP with and without
/// confidence weighting. Trial `t` of query `q` uses the same seed for every
/// pair, so rows are paired comparisons.
pub fn merge_experiment(
    bench: &Workbench,
    config: &MergeExperimentConfig,
) -> Result<Vec<MergeExperimentRow>, ExperimentError> {
    if config.trials == 0 {
        return Err(ExperimentError::Setup("trials must be at least 1".into()));
    }
    if bench.queries.is_empty() {
        return Err(ExperimentError::Setup("no queries".into()));
    }
    let nq = bench.queries.len();
    let mut rows = Vec::new();
    for &accuracy in &config.accuracies {
        let model = config.model.with_accuracy(accuracy);
        model.validate()?;
        for &n in &config.n_recognizers {
            let scores = (0..config.trials * nq)
                .into_par_iter()
                .map(|k| {
                    let q = k % nq;
                    let t = vdm_sim::transcribe_query(
                        &bench.queries[q].text,
                        n,
                        &model,
                        bench.vocabulary(),
                        derive_seed(config.seed, k as u64),
                    )?;
                    let report = word_accuracy(&t.reference, &t.merged.surfaces())?;
                    let query = vdm_sim::spoken_query(&t.merged, bench.collection.analyzer());
                    Ok(TrialScore {
                        wer: report.wer,
                        accuracy: report.word_accuracy(),
                        ap_weighted: bench.average_precision(
                            q,
                            &query,
                            ConfidenceMode::Multiplicative,
                        ),
                        ap_unweighted: bench.average_precision(q, &query, ConfidenceMode::Ignore),
                    })
                })
                .collect::<Result<Vec<_>, SimError>>()?;
            rows.push(MergeExperimentRow {
                accuracy,
                n_recognizers: n,
                trials: config.trials,
                mean_wer: mean(scores.iter().map(|s| s.wer)),
                mean_word_accuracy: mean(scores.iter().map(|s| s.accuracy)),
                mean_map_weighted: mean(scores.iter().map(|s| s.ap_weighted)),
                mean_map_unweighted: mean(scores.iter().map(|s| s.ap_unweighted)),
            });
        }
    }
    Ok(rows)
}

pub fn merge_rows_to_csv(rows: &[MergeExperimentRow]) -> String {
    let mut out = String::from("accuracy,n_recognizers,trials,mean_wer,mean_word_accuracy,mean_map_weighted,mean_map_unweighted\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{:.6}",
            r.accuracy,
            r.n_recognizers,
            r.trials,
            r.mean_wer,
            r.mean_word_accuracy,
            r.mean_map_weighted,
            r.mean_map_unweighted
        );
    }
    out
}

pub fn merge_rows_to_table(rows: &[MergeExperimentRow]) -> String {
    let mut out = format!(
        "{:>8}  {:>2}  {:>6}  {:>8}  {:>10}  {:>12}  {:>12}\n",
        "accuracy", "n", "trials", "mean WER", "word acc.", "MAP weighted", "MAP plain"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:>8.2}  {:>2}  {:>6}  {:>8.4}  {:>10.4}  {:>12.4}  {:>12.4}",
            r.accuracy,
            r.n_recognizers,
            r.trials,
            r.mean_wer,
            r.mean_word_accuracy,
            r.mean_map_weighted,
            r.mean_map_unweighted
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DamageConfig {
    pub trials: usize,
    pub seed: u64,
    /// Substitutes are drawn from terms with document frequency up to this.
    pub max_df: usize,
    /// Source of the confidences given to correct and substituted words.
    pub model: ErrorModel,
}

impl Default for DamageConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            seed: 7,
            max_df: 2,
            model: ErrorModel::default(),
        }
    }
}

/// MAPs over all queries for one trial, each query having one word damaged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DamageTrial {
    pub trial: usize,
    pub clean_map: f64,
    /// Rare-word substitution, confidences ignored.
    pub substituted_unweighted: f64,
    /// Rare-word substitution, confidences applied.
    pub substituted_weighted: f64,
    /// The same word deleted instead.
    pub deleted: f64,
}

impl DamageTrial {
    fn drop(&self, map: f64) -> f64 {
        if self.clean_map > 0.0 {
            (self.clean_map - map) / self.clean_map
        } else {
            0.0
        }
    }

    pub fn unweighted_drop(&self) -> f64 {
        self.drop(self.substituted_unweighted)
    }

    pub fn weighted_drop(&self) -> f64 {
        self.drop(self.substituted_weighted)
    }

    pub fn deletion_drop(&self) -> f64 {
        self.drop(self.deleted)
    }
}

/// Replaces one word of every query with a rare index term (or deletes it)
/// and measures the MAP loss.
pub fn damage_experiment(
    bench: &Workbench,
    config: &DamageConfig,
) -> Result<Vec<DamageTrial>, ExperimentError> {
    config.model.validate()?;
    let rare = bench.rare_terms(config.max_df);
    if rare.is_empty() {
        return Err(ExperimentError::Setup(format!(
            "no index term has df <= {}",
            config.max_df
        )));
    }
    let clean_map = bench.clean_map();
    let nq = bench.queries.len();
    let trials = (0..config.trials)
        .into_par_iter()
        .map(|trial| {
            let mut sums = [0.0f64; 3];
            for q in 0..nq {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(config.seed, (trial * nq + q) as u64));
                let clean = bench.clean_query(q);
                if clean.is_empty() {
                    continue;
                }
                let pos = rng.random_range(0..clean.terms.len());
                let substitute = loop {
                    let w = *rare.choose(&mut rng).expect("nonempty");
                    if !clean.contains_term(w) {
                        break w;
                    }
                };
                let mut weighted = clean.clone();
                for (i, t) in weighted.terms.iter_mut().enumerate() {
                    if i == pos {
                        *t = QueryTerm::new(substitute, substitute);
                        t.confidence = config.model.conf_error.sample(&mut rng);
                    } else {
                        t.confidence = config.model.conf_correct.sample(&mut rng);
                    }
                }
                weighted.origin = QueryOrigin::SpokenSimulated;
                let mut deleted = clean.clone();
                deleted.terms.remove(pos);
                sums[0] += bench.average_precision(q, &weighted, ConfidenceMode::Ignore);
                sums[1] += bench.average_precision(q, &weighted, ConfidenceMode::Multiplicative);
                sums[2] += bench.average_precision(q, &deleted, ConfidenceMode::Ignore);
            }
            let n = nq.max(1) as f64;
            DamageTrial {
                trial,
                clean_map,
                substituted_unweighted: sums[0] / n,
                substituted_weighted: sums[1] / n,
                deleted: sums[2] / n,
            }
        })
        .collect();
    Ok(trials)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DamageSummary {
    pub trials: usize,
    pub clean_map: f64,
    pub mean_unweighted_drop: f64,
    pub mean_weighted_drop: f64,
    pub mean_deletion_drop: f64,
    /// Trials in which weighting strictly reduced the drop.
    pub weighted_better: usize,
}

pub fn summarize_damage(trials: &[DamageTrial]) -> DamageSummary {
    DamageSummary {
        trials: trials.len(),
        clean_map: trials.first().map_or(0.0, |t| t.clean_map),
        mean_unweighted_drop: mean(trials.iter().map(DamageTrial::unweighted_drop)),
        mean_weighted_drop: mean(trials.iter().map(DamageTrial::weighted_drop)),
        mean_deletion_drop: mean(trials.iter().map(DamageTrial::deletion_drop)),
        weighted_better: trials
            .iter()
            .filter(|t| t.weighted_drop() < t.unweighted_drop())
            .count(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryScenario {
    pub query_id: String,
    pub true_word: String,
    pub neighbor: String,
    pub marked_doc: String,
    pub top_candidate: Option<String>,
}

impl RecoveryScenario {
    pub fn recovered(&self) -> bool {
        self.top_candidate.as_deref() == Some(self.true_word.as_str())
    }
}

/// Builds `scenarios` cases in which one query word is replaced by another
/// index term with the same Soundex code, marks a relevant document that
/// contains the true word but not the replacement, and records the first
/// suggestion of misrecognition detection.
/// Query words carry confidences drawn from `model`: the replaced word from
/// `conf_error`, the others from `conf_correct`.
pub fn recovery_experiment(
    bench: &Workbench,
    scenarios: usize,
    model: &ErrorModel,
    seed: u64,
) -> Result<Vec<RecoveryScenario>, ExperimentError> {
    model.validate()?;
    let index = bench.collection.index();
    let code = |w: &str| soundex(w).ok();
    let vocab: Vec<(&str, Option<String>)> = index
        .vocabulary()
        .iter()
        .map(|w| (w.as_str(), code(w)))
        .collect();
    let out = (0..scenarios)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, s as u64));
            // Redraw until the sampled case admits a neighbor and a marked document.
            for _ in 0..1000 {
                let q = rng.random_range(0..bench.queries.len());
                let clean = bench.clean_query(q);
                if clean.is_empty() {
                    continue;
                }
                let pos = rng.random_range(0..clean.terms.len());
                let truth = clean.terms[pos].term.clone();
                let Some(truth_code) = code(&truth) else {
                    continue;
                };
                let qid = &bench.queries[q].query_id;
                let relevant: Vec<&String> = bench
                    .qrels
                    .get(qid)
                    .map(|r| r.iter().collect())
                    .unwrap_or_default();
                let holders: Vec<&String> = relevant
                    .into_iter()
                    .filter(|d| index.doc_ord(d).is_some_and(|o| index.tf(&truth, o) > 0))
                    .collect();
                let Some(&marked) = holders.choose(&mut rng) else {
                    continue;
                };
                let ord = index.doc_ord(marked).expect("relevant doc indexed");
                let neighbors: Vec<&str> = vocab
                    .iter()
                    .filter(|(w, c)| {
                        *w != truth
                            && c.as_deref() == Some(truth_code.as_str())
                            && index.tf(w, ord) == 0
                            && !clean.contains_term(w)
                    })
                    .map(|(w, _)| *w)
                    .collect();
                let Some(&neighbor) = neighbors.choose(&mut rng) else {
                    continue;
                };
                let mut spoken = clean.clone();
                for (i, t) in spoken.terms.iter_mut().enumerate() {
                    if i == pos {
                        *t = QueryTerm::new(neighbor, neighbor)
                            .with_confidence(model.conf_error.sample(&mut rng));
                    } else {
                        t.confidence = model.conf_correct.sample(&mut rng);
                    }
                }
                spoken.origin = QueryOrigin::SpokenSimulated;
                let suggestions = detect_misrecognitions(
                    &spoken,
                    std::slice::from_ref(marked),
                    index,
                    bench.params.sim_threshold,
                )
                .map_err(|e| ExperimentError::Setup(e.to_string()))?;
                return Ok(RecoveryScenario {
                    query_id: qid.clone(),
                    true_word: truth,
                    neighbor: neighbor.to_string(),
                    marked_doc: marked.clone(),
                    top_candidate: suggestions.first().map(|s| s.candidate.clone()),
                });
            }
            Err(ExperimentError::Setup(
                "no query word has a same-sounding neighbor".into(),
            ))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(out)
}
