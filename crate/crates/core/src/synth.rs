//! Deterministic synthetic "desk" collection: short documents over a
//! Zipfian pseudo-word vocabulary, grouped by topic, with one query per
//! topic and topic membership as relevance.
//!
//! Pseudo-words are built from consonant-vowel syllables, so many of them
//! share a Soundex code with a near spelling.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Analyzer, Document};
use crate::eval::Qrels;

const CONSONANTS: &[u8] = b"bdgklmnprstv";
const VOWELS: &[u8] = b"aeiou";
const FILLERS: &[&str] = &[
    "the", "of", "and", "in", "to", "a", "for", "with", "on", "by",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeskConfig {
    pub documents: usize,
    pub topics: usize,
    pub vocabulary: usize,
    pub words_per_topic: usize,
    /// Mean probability that a content word of a document comes from its
    /// topic; each document draws its own rate around this mean.
    pub topicality: f64,
    pub zipf_exponent: f64,
    pub seed: u64,
}

impl Default for DeskConfig {
    fn default() -> Self {
        Self {
            documents: 500,
            topics: 20,
            vocabulary: 4000,
            words_per_topic: 30,
            topicality: 0.12,
            zipf_exponent: 1.0,
            seed: 1998,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeskCollection {
    pub documents: Vec<Document>,
    pub queries: Vec<Query>,
    pub qrels: Qrels,
}

fn pseudo_word(rng: &mut impl Rng) -> String {
    let syllables = rng.random_range(2..=4);
    let mut w = String::with_capacity(syllables * 2);
    for _ in 0..syllables {
        w.push(CONSONANTS[rng.random_range(0..CONSONANTS.len())] as char);
        w.push(VOWELS[rng.random_range(0..VOWELS.len())] as char);
    }
    w
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Generates the collection described by `config`.
pub fn generate(config: &DeskConfig, analyzer: &Analyzer) -> DeskCollection {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut seen = BTreeSet::new();
    let mut vocab = Vec::with_capacity(config.vocabulary);
    while vocab.len() < config.vocabulary {
        let w = pseudo_word(&mut rng);
        if !analyzer.is_stopword(&w) && seen.insert(w.clone()) {
            vocab.push(w);
        }
    }

    // Topic words come from the middle of the frequency ranking, disjoint
    // across topics.
    let mid_start = config.vocabulary / 10;
    let mut pool: Vec<usize> =
        (mid_start..mid_start + config.topics * config.words_per_topic * 2).collect();
    pool.shuffle(&mut rng);
    let topics: Vec<Vec<usize>> = pool
        .chunks(config.words_per_topic)
        .take(config.topics)
        .map(<[usize]>::to_vec)
        .collect();

    let background = WeightedIndex::new(
        (1..=config.vocabulary).map(|r| 1.0 / (r as f64).powf(config.zipf_exponent)),
    )
    .expect("positive weights");
    let topical = WeightedIndex::new((1..=config.words_per_topic).map(|r| 1.0 / r as f64))
        .expect("positive weights");

    let mut documents = Vec::with_capacity(config.documents);
    let mut qrels = Qrels::new();
    let width = config.documents.to_string().len().max(3);
    for d in 0..config.documents {
        let topic = d % config.topics;
        let doc_id = format!("DSK{:0width$}", d + 1);
        let words = &topics[topic];
        let rate = config.topicality * rng.random_range(0.25..1.75);
        let n_sentences = rng.random_range(3..=8);
        let mut sentences = Vec::with_capacity(n_sentences);
        for _ in 0..n_sentences {
            let len = rng.random_range(6..=12);
            let mut s = Vec::with_capacity(len);
            for i in 0..len {
                if i > 0 && rng.random::<f64>() < 0.25 {
                    s.push(FILLERS[rng.random_range(0..FILLERS.len())].to_string());
                }
                let w = if rng.random::<f64>() < rate {
                    &vocab[words[topical.sample(&mut rng)]]
                } else {
                    &vocab[background.sample(&mut rng)]
                };
                s.push(w.clone());
            }
            s[0] = capitalize(&s[0]);
            sentences.push(s.join(" ") + ".");
        }
        let title = (0..3)
            .map(|_| capitalize(&vocab[words[topical.sample(&mut rng)]]))
            .collect::<Vec<_>>()
            .join(" ");
        qrels
            .entry(format!("Q{:02}", topic + 1))
            .or_default()
            .insert(doc_id.clone());
        documents.push(Document::new(doc_id, title, sentences, analyzer));
    }

    let queries = topics
        .iter()
        .enumerate()
        .map(|(t, words)| {
            let n = rng.random_range(3..=4);
            Query {
                query_id: format!("Q{:02}", t + 1),
                text: words
                    .choose_multiple(&mut rng, n)
                    .map(|&i| vocab[i].as_str())
                    .collect::<Vec<_>>()
                    .join(" "),
            }
        })
        .collect();

    DeskCollection {
        documents,
        queries,
        qrels,
    }
}

/// TREC-style markup readable by the corpus loader.
pub fn to_trec(documents: &[Document]) -> String {
    let mut out = String::new();
    for d in documents {
        let _ = write!(
            out,
            "<DOC>\n<DOCNO> {} </DOCNO>\n<HL> {} </HL>\n<TEXT>\n",
            d.doc_id, d.title
        );
        for s in &d.sentences {
            out.push_str(s);
            out.push('\n');
        }
        out.push_str("</TEXT>\n</DOC>\n");
    }
    out
}

/// `query_id TAB text` lines.
pub fn queries_to_tsv(queries: &[Query]) -> String {
    queries
        .iter()
        .map(|q| format!("{}\t{}\n", q.query_id, q.text))
        .collect()
}

pub fn parse_queries(text: &str) -> Result<Vec<Query>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| {
            let (id, q) = l
                .split_once('\t')
                .ok_or_else(|| format!("line {}: expected query_id TAB text", i + 1))?;
            Ok(Query {
                query_id: id.trim().to_string(),
                text: q.trim().to_string(),
            })
        })
        .collect()
}

/// `query_id TAB doc_id` lines.
pub fn qrels_to_tsv(qrels: &Qrels) -> String {
    let mut out = String::new();
    for (q, docs) in qrels {
        for d in docs {
            let _ = writeln!(out, "{q}\t{d}");
        }
    }
    out
}

/// Query text by id.
pub fn query_map(queries: &[Query]) -> BTreeMap<&str, &str> {
    queries
        .iter()
        .map(|q| (q.query_id.as_str(), q.text.as_str()))
        .collect()
}
