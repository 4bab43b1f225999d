//! Document ingestion, tokenization and the inverted index.
//!
//! Terms are case-folded surfaces with every non-alphanumeric character
//! removed ("U.S." becomes "us"). There is no stemming. Chunks are split on
//! whitespace and on dashes and slashes, so "state-of-the-art" yields four
//! tokens.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dss::split_sentences;

/// Version tag of the shipped stoplist.
pub const STOPLIST_VERSION: &str = "v1";

const STOPLIST_V1: &str = include_str!("../data/stoplist-v1.txt");

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("input is not valid UTF-8 at byte offset {offset}")]
    Utf8 { offset: usize },
    #[error("malformed markup at byte offset {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
    #[error("empty document id at byte offset {offset}")]
    EmptyId { offset: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("index file {path}: {reason}")]
    BadIndexFile { path: PathBuf, reason: String },
}

/// A token as it appeared in text plus its normalized index term.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub term: String,
}

fn is_separator(c: char) -> bool {
    c.is_whitespace() || matches!(c, '-' | '/' | '\u{2013}' | '\u{2014}')
}

/// Normalize one chunk to its index term: lowercase, alphanumerics only.
pub fn normalize_term(chunk: &str) -> String {
    chunk
        .chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Splits text into tokens, keeping stopwords.
pub fn raw_tokens(text: &str) -> Vec<Token> {
    text.split(is_separator)
        .filter_map(|chunk| {
            let term = normalize_term(chunk);
            if term.is_empty() {
                return None;
            }
            let surface = chunk.trim_matches(|c: char| !c.is_alphanumeric());
            Some(Token {
                surface: surface.to_string(),
                term,
            })
        })
        .collect()
}

/// Tokenizer configuration: which terms are excluded from indexing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Analyzer {
    stoplist: BTreeSet<String>,
}

impl Default for Analyzer {
    fn default() -> Self {
        let stoplist = STOPLIST_V1
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect();
        Self { stoplist }
    }
}

impl Analyzer {
    pub fn with_stoplist<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            stoplist: words
                .into_iter()
                .map(|w| normalize_term(w.as_ref()))
                .collect(),
        }
    }

    /// No stopwords at all.
    pub fn empty() -> Self {
        Self {
            stoplist: BTreeSet::new(),
        }
    }

    pub fn is_stopword(&self, term: &str) -> bool {
        self.stoplist.contains(term)
    }

    pub fn stoplist(&self) -> impl Iterator<Item = &str> {
        self.stoplist.iter().map(String::as_str)
    }

    /// Tokens in text order with stopwords dropped.
    pub fn tokenize(&self, text: &str) -> Vec<Token> {
        raw_tokens(text)
            .into_iter()
            .filter(|t| !self.is_stopword(&t.term))
            .collect()
    }

    /// Index terms of `text`, in order.
    pub fn terms(&self, text: &str) -> Vec<String> {
        self.tokenize(text).into_iter().map(|t| t.term).collect()
    }
}

/// Tokenize with the default stoplist.
pub fn tokenize(text: &str) -> Vec<Token> {
    Analyzer::default().tokenize(text)
}

/// The retrievable unit: a titled article made of sentences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub sentences: Vec<String>,
    /// Number of index terms in the body.
    pub length_terms: usize,
}

impl Document {
    pub fn new(
        doc_id: impl Into<String>,
        title: impl Into<String>,
        sentences: Vec<String>,
        analyzer: &Analyzer,
    ) -> Self {
        let length_terms = sentences.iter().map(|s| analyzer.tokenize(s).len()).sum();
        Self {
            doc_id: doc_id.into(),
            title: title.into(),
            sentences,
            length_terms,
        }
    }

    /// Builds a document from unsegmented body text.
    pub fn from_body(
        doc_id: impl Into<String>,
        title: impl Into<String>,
        body: &str,
        analyzer: &Analyzer,
    ) -> Self {
        Self::new(doc_id, title, split_sentences(body), analyzer)
    }

    pub fn body(&self) -> String {
        self.sentences.join(" ")
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    /// `<DOC>` blocks with `<DOCNO>`, `<HL>`/`<HEADLINE>` and `<TEXT>`.
    TrecSgml,
    /// One file per document; file name is the id, first line the title.
    PlainDir,
}

impl std::str::FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "trec" | "trec-sgml" | "trec-sgml-like" => Ok(Self::TrecSgml),
            "plain" | "plain-dir" => Ok(Self::PlainDir),
            other => Err(format!(
                "unknown corpus format {other:?} (expected trec-sgml or plain-dir)"
            )),
        }
    }
}

fn decode(raw: &[u8]) -> Result<&str, CorpusError> {
    std::str::from_utf8(raw).map_err(|e| CorpusError::Utf8 {
        offset: e.valid_up_to(),
    })
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn strip_markup(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut in_tag = false;
    for c in s.chars() {
        match c {
            '<' => in_tag = true,
            '>' if in_tag => {
                in_tag = false;
                out.push(' ');
            }
            _ if !in_tag => out.push(c),
            _ => {}
        }
    }
    out
}

/// Every `<tag>…</tag>` field inside `block`, as (absolute offset, inner text).
fn fields<'a>(
    block: &'a str,
    base: usize,
    tag: &str,
) -> Result<Vec<(usize, &'a str)>, CorpusError> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let mut out = Vec::new();
    let mut pos = 0;
    while let Some(rel) = block[pos..].find(&open) {
        let start = pos + rel;
        let inner_start = start + open.len();
        let Some(end_rel) = block[inner_start..].find(&close) else {
            return Err(CorpusError::Malformed {
                offset: base + start,
                reason: format!("{open} is never closed"),
            });
        };
        let inner_end = inner_start + end_rel;
        out.push((base + start, &block[inner_start..inner_end]));
        pos = inner_end + close.len();
    }
    Ok(out)
}

/// Parses a TREC-style SGML stream into documents, preserving order.
pub fn parse_trec_sgml(raw: &[u8], analyzer: &Analyzer) -> Result<Vec<Document>, CorpusError> {
    let text = decode(raw)?;
    let mut docs = Vec::new();
    let mut seen = BTreeSet::new();
    let mut pos = 0;
    loop {
        let rest = &text[pos..];
        let skipped = rest.len() - rest.trim_start().len();
        pos += skipped;
        if pos >= text.len() {
            break;
        }
        if !text[pos..].starts_with("<DOC>") {
            return Err(CorpusError::Malformed {
                offset: pos,
                reason: "expected <DOC>".into(),
            });
        }
        let body_start = pos + "<DOC>".len();
        let Some(end_rel) = text[body_start..].find("</DOC>") else {
            return Err(CorpusError::Malformed {
                offset: pos,
                reason: "<DOC> is never closed".into(),
            });
        };
        let block = &text[body_start..body_start + end_rel];
        if let Some(nested) = block.find("<DOC>") {
            return Err(CorpusError::Malformed {
                offset: body_start + nested,
                reason: "nested <DOC>".into(),
            });
        }

        let docno = fields(block, body_start, "DOCNO")?;
        let Some(&(_, id)) = docno.first() else {
            return Err(CorpusError::Malformed {
                offset: pos,
                reason: "document has no <DOCNO>".into(),
            });
        };
        let id = id.trim();
        if id.is_empty() {
            return Err(CorpusError::EmptyId { offset: pos });
        }
        if !seen.insert(id.to_string()) {
            return Err(CorpusError::DuplicateId(id.to_string()));
        }

        let mut title = fields(block, body_start, "HL")?;
        if title.is_empty() {
            title = fields(block, body_start, "HEADLINE")?;
        }
        let title = title
            .first()
            .map(|(_, t)| collapse_whitespace(&strip_markup(t)))
            .unwrap_or_default();
        let body = fields(block, body_start, "TEXT")?
            .into_iter()
            .map(|(_, t)| collapse_whitespace(&strip_markup(t)))
            .collect::<Vec<_>>()
            .join(" ");

        docs.push(Document::from_body(id, title, &body, analyzer));
        pos = body_start + end_rel + "</DOC>".len();
    }
    Ok(docs)
}

/// Parses one plain-format document: first line is the title, the rest is body.
pub fn parse_plain_document(
    doc_id: &str,
    raw: &[u8],
    analyzer: &Analyzer,
) -> Result<Document, CorpusError> {
    let text = decode(raw)?;
    let (title, body) = text.split_once('\n').unwrap_or((text, ""));
    Ok(Document::from_body(
        doc_id,
        title.trim(),
        &collapse_whitespace(body),
        analyzer,
    ))
}

/// Loads a corpus from a file (TREC-style) or a directory (plain format).
///
/// Plain-format documents are read in file-name order so that the same
/// directory always yields the same collection.
pub fn load_corpus(
    path: &Path,
    format: CorpusFormat,
    analyzer: &Analyzer,
) -> Result<Vec<Document>, CorpusError> {
    let io = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    match format {
        CorpusFormat::TrecSgml => parse_trec_sgml(&fs::read(path).map_err(io)?, analyzer),
        CorpusFormat::PlainDir => {
            let mut entries = fs::read_dir(path)
                .map_err(io)?
                .collect::<Result<Vec<_>, _>>()
                .map_err(io)?;
            entries.sort_by_key(|e| e.file_name());
            let mut docs = Vec::new();
            let mut seen = BTreeSet::new();
            for entry in entries {
                let p = entry.path();
                if !p.is_file() {
                    continue;
                }
                let id = entry.file_name().to_string_lossy().into_owned();
                if id.starts_with('.') {
                    continue;
                }
                if !seen.insert(id.clone()) {
                    return Err(CorpusError::DuplicateId(id));
                }
                let raw = fs::read(&p).map_err(|source| CorpusError::Io {
                    path: p.clone(),
                    source,
                })?;
                docs.push(parse_plain_document(&id, &raw, analyzer)?);
            }
            Ok(docs)
        }
    }
}

/// Dense document ordinal inside an index.
pub type DocOrd = u32;
/// Dense term identifier inside an index.
pub type TermId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: DocOrd,
    pub tf: u32,
}

/// Immutable term statistics over a collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IndexData", into = "IndexData")]
pub struct InvertedIndex {
    /// Sorted vocabulary; position is the term id.
    vocabulary: Vec<String>,
    postings: Vec<Vec<Posting>>,
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    /// Per-document (term, tf), sorted by term id.
    forward: Vec<Vec<(TermId, u32)>>,
    term_lookup: HashMap<String, TermId>,
    doc_lookup: HashMap<String, DocOrd>,
}

#[derive(Serialize, Deserialize)]
struct IndexData {
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    postings: BTreeMap<String, Vec<Posting>>,
}

impl From<InvertedIndex> for IndexData {
    fn from(ix: InvertedIndex) -> Self {
        Self {
            postings: ix.vocabulary.into_iter().zip(ix.postings).collect(),
            doc_ids: ix.doc_ids,
            doc_lengths: ix.doc_lengths,
        }
    }
}

impl TryFrom<IndexData> for InvertedIndex {
    type Error = String;

    fn try_from(data: IndexData) -> Result<Self, String> {
        if data.doc_ids.len() != data.doc_lengths.len() {
            return Err("doc_ids and doc_lengths differ in length".into());
        }
        let n = data.doc_ids.len();
        for (term, list) in &data.postings {
            for p in list {
                if p.doc as usize >= n || p.tf == 0 {
                    return Err(format!("invalid posting for term {term:?}"));
                }
            }
        }
        let (vocabulary, postings): (Vec<_>, Vec<_>) = data.postings.into_iter().unzip();
        Ok(InvertedIndex::assemble(
            vocabulary,
            postings,
            data.doc_ids,
            data.doc_lengths,
        ))
    }
}

impl InvertedIndex {
    fn assemble(
        vocabulary: Vec<String>,
        postings: Vec<Vec<Posting>>,
        doc_ids: Vec<String>,
        doc_lengths: Vec<u32>,
    ) -> Self {
        let n = doc_ids.len();
        let avg_doc_length = if n == 0 {
            0.0
        } else {
            doc_lengths.iter().map(|&l| f64::from(l)).sum::<f64>() / n as f64
        };
        let mut forward = vec![Vec::new(); n];
        for (tid, list) in postings.iter().enumerate() {
            for p in list {
                forward[p.doc as usize].push((tid as TermId, p.tf));
            }
        }
        let term_lookup = vocabulary
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TermId))
            .collect();
        let doc_lookup = doc_ids
            .iter()
            .enumerate()
            .map(|(i, d)| (d.clone(), i as DocOrd))
            .collect();
        Self {
            vocabulary,
            postings,
            doc_ids,
            doc_lengths,
            avg_doc_length,
            forward,
            term_lookup,
            doc_lookup,
        }
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn vocabulary_size(&self) -> usize {
        self.vocabulary.len()
    }

    /// Sorted vocabulary.
    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn term_id(&self, term: &str) -> Option<TermId> {
        self.term_lookup.get(term).copied()
    }

    pub fn term(&self, id: TermId) -> &str {
        &self.vocabulary[id as usize]
    }

    pub fn contains_term(&self, term: &str) -> bool {
        self.term_lookup.contains_key(term)
    }

    pub fn doc_ord(&self, doc_id: &str) -> Option<DocOrd> {
        self.doc_lookup.get(doc_id).copied()
    }

    pub fn doc_id(&self, ord: DocOrd) -> &str {
        &self.doc_ids[ord as usize]
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_length(&self, ord: DocOrd) -> u32 {
        self.doc_lengths[ord as usize]
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.term_id(term)
            .map(|id| self.postings[id as usize].as_slice())
            .unwrap_or(&[])
    }

    pub fn postings_by_id(&self, id: TermId) -> &[Posting] {
        &self.postings[id as usize]
    }

    pub fn df(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    pub fn tf(&self, term: &str, ord: DocOrd) -> u32 {
        let Some(id) = self.term_id(term) else {
            return 0;
        };
        let terms = &self.forward[ord as usize];
        terms
            .binary_search_by_key(&id, |&(t, _)| t)
            .map(|i| terms[i].1)
            .unwrap_or(0)
    }

    /// (term id, tf) pairs of a document, sorted by term id.
    pub fn doc_terms(&self, ord: DocOrd) -> &[(TermId, u32)] {
        &self.forward[ord as usize]
    }
}

/// Builds the index over document bodies. Ids must be unique.
pub fn build_index(docs: &[Document], analyzer: &Analyzer) -> Result<InvertedIndex, CorpusError> {
    let mut seen = BTreeSet::new();
    let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
    let mut doc_lengths = Vec::with_capacity(docs.len());
    for (ord, doc) in docs.iter().enumerate() {
        if !seen.insert(doc.doc_id.as_str()) {
            return Err(CorpusError::DuplicateId(doc.doc_id.clone()));
        }
        let mut counts: BTreeMap<String, u32> = BTreeMap::new();
        let mut len = 0u32;
        for sentence in &doc.sentences {
            for token in analyzer.tokenize(sentence) {
                *counts.entry(token.term).or_default() += 1;
                len += 1;
            }
        }
        doc_lengths.push(len);
        for (term, tf) in counts {
            postings.entry(term).or_default().push(Posting {
                doc: ord as DocOrd,
                tf,
            });
        }
    }
    let (vocabulary, postings): (Vec<_>, Vec<_>) = postings.into_iter().unzip();
    Ok(InvertedIndex::assemble(
        vocabulary,
        postings,
        docs.iter().map(|d| d.doc_id.clone()).collect(),
        doc_lengths,
    ))
}

/// Documents, their index and the analyzer that built it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Collection {
    analyzer: Analyzer,
    documents: Vec<Document>,
    index: InvertedIndex,
}

impl Collection {
    pub fn build(documents: Vec<Document>, analyzer: Analyzer) -> Result<Self, CorpusError> {
        let index = build_index(&documents, &analyzer)?;
        Ok(Self {
            analyzer,
            documents,
            index,
        })
    }

    pub fn analyzer(&self) -> &Analyzer {
        &self.analyzer
    }

    pub fn index(&self) -> &InvertedIndex {
        &self.index
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.index
            .doc_ord(doc_id)
            .map(|ord| &self.documents[ord as usize])
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let bytes = serde_json::to_vec(self).expect("collection serializes");
        fs::write(path, bytes).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let bytes = fs::read(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let c: Self = serde_json::from_slice(&bytes).map_err(|e| CorpusError::BadIndexFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        if c.documents.len() != c.index.doc_count()
            || c.documents
                .iter()
                .zip(c.index.doc_ids())
                .any(|(d, id)| &d.doc_id != id)
        {
            return Err(CorpusError::BadIndexFile {
                path: path.to_path_buf(),
                reason: "documents do not match the index".into(),
            });
        }
        Ok(c)
    }
}
