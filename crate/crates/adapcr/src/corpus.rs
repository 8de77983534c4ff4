//! Corpus and dataset ingestion, tokenization, and BM25 pre-retrieval.
//!
//! The corpus is a flat list of passages read from a JSONL file with one
//! `{"id", "text"}` object per line. Questions arrive in a second JSONL file
//! with one `{"question", "answers"}` object per line. Pre-retrieval narrows
//! the corpus to a per-question sub-corpus: the `limit` passages with the
//! highest Okapi BM25 score against the tokenized question, ties broken by
//! ascending passage id. The sub-corpus can be persisted to a cache file
//! (`{"question_idx", "passage_ids"}` per line) and re-attached later so the
//! dense stages never depend on recomputing BM25.
//!
//! Tokenization is deliberately simple and deterministic: lowercase, strip
//! every character that is neither alphanumeric nor whitespace, then split
//! on whitespace. The same tokenizer feeds BM25, the hash embedder, and the
//! mock answer scorer, so token identity is consistent across the pipeline.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record")]
    MalformedLine {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}:{line}: duplicate passage id {id:?}")]
    DuplicateId { path: String, line: usize, id: String },
    #[error("{path}:{line}: passage {id:?} has empty text")]
    EmptyText { path: String, line: usize, id: String },
    #[error("{path}:{line}: question is empty")]
    EmptyQuestion { path: String, line: usize },
    #[error("{path}:{line}: example has no answers")]
    NoAnswers { path: String, line: usize },
    #[error("invalid BM25 parameters: k1 must be > 0 and b in [0, 1], got k1={k1} b={b}")]
    InvalidBm25Params { k1: f64, b: f64 },
    #[error("cannot build a BM25 index over an empty corpus")]
    EmptyCorpus,
    #[error("unknown passage id {id:?}")]
    UnknownPassage { id: String },
    #[error("subcorpus cache references question {question_idx} but dataset has {n_examples} examples")]
    CacheOutOfRange { question_idx: usize, n_examples: usize },
}

/// One retrievable text unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Passage {
    pub id: String,
    pub text: String,
    /// Number of tokens in `text` under [`tokenize`]; cached at ingest.
    pub token_count: usize,
}

impl Passage {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let token_count = tokenize(&text).len();
        Self { id: id.into(), text, token_count }
    }
}

/// One question with its gold answers. `subcorpus_ids` is empty until
/// pre-retrieval (or a cache) attaches the per-question sub-corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct QAExample {
    pub question: String,
    pub answers: Vec<String>,
    pub subcorpus_ids: Vec<String>,
}

/// In-memory corpus with id lookup.
#[derive(Debug, Clone)]
pub struct Corpus {
    passages: Vec<Passage>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn from_passages(passages: Vec<Passage>) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(passages.len());
        for (pos, p) in passages.iter().enumerate() {
            if by_id.insert(p.id.clone(), pos).is_some() {
                return Err(CorpusError::DuplicateId {
                    path: "<memory>".into(),
                    line: pos + 1,
                    id: p.id.clone(),
                });
            }
        }
        Ok(Self { passages, by_id })
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Passage> {
        self.by_id.get(id).map(|&pos| &self.passages[pos])
    }

    pub fn require(&self, id: &str) -> Result<&Passage, CorpusError> {
        self.get(id).ok_or_else(|| CorpusError::UnknownPassage { id: id.to_owned() })
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }
}

// ── Tokenization ────────────────────────────────────────────────────────────

/// Lowercase, strip punctuation and symbols, split on whitespace.
///
/// Any character that is neither alphanumeric nor whitespace is removed
/// (not replaced by a separator), so `"rock-and-roll"` becomes one token
/// `"rockandroll"`. Idempotent over its own output.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect::<String>()
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

// ── Ingestion ───────────────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct PassageRecord {
    id: String,
    text: String,
}

#[derive(Serialize, Deserialize)]
struct ExampleRecord {
    question: String,
    answers: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct SubcorpusRecord {
    question_idx: usize,
    passage_ids: Vec<String>,
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut lines = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        lines.push((i + 1, line));
    }
    Ok(lines)
}

/// Read a corpus JSONL file. Errors name the offending line; duplicate ids
/// and passages whose text is empty after trimming are rejected.
pub fn ingest_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let display = path.display().to_string();
    let mut passages = Vec::new();
    let mut by_id = HashMap::new();
    for (line, raw) in read_lines(path)? {
        let rec: PassageRecord = serde_json::from_str(&raw).map_err(|source| {
            CorpusError::MalformedLine { path: display.clone(), line, source }
        })?;
        if rec.text.trim().is_empty() {
            return Err(CorpusError::EmptyText { path: display, line, id: rec.id });
        }
        if by_id.insert(rec.id.clone(), passages.len()).is_some() {
            return Err(CorpusError::DuplicateId { path: display, line, id: rec.id });
        }
        passages.push(Passage::new(rec.id, rec.text));
    }
    Ok(Corpus { passages, by_id })
}

/// Read a question/answers JSONL file. Questions start with an empty
/// sub-corpus; see [`attach_subcorpora`] / [`compute_subcorpora`].
pub fn ingest_dataset(path: &Path) -> Result<Vec<QAExample>, CorpusError> {
    let display = path.display().to_string();
    let mut examples = Vec::new();
    for (line, raw) in read_lines(path)? {
        let rec: ExampleRecord = serde_json::from_str(&raw).map_err(|source| {
            CorpusError::MalformedLine { path: display.clone(), line, source }
        })?;
        if rec.question.trim().is_empty() {
            return Err(CorpusError::EmptyQuestion { path: display, line });
        }
        if rec.answers.is_empty() {
            return Err(CorpusError::NoAnswers { path: display, line });
        }
        examples.push(QAExample {
            question: rec.question,
            answers: rec.answers,
            subcorpus_ids: Vec::new(),
        });
    }
    Ok(examples)
}

pub fn write_corpus(path: &Path, passages: &[Passage]) -> Result<(), CorpusError> {
    let display = path.display().to_string();
    let io_err = |source| CorpusError::Io { path: display.clone(), source };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for p in passages {
        let rec = PassageRecord { id: p.id.clone(), text: p.text.clone() };
        serde_json::to_writer(&mut out, &rec)
            .map_err(|e| CorpusError::Io { path: display.clone(), source: e.into() })?;
        out.write_all(b"\n").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

pub fn write_dataset(path: &Path, examples: &[QAExample]) -> Result<(), CorpusError> {
    let display = path.display().to_string();
    let io_err = |source| CorpusError::Io { path: display.clone(), source };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for ex in examples {
        let rec = ExampleRecord { question: ex.question.clone(), answers: ex.answers.clone() };
        serde_json::to_writer(&mut out, &rec)
            .map_err(|e| CorpusError::Io { path: display.clone(), source: e.into() })?;
        out.write_all(b"\n").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

// ── BM25 ────────────────────────────────────────────────────────────────────

/// Okapi BM25 parameters. Defaults match the common sparse-retrieval toolkit
/// setting of `k1 = 0.9`, `b = 0.4`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 0.9, b: 0.4 }
    }
}

/// Inverted BM25 index over a corpus.
///
/// Uses the non-negative IDF variant `ln(1 + (N - df + 0.5) / (df + 0.5))`,
/// so a matching term never lowers a score and a term absent from a passage
/// contributes exactly zero.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    params: Bm25Params,
    total_docs: usize,
    avg_doc_length: f64,
    /// Token count per passage, by corpus position.
    doc_lengths: Vec<usize>,
    /// Passage ids by corpus position, for rank tie-breaking.
    ids: Vec<String>,
    by_id: HashMap<String, usize>,
    /// term -> (corpus position, term frequency), positions ascending.
    postings: HashMap<String, Vec<(usize, usize)>>,
}

/// Tokenize passages and build the inverted index.
pub fn build_bm25(corpus: &Corpus, params: Bm25Params) -> Result<Bm25Index, CorpusError> {
    if !(params.k1 > 0.0 && params.k1.is_finite()) || !(0.0..=1.0).contains(&params.b) {
        return Err(CorpusError::InvalidBm25Params { k1: params.k1, b: params.b });
    }
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut postings: HashMap<String, Vec<(usize, usize)>> = HashMap::new();
    let mut doc_lengths = Vec::with_capacity(corpus.len());
    let mut ids = Vec::with_capacity(corpus.len());
    let mut by_id = HashMap::with_capacity(corpus.len());
    for (pos, p) in corpus.passages().iter().enumerate() {
        let tokens = tokenize(&p.text);
        doc_lengths.push(tokens.len());
        let mut tf: HashMap<String, usize> = HashMap::new();
        for t in tokens {
            *tf.entry(t).or_insert(0) += 1;
        }
        for (term, count) in tf {
            postings.entry(term).or_default().push((pos, count));
        }
        by_id.insert(p.id.clone(), pos);
        ids.push(p.id.clone());
    }
    for list in postings.values_mut() {
        list.sort_unstable_by_key(|&(pos, _)| pos);
    }
    let total_tokens: usize = doc_lengths.iter().sum();
    Ok(Bm25Index {
        params,
        total_docs: corpus.len(),
        avg_doc_length: total_tokens as f64 / corpus.len() as f64,
        doc_lengths,
        ids,
        by_id,
        postings,
    })
}

impl Bm25Index {
    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn total_docs(&self) -> usize {
        self.total_docs
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    /// Number of passages containing `term` at least once.
    pub fn doc_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn doc_length(&self, passage_id: &str) -> Option<usize> {
        self.by_id.get(passage_id).map(|&pos| self.doc_lengths[pos])
    }

    fn idf(&self, term: &str) -> f64 {
        let df = self.doc_frequency(term) as f64;
        let n = self.total_docs as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    fn term_score(&self, tf: usize, doc_pos: usize) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = tf as f64;
        let len_ratio = self.doc_lengths[doc_pos] as f64 / self.avg_doc_length;
        tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len_ratio))
    }

    fn tf_in(&self, term: &str, doc_pos: usize) -> usize {
        self.postings
            .get(term)
            .and_then(|list| {
                list.binary_search_by_key(&doc_pos, |&(pos, _)| pos)
                    .ok()
                    .map(|i| list[i].1)
            })
            .unwrap_or(0)
    }

    /// BM25 score of one passage for a term sequence. Duplicate query terms
    /// are counted once per occurrence; a term absent from the passage
    /// contributes zero.
    pub fn bm25_score(&self, query_terms: &[String], passage_id: &str) -> Result<f64, CorpusError> {
        let &pos = self
            .by_id
            .get(passage_id)
            .ok_or_else(|| CorpusError::UnknownPassage { id: passage_id.to_owned() })?;
        let mut score = 0.0;
        for term in query_terms {
            let tf = self.tf_in(term, pos);
            if tf == 0 {
                continue;
            }
            score += self.idf(term) * self.term_score(tf, pos);
        }
        Ok(score)
    }

    /// Rank the whole corpus for a question and keep the best `limit` ids.
    ///
    /// Order is descending score with ties broken by ascending passage id;
    /// zero-score passages fill the tail, so the result always has
    /// `min(limit, corpus size)` entries.
    pub fn preretrieve_subcorpus(&self, question: &str, limit: usize) -> Vec<String> {
        let terms = tokenize(question);
        let mut scores = vec![0.0f64; self.total_docs];
        for term in &terms {
            let Some(list) = self.postings.get(term) else { continue };
            let idf = self.idf(term);
            for &(pos, tf) in list {
                scores[pos] += idf * self.term_score(tf, pos);
            }
        }
        let mut order: Vec<usize> = (0..self.total_docs).collect();
        order.sort_by(|&a, &b| {
            scores[b]
                .partial_cmp(&scores[a])
                .expect("BM25 scores are finite")
                .then_with(|| self.ids[a].cmp(&self.ids[b]))
        });
        order
            .into_iter()
            .take(limit)
            .map(|pos| self.ids[pos].clone())
            .collect()
    }
}

// ── Sub-corpus cache ────────────────────────────────────────────────────────

/// Compute and attach a BM25 sub-corpus to every example in place.
pub fn compute_subcorpora(index: &Bm25Index, examples: &mut [QAExample], limit: usize) {
    for ex in examples.iter_mut() {
        ex.subcorpus_ids = index.preretrieve_subcorpus(&ex.question, limit);
    }
}

/// Persist per-question sub-corpora as JSONL `{"question_idx", "passage_ids"}`.
pub fn write_subcorpus_cache(path: &Path, examples: &[QAExample]) -> Result<(), CorpusError> {
    let display = path.display().to_string();
    let io_err = |source| CorpusError::Io { path: display.clone(), source };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for (question_idx, ex) in examples.iter().enumerate() {
        let rec = SubcorpusRecord { question_idx, passage_ids: ex.subcorpus_ids.clone() };
        serde_json::to_writer(&mut out, &rec)
            .map_err(|e| CorpusError::Io { path: display.clone(), source: e.into() })?;
        out.write_all(b"\n").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Attach cached sub-corpora to examples by question index.
pub fn attach_subcorpora(path: &Path, examples: &mut [QAExample]) -> Result<(), CorpusError> {
    let display = path.display().to_string();
    for (line, raw) in read_lines(path)? {
        let rec: SubcorpusRecord = serde_json::from_str(&raw).map_err(|source| {
            CorpusError::MalformedLine { path: display.clone(), line, source }
        })?;
        let n_examples = examples.len();
        let ex = examples.get_mut(rec.question_idx).ok_or(CorpusError::CacheOutOfRange {
            question_idx: rec.question_idx,
            n_examples,
        })?;
        ex.subcorpus_ids = rec.passage_ids;
    }
    Ok(())
}

// ─────────────────────────────────────────────────────────────────────────────
