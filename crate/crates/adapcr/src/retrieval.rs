//! Two-stage construction of passage combinations and winner selection.
//!
//! Stage one ranks every sub-corpus passage against the question embedding
//! and keeps the top `k` as single-passage candidates. Stage two re-queries
//! once per first-stage passage: the passage text is prepended to the
//! question ([`crate::embed::concat_query`]), embedded on the query side,
//! and ranked against the same sub-corpus; the top `k` partners yield
//! two-passage candidates. The candidate pool is the union of both stages
//! in canonical order (singles by rank, then pairs by first-stage rank and
//! partner rank), and [`select_best`] picks the highest-scoring combination,
//! breaking exact ties in favor of singles and then canonical order.
//!
//! All ranking uses cosine similarity; a zero-norm embedding on either side
//! scores 0.0 by convention (the degenerate-input sentinel).

use crate::corpus::{Corpus, CorpusError, Passage};
use crate::embed::{concat_query, EmbedError, Encoder, Side};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RetrieveError {
    #[error("invalid retrieval config: {detail}")]
    Config { detail: String },
    #[error("sub-corpus is empty")]
    EmptySubcorpus,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("failed to write {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Which stage produced a combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Single,
    Pair,
}

/// One candidate: an ordered set of one or two passage ids with its score.
#[derive(Debug, Clone, PartialEq)]
pub struct Combination {
    pub passage_ids: Vec<String>,
    pub score: f64,
    pub stage: Stage,
}

/// The candidate pool for one question, in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub question: String,
    pub singles: Vec<Combination>,
    pub pairs: Vec<Combination>,
}

impl CandidateSet {
    /// Canonical iteration order: singles by rank, then pairs by
    /// (first-stage rank, partner rank).
    pub fn iter(&self) -> impl Iterator<Item = &Combination> {
        self.singles.iter().chain(self.pairs.iter())
    }

    pub fn len(&self) -> usize {
        self.singles.len() + self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalConfig {
    /// Candidates kept per stage list.
    pub k: usize,
    /// Passages kept by BM25 pre-retrieval.
    pub subcorpus_limit: usize,
    /// Skip second-stage partners equal to the first-stage passage.
    pub dedupe_self_pairs: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self { k: 5, subcorpus_limit: 100, dedupe_self_pairs: true }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrieveError> {
        if self.k == 0 {
            return Err(RetrieveError::Config { detail: "k must be >= 1".into() });
        }
        if self.subcorpus_limit == 0 {
            return Err(RetrieveError::Config {
                detail: "subcorpus_limit must be >= 1".into(),
            });
        }
        Ok(())
    }
}

/// Cosine similarity; 0.0 when either vector has zero norm.
pub fn cosine(u: &[f64], v: &[f64]) -> f64 {
    assert_eq!(u.len(), v.len(), "cosine requires equal-length vectors");
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    dot / (nu.sqrt() * nv.sqrt())
}

/// A sub-corpus with projected passage embeddings, reusable across the two
/// stages (and across questions when their sub-corpora coincide).
pub struct EmbeddedSubcorpus<'c> {
    passages: Vec<&'c Passage>,
    projected: Vec<Vec<f64>>,
    by_id: HashMap<String, usize>,
}

impl<'c> EmbeddedSubcorpus<'c> {
    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn passage(&self, pos: usize) -> &'c Passage {
        self.passages[pos]
    }
}

/// Resolve sub-corpus ids and embed every passage on the passage side.
pub fn embed_subcorpus<'c>(
    corpus: &'c Corpus,
    subcorpus_ids: &[String],
    encoder: &Encoder,
) -> Result<EmbeddedSubcorpus<'c>, RetrieveError> {
    if subcorpus_ids.is_empty() {
        return Err(RetrieveError::EmptySubcorpus);
    }
    let mut passages = Vec::with_capacity(subcorpus_ids.len());
    let mut by_id = HashMap::with_capacity(subcorpus_ids.len());
    for id in subcorpus_ids {
        let p = corpus.require(id)?;
        by_id.insert(p.id.clone(), passages.len());
        passages.push(p);
    }
    let texts: Vec<String> = passages.iter().map(|p| p.text.clone()).collect();
    let projected = encoder.encode_batch(Side::Passage, &texts)?;
    Ok(EmbeddedSubcorpus { passages, projected, by_id })
}

/// Indices of the top `k` sub-corpus passages for a query vector, ordered
/// by descending cosine and then ascending passage id.
fn rank_against(sub: &EmbeddedSubcorpus, query: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut scored: Vec<(usize, f64)> = sub
        .projected
        .iter()
        .map(|p| cosine(query, p))
        .enumerate()
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("cosine scores are finite")
            .then_with(|| sub.passages[a.0].id.cmp(&sub.passages[b.0].id))
    });
    scored.truncate(k);
    scored
}

/// Stage one: top-k single-passage candidates for the question.
pub fn first_stage(
    question: &str,
    sub: &EmbeddedSubcorpus,
    encoder: &Encoder,
    config: &RetrievalConfig,
) -> Result<Vec<Combination>, RetrieveError> {
    config.validate()?;
    let query = encoder.encode(Side::Query, question)?;
    Ok(rank_against(sub, &query, config.k)
        .into_iter()
        .map(|(pos, score)| Combination {
            passage_ids: vec![sub.passages[pos].id.clone()],
            score,
            stage: Stage::Single,
        })
        .collect())
}

/// Stage two: for each first-stage passage, embed `passage ⊕ question` as a
/// new query and take its top-k partners. Pairs keep the combined-query
/// score. With `dedupe_self_pairs` the partner equal to the first-stage
/// passage is dropped from the emitted top-k list.
pub fn second_stage(
    question: &str,
    firsts: &[Combination],
    sub: &EmbeddedSubcorpus,
    encoder: &Encoder,
    config: &RetrievalConfig,
) -> Result<Vec<Combination>, RetrieveError> {
    config.validate()?;
    let combined: Vec<String> = firsts
        .iter()
        .map(|single| {
            let id = &single.passage_ids[0];
            let pos = sub.by_id[id];
            concat_query(&sub.passages[pos].text, question)
        })
        .collect();
    let queries = encoder.encode_batch(Side::Query, &combined)?;
    let mut pairs = Vec::new();
    for (single, query) in firsts.iter().zip(&queries) {
        let first_id = &single.passage_ids[0];
        for (pos, score) in rank_against(sub, query, config.k) {
            let partner = sub.passages[pos];
            if config.dedupe_self_pairs && partner.id == *first_id {
                continue;
            }
            pairs.push(Combination {
                passage_ids: vec![first_id.clone(), partner.id.clone()],
                score,
                stage: Stage::Pair,
            });
        }
    }
    Ok(pairs)
}

/// Union of both stages in canonical order.
pub fn assemble_candidates(
    question: &str,
    singles: Vec<Combination>,
    pairs: Vec<Combination>,
) -> CandidateSet {
    CandidateSet { question: question.to_owned(), singles, pairs }
}

/// Highest-scoring combination. Exact score ties prefer singles over pairs
/// and earlier canonical positions; returns `None` only for an empty pool.
pub fn select_best(candidates: &CandidateSet) -> Option<&Combination> {
    let mut best: Option<&Combination> = None;
    for c in candidates.iter() {
        match best {
            Some(b) if c.score <= b.score => {}
            _ => best = Some(c),
        }
    }
    best
}

/// Full retrieval result for one question.
#[derive(Debug, Clone, PartialEq)]
pub struct Retrieval {
    pub winner: Combination,
    pub candidates: CandidateSet,
}

/// Run both stages over an already-embedded sub-corpus and select the
/// winning combination.
pub fn retrieve_with_embedded(
    question: &str,
    sub: &EmbeddedSubcorpus,
    encoder: &Encoder,
    config: &RetrievalConfig,
) -> Result<Retrieval, RetrieveError> {
    let singles = first_stage(question, sub, encoder, config)?;
    let pairs = second_stage(question, &singles, sub, encoder, config)?;
    let candidates = assemble_candidates(question, singles, pairs);
    let winner = select_best(&candidates)
        .cloned()
        .ok_or(RetrieveError::EmptySubcorpus)?;
    Ok(Retrieval { winner, candidates })
}

/// Convenience wrapper that embeds the sub-corpus first.
pub fn retrieve(
    question: &str,
    subcorpus_ids: &[String],
    corpus: &Corpus,
    encoder: &Encoder,
    config: &RetrievalConfig,
) -> Result<Retrieval, RetrieveError> {
    config.validate()?;
    let sub = embed_subcorpus(corpus, subcorpus_ids, encoder)?;
    retrieve_with_embedded(question, &sub, encoder, config)
}

// ── Output records ──────────────────────────────────────────────────────────

#[derive(Debug, Serialize, Deserialize)]
pub struct WinnerRecord {
    pub passage_ids: Vec<String>,
    pub score: f64,
}

/// One line of the retrieval output file.
#[derive(Debug, Serialize, Deserialize)]
pub struct RetrievalRecord {
    pub question_idx: usize,
    pub winner: WinnerRecord,
    pub pool_size: usize,
}

impl RetrievalRecord {
    pub fn from_retrieval(question_idx: usize, r: &Retrieval) -> Self {
        Self {
            question_idx,
            winner: WinnerRecord {
                passage_ids: r.winner.passage_ids.clone(),
                score: r.winner.score,
            },
            pool_size: r.candidates.len(),
        }
    }
}

pub fn write_retrieval_records(
    path: &Path,
    records: &[RetrievalRecord],
) -> Result<(), RetrieveError> {
    let display = path.display().to_string();
    let io_err = |source| RetrieveError::Io { path: display.clone(), source };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for rec in records {
        serde_json::to_writer(&mut out, rec)
            .map_err(|e| RetrieveError::Io { path: display.clone(), source: e.into() })?;
        out.write_all(b"\n").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

// ─────────────────────────────────────────────────────────────────────────────
