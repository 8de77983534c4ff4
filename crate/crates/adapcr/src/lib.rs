//! Adaptive passage combination retrieval (AdaPCR).
//!
//! This crate retrieves *combinations* of one or two passages for a question
//! instead of a flat top-k list. Retrieval runs in two stages over a BM25
//! pre-retrieved sub-corpus: the first stage ranks single passages against
//! the question, the second stage re-queries with each first-stage passage
//! concatenated to the question and ranks partner passages. The union of
//! both stages forms a candidate pool and the highest-scoring combination
//! wins.
//!
//! Scoring runs on frozen base embeddings behind a pair of trainable linear
//! projection heads (one per encoder side). The [`train`] module fits the
//! heads with losses driven by an answer-likelihood scorer; the [`eval`]
//! module compares the adaptive retriever against fixed top-k baselines.
//!
//! Module map:
//!
//! | module      | responsibility                                             |
//! |-------------|------------------------------------------------------------|
//! | [`corpus`]  | passage/dataset ingestion, tokenization, BM25 pre-retrieval |
//! | [`embed`]   | embedding providers, projection heads, query concatenation  |
//! | [`retrieval`] | two-stage candidate construction and winner selection     |
//! | [`lmscore`] | answer-likelihood scorers (mock and remote) plus score cache |
//! | [`train`]   | retriever distribution, losses, analytic gradients, training loop |
//! | [`eval`]    | EM/F1 metrics and multi-system comparison reports          |
//! | [`fixtures`] | seeded synthetic corpora with planted retrieval structure  |
//! | [`cli`]     | command-line front end                                     |

pub mod cli;
pub mod corpus;
pub mod embed;
pub mod eval;
pub mod fixtures;
pub mod lmscore;
pub mod retrieval;
pub mod train;
