//! Reranker training: losses, hand-derived gradients, filtering, batching,
//! and the descent loop.
//!
//! The trainable object is the pair of projection matrices in a
//! [`ProjectionHead`]. A candidate's retriever score under the current head
//! is the cosine of its projected query and passage embeddings, exactly as
//! retrieval computes it; scores are normalized into a distribution P_ret
//! by a temperature softmax. Three losses are supported:
//!
//! * `rag`: negative log of the answer probability marginalized over the
//!   top-k candidates by P_ret, `-ln Σ P_ret(d) · P_LM(y|d,x)`. LM
//!   likelihoods enter as raw probabilities, deliberately not renormalized,
//!   so their wide range carries through.
//! * `kl`: KL(Q_LM ‖ P_ret) where Q_LM is the softmax of the LM
//!   log-likelihoods at temperature β.
//! * `ce`: cross-entropy against the candidate with the highest LM
//!   log-likelihood as a one-hot gold label.
//!
//! Gradients flow through cosine and softmax only; LM likelihoods and the
//! top-k selection are treated as constants (the generator is a black box,
//! and the selection is piecewise constant). Every gradient is verifiable
//! against central finite differences via [`gradient_check`].
//!
//! Data preparation retrieves each question's candidate pool once with the
//! initial head, scores it, and freezes both the pools and the batch
//! composition for the whole run: each epoch then revisits identical
//! batches, so the per-epoch loss is comparable across epochs. Within a
//! batch, the other members' winning combinations are appended to each
//! example's pool as in-batch negatives (scored against this example's
//! question and answer), skipping duplicates.

use crate::corpus::{Corpus, CorpusError, QAExample};
use crate::embed::{
    concat_query, EmbedError, EmbeddingProvider, Encoder, ProjectionHead, Side, SquareMatrix,
};
use crate::eval::normalized_tokens;
use crate::lmscore::{score_combination, score_pool, AnswerScorer, ScoreCache, ScoreError};
use crate::retrieval::{
    cosine, embed_subcorpus, retrieve_with_embedded, CandidateSet, Combination, RetrievalConfig,
    RetrieveError,
};
use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use thiserror::Error;

/// Marginal answer probabilities below this are clamped before the log.
const MARGINAL_FLOOR: f64 = 1e-300;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {detail}")]
    Config { detail: String },
    #[error("no training examples remain")]
    EmptyDataset,
    #[error("non-finite candidate scores for question {question_idx}")]
    NonFiniteScores { question_idx: usize },
    #[error("loss became non-finite at epoch {epoch} (questions {question_indices:?})")]
    NanLoss {
        epoch: usize,
        question_indices: Vec<usize>,
    },
    #[error("failed to write {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Retrieve(#[from] RetrieveError),
    #[error(transparent)]
    Score(#[from] ScoreError),
}

// ── Config ──────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Rag,
    Kl,
    Ce,
}

impl LossKind {
    pub fn label(self) -> &'static str {
        match self {
            LossKind::Rag => "rag",
            LossKind::Kl => "kl",
            LossKind::Ce => "ce",
        }
    }

    pub fn parse(label: &str) -> Option<Self> {
        match label {
            "rag" => Some(LossKind::Rag),
            "kl" => Some(LossKind::Kl),
            "ce" => Some(LossKind::Ce),
            _ => None,
        }
    }

    pub const ALL: [LossKind; 3] = [LossKind::Rag, LossKind::Kl, LossKind::Ce];
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingConfig {
    pub loss: LossKind,
    /// Softmax temperature for P_ret.
    pub gamma: f64,
    /// Softmax temperature for the LM-side distribution in the KL loss.
    pub beta: f64,
    /// How many candidates (by P_ret) the RAG marginal sums over; clamped
    /// to the pool size at use time.
    pub top_k_marginal: usize,
    /// Plain gradient-descent step size. Zero is allowed as a diagnostic
    /// no-op (the head must come through unchanged).
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Force at least one single and one pair into the RAG marginal when
    /// the pool has both stages.
    pub balance_stages: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Rag,
            gamma: 0.1,
            beta: 1.0,
            top_k_marginal: 5,
            learning_rate: 1e-2,
            epochs: 10,
            batch_size: 8,
            seed: 0,
            balance_stages: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |detail: &str| Err(TrainError::Config { detail: detail.into() });
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be a positive finite real");
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta must be a positive finite real");
        }
        if self.top_k_marginal == 0 {
            return bad("top_k_marginal must be >= 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be a non-negative finite real");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        Ok(())
    }
}

/// Deterministic per-purpose seed: one user-facing seed fans out to
/// independent streams without manual offset bookkeeping.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    crate::embed::fnv1a64(format!("{base}:{label}").as_bytes())
}

// ── Retriever distribution ──────────────────────────────────────────────────

/// Softmax-normalized candidate scores.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrieverDistribution {
    pub probabilities: Vec<f64>,
    pub gamma: f64,
}

fn stable_softmax(values: &[f64], temperature: f64) -> Vec<f64> {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| ((v - max) / temperature).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax of `scores / gamma`, computed with max subtraction so large
/// score magnitudes cannot overflow.
pub fn normalize_pret(scores: &[f64], gamma: f64) -> Result<RetrieverDistribution, TrainError> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(TrainError::Config { detail: format!("gamma must be > 0, got {gamma}") });
    }
    if scores.is_empty() {
        return Err(TrainError::Config { detail: "cannot normalize an empty score list".into() });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(TrainError::Config { detail: "scores must be finite".into() });
    }
    Ok(RetrieverDistribution { probabilities: stable_softmax(scores, gamma), gamma })
}

// ── Loss kernels over distributions ─────────────────────────────────────────

/// Indices entering the RAG marginal: the top `k` candidates by
/// probability (ties broken toward lower index). With `balance` set and
/// room for it, the selection is patched to contain at least one single
/// and one pair whenever the pool has both.
pub fn marginal_selection(
    probabilities: &[f64],
    is_pair: &[bool],
    k: usize,
    balance: bool,
) -> Vec<usize> {
    debug_assert_eq!(probabilities.len(), is_pair.len());
    let mut order: Vec<usize> = (0..probabilities.len()).collect();
    order.sort_by(|&a, &b| {
        probabilities[b]
            .partial_cmp(&probabilities[a])
            .expect("probabilities are finite")
            .then_with(|| a.cmp(&b))
    });
    let take = k.min(order.len());
    let mut selected: Vec<usize> = order[..take].to_vec();

    if balance && take >= 2 {
        for want_pair in [false, true] {
            let have = selected.iter().any(|&i| is_pair[i] == want_pair);
            if have {
                continue;
            }
            let candidate = order[take..].iter().copied().find(|&i| is_pair[i] == want_pair);
            if let Some(incoming) = candidate {
                // Drop the weakest selected entry (they are all of the
                // opposite stage, or we would not be here).
                selected.pop();
                selected.push(incoming);
            }
        }
    }
    selected.sort_unstable();
    selected
}

/// `-ln Σ_{j ∈ selected} P_ret[j] · exp(ll[j])`, with the marginal clamped
/// at 1e-300; the flag reports whether the clamp fired.
pub fn rag_marginal_nll(
    probabilities: &[f64],
    log_likelihoods: &[f64],
    selected: &[usize],
) -> (f64, bool) {
    let marginal: f64 =
        selected.iter().map(|&j| probabilities[j] * log_likelihoods[j].exp()).sum();
    let clamped = !(marginal >= MARGINAL_FLOOR);
    (-marginal.max(MARGINAL_FLOOR).ln(), clamped)
}

/// `KL(q ‖ p) = Σ q_i ln(q_i / p_i)`; zero-mass q entries contribute 0.
pub fn kl_divergence(q: &[f64], p: &[f64]) -> f64 {
    debug_assert_eq!(q.len(), p.len());
    q.iter()
        .zip(p)
        .filter(|(&qi, _)| qi > 0.0)
        .map(|(&qi, &pi)| qi * (qi.ln() - pi.ln()))
        .sum()
}

/// Index of the highest LM log-likelihood; ties go to the lowest index.
pub fn ce_gold_index(log_likelihoods: &[f64]) -> usize {
    let mut best = 0;
    for (i, &ll) in log_likelihoods.iter().enumerate().skip(1) {
        if ll > log_likelihoods[best] {
            best = i;
        }
    }
    best
}

// ── Embedded training data ──────────────────────────────────────────────────

/// One candidate with everything needed to re-score it under any head:
/// the base (pre-projection) embeddings of its query and passage sides,
/// plus its cached LM log-likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedCandidate {
    pub passage_ids: Vec<String>,
    pub is_pair: bool,
    /// Base query-side embedding: the bare question for singles, the
    /// first-passage ⊕ question concatenation for pairs.
    pub query_base: Vec<f64>,
    /// Base passage-side embedding of the ranked passage (the partner,
    /// for pairs).
    pub passage_base: Vec<f64>,
    pub log_likelihood: f64,
}

/// One example's extended pool (own candidates first, then in-batch
/// negatives), ready for loss and gradient evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedExample {
    pub question_idx: usize,
    pub candidates: Vec<EmbeddedCandidate>,
}

/// Current-head retriever score of every candidate, in pool order.
pub fn candidate_scores(
    example: &EmbeddedExample,
    head: &ProjectionHead,
) -> Result<Vec<f64>, TrainError> {
    let scores: Vec<f64> = example
        .candidates
        .iter()
        .map(|c| {
            let q = head.project(Side::Query, &c.query_base);
            let p = head.project(Side::Passage, &c.passage_base);
            cosine(&q, &p)
        })
        .collect();
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(TrainError::NonFiniteScores { question_idx: example.question_idx });
    }
    Ok(scores)
}

/// Batch loss plus how often the RAG marginal needed clamping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossStat {
    pub loss: f64,
    pub clamp_count: usize,
}

fn example_loss(
    example: &EmbeddedExample,
    config: &TrainingConfig,
    head: &ProjectionHead,
) -> Result<LossStat, TrainError> {
    let scores = candidate_scores(example, head)?;
    let dist = normalize_pret(&scores, config.gamma)?;
    let lls: Vec<f64> = example.candidates.iter().map(|c| c.log_likelihood).collect();
    match config.loss {
        LossKind::Rag => {
            let is_pair: Vec<bool> = example.candidates.iter().map(|c| c.is_pair).collect();
            let selected = marginal_selection(
                &dist.probabilities,
                &is_pair,
                config.top_k_marginal,
                config.balance_stages,
            );
            let (loss, clamped) = rag_marginal_nll(&dist.probabilities, &lls, &selected);
            Ok(LossStat { loss, clamp_count: usize::from(clamped) })
        }
        LossKind::Kl => {
            let q = stable_softmax(&lls, config.beta);
            Ok(LossStat { loss: kl_divergence(&q, &dist.probabilities), clamp_count: 0 })
        }
        LossKind::Ce => {
            let gold = ce_gold_index(&lls);
            Ok(LossStat { loss: -dist.probabilities[gold].ln(), clamp_count: 0 })
        }
    }
}

/// Sum of per-example losses over a batch under the configured loss.
pub fn batch_loss(
    batch: &[EmbeddedExample],
    config: &TrainingConfig,
    head: &ProjectionHead,
) -> Result<LossStat, TrainError> {
    config.validate()?;
    let mut total = LossStat { loss: 0.0, clamp_count: 0 };
    for example in batch {
        let stat = example_loss(example, config, head)?;
        total.loss += stat.loss;
        total.clamp_count += stat.clamp_count;
    }
    Ok(total)
}

pub fn rag_loss(
    batch: &[EmbeddedExample],
    config: &TrainingConfig,
    head: &ProjectionHead,
) -> Result<f64, TrainError> {
    batch_loss(batch, &TrainingConfig { loss: LossKind::Rag, ..*config }, head).map(|s| s.loss)
}

pub fn kl_loss(
    batch: &[EmbeddedExample],
    config: &TrainingConfig,
    head: &ProjectionHead,
) -> Result<f64, TrainError> {
    batch_loss(batch, &TrainingConfig { loss: LossKind::Kl, ..*config }, head).map(|s| s.loss)
}

pub fn ce_loss(
    batch: &[EmbeddedExample],
    config: &TrainingConfig,
    head: &ProjectionHead,
) -> Result<f64, TrainError> {
    batch_loss(batch, &TrainingConfig { loss: LossKind::Ce, ..*config }, head).map(|s| s.loss)
}

// ── Gradients ───────────────────────────────────────────────────────────────

/// Gradient of a loss with respect to both projection matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradient {
    pub w_query: SquareMatrix,
    pub w_passage: SquareMatrix,
}

impl HeadGradient {
    pub fn zeros(dim: usize) -> Self {
        Self { w_query: SquareMatrix::zeros(dim), w_passage: SquareMatrix::zeros(dim) }
    }

    pub fn is_finite(&self) -> bool {
        self.w_query.is_finite() && self.w_passage.is_finite()
    }
}

/// dLoss/dScore for every candidate. The softmax derivative gives each
/// loss the same shape: a scaled difference between P_ret and a target
/// distribution (the marginal posterior for RAG, Q_LM for KL, the one-hot
/// gold for CE).
fn loss_score_gradient(
    probabilities: &[f64],
    log_likelihoods: &[f64],
    is_pair: &[bool],
    config: &TrainingConfig,
) -> (Vec<f64>, usize) {
    let n = probabilities.len();
    let mut grad = vec![0.0; n];
    match config.loss {
        LossKind::Rag => {
            let selected = marginal_selection(
                probabilities,
                is_pair,
                config.top_k_marginal,
                config.balance_stages,
            );
            let marginal: f64 = selected
                .iter()
                .map(|&j| probabilities[j] * log_likelihoods[j].exp())
                .sum();
            if !(marginal >= MARGINAL_FLOOR) {
                // Clamped region: the loss is the constant -ln(floor), so
                // the example contributes no gradient.
                return (grad, 1);
            }
            let mut in_selection = vec![false; n];
            for &j in &selected {
                in_selection[j] = true;
            }
            for m in 0..n {
                let posterior = if in_selection[m] {
                    log_likelihoods[m].exp() / marginal
                } else {
                    0.0
                };
                grad[m] = probabilities[m] / config.gamma * (1.0 - posterior);
            }
        }
        LossKind::Kl => {
            let q = stable_softmax(log_likelihoods, config.beta);
            for m in 0..n {
                grad[m] = (probabilities[m] - q[m]) / config.gamma;
            }
        }
        LossKind::Ce => {
            let gold = ce_gold_index(log_likelihoods);
            for m in 0..n {
                let target = f64::from(u8::from(m == gold));
                grad[m] = (probabilities[m] - target) / config.gamma;
            }
        }
    }
    (grad, 0)
}

/// Analytic gradient (and the loss it belongs to) over a batch.
///
/// For each candidate with projected query a = W_q u and passage b = W_d v,
/// the cosine derivative is ds/da = (b̂ - s·â)/|a| and symmetrically for b;
/// chain-ruled into the matrices as rank-one outer products with the base
/// vectors. Candidates whose projected side has zero norm score a constant
/// 0 and are skipped.
pub fn grad_loss(
    batch: &[EmbeddedExample],
    config: &TrainingConfig,
    head: &ProjectionHead,
) -> Result<(LossStat, HeadGradient), TrainError> {
    config.validate()?;
    let dim = head.dim();
    let mut grad = HeadGradient::zeros(dim);
    let mut stat = LossStat { loss: 0.0, clamp_count: 0 };

    for example in batch {
        let projected: Vec<(Vec<f64>, Vec<f64>)> = example
            .candidates
            .iter()
            .map(|c| {
                (head.project(Side::Query, &c.query_base),
                 head.project(Side::Passage, &c.passage_base))
            })
            .collect();
        let scores: Vec<f64> = projected.iter().map(|(a, b)| cosine(a, b)).collect();
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(TrainError::NonFiniteScores { question_idx: example.question_idx });
        }
        let dist = normalize_pret(&scores, config.gamma)?;
        let lls: Vec<f64> = example.candidates.iter().map(|c| c.log_likelihood).collect();
        let is_pair: Vec<bool> = example.candidates.iter().map(|c| c.is_pair).collect();

        stat.loss += example_loss_from_parts(&dist.probabilities, &lls, &is_pair, config);
        let (score_grad, clamps) =
            loss_score_gradient(&dist.probabilities, &lls, &is_pair, config);
        stat.clamp_count += clamps;

        for (j, candidate) in example.candidates.iter().enumerate() {
            if score_grad[j] == 0.0 {
                continue;
            }
            let (a, b) = &projected[j];
            let norm_a = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let norm_b = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm_a == 0.0 || norm_b == 0.0 {
                continue;
            }
            let s = scores[j];
            let mut ds_da = vec![0.0; dim];
            let mut ds_db = vec![0.0; dim];
            for i in 0..dim {
                ds_da[i] = (b[i] / norm_b - s * a[i] / norm_a) / norm_a;
                ds_db[i] = (a[i] / norm_a - s * b[i] / norm_b) / norm_b;
            }
            grad.w_query.add_outer(&ds_da, &candidate.query_base, score_grad[j]);
            grad.w_passage.add_outer(&ds_db, &candidate.passage_base, score_grad[j]);
        }
    }
    Ok((stat, grad))
}

/// Loss value for an example whose distribution pieces are already at hand
/// (shared between `example_loss` and `grad_loss` so they cannot drift).
fn example_loss_from_parts(
    probabilities: &[f64],
    log_likelihoods: &[f64],
    is_pair: &[bool],
    config: &TrainingConfig,
) -> f64 {
    match config.loss {
        LossKind::Rag => {
            let selected = marginal_selection(
                probabilities,
                is_pair,
                config.top_k_marginal,
                config.balance_stages,
            );
            rag_marginal_nll(probabilities, log_likelihoods, &selected).0
        }
        LossKind::Kl => {
            let q = stable_softmax(log_likelihoods, config.beta);
            kl_divergence(&q, probabilities)
        }
        LossKind::Ce => -probabilities[ce_gold_index(log_likelihoods)].ln(),
    }
}

// ── Finite-difference verification ──────────────────────────────────────────

/// Analytic vs numeric gradient, flattened as all W_q entries followed by
/// all W_d entries (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_abs_diff: f64,
    pub max_rel_diff: f64,
}

/// Central-difference check of [`grad_loss`] over every head entry.
/// Relative error for a coordinate uses max(|analytic|, |numeric|) as the
/// denominator; coordinates where both are below 1e-6 count only toward
/// the absolute difference.
pub fn gradient_check(
    batch: &[EmbeddedExample],
    config: &TrainingConfig,
    head: &ProjectionHead,
    step: f64,
) -> Result<GradientReport, TrainError> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(TrainError::Config { detail: format!("step must be > 0, got {step}") });
    }
    let (_, grad) = grad_loss(batch, config, head)?;
    let analytic: Vec<f64> = grad
        .w_query
        .entries()
        .iter()
        .chain(grad.w_passage.entries())
        .copied()
        .collect();

    let dim = head.dim();
    let entries_per_side = dim * dim;
    let mut numeric = Vec::with_capacity(2 * entries_per_side);
    let mut probe = head.clone();
    for side in [Side::Query, Side::Passage] {
        for entry in 0..entries_per_side {
            let (row, col) = (entry / dim, entry % dim);
            fn matrix(h: &mut ProjectionHead, side: Side) -> &mut SquareMatrix {
                match side {
                    Side::Query => &mut h.w_query,
                    Side::Passage => &mut h.w_passage,
                }
            }
            let original = matrix(&mut probe, side).get(row, col);
            matrix(&mut probe, side).set(row, col, original + step);
            let plus = batch_loss(batch, config, &probe)?.loss;
            matrix(&mut probe, side).set(row, col, original - step);
            let minus = batch_loss(batch, config, &probe)?.loss;
            matrix(&mut probe, side).set(row, col, original);
            numeric.push((plus - minus) / (2.0 * step));
        }
    }

    let mut max_abs_diff = 0.0f64;
    let mut max_rel_diff = 0.0f64;
    for (&a, &n) in analytic.iter().zip(&numeric) {
        let diff = (a - n).abs();
        max_abs_diff = max_abs_diff.max(diff);
        let denom = a.abs().max(n.abs());
        if denom >= 1e-6 {
            max_rel_diff = max_rel_diff.max(diff / denom);
        }
    }
    Ok(GradientReport { analytic, numeric, max_abs_diff, max_rel_diff })
}

/// Seeded synthetic batch for gradient checks: random base embeddings in
/// [-1, 1], random log-likelihoods in [-4, -0.1], alternating stages.
pub fn random_batch(
    dim: usize,
    pool_size: usize,
    batch_size: usize,
    seed: u64,
) -> Vec<EmbeddedExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vector = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
    };
    (0..batch_size)
        .map(|e| EmbeddedExample {
            question_idx: e,
            candidates: (0..pool_size)
                .map(|j| EmbeddedCandidate {
                    passage_ids: if j % 2 == 1 {
                        vec![format!("q{e}c{j}a"), format!("q{e}c{j}b")]
                    } else {
                        vec![format!("q{e}c{j}")]
                    },
                    is_pair: j % 2 == 1,
                    query_base: vector(&mut rng),
                    passage_base: vector(&mut rng),
                    log_likelihood: rng.random_range(-4.0..-0.1),
                })
                .collect(),
        })
        .collect()
}

/// Identity head with small seeded noise on every entry, so gradient
/// checks run away from the symmetric identity point.
pub fn jittered_identity_head(
    dim: usize,
    scale: f64,
    seed: u64,
) -> Result<ProjectionHead, TrainError> {
    let mut head = ProjectionHead::identity(dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for matrix in [&mut head.w_query, &mut head.w_passage] {
        for entry in matrix.entries_mut() {
            *entry += rng.random_range(-scale..scale);
        }
    }
    Ok(head)
}

// ── Positive filtering ──────────────────────────────────────────────────────

/// Indices of examples kept and dropped by [`positive_filter`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterOutcome {
    pub retained: Vec<usize>,
    pub dropped: Vec<usize>,
}

/// Does any gold answer occur, as a contiguous run of normalized tokens,
/// in any of the example's sub-corpus passages?
fn answer_present(example: &QAExample, corpus: &Corpus) -> Result<bool, TrainError> {
    let answer_token_lists: Vec<Vec<String>> =
        example.answers.iter().map(|a| normalized_tokens(a)).collect();
    // An answer that normalizes to nothing (pure stopwords or punctuation)
    // matches vacuously; dropping such examples would punish the answer
    // normalizer rather than the retrieval pool.
    if answer_token_lists.iter().any(|t| t.is_empty()) {
        return Ok(true);
    }
    for id in &example.subcorpus_ids {
        let passage = corpus.require(id)?;
        let passage_tokens = normalized_tokens(&passage.text);
        for answer_tokens in &answer_token_lists {
            if answer_tokens.len() <= passage_tokens.len()
                && passage_tokens
                    .windows(answer_tokens.len())
                    .any(|window| window == answer_tokens.as_slice())
            {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

/// Drop every example whose answer cannot be found in its pre-retrieved
/// sub-corpus; such questions give the reranker no useful signal.
pub fn positive_filter(
    dataset: &[QAExample],
    corpus: &Corpus,
) -> Result<FilterOutcome, TrainError> {
    let mut retained = Vec::new();
    let mut dropped = Vec::new();
    for (idx, example) in dataset.iter().enumerate() {
        if example.subcorpus_ids.is_empty() {
            return Err(TrainError::Config {
                detail: format!("example {idx} has no sub-corpus; attach one before filtering"),
            });
        }
        if answer_present(example, corpus)? {
            retained.push(idx);
        } else {
            dropped.push(idx);
        }
    }
    Ok(FilterOutcome { retained, dropped })
}

// ── Batching ────────────────────────────────────────────────────────────────

/// Seeded shuffle of `0..n` chunked into batches. A batch size larger
/// than the dataset yields one smaller batch.
pub fn sample_batches(
    n_examples: usize,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>, TrainError> {
    if batch_size == 0 {
        return Err(TrainError::Config { detail: "batch_size must be >= 1".into() });
    }
    if n_examples == 0 {
        return Err(TrainError::EmptyDataset);
    }
    let mut order: Vec<usize> = (0..n_examples).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

// ── Preparation ─────────────────────────────────────────────────────────────

/// One scored retrieval pool, the unit the loss functions consume.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub question_idx: usize,
    pub example: QAExample,
    pub pool: CandidateSet,
    /// LM log-likelihoods aligned with the pool's canonical order.
    pub lm_scores: Vec<f64>,
}

/// Frozen training data: filtered examples, their scored pools, and the
/// batch partition (with in-batch negatives already embedded). Identical
/// across epochs by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedDataset {
    pub examples: Vec<TrainingExample>,
    pub batches: Vec<Vec<EmbeddedExample>>,
    pub filter: FilterOutcome,
}

struct PreppedPools {
    examples: Vec<TrainingExample>,
    winners: Vec<Combination>,
}

fn retrieve_and_score_pools(
    dataset: &[QAExample],
    retained: &[usize],
    corpus: &Corpus,
    provider: &dyn EmbeddingProvider,
    initial_head: &ProjectionHead,
    retrieval: &RetrievalConfig,
    scorer: &dyn AnswerScorer,
    cache: &ScoreCache,
) -> Result<PreppedPools, TrainError> {
    let encoder = Encoder::new(provider, initial_head)?;
    let mut examples = Vec::with_capacity(retained.len());
    let mut winners = Vec::with_capacity(retained.len());
    // Sub-corpora repeat verbatim across questions in fixtures; embed each
    // distinct one once.
    let mut embedded_subs: HashMap<Vec<String>, crate::retrieval::EmbeddedSubcorpus> =
        HashMap::new();
    for &idx in retained {
        let example = &dataset[idx];
        if !embedded_subs.contains_key(&example.subcorpus_ids) {
            let sub = embed_subcorpus(corpus, &example.subcorpus_ids, &encoder)?;
            embedded_subs.insert(example.subcorpus_ids.clone(), sub);
        }
        let sub = &embedded_subs[&example.subcorpus_ids];
        let retrieval_result =
            retrieve_with_embedded(&example.question, sub, &encoder, retrieval)?;
        let lm = score_pool(&retrieval_result.candidates, corpus, example, idx, scorer, cache)?;
        winners.push(retrieval_result.winner);
        examples.push(TrainingExample {
            question_idx: idx,
            example: example.clone(),
            pool: retrieval_result.candidates,
            lm_scores: lm.iter().map(|s| s.log_likelihood).collect(),
        });
    }
    Ok(PreppedPools { examples, winners })
}

/// Base embeddings for one example's own pool, via batched provider calls.
fn embed_own_pool(
    training: &TrainingExample,
    corpus: &Corpus,
    provider: &dyn EmbeddingProvider,
) -> Result<EmbeddedExample, TrainError> {
    // Query side: the bare question plus one concat text per distinct
    // first passage among the pairs.
    let question = &training.example.question;
    let mut query_texts = vec![question.clone()];
    let mut query_slot: HashMap<String, usize> = HashMap::new();
    for pair in &training.pool.pairs {
        let first_id = &pair.passage_ids[0];
        if !query_slot.contains_key(first_id) {
            let text = &corpus.require(first_id)?.text;
            query_slot.insert(first_id.clone(), query_texts.len());
            query_texts.push(concat_query(text, question));
        }
    }
    // Passage side: every distinct ranked passage (the partner, for pairs).
    let mut passage_texts = Vec::new();
    let mut passage_slot: HashMap<String, usize> = HashMap::new();
    for combination in training.pool.iter() {
        let ranked_id = combination.passage_ids.last().expect("combinations are non-empty");
        if !passage_slot.contains_key(ranked_id) {
            passage_slot.insert(ranked_id.clone(), passage_texts.len());
            passage_texts.push(corpus.require(ranked_id)?.text.clone());
        }
    }
    let query_bases = provider.embed_batch(Side::Query, &query_texts)?;
    let passage_bases = provider.embed_batch(Side::Passage, &passage_texts)?;

    let mut candidates = Vec::with_capacity(training.pool.len());
    for (combination, &ll) in training.pool.iter().zip(&training.lm_scores) {
        let is_pair = combination.passage_ids.len() == 2;
        let query_base = if is_pair {
            query_bases[query_slot[&combination.passage_ids[0]]].clone()
        } else {
            query_bases[0].clone()
        };
        let ranked_id = combination.passage_ids.last().expect("non-empty");
        candidates.push(EmbeddedCandidate {
            passage_ids: combination.passage_ids.clone(),
            is_pair,
            query_base,
            passage_base: passage_bases[passage_slot[ranked_id]].clone(),
            log_likelihood: ll,
        });
    }
    Ok(EmbeddedExample { question_idx: training.question_idx, candidates })
}

/// Append another member's winning combination as a negative, scored
/// against this example's question and answer. Duplicates of an existing
/// candidate are skipped.
fn append_negative(
    target: &mut EmbeddedExample,
    training: &TrainingExample,
    winner: &Combination,
    corpus: &Corpus,
    provider: &dyn EmbeddingProvider,
    scorer: &dyn AnswerScorer,
    cache: &ScoreCache,
) -> Result<(), TrainError> {
    if target.candidates.iter().any(|c| c.passage_ids == winner.passage_ids) {
        return Ok(());
    }
    let question = &training.example.question;
    let answer = training.example.answers.first().ok_or(ScoreError::EmptyAnswer)?;
    let score = score_combination(
        &winner.passage_ids,
        corpus,
        question,
        answer,
        training.question_idx,
        scorer,
        cache,
    )?;
    let is_pair = winner.passage_ids.len() == 2;
    let query_text = if is_pair {
        concat_query(&corpus.require(&winner.passage_ids[0])?.text, question)
    } else {
        question.clone()
    };
    let ranked_text = corpus.require(winner.passage_ids.last().expect("non-empty"))?.text.clone();
    let query_base = provider.embed(Side::Query, &query_text)?;
    let passage_base = provider.embed(Side::Passage, &ranked_text)?;
    target.candidates.push(EmbeddedCandidate {
        passage_ids: winner.passage_ids.clone(),
        is_pair,
        query_base,
        passage_base,
        log_likelihood: score.log_likelihood,
    });
    Ok(())
}

/// Filter, retrieve, score, batch, and embed a dataset for training. The
/// pools are built once with `initial_head` and stay fixed for the whole
/// run; only the projection matrices move afterwards.
#[allow(clippy::too_many_arguments)]
pub fn prepare(
    dataset: &[QAExample],
    corpus: &Corpus,
    provider: &dyn EmbeddingProvider,
    initial_head: &ProjectionHead,
    retrieval: &RetrievalConfig,
    scorer: &dyn AnswerScorer,
    cache: &ScoreCache,
    config: &TrainingConfig,
) -> Result<PreparedDataset, TrainError> {
    config.validate()?;
    retrieval.validate()?;
    let filter = positive_filter(dataset, corpus)?;
    if filter.retained.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let pools = retrieve_and_score_pools(
        dataset,
        &filter.retained,
        corpus,
        provider,
        initial_head,
        retrieval,
        scorer,
        cache,
    )?;
    let index_batches = sample_batches(
        pools.examples.len(),
        config.batch_size,
        derive_seed(config.seed, "batch-order"),
    )?;

    let mut batches = Vec::with_capacity(index_batches.len());
    for members in &index_batches {
        let mut batch = Vec::with_capacity(members.len());
        for &member in members {
            let training = &pools.examples[member];
            let mut embedded = embed_own_pool(training, corpus, provider)?;
            for &other in members {
                if other == member {
                    continue;
                }
                append_negative(
                    &mut embedded,
                    training,
                    &pools.winners[other],
                    corpus,
                    provider,
                    scorer,
                    cache,
                )?;
            }
            batch.push(embedded);
        }
        batches.push(batch);
    }
    Ok(PreparedDataset { examples: pools.examples, batches, filter })
}

// ── Training loop ───────────────────────────────────────────────────────────

/// One row of the loss curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStat {
    pub epoch: usize,
    pub loss: f64,
    pub retained_examples: usize,
}

/// Final head plus the per-epoch loss curve.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub head: ProjectionHead,
    pub curve: Vec<EpochStat>,
    pub clamp_count: usize,
}

/// Plain gradient descent over the prepared batches. The per-epoch loss is
/// the sum of batch losses as encountered (each measured just before its
/// own update step). Any non-finite loss or gradient aborts with the
/// offending questions named.
pub fn train_loop(
    prepared: &PreparedDataset,
    config: &TrainingConfig,
    initial_head: &ProjectionHead,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if prepared.batches.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let retained = prepared.examples.len();
    let mut head = initial_head.clone();
    let mut curve = Vec::with_capacity(config.epochs);
    let mut clamp_count = 0;

    for epoch in 0..config.epochs {
        let mut epoch_loss = 0.0;
        for batch in &prepared.batches {
            let batch_questions = || batch.iter().map(|e| e.question_idx).collect();
            let (stat, grad) = grad_loss(batch, config, &head).map_err(|e| match e {
                TrainError::NonFiniteScores { .. } => {
                    TrainError::NanLoss { epoch, question_indices: batch_questions() }
                }
                other => other,
            })?;
            if !stat.loss.is_finite() || !grad.is_finite() {
                return Err(TrainError::NanLoss { epoch, question_indices: batch_questions() });
            }
            epoch_loss += stat.loss;
            clamp_count += stat.clamp_count;
            head.w_query.add_scaled(&grad.w_query, -config.learning_rate);
            head.w_passage.add_scaled(&grad.w_passage, -config.learning_rate);
        }
        curve.push(EpochStat { epoch, loss: epoch_loss, retained_examples: retained });
    }
    Ok(TrainOutcome { head, curve, clamp_count })
}

/// CSV loss curve: `epoch,loss,retained_examples` with a header row.
pub fn write_loss_curve(path: &Path, curve: &[EpochStat]) -> Result<(), TrainError> {
    let display = path.display().to_string();
    let io_err = |source: std::io::Error| TrainError::Io { path: display.clone(), source };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    writeln!(out, "epoch,loss,retained_examples").map_err(io_err)?;
    for stat in curve {
        writeln!(out, "{},{},{}", stat.epoch, stat.loss, stat.retained_examples)
            .map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

// ─────────────────────────────────────────────────────────────────────────────
