//! Seeded synthetic corpora with planted retrieval structure.
//!
//! Three fixture kinds cover the scenarios the retriever is supposed to
//! handle:
//!
//! * `single_hop`: each question's answer sits in exactly one passage,
//!   which also shares the question's anchor tokens. Plain first-stage
//!   retrieval suffices.
//! * `redundant`: a cluster of near-duplicate distractors outranks the
//!   gold passage; the distractors match the question strongly but never
//!   contain the answer.
//! * `two_hop`: the answer lives in passage B, which shares no tokens with
//!   the question. B shares a block of bridge tokens with passage A, and A
//!   shares anchor tokens with the question. Only the combined query A ⊕
//!   question reaches B, so the winning combination must be the pair
//!   ⟨A, B⟩. Questions draw their filler words from a small hub
//!   vocabulary that background passages also carry, so the remaining
//!   first-stage slots fill with background text instead of other
//!   questions' planted passages. That containment matters: any foreign
//!   planted passage that sneaks into the first stage drags in its own
//!   bridge block, and bridge-heavy pairs outscore the planted pair.
//!
//! Every plant is verified against the actual hash embedder (dim 256,
//! k = 5, identity head, whole corpus as sub-corpus) rather than assumed
//! from token-count geometry. Questions whose plant fails verification are
//! resampled with fresh per-attempt tokens, up to 100 rounds; the final
//! verified fraction is reported honestly in [`PlantStats`]. Generation is
//! fully deterministic per seed: every random draw flows from per-purpose
//! RNGs derived from the fixture seed.

use crate::corpus::{write_corpus, write_dataset, Corpus, CorpusError, Passage, QAExample};
use crate::embed::{DeterministicHashEmbedder, EmbedError, Encoder, ProjectionHead};
use crate::retrieval::{
    embed_subcorpus, first_stage, retrieve_with_embedded, RetrievalConfig, RetrieveError,
};
use crate::train::derive_seed;
use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use thiserror::Error;

/// Verification runs at this embedding width and first-stage depth.
const VERIFY_DIM: usize = 256;
const VERIFY_K: usize = 5;
const MAX_RESAMPLE_ROUNDS: usize = 100;

/// The first `HUB_WORDS` vocabulary entries form a shared topical pool.
/// Two-hop questions take their fillers from it and two-hop background
/// passages carry a few of the same words, which pins the non-gold
/// first-stage slots to background text whose pair scores are weak.
const HUB_WORDS: usize = 10;

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("invalid fixture spec: {detail}")]
    Config { detail: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Retrieve(#[from] RetrieveError),
    #[error("failed to write {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixtureKind {
    SingleHop,
    Redundant,
    TwoHop,
}

impl FixtureKind {
    pub fn label(self) -> &'static str {
        match self {
            FixtureKind::SingleHop => "single_hop",
            FixtureKind::Redundant => "redundant",
            FixtureKind::TwoHop => "two_hop",
        }
    }

    pub fn parse(label: &str) -> Option<Self> {
        match label {
            "single_hop" => Some(FixtureKind::SingleHop),
            "redundant" => Some(FixtureKind::Redundant),
            "two_hop" => Some(FixtureKind::TwoHop),
            _ => None,
        }
    }

    /// Passages planted per question.
    fn planted_per_question(self) -> usize {
        match self {
            FixtureKind::SingleHop => 1,
            FixtureKind::Redundant => 4,
            FixtureKind::TwoHop => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixtureSpec {
    pub kind: FixtureKind,
    pub n_questions: usize,
    pub corpus_size: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl FixtureSpec {
    pub fn validate(&self) -> Result<(), FixtureError> {
        let bad = |detail: String| Err(FixtureError::Config { detail });
        if self.n_questions == 0 {
            return bad("n_questions must be >= 1".into());
        }
        if self.corpus_size < 10 {
            return bad(format!("corpus_size must be >= 10, got {}", self.corpus_size));
        }
        if self.vocab_size < 50 {
            return bad(format!("vocab_size must be >= 50, got {}", self.vocab_size));
        }
        let planted = self.kind.planted_per_question() * self.n_questions;
        // Verification needs enough background passages to crowd the
        // first-stage ranking; five spares cover the top-k plus slack.
        if self.corpus_size < planted + 5 {
            return bad(format!(
                "corpus_size {} cannot hold {} planted passages plus background",
                self.corpus_size, planted
            ));
        }
        Ok(())
    }
}

/// Which passages a question's evidence was planted in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub question_idx: usize,
    pub gold_ids: Vec<String>,
}

/// Outcome of generation-time verification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantStats {
    /// Fraction of questions whose plant passed the final verification.
    pub verified_fraction: f64,
    /// Resample rounds actually used.
    pub resample_rounds: usize,
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub corpus: Corpus,
    pub dataset: Vec<QAExample>,
    pub truth: Vec<TruthRecord>,
    pub stats: PlantStats,
}

// ── Token plumbing ──────────────────────────────────────────────────────────

fn vocab_word(index: usize) -> String {
    format!("w{index:03}")
}

fn sample_vocab(rng: &mut ChaCha8Rng, vocab_size: usize, n: usize) -> Vec<String> {
    (0..n).map(|_| vocab_word(rng.random_range(0..vocab_size))).collect()
}

/// `n` distinct hub words in seeded shuffle order.
fn sample_hub_words(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    let mut indices: Vec<usize> = (0..HUB_WORDS).collect();
    indices.shuffle(rng);
    indices.truncate(n);
    indices.into_iter().map(vocab_word).collect()
}

/// Vocabulary draws that stay clear of the hub pool.
fn sample_plain_vocab(rng: &mut ChaCha8Rng, vocab_size: usize, n: usize) -> Vec<String> {
    (0..n).map(|_| vocab_word(rng.random_range(HUB_WORDS..vocab_size))).collect()
}

/// One question's planted material. Attempt-tagged tokens make every
/// resample a fresh draw in hash space.
struct Plant {
    question: String,
    answer: String,
    /// Passage texts aligned with the question's planted passage ids.
    passage_texts: Vec<String>,
}

fn unique_tokens(question_idx: usize, tag: &str, attempt: usize, n: usize) -> Vec<String> {
    (0..n).map(|j| format!("q{question_idx}{tag}{j}t{attempt}")).collect()
}

fn plant_question(
    kind: FixtureKind,
    question_idx: usize,
    attempt: usize,
    vocab_size: usize,
    seed: u64,
) -> Plant {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        seed,
        &format!("plant-{question_idx}-{attempt}"),
    ));
    match kind {
        FixtureKind::SingleHop => {
            // Question: 3 anchors + 5 background words. Gold: the same
            // anchors, the answer, and private padding.
            let anchors = unique_tokens(question_idx, "anc", attempt, 3);
            let fillers = sample_vocab(&mut rng, vocab_size, 5);
            let answers = unique_tokens(question_idx, "ans", attempt, 2);
            let padding = unique_tokens(question_idx, "pad", attempt, 5);
            let question = [anchors.clone(), fillers].concat().join(" ");
            let gold = [anchors, answers.clone(), padding].concat().join(" ");
            Plant { question, answer: answers.join(" "), passage_texts: vec![gold] }
        }
        FixtureKind::Redundant => {
            // Distractors share all 4 anchors with the question; the gold
            // shares only 2, so the near-duplicates outrank it.
            let anchors = unique_tokens(question_idx, "anc", attempt, 4);
            let fillers = sample_vocab(&mut rng, vocab_size, 4);
            let answers = unique_tokens(question_idx, "ans", attempt, 2);
            let cluster = unique_tokens(question_idx, "dup", attempt, 6);
            let padding = unique_tokens(question_idx, "pad", attempt, 6);
            let question = [anchors.clone(), fillers].concat().join(" ");
            let gold =
                [anchors[..2].to_vec(), answers.clone(), padding].concat().join(" ");
            let mut texts = Vec::with_capacity(4);
            texts.push(gold);
            for d in 0..3 {
                // Near-duplicates: shared cluster tokens plus one private
                // token each so the texts are not byte-identical.
                let private = format!("q{question_idx}dx{d}t{attempt}");
                texts.push([anchors.clone(), cluster.clone(), vec![private]]
                    .concat()
                    .join(" "));
            }
            Plant { question, answer: answers.join(" "), passage_texts: texts }
        }
        FixtureKind::TwoHop => {
            // Question: 9 anchors + 6 hub fillers. A: the anchors + 28
            // bridge tokens (reachable from the question). B: the bridge
            // tokens + the answer (reachable only through A's text).
            //
            // The wide blocks hold the planted scores apart by several
            // hash-noise widths at the verification dimension: the
            // question finds A near cosine 0.38, hub background passages
            // trail near 0.27, foreign planted passages sit at noise
            // level, and the combined query reaches B near 0.61.
            let anchors = unique_tokens(question_idx, "anc", attempt, 9);
            let fillers = sample_hub_words(&mut rng, 6);
            let bridges = unique_tokens(question_idx, "brg", attempt, 28);
            let answers = unique_tokens(question_idx, "ans", attempt, 2);
            let question = [anchors.clone(), fillers].concat().join(" ");
            let a = [anchors, bridges.clone()].concat().join(" ");
            let b = [bridges, answers.clone()].concat().join(" ");
            Plant { question, answer: answers.join(" "), passage_texts: vec![a, b] }
        }
    }
}

/// Planted passage ids for one question, in `passage_texts` order.
fn planted_ids(kind: FixtureKind, question_idx: usize) -> Vec<String> {
    match kind {
        FixtureKind::SingleHop => vec![format!("q{question_idx:03}g")],
        FixtureKind::Redundant => vec![
            format!("q{question_idx:03}g"),
            format!("q{question_idx:03}d0"),
            format!("q{question_idx:03}d1"),
            format!("q{question_idx:03}d2"),
        ],
        FixtureKind::TwoHop => {
            vec![format!("q{question_idx:03}a"), format!("q{question_idx:03}b")]
        }
    }
}

/// Ids the truth file points at (gold evidence only; distractors are not
/// gold).
fn gold_ids(kind: FixtureKind, question_idx: usize) -> Vec<String> {
    match kind {
        FixtureKind::SingleHop | FixtureKind::Redundant => {
            vec![format!("q{question_idx:03}g")]
        }
        FixtureKind::TwoHop => {
            vec![format!("q{question_idx:03}a"), format!("q{question_idx:03}b")]
        }
    }
}

// ── Verification ────────────────────────────────────────────────────────────

/// Does this question's plant behave as designed under real retrieval?
/// The sub-corpus is embedded once per verification round and shared
/// across questions.
fn plant_holds(
    kind: FixtureKind,
    question_idx: usize,
    question: &str,
    sub: &crate::retrieval::EmbeddedSubcorpus,
    encoder: &Encoder,
) -> Result<bool, FixtureError> {
    let config = RetrievalConfig {
        k: VERIFY_K,
        subcorpus_limit: sub.len(),
        dedupe_self_pairs: true,
    };
    match kind {
        FixtureKind::SingleHop => {
            // The gold passage must win the first stage outright.
            let singles = first_stage(question, sub, encoder, &config)?;
            Ok(singles[0].passage_ids[0] == gold_ids(kind, question_idx)[0])
        }
        FixtureKind::Redundant => {
            // Every distractor must outrank the gold in the first stage.
            let singles = first_stage(question, sub, encoder, &config)?;
            let gold = &gold_ids(kind, question_idx)[0];
            let ids = planted_ids(kind, question_idx);
            let rank_of = |id: &str| singles.iter().position(|s| s.passage_ids[0] == id);
            let gold_rank = rank_of(gold).unwrap_or(usize::MAX);
            Ok(ids[1..].iter().all(|d| rank_of(d).is_some_and(|r| r < gold_rank)))
        }
        FixtureKind::TwoHop => {
            // B stays out of the first-stage top-k, and the winning
            // combination is exactly ⟨A, B⟩.
            let expected = gold_ids(kind, question_idx);
            let singles = first_stage(question, sub, encoder, &config)?;
            if singles.iter().any(|s| s.passage_ids[0] == expected[1]) {
                return Ok(false);
            }
            let retrieval = retrieve_with_embedded(question, sub, encoder, &config)?;
            Ok(retrieval.winner.passage_ids == expected)
        }
    }
}

// ── Generation ──────────────────────────────────────────────────────────────

/// Generate a fixture: background passages, per-question plants, and a
/// verify-and-resample loop bounded at 100 rounds.
pub fn generate(spec: &FixtureSpec) -> Result<Fixture, FixtureError> {
    spec.validate()?;
    let n_background = spec.corpus_size - spec.kind.planted_per_question() * spec.n_questions;

    let mut background_rng =
        ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "background"));
    let mut passages: Vec<Passage> = (0..n_background)
        .map(|i| {
            // Two-hop background carries three hub words so it occupies
            // the first-stage slots that the planted pair leaves open.
            let words = match spec.kind {
                FixtureKind::TwoHop => {
                    let mut words = sample_hub_words(&mut background_rng, 3);
                    words.extend(sample_plain_vocab(
                        &mut background_rng,
                        spec.vocab_size,
                        5,
                    ));
                    words
                }
                _ => sample_vocab(&mut background_rng, spec.vocab_size, 8),
            };
            Passage::new(format!("bg{i:04}"), words.join(" "))
        })
        .collect();

    // Plant attempt 0 for every question, tracking where each question's
    // passages live so resampling can rewrite them in place.
    let mut attempts = vec![0usize; spec.n_questions];
    let mut questions = Vec::with_capacity(spec.n_questions);
    let mut answers = Vec::with_capacity(spec.n_questions);
    let mut passage_slots = Vec::with_capacity(spec.n_questions);
    for q in 0..spec.n_questions {
        let plant = plant_question(spec.kind, q, 0, spec.vocab_size, spec.seed);
        let ids = planted_ids(spec.kind, q);
        let mut slots = Vec::with_capacity(ids.len());
        for (id, text) in ids.iter().zip(&plant.passage_texts) {
            slots.push(passages.len());
            passages.push(Passage::new(id.clone(), text.clone()));
        }
        passage_slots.push(slots);
        questions.push(plant.question);
        answers.push(plant.answer);
    }

    // Verify against the real embedder; resample failures with fresh
    // attempt-tagged tokens until everything holds or the budget runs out.
    let provider = DeterministicHashEmbedder::new(VERIFY_DIM)?;
    let head = ProjectionHead::identity(VERIFY_DIM)?;
    let mut rounds = 0;
    let mut verified = vec![false; spec.n_questions];
    loop {
        let corpus = Corpus::from_passages(passages.clone())?;
        let encoder = Encoder::new(&provider, &head)?;
        let all_ids: Vec<String> = passages.iter().map(|p| p.id.clone()).collect();
        let sub = embed_subcorpus(&corpus, &all_ids, &encoder)?;
        for q in 0..spec.n_questions {
            verified[q] = plant_holds(spec.kind, q, &questions[q], &sub, &encoder)?;
        }
        let failed: Vec<usize> =
            (0..spec.n_questions).filter(|&q| !verified[q]).collect();
        if failed.is_empty() || rounds >= MAX_RESAMPLE_ROUNDS {
            break;
        }
        rounds += 1;
        for q in failed {
            attempts[q] += 1;
            let plant =
                plant_question(spec.kind, q, attempts[q], spec.vocab_size, spec.seed);
            for (slot, text) in passage_slots[q].iter().zip(&plant.passage_texts) {
                let id = passages[*slot].id.clone();
                passages[*slot] = Passage::new(id, text.clone());
            }
            questions[q] = plant.question;
            answers[q] = plant.answer;
        }
    }

    let verified_count = verified.iter().filter(|&&v| v).count();
    let corpus = Corpus::from_passages(passages)?;
    let dataset: Vec<QAExample> = questions
        .into_iter()
        .zip(&answers)
        .map(|(question, answer)| QAExample {
            question,
            answers: vec![answer.clone()],
            subcorpus_ids: Vec::new(),
        })
        .collect();
    let truth: Vec<TruthRecord> = (0..spec.n_questions)
        .map(|q| TruthRecord { question_idx: q, gold_ids: gold_ids(spec.kind, q) })
        .collect();
    Ok(Fixture {
        corpus,
        dataset,
        truth,
        stats: PlantStats {
            verified_fraction: verified_count as f64 / spec.n_questions as f64,
            resample_rounds: rounds,
        },
    })
}

// ── Output ──────────────────────────────────────────────────────────────────

/// Write `corpus.jsonl`, `dataset.jsonl`, and `truth.jsonl` into a
/// directory.
pub fn write_fixture(dir: &Path, fixture: &Fixture) -> Result<(), FixtureError> {
    std::fs::create_dir_all(dir).map_err(|source| FixtureError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    write_corpus(&dir.join("corpus.jsonl"), fixture.corpus.passages())?;
    write_dataset(&dir.join("dataset.jsonl"), &fixture.dataset)?;

    let truth_path = dir.join("truth.jsonl");
    let display = truth_path.display().to_string();
    let io_err = |source: std::io::Error| FixtureError::Io { path: display.clone(), source };
    let mut out = BufWriter::new(File::create(&truth_path).map_err(io_err)?);
    for record in &fixture.truth {
        serde_json::to_writer(&mut out, record).map_err(|e| io_err(e.into()))?;
        out.write_all(b"\n").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Read a `truth.jsonl` written by [`write_fixture`].
pub fn read_truth(path: &Path) -> Result<Vec<TruthRecord>, FixtureError> {
    let display = path.display().to_string();
    let content = std::fs::read_to_string(path)
        .map_err(|source| FixtureError::Io { path: display.clone(), source })?;
    content
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            serde_json::from_str(line).map_err(|e| FixtureError::Io {
                path: display.clone(),
                source: e.into(),
            })
        })
        .collect()
}

// ─────────────────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;

    fn spec(kind: FixtureKind, n: usize, corpus_size: usize, seed: u64) -> FixtureSpec {
        FixtureSpec { kind, n_questions: n, corpus_size, vocab_size: 200, seed }
    }

    #[test]
    fn spec_validation_rejects_degenerate_shapes() {
        assert!(spec(FixtureKind::TwoHop, 0, 100, 0).validate().is_err());
        assert!(spec(FixtureKind::TwoHop, 1, 5, 0).validate().is_err());
        assert!(spec(FixtureKind::TwoHop, 50, 100, 0).validate().is_err(), "no room left");
        assert!(spec(FixtureKind::TwoHop, 10, 100, 0).validate().is_ok());
        let tiny_vocab =
            FixtureSpec { vocab_size: 10, ..spec(FixtureKind::SingleHop, 5, 50, 0) };
        assert!(tiny_vocab.validate().is_err());
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let s = spec(FixtureKind::TwoHop, 6, 40, 123);
        let a = generate(&s).unwrap();
        let b = generate(&s).unwrap();
        assert_eq!(a.corpus.passages(), b.corpus.passages());
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.stats.verified_fraction, b.stats.verified_fraction);

        let c = generate(&spec(FixtureKind::TwoHop, 6, 40, 124)).unwrap();
        assert_ne!(a.corpus.passages(), c.corpus.passages(), "seed must matter");
    }

    #[test]
    fn corpus_has_requested_shape_and_resolvable_truth() {
        for kind in [FixtureKind::SingleHop, FixtureKind::Redundant, FixtureKind::TwoHop] {
            let s = spec(kind, 4, 40, 7);
            let fixture = generate(&s).unwrap();
            assert_eq!(fixture.corpus.len(), 40);
            assert_eq!(fixture.dataset.len(), 4);
            assert_eq!(fixture.truth.len(), 4);
            for record in &fixture.truth {
                for id in &record.gold_ids {
                    assert!(
                        fixture.corpus.get(id).is_some(),
                        "{} truth id {id} must resolve",
                        kind.label()
                    );
                }
            }
        }
    }

    #[test]
    fn single_hop_answer_tokens_live_in_exactly_one_passage() {
        let fixture = generate(&spec(FixtureKind::SingleHop, 5, 30, 11)).unwrap();
        for (q, example) in fixture.dataset.iter().enumerate() {
            let answer_tokens = tokenize(&example.answers[0]);
            for token in &answer_tokens {
                let holders: Vec<&str> = fixture
                    .corpus
                    .passages()
                    .iter()
                    .filter(|p| tokenize(&p.text).contains(token))
                    .map(|p| p.id.as_str())
                    .collect();
                assert_eq!(holders, vec![fixture.truth[q].gold_ids[0].as_str()]);
            }
        }
    }

    #[test]
    fn two_hop_answer_is_absent_from_question_and_passage_a() {
        let fixture = generate(&spec(FixtureKind::TwoHop, 5, 40, 3)).unwrap();
        for (q, example) in fixture.dataset.iter().enumerate() {
            let answer_tokens = tokenize(&example.answers[0]);
            let question_tokens = tokenize(&example.question);
            let a_tokens =
                tokenize(&fixture.corpus.get(&fixture.truth[q].gold_ids[0]).unwrap().text);
            let b_tokens =
                tokenize(&fixture.corpus.get(&fixture.truth[q].gold_ids[1]).unwrap().text);
            for token in &answer_tokens {
                assert!(!question_tokens.contains(token));
                assert!(!a_tokens.contains(token));
                assert!(b_tokens.contains(token));
            }
            // B shares no tokens with the question itself.
            assert!(b_tokens.iter().all(|t| !question_tokens.contains(t)));
        }
    }

    #[test]
    fn two_hop_verification_reaches_the_bar_at_desk_scale() {
        let fixture = generate(&spec(FixtureKind::TwoHop, 10, 60, 42)).unwrap();
        assert!(
            fixture.stats.verified_fraction >= 0.8,
            "verified fraction {} below 0.8",
            fixture.stats.verified_fraction
        );
    }

    #[test]
    fn redundant_distractors_never_contain_the_answer() {
        let fixture = generate(&spec(FixtureKind::Redundant, 4, 40, 9)).unwrap();
        for (q, example) in fixture.dataset.iter().enumerate() {
            let answer_tokens = tokenize(&example.answers[0]);
            for d in 0..3 {
                let id = format!("q{q:03}d{d}");
                let text = &fixture.corpus.get(&id).unwrap().text;
                let tokens = tokenize(text);
                assert!(answer_tokens.iter().all(|t| !tokens.contains(t)));
            }
        }
    }

    #[test]
    fn fixture_files_round_trip() {
        let fixture = generate(&spec(FixtureKind::TwoHop, 3, 30, 5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), &fixture).unwrap();

        let corpus = crate::corpus::ingest_corpus(&dir.path().join("corpus.jsonl")).unwrap();
        let dataset = crate::corpus::ingest_dataset(&dir.path().join("dataset.jsonl")).unwrap();
        let truth = read_truth(&dir.path().join("truth.jsonl")).unwrap();
        assert_eq!(corpus.passages(), fixture.corpus.passages());
        assert_eq!(dataset.len(), fixture.dataset.len());
        for (a, b) in dataset.iter().zip(&fixture.dataset) {
            assert_eq!(a.question, b.question);
            assert_eq!(a.answers, b.answers);
        }
        assert_eq!(truth, fixture.truth);
    }
}
