//! Answer-likelihood scoring.
//!
//! A scorer estimates how likely a language model is to produce the gold
//! answer given a retrieved context and the question. The answer factorizes
//! over its tokens: `P(y | d, x) = Π_i P(y_i | d, x, y_<i)`, so scorers
//! return the sum of per-token log-probabilities plus the token count.
//!
//! [`MockScorer`] is the deterministic desk-scale stand-in: each answer
//! token receives probability `ε + (1 - 2ε) * covered`, where `covered` is
//! 1 when the token occurs in the context or the question and 0 otherwise
//! (ε = 0.05 by default). A fully covered n-token answer therefore scores
//! `n · ln(0.95)` and a fully uncovered one `n · ln(0.05)`.
//!
//! [`RemoteScorer`] posts `{"context": [...], "question", "answer"}` to
//! `POST /score` and expects `{"log_likelihood", "token_count"}` back,
//! retrying transport failures with exponential backoff. Responses with a
//! positive log-likelihood or a zero token count violate the protocol and
//! are rejected without retry.
//!
//! Scores are cached by `(combination passage ids, question index, answer)`
//! in a JSONL-backed write-through [`ScoreCache`].

use crate::corpus::{tokenize, Corpus, CorpusError, QAExample};
use crate::retrieval::CandidateSet;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("epsilon must lie in (0, 0.5), got {epsilon}")]
    InvalidEpsilon { epsilon: f64 },
    #[error("answer must be non-empty")]
    EmptyAnswer,
    #[error("score request to {url} failed after {attempts} attempts")]
    Transport {
        url: String,
        attempts: u32,
        #[source]
        source: Box<ureq::Error>,
    },
    #[error("score response from {url} violates the protocol: {detail}")]
    Contract { url: String, detail: String },
    #[error("failed to access {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed cache entry")]
    MalformedCache {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Everything a scorer needs for one combination.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreRequest {
    /// Passage texts in combination order.
    pub context: Vec<String>,
    pub question: String,
    pub answer: String,
}

/// Result of scoring one answer against one context.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmScore {
    /// Sum of per-token log-probabilities; never positive.
    pub log_likelihood: f64,
    pub token_count: usize,
}

/// Answer-likelihood scorer.
pub trait AnswerScorer {
    fn score(&self, request: &ScoreRequest) -> Result<LmScore, ScoreError>;
}

// ── Mock scorer ─────────────────────────────────────────────────────────────

/// Deterministic coverage-based scorer.
#[derive(Debug, Clone, Copy)]
pub struct MockScorer {
    epsilon: f64,
}

impl Default for MockScorer {
    fn default() -> Self {
        Self { epsilon: 0.05 }
    }
}

impl MockScorer {
    pub fn new(epsilon: f64) -> Result<Self, ScoreError> {
        if !(epsilon > 0.0 && epsilon < 0.5) {
            return Err(ScoreError::InvalidEpsilon { epsilon });
        }
        Ok(Self { epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

impl AnswerScorer for MockScorer {
    fn score(&self, request: &ScoreRequest) -> Result<LmScore, ScoreError> {
        if request.answer.is_empty() {
            return Err(ScoreError::EmptyAnswer);
        }
        let mut covered: HashSet<String> = HashSet::new();
        for passage in &request.context {
            covered.extend(tokenize(passage));
        }
        covered.extend(tokenize(&request.question));

        let answer_tokens = tokenize(&request.answer);
        let mut log_likelihood = 0.0;
        for token in &answer_tokens {
            let hit = covered.contains(token);
            let p = self.epsilon + (1.0 - 2.0 * self.epsilon) * f64::from(u8::from(hit));
            log_likelihood += p.ln();
        }
        // An answer that tokenizes to nothing is the empty product: its
        // probability is 1 and it counts as a single trivial token.
        Ok(LmScore { log_likelihood, token_count: answer_tokens.len().max(1) })
    }
}

// ── Remote scorer ───────────────────────────────────────────────────────────

#[derive(Deserialize)]
struct ScoreResponse {
    log_likelihood: f64,
    token_count: usize,
}

/// HTTP client for a remote answer-likelihood service.
pub struct RemoteScorer {
    agent: ureq::Agent,
    score_url: String,
    max_attempts: u32,
    backoff_base: Duration,
}

impl RemoteScorer {
    pub fn new(base_url: &str) -> Self {
        Self::with_retry(base_url, 3, Duration::from_millis(200))
    }

    /// `max_attempts` includes the first try; waits grow as
    /// `backoff_base * 2^attempt` between tries.
    pub fn with_retry(base_url: &str, max_attempts: u32, backoff_base: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(30)))
            .build();
        Self {
            agent: ureq::Agent::new_with_config(config),
            score_url: format!("{}/score", base_url.trim_end_matches('/')),
            max_attempts: max_attempts.max(1),
            backoff_base,
        }
    }

    fn post_once(&self, request: &ScoreRequest) -> Result<ScoreResponse, ureq::Error> {
        let mut response = self.agent.post(&self.score_url).send_json(request)?;
        response.body_mut().read_json()
    }
}

/// Client errors (4xx) indicate a malformed request and never heal on
/// retry; everything else is worth another attempt.
fn retryable(error: &ureq::Error) -> bool {
    !matches!(error, ureq::Error::StatusCode(code) if (400..500).contains(code))
}

impl AnswerScorer for RemoteScorer {
    fn score(&self, request: &ScoreRequest) -> Result<LmScore, ScoreError> {
        if request.answer.is_empty() {
            return Err(ScoreError::EmptyAnswer);
        }
        let mut attempt = 0;
        let body = loop {
            match self.post_once(request) {
                Ok(body) => break body,
                Err(error) => {
                    attempt += 1;
                    if attempt >= self.max_attempts || !retryable(&error) {
                        return Err(ScoreError::Transport {
                            url: self.score_url.clone(),
                            attempts: attempt,
                            source: Box::new(error),
                        });
                    }
                    std::thread::sleep(self.backoff_base * 2u32.pow(attempt - 1));
                }
            }
        };
        let contract = |detail: String| ScoreError::Contract {
            url: self.score_url.clone(),
            detail,
        };
        if !body.log_likelihood.is_finite() || body.log_likelihood > 0.0 {
            return Err(contract(format!(
                "log_likelihood must be finite and <= 0, got {}",
                body.log_likelihood
            )));
        }
        if body.token_count == 0 {
            return Err(contract("token_count must be >= 1".into()));
        }
        Ok(LmScore { log_likelihood: body.log_likelihood, token_count: body.token_count })
    }
}

// ── Cache ───────────────────────────────────────────────────────────────────

/// Cache key: which combination, which question, which answer.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub passage_ids: Vec<String>,
    pub question_idx: usize,
    pub answer: String,
}

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    passage_ids: Vec<String>,
    question_idx: usize,
    answer: String,
    log_likelihood: f64,
    token_count: usize,
}

struct CacheInner {
    map: HashMap<CacheKey, LmScore>,
    writer: Option<BufWriter<File>>,
}

/// Write-through score cache with an optional JSONL backing file. Writes
/// are serialized behind a lock and visible to every subsequent read in
/// the same process; reopening the file restores all entries.
pub struct ScoreCache {
    inner: Mutex<CacheInner>,
}

impl ScoreCache {
    /// Purely in-memory cache.
    pub fn in_memory() -> Self {
        Self { inner: Mutex::new(CacheInner { map: HashMap::new(), writer: None }) }
    }

    /// Open (or create) a JSONL-backed cache and load existing entries.
    pub fn open(path: &Path) -> Result<Self, ScoreError> {
        let display = path.display().to_string();
        let mut map = HashMap::new();
        if path.exists() {
            let file = File::open(path).map_err(|source| ScoreError::Io {
                path: display.clone(),
                source,
            })?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|source| ScoreError::Io {
                    path: display.clone(),
                    source,
                })?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: CacheRecord = serde_json::from_str(&line).map_err(|source| {
                    ScoreError::MalformedCache { path: display.clone(), line: i + 1, source }
                })?;
                map.insert(
                    CacheKey {
                        passage_ids: rec.passage_ids,
                        question_idx: rec.question_idx,
                        answer: rec.answer,
                    },
                    LmScore {
                        log_likelihood: rec.log_likelihood,
                        token_count: rec.token_count,
                    },
                );
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| ScoreError::Io { path: display, source })?;
        Ok(Self {
            inner: Mutex::new(CacheInner { map, writer: Some(BufWriter::new(file)) }),
        })
    }

    pub fn get(&self, key: &CacheKey) -> Option<LmScore> {
        self.inner.lock().expect("cache lock").map.get(key).copied()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("cache lock").map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn insert(&self, key: CacheKey, score: LmScore) -> Result<(), ScoreError> {
        let mut inner = self.inner.lock().expect("cache lock");
        if inner.map.insert(key.clone(), score).is_none() {
            if let Some(writer) = inner.writer.as_mut() {
                let rec = CacheRecord {
                    passage_ids: key.passage_ids,
                    question_idx: key.question_idx,
                    answer: key.answer,
                    log_likelihood: score.log_likelihood,
                    token_count: score.token_count,
                };
                let io_err = |source: std::io::Error| ScoreError::Io {
                    path: "<cache file>".into(),
                    source,
                };
                serde_json::to_writer(&mut *writer, &rec).map_err(|e| io_err(e.into()))?;
                writer.write_all(b"\n").map_err(io_err)?;
                writer.flush().map_err(io_err)?;
            }
        }
        Ok(())
    }
}

// ── Pool scoring ────────────────────────────────────────────────────────────

/// Score one combination's context for a question, via the cache.
pub fn score_combination(
    passage_ids: &[String],
    corpus: &Corpus,
    question: &str,
    answer: &str,
    question_idx: usize,
    scorer: &dyn AnswerScorer,
    cache: &ScoreCache,
) -> Result<LmScore, ScoreError> {
    let key = CacheKey {
        passage_ids: passage_ids.to_vec(),
        question_idx,
        answer: answer.to_owned(),
    };
    if let Some(hit) = cache.get(&key) {
        return Ok(hit);
    }
    let context = passage_ids
        .iter()
        .map(|id| corpus.require(id).map(|p| p.text.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let score = scorer.score(&ScoreRequest {
        context,
        question: question.to_owned(),
        answer: answer.to_owned(),
    })?;
    cache.insert(key, score)?;
    Ok(score)
}

/// Score every candidate in a pool. The first gold answer is the scored
/// target; results align with the pool's canonical iteration order.
pub fn score_pool(
    candidates: &CandidateSet,
    corpus: &Corpus,
    example: &QAExample,
    question_idx: usize,
    scorer: &dyn AnswerScorer,
    cache: &ScoreCache,
) -> Result<Vec<LmScore>, ScoreError> {
    let answer = example.answers.first().ok_or(ScoreError::EmptyAnswer)?;
    candidates
        .iter()
        .map(|c| {
            score_combination(
                &c.passage_ids,
                corpus,
                &example.question,
                answer,
                question_idx,
                scorer,
                cache,
            )
        })
        .collect()
}

// ─────────────────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;

    fn request(context: &[&str], question: &str, answer: &str) -> ScoreRequest {
        ScoreRequest {
            context: context.iter().map(|s| s.to_string()).collect(),
            question: question.into(),
            answer: answer.into(),
        }
    }

    // === Mock scorer ===

    #[test]
    fn fully_covered_answer_scores_n_ln_point_95() {
        let scorer = MockScorer::default();
        let got = scorer
            .score(&request(&["the may revolution happened"], "what?", "May Revolution"))
            .unwrap();
        assert_eq!(got.token_count, 2);
        assert!((got.log_likelihood - 2.0 * 0.95f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn fully_uncovered_answer_scores_n_ln_point_05() {
        let scorer = MockScorer::default();
        let got = scorer.score(&request(&["unrelated text"], "also unrelated", "zanzibar treaty"))
            .unwrap();
        assert_eq!(got.token_count, 2);
        assert!((got.log_likelihood - 2.0 * 0.05f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn per_token_factorization_matches_independent_recomputation() {
        // Oracle: evaluate the token product Π p_i by direct enumeration.
        let scorer = MockScorer::default();
        let req = request(
            &["the treaty was signed in Paris", "it ended the war"],
            "where was the treaty signed?",
            "Signed in Paris, France!",
        );
        let got = scorer.score(&req).unwrap();

        let mut covered = HashSet::new();
        for p in &req.context {
            covered.extend(tokenize(p));
        }
        covered.extend(tokenize(&req.question));
        let mut expected = 0.0;
        let tokens = tokenize(&req.answer);
        for t in &tokens {
            expected += if covered.contains(t) { 0.95f64.ln() } else { 0.05f64.ln() };
        }
        assert_eq!(got.token_count, tokens.len());
        assert!((got.log_likelihood - expected).abs() < 1e-12);
        // "signed", "in", "paris" covered; "france" not: mixed case.
        assert!((got.log_likelihood - (3.0 * 0.95f64.ln() + 0.05f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn question_tokens_count_as_coverage() {
        let scorer = MockScorer::default();
        let got = scorer.score(&request(&[], "is paris nice?", "Paris")).unwrap();
        assert!((got.log_likelihood - 0.95f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn answer_without_tokens_is_the_empty_product() {
        let scorer = MockScorer::default();
        let got = scorer.score(&request(&["x"], "q", "?!")).unwrap();
        assert_eq!(got.log_likelihood, 0.0);
        assert_eq!(got.token_count, 1);
    }

    #[test]
    fn empty_answer_is_rejected() {
        let scorer = MockScorer::default();
        assert!(matches!(
            scorer.score(&request(&["x"], "q", "")),
            Err(ScoreError::EmptyAnswer)
        ));
    }

    #[test]
    fn epsilon_outside_open_interval_is_rejected() {
        assert!(MockScorer::new(0.0).is_err());
        assert!(MockScorer::new(0.5).is_err());
        assert!(MockScorer::new(0.3).is_ok());
    }

    // === Cache ===

    fn key(ids: &[&str], idx: usize, answer: &str) -> CacheKey {
        CacheKey {
            passage_ids: ids.iter().map(|s| s.to_string()).collect(),
            question_idx: idx,
            answer: answer.into(),
        }
    }

    #[test]
    fn cache_round_trips_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.jsonl");
        {
            let cache = ScoreCache::open(&path).unwrap();
            cache
                .insert(key(&["a"], 0, "x"), LmScore { log_likelihood: -1.5, token_count: 2 })
                .unwrap();
            cache
                .insert(
                    key(&["a", "b"], 1, "y"),
                    LmScore { log_likelihood: -0.25, token_count: 1 },
                )
                .unwrap();
        }
        let reopened = ScoreCache::open(&path).unwrap();
        assert_eq!(reopened.len(), 2);
        assert_eq!(
            reopened.get(&key(&["a"], 0, "x")),
            Some(LmScore { log_likelihood: -1.5, token_count: 2 })
        );
        assert_eq!(
            reopened.get(&key(&["a", "b"], 1, "y")),
            Some(LmScore { log_likelihood: -0.25, token_count: 1 })
        );
        assert_eq!(reopened.get(&key(&["b", "a"], 1, "y")), None, "id order is significant");
    }

    #[test]
    fn cache_read_your_writes_in_memory() {
        let cache = ScoreCache::in_memory();
        let k = key(&["p"], 7, "ans");
        assert_eq!(cache.get(&k), None);
        cache.insert(k.clone(), LmScore { log_likelihood: -2.0, token_count: 3 }).unwrap();
        assert_eq!(cache.get(&k).unwrap().token_count, 3);
    }

    #[test]
    fn malformed_cache_line_is_reported_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.jsonl");
        std::fs::write(&path, "{\"passage_ids\": [\"a\"], \"question_idx\": 0, \"answer\": \"x\", \"log_likelihood\": -1.0, \"token_count\": 1}\nnot json\n").unwrap();
        match ScoreCache::open(&path) {
            Err(ScoreError::MalformedCache { line, .. }) => assert_eq!(line, 2),
            Err(other) => panic!("expected malformed-cache error, got {other:?}"),
            Ok(_) => panic!("expected malformed-cache error, got a cache"),
        }
    }

    // === score_pool ===

    #[test]
    fn score_pool_uses_cache_and_aligns_with_canonical_order() {
        use crate::corpus::Passage;
        use crate::retrieval::{CandidateSet, Combination, Stage};

        let corpus = Corpus::from_passages(vec![
            Passage::new("p0", "the answer token lives here"),
            Passage::new("p1", "irrelevant filler text"),
        ])
        .unwrap();
        let pool = CandidateSet {
            question: "where does it live?".into(),
            singles: vec![
                Combination { passage_ids: vec!["p0".into()], score: 0.9, stage: Stage::Single },
                Combination { passage_ids: vec!["p1".into()], score: 0.5, stage: Stage::Single },
            ],
            pairs: vec![Combination {
                passage_ids: vec!["p0".into(), "p1".into()],
                score: 0.7,
                stage: Stage::Pair,
            }],
        };
        let example = QAExample {
            question: "where does it live?".into(),
            answers: vec!["answer token".into()],
            subcorpus_ids: vec!["p0".into(), "p1".into()],
        };
        let scorer = MockScorer::default();
        let cache = ScoreCache::in_memory();
        let scores = score_pool(&pool, &corpus, &example, 0, &scorer, &cache).unwrap();
        assert_eq!(scores.len(), 3);
        // p0 covers both tokens, p1 neither, the pair covers both.
        assert!((scores[0].log_likelihood - 2.0 * 0.95f64.ln()).abs() < 1e-12);
        assert!((scores[1].log_likelihood - 2.0 * 0.05f64.ln()).abs() < 1e-12);
        assert!((scores[2].log_likelihood - 2.0 * 0.95f64.ln()).abs() < 1e-12);
        assert_eq!(cache.len(), 3);

        // Second call is served from the cache (same values, same count).
        let again = score_pool(&pool, &corpus, &example, 0, &scorer, &cache).unwrap();
        assert_eq!(again, scores);
        assert_eq!(cache.len(), 3);
    }

    // === Properties ===

    mod proptests {
        use super::*;
        use proptest::prelude::*;

        fn arb_words(max: usize) -> impl Strategy<Value = String> {
            proptest::collection::vec(prop_oneof!["cat", "dog", "sun", "sky", "run"], 1..=max)
                .prop_map(|w| w.join(" "))
        }

        proptest! {
            /// Log-likelihood is never positive and exp(ll) stays in (0, 1].
            #[test]
            fn mock_log_likelihood_is_non_positive(
                ctx in arb_words(8),
                q in arb_words(4),
                ans in arb_words(5),
            ) {
                let scorer = MockScorer::default();
                let got = scorer.score(&ScoreRequest {
                    context: vec![ctx],
                    question: q,
                    answer: ans,
                }).unwrap();
                prop_assert!(got.log_likelihood <= 0.0);
                let p = got.log_likelihood.exp();
                prop_assert!(p > 0.0 && p <= 1.0);
            }

            /// Adding context never lowers the likelihood: coverage grows.
            #[test]
            fn mock_likelihood_is_monotone_in_context(
                ctx in arb_words(8),
                extra in arb_words(8),
                q in arb_words(4),
                ans in arb_words(5),
            ) {
                let scorer = MockScorer::default();
                let narrow = scorer.score(&ScoreRequest {
                    context: vec![ctx.clone()],
                    question: q.clone(),
                    answer: ans.clone(),
                }).unwrap();
                let wide = scorer.score(&ScoreRequest {
                    context: vec![ctx, extra],
                    question: q,
                    answer: ans,
                }).unwrap();
                prop_assert!(wide.log_likelihood >= narrow.log_likelihood - 1e-12);
            }
        }
    }
}
