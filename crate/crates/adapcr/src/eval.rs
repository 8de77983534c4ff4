//! Answer metrics and side-by-side system comparison.
//!
//! Exact Match and token-level F1 follow the SQuAD convention: answers are
//! lowercased, punctuation is stripped, the articles a/an/the are dropped,
//! and whitespace is collapsed before comparison. F1 uses multiset token
//! overlap (counts matter) and takes the best score over the gold answers.
//!
//! [`compare_systems`] runs four retrieval arms over one dataset:
//!
//! | label           | context for scoring                                   |
//! |-----------------|-------------------------------------------------------|
//! | `no_retrieval`  | empty                                                 |
//! | `fixed_top2`    | top-2 independently ranked passages, untrained head   |
//! | `adapcr`        | combination winner, untrained head                    |
//! | `adapcr_rerank` | combination winner, trained head                      |
//!
//! There is no real generator at desk scale, so the per-question
//! "prediction" is produced by the same coverage protocol the mock scorer
//! uses: the gold answer tokens that appear in the winning context or the
//! question, joined by spaces. A context that covers the whole answer earns
//! an exact match; partial coverage degrades F1. Each arm also reports the
//! mean answer log-likelihood of its winners, the headline number for
//! ordering systems.

use crate::corpus::{tokenize, Corpus, CorpusError, QAExample};
use crate::embed::{EmbeddingProvider, Encoder, ProjectionHead};
use crate::lmscore::{score_combination, AnswerScorer, ScoreCache, ScoreError};
use crate::retrieval::{
    embed_subcorpus, first_stage, retrieve_with_embedded, Combination, RetrievalConfig,
    RetrieveError, Stage,
};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no predictions to evaluate")]
    EmptyPredictions,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embed(#[from] crate::embed::EmbedError),
    #[error(transparent)]
    Retrieve(#[from] RetrieveError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("failed to write {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

// ── Normalization and metrics ───────────────────────────────────────────────

/// Lowercase, strip punctuation, drop the articles a/an/the, collapse
/// whitespace.
pub fn normalize_answer(s: &str) -> String {
    normalized_tokens(s).join(" ")
}

/// The token sequence behind [`normalize_answer`].
pub fn normalized_tokens(s: &str) -> Vec<String> {
    tokenize(s)
        .into_iter()
        .filter(|t| !matches!(t.as_str(), "a" | "an" | "the"))
        .collect()
}

/// 1 iff the prediction normalizes to the same string as any gold answer.
pub fn exact_match(pred: &str, golds: &[String]) -> bool {
    let pred = normalize_answer(pred);
    golds.iter().any(|g| normalize_answer(g) == pred)
}

fn f1_against(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let mut gold_counts: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    for t in gold {
        *gold_counts.entry(t.as_str()).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in pred {
        if let Some(c) = gold_counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred.len() as f64;
    let recall = overlap as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Best token-level F1 over the gold answers, on normalized tokens with
/// multiset overlap.
pub fn answer_f1(pred: &str, golds: &[String]) -> f64 {
    let pred_tokens = normalized_tokens(pred);
    golds
        .iter()
        .map(|g| f1_against(&pred_tokens, &normalized_tokens(g)))
        .fold(0.0, f64::max)
}

/// Aggregate metrics for one system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub system_label: String,
    pub em: f64,
    pub f1: f64,
    pub n_examples: usize,
}

/// One question's outcome under one system. `winner` is absent for the
/// no-retrieval arm, which scores against an empty context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub question_idx: usize,
    pub predicted: String,
    pub winner: Option<WinnerSummary>,
    pub gold: Vec<String>,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinnerSummary {
    pub passage_ids: Vec<String>,
    pub score: f64,
}

/// Mean EM and F1 over a prediction list.
pub fn evaluate_system(
    system_label: &str,
    predictions: &[PredictionRecord],
) -> Result<MetricResult, EvalError> {
    if predictions.is_empty() {
        return Err(EvalError::EmptyPredictions);
    }
    let n = predictions.len() as f64;
    let em = predictions
        .iter()
        .filter(|p| exact_match(&p.predicted, &p.gold))
        .count() as f64
        / n;
    let f1 = predictions.iter().map(|p| answer_f1(&p.predicted, &p.gold)).sum::<f64>() / n;
    Ok(MetricResult {
        system_label: system_label.to_owned(),
        em,
        f1,
        n_examples: predictions.len(),
    })
}

// ── Baselines ───────────────────────────────────────────────────────────────

/// Top-2 independently ranked passages, concatenated without reranking.
/// This is the fixed "always two documents" comparison arm. The reported
/// score is the rank-1 passage's score (the combination itself is never
/// scored jointly, which is the point of the baseline).
pub fn baseline_fixed_topk(
    question: &str,
    subcorpus_ids: &[String],
    corpus: &Corpus,
    encoder: &Encoder,
    k_out: usize,
) -> Result<Combination, EvalError> {
    let config = RetrievalConfig {
        k: k_out.max(1),
        subcorpus_limit: subcorpus_ids.len().max(1),
        dedupe_self_pairs: true,
    };
    let sub = embed_subcorpus(corpus, subcorpus_ids, encoder)?;
    let singles = first_stage(question, &sub, encoder, &config)?;
    let top = singles.first().ok_or(RetrieveError::EmptySubcorpus)?;
    let passage_ids: Vec<String> =
        singles.iter().map(|s| s.passage_ids[0].clone()).collect();
    let stage = if passage_ids.len() == 1 { Stage::Single } else { Stage::Pair };
    Ok(Combination { passage_ids, score: top.score, stage })
}

// ── System comparison ───────────────────────────────────────────────────────

/// Which retrieval arms to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemKind {
    NoRetrieval,
    FixedTop2,
    Adapcr,
    AdapcrRerank,
}

impl SystemKind {
    pub fn label(self) -> &'static str {
        match self {
            SystemKind::NoRetrieval => "no_retrieval",
            SystemKind::FixedTop2 => "fixed_top2",
            SystemKind::Adapcr => "adapcr",
            SystemKind::AdapcrRerank => "adapcr_rerank",
        }
    }

    pub fn parse(label: &str) -> Option<Self> {
        match label {
            "no_retrieval" => Some(SystemKind::NoRetrieval),
            "fixed_top2" => Some(SystemKind::FixedTop2),
            "adapcr" => Some(SystemKind::Adapcr),
            "adapcr_rerank" => Some(SystemKind::AdapcrRerank),
            _ => None,
        }
    }

    pub const ALL: [SystemKind; 4] = [
        SystemKind::NoRetrieval,
        SystemKind::FixedTop2,
        SystemKind::Adapcr,
        SystemKind::AdapcrRerank,
    ];
}

/// One row of the comparison report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemRow {
    pub metrics: MetricResult,
    pub mean_log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<SystemRow>,
}

/// Everything `compare_systems` needs besides the dataset.
pub struct EvalSetup<'a> {
    pub provider: &'a dyn EmbeddingProvider,
    /// Untrained head for the `fixed_top2` and `adapcr` arms.
    pub identity_head: &'a ProjectionHead,
    /// Trained head for the `adapcr_rerank` arm; falls back to
    /// `identity_head` when absent.
    pub trained_head: Option<&'a ProjectionHead>,
    pub scorer: &'a dyn AnswerScorer,
    pub cache: &'a ScoreCache,
    pub retrieval: RetrievalConfig,
}

/// The gold-token coverage protocol standing in for a generator: answer
/// tokens found in the context or question survive, the rest drop out.
fn proxy_prediction(answer: &str, context_texts: &[&str], question: &str) -> String {
    let mut covered: HashSet<String> = HashSet::new();
    for text in context_texts {
        covered.extend(tokenize(text));
    }
    covered.extend(tokenize(question));
    tokenize(answer)
        .into_iter()
        .filter(|t| covered.contains(t))
        .collect::<Vec<_>>()
        .join(" ")
}

fn predict_one(
    system: SystemKind,
    question_idx: usize,
    example: &QAExample,
    corpus: &Corpus,
    setup: &EvalSetup,
) -> Result<PredictionRecord, EvalError> {
    let head = match system {
        SystemKind::AdapcrRerank => setup.trained_head.unwrap_or(setup.identity_head),
        _ => setup.identity_head,
    };
    let encoder = Encoder::new(setup.provider, head)?;
    let winner: Option<Combination> = match system {
        SystemKind::NoRetrieval => None,
        SystemKind::FixedTop2 => Some(baseline_fixed_topk(
            &example.question,
            &example.subcorpus_ids,
            corpus,
            &encoder,
            2,
        )?),
        SystemKind::Adapcr | SystemKind::AdapcrRerank => {
            let sub = embed_subcorpus(corpus, &example.subcorpus_ids, &encoder)?;
            Some(
                retrieve_with_embedded(&example.question, &sub, &encoder, &setup.retrieval)?
                    .winner,
            )
        }
    };
    let passage_ids: Vec<String> =
        winner.as_ref().map(|w| w.passage_ids.clone()).unwrap_or_default();
    let answer = example.answers.first().ok_or(ScoreError::EmptyAnswer)?;
    let score = score_combination(
        &passage_ids,
        corpus,
        &example.question,
        answer,
        question_idx,
        setup.scorer,
        setup.cache,
    )?;
    let context_texts: Vec<&str> = passage_ids
        .iter()
        .map(|id| corpus.require(id).map(|p| p.text.as_str()))
        .collect::<Result<_, _>>()?;
    let predicted = proxy_prediction(answer, &context_texts, &example.question);
    Ok(PredictionRecord {
        question_idx,
        predicted,
        winner: winner.map(|w| WinnerSummary { passage_ids: w.passage_ids, score: w.score }),
        gold: example.answers.clone(),
        log_likelihood: score.log_likelihood,
    })
}

/// Run one system over the whole dataset.
pub fn run_system(
    system: SystemKind,
    dataset: &[QAExample],
    corpus: &Corpus,
    setup: &EvalSetup,
) -> Result<Vec<PredictionRecord>, EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    dataset
        .iter()
        .enumerate()
        .map(|(idx, example)| predict_one(system, idx, example, corpus, setup))
        .collect()
}

/// Run the requested systems and aggregate one row per system, in the
/// order given.
pub fn compare_systems(
    systems: &[SystemKind],
    dataset: &[QAExample],
    corpus: &Corpus,
    setup: &EvalSetup,
) -> Result<EvalReport, EvalError> {
    let mut rows = Vec::with_capacity(systems.len());
    for &system in systems {
        let predictions = run_system(system, dataset, corpus, setup)?;
        let metrics = evaluate_system(system.label(), &predictions)?;
        let mean_log_likelihood = predictions.iter().map(|p| p.log_likelihood).sum::<f64>()
            / predictions.len() as f64;
        rows.push(SystemRow { metrics, mean_log_likelihood });
    }
    Ok(EvalReport { rows })
}

// ── Report output ───────────────────────────────────────────────────────────

pub fn write_report_json(path: &Path, report: &EvalReport) -> Result<(), EvalError> {
    let display = path.display().to_string();
    let io_err = |source: std::io::Error| EvalError::Io { path: display.clone(), source };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    serde_json::to_writer_pretty(&mut out, report).map_err(|e| io_err(e.into()))?;
    out.write_all(b"\n").map_err(io_err)?;
    out.flush().map_err(io_err)
}

/// Aligned Markdown table, one row per system.
pub fn write_report_md(path: &Path, report: &EvalReport) -> Result<(), EvalError> {
    let display = path.display().to_string();
    let io_err = |source: std::io::Error| EvalError::Io { path: display.clone(), source };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    writeln!(out, "| {:<14} | {:>7} | {:>7} | {:>12} | {:>6} |", "system", "em", "f1", "mean_log_lik", "n")
        .map_err(io_err)?;
    writeln!(out, "|{:-<16}|{:->9}|{:->9}|{:->14}|{:->8}|", "", "", "", "", "").map_err(io_err)?;
    for row in &report.rows {
        writeln!(
            out,
            "| {:<14} | {:>7.4} | {:>7.4} | {:>12.4} | {:>6} |",
            row.metrics.system_label,
            row.metrics.em,
            row.metrics.f1,
            row.mean_log_likelihood,
            row.metrics.n_examples,
        )
        .map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

// ─────────────────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Passage;
    use crate::embed::DeterministicHashEmbedder;
    use crate::lmscore::MockScorer;

    // === Normalization ===

    #[test]
    fn normalize_lowercases_and_keeps_plain_words() {
        assert_eq!(normalize_answer("Dirty Pretty Things"), "dirty pretty things");
    }

    #[test]
    fn normalize_strips_punctuation_and_articles() {
        assert_eq!(normalize_answer("The May Revolution!"), "may revolution");
    }

    #[test]
    fn normalize_of_empty_is_empty() {
        assert_eq!(normalize_answer(""), "");
    }

    #[test]
    fn normalize_collapses_whitespace_and_drops_all_article_forms() {
        assert_eq!(normalize_answer("  a  cat   an owl  the END "), "cat owl end");
    }

    #[test]
    fn normalize_removes_punctuation_without_splitting_words() {
        assert_eq!(normalize_answer("rock-and-roll"), "rockandroll");
    }

    // === Exact match ===

    fn golds(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn exact_match_accepts_verbatim_and_article_variants() {
        assert!(exact_match("May Revolution", &golds(&["May Revolution"])));
        assert!(exact_match("the May Revolution", &golds(&["May Revolution"])));
    }

    #[test]
    fn exact_match_rejects_strict_superstring() {
        assert!(!exact_match("May Revolution of 1810", &golds(&["May Revolution"])));
    }

    #[test]
    fn exact_match_checks_every_gold() {
        assert!(exact_match("B", &golds(&["A", "b"])));
        assert!(!exact_match("C", &golds(&["A", "b"])));
    }

    // === F1 ===

    #[test]
    fn f1_identical_strings_is_one() {
        assert_eq!(answer_f1("May Revolution", &golds(&["may revolution"])), 1.0);
    }

    #[test]
    fn f1_partial_overlap_matches_hand_arithmetic() {
        // P = 2/2, R = 2/4 after the article drops: F1 = 2/3.
        let got = answer_f1("may revolution", &golds(&["the may revolution of argentina"]));
        assert!((got - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn f1_disjoint_tokens_is_zero() {
        assert_eq!(answer_f1("alpha beta", &golds(&["gamma delta"])), 0.0);
    }

    #[test]
    fn f1_takes_best_gold() {
        let gs = golds(&["totally unrelated", "may revolution"]);
        assert_eq!(answer_f1("may revolution", &gs), 1.0);
    }

    #[test]
    fn f1_empty_cases() {
        assert_eq!(answer_f1("", &golds(&["the a an"])), 1.0, "both normalize to empty");
        assert_eq!(answer_f1("", &golds(&["word"])), 0.0);
        assert_eq!(answer_f1("word", &golds(&["the"])), 0.0);
    }

    #[test]
    fn f1_uses_multiset_counts_not_sets() {
        // pred has one "dog", gold has two: overlap is 1, not 2.
        // P = 1/2, R = 1/3, F1 = 2*(1/2)*(1/3)/(5/6) = 0.4.
        let got = answer_f1("dog cat", &golds(&["dog dog bird"]));
        assert!((got - 0.4).abs() < 1e-12);
    }

    #[test]
    fn f1_is_symmetric_for_single_gold() {
        let a = "red green blue";
        let b = "green blue yellow broad";
        let ab = answer_f1(a, &golds(&[b]));
        let ba = answer_f1(b, &golds(&[a]));
        assert!((ab - ba).abs() < 1e-12);
    }

    // === evaluate_system ===

    fn record(pred: &str, gold: &[&str]) -> PredictionRecord {
        PredictionRecord {
            question_idx: 0,
            predicted: pred.into(),
            winner: None,
            gold: golds(gold),
            log_likelihood: -1.0,
        }
    }

    #[test]
    fn evaluate_system_averages_em_and_f1() {
        let preds = vec![record("exact hit", &["exact hit"]), record("zzz", &["exact hit"])];
        let m = evaluate_system("demo", &preds).unwrap();
        assert_eq!(m.em, 0.5);
        assert_eq!(m.f1, 0.5);
        assert_eq!(m.n_examples, 2);
        assert_eq!(m.system_label, "demo");
    }

    #[test]
    fn evaluate_system_is_permutation_invariant() {
        let mut preds = vec![
            record("a b", &["a b"]),
            record("c", &["c d"]),
            record("x", &["y"]),
        ];
        let forward = evaluate_system("s", &preds).unwrap();
        preds.reverse();
        let backward = evaluate_system("s", &preds).unwrap();
        assert_eq!(forward.em, backward.em);
        assert_eq!(forward.f1, backward.f1);
    }

    #[test]
    fn evaluate_system_rejects_empty_input() {
        assert!(matches!(evaluate_system("s", &[]), Err(EvalError::EmptyPredictions)));
    }

    #[test]
    fn em_one_implies_f1_one_on_random_text() {
        let preds = vec![record("The Answer!", &["answer"])];
        let m = evaluate_system("s", &preds).unwrap();
        assert_eq!(m.em, 1.0);
        assert_eq!(m.f1, 1.0);
    }

    // === System comparison (end to end, mock scorer) ===

    struct World {
        corpus: Corpus,
        dataset: Vec<QAExample>,
        provider: DeterministicHashEmbedder,
        identity: ProjectionHead,
        scorer: MockScorer,
    }

    impl World {
        /// One question whose answer sits in exactly one passage.
        fn single_answer() -> Self {
            let corpus = Corpus::from_passages(vec![
                Passage::new("p0", "the capital of freedonia is sylvania city"),
                Passage::new("p1", "freedonia grows wheat and barley"),
                Passage::new("p2", "rainfall in freedonia peaks in march"),
            ])
            .unwrap();
            let dataset = vec![QAExample {
                question: "what is the capital of freedonia?".into(),
                answers: vec!["sylvania city".into()],
                subcorpus_ids: vec!["p0".into(), "p1".into(), "p2".into()],
            }];
            Self {
                corpus,
                dataset,
                provider: DeterministicHashEmbedder::new(64).unwrap(),
                identity: ProjectionHead::identity(64).unwrap(),
                scorer: MockScorer::default(),
            }
        }

        fn setup<'a>(&'a self, cache: &'a ScoreCache) -> EvalSetup<'a> {
            EvalSetup {
                provider: &self.provider,
                identity_head: &self.identity,
                trained_head: None,
                scorer: &self.scorer,
                cache,
                retrieval: RetrievalConfig {
                    k: 2,
                    subcorpus_limit: 100,
                    dedupe_self_pairs: true,
                },
            }
        }
    }

    #[test]
    fn no_retrieval_arm_scores_empty_context_and_has_no_winner() {
        let world = World::single_answer();
        let cache = ScoreCache::in_memory();
        let preds =
            run_system(SystemKind::NoRetrieval, &world.dataset, &world.corpus, &world.setup(&cache))
                .unwrap();
        assert!(preds[0].winner.is_none());
        // Neither answer token appears in the bare question.
        assert!((preds[0].log_likelihood - 2.0 * 0.05f64.ln()).abs() < 1e-12);
        assert_eq!(preds[0].predicted, "");
    }

    #[test]
    fn retrieval_arms_cover_the_answer_when_the_right_passage_wins() {
        let world = World::single_answer();
        let cache = ScoreCache::in_memory();
        let report = compare_systems(
            &[SystemKind::NoRetrieval, SystemKind::Adapcr],
            &world.dataset,
            &world.corpus,
            &world.setup(&cache),
        )
        .unwrap();
        let no_ret = &report.rows[0];
        let adapcr = &report.rows[1];
        assert_eq!(no_ret.metrics.system_label, "no_retrieval");
        assert_eq!(adapcr.metrics.system_label, "adapcr");
        // Any context containing p0 covers both answer tokens; the question
        // shares "capital"/"freedonia" with p0, so p0 should rank first.
        assert!(adapcr.mean_log_likelihood > no_ret.mean_log_likelihood);
        assert_eq!(adapcr.metrics.em, 1.0);
    }

    #[test]
    fn fixed_top2_returns_two_distinct_passages_with_rank1_score() {
        let world = World::single_answer();
        let encoder = Encoder::new(&world.provider, &world.identity).unwrap();
        let combo = baseline_fixed_topk(
            &world.dataset[0].question,
            &world.dataset[0].subcorpus_ids,
            &world.corpus,
            &encoder,
            2,
        )
        .unwrap();
        assert_eq!(combo.passage_ids.len(), 2);
        assert_ne!(combo.passage_ids[0], combo.passage_ids[1]);

        // The reported score is the top single's score.
        let sub =
            embed_subcorpus(&world.corpus, &world.dataset[0].subcorpus_ids, &encoder).unwrap();
        let config = RetrievalConfig { k: 2, subcorpus_limit: 100, dedupe_self_pairs: true };
        let singles = first_stage(&world.dataset[0].question, &sub, &encoder, &config).unwrap();
        assert_eq!(combo.score, singles[0].score);
        assert_eq!(combo.passage_ids[0], singles[0].passage_ids[0]);
        assert_eq!(combo.passage_ids[1], singles[1].passage_ids[0]);
    }

    #[test]
    fn fixed_top2_on_singleton_subcorpus_returns_one_passage() {
        let world = World::single_answer();
        let encoder = Encoder::new(&world.provider, &world.identity).unwrap();
        let combo = baseline_fixed_topk(
            "any question",
            &["p1".to_string()],
            &world.corpus,
            &encoder,
            2,
        )
        .unwrap();
        assert_eq!(combo.passage_ids, vec!["p1"]);
        assert_eq!(combo.stage, Stage::Single);
    }

    #[test]
    fn identical_heads_produce_identical_rows() {
        let world = World::single_answer();
        let cache = ScoreCache::in_memory();
        let mut setup = world.setup(&cache);
        setup.trained_head = Some(&world.identity);
        let report = compare_systems(
            &[SystemKind::Adapcr, SystemKind::AdapcrRerank],
            &world.dataset,
            &world.corpus,
            &setup,
        )
        .unwrap();
        assert_eq!(report.rows[0].metrics.em, report.rows[1].metrics.em);
        assert_eq!(report.rows[0].metrics.f1, report.rows[1].metrics.f1);
        assert_eq!(report.rows[0].mean_log_likelihood, report.rows[1].mean_log_likelihood);
    }

    // === Report files ===

    #[test]
    fn report_files_round_trip_and_align() {
        let report = EvalReport {
            rows: vec![SystemRow {
                metrics: MetricResult {
                    system_label: "adapcr".into(),
                    em: 0.5,
                    f1: 0.75,
                    n_examples: 4,
                },
                mean_log_likelihood: -1.25,
            }],
        };
        let dir = tempfile::tempdir().unwrap();
        let json_path = dir.path().join("report.json");
        let md_path = dir.path().join("report.md");
        write_report_json(&json_path, &report).unwrap();
        write_report_md(&md_path, &report).unwrap();

        let loaded: EvalReport =
            serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
        assert_eq!(loaded, report);

        let md = std::fs::read_to_string(&md_path).unwrap();
        let lines: Vec<&str> = md.lines().collect();
        assert_eq!(lines.len(), 3, "header, divider, one row");
        assert!(lines[2].contains("adapcr"));
        assert!(lines[2].contains("0.5000"));
        assert!(lines[2].contains("-1.2500"));
        let widths: HashSet<usize> = lines.iter().map(|l| l.len()).collect();
        assert_eq!(widths.len(), 1, "table columns must align");
    }

    // === Properties ===

    mod proptests {
        use super::*;
        use proptest::prelude::*;

        fn arb_answer() -> impl Strategy<Value = String> {
            proptest::collection::vec(
                prop_oneof!["the", "May", "revolution!", "cat", "DOG", "a"],
                0..6,
            )
            .prop_map(|w| w.join(" "))
        }

        proptest! {
            /// F1 stays in [0,1] and exact match forces F1 = 1.
            #[test]
            fn f1_bounds_and_em_implies_f1(pred in arb_answer(), gold in arb_answer()) {
                let gs = vec![gold];
                let f1 = answer_f1(&pred, &gs);
                prop_assert!((0.0..=1.0).contains(&f1));
                if exact_match(&pred, &gs) {
                    prop_assert!((f1 - 1.0).abs() < 1e-12);
                }
            }

            /// Normalization is idempotent.
            #[test]
            fn normalize_is_idempotent(s in "\\PC{0,40}") {
                let once = normalize_answer(&s);
                prop_assert_eq!(normalize_answer(&once), once);
            }
        }
    }
}
