//! Embedding providers and trainable projection heads.
//!
//! Base embeddings are frozen; all trainable capacity lives in a pair of
//! square projection matrices (one for the query side, one for the passage
//! side) applied on top of the base vectors. Two providers exist:
//!
//! * [`DeterministicHashEmbedder`]: a seedless bag-of-tokens embedder. Each
//!   token hashes (FNV-1a, so stable across platforms and runs) to a bucket
//!   in `[0, dim)` with a sign drawn from the hash; token vectors sum and
//!   the result is L2-normalized unless it is all zeros. Token order never
//!   matters. The empty string maps to the all-zeros vector.
//! * [`RemoteEmbedder`]: a thin HTTP client for an embedding service
//!   speaking `POST /embed` with body `{"texts": [...], "side": "query" |
//!   "passage"}` and response `{"vectors": [[...]], "dim": n}`.
//!
//! Second-stage retrieval re-queries with a passage prepended to the
//! question; [`concat_query`] builds that combined text with a `[SEP]`
//! marker between the two parts.

use crate::corpus::tokenize;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Duration;
use thiserror::Error;

/// Separator inserted between passage and question in combined queries.
pub const CONCAT_SEPARATOR: &str = "[SEP]";

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding dimension must be >= 1, got {dim}")]
    InvalidDim { dim: usize },
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimMismatch { context: String, expected: usize, got: usize },
    #[error("embed request to {url} failed")]
    Transport {
        url: String,
        #[source]
        source: Box<ureq::Error>,
    },
    #[error("embed response from {url} violates the protocol: {detail}")]
    Contract { url: String, detail: String },
    #[error("failed to access {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid head checkpoint {path}: {detail}")]
    MalformedCheckpoint { path: String, detail: String },
}

/// Which encoder a text is embedded for. The hash provider ignores this;
/// remote providers and projection heads distinguish the two sides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Query,
    Passage,
}

impl Side {
    pub fn label(self) -> &'static str {
        match self {
            Side::Query => "query",
            Side::Passage => "passage",
        }
    }
}

/// Build the second-stage query text: passage first, question second,
/// joined around [`CONCAT_SEPARATOR`]. Empty parts are skipped so no
/// dangling whitespace appears.
pub fn concat_query(passage_text: &str, question: &str) -> String {
    let mut parts = Vec::with_capacity(3);
    if !passage_text.is_empty() {
        parts.push(passage_text);
    }
    parts.push(CONCAT_SEPARATOR);
    if !question.is_empty() {
        parts.push(question);
    }
    parts.join(" ")
}

// ── Base providers ──────────────────────────────────────────────────────────

/// Source of frozen base embeddings.
pub trait EmbeddingProvider {
    fn dim(&self) -> usize;

    fn embed_batch(&self, side: Side, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError>;

    fn embed(&self, side: Side, text: &str) -> Result<Vec<f64>, EmbedError> {
        let mut out = self.embed_batch(side, std::slice::from_ref(&text.to_owned()))?;
        Ok(out.pop().expect("batch of one returns one vector"))
    }
}

pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    // FNV's low-order bits disperse poorly and bucketing reduces modulo a
    // power of two in practice, so finish with an avalanche mix.
    hash ^= hash >> 30;
    hash = hash.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    hash ^= hash >> 27;
    hash = hash.wrapping_mul(0x94d0_49bb_1331_11eb);
    hash ^ (hash >> 31)
}

/// Hash a text into a signed bag-of-tokens vector of length `dim`.
///
/// Each token contributes `+1` or `-1` (top hash bit) to one bucket (hash
/// mod `dim`); the sum is L2-normalized unless every entry is zero, which
/// happens for token-free text or exact sign cancellation.
pub fn deterministic_hash_embed(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0f64; dim];
    for token in tokenize(text) {
        let h = fnv1a64(token.as_bytes());
        let bucket = (h % dim as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[bucket] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}

/// Seedless, platform-stable bag-of-tokens provider.
#[derive(Debug, Clone)]
pub struct DeterministicHashEmbedder {
    dim: usize,
}

impl DeterministicHashEmbedder {
    pub fn new(dim: usize) -> Result<Self, EmbedError> {
        if dim == 0 {
            return Err(EmbedError::InvalidDim { dim });
        }
        Ok(Self { dim })
    }
}

impl EmbeddingProvider for DeterministicHashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, _side: Side, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        Ok(texts.iter().map(|t| deterministic_hash_embed(t, self.dim)).collect())
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
    side: &'static str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
    dim: usize,
}

/// HTTP client for a remote embedding service.
pub struct RemoteEmbedder {
    agent: ureq::Agent,
    embed_url: String,
    dim: usize,
}

impl RemoteEmbedder {
    pub fn new(base_url: &str, dim: usize) -> Result<Self, EmbedError> {
        if dim == 0 {
            return Err(EmbedError::InvalidDim { dim });
        }
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(30)))
            .build();
        Ok(Self {
            agent: ureq::Agent::new_with_config(config),
            embed_url: format!("{}/embed", base_url.trim_end_matches('/')),
            dim,
        })
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, side: Side, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let request = EmbedRequest { texts, side: side.label() };
        let mut response = self
            .agent
            .post(&self.embed_url)
            .send_json(&request)
            .map_err(|source| EmbedError::Transport {
                url: self.embed_url.clone(),
                source: Box::new(source),
            })?;
        let body: EmbedResponse =
            response.body_mut().read_json().map_err(|e| EmbedError::Contract {
                url: self.embed_url.clone(),
                detail: format!("unparseable body: {e}"),
            })?;
        let contract = |detail: String| EmbedError::Contract {
            url: self.embed_url.clone(),
            detail,
        };
        if body.dim != self.dim {
            return Err(contract(format!(
                "service dim {} does not match configured dim {}",
                body.dim, self.dim
            )));
        }
        if body.vectors.len() != texts.len() {
            return Err(contract(format!(
                "{} texts sent but {} vectors returned",
                texts.len(),
                body.vectors.len()
            )));
        }
        for (i, v) in body.vectors.iter().enumerate() {
            if v.len() != self.dim {
                return Err(contract(format!(
                    "vector {} has length {}, expected {}",
                    i,
                    v.len(),
                    self.dim
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(contract(format!("vector {i} contains a non-finite entry")));
            }
        }
        Ok(body.vectors)
    }
}

// ── Projection heads ────────────────────────────────────────────────────────

/// Dense row-major square matrix. Small enough at head dimensions that no
/// external linear-algebra dependency is warranted, and keeping the ops
/// explicit makes the analytic gradients in `train` auditable end to end.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![0.0; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Option<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return None;
        }
        Some(Self { dim, data: rows.into_iter().flatten().collect() })
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    #[must_use]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.dim + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.dim + col] = value;
    }

    /// Flat row-major view, used by the gradient checker.
    pub fn entries(&self) -> &[f64] {
        &self.data
    }

    pub fn entries_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Matrix-vector product `M v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.dim, "vector length must match matrix dimension");
        self.data
            .chunks(self.dim)
            .map(|row| row.iter().zip(v).map(|(m, x)| m * x).sum())
            .collect()
    }

    /// `self += scale * u vᵀ` (rank-one update).
    pub fn add_outer(&mut self, u: &[f64], v: &[f64], scale: f64) {
        assert_eq!(u.len(), self.dim);
        assert_eq!(v.len(), self.dim);
        for (row, &ui) in u.iter().enumerate() {
            let coeff = scale * ui;
            if coeff == 0.0 {
                continue;
            }
            let base = row * self.dim;
            for (col, &vj) in v.iter().enumerate() {
                self.data[base + col] += coeff * vj;
            }
        }
    }

    /// `self += scale * other`, entrywise.
    pub fn add_scaled(&mut self, other: &SquareMatrix, scale: f64) {
        assert_eq!(self.dim, other.dim);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Trainable linear maps applied on top of base embeddings, one per side.
/// Identity initialization reproduces base-provider scores exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    dim: usize,
    pub w_query: SquareMatrix,
    pub w_passage: SquareMatrix,
}

#[derive(Serialize, Deserialize)]
struct MatrixRecord {
    side: String,
    rows: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointRecord {
    dim: usize,
    matrices: Vec<MatrixRecord>,
}

impl ProjectionHead {
    pub fn identity(dim: usize) -> Result<Self, EmbedError> {
        if dim == 0 {
            return Err(EmbedError::InvalidDim { dim });
        }
        Ok(Self {
            dim,
            w_query: SquareMatrix::identity(dim),
            w_passage: SquareMatrix::identity(dim),
        })
    }

    #[must_use]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self, side: Side) -> &SquareMatrix {
        match side {
            Side::Query => &self.w_query,
            Side::Passage => &self.w_passage,
        }
    }

    /// Project a base embedding through the head for one side.
    pub fn project(&self, side: Side, base: &[f64]) -> Vec<f64> {
        self.matrix(side).apply(base)
    }

    /// Write a JSON checkpoint: `{"dim", "matrices": [{"side", "rows"}]}`.
    pub fn save(&self, path: &Path) -> Result<(), EmbedError> {
        let record = CheckpointRecord {
            dim: self.dim,
            matrices: vec![
                MatrixRecord { side: Side::Query.label().into(), rows: self.w_query.to_rows() },
                MatrixRecord {
                    side: Side::Passage.label().into(),
                    rows: self.w_passage.to_rows(),
                },
            ],
        };
        let json = serde_json::to_string(&record).expect("checkpoint serializes");
        std::fs::write(path, json).map_err(|source| EmbedError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Load and validate a checkpoint written by [`ProjectionHead::save`].
    pub fn load(path: &Path) -> Result<Self, EmbedError> {
        let display = path.display().to_string();
        let raw = std::fs::read_to_string(path).map_err(|source| EmbedError::Io {
            path: display.clone(),
            source,
        })?;
        let record: CheckpointRecord =
            serde_json::from_str(&raw).map_err(|e| EmbedError::MalformedCheckpoint {
                path: display.clone(),
                detail: e.to_string(),
            })?;
        let malformed = |detail: String| EmbedError::MalformedCheckpoint {
            path: display.clone(),
            detail,
        };
        if record.dim == 0 {
            return Err(malformed("dim must be >= 1".into()));
        }
        let mut w_query = None;
        let mut w_passage = None;
        for m in record.matrices {
            let matrix = SquareMatrix::from_rows(m.rows)
                .ok_or_else(|| malformed(format!("{} matrix is not square", m.side)))?;
            if matrix.dim() != record.dim {
                return Err(malformed(format!(
                    "{} matrix has dim {}, header says {}",
                    m.side,
                    matrix.dim(),
                    record.dim
                )));
            }
            if !matrix.is_finite() {
                return Err(malformed(format!("{} matrix contains non-finite entries", m.side)));
            }
            let slot = match m.side.as_str() {
                "query" => &mut w_query,
                "passage" => &mut w_passage,
                other => return Err(malformed(format!("unknown side {other:?}"))),
            };
            if slot.replace(matrix).is_some() {
                return Err(malformed(format!("side {:?} appears twice", m.side)));
            }
        }
        match (w_query, w_passage) {
            (Some(w_query), Some(w_passage)) => {
                Ok(Self { dim: record.dim, w_query, w_passage })
            }
            _ => Err(malformed("checkpoint must contain a query and a passage matrix".into())),
        }
    }
}

/// Provider plus head: the full text-to-scoring-vector path.
pub struct Encoder<'a> {
    provider: &'a dyn EmbeddingProvider,
    head: &'a ProjectionHead,
}

impl<'a> Encoder<'a> {
    pub fn new(
        provider: &'a dyn EmbeddingProvider,
        head: &'a ProjectionHead,
    ) -> Result<Self, EmbedError> {
        if provider.dim() != head.dim() {
            return Err(EmbedError::DimMismatch {
                context: "encoder construction (head vs provider)".into(),
                expected: provider.dim(),
                got: head.dim(),
            });
        }
        Ok(Self { provider, head })
    }

    #[must_use]
    pub fn dim(&self) -> usize {
        self.head.dim()
    }

    pub fn provider(&self) -> &dyn EmbeddingProvider {
        self.provider
    }

    pub fn head(&self) -> &ProjectionHead {
        self.head
    }

    pub fn encode(&self, side: Side, text: &str) -> Result<Vec<f64>, EmbedError> {
        Ok(self.head.project(side, &self.provider.embed(side, text)?))
    }

    pub fn encode_batch(&self, side: Side, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let bases = self.provider.embed_batch(side, texts)?;
        Ok(bases.iter().map(|b| self.head.project(side, b)).collect())
    }
}

// ─────────────────────────────────────────────────────────────────────────────
