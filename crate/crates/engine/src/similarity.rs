//! Dense and sparse encodings, hybrid similarity, and brute-force top-k.
//!
//! Retrieval math is deliberately exhaustive: at desk scale a full scan is
//! fast, trivially verifiable against a sort, and has no index to drift out
//! of sync. The only concession to scale is `par_topk`, which fans the
//! scoring pass out over rayon when the `parallel` feature is enabled and
//! returns bit-identical results to `topk`.

use std::collections::BTreeMap;

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Candidate counts below this are not worth a rayon dispatch.
#[cfg(feature = "parallel")]
const PAR_THRESHOLD: usize = 512;

/// Fixed-dimension embedding with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseVector {
    values: Vec<f64>,
}

impl DenseVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("dense vector must have positive dimension"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("dense vector entries must be finite"));
        }
        Ok(DenseVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Token -> weight map with strictly positive finite weights.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparseVector {
    entries: BTreeMap<String, f64>,
}

impl SparseVector {
    pub fn new(entries: BTreeMap<String, f64>) -> Result<Self> {
        for (token, w) in &entries {
            if !w.is_finite() || *w < 0.0 {
                return Err(Error::invalid(format!(
                    "sparse weight for {token:?} must be finite and >= 0, got {w}"
                )));
            }
        }
        let entries = entries.into_iter().filter(|(_, w)| *w > 0.0).collect();
        Ok(SparseVector { entries })
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &BTreeMap<String, f64> {
        &self.entries
    }

    pub fn norm(&self) -> f64 {
        self.entries.values().map(|w| w * w).sum::<f64>().sqrt()
    }
}

/// Deterministic text-to-dense-vector encoder. Same text, same vector.
pub trait Encoder: Send + Sync {
    fn dim(&self) -> usize;
    fn encode(&self, text: &str) -> DenseVector;
}

/// Feature hashing of token unigrams and bigrams into a fixed dimension,
/// l2-normalized. No model dependency, so retrieval math is testable offline.
/// All features are non-negative, which keeps cosines in [0, 1].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashEncoder {
    dim: usize,
}

pub const DEFAULT_ENCODER_DIM: usize = 256;

impl Default for HashEncoder {
    fn default() -> Self {
        HashEncoder { dim: DEFAULT_ENCODER_DIM }
    }
}

impl HashEncoder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("encoder dimension must be positive"));
        }
        Ok(HashEncoder { dim })
    }
}

impl Encoder for HashEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> DenseVector {
        let tokens = tokenize(text);
        hash_features(token_ngrams(&tokens), self.dim)
    }
}

/// Lowercased alphanumeric runs.
pub(crate) fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Unigrams plus adjacent-pair bigrams (joined with `|`).
pub(crate) fn token_ngrams(tokens: &[String]) -> Vec<String> {
    let mut grams = Vec::with_capacity(tokens.len().saturating_mul(2));
    grams.extend(tokens.iter().cloned());
    for pair in tokens.windows(2) {
        grams.push(format!("{}|{}", pair[0], pair[1]));
    }
    grams
}

/// Hash features into `dim` buckets and l2-normalize. An empty feature list
/// produces the zero vector.
pub(crate) fn hash_features<I, S>(features: I, dim: usize) -> DenseVector
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut values = vec![0.0; dim];
    for f in features {
        let mut h: u64 = 0xCBF2_9CE4_8422_2325;
        for b in f.as_ref().bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        values[(h % dim as u64) as usize] += 1.0;
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut values {
            *v /= norm;
        }
    }
    DenseVector { values }
}

/// Cosine similarity, clamped to [-1, 1] against rounding. A zero vector on
/// either side yields 0.0 rather than an error: empty text is a legal
/// degenerate input.
pub fn cosine(a: &DenseVector, b: &DenseVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!(
            "cosine dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        log::debug!("cosine against a zero vector; defining similarity as 0.0");
        return Ok(0.0);
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Term-frequency features over lowercased alphanumeric tokens.
pub fn sparse_features(text: &str) -> SparseVector {
    let mut entries: BTreeMap<String, f64> = BTreeMap::new();
    for token in tokenize(text) {
        *entries.entry(token).or_insert(0.0) += 1.0;
    }
    SparseVector { entries }
}

/// Cosine over the token union. Disjoint supports or empty inputs give 0.
pub fn sparse_cosine(a: &SparseVector, b: &SparseVector) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a
        .entries
        .iter()
        .filter_map(|(token, wa)| b.entries.get(token).map(|wb| wa * wb))
        .sum();
    (dot / (na * nb)).clamp(0.0, 1.0)
}

/// `alpha * cosine(dense) + (1 - alpha) * sparse_cosine(sparse)`.
pub fn hybrid_sim(
    q_dense: &DenseVector,
    q_sparse: &SparseVector,
    e_dense: &DenseVector,
    e_sparse: &SparseVector,
    alpha: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let dense = cosine(q_dense, e_dense)?;
    let sparse = sparse_cosine(q_sparse, e_sparse);
    Ok(alpha * dense + (1.0 - alpha) * sparse)
}

/// Scored candidate index. `index` is the candidate's position in the input
/// slice, which doubles as the tie-break key.
pub type Ranked = (usize, f64);

fn rank(mut scored: Vec<Ranked>, k: usize) -> Vec<Ranked> {
    scored.sort_by(|(ia, sa), (ib, sb)| sb.total_cmp(sa).then(ia.cmp(ib)));
    scored.truncate(k);
    scored
}

/// Brute-force top-k: score every candidate, sort descending, break ties by
/// ascending insertion index. Returns `min(k, candidates.len())` entries.
pub fn topk<T, F>(candidates: &[T], k: usize, score: F) -> Vec<Ranked>
where
    F: Fn(&T) -> f64,
{
    let scored: Vec<Ranked> = candidates.iter().map(|c| score(c)).enumerate().collect();
    rank(scored, k)
}

/// `topk` with the scoring pass fanned out over rayon. Identical output to
/// the sequential path for any scoring function.
#[cfg(feature = "parallel")]
pub fn par_topk<T, F>(candidates: &[T], k: usize, score: F) -> Vec<Ranked>
where
    T: Sync,
    F: Fn(&T) -> f64 + Sync,
{
    let scored: Vec<Ranked> = candidates
        .par_iter()
        .map(|c| score(c))
        .enumerate()
        .collect();
    rank(scored, k)
}

/// Internal dispatcher: parallel scoring for large candidate sets when the
/// feature is on, sequential otherwise.
pub(crate) fn topk_auto<T, F>(candidates: &[T], k: usize, score: F) -> Vec<Ranked>
where
    T: Sync,
    F: Fn(&T) -> f64 + Sync,
{
    #[cfg(feature = "parallel")]
    if candidates.len() >= PAR_THRESHOLD {
        return par_topk(candidates, k, score);
    }
    topk(candidates, k, score)
}
