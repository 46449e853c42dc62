//! Cosine primitives, exact nearest-neighbour search and embedder clients.
//!
//! Every stored vector is unit-norm, so similarity against the index is a dot
//! product accumulated in `f64`. Search is a flat scan: results are exact and
//! therefore reproducible, which the quartile analytics rely on.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};
use std::sync::Mutex;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::{Instance, InstanceId};
use crate::themes::{Theme, ThemeId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IndexError {
    #[error("similarity is undefined for a zero vector")]
    ZeroVector,
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("theme {0} has no good examples or explanatory phrases")]
    EmptyTheme(ThemeId),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("embedder at {endpoint} is unreachable: {message} (retry once the encoder service is reachable)")]
    Transport { endpoint: String, message: String },
    #[error("embedder returned a malformed response: {0}")]
    BadResponse(String),
    #[error("embedder returned dimension {found}, expected {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("cannot embed empty text")]
    EmptyText,
}

impl EmbedError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, EmbedError::Transport { .. })
    }
}

pub fn dot(u: &[f32], v: &[f32]) -> f64 {
    u.iter().zip(v).map(|(&a, &b)| a as f64 * b as f64).sum()
}

pub fn norm(u: &[f32]) -> f64 {
    dot(u, u).sqrt()
}

/// Unit-norm copy of `v`, or `None` for a zero (or non-finite) vector.
pub fn normalize(v: &[f32]) -> Option<Vec<f32>> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return None;
    }
    Some(v.iter().map(|&x| (x as f64 / n) as f32).collect())
}

/// Normalized arithmetic mean of a set of vectors.
pub fn normalized_mean<'a, I>(vectors: I, dim: usize) -> Option<Vec<f32>>
where
    I: IntoIterator<Item = &'a [f32]>,
{
    let mut acc = vec![0f64; dim];
    let mut count = 0usize;
    for v in vectors {
        for (a, &x) in acc.iter_mut().zip(v) {
            *a += x as f64;
        }
        count += 1;
    }
    if count == 0 {
        return None;
    }
    let n = acc.iter().map(|a| a * a).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return None;
    }
    Some(acc.iter().map(|a| (a / n) as f32).collect())
}

pub fn cosine(u: &[f32], v: &[f32]) -> Result<f64, IndexError> {
    if u.len() != v.len() {
        return Err(IndexError::DimensionMismatch { left: u.len(), right: v.len() });
    }
    let nu = norm(u);
    let nv = norm(v);
    if nu == 0.0 || nv == 0.0 {
        return Err(IndexError::ZeroVector);
    }
    Ok(dot(u, v) / (nu * nv))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborHit {
    pub id: InstanceId,
    pub similarity: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "theme", rename_all = "snake_case")]
pub enum NeighborFilter {
    All,
    Unassigned,
    Theme(ThemeId),
}

impl NeighborFilter {
    pub fn admits(&self, inst: &Instance) -> bool {
        match self {
            NeighborFilter::All => true,
            NeighborFilter::Unassigned => !inst.assignment.is_assigned(),
            NeighborFilter::Theme(t) => inst.assignment.theme() == Some(*t),
        }
    }
}

/// Immutable row-major matrix of unit embeddings.
#[derive(Clone, Debug, Default)]
pub struct EmbedIndex {
    dim: usize,
    ids: Vec<InstanceId>,
    /// Store position of each row.
    positions: Vec<usize>,
    rows: HashMap<InstanceId, usize>,
    data: Vec<f32>,
}

impl EmbedIndex {
    pub fn empty(dim: usize) -> Self {
        Self { dim, ..Self::default() }
    }

    /// Indexes every instance that already has an embedding.
    pub fn build(dim: usize, instances: &[Instance]) -> Self {
        let mut index = Self::empty(dim);
        for (pos, inst) in instances.iter().enumerate() {
            if inst.embedding.len() == dim && dim > 0 {
                index.rows.insert(inst.id.clone(), index.ids.len());
                index.ids.push(inst.id.clone());
                index.positions.push(pos);
                index.data.extend_from_slice(&inst.embedding);
            }
        }
        index
    }

    /// Builds an index straight from `(id, vector)` pairs; vectors are normalized.
    pub fn from_vectors(dim: usize, vectors: &[(InstanceId, Vec<f32>)]) -> Result<Self, IndexError> {
        let mut index = Self::empty(dim);
        for (pos, (id, v)) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(IndexError::DimensionMismatch { left: dim, right: v.len() });
            }
            let unit = normalize(v).ok_or(IndexError::ZeroVector)?;
            index.rows.insert(id.clone(), index.ids.len());
            index.ids.push(id.clone());
            index.positions.push(pos);
            index.data.extend_from_slice(&unit);
        }
        Ok(index)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[InstanceId] {
        &self.ids
    }

    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.rows.get(id).copied()
    }

    pub fn position_of_row(&self, row: usize) -> usize {
        self.positions[row]
    }

    pub fn vector(&self, row: usize) -> &[f32] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    pub fn vector_of(&self, id: &str) -> Option<&[f32]> {
        self.row_of(id).map(|r| self.vector(r))
    }

    /// Exact top-`k` by cosine over rows whose store position passes `keep`.
    /// Sorted by similarity descending, ties by ascending id.
    pub fn search<F>(&self, query: &[f32], k: usize, keep: F) -> Result<Vec<NeighborHit>, IndexError>
    where
        F: Fn(usize) -> bool + Sync,
    {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        if query.len() != self.dim {
            return Err(IndexError::DimensionMismatch { left: query.len(), right: self.dim });
        }
        let q = normalize(query).ok_or(IndexError::ZeroVector)?;
        let mut scored: Vec<(f64, usize)> = (0..self.len())
            .into_par_iter()
            .filter(|&r| keep(self.positions[r]))
            .map(|r| (dot(&q, self.vector(r)), r))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
            b.0.total_cmp(&a.0).then_with(|| self.ids[a.1].cmp(&self.ids[b.1]))
        };
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_by(cmp);
        Ok(scored
            .into_iter()
            .map(|(s, r)| NeighborHit { id: self.ids[r].clone(), similarity: s })
            .collect())
    }
}

/// Nearest neighbours of `query` among `instances` admitted by `filter`.
pub fn nearest_neighbors(
    index: &EmbedIndex,
    instances: &[Instance],
    query: &[f32],
    k: usize,
    filter: NeighborFilter,
) -> Result<Vec<NeighborHit>, IndexError> {
    index.search(query, k, |pos| filter.admits(&instances[pos]))
}

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("query text is empty")]
    EmptyText,
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

/// Embeds `text` and returns its nearest neighbours. Nothing is returned if
/// the embedder fails.
pub fn query_text(
    embedder: &dyn Embedder,
    index: &EmbedIndex,
    instances: &[Instance],
    text: &str,
    k: usize,
    filter: NeighborFilter,
) -> Result<Vec<NeighborHit>, QueryError> {
    if text.trim().is_empty() {
        return Err(QueryError::EmptyText);
    }
    let mut vectors = embedder.embed(&[text.to_string()])?;
    let v = vectors
        .pop()
        .ok_or_else(|| EmbedError::BadResponse("no vector returned".into()))?;
    Ok(nearest_neighbors(index, instances, &v, k, filter)?)
}

/// Max cosine between `embedding` and any of the theme's good examples or
/// explanatory phrases. Bad examples never enter this score.
pub fn theme_similarity(embedding: &[f32], theme: &Theme) -> Result<f64, IndexError> {
    let mut best: Option<f64> = None;
    for e in theme.positive_embeddings() {
        if e.len() != embedding.len() {
            return Err(IndexError::DimensionMismatch { left: embedding.len(), right: e.len() });
        }
        let s = dot(embedding, e);
        best = Some(best.map_or(s, |b: f64| b.max(s)));
    }
    best.ok_or(IndexError::EmptyTheme(theme.id))
}

/// External sentence encoder.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn model_id(&self) -> &str;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError>;
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
}

/// Client for an encoder speaking `POST {texts: [..]} -> {vectors: [[..]]}`.
pub struct HttpEmbedder {
    endpoint: String,
    model: String,
    dim: usize,
    client: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn new(endpoint: &str, model: &str, dim: usize, timeout: Duration) -> Result<Self, EmbedError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EmbedError::Transport { endpoint: endpoint.to_string(), message: e.to_string() })?;
        Ok(Self { endpoint: endpoint.to_string(), model: model.to_string(), dim, client })
    }
}

impl Embedder for HttpEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn model_id(&self) -> &str {
        &self.model
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let transport = |e: reqwest::Error| EmbedError::Transport {
            endpoint: self.endpoint.clone(),
            message: e.to_string(),
        };
        let resp = self
            .client
            .post(&self.endpoint)
            .json(&EmbedRequest { texts })
            .send()
            .map_err(transport)?;
        if !resp.status().is_success() {
            return Err(EmbedError::Transport {
                endpoint: self.endpoint.clone(),
                message: format!("status {}", resp.status()),
            });
        }
        let body: EmbedResponse = resp.json().map_err(|e| EmbedError::BadResponse(e.to_string()))?;
        if body.vectors.len() != texts.len() {
            return Err(EmbedError::BadResponse(format!(
                "{} vectors for {} texts",
                body.vectors.len(),
                texts.len()
            )));
        }
        for v in &body.vectors {
            if v.len() != self.dim {
                return Err(EmbedError::Dimension { expected: self.dim, found: v.len() });
            }
        }
        Ok(body.vectors)
    }
}

/// Deterministic bag-of-words encoder: every token owns a pseudo-random
/// direction and a text embeds to the normalized sum of its tokens. Texts that
/// share words land close together, which is enough for offline sessions and
/// tests.
#[derive(Clone, Debug)]
pub struct HashingEmbedder {
    dim: usize,
    seed: u64,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim, seed: 0x7e3a_51c9 }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn token_vector(&self, token: &str, acc: &mut [f64]) {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(token.as_bytes()) ^ self.seed);
        for a in acc.iter_mut() {
            *a += rng.random::<f64>() * 2.0 - 1.0;
        }
    }

    pub fn embed_one(&self, text: &str) -> Vec<f32> {
        let mut acc = vec![0f64; self.dim];
        let mut any = false;
        for tok in tokenize(text) {
            self.token_vector(&tok, &mut acc);
            any = true;
        }
        if !any {
            self.token_vector(text, &mut acc);
        }
        let n = acc.iter().map(|a| a * a).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        acc.iter().map(|a| (a / n) as f32).collect()
    }
}

impl Embedder for HashingEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn model_id(&self) -> &str {
        "hashing-bow"
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        texts
            .iter()
            .map(|t| {
                if t.is_empty() {
                    Err(EmbedError::EmptyText)
                } else {
                    Ok(self.embed_one(t))
                }
            })
            .collect()
    }
}

/// Memoizes another embedder by text; only cache misses reach the inner client.
pub struct CachedEmbedder<E> {
    inner: E,
    cache: Mutex<HashMap<String, Vec<f32>>>,
    misses: AtomicUsize,
}

impl<E: Embedder> CachedEmbedder<E> {
    pub fn new(inner: E) -> Self {
        Self { inner, cache: Mutex::new(HashMap::new()), misses: AtomicUsize::new(0) }
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    /// Number of texts that had to be sent to the inner embedder.
    pub fn miss_count(&self) -> usize {
        self.misses.load(AtomicOrdering::Relaxed)
    }
}

impl<E: Embedder> Embedder for CachedEmbedder<E> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let missing: Vec<String> = {
            let cache = self.cache.lock().expect("embedding cache poisoned");
            let mut seen = std::collections::HashSet::new();
            texts
                .iter()
                .filter(|t| !cache.contains_key(*t) && seen.insert(t.as_str()))
                .cloned()
                .collect()
        };
        if !missing.is_empty() {
            let vectors = self.inner.embed(&missing)?;
            self.misses.fetch_add(missing.len(), AtomicOrdering::Relaxed);
            let mut cache = self.cache.lock().expect("embedding cache poisoned");
            for (t, v) in missing.into_iter().zip(vectors) {
                cache.insert(t, v);
            }
        }
        let cache = self.cache.lock().expect("embedding cache poisoned");
        Ok(texts.iter().map(|t| cache[t].clone()).collect())
    }
}

impl Embedder for Box<dyn Embedder> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        (**self).embed(texts)
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Lowercased alphanumeric tokens.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}
