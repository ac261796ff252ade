//! Dual-view embedding index over processed model cards.
//!
//! Every card has two vectors: one embedded from the full card text and one
//! from its structured metadata only. Queries run an exact cosine scan over
//! one of the two views.

mod file;

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::card_store::{render_card_text, CardCorpus, CardView};
use crate::providers::{Embedder, ProviderError};

pub use file::{load_index, persist_index, IndexWarning, FORMAT_VERSION, MAGIC};

const EMBED_BATCH: usize = 64;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot build an index over an empty corpus")]
    EmptyCorpus,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("non-finite component in vector for {0}")]
    NonFinite(String),
    #[error("embedding provider failed: {0}")]
    Provider(#[from] ProviderError),
    #[error("checksum mismatch: {0}")]
    ChecksumMismatch(String),
    #[error("index format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u8, expected: u8 },
    #[error("not an index file: {0}")]
    BadMagic(String),
    #[error("malformed index manifest: {0}")]
    MalformedManifest(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Which vector family a query ranks against.
pub type View = CardView;

#[derive(Debug, Clone, PartialEq)]
pub struct DualEmbeddingRecord {
    pub model_id: String,
    pub v_full: Vec<f32>,
    pub v_meta: Vec<f32>,
}

impl DualEmbeddingRecord {
    pub fn vector(&self, view: View) -> &[f32] {
        match view {
            CardView::Full => &self.v_full,
            CardView::Metadata => &self.v_meta,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedHit {
    pub model_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub dimension: usize,
    pub embedder_id: String,
    pub card_count: usize,
    pub checksum: String,
    /// Processed-corpus file the index was built from, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus_path: Option<String>,
}

/// Cosine similarity `(a·b)/(‖a‖‖b‖)` computed in f64 and clamped to [-1, 1].
pub fn cosine_similarity<T: Copy + Into<f64>>(a: &[T], b: &[T]) -> Result<f64, IndexError> {
    if a.len() != b.len() {
        return Err(IndexError::DimensionMismatch { expected: a.len(), actual: b.len() });
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y): (f64, f64) = (x.into(), y.into());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(IndexError::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Descending score, then ascending id.
pub fn hit_order(a: &RankedHit, b: &RankedHit) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.model_id.cmp(&b.model_id))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualIndex {
    manifest: IndexManifest,
    records: Vec<DualEmbeddingRecord>,
    by_id: HashMap<String, usize>,
}

impl DualIndex {
    /// Assembles an index from records, validating shapes and computing the
    /// manifest checksum.
    pub fn from_records(
        records: Vec<DualEmbeddingRecord>,
        dimension: usize,
        embedder_id: impl Into<String>,
    ) -> Result<Self, IndexError> {
        for r in &records {
            for v in [&r.v_full, &r.v_meta] {
                if v.len() != dimension {
                    return Err(IndexError::DimensionMismatch { expected: dimension, actual: v.len() });
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(IndexError::NonFinite(r.model_id.clone()));
                }
            }
        }
        let checksum = hex::encode(Sha256::digest(file::encode_records(&records)));
        let by_id = records.iter().enumerate().map(|(i, r)| (r.model_id.clone(), i)).collect();
        Ok(Self {
            manifest: IndexManifest {
                dimension,
                embedder_id: embedder_id.into(),
                card_count: records.len(),
                checksum,
                corpus_path: None,
            },
            records,
            by_id,
        })
    }

    pub fn manifest(&self) -> &IndexManifest {
        &self.manifest
    }

    pub fn set_corpus_path(&mut self, path: Option<String>) {
        self.manifest.corpus_path = path;
    }

    pub fn dimension(&self) -> usize {
        self.manifest.dimension
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[DualEmbeddingRecord] {
        &self.records
    }

    pub fn get(&self, id: &str) -> Option<&DualEmbeddingRecord> {
        self.by_id.get(id).map(|&i| &self.records[i])
    }

    /// Exact top-k over one view, skipping `excluded`. Records whose vector
    /// is all-zero score 0.
    pub fn top_k(
        &self,
        query: &[f32],
        view: View,
        k: usize,
        excluded: &HashSet<String>,
    ) -> Result<Vec<RankedHit>, IndexError> {
        self.top_k_where(query, view, k, |r| !excluded.contains(&r.model_id))
    }

    /// [`top_k`](Self::top_k) with an arbitrary eligibility predicate.
    pub fn top_k_where(
        &self,
        query: &[f32],
        view: View,
        k: usize,
        eligible: impl Fn(&DualEmbeddingRecord) -> bool,
    ) -> Result<Vec<RankedHit>, IndexError> {
        if query.len() != self.dimension() {
            return Err(IndexError::DimensionMismatch { expected: self.dimension(), actual: query.len() });
        }
        if query.iter().any(|x| !x.is_finite()) {
            return Err(IndexError::NonFinite("query".into()));
        }
        let mut hits: Vec<RankedHit> = self
            .records
            .iter()
            .filter(|r| eligible(r))
            .map(|r| RankedHit {
                model_id: r.model_id.clone(),
                score: match cosine_similarity(query, r.vector(view)) {
                    Ok(s) => s,
                    Err(IndexError::ZeroVector) => 0.0,
                    Err(_) => unreachable!("dimensions validated at build"),
                },
            })
            .collect();
        hits.sort_by(hit_order);
        hits.truncate(k);
        Ok(hits)
    }
}

/// Embeds the full and metadata views of every card.
pub fn build_index(corpus: &CardCorpus, embedder: &dyn Embedder) -> Result<DualIndex, IndexError> {
    if corpus.is_empty() {
        return Err(IndexError::EmptyCorpus);
    }
    let mut dimension: Option<usize> = None;
    let mut records = Vec::with_capacity(corpus.len());
    for chunk in corpus.cards().chunks(EMBED_BATCH) {
        let full: Vec<String> = chunk.iter().map(|c| render_card_text(c, CardView::Full)).collect();
        let meta: Vec<String> = chunk.iter().map(|c| render_card_text(c, CardView::Metadata)).collect();
        let full_vecs = embedder.embed(&full)?;
        let meta_vecs = embedder.embed(&meta)?;
        if full_vecs.len() != chunk.len() || meta_vecs.len() != chunk.len() {
            return Err(ProviderError::malformed("embedder returned the wrong number of vectors").into());
        }
        for ((card, v_full), v_meta) in chunk.iter().zip(full_vecs).zip(meta_vecs) {
            let d = *dimension.get_or_insert(v_full.len());
            for v in [&v_full, &v_meta] {
                if v.len() != d {
                    return Err(IndexError::DimensionMismatch { expected: d, actual: v.len() });
                }
            }
            records.push(DualEmbeddingRecord { model_id: card.id.clone(), v_full, v_meta });
        }
    }
    DualIndex::from_records(records, dimension.unwrap_or(0), embedder.id())
}
