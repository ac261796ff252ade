use std::collections::HashMap;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Embedder, ProviderError};

pub const DEFAULT_DIMENSION: usize = 256;

/// Offline embedder: each word maps to a seeded pseudo-random vector and a
/// text embeds as the L2-normalized sum of its word vectors, so texts that
/// share words have correlated embeddings. Empty text embeds to zero.
pub struct HashEmbedder {
    dimension: usize,
    cache: Mutex<HashMap<String, Vec<f64>>>,
}

impl HashEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension, cache: Mutex::new(HashMap::new()) }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn embed_text(&self, text: &str) -> Vec<f32> {
        let mut acc = vec![0.0f64; self.dimension];
        let mut cache = self.cache.lock().expect("word cache poisoned");
        for word in words(text) {
            let v = cache.entry(word.clone()).or_insert_with(|| word_vector(&word, self.dimension));
            for (a, x) in acc.iter_mut().zip(v.iter()) {
                *a += x;
            }
        }
        let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return vec![0.0; self.dimension];
        }
        acc.into_iter().map(|x| (x / norm) as f32).collect()
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIMENSION)
    }
}

impl Embedder for HashEmbedder {
    fn id(&self) -> String {
        format!("hash-mock:{}", self.dimension)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }
}

/// Lowercased alphanumeric runs.
pub(crate) fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(|w| w.to_lowercase())
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn word_vector(word: &str, dimension: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(word.as_bytes()));
    (0..dimension).map(|_| rng.random_range(-1.0..=1.0)).collect()
}
