//! Prompt encoders. The default is a deterministic hashed bag-of-words.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const TEXT_DIM: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    pub values: Vec<f32>,
    /// Set for the unconditional token.
    pub null: bool,
}

impl TextEmbedding {
    pub fn null(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
            null: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

pub trait TextEncoder {
    fn dim(&self) -> usize;
    fn encode(&self, prompt: &str) -> TextEmbedding;
}

pub fn tokenize(prompt: &str) -> Vec<String> {
    prompt
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Tokens hash into `buckets` rows of a fixed random table; the mean row is
/// projected to `dim` by a fixed random matrix and rescaled to norm `sqrt(dim)`.
#[derive(Debug, Clone)]
pub struct HashTextEncoder {
    buckets: usize,
    token_dim: usize,
    dim: usize,
    seed: u64,
    projection: Vec<f64>,
}

impl HashTextEncoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        let token_dim = 64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e47);
        let projection = (0..dim * token_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        Self {
            buckets: 4096,
            token_dim,
            dim,
            seed,
            projection,
        }
    }

    fn row(&self, bucket: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(bucket.wrapping_mul(0x9e37_79b9)));
        (0..self.token_dim).map(|_| StandardNormal.sample(&mut rng)).collect()
    }
}

impl Default for HashTextEncoder {
    fn default() -> Self {
        Self::new(TEXT_DIM, 0)
    }
}

impl TextEncoder for HashTextEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, prompt: &str) -> TextEmbedding {
        let tokens = tokenize(prompt);
        if tokens.is_empty() {
            return TextEmbedding::null(self.dim);
        }
        let mut pooled = vec![0.0; self.token_dim];
        for t in &tokens {
            for (p, r) in pooled.iter_mut().zip(self.row(fnv1a(t) % self.buckets as u64)) {
                *p += r / tokens.len() as f64;
            }
        }
        let mut out: Vec<f64> = (0..self.dim)
            .map(|i| (0..self.token_dim).map(|k| self.projection[i * self.token_dim + k] * pooled[k]).sum())
            .collect();
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let scale = (self.dim as f64).sqrt() / norm;
        out.iter_mut().for_each(|v| *v *= scale);
        TextEmbedding {
            values: out.into_iter().map(|v| v as f32).collect(),
            null: false,
        }
    }
}
