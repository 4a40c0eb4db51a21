//! Seeded synthetic corpora: unit-normalized Gaussian token embeddings with
//! configurable document-length distributions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::types::EmbeddingMatrix;

/// Longest document any built-in distribution produces.
pub const MAX_SYNTH_LEN: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LengthDist {
    Fixed { len: usize },
    /// Uniform over `min..=max`.
    Uniform { min: usize, max: usize },
    /// Log-normal around a median of 128 tokens, clipped to `[16, 512]`.
    HotpotLike,
    /// 90% short documents of 16..=64 tokens, 10% long ones of 384..=512.
    Ragged,
}

impl LengthDist {
    /// Uniform 256..=512; fills about three quarters of a 512 pad.
    pub const WIDE_UNIFORM: LengthDist = LengthDist::Uniform { min: 256, max: 512 };

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match *self {
            LengthDist::Fixed { len } => len.max(1),
            LengthDist::Uniform { min, max } => rng.gen_range(min.max(1)..=max.max(min.max(1))),
            LengthDist::HotpotLike => {
                let d = LogNormal::new(128f64.ln(), 0.6).expect("valid parameters");
                (d.sample(rng).round() as usize).clamp(16, MAX_SYNTH_LEN)
            }
            LengthDist::Ragged => {
                if rng.gen_bool(0.9) {
                    rng.gen_range(16..=64)
                } else {
                    rng.gen_range(384..=MAX_SYNTH_LEN)
                }
            }
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `rows` independent unit-norm Gaussian vectors.
pub fn unit_gaussian<R: Rng + ?Sized>(rng: &mut R, rows: usize, dim: usize) -> EmbeddingMatrix {
    let mut data = Vec::with_capacity(rows * dim);
    for _ in 0..rows {
        let start = data.len();
        data.extend((0..dim).map(|_| rng.sample::<f32, _>(StandardNormal)));
        let norm = data[start..].iter().map(|x| x * x).sum::<f32>().sqrt();
        if norm > 0.0 {
            data[start..].iter_mut().for_each(|x| *x /= norm);
        }
    }
    EmbeddingMatrix::new(rows, dim, data).expect("gaussian samples are finite")
}

/// Entries drawn uniformly from `[-1, 1)`, not normalized.
pub fn uniform_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, dim: usize) -> EmbeddingMatrix {
    let data = (0..rows * dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    EmbeddingMatrix::new(rows, dim, data).expect("uniform samples are finite")
}

pub fn synth_docs(seed: u64, n_docs: usize, dim: usize, lengths: LengthDist) -> Vec<EmbeddingMatrix> {
    let mut r = rng(seed);
    (0..n_docs)
        .map(|_| {
            let len = lengths.sample(&mut r);
            unit_gaussian(&mut r, len, dim)
        })
        .collect()
}

pub fn synth_queries(seed: u64, n_queries: usize, q_len: usize, dim: usize) -> Vec<EmbeddingMatrix> {
    let mut r = rng(seed);
    (0..n_queries).map(|_| unit_gaussian(&mut r, q_len, dim)).collect()
}

/// A query built by perturbing tokens of `doc`, so `doc` is a likely top hit.
pub fn query_near(seed: u64, doc: &EmbeddingMatrix, q_len: usize, noise: f32) -> EmbeddingMatrix {
    let mut r = rng(seed);
    let dim = doc.dim();
    let mut data = Vec::with_capacity(q_len * dim);
    for _ in 0..q_len {
        let src = doc.row(r.gen_range(0..doc.rows()));
        data.extend(src.iter().map(|&x| x + noise * r.sample::<f32, _>(StandardNormal)));
    }
    EmbeddingMatrix::new(q_len, dim, data).expect("finite")
}
