//! Toy contrastive training loop used to compare loss trajectories of the
//! fused and dense paths.
//!
//! Parameters are the token embeddings of `n_pairs` queries and their
//! positive documents. Each step scores every query against every document,
//! applies an in-batch softmax cross-entropy with the diagonal as targets,
//! and takes an SGD step on both sides.

use serde::{Deserialize, Serialize};

use crate::backward::fused_backward;
use crate::error::Result;
use crate::forward::fused_score_batch;
use crate::reference::{dense_backward, dense_score_batch};
use crate::synth::{rng, unit_gaussian};
use crate::types::{DocBatch, EmbeddingMatrix, Gradients, ScoreMatrix, TileConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n_pairs: usize,
    pub q_len: usize,
    pub doc_len: usize,
    pub dim: usize,
    pub steps: usize,
    pub lr: f32,
    pub temperature: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_pairs: 8,
            q_len: 8,
            doc_len: 16,
            dim: 16,
            steps: 200,
            lr: 0.05,
            temperature: 0.5,
            seed: 11,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainPath {
    Fused,
    Dense,
}

/// Mean cross-entropy of `scores / temperature` against the diagonal, and
/// its gradient with respect to the scores.
pub fn contrastive_loss(scores: &ScoreMatrix, temperature: f32) -> (f64, Vec<f32>) {
    let n = scores.n_queries();
    let t = temperature as f64;
    let mut loss = 0.0f64;
    let mut grad = vec![0f32; n * scores.n_docs()];
    for q in 0..n {
        let row: Vec<f64> = scores.row(q).iter().map(|&s| s as f64 / t).collect();
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
        loss += -(row[q] - m - z.ln());
        for (b, x) in row.iter().enumerate() {
            let p = (x - m).exp() / z;
            let target = if b == q { 1.0 } else { 0.0 };
            grad[q * scores.n_docs() + b] = ((p - target) / (t * n as f64)) as f32;
        }
    }
    (loss / n as f64, grad)
}

fn step_grads(path: TrainPath, qs: &[EmbeddingMatrix], docs: &DocBatch, tile: &TileConfig, temperature: f32) -> Result<(f64, Gradients)> {
    match path {
        TrainPath::Fused => {
            let (scores, argmax, _) = fused_score_batch(qs, docs, tile)?;
            let (loss, g) = contrastive_loss(&scores, temperature);
            let up = ScoreMatrix::new(qs.len(), docs.len(), g)?;
            Ok((loss, fused_backward(&argmax, &up, qs, docs)?))
        }
        TrainPath::Dense => {
            let (scores, argmax) = dense_score_batch::<f32, _>(qs, docs)?;
            let scores = ScoreMatrix::new(qs.len(), docs.len(), scores)?;
            let (loss, g) = contrastive_loss(&scores, temperature);
            Ok((loss, dense_backward::<f32, _>(qs, docs, &g, &argmax)?))
        }
    }
}

fn sgd(m: &EmbeddingMatrix, grad: &[f32], lr: f32) -> Result<EmbeddingMatrix> {
    let data = m.data().iter().zip(grad).map(|(x, g)| x - lr * g).collect();
    EmbeddingMatrix::new(m.rows(), m.dim(), data)
}

/// Loss before each step.
pub fn train_toy(config: &TrainConfig, path: TrainPath) -> Result<Vec<f64>> {
    let mut r = rng(config.seed);
    let mut qs: Vec<EmbeddingMatrix> = (0..config.n_pairs).map(|_| unit_gaussian(&mut r, config.q_len, config.dim)).collect();
    let mut ds: Vec<EmbeddingMatrix> = (0..config.n_pairs).map(|_| unit_gaussian(&mut r, config.doc_len, config.dim)).collect();
    let tile = crate::dispatch::tile_for(config.q_len, config.doc_len, config.dim);
    let mut losses = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let docs = DocBatch::full(ds.clone())?;
        let (loss, g) = step_grads(path, &qs, &docs, &tile, config.temperature)?;
        losses.push(loss);
        let qstride = config.q_len * config.dim;
        let dstride = config.doc_len * config.dim;
        qs = qs
            .iter()
            .enumerate()
            .map(|(i, q)| sgd(q, &g.dq[i * qstride..(i + 1) * qstride], config.lr))
            .collect::<Result<_>>()?;
        ds = ds
            .iter()
            .enumerate()
            .map(|(b, d)| sgd(d, &g.dd[b * dstride..(b + 1) * dstride], config.lr))
            .collect::<Result<_>>()?;
    }
    Ok(losses)
}

/// Largest per-step `|fused − dense| / |dense|`.
pub fn loss_drift(fused: &[f64], dense: &[f64]) -> f64 {
    fused
        .iter()
        .zip(dense)
        .map(|(f, d)| (f - d).abs() / d.abs().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_scores_give_log_n() {
        let s = ScoreMatrix::filled(4, 4, 0.3);
        let (loss, g) = contrastive_loss(&s, 1.0);
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        // Each row's gradient sums to zero.
        for q in 0..4 {
            let sum: f32 = g[q * 4..(q + 1) * 4].iter().sum();
            assert!(sum.abs() < 1e-6);
        }
    }

    #[test]
    fn loss_decreases() {
        let cfg = TrainConfig { steps: 30, ..Default::default() };
        let l = train_toy(&cfg, TrainPath::Fused).unwrap();
        assert!(l.last().unwrap() < &l[0]);
    }
}
