mod common;

use common::{random_matrix, rng};
use maxsim_core::quant::{quantize_with_levels, score_corpus_int8, topk_overlap};
use maxsim_core::stats::{spearman, widen};
use maxsim_core::streamio::topk::rank_all;
use maxsim_core::synth::{synth_docs, synth_queries, LengthDist};
use maxsim_core::{
    fused_score_int8, fused_score_pair, quantize_per_token, two_stage_topk, DocBatch, EmbeddingMatrix, Error,
    QuantizedMatrix, TileConfig,
};
use proptest::prelude::*;

proptest! {
    #[test]
    fn dequantized_within_half_step(seed in 0u64..1000, rows in 1usize..8, dim in 1usize..40) {
        let x = random_matrix(&mut rng(seed), rows, dim);
        let q = quantize_per_token(&x);
        let back = q.dequantize();
        for i in 0..rows {
            let s = q.scales()[i];
            prop_assert!(s > 0.0);
            for (a, b) in x.row(i).iter().zip(back.row(i)) {
                prop_assert!((a - b).abs() <= s / 2.0 * (1.0 + 1e-5));
            }
            prop_assert!(q.row(i).iter().all(|&v| v != i8::MIN));
        }
    }

    #[test]
    fn int8_argmax_is_in_range(seed in 0u64..1000, lq in 1usize..10, ld in 1usize..30, valid_cut in 0usize..30) {
        let mut r = rng(seed);
        let (q, d) = (random_matrix(&mut r, lq, 8), random_matrix(&mut r, ld, 8));
        let valid = 1 + valid_cut % ld;
        let (_, arg, _) = fused_score_int8(&quantize_per_token(&q), &quantize_per_token(&d), valid, &TileConfig::tiles(3, 5).unwrap()).unwrap();
        prop_assert!(arg.iter().all(|&a| (a as usize) < valid));
    }
}

fn corpus() -> (EmbeddingMatrix, Vec<EmbeddingMatrix>) {
    let docs = synth_docs(17, 256, 32, LengthDist::Uniform { min: 16, max: 64 });
    (synth_queries(17, 1, 32, 32).remove(0), docs)
}

fn full_scores(q: &EmbeddingMatrix, docs: &[EmbeddingMatrix]) -> Vec<f32> {
    docs.iter().map(|d| fused_score_pair(q, d, d.rows(), &TileConfig::default()).unwrap().0).collect()
}

#[test]
fn int8_ranking_fidelity() {
    let (q, docs) = corpus();
    let full = full_scores(&q, &docs);
    let dq: Vec<QuantizedMatrix> = docs.iter().map(quantize_per_token).collect();
    let int8 = score_corpus_int8(&quantize_per_token(&q), &dq, &TileConfig::default()).unwrap();
    assert!(spearman(&widen(&full), &widen(&int8)) >= 0.99);
    assert_eq!(topk_overlap(&rank_all(&full), &rank_all(&int8), 20), 1.0);
}

#[test]
fn two_stage_matches_exhaustive() {
    let (q, docs) = corpus();
    let full = rank_all(&full_scores(&q, &docs));
    let batch = DocBatch::full(docs.clone()).unwrap();
    let dq: Vec<QuantizedMatrix> = docs.iter().map(quantize_per_token).collect();
    let qq = quantize_per_token(&q);
    let tile = TileConfig::default();
    let all = two_stage_topk(&qq, &q, &dq, &batch, 256, 1, &tile).unwrap();
    assert_eq!(all, full);
    let ten = two_stage_topk(&qq, &q, &dq, &batch, 10, 4, &tile).unwrap();
    assert_eq!(ten, full[..10].to_vec());
    assert!(two_stage_topk(&qq, &q, &dq, &batch, 0, 4, &tile).unwrap().is_empty());
    assert!(matches!(two_stage_topk(&qq, &q, &dq, &batch, 257, 4, &tile), Err(Error::KTooLarge { k: 257, n: 256 })));
}

#[test]
fn fidelity_does_not_drop_as_the_grid_refines() {
    let (q, docs) = corpus();
    let full = widen(&full_scores(&q, &docs));
    let mut last = -1.0;
    for levels in [3u8, 7, 15, 31, 63, 127] {
        let dq: Vec<QuantizedMatrix> = docs.iter().map(|d| quantize_with_levels(d, levels)).collect();
        let s = score_corpus_int8(&quantize_with_levels(&q, levels), &dq, &TileConfig::default()).unwrap();
        let rho = spearman(&full, &widen(&s));
        assert!(rho >= last, "levels {levels}: {rho} < {last}");
        last = rho;
    }
}

#[test]
fn hand_quantization() {
    let q = quantize_per_token(&EmbeddingMatrix::new(1, 2, vec![0.5, -1.0]).unwrap());
    assert_eq!(q.values(), &[64, -127]);
    assert_eq!(q.scales(), &[1.0 / 127.0]);
    let z = quantize_per_token(&EmbeddingMatrix::new(1, 3, vec![0.0; 3]).unwrap());
    assert_eq!(z.scales(), &[1e-12]);
}
