mod common;

use common::{maxsim_abs_terms, maxsim_f64, random_matrix, rng};
use maxsim_core::reference::{dense_score_batch, similarity_tensor};
use maxsim_core::streamio::traffic::{model_traffic, TrafficShape};
use maxsim_core::{
    fused_score_batch, fused_score_pair, query_chunk_decompose, score_query_chunks, DocBatch, EmbeddingMatrix, Error,
    TileConfig,
};
use proptest::prelude::*;

fn tile_strategy() -> impl Strategy<Value = TileConfig> {
    (1usize..12, 1usize..40, 1usize..4).prop_map(|(bq, bd, m)| TileConfig::new(bq, bd, bq * m).unwrap())
}

fn instance(seed: u64, nq: usize, nb: usize, lq: usize, ld: usize, d: usize) -> (Vec<EmbeddingMatrix>, DocBatch, Vec<EmbeddingMatrix>, Vec<usize>) {
    let mut r = rng(seed);
    let qs: Vec<EmbeddingMatrix> = (0..nq).map(|_| random_matrix(&mut r, lq, d)).collect();
    let docs: Vec<EmbeddingMatrix> = (0..nb).map(|_| random_matrix(&mut r, ld, d)).collect();
    let valid: Vec<usize> = (0..nb).map(|b| 1 + (seed as usize + 7 * b) % ld).collect();
    (qs, DocBatch::new(docs.clone(), valid.clone()).unwrap(), docs, valid)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matches_triple_loop_oracle(seed in 0u64..1000, nq in 1usize..4, nb in 1usize..6, lq in 1usize..40, ld in 1usize..50, d in 1usize..20, tile in tile_strategy()) {
        let (qs, batch, docs, valid) = instance(seed, nq, nb, lq, ld, d);
        let (scores, argmax, _) = fused_score_batch(&qs, &batch, &tile).unwrap();
        for (qi, q) in qs.iter().enumerate() {
            for b in 0..nb {
                let (want, arg) = maxsim_f64(q, &docs[b], valid[b]);
                let err = (scores.get(qi, b) as f64 - want).abs();
                prop_assert!(err <= 1e-5 * maxsim_abs_terms(q, &docs[b], &arg));
                prop_assert!(argmax.row(qi, b).iter().all(|&t| (t as usize) < valid[b]));
            }
        }
        let (dense, dense_arg) = dense_score_batch::<f32, _>(&qs, &batch).unwrap();
        prop_assert_eq!(argmax, dense_arg);
        prop_assert!(scores.values().iter().zip(&dense).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn tile_sizes_do_not_change_results(seed in 0u64..1000, lq in 1usize..40, ld in 1usize..50, d in 1usize..12, a in tile_strategy(), b in tile_strategy()) {
        let (qs, batch, _, _) = instance(seed, 2, 3, lq, ld, d);
        let (sa, ma, _) = fused_score_batch(&qs, &batch, &a).unwrap();
        let (sb, mb, _) = fused_score_batch(&qs, &batch, &b).unwrap();
        prop_assert!(sa.values().iter().zip(sb.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
        prop_assert_eq!(ma, mb);
    }

    #[test]
    fn query_chunks_thread_one_accumulator(seed in 0u64..1000, lq in 1usize..60, ld in 1usize..30, chunk in 1usize..70) {
        let mut r = rng(seed);
        let q = random_matrix(&mut r, lq, 6);
        let d = random_matrix(&mut r, ld, 6);
        let whole = fused_score_pair(&q, &d, ld, &TileConfig::default()).unwrap();
        let chunks = query_chunk_decompose(&q, chunk).unwrap();
        prop_assert_eq!(chunks.len(), lq.div_ceil(chunk));
        let (s, a) = score_query_chunks(&chunks, &d, ld, &TileConfig::default()).unwrap();
        prop_assert_eq!(s.to_bits(), whole.0.to_bits());
        prop_assert_eq!(a, whole.1);
    }

    #[test]
    fn measured_reads_equal_model(seed in 0u64..100, nq in 1usize..4, nb in 1usize..5, lq in 1usize..70, ld in 1usize..40, d in 1usize..9, bq in 1usize..9, m in 1usize..5) {
        let (qs, _, docs, _) = instance(seed, nq, nb, lq, ld, d);
        let batch = DocBatch::full(docs).unwrap();
        let tile = TileConfig::new(bq, 16, bq * m).unwrap();
        let (_, _, t) = fused_score_batch(&qs, &batch, &tile).unwrap();
        let shape = TrafficShape::new(nq as u64, nb as u64, lq as u64, ld as u64, d as u64).with_qchunk((bq * m) as u64);
        let model = model_traffic(&shape);
        prop_assert_eq!(t.bytes_read, model.operand_read_bytes);
        prop_assert_eq!(t.mac_count, (nq * nb * lq * ld * d) as u64);
    }
}

#[test]
fn valid_prefix_only() {
    let q = EmbeddingMatrix::from_rows(2, &[[1.0, 0.0], [0.0, 1.0]]).unwrap();
    let d = EmbeddingMatrix::from_rows(2, &[[0.5, 0.0], [0.0, 2.0]]).unwrap();
    let (s, a, _) = fused_score_pair(&q, &d, 1, &TileConfig::default()).unwrap();
    assert_eq!(s, 0.5);
    assert_eq!(a, vec![0, 0]);
}

#[test]
fn ties_pick_lowest_index_across_tiles() {
    let q = EmbeddingMatrix::from_rows(1, &[[1.0]]).unwrap();
    let d = EmbeddingMatrix::new(9, 1, vec![0.0, 3.0, 1.0, 3.0, 3.0, 2.0, 3.0, 0.0, 3.0]).unwrap();
    for bd in 1..10 {
        let (s, a, _) = fused_score_pair(&q, &d, 9, &TileConfig::tiles(1, bd).unwrap()).unwrap();
        assert_eq!((s, a[0]), (3.0, 1), "bd {bd}");
    }
}

#[test]
fn padded_batch_equals_unpadded() {
    let mut r = rng(4);
    let q = random_matrix(&mut r, 5, 3);
    let docs: Vec<EmbeddingMatrix> = [2, 7, 4].iter().map(|&l| random_matrix(&mut r, l, 3)).collect();
    let padded = DocBatch::padded(&docs, 8).unwrap();
    let (s, _, _) = fused_score_batch(std::slice::from_ref(&q), &padded, &TileConfig::tiles(2, 3).unwrap()).unwrap();
    for (b, d) in docs.iter().enumerate() {
        let (want, _, _) = fused_score_pair(&q, d, d.rows(), &TileConfig::default()).unwrap();
        assert_eq!(s.get(0, b).to_bits(), want.to_bits());
    }
}

#[test]
fn dense_tensor_matches_fused_reduction() {
    let mut r = rng(5);
    let q = random_matrix(&mut r, 4, 3);
    let docs = DocBatch::full(vec![random_matrix(&mut r, 6, 3), random_matrix(&mut r, 2, 3)]).unwrap();
    let s = similarity_tensor::<f64, _>(&q, &docs).unwrap();
    assert_eq!(s.shape(), (2, 4, 6));
    assert_eq!(s.get(1, 0, 3), f64::NEG_INFINITY);
}

#[test]
fn input_errors() {
    let q = EmbeddingMatrix::new(1, 2, vec![1.0, 0.0]).unwrap();
    let d = EmbeddingMatrix::new(1, 3, vec![1.0, 0.0, 0.0]).unwrap();
    assert!(matches!(fused_score_pair(&q, &d, 1, &TileConfig::default()), Err(Error::DimMismatch { query: 2, doc: 3 })));
    assert!(matches!(EmbeddingMatrix::new(1, 2, vec![0.0, f32::NAN]), Err(Error::NanInput { row: 0, col: 1 })));
    let ok = EmbeddingMatrix::new(2, 2, vec![1.0; 4]).unwrap();
    assert!(matches!(DocBatch::new(vec![ok], vec![0]), Err(Error::EmptyDocument(0))));
    assert!(matches!(DocBatch::new(vec![], vec![]), Err(Error::EmptyBatch)));
}
