mod common;

use common::{random_matrix, rng};
use maxsim_core::backward::{choose_path, grad_docs_scatter_partitioned};
use maxsim_core::reference::{dense_backward, finite_diff_grad};
use maxsim_core::stats::{cosine, widen};
use maxsim_core::{
    backward_dispatch, build_inverse_csr, fused_backward, fused_score_batch, grad_docs_csr, grad_query, ArgmaxMap,
    BackwardConfig, BackwardPath, DocBatch, EmbeddingMatrix, Error, ScoreMatrix, TileConfig,
};
use proptest::prelude::*;
use rand::Rng;

fn argmax_strategy() -> impl Strategy<Value = ArgmaxMap> {
    (1usize..4, 1usize..5, 0usize..10, proptest::collection::vec(1usize..10, 1..5)).prop_flat_map(|(nq, _, lq, lens)| {
        let nb = lens.len();
        let idx = (0..nq * nb * lq)
            .map(|p| {
                let len = lens[(p / lq.max(1)) % nb] as u32;
                (0..len).boxed()
            })
            .collect::<Vec<_>>();
        (Just(nq), Just(lq), Just(lens), idx)
    })
    .prop_map(|(nq, lq, lens, idx)| {
        let mut offsets = vec![0];
        for &l in &lens {
            offsets.push(offsets.last().unwrap() + l);
        }
        ArgmaxMap::new(nq, lq, lens, offsets, idx).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn csr_inverts_the_argmax(map in argmax_strategy()) {
        let csr = build_inverse_csr(&map).unwrap();
        prop_assert_eq!(csr.row_ptr()[0], 0);
        prop_assert_eq!(*csr.row_ptr().last().unwrap(), map.n_sources());
        prop_assert!(csr.row_ptr().windows(2).all(|w| w[0] <= w[1]));
        let mut sorted = csr.col_idx().to_vec();
        sorted.sort_unstable();
        prop_assert!(sorted.iter().enumerate().all(|(i, &s)| i == s as usize));
        // Scatter back through col_idx and recover every destination.
        let mut back = vec![usize::MAX; map.n_sources()];
        for r in 0..csr.n_dest() {
            let bucket = csr.bucket(r);
            prop_assert!(bucket.windows(2).all(|w| w[0] < w[1]));
            for &s in bucket {
                back[s as usize] = r;
            }
        }
        prop_assert!((0..map.n_sources()).all(|s| back[s] == map.destination(s)));
    }

    #[test]
    fn fused_equals_dense_bit_for_bit(seed in 0u64..500, nq in 1usize..4, nb in 1usize..5, lq in 1usize..20, ld in 1usize..12, d in 1usize..8) {
        let mut r = rng(seed);
        let qs: Vec<EmbeddingMatrix> = (0..nq).map(|_| random_matrix(&mut r, lq, d)).collect();
        let docs = DocBatch::new(
            (0..nb).map(|_| random_matrix(&mut r, ld, d)).collect(),
            (0..nb).map(|_| r.gen_range(1..=ld)).collect(),
        ).unwrap();
        let g: Vec<f32> = (0..nq * nb).map(|_| r.gen_range(-2.0f32..2.0)).collect();
        let (_, argmax, _) = fused_score_batch(&qs, &docs, &TileConfig::default()).unwrap();
        let up = ScoreMatrix::new(nq, nb, g.clone()).unwrap();
        let fused = fused_backward(&argmax, &up, &qs, &docs).unwrap();
        let dense = dense_backward::<f32, _>(&qs, &docs, &g, &argmax).unwrap();
        prop_assert_eq!(&fused.dq, &dense.dq);
        prop_assert_eq!(&fused.dd, &dense.dd);
        let (routed, _) = backward_dispatch(&argmax, &up, &qs, &docs, &BackwardConfig::default()).unwrap();
        let scale = dense.dd.iter().fold(1e-3f32, |m, x| m.max(x.abs()));
        prop_assert!(routed.dd.iter().zip(&dense.dd).all(|(a, b)| (a - b).abs() <= 1e-6 * scale));
        prop_assert_eq!(&routed.dq, &dense.dq);
    }
}

fn rows(dim: usize, rows: &[&[f32]]) -> EmbeddingMatrix {
    EmbeddingMatrix::from_rows(dim, rows).unwrap()
}

#[test]
fn hand_csr_and_dd() {
    let map = ArgmaxMap::dense(1, 1, 3, 2, vec![1, 1, 0]).unwrap();
    let csr = build_inverse_csr(&map).unwrap();
    assert_eq!(csr.row_ptr(), &[0, 1, 3]);
    assert_eq!(csr.col_idx(), &[2, 0, 1]);
    let q = rows(2, &[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
    let one = ScoreMatrix::new(1, 1, vec![1.0]).unwrap();
    let dd = grad_docs_csr(&csr, &one, std::slice::from_ref(&q)).unwrap();
    assert_eq!(dd, vec![5.0, 6.0, 4.0, 6.0]);
    let zero = ScoreMatrix::new(1, 1, vec![0.0]).unwrap();
    assert!(grad_docs_csr(&csr, &zero, std::slice::from_ref(&q)).unwrap().iter().all(|&x| x == 0.0));
}

#[test]
fn all_hot_bucket() {
    let map = ArgmaxMap::dense(1, 1, 5, 3, vec![0; 5]).unwrap();
    let csr = build_inverse_csr(&map).unwrap();
    assert_eq!(csr.row_ptr(), &[0, 5, 5, 5]);
    assert_eq!(csr.col_idx(), &[0, 1, 2, 3, 4]);
    assert_eq!(csr.max_load(), 5);
}

#[test]
fn out_of_range_index() {
    assert!(matches!(ArgmaxMap::dense(1, 1, 2, 2, vec![0, 2]), Err(Error::IndexOutOfRange { index: 2, bound: 2 })));
}

#[test]
fn query_gradient_is_a_gather() {
    let d = rows(2, &[&[1.0, 0.0], &[0.0, 3.0]]);
    let docs = DocBatch::full(vec![d.clone(), rows(2, &[&[7.0, 7.0]])]).unwrap();
    let map = ArgmaxMap::for_docs(1, 2, &docs, vec![1, 0, 0, 0]).unwrap();
    let only_first = ScoreMatrix::new(1, 2, vec![2.0, 0.0]).unwrap();
    let dq = grad_query(&map, &only_first, &docs).unwrap();
    assert_eq!(dq, vec![0.0, 6.0, 2.0, 0.0]);
    let single = DocBatch::full(vec![d]).unwrap();
    let map = ArgmaxMap::for_docs(1, 2, &single, vec![1, 0]).unwrap();
    let dq = grad_query(&map, &ScoreMatrix::new(1, 1, vec![1.0]).unwrap(), &single).unwrap();
    assert_eq!(dq, vec![0.0, 3.0, 1.0, 0.0]);
}

#[test]
fn scatter_permutation_matches_csr_exactly() {
    let mut r = rng(2);
    let q = random_matrix(&mut r, 6, 3);
    let map = ArgmaxMap::dense(1, 1, 6, 6, vec![3, 0, 5, 1, 4, 2]).unwrap();
    let up = ScoreMatrix::new(1, 1, vec![0.3]).unwrap();
    let csr = grad_docs_csr(&build_inverse_csr(&map).unwrap(), &up, std::slice::from_ref(&q)).unwrap();
    for parts in 1..6 {
        let sc = grad_docs_scatter_partitioned(&map, &up, std::slice::from_ref(&q), parts).unwrap();
        assert_eq!(sc, csr);
    }
}

#[test]
fn dispatch_follows_contention() {
    let hot = ArgmaxMap::dense(2, 1, 16, 64, vec![0; 32]).unwrap();
    assert_eq!(choose_path(&hot, &BackwardConfig::default()).unwrap(), BackwardPath::Csr);
    let mut r = rng(3);
    let spread = ArgmaxMap::dense(1, 4, 32, 1024, (0..128).map(|_| r.gen_range(0..1024)).collect()).unwrap();
    assert_eq!(choose_path(&spread, &BackwardConfig::default()).unwrap(), BackwardPath::Scatter);
}

#[test]
fn stale_csr_rejected() {
    let map = ArgmaxMap::dense(1, 1, 2, 2, vec![0, 1]).unwrap();
    let csr = build_inverse_csr(&map).unwrap();
    let q = random_matrix(&mut rng(1), 2, 2);
    let up = ScoreMatrix::new(2, 1, vec![1.0, 1.0]).unwrap();
    assert!(matches!(grad_docs_csr(&csr, &up, &[q.clone(), q]), Err(Error::StaleCsr(_))));
}

#[test]
fn seeded_instance_against_finite_differences() {
    let mut r = rng(11);
    let (nq, nb, lq, ld, d) = (2, 3, 5, 4, 3);
    let qs: Vec<EmbeddingMatrix> = (0..nq).map(|_| random_matrix(&mut r, lq, d)).collect();
    let docs = DocBatch::full((0..nb).map(|_| random_matrix(&mut r, ld, d)).collect()).unwrap();
    let (_, argmax, _) = fused_score_batch(&qs, &docs, &TileConfig::default()).unwrap();
    let up = ScoreMatrix::filled(nq, nb, 1.0);
    let g = fused_backward(&argmax, &up, &qs, &docs).unwrap();
    let dense = dense_backward::<f64, _>(&qs, &docs, &[1.0; 6], &argmax).unwrap();
    let fused: Vec<f64> = widen(&g.dq).into_iter().chain(widen(&g.dd)).collect();
    let oracle: Vec<f64> = dense.dq.iter().chain(&dense.dd).copied().collect();
    assert!(cosine(&fused, &oracle) > 1.0 - 1e-12);

    // Loss as a function of the query entries, documents fixed.
    let loss = |p: &[f64]| -> f64 {
        let mut total = 0.0;
        for q in 0..nq {
            for b in 0..nb {
                for i in 0..lq {
                    let qi = &p[(q * lq + i) * d..(q * lq + i + 1) * d];
                    total += (0..ld)
                        .map(|j| qi.iter().zip(docs.doc(b).row(j)).map(|(a, &x)| a * x as f64).sum::<f64>())
                        .fold(f64::NEG_INFINITY, f64::max);
                }
            }
        }
        total
    };
    let point: Vec<f64> = qs.iter().flat_map(|q| widen(q.data())).collect();
    let fd = finite_diff_grad(loss, &point, 1e-7).unwrap();
    for (a, b) in g.dq.iter().zip(&fd) {
        assert!((*a as f64 - b).abs() <= 1e-6 * b.abs().max(1.0), "{a} vs {b}");
    }
    assert!(matches!(finite_diff_grad(|_| 0.0, &point, 0.0), Err(Error::InvalidStep(_))));
}
