mod common;

use common::{random_matrix, rng};
use maxsim_core::streamio::format::{decode, encode, read_matrix, write_matrix, VERSION};
use maxsim_core::streamio::stream::DEFAULT_BLOCK_DOCS;
use maxsim_core::streamio::topk::rank_all;
use maxsim_core::synth::{synth_docs, LengthDist};
use maxsim_core::{
    fused_score_batch, pack, quantize_per_token, read_embeddings, stream_score_topk, write_embeddings, DocBatch,
    ElemType, EmbeddingData, Error, FileReader, MemoryReader, TileConfig,
};
use proptest::prelude::*;

fn layouts() -> Vec<EmbeddingData> {
    let fixed = synth_docs(1, 7, 6, LengthDist::Fixed { len: 5 });
    let ragged = synth_docs(2, 9, 6, LengthDist::Uniform { min: 1, max: 12 });
    vec![
        EmbeddingData::Dense { elem: ElemType::F32, docs: fixed.clone() },
        EmbeddingData::Dense { elem: ElemType::F16, docs: fixed.iter().map(|m| m.to_f16_precision()).collect() },
        EmbeddingData::Packed { elem: ElemType::F32, corpus: pack(&ragged).unwrap() },
        EmbeddingData::Packed { elem: ElemType::F16, corpus: pack(&ragged.iter().map(|m| m.to_f16_precision()).collect::<Vec<_>>()).unwrap() },
        EmbeddingData::Quantized(ragged.iter().map(quantize_per_token).collect()),
    ]
}

#[test]
fn files_round_trip_every_layout() {
    let dir = tempfile::tempdir().unwrap();
    for (i, data) in layouts().into_iter().enumerate() {
        let path = dir.path().join(format!("{i}.mxs"));
        write_embeddings(&path, &data).unwrap();
        assert_eq!(read_embeddings(&path).unwrap(), data, "layout {i}");
    }
}

#[test]
fn single_matrix_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("q.mxs");
    let q = random_matrix(&mut rng(4), 3, 5);
    write_matrix(&path, &q, ElemType::F32).unwrap();
    assert_eq!(read_matrix(&path).unwrap(), q);
}

#[test]
fn malformed_files() {
    let data = layouts().remove(2);
    let bytes = encode(&data).unwrap();
    for cut in [0, 3, 7, 20, bytes.len() - 1] {
        assert!(decode(&bytes[..cut]).is_err(), "cut at {cut}");
    }
    assert!(matches!(decode(&bytes[..bytes.len() - 4]), Err(Error::TruncatedPayload { .. })));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode(&bad), Err(Error::BadMagic(_))));
    let mut newer = bytes.clone();
    newer[4..6].copy_from_slice(&(VERSION + 1).to_le_bytes());
    assert!(decode(&newer).is_err());
    let mut trailing = bytes;
    trailing.push(0);
    assert!(decode(&trailing).is_err());
    assert!(matches!(read_embeddings("/nonexistent/corpus.mxs"), Err(Error::Io(_))));
    assert!(matches!(FileReader::open("/nonexistent/corpus.mxs"), Err(Error::Io(_))));
}

#[test]
fn file_reader_rejects_truncated_payload() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.mxs");
    let bytes = encode(&layouts().remove(0)).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
    assert!(matches!(FileReader::open(&path), Err(Error::TruncatedPayload { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn streamed_top_k_equals_exhaustive(seed in 0u64..500, n in 1usize..60, block in 1usize..80, k_frac in 0.0f64..=1.0) {
        let docs = synth_docs(seed, n, 8, LengthDist::Uniform { min: 1, max: 20 });
        let q = random_matrix(&mut rng(seed + 1), 4, 8);
        let k = ((n as f64) * k_frac) as usize;
        let packed = pack(&docs).unwrap();
        let tile = TileConfig::tiles(4, 7).unwrap();
        let (scores, _, _) = fused_score_batch(std::slice::from_ref(&q), &packed, &tile).unwrap();
        let expected = rank_all(scores.values())[..k].to_vec();
        let mem = stream_score_topk(&q, &mut MemoryReader::new(&packed), block, k, &tile).unwrap();
        prop_assert_eq!(&mem.top, &expected);
        prop_assert_eq!(mem.blocks, n.div_ceil(block.min(n)));
        let bytes = encode(&EmbeddingData::Packed { elem: ElemType::F32, corpus: packed }).unwrap();
        let mut file = FileReader::new(std::io::Cursor::new(bytes)).unwrap();
        let disk = stream_score_topk(&q, &mut file, block, k, &tile).unwrap();
        prop_assert_eq!(&disk.top, &expected);
    }
}

#[test]
fn dense_file_streams_like_memory() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.mxs");
    let docs = synth_docs(8, 1200, 16, LengthDist::Fixed { len: 10 });
    write_embeddings(&path, &EmbeddingData::Dense { elem: ElemType::F32, docs: docs.clone() }).unwrap();
    let q = random_matrix(&mut rng(9), 5, 16);
    let batch = DocBatch::full(docs).unwrap();
    let tile = TileConfig::default();
    let mem = stream_score_topk(&q, &mut MemoryReader::new(&batch), DEFAULT_BLOCK_DOCS, 25, &tile).unwrap();
    let disk = stream_score_topk(&q, &mut FileReader::open(&path).unwrap(), DEFAULT_BLOCK_DOCS, 25, &tile).unwrap();
    assert_eq!(mem.top, disk.top);
    assert_eq!(mem.blocks, 3);
}

#[test]
fn stream_input_errors() {
    let docs = DocBatch::full(synth_docs(1, 3, 4, LengthDist::Fixed { len: 2 })).unwrap();
    let q = random_matrix(&mut rng(1), 2, 4);
    let tile = TileConfig::default();
    assert!(stream_score_topk(&q, &mut MemoryReader::new(&docs), 0, 1, &tile).is_err());
    let wide = random_matrix(&mut rng(1), 2, 5);
    assert!(matches!(stream_score_topk(&wide, &mut MemoryReader::new(&docs), 2, 1, &tile), Err(Error::DimMismatch { .. })));
    let quant = encode(&layouts().remove(4)).unwrap();
    assert!(FileReader::new(std::io::Cursor::new(quant)).is_err());
}
