//! Per-token symmetric INT8 quantization and INT8×INT8 MaxSim.
//!
//! Each token row gets its own scale `maxabs / 127`; values are rounded
//! half-to-even and clamped to `[-127, 127]`, leaving `-128` unused so that
//! negation is exact. The scoring kernel accumulates integer dot products in
//! `i32` per sub-tile and applies `scale_q[i] * scale_d[j]` before the
//! running-max fold, with the same masking and tie rules as the `f32` path.

use std::collections::HashSet;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forward::{check_docs, fused_score_pair, PairScratch};
use crate::streamio::topk::{Ranked, TopKHeap};
use crate::streamio::traffic::TrafficReport;
use crate::types::{DocSource, EmbeddingMatrix, TileConfig};

/// Scale given to all-zero rows.
pub const SCALE_FLOOR: f32 = 1e-12;

/// Largest width for which `d · 127²` fits in an `i32` accumulator.
pub const MAX_INT8_DIM: usize = i32::MAX as usize / (127 * 127);

const LEVELS: i32 = 127;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedMatrix {
    rows: usize,
    dim: usize,
    values: Vec<i8>,
    scales: Vec<f32>,
}

impl QuantizedMatrix {
    pub fn new(rows: usize, dim: usize, values: Vec<i8>, scales: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ZeroDim);
        }
        if dim > MAX_INT8_DIM {
            return Err(Error::InvalidValue(format!(
                "dimension {dim} can overflow the i32 accumulator (max {MAX_INT8_DIM})"
            )));
        }
        if values.len() != rows * dim || scales.len() != rows {
            return Err(Error::ShapeMismatch(format!(
                "{} values and {} scales for {rows}x{dim}",
                values.len(),
                scales.len()
            )));
        }
        if values.contains(&i8::MIN) {
            return Err(Error::InvalidValue("-128 is outside the symmetric range".into()));
        }
        if let Some(s) = scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::InvalidValue(format!("scale {s} must be positive and finite")));
        }
        Ok(Self {
            rows,
            dim,
            values,
            scales,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    pub fn scales(&self) -> &[f32] {
        &self.scales
    }

    pub fn row(&self, i: usize) -> &[i8] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn dequantize(&self) -> EmbeddingMatrix {
        let data = self
            .values
            .chunks(self.dim)
            .zip(&self.scales)
            .flat_map(|(row, &s)| row.iter().map(move |&v| s * v as f32))
            .collect();
        EmbeddingMatrix::new(self.rows, self.dim, data).expect("dequantized values are finite")
    }

    /// Stored bytes: one per value plus one `f32` scale per token.
    pub fn bytes(&self) -> usize {
        self.values.len() + self.scales.len() * std::mem::size_of::<f32>()
    }
}

/// Quantizes every row to `[-127, 127]`.
pub fn quantize_per_token(x: &EmbeddingMatrix) -> QuantizedMatrix {
    quantize_with_levels(x, LEVELS as u8)
}

/// Quantizes every row to `[-levels, levels]`; a coarser grid for `levels < 127`.
pub fn quantize_with_levels(x: &EmbeddingMatrix, levels: u8) -> QuantizedMatrix {
    let levels = (levels as i32).clamp(1, LEVELS);
    let dim = x.dim();
    let mut values = Vec::with_capacity(x.rows() * dim);
    let mut scales = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let row = x.row(i);
        let maxabs = row.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        let scale = if maxabs > 0.0 {
            (maxabs / levels as f32).max(SCALE_FLOOR)
        } else {
            SCALE_FLOOR
        };
        scales.push(scale);
        values.extend(row.iter().map(|&v| {
            let q = (v / scale).round_ties_even();
            q.clamp(-levels as f32, levels as f32) as i8
        }));
    }
    QuantizedMatrix {
        rows: x.rows(),
        dim,
        values,
        scales,
    }
}

struct Int8Scratch {
    inner: PairScratch,
    dtile: Vec<i32>,
    itile: Vec<i32>,
}

impl Int8Scratch {
    fn new(tile: &TileConfig, dim: usize, q_len: usize) -> Self {
        Self {
            inner: PairScratch::new(tile, 0, q_len),
            dtile: vec![0; dim * tile.bd],
            itile: vec![0; tile.bq * tile.bd],
        }
    }

    fn bytes(&self) -> usize {
        self.inner.bytes() + (self.dtile.capacity() + self.itile.capacity()) * 4
    }
}

#[allow(clippy::too_many_arguments)]
fn score_int8_into(
    q: &QuantizedMatrix,
    d: &QuantizedMatrix,
    valid: usize,
    tile: &TileConfig,
    scratch: &mut Int8Scratch,
    argmax_out: &mut [u32],
    traffic: &mut TrafficReport,
) -> f32 {
    let dim = q.dim;
    let mut acc = 0.0f32;
    let mut chunk0 = 0;
    while chunk0 < q.rows {
        let chunk_rows = tile.qchunk.min(q.rows - chunk0);
        let (state, stile) = scratch.inner.state_and_tile();
        state.reset(chunk_rows);
        let mut col0 = 0;
        while col0 < d.rows {
            let cols = tile.bd.min(d.rows - col0);
            for c in 0..cols {
                for (k, &v) in d.row(col0 + c).iter().enumerate() {
                    scratch.dtile[k * cols + c] = v as i32;
                }
            }
            traffic.bytes_read += (cols * (dim + 4)) as u64;
            let mut r0 = 0;
            while r0 < chunk_rows {
                let rows = tile.bq.min(chunk_rows - r0);
                let it = &mut scratch.itile[..rows * cols];
                for r in 0..rows {
                    let o = &mut it[r * cols..(r + 1) * cols];
                    o.fill(0);
                    for (k, &qv) in q.row(chunk0 + r0 + r).iter().enumerate() {
                        let qv = qv as i32;
                        for (a, &x) in o.iter_mut().zip(&scratch.dtile[k * cols..(k + 1) * cols]) {
                            *a += qv * x;
                        }
                    }
                }
                traffic.mac_count += (rows * cols * dim) as u64;
                let st = &mut stile[..rows * cols];
                for r in 0..rows {
                    let sq = q.scales[chunk0 + r0 + r];
                    for c in 0..cols {
                        st[r * cols + c] = it[r * cols + c] as f32 * (sq * d.scales[col0 + c]);
                    }
                }
                state.fold(st, r0, rows, cols, col0, valid);
                r0 += rows;
            }
            col0 += cols;
        }
        for (r, &m) in state.max().iter().enumerate() {
            acc += m;
            argmax_out[chunk0 + r] = state.arg()[r];
        }
        chunk0 += chunk_rows;
    }
    traffic.note_aux(scratch.bytes());
    acc
}

/// INT8×INT8 MaxSim of one pair with fused dequantization.
pub fn fused_score_int8(
    qq: &QuantizedMatrix,
    dq: &QuantizedMatrix,
    valid_len: usize,
    tile: &TileConfig,
) -> Result<(f32, Vec<u32>, TrafficReport)> {
    tile.validate()?;
    if qq.dim != dq.dim {
        return Err(Error::DimMismatch {
            query: qq.dim,
            doc: dq.dim,
        });
    }
    if valid_len == 0 {
        return Err(Error::EmptyDocument(0));
    }
    if valid_len > dq.rows {
        return Err(Error::ShapeMismatch(format!(
            "valid length {valid_len} exceeds document rows {}",
            dq.rows
        )));
    }
    let mut scratch = Int8Scratch::new(tile, qq.dim, qq.rows);
    let mut argmax = vec![0u32; qq.rows];
    let mut traffic = TrafficReport {
        bytes_read: qq.bytes() as u64,
        ..Default::default()
    };
    let score = score_int8_into(qq, dq, valid_len, tile, &mut scratch, &mut argmax, &mut traffic);
    traffic.bytes_written += (4 + 4 * argmax.len()) as u64;
    Ok((score, argmax, traffic))
}

/// INT8 scores of one query against a corpus, in document order.
pub fn score_corpus_int8(qq: &QuantizedMatrix, corpus: &[QuantizedMatrix], tile: &TileConfig) -> Result<Vec<f32>> {
    tile.validate()?;
    if let Some(d) = corpus.iter().find(|d| d.dim != qq.dim) {
        return Err(Error::DimMismatch {
            query: qq.dim,
            doc: d.dim,
        });
    }
    if let Some(b) = corpus.iter().position(|d| d.rows == 0) {
        return Err(Error::EmptyDocument(b));
    }
    Ok(corpus
        .par_iter()
        .map_init(
            || (Int8Scratch::new(tile, qq.dim, qq.rows), vec![0u32; qq.rows]),
            |(scratch, am), d| {
                let mut t = TrafficReport::default();
                score_int8_into(qq, d, d.rows, tile, scratch, am, &mut t)
            },
        )
        .collect())
}

/// Coarse INT8 scan of the whole corpus, then exact rescoring of the best
/// `k * shortlist_factor` documents. Returns the top `k` of the shortlist,
/// best first, ties by lower document id.
pub fn two_stage_topk<D: DocSource + ?Sized>(
    qq: &QuantizedMatrix,
    q_full: &EmbeddingMatrix,
    corpus_q: &[QuantizedMatrix],
    corpus_full: &D,
    k: usize,
    shortlist_factor: usize,
    tile: &TileConfig,
) -> Result<Vec<Ranked>> {
    let n = corpus_full.n_docs();
    if corpus_q.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} quantized documents for a corpus of {n}",
            corpus_q.len()
        )));
    }
    if k > n {
        return Err(Error::KTooLarge { k, n });
    }
    if shortlist_factor == 0 {
        return Err(Error::InvalidValue("shortlist factor must be >= 1".into()));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    check_docs(corpus_full)?;
    let coarse = score_corpus_int8(qq, corpus_q, tile)?;
    let mut shortlist = TopKHeap::new(k.saturating_mul(shortlist_factor).min(n));
    for (id, &s) in coarse.iter().enumerate() {
        shortlist.push(id, s);
    }
    let ids: Vec<usize> = shortlist.into_sorted().into_iter().map(|r| r.doc).collect();
    let rescored: Vec<Ranked> = ids
        .par_iter()
        .map(|&id| {
            let d = EmbeddingMatrix::new(corpus_full.stored_len(id), corpus_full.dim(), corpus_full.doc_data(id).to_vec())?;
            let (score, _, _) = fused_score_pair(q_full, &d, corpus_full.valid_len(id), tile)?;
            Ok(Ranked { doc: id, score })
        })
        .collect::<Result<_>>()?;
    let mut top = TopKHeap::new(k);
    for r in rescored {
        top.push(r.doc, r.score);
    }
    Ok(top.into_sorted())
}

/// Fraction of the first `k` ids of `a` that appear in the first `k` of `b`.
pub fn topk_overlap(a: &[Ranked], b: &[Ranked], k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let sa: HashSet<usize> = a.iter().take(k).map(|r| r.doc).collect();
    let hits = b.iter().take(k).filter(|r| sa.contains(&r.doc)).count();
    hits as f64 / k as f64
}
