//! Tiled MaxSim forward that never forms the similarity tensor.
//!
//! For each `(query, document)` pair the query is processed in chunks of
//! `qchunk` rows. Within a chunk, document tiles of `bd` rows are streamed in
//! index order and each `bq × bd` similarity sub-tile is folded into a running
//! per-row maximum before the next one is formed. Only the sub-tile, one
//! transposed document tile and the per-row state are ever live.
//!
//! Scores are accumulated row by row in a single `f32`, in query-row order,
//! so the result does not depend on any tile size.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{sim_tile, slice_max, transpose_into};
use crate::reference::check_queries;
use crate::streamio::traffic::TrafficReport;
use crate::types::{validate_pair, ArgmaxMap, DocSource, EmbeddingMatrix, ScoreMatrix, TileConfig};

const F32: usize = std::mem::size_of::<f32>();
const U32: usize = std::mem::size_of::<u32>();

/// Running maximum and winning column for the rows of one query chunk.
#[derive(Debug, Clone, Default)]
pub struct RunningRowState {
    max: Vec<f32>,
    arg: Vec<u32>,
}

impl RunningRowState {
    pub fn with_capacity(rows: usize) -> Self {
        Self {
            max: Vec::with_capacity(rows),
            arg: Vec::with_capacity(rows),
        }
    }

    /// Starts a fresh chunk of `rows` rows at `-inf`.
    pub fn reset(&mut self, rows: usize) {
        self.max.clear();
        self.max.resize(rows, f32::NEG_INFINITY);
        self.arg.clear();
        self.arg.resize(rows, 0);
    }

    /// Folds a `[rows × cols]` similarity tile into rows `row0..row0 + rows`.
    ///
    /// Column `c` of the tile is document token `col0 + c`; tokens at or past
    /// `valid` are overwritten with `-inf` before the reduction. A row's
    /// winner only changes on a strictly larger value, so the lowest index
    /// wins ties as long as tiles arrive in column order.
    pub fn fold(&mut self, tile: &mut [f32], row0: usize, rows: usize, cols: usize, col0: usize, valid: usize) {
        if col0 + cols > valid {
            let first_masked = valid.saturating_sub(col0);
            for r in 0..rows {
                tile[r * cols + first_masked..(r + 1) * cols].fill(f32::NEG_INFINITY);
            }
        }
        for r in 0..rows {
            let row = &tile[r * cols..(r + 1) * cols];
            let best = slice_max(row);
            let m = &mut self.max[row0 + r];
            if best > *m {
                *m = best;
                let c = row.iter().position(|&x| x == best).unwrap_or(0);
                self.arg[row0 + r] = (col0 + c) as u32;
            }
        }
    }

    pub fn max(&self) -> &[f32] {
        &self.max
    }

    pub fn arg(&self) -> &[u32] {
        &self.arg
    }

    fn bytes(&self) -> usize {
        self.max.capacity() * F32 + self.arg.capacity() * U32
    }
}

/// Per-worker working set for one in-flight pair.
pub(crate) struct PairScratch {
    state: RunningRowState,
    dtile: Vec<f32>,
    stile: Vec<f32>,
}

impl PairScratch {
    pub(crate) fn new(tile: &TileConfig, dim: usize, q_len: usize) -> Self {
        Self {
            state: RunningRowState::with_capacity(tile.qchunk.min(q_len.max(1))),
            dtile: vec![0.0; dim * tile.bd],
            stile: vec![0.0; tile.bq * tile.bd],
        }
    }

    pub(crate) fn state_and_tile(&mut self) -> (&mut RunningRowState, &mut [f32]) {
        (&mut self.state, &mut self.stile)
    }

    /// Bytes held by this working set.
    pub(crate) fn bytes(&self) -> usize {
        self.state.bytes() + self.dtile.capacity() * F32 + self.stile.capacity() * F32
    }
}

/// Scores one pair, continuing from `acc`. Counts document reads and MACs in
/// `traffic`; query reads are the caller's to count.
#[allow(clippy::too_many_arguments)]
pub(crate) fn score_pair_into(
    q: &[f32],
    q_rows: usize,
    doc: &[f32],
    doc_rows: usize,
    valid: usize,
    dim: usize,
    tile: &TileConfig,
    scratch: &mut PairScratch,
    mut acc: f32,
    argmax_out: &mut [u32],
    traffic: &mut TrafficReport,
) -> f32 {
    debug_assert!(valid >= 1 && valid <= doc_rows);
    let mut chunk0 = 0;
    while chunk0 < q_rows {
        let chunk_rows = tile.qchunk.min(q_rows - chunk0);
        scratch.state.reset(chunk_rows);
        let mut col0 = 0;
        while col0 < doc_rows {
            let cols = tile.bd.min(doc_rows - col0);
            transpose_into(&doc[col0 * dim..(col0 + cols) * dim], cols, dim, &mut scratch.dtile);
            traffic.bytes_read += (cols * dim * F32) as u64;
            let mut r0 = 0;
            while r0 < chunk_rows {
                let rows = tile.bq.min(chunk_rows - r0);
                let qrows = &q[(chunk0 + r0) * dim..(chunk0 + r0 + rows) * dim];
                let st = &mut scratch.stile[..rows * cols];
                sim_tile(qrows, rows, &scratch.dtile, cols, dim, st);
                traffic.mac_count += (rows * cols * dim) as u64;
                scratch.state.fold(st, r0, rows, cols, col0, valid);
                r0 += rows;
            }
            col0 += cols;
        }
        for (r, &m) in scratch.state.max().iter().enumerate() {
            acc += m;
            argmax_out[chunk0 + r] = scratch.state.arg()[r];
        }
        chunk0 += chunk_rows;
    }
    traffic.note_aux(scratch.bytes());
    acc
}

/// Scores one query against one document whose first `valid_len` rows are real.
pub fn fused_score_pair(
    q: &EmbeddingMatrix,
    d: &EmbeddingMatrix,
    valid_len: usize,
    tile: &TileConfig,
) -> Result<(f32, Vec<u32>, TrafficReport)> {
    validate_pair(q, d)?;
    tile.validate()?;
    if valid_len == 0 {
        return Err(Error::EmptyDocument(0));
    }
    if valid_len > d.rows() {
        return Err(Error::ShapeMismatch(format!(
            "valid length {valid_len} exceeds document rows {}",
            d.rows()
        )));
    }
    let mut scratch = PairScratch::new(tile, q.dim(), q.rows());
    let mut argmax = vec![0u32; q.rows()];
    let mut traffic = TrafficReport {
        bytes_read: q.resident_bytes() as u64,
        ..Default::default()
    };
    let score = score_pair_into(
        q.data(),
        q.rows(),
        d.data(),
        d.rows(),
        valid_len,
        q.dim(),
        tile,
        &mut scratch,
        0.0,
        &mut argmax,
        &mut traffic,
    );
    traffic.bytes_written += (F32 + argmax.len() * U32) as u64;
    Ok((score, argmax, traffic))
}

pub(crate) fn check_docs<D: DocSource + ?Sized>(docs: &D) -> Result<()> {
    if docs.n_docs() == 0 {
        return Err(Error::EmptyBatch);
    }
    for b in 0..docs.n_docs() {
        if docs.valid_len(b) == 0 {
            return Err(Error::EmptyDocument(b));
        }
    }
    Ok(())
}

/// All-pairs scoring of `qs` against `docs`; pairs are independent work units.
///
/// Every query is counted as read once; each document is read once per
/// query chunk of every query.
pub fn fused_score_batch<D: DocSource + ?Sized>(
    qs: &[EmbeddingMatrix],
    docs: &D,
    tile: &TileConfig,
) -> Result<(ScoreMatrix, ArgmaxMap, TrafficReport)> {
    tile.validate()?;
    check_docs(docs)?;
    let dim = docs.dim();
    let q_len = check_queries(qs, dim)?;
    let n_b = docs.n_docs();
    let mut scores = vec![0f32; qs.len() * n_b];
    let mut idx = vec![0u32; qs.len() * n_b * q_len];

    let mut traffic = if q_len == 0 {
        TrafficReport::default()
    } else {
        scores
            .par_iter_mut()
            .zip(idx.par_chunks_mut(q_len))
            .enumerate()
            .map_init(
                || PairScratch::new(tile, dim, q_len),
                |scratch, (p, (score, am))| {
                    let (qi, b) = (p / n_b, p % n_b);
                    let mut t = TrafficReport::default();
                    *score = score_pair_into(
                        qs[qi].data(),
                        q_len,
                        docs.doc_data(b),
                        docs.stored_len(b),
                        docs.valid_len(b),
                        dim,
                        tile,
                        scratch,
                        0.0,
                        am,
                        &mut t,
                    );
                    t
                },
            )
            .reduce(TrafficReport::default, TrafficReport::merge)
    };
    traffic.bytes_read += qs.iter().map(|q| q.resident_bytes() as u64).sum::<u64>();
    traffic.bytes_written += ((scores.len()) * F32 + idx.len() * U32) as u64;

    let argmax = ArgmaxMap::from_engine(qs.len(), q_len, docs, idx);
    let scores = ScoreMatrix::new(qs.len(), n_b, scores)?;
    Ok((scores, argmax, traffic))
}

/// Splits `q` into consecutive row blocks of at most `chunk_len` rows.
pub fn query_chunk_decompose(q: &EmbeddingMatrix, chunk_len: usize) -> Result<Vec<EmbeddingMatrix>> {
    if chunk_len == 0 {
        return Err(Error::BadTileConfig("query chunk length must be >= 1".into()));
    }
    Ok((0..q.rows())
        .step_by(chunk_len)
        .map(|start| q.slice_rows(start, (start + chunk_len).min(q.rows())))
        .collect())
}

/// Scores consecutive query chunks against one document, threading a single
/// accumulator through them. Bit-identical to scoring the concatenated query.
pub fn score_query_chunks(
    chunks: &[EmbeddingMatrix],
    d: &EmbeddingMatrix,
    valid_len: usize,
    tile: &TileConfig,
) -> Result<(f32, Vec<u32>)> {
    tile.validate()?;
    if valid_len == 0 {
        return Err(Error::EmptyDocument(0));
    }
    let mut acc = 0.0f32;
    let mut argmax = Vec::new();
    let mut traffic = TrafficReport::default();
    for c in chunks {
        validate_pair(c, d)?;
        let mut scratch = PairScratch::new(tile, c.dim(), c.rows());
        let start = argmax.len();
        argmax.resize(start + c.rows(), 0);
        acc = score_pair_into(
            c.data(),
            c.rows(),
            d.data(),
            d.rows(),
            valid_len,
            c.dim(),
            tile,
            &mut scratch,
            acc,
            &mut argmax[start..],
            &mut traffic,
        );
    }
    Ok((acc, argmax))
}
