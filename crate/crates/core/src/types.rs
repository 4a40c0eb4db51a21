//! Domain types shared by every scoring path.
//!
//! All types validate their invariants at construction and are immutable
//! afterwards, so they can be shared freely across worker threads.
//!
//! Embeddings are not required to be unit-normalized. The kernels compute
//! raw inner products and never rely on `‖x‖ = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Precision an embedding was stored in before it was widened to `f32`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElemType {
    F32,
    /// Half precision on disk, widened to `f32` at load.
    F16,
    /// Integral values in `[-128, 127]`.
    I8,
}

impl ElemType {
    /// Bytes per element in the stored (on-disk) representation.
    pub fn storage_bytes(self) -> usize {
        match self {
            ElemType::F32 => 4,
            ElemType::F16 => 2,
            ElemType::I8 => 1,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            ElemType::F32 => 0,
            ElemType::F16 => 1,
            ElemType::I8 => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(ElemType::F32),
            1 => Ok(ElemType::F16),
            2 => Ok(ElemType::I8),
            tag => Err(Error::BadTag { kind: "element", tag }),
        }
    }
}

/// Row-major `[rows × dim]` block of token embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    elem: ElemType,
    data: Vec<f32>,
}

fn check_finite_shape(rows: usize, dim: usize, len: usize) -> Result<()> {
    if dim == 0 {
        return Err(Error::ZeroDim);
    }
    if rows.checked_mul(dim) != Some(len) {
        return Err(Error::ShapeMismatch(format!(
            "data length {len} != rows {rows} x dim {dim}"
        )));
    }
    Ok(())
}

fn scan_nan(data: &[f32], dim: usize) -> Result<()> {
    match data.iter().position(|x| x.is_nan()) {
        Some(p) => Err(Error::NanInput {
            row: p / dim,
            col: p % dim,
        }),
        None => Ok(()),
    }
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        check_finite_shape(rows, dim, data.len())?;
        scan_nan(&data, dim)?;
        Ok(Self {
            rows,
            dim,
            elem: ElemType::F32,
            data,
        })
    }

    /// Widens IEEE half-precision bit patterns to `f32`.
    pub fn from_f16_bits(rows: usize, dim: usize, bits: &[u16]) -> Result<Self> {
        check_finite_shape(rows, dim, bits.len())?;
        let data: Vec<f32> = bits
            .iter()
            .map(|&b| half::f16::from_bits(b).to_f32())
            .collect();
        scan_nan(&data, dim)?;
        Ok(Self {
            rows,
            dim,
            elem: ElemType::F16,
            data,
        })
    }

    pub fn from_i8(rows: usize, dim: usize, values: &[i8]) -> Result<Self> {
        check_finite_shape(rows, dim, values.len())?;
        Ok(Self {
            rows,
            dim,
            elem: ElemType::I8,
            data: values.iter().map(|&v| v as f32).collect(),
        })
    }

    /// Builds a matrix from row vectors; every row must have length `dim`.
    pub fn from_rows<R: AsRef<[f32]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::ShapeMismatch(format!(
                    "row {i} has length {}, expected {dim}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, data)
    }

    /// Rounds every value to the nearest half and tags the result as F16.
    pub fn to_f16_precision(&self) -> Self {
        let data = self
            .data
            .iter()
            .map(|&x| half::f16::from_f32(x).to_f32())
            .collect();
        Self {
            rows: self.rows,
            dim: self.dim,
            elem: ElemType::F16,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn elem(&self) -> ElemType {
        self.elem
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Copies rows `start..end` into a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        assert!(start <= end && end <= self.rows, "row range out of bounds");
        Self {
            rows: end - start,
            dim: self.dim,
            elem: self.elem,
            data: self.data[start * self.dim..end * self.dim].to_vec(),
        }
    }

    /// Bytes of the in-memory (`f32`) representation.
    pub fn resident_bytes(&self) -> usize {
        self.data.len() * std::mem::size_of::<f32>()
    }
}

/// Checks that a query and a document can be scored together.
///
/// NaN-freedom is guaranteed by [`EmbeddingMatrix`] construction, so only the
/// widths are compared here.
pub fn validate_pair(q: &EmbeddingMatrix, d: &EmbeddingMatrix) -> Result<()> {
    if q.dim != d.dim {
        return Err(Error::DimMismatch {
            query: q.dim,
            doc: d.dim,
        });
    }
    Ok(())
}

/// Read-only view over a set of documents, dense-padded or packed.
///
/// Destination rows (used by the backward pass) are laid out document after
/// document: document `b` owns rows `dest_offset(b) .. dest_offset(b) + stored_len(b)`.
pub trait DocSource: Sync {
    fn dim(&self) -> usize;
    fn n_docs(&self) -> usize;
    /// Stored rows of document `b`, padding included.
    fn stored_len(&self, b: usize) -> usize;
    /// Leading rows of document `b` that hold real tokens.
    fn valid_len(&self, b: usize) -> usize;
    /// Row-major data of the stored rows of document `b`.
    fn doc_data(&self, b: usize) -> &[f32];
    fn dest_offset(&self, b: usize) -> usize;
    fn n_dest(&self) -> usize;

    /// Bytes of all stored document rows.
    fn resident_bytes(&self) -> usize {
        (0..self.n_docs())
            .map(|b| std::mem::size_of_val(self.doc_data(b)))
            .sum()
    }
}

/// `B` documents sharing a width, each with a count of valid leading rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DocBatch {
    docs: Vec<EmbeddingMatrix>,
    valid_lens: Vec<usize>,
    dest_offsets: Vec<usize>,
    dim: usize,
}

impl DocBatch {
    pub fn new(docs: Vec<EmbeddingMatrix>, valid_lens: Vec<usize>) -> Result<Self> {
        let first = docs.first().ok_or(Error::EmptyBatch)?;
        let dim = first.dim();
        if valid_lens.len() != docs.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} valid lengths for {} documents",
                valid_lens.len(),
                docs.len()
            )));
        }
        let mut dest_offsets = Vec::with_capacity(docs.len() + 1);
        dest_offsets.push(0);
        for (b, (d, &v)) in docs.iter().zip(&valid_lens).enumerate() {
            if d.dim() != dim {
                return Err(Error::DimMismatch {
                    query: dim,
                    doc: d.dim(),
                });
            }
            if v == 0 {
                return Err(Error::EmptyDocument(b));
            }
            if v > d.rows() {
                return Err(Error::ShapeMismatch(format!(
                    "document {b}: valid length {v} exceeds stored rows {}",
                    d.rows()
                )));
            }
            dest_offsets.push(dest_offsets[b] + d.rows());
        }
        Ok(Self {
            docs,
            valid_lens,
            dest_offsets,
            dim,
        })
    }

    /// Every stored row is valid.
    pub fn full(docs: Vec<EmbeddingMatrix>) -> Result<Self> {
        let lens = docs.iter().map(|d| d.rows()).collect();
        Self::new(docs, lens)
    }

    /// Zero-pads every document to `pad_to` rows, keeping its real length valid.
    pub fn padded(docs: &[EmbeddingMatrix], pad_to: usize) -> Result<Self> {
        let mut out = Vec::with_capacity(docs.len());
        let mut lens = Vec::with_capacity(docs.len());
        for (b, d) in docs.iter().enumerate() {
            if d.rows() > pad_to {
                return Err(Error::ShapeMismatch(format!(
                    "document {b} has {} rows, longer than padding {pad_to}",
                    d.rows()
                )));
            }
            let mut data = d.data().to_vec();
            data.resize(pad_to * d.dim(), 0.0);
            out.push(EmbeddingMatrix {
                rows: pad_to,
                dim: d.dim(),
                elem: d.elem(),
                data,
            });
            lens.push(d.rows());
        }
        Self::new(out, lens)
    }

    pub fn docs(&self) -> &[EmbeddingMatrix] {
        &self.docs
    }

    pub fn doc(&self, b: usize) -> &EmbeddingMatrix {
        &self.docs[b]
    }

    pub fn valid_lens(&self) -> &[usize] {
        &self.valid_lens
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Longest stored document.
    pub fn max_stored_len(&self) -> usize {
        self.docs.iter().map(|d| d.rows()).max().unwrap_or(0)
    }
}

impl DocSource for DocBatch {
    fn dim(&self) -> usize {
        self.dim
    }
    fn n_docs(&self) -> usize {
        self.docs.len()
    }
    fn stored_len(&self, b: usize) -> usize {
        self.docs[b].rows()
    }
    fn valid_len(&self, b: usize) -> usize {
        self.valid_lens[b]
    }
    fn doc_data(&self, b: usize) -> &[f32] {
        self.docs[b].data()
    }
    fn dest_offset(&self, b: usize) -> usize {
        self.dest_offsets[b]
    }
    fn n_dest(&self) -> usize {
        *self.dest_offsets.last().unwrap_or(&0)
    }
}

/// All-pairs `[n_queries × n_docs]` scores, also used for upstream gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    n_queries: usize,
    n_docs: usize,
    values: Vec<f32>,
}

impl ScoreMatrix {
    pub fn new(n_queries: usize, n_docs: usize, values: Vec<f32>) -> Result<Self> {
        if n_queries.checked_mul(n_docs) != Some(values.len()) {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {n_queries}x{n_docs} score matrix",
                values.len()
            )));
        }
        if let Some(p) = values.iter().position(|x| x.is_nan()) {
            return Err(Error::NanInput {
                row: p / n_docs.max(1),
                col: p % n_docs.max(1),
            });
        }
        Ok(Self {
            n_queries,
            n_docs,
            values,
        })
    }

    pub fn filled(n_queries: usize, n_docs: usize, value: f32) -> Self {
        Self {
            n_queries,
            n_docs,
            values: vec![value; n_queries * n_docs],
        }
    }

    pub fn n_queries(&self) -> usize {
        self.n_queries
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, q: usize, b: usize) -> f32 {
        self.values[q * self.n_docs + b]
    }

    pub fn row(&self, q: usize) -> &[f32] {
        &self.values[q * self.n_docs..(q + 1) * self.n_docs]
    }
}

/// Largest document length an [`ArgmaxMap`] accepts; indices are stored as `u32`
/// but kept within the signed 32-bit range for interchange.
pub const MAX_DOC_LEN: usize = i32::MAX as usize;

/// Winning document-token index per `(query, document, query-token)`.
///
/// Sources are flattened as `(q * n_docs + b) * q_len + s`. Destinations are
/// `dest_offsets[b] + index`, matching the [`DocSource`] row layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArgmaxMap {
    n_queries: usize,
    n_docs: usize,
    q_len: usize,
    doc_lens: Vec<u32>,
    dest_offsets: Vec<usize>,
    indices: Vec<u32>,
}

impl ArgmaxMap {
    /// `doc_lens[b]` is the valid length of document `b`; `dest_offsets` has
    /// `n_docs + 1` entries and every document's span must hold its valid rows.
    pub fn new(
        n_queries: usize,
        q_len: usize,
        doc_lens: Vec<usize>,
        dest_offsets: Vec<usize>,
        indices: Vec<u32>,
    ) -> Result<Self> {
        let n_docs = doc_lens.len();
        if dest_offsets.len() != n_docs + 1 || dest_offsets.first() != Some(&0) {
            return Err(Error::ShapeMismatch(format!(
                "expected {} destination offsets starting at 0",
                n_docs + 1
            )));
        }
        let expected = n_queries * n_docs * q_len;
        if indices.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "{} argmax entries, expected {expected}",
                indices.len()
            )));
        }
        let mut lens = Vec::with_capacity(n_docs);
        for (b, &len) in doc_lens.iter().enumerate() {
            if len == 0 {
                return Err(Error::EmptyDocument(b));
            }
            if len > MAX_DOC_LEN {
                return Err(Error::IndexOutOfRange {
                    index: len,
                    bound: MAX_DOC_LEN,
                });
            }
            if dest_offsets[b + 1] < dest_offsets[b] + len {
                return Err(Error::ShapeMismatch(format!(
                    "document {b}: destination span shorter than its length {len}"
                )));
            }
            lens.push(len as u32);
        }
        if let Some(q_len) = std::num::NonZeroUsize::new(q_len) {
            for (p, &idx) in indices.iter().enumerate() {
                let b = (p / q_len) % n_docs;
                if idx >= lens[b] {
                    return Err(Error::IndexOutOfRange {
                        index: idx as usize,
                        bound: lens[b] as usize,
                    });
                }
            }
        }
        Ok(Self {
            n_queries,
            n_docs,
            q_len,
            doc_lens: lens,
            dest_offsets,
            indices,
        })
    }

    /// Uniform documents of `doc_len` rows, destinations at `b * doc_len`.
    pub fn dense(
        n_queries: usize,
        n_docs: usize,
        q_len: usize,
        doc_len: usize,
        indices: Vec<u32>,
    ) -> Result<Self> {
        let offsets = (0..=n_docs).map(|b| b * doc_len).collect();
        Self::new(n_queries, q_len, vec![doc_len; n_docs], offsets, indices)
    }

    /// Builds a map whose layout matches `docs`. Indices are validated.
    pub fn for_docs<D: DocSource + ?Sized>(
        n_queries: usize,
        q_len: usize,
        docs: &D,
        indices: Vec<u32>,
    ) -> Result<Self> {
        let (lens, offsets) = layout_of(docs);
        Self::new(n_queries, q_len, lens, offsets, indices)
    }

    /// Engine-side constructor: indices come from a scan bounded by valid lengths.
    pub(crate) fn from_engine<D: DocSource + ?Sized>(
        n_queries: usize,
        q_len: usize,
        docs: &D,
        indices: Vec<u32>,
    ) -> Self {
        let (lens, dest_offsets) = layout_of(docs);
        debug_assert_eq!(indices.len(), n_queries * docs.n_docs() * q_len);
        Self {
            n_queries,
            n_docs: docs.n_docs(),
            q_len,
            doc_lens: lens.into_iter().map(|l| l as u32).collect(),
            dest_offsets,
            indices,
        }
    }

    pub fn n_queries(&self) -> usize {
        self.n_queries
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn q_len(&self) -> usize {
        self.q_len
    }

    pub fn doc_len(&self, b: usize) -> usize {
        self.doc_lens[b] as usize
    }

    pub fn dest_offsets(&self) -> &[usize] {
        &self.dest_offsets
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    /// Indices for pair `(q, b)`, one per query token.
    pub fn row(&self, q: usize, b: usize) -> &[u32] {
        let start = (q * self.n_docs + b) * self.q_len;
        &self.indices[start..start + self.q_len]
    }

    pub fn n_sources(&self) -> usize {
        self.indices.len()
    }

    pub fn n_dest(&self) -> usize {
        *self.dest_offsets.last().unwrap_or(&0)
    }

    /// Flat destination row selected by flattened source `src`.
    pub fn destination(&self, src: usize) -> usize {
        let b = (src / self.q_len) % self.n_docs;
        self.dest_offsets[b] + self.indices[src] as usize
    }

    /// Splits a flattened source into `(query, document, query token)`.
    pub fn decode_source(&self, src: usize) -> (usize, usize, usize) {
        let s = src % self.q_len;
        let pair = src / self.q_len;
        (pair / self.n_docs, pair % self.n_docs, s)
    }

    pub fn bytes(&self) -> usize {
        self.indices.len() * std::mem::size_of::<u32>()
    }

    /// True when `docs` has the same document count and destination layout.
    pub fn matches_docs<D: DocSource + ?Sized>(&self, docs: &D) -> bool {
        docs.n_docs() == self.n_docs
            && (0..self.n_docs).all(|b| {
                docs.dest_offset(b) == self.dest_offsets[b]
                    && docs.valid_len(b) == self.doc_lens[b] as usize
            })
            && docs.n_dest() == self.n_dest()
    }
}

fn layout_of<D: DocSource + ?Sized>(docs: &D) -> (Vec<usize>, Vec<usize>) {
    let n = docs.n_docs();
    let lens = (0..n).map(|b| docs.valid_len(b)).collect();
    let mut offsets: Vec<usize> = (0..n).map(|b| docs.dest_offset(b)).collect();
    offsets.push(docs.n_dest());
    (lens, offsets)
}

/// Gradients of a weighted score sum with respect to queries and documents.
///
/// `dq` is `[n_queries × q_len × dim]`; `dd` has one row per destination row of
/// the document layout (`n_dest × dim`), padding rows included and zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T = f32> {
    pub dq: Vec<T>,
    pub dd: Vec<T>,
    pub dim: usize,
}

/// Query-tile rows, document-tile rows, and query-chunk length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TileConfig {
    pub bq: usize,
    pub bd: usize,
    pub qchunk: usize,
}

impl TileConfig {
    pub const DEFAULT_BQ: usize = 32;
    pub const DEFAULT_BD: usize = 64;
    pub const DEFAULT_QCHUNK: usize = 128;

    pub fn new(bq: usize, bd: usize, qchunk: usize) -> Result<Self> {
        let t = Self { bq, bd, qchunk };
        t.validate()?;
        Ok(t)
    }

    /// Tiles of `bq × bd` with a single query tile per chunk.
    pub fn tiles(bq: usize, bd: usize) -> Result<Self> {
        Self::new(bq, bd, bq)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bq == 0 || self.bd == 0 || self.qchunk == 0 {
            return Err(Error::BadTileConfig(format!(
                "all tile sizes must be >= 1, got {self:?}"
            )));
        }
        if !self.qchunk.is_multiple_of(self.bq) {
            return Err(Error::BadTileConfig(format!(
                "query chunk {} is not a multiple of bq {}",
                self.qchunk, self.bq
            )));
        }
        Ok(())
    }
}

impl Default for TileConfig {
    fn default() -> Self {
        Self {
            bq: Self::DEFAULT_BQ,
            bd: Self::DEFAULT_BD,
            qchunk: Self::DEFAULT_QCHUNK,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, dim: usize) -> EmbeddingMatrix {
        EmbeddingMatrix::new(rows, dim, vec![0.25; rows * dim]).unwrap()
    }

    #[test]
    fn validate_pair_matching_dims() {
        assert!(validate_pair(&m(2, 4), &m(3, 4)).is_ok());
    }

    #[test]
    fn validate_pair_dim_mismatch() {
        let err = validate_pair(&m(2, 4), &m(3, 8)).unwrap_err();
        assert!(matches!(err, Error::DimMismatch { query: 4, doc: 8 }));
    }

    #[test]
    fn nan_rejected_with_location() {
        let mut data = vec![0.0; 8];
        data[5] = f32::NAN;
        let err = EmbeddingMatrix::new(2, 4, data).unwrap_err();
        assert!(matches!(err, Error::NanInput { row: 1, col: 1 }));
    }

    #[test]
    fn zero_dim_and_bad_length_rejected() {
        assert!(matches!(
            EmbeddingMatrix::new(0, 0, vec![]),
            Err(Error::ZeroDim)
        ));
        assert!(matches!(
            EmbeddingMatrix::new(2, 3, vec![0.0; 5]),
            Err(Error::ShapeMismatch(_))
        ));
        assert_eq!(EmbeddingMatrix::new(0, 3, vec![]).unwrap().rows(), 0);
    }

    #[test]
    fn f16_widening() {
        let bits: Vec<u16> = [1.5f32, -0.25, 65504.0]
            .iter()
            .map(|&x| half::f16::from_f32(x).to_bits())
            .collect();
        let e = EmbeddingMatrix::from_f16_bits(1, 3, &bits).unwrap();
        assert_eq!(e.data(), &[1.5, -0.25, 65504.0]);
        assert_eq!(e.elem(), ElemType::F16);
        let nan = [half::f16::NAN.to_bits()];
        assert!(EmbeddingMatrix::from_f16_bits(1, 1, &nan).is_err());
    }

    #[test]
    fn doc_batch_invariants() {
        assert!(matches!(DocBatch::new(vec![], vec![]), Err(Error::EmptyBatch)));
        assert!(matches!(
            DocBatch::new(vec![m(2, 4), m(2, 4)], vec![2, 0]),
            Err(Error::EmptyDocument(1))
        ));
        assert!(matches!(
            DocBatch::new(vec![m(2, 4), m(2, 8)], vec![2, 2]),
            Err(Error::DimMismatch { .. })
        ));
        assert!(DocBatch::new(vec![m(2, 4)], vec![3]).is_err());
        let b = DocBatch::padded(&[m(2, 4), m(3, 4)], 5).unwrap();
        assert_eq!(b.valid_lens(), &[2, 3]);
        assert_eq!(b.dest_offset(1), 5);
        assert_eq!(b.n_dest(), 10);
    }

    #[test]
    fn tile_config_invariants() {
        assert!(TileConfig::new(0, 4, 4).is_err());
        assert!(TileConfig::new(4, 4, 6).is_err());
        assert!(TileConfig::new(4, 4, 8).is_ok());
        let d = TileConfig::default();
        assert_eq!((d.bq, d.bd, d.qchunk), (32, 64, 128));
    }

    #[test]
    fn argmax_rejects_out_of_range() {
        let err = ArgmaxMap::dense(1, 1, 3, 2, vec![1, 2, 0]).unwrap_err();
        assert!(matches!(err, Error::IndexOutOfRange { index: 2, bound: 2 }));
    }

    #[test]
    fn argmax_index_width_round_trip() {
        // A document of the maximum length; no embedding data is needed.
        let top = (MAX_DOC_LEN - 1) as u32;
        let a = ArgmaxMap::new(1, 2, vec![MAX_DOC_LEN], vec![0, MAX_DOC_LEN], vec![top, 7])
            .unwrap();
        assert_eq!(a.row(0, 0), &[top, 7]);
        assert_eq!(a.destination(0), MAX_DOC_LEN - 1);
        assert!(ArgmaxMap::new(1, 1, vec![MAX_DOC_LEN + 1], vec![0, MAX_DOC_LEN + 1], vec![0])
            .is_err());
    }

    #[test]
    fn argmax_source_decoding() {
        let a = ArgmaxMap::dense(2, 3, 4, 5, vec![0; 24]).unwrap();
        // q = 1, b = 2, s = 3
        let src = (3 + 2) * 4 + 3;
        assert_eq!(a.decode_source(src), (1, 2, 3));
        assert_eq!(a.destination(src), 10);
    }
}
