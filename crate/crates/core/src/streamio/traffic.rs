//! Byte-traffic ledger and the analytical IO model it is checked against.
//!
//! The counters play the role of main-memory traffic on a CPU: an operand
//! "load" is counted each time a kernel pulls a query chunk or a document
//! tile into its working buffers. Similarities computed inside a tile are
//! never counted because they never leave the working set.

use serde::{Deserialize, Serialize};

/// Exact counters accumulated by one run. Merging adds traffic and keeps the
/// largest per-worker working set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficReport {
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub peak_aux_bytes: u64,
    pub mac_count: u64,
}

impl TrafficReport {
    pub fn merge(mut self, other: TrafficReport) -> TrafficReport {
        self.absorb(&other);
        self
    }

    pub fn absorb(&mut self, other: &TrafficReport) {
        self.bytes_read += other.bytes_read;
        self.bytes_written += other.bytes_written;
        self.mac_count += other.mac_count;
        self.peak_aux_bytes = self.peak_aux_bytes.max(other.peak_aux_bytes);
    }

    pub fn note_aux(&mut self, bytes: usize) {
        self.peak_aux_bytes = self.peak_aux_bytes.max(bytes as u64);
    }

    /// Two floating-point operations per multiply-accumulate.
    pub fn flops(&self) -> u64 {
        2 * self.mac_count
    }
}

/// Problem shape for [`model_traffic`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficShape {
    pub n_queries: u64,
    pub n_docs: u64,
    pub q_len: u64,
    pub doc_len: u64,
    pub dim: u64,
    pub elem_bytes: u64,
    pub scalar_bytes: u64,
    /// Query chunks per query; each chunk streams the document once more.
    pub query_chunks: u64,
}

impl TrafficShape {
    /// Single-pass shape with 4-byte elements and scores.
    pub fn new(n_queries: u64, n_docs: u64, q_len: u64, doc_len: u64, dim: u64) -> Self {
        Self {
            n_queries,
            n_docs,
            q_len,
            doc_len,
            dim,
            elem_bytes: 4,
            scalar_bytes: 4,
            query_chunks: 1,
        }
    }

    pub fn with_elem_bytes(mut self, bytes: u64) -> Self {
        self.elem_bytes = bytes;
        self
    }

    /// Number of query chunks for a chunk length of `qchunk` rows.
    pub fn with_qchunk(mut self, qchunk: u64) -> Self {
        self.query_chunks = self.q_len.div_ceil(qchunk.max(1)).max(1);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrafficMode {
    Naive,
    Fused,
}

/// Predicted bytes for both algorithms at one shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficModel {
    /// Operand reads: each query once, each document once per (query, chunk).
    pub operand_read_bytes: u64,
    /// One score per (query, document) pair.
    pub score_write_bytes: u64,
    /// Bytes moved for the materialized similarity tensor: one write plus two reads.
    pub sim_tensor_bytes: u64,
    pub fused_bytes: u64,
    pub naive_bytes: u64,
    /// `naive_bytes / fused_bytes`.
    pub naive_to_fused: f64,
    /// Similarity-surface to operand-surface ratio per single access,
    /// `L_q L_d / ((L_q + L_d) d)`.
    pub io_ratio: f64,
}

/// Accesses to the similarity tensor on the materialized path.
pub const SIM_TENSOR_ACCESSES: u64 = 3;

pub fn model_traffic(shape: &TrafficShape) -> TrafficModel {
    let s = shape;
    let operand_read_bytes = s.n_queries * s.q_len * s.dim * s.elem_bytes
        + s.n_queries * s.n_docs * s.query_chunks * s.doc_len * s.dim * s.elem_bytes;
    let score_write_bytes = s.n_queries * s.n_docs * s.scalar_bytes;
    let sim_tensor_bytes =
        SIM_TENSOR_ACCESSES * s.n_queries * s.n_docs * s.q_len * s.doc_len * s.elem_bytes;
    let fused_bytes = operand_read_bytes + score_write_bytes;
    let naive_bytes = fused_bytes + sim_tensor_bytes;
    let io_ratio = (s.q_len * s.doc_len) as f64 / ((s.q_len + s.doc_len) * s.dim) as f64;
    TrafficModel {
        operand_read_bytes,
        score_write_bytes,
        sim_tensor_bytes,
        fused_bytes,
        naive_bytes,
        naive_to_fused: naive_bytes as f64 / fused_bytes as f64,
        io_ratio,
    }
}

impl TrafficModel {
    pub fn bytes(&self, mode: TrafficMode) -> u64 {
        match mode {
            TrafficMode::Naive => self.naive_bytes,
            TrafficMode::Fused => self.fused_bytes,
        }
    }
}
