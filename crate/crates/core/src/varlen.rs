//! Padding-free corpora: documents concatenated row-wise and delimited by a
//! prefix-offset array `cu_seqlens`, so scoring touches only real tokens.

use crate::error::{Error, Result};
use crate::forward::fused_score_batch;
use crate::streamio::traffic::TrafficReport;
use crate::types::{ArgmaxMap, DocSource, EmbeddingMatrix, TileConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct PackedCorpus {
    tokens: Vec<f32>,
    cu_seqlens: Vec<usize>,
    dim: usize,
}

impl PackedCorpus {
    /// Builds from raw parts, checking that offsets start at zero, strictly
    /// increase and cover the token buffer.
    pub fn from_parts(tokens: Vec<f32>, cu_seqlens: Vec<usize>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ZeroDim);
        }
        if cu_seqlens.len() < 2 {
            return Err(Error::EmptyBatch);
        }
        if cu_seqlens[0] != 0 {
            return Err(Error::ShapeMismatch("cu_seqlens must start at 0".into()));
        }
        if let Some(b) = cu_seqlens.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::EmptyDocument(b));
        }
        let total = *cu_seqlens.last().unwrap();
        if tokens.len() != total * dim {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {total} tokens of dim {dim}",
                tokens.len()
            )));
        }
        // Reuse the matrix constructor for the NaN scan.
        let tokens = EmbeddingMatrix::new(total, dim, tokens)?.into_data();
        Ok(Self { tokens, cu_seqlens, dim })
    }

    pub fn tokens(&self) -> &[f32] {
        &self.tokens
    }

    pub fn cu_seqlens(&self) -> &[usize] {
        &self.cu_seqlens
    }

    pub fn len(&self) -> usize {
        self.cu_seqlens.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn doc_len(&self, b: usize) -> usize {
        self.cu_seqlens[b + 1] - self.cu_seqlens[b]
    }

    pub fn total_tokens(&self) -> usize {
        self.cu_seqlens[self.len()]
    }

    pub fn max_doc_len(&self) -> usize {
        (0..self.len()).map(|b| self.doc_len(b)).max().unwrap_or(0)
    }

    /// Real tokens over padded slots, `Σ L_d / (B · max L_d)`.
    pub fn fill_ratio(&self) -> f64 {
        self.total_tokens() as f64 / (self.len() * self.max_doc_len()) as f64
    }

    pub fn doc(&self, b: usize) -> EmbeddingMatrix {
        EmbeddingMatrix::new(self.doc_len(b), self.dim, self.doc_data(b).to_vec()).expect("packed rows are valid")
    }
}

impl DocSource for PackedCorpus {
    fn dim(&self) -> usize {
        self.dim
    }
    fn n_docs(&self) -> usize {
        self.len()
    }
    fn stored_len(&self, b: usize) -> usize {
        self.doc_len(b)
    }
    fn valid_len(&self, b: usize) -> usize {
        self.doc_len(b)
    }
    fn doc_data(&self, b: usize) -> &[f32] {
        &self.tokens[self.cu_seqlens[b] * self.dim..self.cu_seqlens[b + 1] * self.dim]
    }
    fn dest_offset(&self, b: usize) -> usize {
        self.cu_seqlens[b]
    }
    fn n_dest(&self) -> usize {
        self.total_tokens()
    }
}

pub fn pack(docs: &[EmbeddingMatrix]) -> Result<PackedCorpus> {
    let first = docs.first().ok_or(Error::EmptyBatch)?;
    let dim = first.dim();
    let mut cu = Vec::with_capacity(docs.len() + 1);
    cu.push(0);
    let mut tokens = Vec::with_capacity(docs.iter().map(|d| d.data().len()).sum());
    for (b, d) in docs.iter().enumerate() {
        if d.dim() != dim {
            return Err(Error::DimMismatch { query: dim, doc: d.dim() });
        }
        if d.rows() == 0 {
            return Err(Error::EmptyDocument(b));
        }
        tokens.extend_from_slice(d.data());
        cu.push(cu[b] + d.rows());
    }
    Ok(PackedCorpus { tokens, cu_seqlens: cu, dim })
}

pub fn unpack(packed: &PackedCorpus) -> Vec<EmbeddingMatrix> {
    (0..packed.len()).map(|b| packed.doc(b)).collect()
}

/// Scores of one query against every packed document, in document order.
#[derive(Debug, Clone)]
pub struct VarlenScores {
    pub scores: Vec<f32>,
    /// Per-document local indices; destinations add `cu_seqlens[b]`.
    pub argmax: ArgmaxMap,
    pub traffic: TrafficReport,
}

impl VarlenScores {
    pub fn mac_count(&self) -> u64 {
        self.traffic.mac_count
    }

    pub fn flops(&self) -> u64 {
        self.traffic.flops()
    }
}

pub fn fused_score_varlen(q: &EmbeddingMatrix, packed: &PackedCorpus, tile: &TileConfig) -> Result<VarlenScores> {
    let (scores, argmax, traffic) = fused_score_batch(std::slice::from_ref(q), packed, tile)?;
    Ok(VarlenScores {
        scores: scores.values().to_vec(),
        argmax,
        traffic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(rows: usize, dim: usize, v: f32) -> EmbeddingMatrix {
        EmbeddingMatrix::new(rows, dim, vec![v; rows * dim]).unwrap()
    }

    #[test]
    fn offsets_of_two_documents() {
        let p = pack(&[doc(2, 3, 1.0), doc(3, 3, 2.0)]).unwrap();
        assert_eq!(p.cu_seqlens(), &[0, 2, 5]);
        assert_eq!(p.doc_data(1), &[2.0; 9]);
        assert_eq!(p.n_dest(), 5);
        let one = pack(&[doc(4, 2, 0.5)]).unwrap();
        assert_eq!(one.cu_seqlens(), &[0, 4]);
        assert_eq!(one.fill_ratio(), 1.0);
    }

    #[test]
    fn pack_errors() {
        assert!(matches!(pack(&[doc(1, 2, 0.0), doc(1, 3, 0.0)]), Err(Error::DimMismatch { .. })));
        let empty = EmbeddingMatrix::new(0, 2, vec![]).unwrap();
        assert!(matches!(pack(&[doc(1, 2, 0.0), empty]), Err(Error::EmptyDocument(1))));
        assert!(matches!(pack(&[]), Err(Error::EmptyBatch)));
        assert!(matches!(PackedCorpus::from_parts(vec![0.0; 4], vec![0, 2, 2], 1), Err(Error::EmptyDocument(1))));
    }

    #[test]
    fn fill_ratio_of_ragged_pair() {
        let p = pack(&[doc(1, 1, 0.0), doc(3, 1, 0.0)]).unwrap();
        assert_eq!(p.fill_ratio(), 4.0 / 6.0);
    }
}
