//! Out-of-core ranking: the corpus is pulled through a fixed-size block
//! buffer, each resident block is scored in parallel and folded into one
//! top-K heap. Peak working memory depends on the block size, the query and
//! `K`, never on the corpus size.

use std::fs::File;
use std::io::{BufReader, Read, Seek, SeekFrom};
use std::path::Path;

use crate::error::{Error, Result};
use crate::forward::fused_score_batch;
use crate::streamio::format::{read_header, FileHeader, Layout};
use crate::streamio::topk::{Ranked, TopKHeap};
use crate::streamio::traffic::TrafficReport;
use crate::types::{DocSource, ElemType, EmbeddingMatrix, TileConfig};

pub const DEFAULT_BLOCK_DOCS: usize = 512;

/// Reusable buffer holding a run of consecutive documents.
#[derive(Debug, Default)]
pub struct DocBlock {
    tokens: Vec<f32>,
    cu: Vec<usize>,
    dim: usize,
    first_doc: usize,
}

impl DocBlock {
    pub fn first_doc(&self) -> usize {
        self.first_doc
    }

    fn begin(&mut self, first_doc: usize, dim: usize) {
        self.tokens.clear();
        self.cu.clear();
        self.cu.push(0);
        self.dim = dim;
        self.first_doc = first_doc;
    }

    fn push_doc(&mut self, values: impl IntoIterator<Item = f32>) {
        self.tokens.extend(values);
        self.cu.push(self.tokens.len() / self.dim);
    }

    /// Bytes reserved by the buffer.
    pub fn bytes(&self) -> usize {
        self.tokens.capacity() * 4 + self.cu.capacity() * std::mem::size_of::<usize>()
    }
}

impl DocSource for DocBlock {
    fn dim(&self) -> usize {
        self.dim
    }
    fn n_docs(&self) -> usize {
        self.cu.len() - 1
    }
    fn stored_len(&self, b: usize) -> usize {
        self.cu[b + 1] - self.cu[b]
    }
    fn valid_len(&self, b: usize) -> usize {
        self.stored_len(b)
    }
    fn doc_data(&self, b: usize) -> &[f32] {
        &self.tokens[self.cu[b] * self.dim..self.cu[b + 1] * self.dim]
    }
    fn dest_offset(&self, b: usize) -> usize {
        self.cu[b]
    }
    fn n_dest(&self) -> usize {
        *self.cu.last().unwrap()
    }
}

/// A corpus that can be read in runs of consecutive documents.
pub trait CorpusReader {
    fn dim(&self) -> usize;
    fn n_docs(&self) -> usize;
    /// Replaces the contents of `out` with documents `start..start + count`.
    fn read_block(&mut self, start: usize, count: usize, out: &mut DocBlock) -> Result<()>;
    /// Reader-side buffer bytes beyond the block itself.
    fn buffer_bytes(&self) -> usize {
        0
    }
}

/// Streams blocks out of an in-memory corpus, copying each block as a file
/// reader would.
pub struct MemoryReader<'a, D: ?Sized> {
    docs: &'a D,
}

impl<'a, D: DocSource + ?Sized> MemoryReader<'a, D> {
    pub fn new(docs: &'a D) -> Self {
        Self { docs }
    }
}

impl<D: DocSource + ?Sized> CorpusReader for MemoryReader<'_, D> {
    fn dim(&self) -> usize {
        self.docs.dim()
    }
    fn n_docs(&self) -> usize {
        self.docs.n_docs()
    }
    fn read_block(&mut self, start: usize, count: usize, out: &mut DocBlock) -> Result<()> {
        out.begin(start, self.docs.dim());
        for b in start..start + count {
            let valid = self.docs.valid_len(b) * self.docs.dim();
            out.push_doc(self.docs.doc_data(b)[..valid].iter().copied());
        }
        Ok(())
    }
}

/// Streams blocks from a dense or packed embedding file.
pub struct FileReader<R> {
    inner: R,
    header: FileHeader,
    raw: Vec<u8>,
    cu: Vec<u64>,
}

impl FileReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(BufReader::new(File::open(path)?))
    }
}

impl<R: Read + Seek> FileReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let header = read_header(&mut inner)?;
        let file_len = inner.seek(SeekFrom::End(0))?;
        if header.layout == Layout::Quantized {
            return Err(Error::InvalidValue(
                "quantized files are scored with the two-stage path".into(),
            ));
        }
        let expected = header.payload_offset + header.payload_bytes();
        if file_len < expected {
            return Err(Error::TruncatedPayload {
                expected,
                found: file_len,
            });
        }
        Ok(Self {
            inner,
            header,
            raw: Vec::new(),
            cu: Vec::new(),
        })
    }

    pub fn header(&self) -> &FileHeader {
        &self.header
    }

    fn offsets(&mut self, start: usize, count: usize) -> Result<()> {
        self.cu.clear();
        match self.header.doc_len {
            Some(l) => self.cu.extend((start..=start + count).map(|b| (b * l) as u64)),
            None => {
                let at = self.header.cu_offset.unwrap() + 8 * start as u64;
                self.inner.seek(SeekFrom::Start(at))?;
                let mut w = [0u8; 8];
                for _ in 0..=count {
                    self.inner.read_exact(&mut w)?;
                    self.cu.push(u64::from_le_bytes(w));
                }
                if self.cu.windows(2).any(|p| p[1] <= p[0]) {
                    return Err(Error::EmptyDocument(start));
                }
            }
        }
        Ok(())
    }
}

impl<R: Read + Seek> CorpusReader for FileReader<R> {
    fn dim(&self) -> usize {
        self.header.dim
    }
    fn n_docs(&self) -> usize {
        self.header.n_docs
    }

    fn read_block(&mut self, start: usize, count: usize, out: &mut DocBlock) -> Result<()> {
        self.offsets(start, count)?;
        let dim = self.header.dim as u64;
        let es = self.header.elem.storage_bytes() as u64;
        let (t0, t1) = (self.cu[0], self.cu[count]);
        let at = self.header.payload_offset + t0 * dim * es;
        self.inner.seek(SeekFrom::Start(at))?;
        self.raw.resize(((t1 - t0) * dim * es) as usize, 0);
        self.inner.read_exact(&mut self.raw)?;
        out.begin(start, self.header.dim);
        let elem = self.header.elem;
        for w in self.cu.windows(2) {
            let bytes = &self.raw[((w[0] - t0) * dim * es) as usize..((w[1] - t0) * dim * es) as usize];
            match elem {
                ElemType::F32 => out.push_doc(bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()))),
                ElemType::F16 => out.push_doc(
                    bytes
                        .chunks_exact(2)
                        .map(|b| half::f16::from_bits(u16::from_le_bytes(b.try_into().unwrap())).to_f32()),
                ),
                ElemType::I8 => unreachable!("rejected at open"),
            }
        }
        if let Some(p) = out.tokens.iter().position(|x| x.is_nan()) {
            return Err(Error::NanInput { row: p / self.header.dim, col: p % self.header.dim });
        }
        Ok(())
    }

    fn buffer_bytes(&self) -> usize {
        self.raw.capacity() + self.cu.capacity() * 8
    }
}

/// Result of a streamed ranking.
#[derive(Debug, Clone)]
pub struct StreamOutcome {
    pub top: Vec<Ranked>,
    pub traffic: TrafficReport,
    pub blocks: usize,
}

/// Ranks every document of `reader` against `query`, holding at most
/// `block_docs` documents at a time. `peak_aux_bytes` in the returned report
/// covers the block buffers, per-block outputs, kernel scratch and the heap.
pub fn stream_score_topk<C: CorpusReader + ?Sized>(
    query: &EmbeddingMatrix,
    reader: &mut C,
    block_docs: usize,
    k: usize,
    tile: &TileConfig,
) -> Result<StreamOutcome> {
    if block_docs == 0 {
        return Err(Error::InvalidValue("block size must be >= 1".into()));
    }
    let n = reader.n_docs();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    if k > n {
        return Err(Error::KTooLarge { k, n });
    }
    if reader.dim() != query.dim() {
        return Err(Error::DimMismatch {
            query: query.dim(),
            doc: reader.dim(),
        });
    }
    let block_docs = block_docs.min(n);
    let mut heap = TopKHeap::new(k);
    let mut block = DocBlock::default();
    let mut traffic = TrafficReport::default();
    let mut blocks = 0;
    let mut start = 0;
    while start < n {
        let count = block_docs.min(n - start);
        reader.read_block(start, count, &mut block)?;
        let (scores, argmax, t) = fused_score_batch(std::slice::from_ref(query), &block, tile)?;
        let outputs = scores.values().len() * 4 + argmax.bytes();
        for (i, &s) in scores.row(0).iter().enumerate() {
            heap.push(start + i, s);
        }
        traffic.absorb(&TrafficReport {
            peak_aux_bytes: 0,
            ..t
        });
        traffic.note_aux(block.bytes() + reader.buffer_bytes() + outputs + t.peak_aux_bytes as usize + heap.bytes());
        blocks += 1;
        start += count;
    }
    Ok(StreamOutcome {
        top: heap.into_sorted(),
        traffic,
        blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::DocBatch;

    fn doc(rows: usize, dim: usize, v: f32) -> EmbeddingMatrix {
        EmbeddingMatrix::new(rows, dim, (0..rows * dim).map(|i| v * ((i % 5) as f32 - 2.0)).collect()).unwrap()
    }

    #[test]
    fn block_larger_than_corpus_is_one_pass() {
        let docs = DocBatch::full((0..5).map(|i| doc(3, 2, i as f32 * 0.1)).collect()).unwrap();
        let q = doc(2, 2, 1.0);
        let out = stream_score_topk(&q, &mut MemoryReader::new(&docs), 100, 5, &TileConfig::default()).unwrap();
        assert_eq!(out.blocks, 1);
        assert_eq!(out.top.len(), 5);
    }

    #[test]
    fn k_larger_than_corpus() {
        let docs = DocBatch::full(vec![doc(1, 2, 1.0)]).unwrap();
        let q = doc(1, 2, 1.0);
        let r = stream_score_topk(&q, &mut MemoryReader::new(&docs), 4, 2, &TileConfig::default());
        assert!(matches!(r, Err(Error::KTooLarge { k: 2, n: 1 })));
    }
}
