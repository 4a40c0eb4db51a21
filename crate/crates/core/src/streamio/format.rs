//! Self-describing little-endian embedding files.
//!
//! ```text
//! magic    "MXS1"
//! version  u16        (1)
//! elem     u8         0 = f32, 1 = f16, 2 = i8
//! layout   u8         0 = dense, 1 = packed, 2 = quantized
//! B        u64        document count
//! L        u64        dense only: tokens per document
//! cu       u64 × B+1  packed and quantized: token offsets
//! d        u64        embedding width
//! payload             row-major values in the element type
//! scales   f32 × ΣL   quantized only: one scale per token
//! ```

use std::fs;
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::quant::QuantizedMatrix;
use crate::types::{DocSource, ElemType, EmbeddingMatrix};
use crate::varlen::PackedCorpus;

pub const MAGIC: [u8; 4] = *b"MXS1";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    Dense,
    Packed,
    Quantized,
}

impl Layout {
    pub fn tag(self) -> u8 {
        match self {
            Layout::Dense => 0,
            Layout::Packed => 1,
            Layout::Quantized => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Layout::Dense),
            1 => Ok(Layout::Packed),
            2 => Ok(Layout::Quantized),
            tag => Err(Error::BadTag { kind: "layout", tag }),
        }
    }
}

/// Contents of an embedding file.
#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingData {
    /// Equal-length documents.
    Dense { elem: ElemType, docs: Vec<EmbeddingMatrix> },
    Packed { elem: ElemType, corpus: PackedCorpus },
    Quantized(Vec<QuantizedMatrix>),
}

impl EmbeddingData {
    pub fn layout(&self) -> Layout {
        match self {
            EmbeddingData::Dense { .. } => Layout::Dense,
            EmbeddingData::Packed { .. } => Layout::Packed,
            EmbeddingData::Quantized(_) => Layout::Quantized,
        }
    }

    pub fn n_docs(&self) -> usize {
        match self {
            EmbeddingData::Dense { docs, .. } => docs.len(),
            EmbeddingData::Packed { corpus, .. } => corpus.len(),
            EmbeddingData::Quantized(docs) => docs.len(),
        }
    }

    /// Documents as full-precision matrices, dequantizing if needed.
    pub fn to_matrices(&self) -> Vec<EmbeddingMatrix> {
        match self {
            EmbeddingData::Dense { docs, .. } => docs.clone(),
            EmbeddingData::Packed { corpus, .. } => crate::varlen::unpack(corpus),
            EmbeddingData::Quantized(docs) => docs.iter().map(|d| d.dequantize()).collect(),
        }
    }
}

fn put_u64(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u64).to_le_bytes());
}

fn put_values(out: &mut Vec<u8>, elem: ElemType, values: &[f32]) -> Result<()> {
    match elem {
        ElemType::F32 => values.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        ElemType::F16 => values
            .iter()
            .for_each(|&v| out.extend_from_slice(&half::f16::from_f32(v).to_bits().to_le_bytes())),
        ElemType::I8 => {
            return Err(Error::InvalidValue(
                "i8 storage requires the quantized layout".into(),
            ))
        }
    }
    Ok(())
}

/// Serializes `data` to bytes.
pub fn encode(data: &EmbeddingData) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let elem = match data {
        EmbeddingData::Dense { elem, .. } | EmbeddingData::Packed { elem, .. } => *elem,
        EmbeddingData::Quantized(_) => ElemType::I8,
    };
    out.push(elem.tag());
    out.push(data.layout().tag());
    match data {
        EmbeddingData::Dense { elem, docs } => {
            let first = docs.first().ok_or(Error::EmptyBatch)?;
            let (len, dim) = (first.rows(), first.dim());
            for d in docs {
                if d.dim() != dim {
                    return Err(Error::DimMismatch { query: dim, doc: d.dim() });
                }
                if d.rows() != len {
                    return Err(Error::ShapeMismatch(format!(
                        "dense layout needs equal lengths, got {} and {len}",
                        d.rows()
                    )));
                }
            }
            put_u64(&mut out, docs.len());
            put_u64(&mut out, len);
            put_u64(&mut out, dim);
            for d in docs {
                put_values(&mut out, *elem, d.data())?;
            }
        }
        EmbeddingData::Packed { elem, corpus } => {
            put_u64(&mut out, corpus.len());
            corpus.cu_seqlens().iter().for_each(|&c| put_u64(&mut out, c));
            put_u64(&mut out, corpus.dim());
            put_values(&mut out, *elem, corpus.tokens())?;
        }
        EmbeddingData::Quantized(docs) => {
            let dim = docs.first().ok_or(Error::EmptyBatch)?.dim();
            put_u64(&mut out, docs.len());
            let mut cu = 0;
            put_u64(&mut out, cu);
            for d in docs {
                if d.dim() != dim {
                    return Err(Error::DimMismatch { query: dim, doc: d.dim() });
                }
                cu += d.rows();
                put_u64(&mut out, cu);
            }
            put_u64(&mut out, dim);
            for d in docs {
                out.extend(d.values().iter().map(|&v| v as u8));
            }
            for d in docs {
                d.scales().iter().for_each(|s| out.extend_from_slice(&s.to_le_bytes()));
            }
        }
    }
    Ok(out)
}

/// Parsed fixed part of a file header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileHeader {
    pub elem: ElemType,
    pub layout: Layout,
    pub n_docs: usize,
    /// Tokens per document for the dense layout.
    pub doc_len: Option<usize>,
    pub dim: usize,
    pub total_tokens: usize,
    /// Byte offset of the `cu` array, if present.
    pub cu_offset: Option<u64>,
    /// Byte offset of the first payload value.
    pub payload_offset: u64,
}

impl FileHeader {
    /// Bytes expected after `payload_offset`.
    pub fn payload_bytes(&self) -> u64 {
        let values = (self.total_tokens * self.dim * self.elem.storage_bytes()) as u64;
        match self.layout {
            Layout::Quantized => values + 4 * self.total_tokens as u64,
            _ => values,
        }
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::TruncatedPayload {
                expected: (self.pos as u64).saturating_add(n as u64),
                found: self.buf.len() as u64,
            }),
        }
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::InvalidValue(format!("size {v} does not fit in memory")))
    }
}

fn parse_prefix(c: &mut Cursor<'_>) -> Result<(ElemType, Layout, usize)> {
    let magic: [u8; 4] = c.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = u16::from_le_bytes(c.take(2)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    let elem = ElemType::from_tag(c.take(1)?[0])?;
    let layout = Layout::from_tag(c.take(1)?[0])?;
    if (layout == Layout::Quantized) != (elem == ElemType::I8) {
        return Err(Error::BadTag { kind: "element", tag: elem.tag() });
    }
    Ok((elem, layout, c.u64()?))
}

const PREFIX_BYTES: u64 = 16;

fn cu_bytes(n_docs: usize) -> Result<u64> {
    (n_docs as u64)
        .checked_add(1)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::InvalidValue("document count overflows".into()))
}

/// Reads `L` (or the final offset) and `d`, which follow the prefix for
/// dense files and the offset array otherwise.
fn finish_header(elem: ElemType, layout: Layout, n_docs: usize, len_or_total: usize, dim: usize) -> Result<FileHeader> {
    if dim == 0 {
        return Err(Error::ZeroDim);
    }
    Ok(match layout {
        Layout::Dense => FileHeader {
            elem,
            layout,
            n_docs,
            doc_len: Some(len_or_total),
            dim,
            total_tokens: len_or_total
                .checked_mul(n_docs)
                .ok_or_else(|| Error::InvalidValue("token count overflows".into()))?,
            cu_offset: None,
            payload_offset: PREFIX_BYTES + 16,
        },
        _ => FileHeader {
            elem,
            layout,
            n_docs,
            doc_len: None,
            dim,
            total_tokens: len_or_total,
            cu_offset: Some(PREFIX_BYTES),
            payload_offset: PREFIX_BYTES + cu_bytes(n_docs)? + 8,
        },
    })
}

/// Parses the header from the start of `buf`. For the packed and quantized
/// layouts `buf` must extend through the `cu` array.
pub fn parse_header(buf: &[u8]) -> Result<FileHeader> {
    let mut c = Cursor { buf, pos: 0 };
    let (elem, layout, n_docs) = parse_prefix(&mut c)?;
    if layout != Layout::Dense {
        c.take(cu_bytes(n_docs)? as usize - 8)?;
    }
    let len_or_total = c.u64()?;
    let dim = c.u64()?;
    finish_header(elem, layout, n_docs, len_or_total, dim)
}

/// Reads a header without loading the offset array.
pub fn read_header<R: Read + Seek>(r: &mut R) -> Result<FileHeader> {
    let file_len = r.seek(SeekFrom::End(0))?;
    let short = |want: u64| Error::TruncatedPayload { expected: want, found: file_len };
    r.seek(SeekFrom::Start(0))?;
    let mut prefix = [0u8; PREFIX_BYTES as usize];
    r.read_exact(&mut prefix).map_err(|_| short(PREFIX_BYTES))?;
    let (elem, layout, n_docs) = parse_prefix(&mut Cursor { buf: &prefix, pos: 0 })?;
    let tail_at = match layout {
        Layout::Dense => PREFIX_BYTES,
        _ => PREFIX_BYTES + cu_bytes(n_docs)? - 8,
    };
    r.seek(SeekFrom::Start(tail_at))?;
    let mut tail = [0u8; 16];
    r.read_exact(&mut tail).map_err(|_| short(tail_at + 16))?;
    let mut c = Cursor { buf: &tail, pos: 0 };
    let (len_or_total, dim) = (c.u64()?, c.u64()?);
    finish_header(elem, layout, n_docs, len_or_total, dim)
}

fn read_cu(buf: &[u8], h: &FileHeader) -> Result<Vec<usize>> {
    let off = h.cu_offset.expect("layout has offsets") as usize;
    let mut c = Cursor { buf, pos: off };
    (0..=h.n_docs).map(|_| c.u64()).collect()
}

fn decode_values(bytes: &[u8], elem: ElemType) -> Vec<f32> {
    match elem {
        ElemType::F32 => bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect(),
        ElemType::F16 => bytes
            .chunks_exact(2)
            .map(|b| half::f16::from_bits(u16::from_le_bytes(b.try_into().unwrap())).to_f32())
            .collect(),
        ElemType::I8 => bytes.iter().map(|&b| b as i8 as f32).collect(),
    }
}

fn tag_matrix(m: EmbeddingMatrix, elem: ElemType) -> Result<EmbeddingMatrix> {
    match elem {
        ElemType::F16 => Ok(m.to_f16_precision()),
        _ => Ok(m),
    }
}

/// Parses a complete file image.
pub fn decode(buf: &[u8]) -> Result<EmbeddingData> {
    let h = parse_header(buf)?;
    let expected = h.payload_offset + h.payload_bytes();
    if (buf.len() as u64) < expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: buf.len() as u64,
        });
    }
    if buf.len() as u64 > expected {
        return Err(Error::InvalidValue(format!(
            "{} trailing bytes after payload",
            buf.len() as u64 - expected
        )));
    }
    let payload = &buf[h.payload_offset as usize..];
    let dim = h.dim;
    match h.layout {
        Layout::Dense => {
            let len = h.doc_len.unwrap();
            if h.n_docs == 0 {
                return Err(Error::EmptyBatch);
            }
            if len == 0 {
                return Err(Error::EmptyDocument(0));
            }
            let per_doc = len * dim * h.elem.storage_bytes();
            let docs = payload
                .chunks_exact(per_doc)
                .map(|b| tag_matrix(EmbeddingMatrix::new(len, dim, decode_values(b, h.elem))?, h.elem))
                .collect::<Result<_>>()?;
            Ok(EmbeddingData::Dense { elem: h.elem, docs })
        }
        Layout::Packed => {
            let cu = read_cu(buf, &h)?;
            let corpus = PackedCorpus::from_parts(decode_values(payload, h.elem), cu, dim)?;
            Ok(EmbeddingData::Packed { elem: h.elem, corpus })
        }
        Layout::Quantized => {
            let cu = read_cu(buf, &h)?;
            if cu.first() != Some(&0) || cu.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::ShapeMismatch("offsets must start at 0 and not decrease".into()));
            }
            let nvals = h.total_tokens * dim;
            let (vals, scales) = payload.split_at(nvals);
            let scales: Vec<f32> = decode_values(scales, ElemType::F32);
            cu.windows(2)
                .map(|w| {
                    QuantizedMatrix::new(
                        w[1] - w[0],
                        dim,
                        vals[w[0] * dim..w[1] * dim].iter().map(|&b| b as i8).collect(),
                        scales[w[0]..w[1]].to_vec(),
                    )
                })
                .collect::<Result<_>>()
                .map(EmbeddingData::Quantized)
        }
    }
}

pub fn write_embeddings(path: impl AsRef<Path>, data: &EmbeddingData) -> Result<()> {
    let bytes = encode(data)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingData> {
    decode(&fs::read(path)?)
}

/// Writes a query matrix as a one-document dense file.
pub fn write_matrix(path: impl AsRef<Path>, m: &EmbeddingMatrix, elem: ElemType) -> Result<()> {
    write_embeddings(path, &EmbeddingData::Dense { elem, docs: vec![m.clone()] })
}

/// Reads a file that must hold exactly one document.
pub fn read_matrix(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let data = read_embeddings(path)?;
    let mut docs = data.to_matrices();
    if docs.len() != 1 {
        return Err(Error::ShapeMismatch(format!("expected one matrix, found {}", docs.len())));
    }
    Ok(docs.remove(0))
}

/// Bytes the file image of `docs` occupies in the packed layout.
pub fn packed_file_bytes<D: DocSource + ?Sized>(docs: &D, elem: ElemType) -> u64 {
    let tokens: usize = (0..docs.n_docs()).map(|b| docs.stored_len(b)).sum();
    (8 + 8 + 8 * (docs.n_docs() + 1) + 8 + tokens * docs.dim() * elem.storage_bytes()) as u64
}
