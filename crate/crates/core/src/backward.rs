//! Exact MaxSim backward from the saved forward argmax.
//!
//! The forward's argmax maps every source `(q, b, s)` to one destination
//! document row. `dQ` is a gather along that map. `dD` needs the inverse
//! map, built here as a CSR by counting sort: a histogram of destinations,
//! its prefix sum as the row pointer, and sources placed into their buckets
//! in ascending order. Each destination row is then reduced and written by
//! exactly one worker.
//!
//! A scatter path (sources partitioned into contiguous ranges, one private
//! accumulator per range, merged at the end) is kept for low-contention
//! maps, where building the CSR costs more than it saves.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reference::check_queries;
use crate::types::{ArgmaxMap, DocSource, EmbeddingMatrix, Gradients, ScoreMatrix};

/// Destination-major inverse of an [`ArgmaxMap`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsrInverse {
    n_queries: usize,
    n_docs: usize,
    q_len: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
}

impl CsrInverse {
    pub fn n_dest(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn n_sources(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[u32] {
        &self.col_idx
    }

    /// Flattened sources that selected destination `r`, ascending.
    pub fn bucket(&self, r: usize) -> &[u32] {
        &self.col_idx[self.row_ptr[r]..self.row_ptr[r + 1]]
    }

    pub fn max_load(&self) -> usize {
        self.row_ptr.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0)
    }

    pub fn bytes(&self) -> usize {
        self.row_ptr.len() * std::mem::size_of::<usize>() + self.col_idx.len() * std::mem::size_of::<u32>()
    }

    fn decode(&self, src: usize) -> (usize, usize, usize) {
        let s = src % self.q_len;
        let pair = src / self.q_len;
        (pair / self.n_docs, pair % self.n_docs, s)
    }
}

/// Destination histogram of the argmax map.
fn bincount(argmax: &ArgmaxMap) -> Result<Vec<usize>> {
    let n_dest = argmax.n_dest();
    let mut counts = vec![0usize; n_dest];
    let offsets = argmax.dest_offsets();
    for (p, &idx) in argmax.indices().iter().enumerate() {
        let b = (p / argmax.q_len()) % argmax.n_docs();
        if idx as usize >= argmax.doc_len(b) {
            return Err(Error::IndexOutOfRange {
                index: idx as usize,
                bound: argmax.doc_len(b),
            });
        }
        counts[offsets[b] + idx as usize] += 1;
    }
    Ok(counts)
}

pub fn build_inverse_csr(argmax: &ArgmaxMap) -> Result<CsrInverse> {
    if argmax.n_sources() > u32::MAX as usize {
        return Err(Error::IndexOutOfRange {
            index: argmax.n_sources(),
            bound: u32::MAX as usize,
        });
    }
    let counts = bincount(argmax)?;
    let mut row_ptr = Vec::with_capacity(counts.len() + 1);
    row_ptr.push(0);
    let mut total = 0;
    for c in &counts {
        total += c;
        row_ptr.push(total);
    }
    drop(counts);
    let mut cursor = row_ptr[..row_ptr.len() - 1].to_vec();
    let mut col_idx = vec![0u32; argmax.n_sources()];
    for src in 0..argmax.n_sources() {
        let r = argmax.destination(src);
        col_idx[cursor[r]] = src as u32;
        cursor[r] += 1;
    }
    Ok(CsrInverse {
        n_queries: argmax.n_queries(),
        n_docs: argmax.n_docs(),
        q_len: argmax.q_len(),
        row_ptr,
        col_idx,
    })
}

fn check_upstream(upstream: &ScoreMatrix, n_queries: usize, n_docs: usize) -> Result<()> {
    if upstream.n_queries() != n_queries || upstream.n_docs() != n_docs {
        return Err(Error::ShapeMismatch(format!(
            "upstream is {}x{}, expected {n_queries}x{n_docs}",
            upstream.n_queries(),
            upstream.n_docs()
        )));
    }
    Ok(())
}

/// `dD` by destination-owned reduction over the CSR buckets.
pub fn grad_docs_csr(csr: &CsrInverse, upstream: &ScoreMatrix, qs: &[EmbeddingMatrix]) -> Result<Vec<f32>> {
    grad_docs_csr_observed(csr, upstream, qs, |_| {})
}

/// [`grad_docs_csr`] with a hook called once per destination row store.
pub(crate) fn grad_docs_csr_observed<F>(
    csr: &CsrInverse,
    upstream: &ScoreMatrix,
    qs: &[EmbeddingMatrix],
    on_store: F,
) -> Result<Vec<f32>>
where
    F: Fn(usize) + Sync,
{
    let sources = csr.n_queries * csr.n_docs * csr.q_len;
    if csr.n_sources() != sources || qs.len() != csr.n_queries {
        return Err(Error::StaleCsr(format!(
            "CSR holds {} sources for {} queries; inputs imply {} queries",
            csr.n_sources(),
            csr.n_queries,
            qs.len()
        )));
    }
    if upstream.n_queries() != csr.n_queries || upstream.n_docs() != csr.n_docs {
        return Err(Error::StaleCsr(format!(
            "upstream is {}x{}, CSR was built for {}x{}",
            upstream.n_queries(),
            upstream.n_docs(),
            csr.n_queries,
            csr.n_docs
        )));
    }
    let dim = match qs.first() {
        Some(q) => q.dim(),
        None => return Ok(Vec::new()),
    };
    let q_len = check_queries(qs, dim)?;
    if q_len != csr.q_len {
        return Err(Error::StaleCsr(format!("query length {q_len}, CSR built for {}", csr.q_len)));
    }
    let mut dd = vec![0f32; csr.n_dest() * dim];
    dd.par_chunks_mut(dim).enumerate().for_each_init(|| vec![0f32; dim], |acc, (r, out)| {
        acc.fill(0.0);
        for &src in csr.bucket(r) {
            let (q, b, s) = csr.decode(src as usize);
            let g = upstream.get(q, b);
            for (a, &x) in acc.iter_mut().zip(qs[q].row(s)) {
                *a += g * x;
            }
        }
        out.copy_from_slice(acc);
        on_store(r);
    });
    Ok(dd)
}

fn check_argmax_queries(argmax: &ArgmaxMap, upstream: &ScoreMatrix, qs: &[EmbeddingMatrix], dim: usize) -> Result<()> {
    check_upstream(upstream, argmax.n_queries(), argmax.n_docs())?;
    if qs.len() != argmax.n_queries() {
        return Err(Error::ShapeMismatch(format!(
            "{} queries, argmax built for {}",
            qs.len(),
            argmax.n_queries()
        )));
    }
    let q_len = check_queries(qs, dim)?;
    if !qs.is_empty() && q_len != argmax.q_len() {
        return Err(Error::ShapeMismatch(format!(
            "query length {q_len}, argmax built for {}",
            argmax.q_len()
        )));
    }
    Ok(())
}

/// `dQ[q, s] = Σ_b g[q, b] · D[b, argmax(q, b, s)]`, summed over `b` in order.
pub fn grad_query<D: DocSource + ?Sized>(argmax: &ArgmaxMap, upstream: &ScoreMatrix, docs: &D) -> Result<Vec<f32>> {
    if !argmax.matches_docs(docs) {
        return Err(Error::ShapeMismatch("argmax layout does not match the documents".into()));
    }
    check_upstream(upstream, argmax.n_queries(), argmax.n_docs())?;
    let dim = docs.dim();
    let q_len = argmax.q_len();
    let n_b = argmax.n_docs();
    let mut dq = vec![0f32; argmax.n_queries() * q_len * dim];
    if q_len == 0 {
        return Ok(dq);
    }
    dq.par_chunks_mut(dim).enumerate().for_each(|(row, out)| {
        let (q, s) = (row / q_len, row % q_len);
        for b in 0..n_b {
            let g = upstream.get(q, b);
            let t = argmax.row(q, b)[s] as usize;
            let src = &docs.doc_data(b)[t * dim..(t + 1) * dim];
            for (o, &x) in out.iter_mut().zip(src) {
                *o += g * x;
            }
        }
    });
    Ok(dq)
}

/// `dD` by scatter-accumulate over sources, using the current pool size as
/// the partition count.
pub fn grad_docs_scatter(argmax: &ArgmaxMap, upstream: &ScoreMatrix, qs: &[EmbeddingMatrix]) -> Result<Vec<f32>> {
    grad_docs_scatter_partitioned(argmax, upstream, qs, rayon::current_num_threads())
}

/// Sources are split into `partitions` contiguous ranges; each range
/// accumulates into a private buffer and the buffers are summed in range
/// order. One partition reproduces the CSR path bit for bit.
pub fn grad_docs_scatter_partitioned(
    argmax: &ArgmaxMap,
    upstream: &ScoreMatrix,
    qs: &[EmbeddingMatrix],
    partitions: usize,
) -> Result<Vec<f32>> {
    let dim = match qs.first() {
        Some(q) => q.dim(),
        None => return Ok(Vec::new()),
    };
    check_argmax_queries(argmax, upstream, qs, dim)?;
    let n_src = argmax.n_sources();
    let n_dest = argmax.n_dest();
    let parts = partitions.clamp(1, n_src.max(1));
    let per = n_src.div_ceil(parts).max(1);
    let partials: Vec<Vec<f32>> = (0..parts)
        .into_par_iter()
        .map(|p| {
            let mut buf = vec![0f32; n_dest * dim];
            for src in p * per..((p + 1) * per).min(n_src) {
                let (q, b, s) = argmax.decode_source(src);
                let g = upstream.get(q, b);
                let r = argmax.destination(src);
                for (o, &x) in buf[r * dim..(r + 1) * dim].iter_mut().zip(qs[q].row(s)) {
                    *o += g * x;
                }
            }
            buf
        })
        .collect();
    let mut out = vec![0f32; n_dest * dim];
    for part in &partials {
        for (o, &x) in out.iter_mut().zip(part) {
            *o += x;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackwardPath {
    Csr,
    Scatter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackwardConfig {
    /// CSR is used when the busiest destination has more sources than this.
    pub tau: usize,
}

impl BackwardConfig {
    pub const DEFAULT_TAU: usize = 8;
}

impl Default for BackwardConfig {
    fn default() -> Self {
        Self { tau: Self::DEFAULT_TAU }
    }
}

/// Predicted path for an argmax map.
pub fn choose_path(argmax: &ArgmaxMap, config: &BackwardConfig) -> Result<BackwardPath> {
    let load = bincount(argmax)?.into_iter().max().unwrap_or(0);
    Ok(if load > config.tau {
        BackwardPath::Csr
    } else {
        BackwardPath::Scatter
    })
}

/// Both gradients, with `dD` computed by whichever path the contention
/// estimate selects.
pub fn backward_dispatch<D: DocSource + ?Sized>(
    argmax: &ArgmaxMap,
    upstream: &ScoreMatrix,
    qs: &[EmbeddingMatrix],
    docs: &D,
    config: &BackwardConfig,
) -> Result<(Gradients, BackwardPath)> {
    check_argmax_queries(argmax, upstream, qs, docs.dim())?;
    let path = choose_path(argmax, config)?;
    let dq = grad_query(argmax, upstream, docs)?;
    let dd = match path {
        BackwardPath::Csr => grad_docs_csr(&build_inverse_csr(argmax)?, upstream, qs)?,
        BackwardPath::Scatter => grad_docs_scatter(argmax, upstream, qs)?,
    };
    Ok((Gradients { dq, dd, dim: docs.dim() }, path))
}

/// Both gradients through the CSR path.
pub fn fused_backward<D: DocSource + ?Sized>(
    argmax: &ArgmaxMap,
    upstream: &ScoreMatrix,
    qs: &[EmbeddingMatrix],
    docs: &D,
) -> Result<Gradients> {
    check_argmax_queries(argmax, upstream, qs, docs.dim())?;
    let dq = grad_query(argmax, upstream, docs)?;
    let csr = build_inverse_csr(argmax)?;
    let dd = grad_docs_csr(&csr, upstream, qs)?;
    Ok(Gradients { dq, dd, dim: docs.dim() })
}
