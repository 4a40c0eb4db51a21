//! Dense, materialized MaxSim: the ground truth every fused path is checked
//! against.
//!
//! The similarity tensor `S[b, i, j] = <Q_i, D_{b,j}>` is built with a plain
//! triple loop, reduced with a masked row-max and a left-to-right row sum.
//! Nothing here is tiled or optimized. All routines are generic over the
//! accumulation type so the same code serves as a 32-bit and a 64-bit oracle.

use std::fmt::Debug;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::types::{ArgmaxMap, DocSource, EmbeddingMatrix, Gradients};

/// Scalar type an oracle accumulates in.
pub trait Real: Float + Send + Sync + Debug + Default + 'static {
    fn from_f32(x: f32) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f32(x: f32) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f32(x: f32) -> Self {
        x as f64
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// One document for the raw-slice oracle: all stored rows plus the valid prefix.
#[derive(Debug, Clone, Copy)]
pub struct DocRef<'a, T> {
    pub data: &'a [T],
    pub valid: usize,
}

/// Materialized similarities of one query against `n_docs` documents.
///
/// Shape `(n_docs, q_len, doc_len)` where `doc_len` is the longest stored
/// document; slots past a document's stored rows hold `-inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSimTensor<T> {
    n_docs: usize,
    q_len: usize,
    doc_len: usize,
    values: Vec<T>,
}

impl<T: Real> DenseSimTensor<T> {
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n_docs, self.q_len, self.doc_len)
    }

    pub fn get(&self, b: usize, i: usize, j: usize) -> T {
        self.values[(b * self.q_len + i) * self.doc_len + j]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn bytes(&self) -> usize {
        self.values.len() * std::mem::size_of::<T>()
    }

    /// Masked row-max then row-sum. Positions `j >= valid[b]` never win; equal
    /// maxima keep the lowest index.
    pub fn reduce(&self, valid: &[usize]) -> (Vec<T>, Vec<u32>) {
        let mut scores = Vec::with_capacity(self.n_docs);
        let mut argmax = Vec::with_capacity(self.n_docs * self.q_len);
        for (b, &v) in valid.iter().enumerate().take(self.n_docs) {
            let mut score = T::zero();
            for i in 0..self.q_len {
                let mut best = T::neg_infinity();
                let mut arg = 0u32;
                for j in 0..v {
                    let s = self.get(b, i, j);
                    if s > best {
                        best = s;
                        arg = j as u32;
                    }
                }
                score = score + best;
                argmax.push(arg);
            }
            scores.push(score);
        }
        (scores, argmax)
    }
}

fn dot_t<T: Real>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s = s + x * y;
    }
    s
}

/// Builds `S` for one query (`q_len` rows of width `dim`).
pub fn similarity_tensor_raw<T: Real>(
    q: &[T],
    q_len: usize,
    docs: &[DocRef<'_, T>],
    dim: usize,
) -> DenseSimTensor<T> {
    let doc_len = docs.iter().map(|d| d.data.len() / dim).max().unwrap_or(0);
    let mut values = vec![T::neg_infinity(); docs.len() * q_len * doc_len];
    for (b, d) in docs.iter().enumerate() {
        let stored = d.data.len() / dim;
        for i in 0..q_len {
            let qi = &q[i * dim..(i + 1) * dim];
            for j in 0..stored {
                values[(b * q_len + i) * doc_len + j] = dot_t(qi, &d.data[j * dim..(j + 1) * dim]);
            }
        }
    }
    DenseSimTensor {
        n_docs: docs.len(),
        q_len,
        doc_len,
        values,
    }
}

/// Scores every query against every document on raw slices.
///
/// Returns `[n_queries × n_docs]` scores and the flattened argmax indices.
/// One similarity tensor is alive at a time.
pub fn dense_scores_raw<T: Real>(
    queries: &[&[T]],
    q_len: usize,
    docs: &[DocRef<'_, T>],
    dim: usize,
) -> Result<(Vec<T>, Vec<u32>)> {
    if let Some(b) = docs.iter().position(|d| d.valid == 0) {
        return Err(Error::EmptyDocument(b));
    }
    let valid: Vec<usize> = docs.iter().map(|d| d.valid).collect();
    let mut scores = Vec::with_capacity(queries.len() * docs.len());
    let mut argmax = Vec::with_capacity(queries.len() * docs.len() * q_len);
    for q in queries {
        let s = similarity_tensor_raw(q, q_len, docs, dim);
        let (sc, am) = s.reduce(&valid);
        scores.extend(sc);
        argmax.extend(am);
    }
    Ok((scores, argmax))
}

/// Widened copies of the inputs of a typed call.
struct Widened<T> {
    queries: Vec<Vec<T>>,
    docs: Vec<(Vec<T>, usize)>,
    q_len: usize,
    dim: usize,
}

impl<T: Real> Widened<T> {
    fn doc_refs(&self) -> Vec<DocRef<'_, T>> {
        self.docs
            .iter()
            .map(|(data, valid)| DocRef { data, valid: *valid })
            .collect()
    }

    fn query_refs(&self) -> Vec<&[T]> {
        self.queries.iter().map(|q| q.as_slice()).collect()
    }
}

fn widen<T: Real, D: DocSource + ?Sized>(qs: &[EmbeddingMatrix], docs: &D) -> Result<Widened<T>> {
    let dim = docs.dim();
    let q_len = check_queries(qs, dim)?;
    let w = |xs: &[f32]| xs.iter().map(|&x| T::from_f32(x)).collect::<Vec<T>>();
    Ok(Widened {
        queries: qs.iter().map(|q| w(q.data())).collect(),
        docs: (0..docs.n_docs())
            .map(|b| (w(docs.doc_data(b)), docs.valid_len(b)))
            .collect(),
        q_len,
        dim,
    })
}

/// All queries must share the document width and one length.
pub(crate) fn check_queries(qs: &[EmbeddingMatrix], dim: usize) -> Result<usize> {
    let q_len = qs.first().map_or(0, |q| q.rows());
    for q in qs {
        if q.dim() != dim {
            return Err(Error::DimMismatch {
                query: q.dim(),
                doc: dim,
            });
        }
        if q.rows() != q_len {
            return Err(Error::ShapeMismatch(format!(
                "queries must share one length: {} vs {q_len}",
                q.rows()
            )));
        }
    }
    Ok(q_len)
}

/// Materializes `S` for a single query and reduces it.
pub fn similarity_tensor<T: Real, D: DocSource + ?Sized>(
    q: &EmbeddingMatrix,
    docs: &D,
) -> Result<DenseSimTensor<T>> {
    let w = widen::<T, D>(std::slice::from_ref(q), docs)?;
    Ok(similarity_tensor_raw(&w.queries[0], w.q_len, &w.doc_refs(), w.dim))
}

/// Reranking-shape oracle: one query against every document.
pub fn dense_score<T: Real, D: DocSource + ?Sized>(
    q: &EmbeddingMatrix,
    docs: &D,
) -> Result<(Vec<T>, ArgmaxMap)> {
    dense_score_batch(std::slice::from_ref(q), docs)
}

/// All-pairs oracle. Scores are `[n_queries × n_docs]` row-major.
pub fn dense_score_batch<T: Real, D: DocSource + ?Sized>(
    qs: &[EmbeddingMatrix],
    docs: &D,
) -> Result<(Vec<T>, ArgmaxMap)> {
    let w = widen::<T, D>(qs, docs)?;
    let (scores, idx) = dense_scores_raw(&w.query_refs(), w.q_len, &w.doc_refs(), w.dim)?;
    let argmax = ArgmaxMap::for_docs(qs.len(), w.q_len, docs, idx)?;
    Ok((scores, argmax))
}

/// Forward state kept the way a tape-based autograd keeps it: one similarity
/// tensor per query, alive until the backward.
pub struct DenseTape<T> {
    pub sims: Vec<DenseSimTensor<T>>,
    pub scores: Vec<T>,
    pub argmax: ArgmaxMap,
}

impl<T: Real> DenseTape<T> {
    pub fn retained_bytes(&self) -> usize {
        self.sims.iter().map(|s| s.bytes()).sum()
    }
}

pub fn dense_forward_retained<T: Real, D: DocSource + ?Sized>(
    qs: &[EmbeddingMatrix],
    docs: &D,
) -> Result<DenseTape<T>> {
    let w = widen::<T, D>(qs, docs)?;
    let refs = w.doc_refs();
    if let Some(b) = refs.iter().position(|d| d.valid == 0) {
        return Err(Error::EmptyDocument(b));
    }
    let valid: Vec<usize> = refs.iter().map(|d| d.valid).collect();
    let mut sims = Vec::with_capacity(qs.len());
    let mut scores = Vec::new();
    let mut idx = Vec::new();
    for q in &w.queries {
        let s = similarity_tensor_raw(q, w.q_len, &refs, w.dim);
        let (sc, am) = s.reduce(&valid);
        scores.extend(sc);
        idx.extend(am);
        sims.push(s);
    }
    let argmax = ArgmaxMap::for_docs(qs.len(), w.q_len, docs, idx)?;
    Ok(DenseTape {
        sims,
        scores,
        argmax,
    })
}

/// Gradients of `Σ_{q,b} upstream[q,b] · score(q,b)` through a fixed argmax.
///
/// `dQ` is a gather (each query token reads one row per document, summed over
/// documents in order); `dD` is a sequential scatter over sources in flattened
/// `(q, b, s)` order.
pub fn dense_backward<T: Real, D: DocSource + ?Sized>(
    qs: &[EmbeddingMatrix],
    docs: &D,
    upstream: &[T],
    argmax: &ArgmaxMap,
) -> Result<Gradients<T>> {
    let w = widen::<T, D>(qs, docs)?;
    if !argmax.matches_docs(docs) || argmax.n_queries() != qs.len() || argmax.q_len() != w.q_len {
        return Err(Error::ShapeMismatch(
            "argmax was not produced for these inputs".into(),
        ));
    }
    let offsets: Vec<usize> = (0..docs.n_docs()).map(|b| docs.dest_offset(b)).collect();
    dense_backward_raw(&w.query_refs(), w.q_len, &w.doc_refs(), &offsets, docs.n_dest(), w.dim, upstream, argmax.indices())
}

/// Raw-slice form of [`dense_backward`]. `dest_offsets[b]` is the first
/// destination row of document `b`; `n_dest` rows are produced.
#[allow(clippy::too_many_arguments)]
pub fn dense_backward_raw<T: Real>(
    queries: &[&[T]],
    q_len: usize,
    docs: &[DocRef<'_, T>],
    dest_offsets: &[usize],
    n_dest: usize,
    dim: usize,
    upstream: &[T],
    argmax: &[u32],
) -> Result<Gradients<T>> {
    let n_q = queries.len();
    let n_b = docs.len();
    if upstream.len() != n_q * n_b {
        return Err(Error::ShapeMismatch(format!(
            "upstream has {} entries, expected {}",
            upstream.len(),
            n_q * n_b
        )));
    }
    if argmax.len() != n_q * n_b * q_len {
        return Err(Error::ShapeMismatch("argmax length".into()));
    }
    let mut dq = vec![T::zero(); n_q * q_len * dim];
    for q in 0..n_q {
        for s in 0..q_len {
            let out = &mut dq[(q * q_len + s) * dim..(q * q_len + s + 1) * dim];
            for b in 0..n_b {
                let g = upstream[q * n_b + b];
                let t = argmax[(q * n_b + b) * q_len + s] as usize;
                let row = &docs[b].data[t * dim..(t + 1) * dim];
                for (o, &x) in out.iter_mut().zip(row) {
                    *o = *o + g * x;
                }
            }
        }
    }
    let mut dd = vec![T::zero(); n_dest * dim];
    for q in 0..n_q {
        for b in 0..n_b {
            let g = upstream[q * n_b + b];
            for s in 0..q_len {
                let t = argmax[(q * n_b + b) * q_len + s] as usize;
                let r = dest_offsets[b] + t;
                let src = &queries[q][s * dim..(s + 1) * dim];
                for (o, &x) in dd[r * dim..(r + 1) * dim].iter_mut().zip(src) {
                    *o = *o + g * x;
                }
            }
        }
    }
    Ok(Gradients { dq, dd, dim })
}

/// Materialized Chamfer distance: the full `[N × M]` squared-distance
/// matrix, row and column minima with lowest-index ties, sequential sums.
pub struct DenseChamfer<T> {
    pub cd: T,
    pub argmin_ps: Vec<u32>,
    pub argmin_sp: Vec<u32>,
    pub matrix_bytes: usize,
}

fn dot_widened<T: Real>(a: &[f32], b: &[f32]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc = acc + T::from_f32(x) * T::from_f32(y);
    }
    acc
}

pub fn dense_chamfer<T: Real>(p: &[f32], s: &[f32], dim: usize) -> Result<DenseChamfer<T>> {
    if dim == 0 {
        return Err(Error::ZeroDim);
    }
    let (n, m) = (p.len() / dim, s.len() / dim);
    if n == 0 || m == 0 {
        return Err(Error::EmptyBatch);
    }
    let pt = |i: usize| &p[i * dim..(i + 1) * dim];
    let st = |j: usize| &s[j * dim..(j + 1) * dim];
    let np: Vec<T> = (0..n).map(|i| dot_widened(pt(i), pt(i))).collect();
    let ns: Vec<T> = (0..m).map(|j| dot_widened(st(j), st(j))).collect();
    let two = T::one() + T::one();
    let mut dist = vec![T::zero(); n * m];
    for i in 0..n {
        for j in 0..m {
            dist[i * m + j] = (np[i] + ns[j]) - two * dot_widened::<T>(pt(i), st(j));
        }
    }
    let mut argmin_ps = vec![0u32; n];
    let mut sum_ps = T::zero();
    for i in 0..n {
        let mut best = T::infinity();
        for j in 0..m {
            if dist[i * m + j] < best {
                best = dist[i * m + j];
                argmin_ps[i] = j as u32;
            }
        }
        sum_ps = sum_ps + best;
    }
    let mut argmin_sp = vec![0u32; m];
    let mut sum_sp = T::zero();
    for j in 0..m {
        let mut best = T::infinity();
        for i in 0..n {
            if dist[i * m + j] < best {
                best = dist[i * m + j];
                argmin_sp[j] = i as u32;
            }
        }
        sum_sp = sum_sp + best;
    }
    let cd = sum_ps / T::from_f32(n as f32) + sum_sp / T::from_f32(m as f32);
    Ok(DenseChamfer {
        cd,
        argmin_ps,
        argmin_sp,
        matrix_bytes: dist.len() * std::mem::size_of::<T>(),
    })
}

/// Chamfer gradients by a sequential scatter over both directions.
pub fn dense_chamfer_backward<T: Real>(
    p: &[f32],
    s: &[f32],
    dim: usize,
    argmin_ps: &[u32],
    argmin_sp: &[u32],
    upstream: T,
) -> (Vec<T>, Vec<T>) {
    let (n, m) = (p.len() / dim, s.len() / dim);
    let two = T::one() + T::one();
    let cp = two / T::from_f32(n as f32) * upstream;
    let cs = two / T::from_f32(m as f32) * upstream;
    let mut dp = vec![T::zero(); n * dim];
    let mut ds = vec![T::zero(); m * dim];
    for i in 0..n {
        let j = argmin_ps[i] as usize;
        for k in 0..dim {
            let diff = T::from_f32(p[i * dim + k]) - T::from_f32(s[j * dim + k]);
            dp[i * dim + k] = dp[i * dim + k] + cp * diff;
            ds[j * dim + k] = ds[j * dim + k] - cp * diff;
        }
    }
    for j in 0..m {
        let i = argmin_sp[j] as usize;
        for k in 0..dim {
            let diff = T::from_f32(s[j * dim + k]) - T::from_f32(p[i * dim + k]);
            ds[j * dim + k] = ds[j * dim + k] + cs * diff;
            dp[i * dim + k] = dp[i * dim + k] - cs * diff;
        }
    }
    (dp, ds)
}

/// Central-difference gradient of `f` at `point`, one coordinate at a time.
pub fn finite_diff_grad<F>(f: F, point: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidStep(eps));
    }
    let mut x = point.to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for k in 0..point.len() {
        let orig = x[k];
        x[k] = orig + eps;
        let hi = f(&x);
        x[k] = orig - eps;
        let lo = f(&x);
        x[k] = orig;
        grad.push((hi - lo) / (2.0 * eps));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::DocBatch;

    fn em(dim: usize, rows: &[&[f32]]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(dim, rows).unwrap()
    }

    #[test]
    fn hand_evaluated_pair() {
        let q = em(2, &[&[1.0, 0.0], &[0.0, 1.0]]);
        let d = em(2, &[&[0.5, 0.0], &[0.0, 2.0]]);
        let docs = DocBatch::full(vec![d.clone()]).unwrap();
        let (s, a) = dense_score::<f32, _>(&q, &docs).unwrap();
        assert_eq!(s, vec![2.5]);
        assert_eq!(a.row(0, 0), &[0, 1]);

        let masked = DocBatch::new(vec![d], vec![1]).unwrap();
        let (s, a) = dense_score::<f32, _>(&q, &masked).unwrap();
        assert_eq!(s, vec![0.5]);
        assert_eq!(a.row(0, 0), &[0, 0]);
    }

    #[test]
    fn tie_resolves_to_lowest_index() {
        let q = em(1, &[&[1.0]]);
        let d = em(1, &[&[0.5], &[2.0], &[2.0], &[1.0]]);
        let docs = DocBatch::full(vec![d]).unwrap();
        let (s, a) = dense_score::<f64, _>(&q, &docs).unwrap();
        assert_eq!(s, vec![2.0]);
        assert_eq!(a.row(0, 0), &[1]);
        // The subgradient at the tie is one-hot on the lowest index.
        let g = dense_backward(&[q], &docs, &[1.0f64], &a).unwrap();
        assert_eq!(g.dd, vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_hand_case() {
        let q = em(2, &[&[1.0, 0.0], &[0.0, 1.0], &[0.5, 0.5]]);
        let d = em(2, &[&[3.0, 0.0], &[0.0, 3.0]]);
        let docs = DocBatch::full(vec![d]).unwrap();
        let (_, a) = dense_score::<f32, _>(&q, &docs).unwrap();
        assert_eq!(a.row(0, 0), &[0, 1, 0]);
        let g = dense_backward(std::slice::from_ref(&q), &docs, &[1.0f32], &a).unwrap();
        assert_eq!(g.dq, vec![3.0, 0.0, 0.0, 3.0, 3.0, 0.0]);
        assert_eq!(g.dd, vec![1.5, 0.5, 0.0, 1.0]);
        let z = dense_backward(&[q], &docs, &[0.0f32], &a).unwrap();
        assert!(z.dq.iter().chain(&z.dd).all(|&x| x == 0.0));
    }

    #[test]
    fn empty_document_raw() {
        let d = [1.0f32];
        let docs = [DocRef { data: &d[..], valid: 0 }];
        assert!(matches!(
            dense_scores_raw(&[&[1.0f32][..]], 1, &docs, 1),
            Err(Error::EmptyDocument(0))
        ));
    }

    #[test]
    fn finite_diff_linear_function() {
        // Dyadic point and step: every difference is exact.
        let g = finite_diff_grad(|x| x.iter().sum(), &[0.5, -2.0, 7.5], 0.25).unwrap();
        assert_eq!(g, vec![1.0; 3]);
        assert!(matches!(
            finite_diff_grad(|x| x[0], &[1.0], 0.0),
            Err(Error::InvalidStep(_))
        ));
    }
}
