//! Chamfer distance with an online-min forward and a CSR-owned backward.
//!
//! `cd(P, S) = (1/N) Σ_i min_j ‖p_i − s_j‖² + (1/M) Σ_j min_i ‖s_j − p_i‖²`.
//!
//! Squared distances are formed as `(‖a‖² + ‖b‖²) − 2⟨a, b⟩` from the same
//! inner-product tile kernel MaxSim uses, and reduced tile by tile with a
//! running minimum; the `[N × M]` distance matrix is never allocated.

use rayon::prelude::*;

use crate::backward::{build_inverse_csr, CsrInverse};
use crate::error::{Error, Result};
use crate::kernel::{dot, sim_tile, slice_min, transpose_into};
use crate::streamio::traffic::TrafficReport;
use crate::types::{ArgmaxMap, TileConfig};

/// `n` points of width `dim` (3 for point clouds).
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    n: usize,
    dim: usize,
    data: Vec<f32>,
}

impl PointSet {
    pub fn new(n: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ZeroDim);
        }
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        if data.len() != n * dim {
            return Err(Error::ShapeMismatch(format!("{} values for {n} points of dim {dim}", data.len())));
        }
        if let Some(p) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidValue(format!("non-finite coordinate at point {}", p / dim)));
        }
        Ok(Self { n, dim, data })
    }

    pub fn from_points(points: &[[f32; 3]]) -> Result<Self> {
        Self::new(points.len(), 3, points.iter().flatten().copied().collect())
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn point(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone)]
pub struct ChamferForward {
    pub cd: f32,
    /// Nearest point of `S` for every point of `P`.
    pub argmin_ps: Vec<u32>,
    /// Nearest point of `P` for every point of `S`.
    pub argmin_sp: Vec<u32>,
    pub traffic: TrafficReport,
}

fn sq_norms(x: &PointSet) -> Vec<f32> {
    (0..x.n).map(|i| dot(x.point(i), x.point(i))).collect()
}

struct MinScratch {
    bt: Vec<f32>,
    tile: Vec<f32>,
}

/// Nearest neighbour in `b` of every point of `a`, and the sum of the
/// squared distances in `a`'s order.
fn nearest(a: &PointSet, b: &PointSet, na: &[f32], nb: &[f32], tile: &TileConfig) -> (f32, Vec<u32>, TrafficReport) {
    let dim = a.dim;
    let mut best = vec![f32::INFINITY; a.n];
    let mut arg = vec![0u32; a.n];
    let traffic = best
        .par_chunks_mut(tile.qchunk)
        .zip(arg.par_chunks_mut(tile.qchunk))
        .enumerate()
        .map_init(
            || MinScratch {
                bt: vec![0.0; dim * tile.bd],
                tile: vec![0.0; tile.bq * tile.bd],
            },
            |s, (ci, (best, arg))| {
                let row_base = ci * tile.qchunk;
                let rows_in_chunk = best.len();
                let mut t = TrafficReport::default();
                let mut col0 = 0;
                while col0 < b.n {
                    let cols = tile.bd.min(b.n - col0);
                    transpose_into(&b.data[col0 * dim..(col0 + cols) * dim], cols, dim, &mut s.bt);
                    t.bytes_read += (cols * (dim + 1) * 4) as u64;
                    let mut r0 = 0;
                    while r0 < rows_in_chunk {
                        let rows = tile.bq.min(rows_in_chunk - r0);
                        let i0 = row_base + r0;
                        let st = &mut s.tile[..rows * cols];
                        sim_tile(&a.data[i0 * dim..(i0 + rows) * dim], rows, &s.bt, cols, dim, st);
                        t.mac_count += (rows * cols * dim) as u64;
                        for r in 0..rows {
                            let row = &mut st[r * cols..(r + 1) * cols];
                            for (c, v) in row.iter_mut().enumerate() {
                                *v = (na[i0 + r] + nb[col0 + c]) - 2.0 * *v;
                            }
                            let m = slice_min(row);
                            if m < best[r0 + r] {
                                best[r0 + r] = m;
                                arg[r0 + r] = (col0 + row.iter().position(|&x| x == m).unwrap_or(0)) as u32;
                            }
                        }
                        r0 += rows;
                    }
                    col0 += cols;
                }
                t.note_aux((s.bt.capacity() + s.tile.capacity()) * 4);
                t
            },
        )
        .reduce(TrafficReport::default, TrafficReport::merge);
    let mut sum = 0.0f32;
    for &v in &best {
        sum += v;
    }
    (sum, arg, traffic)
}

pub fn chamfer_forward(p: &PointSet, s: &PointSet, tile: &TileConfig) -> Result<ChamferForward> {
    tile.validate()?;
    if p.dim != s.dim {
        return Err(Error::DimMismatch { query: p.dim, doc: s.dim });
    }
    let (np, ns) = (sq_norms(p), sq_norms(s));
    let (sum_ps, argmin_ps, t1) = nearest(p, s, &np, &ns, tile);
    let (sum_sp, argmin_sp, t2) = nearest(s, p, &ns, &np, tile);
    let mut traffic = t1.merge(t2);
    traffic.bytes_read += ((p.n + s.n) * (p.dim + 1) * 4) as u64;
    traffic.bytes_written += (4 + (p.n + s.n) * 4) as u64;
    // Norms live for the whole call.
    traffic.peak_aux_bytes += ((np.capacity() + ns.capacity()) * 4) as u64;
    Ok(ChamferForward {
        cd: sum_ps / p.n as f32 + sum_sp / s.n as f32,
        argmin_ps,
        argmin_sp,
        traffic,
    })
}

fn assignment_csr(argmin: &[u32], n_src: usize, n_dest: usize) -> Result<CsrInverse> {
    if argmin.len() != n_src {
        return Err(Error::StaleArgmin(format!("{} indices for {n_src} points", argmin.len())));
    }
    let map = ArgmaxMap::dense(1, 1, n_src, n_dest, argmin.to_vec()).map_err(|e| Error::StaleArgmin(e.to_string()))?;
    build_inverse_csr(&map)
}

/// Gradient of `upstream · cd` through the saved nearest-neighbour
/// assignment. Each output row is owned by one worker: its own term is
/// gathered and the terms of the points that chose it come from the
/// inverse map of the opposite direction.
pub fn chamfer_backward(
    p: &PointSet,
    s: &PointSet,
    argmin_ps: &[u32],
    argmin_sp: &[u32],
    upstream: f32,
) -> Result<(Vec<f32>, Vec<f32>)> {
    if p.dim != s.dim {
        return Err(Error::DimMismatch { query: p.dim, doc: s.dim });
    }
    let inv_ps = assignment_csr(argmin_ps, p.n, s.n)?;
    let inv_sp = assignment_csr(argmin_sp, s.n, p.n)?;
    let cp = 2.0 / p.n as f32 * upstream;
    let cs = 2.0 / s.n as f32 * upstream;
    let dp = owned_rows(p, s, argmin_ps, &inv_sp, cp, cs);
    let ds = owned_rows(s, p, argmin_sp, &inv_ps, cs, cp);
    Ok((dp, ds))
}

/// Row `i` of the gradient for `own`: `c_own (x_i − y_{arg[i]})` plus
/// `c_other (x_i − y_j)` for every `j` whose nearest point is `i`.
fn owned_rows(own: &PointSet, other: &PointSet, arg: &[u32], chosen_by: &CsrInverse, c_own: f32, c_other: f32) -> Vec<f32> {
    let dim = own.dim;
    let mut out = vec![0f32; own.n * dim];
    out.par_chunks_mut(dim).enumerate().for_each(|(i, row)| {
        let x = own.point(i);
        let y = other.point(arg[i] as usize);
        for k in 0..dim {
            row[k] = c_own * (x[k] - y[k]);
        }
        for &j in chosen_by.bucket(i) {
            let y = other.point(j as usize);
            for k in 0..dim {
                row[k] += c_other * (x[k] - y[k]);
            }
        }
    });
    out
}

/// Bytes a materialized `[N × M]` distance matrix of `f32` would occupy.
pub fn dense_distance_bytes(n: usize, m: usize) -> u64 {
    (n as u64) * (m as u64) * 4
}
