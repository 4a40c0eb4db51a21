//! Inner-product tile microkernel shared by the MaxSim and Chamfer paths.
//!
//! Every similarity is accumulated as `((0 + a0*b0) + a1*b1) + ...` in index
//! order, the same sequence a plain dot-product loop produces. Vectorization
//! runs across tile columns, never across the reduction axis, so results are
//! bit-identical to the scalar oracle regardless of tile shape.

/// Sequential dot product.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut s = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// Copies `cols` row-major rows of width `dim` into `dt` as a `[dim × cols]` block.
#[inline]
pub(crate) fn transpose_into(rows: &[f32], cols: usize, dim: usize, dt: &mut [f32]) {
    debug_assert!(rows.len() >= cols * dim && dt.len() >= cols * dim);
    for c in 0..cols {
        let r = &rows[c * dim..(c + 1) * dim];
        for (k, &v) in r.iter().enumerate() {
            dt[k * cols + c] = v;
        }
    }
}

/// `out[r * cols + c] = <q_r, d_c>` for `q_rows` query rows against a
/// transposed document tile `dt` of `cols` columns.
#[inline]
pub(crate) fn sim_tile(
    q: &[f32],
    q_rows: usize,
    dt: &[f32],
    cols: usize,
    dim: usize,
    out: &mut [f32],
) {
    for r in 0..q_rows {
        let o = &mut out[r * cols..(r + 1) * cols];
        o.fill(0.0);
        let qr = &q[r * dim..(r + 1) * dim];
        for (k, &qv) in qr.iter().enumerate() {
            let drow = &dt[k * cols..(k + 1) * cols];
            for (acc, &x) in o.iter_mut().zip(drow) {
                *acc += qv * x;
            }
        }
    }
}

/// Largest value in a slice that holds no NaN.
#[inline]
pub(crate) fn slice_max(xs: &[f32]) -> f32 {
    let mut m = f32::NEG_INFINITY;
    for &x in xs {
        m = if x > m { x } else { m };
    }
    m
}

#[inline]
pub(crate) fn slice_min(xs: &[f32]) -> f32 {
    let mut m = f32::INFINITY;
    for &x in xs {
        m = if x < m { x } else { m };
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tile_matches_sequential_dot() {
        let dim = 7;
        let q: Vec<f32> = (0..3 * dim).map(|i| ((i * 37 % 11) as f32 - 5.0) / 3.3).collect();
        let d: Vec<f32> = (0..5 * dim).map(|i| ((i * 13 % 17) as f32 - 8.0) / 2.9).collect();
        let mut dt = vec![0.0; 5 * dim];
        transpose_into(&d, 5, dim, &mut dt);
        let mut out = vec![0.0; 15];
        sim_tile(&q, 3, &dt, 5, dim, &mut out);
        for r in 0..3 {
            for c in 0..5 {
                let want = dot(&q[r * dim..(r + 1) * dim], &d[c * dim..(c + 1) * dim]);
                assert_eq!(out[r * 5 + c].to_bits(), want.to_bits());
            }
        }
    }

    #[test]
    fn extrema() {
        assert_eq!(slice_max(&[-3.0, -1.0, -2.0]), -1.0);
        assert_eq!(slice_min(&[3.0, 1.0, 2.0]), 1.0);
        assert_eq!(slice_max(&[]), f32::NEG_INFINITY);
    }
}
