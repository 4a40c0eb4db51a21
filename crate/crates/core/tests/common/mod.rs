#![allow(dead_code)]

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};

use maxsim_core::{EmbeddingMatrix, TileConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// System allocator that tracks live and peak bytes.
pub struct CountingAlloc;

static LIVE: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for CountingAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            let now = LIVE.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            PEAK.fetch_max(now, Ordering::Relaxed);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        LIVE.fetch_sub(layout.size(), Ordering::Relaxed);
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = System.realloc(ptr, layout, new_size);
        if !p.is_null() {
            if new_size >= layout.size() {
                let now = LIVE.fetch_add(new_size - layout.size(), Ordering::Relaxed) + new_size - layout.size();
                PEAK.fetch_max(now, Ordering::Relaxed);
            } else {
                LIVE.fetch_sub(layout.size() - new_size, Ordering::Relaxed);
            }
        }
        p
    }
}

/// Runs `f` and returns its result with the peak bytes allocated above the
/// level live when it started.
pub fn peak_during<T>(f: impl FnOnce() -> T) -> (T, usize) {
    let base = LIVE.load(Ordering::SeqCst);
    PEAK.store(base, Ordering::SeqCst);
    let out = f();
    (out, PEAK.load(Ordering::SeqCst) - base)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(r: &mut impl Rng, rows: usize, dim: usize) -> EmbeddingMatrix {
    let data = (0..rows * dim).map(|_| r.gen_range(-1.0f32..1.0)).collect();
    EmbeddingMatrix::new(rows, dim, data).unwrap()
}

/// Integer drawn log-uniformly from `1..=max`.
pub fn log_uniform(r: &mut impl Rng, max: usize) -> usize {
    let x: f64 = r.gen_range(0.0..((max as f64) + 1.0).ln());
    (x.exp().floor() as usize).clamp(1, max)
}

/// Triple-loop MaxSim in f64 over the first `valid` rows of `d`.
pub fn maxsim_f64(q: &EmbeddingMatrix, d: &EmbeddingMatrix, valid: usize) -> (f64, Vec<u32>) {
    let mut total = 0.0;
    let mut arg = Vec::with_capacity(q.rows());
    for i in 0..q.rows() {
        let mut best = f64::NEG_INFINITY;
        let mut at = 0;
        for j in 0..valid {
            let s: f64 = q.row(i).iter().zip(d.row(j)).map(|(&a, &b)| a as f64 * b as f64).sum();
            if s > best {
                best = s;
                at = j as u32;
            }
        }
        total += best;
        arg.push(at);
    }
    (total, arg)
}

/// `Σ_i Σ_k |q_ik · d_{j*(i),k}|` over the winning tokens: the magnitude a
/// floating-point MaxSim's rounding error scales with.
pub fn maxsim_abs_terms(q: &EmbeddingMatrix, d: &EmbeddingMatrix, argmax: &[u32]) -> f64 {
    (0..q.rows())
        .map(|i| {
            q.row(i)
                .iter()
                .zip(d.row(argmax[i] as usize))
                .map(|(&a, &b)| (a as f64 * b as f64).abs())
                .sum::<f64>()
        })
        .sum()
}

/// Tile configurations with varied, awkward and degenerate sizes.
pub fn tile_grid() -> Vec<TileConfig> {
    let mut out = Vec::new();
    for &bq in &[1usize, 2, 3, 8, 32] {
        for &bd in &[1usize, 7, 64] {
            for &mult in &[1usize, 4] {
                out.push(TileConfig::new(bq, bd, bq * mult).unwrap());
            }
        }
    }
    out.push(TileConfig::new(5, 13, 5).unwrap());
    out.push(TileConfig::new(16, 256, 128).unwrap());
    out.push(TileConfig::default());
    out
}
