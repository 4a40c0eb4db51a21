//! Comparisons against the dense oracles.

use maxsim_core::reference::dense_score_batch;
use maxsim_core::{ArgmaxMap, DocSource, EmbeddingMatrix, ScoreMatrix};

use crate::report::{Cmp, Report};

pub const SCORE_REL_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct ForwardDelta {
    /// Against the 32-bit dense oracle.
    pub max_abs_diff_f32: f64,
    pub argmax_mismatches: usize,
    /// Against the 64-bit oracle, relative to `Σ_i Σ_k |q_ik d_{a(i)k}|`.
    pub max_rel_err_f64: f64,
}

pub fn forward_delta<D: DocSource + ?Sized>(
    qs: &[EmbeddingMatrix],
    docs: &D,
    scores: &ScoreMatrix,
    argmax: &ArgmaxMap,
) -> anyhow::Result<ForwardDelta> {
    let (s32, a32) = dense_score_batch::<f32, D>(qs, docs)?;
    let (s64, _) = dense_score_batch::<f64, D>(qs, docs)?;
    let max_abs_diff_f32 = scores
        .values()
        .iter()
        .zip(&s32)
        .map(|(a, b)| (a - b).abs() as f64)
        .fold(0.0, f64::max);
    let argmax_mismatches = argmax.indices().iter().zip(a32.indices()).filter(|(a, b)| a != b).count();
    let dim = docs.dim();
    let mut max_rel_err_f64 = 0.0f64;
    for (qi, q) in qs.iter().enumerate() {
        for b in 0..docs.n_docs() {
            let d = docs.doc_data(b);
            let mag: f64 = argmax
                .row(qi, b)
                .iter()
                .enumerate()
                .map(|(i, &a)| {
                    let row = &d[a as usize * dim..(a as usize + 1) * dim];
                    q.row(i).iter().zip(row).map(|(&x, &y)| (x as f64 * y as f64).abs()).sum::<f64>()
                })
                .sum();
            let exact = s64[qi * docs.n_docs() + b];
            let err = (scores.row(qi)[b] as f64 - exact).abs() / mag.max(f64::MIN_POSITIVE);
            max_rel_err_f64 = max_rel_err_f64.max(err);
        }
    }
    Ok(ForwardDelta { max_abs_diff_f32, argmax_mismatches, max_rel_err_f64 })
}

pub fn record_forward(report: &mut Report, prefix: &str, d: &ForwardDelta) {
    report.check(format!("{prefix}max_abs_diff_vs_f32_oracle"), d.max_abs_diff_f32, Cmp::Eq, 0.0);
    report.check(format!("{prefix}argmax_mismatches"), d.argmax_mismatches as f64, Cmp::Eq, 0.0);
    report.check(format!("{prefix}rel_err_vs_f64_oracle"), d.max_rel_err_f64, Cmp::Le, SCORE_REL_TOL);
}
