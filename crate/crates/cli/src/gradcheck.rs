use clap::Args;
use maxsim_core::reference::dense_backward;
use maxsim_core::stats::{cosine, max_abs_diff, widen};
use maxsim_core::synth::{synth_docs, synth_queries, LengthDist};
use maxsim_core::train::{loss_drift, train_toy, TrainConfig, TrainPath};
use maxsim_core::{
    build_inverse_csr, fused_backward, fused_score_batch, grad_docs_csr, grad_docs_scatter, DocBatch, ScoreMatrix,
    TileConfig,
};
use serde::Serialize;

use crate::report::{timed, Cmp, Report, Run};

pub const COSINE_TOL: f64 = 1e-7;
pub const PATH_REL_TOL: f64 = 1e-6;
pub const DRIFT_TOL: f64 = 1e-4;

#[derive(Args, Serialize)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 2)]
    queries: usize,
    #[arg(long, default_value_t = 8)]
    docs: usize,
    #[arg(long, default_value_t = 16)]
    q_len: usize,
    #[arg(long, default_value_t = 32)]
    doc_len: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 11)]
    seed: u64,
    /// Steps of the toy contrastive loop.
    #[arg(long, default_value_t = 200)]
    steps: usize,
}

pub fn run(a: GradcheckArgs) -> anyhow::Result<Report> {
    anyhow::ensure!(
        a.queries > 0 && a.docs > 0 && a.q_len > 0 && a.doc_len > 0 && a.dim > 0,
        "shape must be positive"
    );
    let mut report = Report::new("gradcheck", &a);
    let qs = synth_queries(a.seed, a.queries, a.q_len, a.dim);
    let docs = DocBatch::full(synth_docs(a.seed.wrapping_add(1), a.docs, a.dim, LengthDist::Fixed { len: a.doc_len }))?;
    let tile = TileConfig::default();
    let (_, argmax, _) = fused_score_batch(&qs, &docs, &tile)?;
    // Distinct, sign-varying weights so no two pairs contribute alike.
    let up: Vec<f32> = (0..a.queries * a.docs).map(|i| ((i % 7) as f32 - 3.0) / 4.0 + 0.125).collect();
    let upstream = ScoreMatrix::new(a.queries, a.docs, up.clone())?;

    let (fused, ms) = timed(0, 1, || Ok(fused_backward(&argmax, &upstream, &qs, &docs)?))?;
    report.runs.push(Run::new("fused_backward", ms));
    let (dense, ms) = timed(0, 1, || Ok(dense_backward::<f32, _>(&qs, &docs, &up, &argmax)?))?;
    report.runs.push(Run::new("dense_backward_f32", ms));
    let up64: Vec<f64> = widen(&up);
    let exact = dense_backward::<f64, _>(&qs, &docs, &up64, &argmax)?;

    let f_all: Vec<f64> = widen(&fused.dq).into_iter().chain(widen(&fused.dd)).collect();
    let d_all: Vec<f64> = widen(&dense.dq).into_iter().chain(widen(&dense.dd)).collect();
    let e_all: Vec<f64> = exact.dq.iter().chain(&exact.dd).copied().collect();
    report.check("max_abs_diff_vs_dense", max_abs_diff(&f_all, &d_all), Cmp::Eq, 0.0);
    report.check("cosine_gap_vs_f64", 1.0 - cosine(&f_all, &e_all), Cmp::Le, COSINE_TOL);

    let csr = grad_docs_csr(&build_inverse_csr(&argmax)?, &upstream, &qs)?;
    let scatter = grad_docs_scatter(&argmax, &upstream, &qs)?;
    let scale = widen(&scatter).iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    report.check("csr_vs_scatter_rel", max_abs_diff(&widen(&csr), &widen(&scatter)) / scale, Cmp::Le, PATH_REL_TOL);

    let cfg = TrainConfig {
        n_pairs: a.docs,
        q_len: a.q_len,
        doc_len: a.doc_len,
        dim: a.dim,
        steps: a.steps,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let (fused_losses, ms) = timed(0, 1, || Ok(train_toy(&cfg, TrainPath::Fused)?))?;
    let dense_losses = train_toy(&cfg, TrainPath::Dense)?;
    let drift = loss_drift(&fused_losses, &dense_losses);
    let mut run = Run::new("toy_training_loop", ms).metric("steps", a.steps as f64);
    if let (Some(first), Some(last)) = (fused_losses.first(), fused_losses.last()) {
        run = run.metric("first_loss", *first).metric("last_loss", *last);
    }
    report.runs.push(run);
    report.check("loss_drift", drift, Cmp::Le, DRIFT_TOL);
    Ok(report)
}
