use clap::{Args, ValueEnum};
use maxsim_core::reference::dense_score_batch;
use maxsim_core::streamio::topk::rank_all;
use maxsim_core::synth::{synth_docs, synth_queries, LengthDist};
use maxsim_core::{
    fused_score_batch, model_traffic, pack, stream_score_topk, DocBatch, MemoryReader, TileConfig, TrafficShape,
};
use serde::Serialize;

use crate::args::parse_lengths;
use crate::report::{timed, Cmp, Report, Run};
use crate::verify::{forward_delta, record_forward};

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Forward,
    Traffic,
    Tilesweep,
    Varlen,
    Stream,
}

#[derive(Args, Serialize)]
pub struct BenchArgs {
    #[arg(value_enum)]
    suite: Suite,
    #[arg(long, default_value_t = 1)]
    queries: usize,
    /// Corpus size; 2000 for the stream suite, 64 otherwise.
    #[arg(long)]
    docs: Option<usize>,
    #[arg(long, default_value_t = 32)]
    q_len: usize,
    #[arg(long, default_value_t = 128)]
    doc_len: usize,
    #[arg(long, default_value_t = 128)]
    dim: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 1)]
    warmup: usize,
    /// Document tile widths for the tile sweep.
    #[arg(long, default_value = "16,32,64,128", value_delimiter = ',')]
    chunks: Vec<usize>,
    /// Documents per resident block for the stream suite.
    #[arg(long, default_value_t = 512)]
    block: usize,
    #[arg(long, default_value_t = 10)]
    topk: usize,
    /// Length distribution for the stream suite.
    #[arg(long, default_value = "uniform:16:64", value_parser = parse_lengths)]
    lengths: LengthDist,
}

pub fn run(a: BenchArgs) -> anyhow::Result<Report> {
    anyhow::ensure!(a.queries > 0 && a.q_len > 0 && a.doc_len > 0 && a.dim > 0, "shape must be positive");
    anyhow::ensure!(a.repeats > 0, "--repeats must be >= 1");
    let mut report = Report::new("bench", &a);
    let n_docs = a.docs.unwrap_or(match a.suite {
        Suite::Stream => 2000,
        _ => 64,
    });
    anyhow::ensure!(n_docs > 0, "--docs must be >= 1");
    let qs = synth_queries(a.seed, a.queries, a.q_len, a.dim);
    let fixed = || synth_docs(a.seed.wrapping_add(1), n_docs, a.dim, LengthDist::Fixed { len: a.doc_len });
    let tile = TileConfig::default();
    match a.suite {
        Suite::Forward => {
            let batch = DocBatch::full(fixed())?;
            let ((s, am, t), ms) = timed(a.warmup, a.repeats, || Ok(fused_score_batch(&qs, &batch, &tile)?))?;
            let fused = Run::new("fused", ms).traffic(t);
            let (_, ms) = timed(a.warmup, a.repeats, || Ok(dense_score_batch::<f32, _>(&qs, &batch)?))?;
            let dense = Run::new("dense_f32_oracle", ms);
            report.runs.push(fused.speedup_over(&dense));
            report.runs.push(dense);
            record_forward(&mut report, "", &forward_delta(&qs, &batch, &s, &am)?);
        }
        Suite::Traffic => {
            let batch = DocBatch::full(fixed())?;
            let ((_, _, t), ms) = timed(a.warmup, a.repeats, || Ok(fused_score_batch(&qs, &batch, &tile)?))?;
            let shape = TrafficShape::new(qs.len() as u64, n_docs as u64, a.q_len as u64, a.doc_len as u64, a.dim as u64)
                .with_qchunk(tile.qchunk as u64);
            let m = model_traffic(&shape);
            report.runs.push(
                Run::new("fused", ms)
                    .traffic(t)
                    .metric("model_fused_bytes", m.fused_bytes as f64)
                    .metric("model_naive_bytes", m.naive_bytes as f64)
                    .metric("naive_to_fused", m.naive_to_fused)
                    .metric("io_ratio", m.io_ratio),
            );
            report.check("measured_minus_model_read_bytes", t.bytes_read as f64 - m.operand_read_bytes as f64, Cmp::Eq, 0.0);
            // Scores plus one u32 argmax index per query token and document.
            let argmax_bytes = (qs.len() * n_docs * a.q_len * 4) as u64;
            report.check(
                "measured_minus_model_written_bytes",
                t.bytes_written as f64 - (m.score_write_bytes + argmax_bytes) as f64,
                Cmp::Eq,
                0.0,
            );
        }
        Suite::Tilesweep => {
            anyhow::ensure!(!a.chunks.is_empty(), "--chunks is empty");
            let batch = DocBatch::full(fixed())?;
            let mut medians = Vec::new();
            for &bd in &a.chunks {
                let t = TileConfig::new(tile.bq, bd, tile.qchunk)?;
                let ((s, am, traffic), ms) = timed(a.warmup, a.repeats, || Ok(fused_score_batch(&qs, &batch, &t)?))?;
                let run = Run::new(format!("bd_{bd}"), ms).traffic(traffic);
                medians.push(run.median_ms);
                report.runs.push(run);
                record_forward(&mut report, &format!("bd_{bd}_"), &forward_delta(&qs, &batch, &s, &am)?);
            }
            let lo = medians.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = medians.iter().copied().fold(0.0, f64::max);
            report.runs.push(Run::new("sweep", vec![medians.iter().sum()]).metric("spread", (hi - lo) / lo.max(1e-9)));
        }
        Suite::Varlen => {
            for (name, dist) in [
                ("fixed", LengthDist::Fixed { len: a.doc_len }),
                ("uniform", LengthDist::WIDE_UNIFORM),
                ("hotpot_like", LengthDist::HotpotLike),
                ("ragged", LengthDist::Ragged),
            ] {
                let docs = synth_docs(a.seed.wrapping_add(1), n_docs, a.dim, dist);
                let packed = pack(&docs)?;
                let padded = DocBatch::padded(&docs, packed.max_doc_len())?;
                let ((sp, _, tp), ms) = timed(a.warmup, a.repeats, || Ok(fused_score_batch(&qs, &packed, &tile)?))?;
                let packed_run = Run::new(format!("{name}_packed"), ms).traffic(tp);
                let ((sd, _, td), ms) = timed(a.warmup, a.repeats, || Ok(fused_score_batch(&qs, &padded, &tile)?))?;
                let padded_run = Run::new(format!("{name}_padded"), ms).traffic(td);
                let fill = packed.fill_ratio();
                let work = tp.mac_count as f64 / td.mac_count as f64;
                let slack = tile.bd as f64 / packed.max_doc_len() as f64;
                report.runs.push(packed_run.speedup_over(&padded_run).metric("fill_ratio", fill).metric("work_ratio", work));
                report.runs.push(padded_run);
                let differing = sp.values().iter().zip(sd.values()).filter(|(x, y)| x.to_bits() != y.to_bits()).count();
                report.check(format!("{name}_scores_differing"), differing as f64, Cmp::Eq, 0.0);
                report.check(format!("{name}_work_minus_fill"), (work - fill).abs(), Cmp::Le, slack);
            }
        }
        Suite::Stream => {
            let docs = synth_docs(a.seed.wrapping_add(1), n_docs, a.dim, a.lengths);
            let packed = pack(&docs)?;
            let k = a.topk.min(n_docs);
            let (outs, ms) = timed(a.warmup, a.repeats, || {
                qs.iter()
                    .map(|q| Ok(stream_score_topk(q, &mut MemoryReader::new(&packed), a.block, k, &tile)?))
                    .collect::<anyhow::Result<Vec<_>>>()
            })?;
            let (exact, _, _) = fused_score_batch(&qs, &packed, &tile)?;
            let mut mismatches = 0;
            let mut peak = 0u64;
            for (qi, out) in outs.iter().enumerate() {
                let want = &rank_all(exact.row(qi))[..k];
                mismatches += out.top.iter().zip(want).filter(|(x, y)| x != y).count();
                peak = peak.max(out.traffic.peak_aux_bytes);
            }
            report.runs.push(
                Run::new("stream", ms)
                    .traffic(outs[0].traffic)
                    .metric("blocks", outs[0].blocks as f64)
                    .metric("peak_aux_bytes", peak as f64),
            );
            report.check("stream_vs_exhaustive_mismatches", mismatches as f64, Cmp::Eq, 0.0);
        }
    }
    Ok(report)
}
