use std::path::PathBuf;

use clap::Args;
use maxsim_core::quant::{score_corpus_int8, topk_overlap};
use maxsim_core::stats::{spearman, widen};
use maxsim_core::streamio::stream::CorpusReader;
use maxsim_core::streamio::topk::rank_all;
use maxsim_core::{
    dispatch, fused_score_batch, pack, quantize_per_token, read_embeddings, stream_score_topk, two_stage_topk,
    DocBatch, ElemType, EmbeddingData, EmbeddingMatrix, FileReader, MemoryReader, ProblemShape,
    QuantizedMatrix, Ranked, TileConfig, TrafficReport,
};
use serde::Serialize;

use crate::args::parse_tile;
use crate::report::{timed, Cmp, QueryRanking, Report, Run};
use crate::verify::{forward_delta, record_forward};

pub const INT8_MIN_SPEARMAN: f64 = 0.99;

#[derive(Args, Serialize)]
pub struct ScoreArgs {
    /// Dense file of equal-length queries.
    query: PathBuf,
    /// Corpus file in any layout.
    corpus: PathBuf,
    /// BQ,BD[,QCHUNK]; chosen from the problem shape when absent.
    #[arg(long, value_parser = parse_tile)]
    tile: Option<TileConfig>,
    /// Score the corpus packed, without padding.
    #[arg(long)]
    varlen: bool,
    /// INT8 scoring; with --topk, coarse scan then exact rescoring.
    #[arg(long)]
    int8: bool,
    /// Keep only the best K documents per query.
    #[arg(long)]
    topk: Option<usize>,
    /// Stream the corpus from disk in blocks of this many documents.
    #[arg(long, conflicts_with_all = ["int8", "varlen"])]
    block: Option<usize>,
    /// Shortlist size as a multiple of K for the two-stage path.
    #[arg(long, default_value_t = 4)]
    shortlist: usize,
    /// Compare against the dense oracles.
    #[arg(long)]
    verify: bool,
}

fn load_queries(a: &ScoreArgs) -> anyhow::Result<Vec<EmbeddingMatrix>> {
    let qs = read_embeddings(&a.query)?.to_matrices();
    let lq = qs[0].rows();
    anyhow::ensure!(qs.iter().all(|q| q.rows() == lq), "queries must share one length");
    Ok(qs)
}

fn padded_batch(docs: Vec<EmbeddingMatrix>) -> maxsim_core::Result<DocBatch> {
    let lmax = docs.iter().map(|d| d.rows()).max().unwrap_or(0);
    if docs.iter().all(|d| d.rows() == lmax) {
        DocBatch::full(docs)
    } else {
        DocBatch::padded(&docs, lmax)
    }
}

fn rankings(per_query: Vec<Vec<Ranked>>) -> Vec<QueryRanking> {
    per_query.into_iter().enumerate().map(|(query, top)| QueryRanking { query, top }).collect()
}

pub fn run(a: ScoreArgs) -> anyhow::Result<Report> {
    let mut report = Report::new("score", &a);
    let qs = load_queries(&a)?;
    if let Some(block) = a.block {
        return stream(a, report, qs, block);
    }
    let data = read_embeddings(&a.corpus)?;
    let n = data.n_docs();
    let k = a.topk.unwrap_or(n);
    if k > n {
        return Err(maxsim_core::Error::KTooLarge { k, n }.into());
    }
    let dtype = if a.int8 { ElemType::I8 } else { ElemType::F32 };
    let quantized_file = matches!(data, EmbeddingData::Quantized(_));
    let docs = data.to_matrices();
    let lmax = docs.iter().map(|d| d.rows()).max().unwrap_or(0);
    let mut shape = ProblemShape::new(qs.len(), n, qs[0].rows(), lmax, qs[0].dim(), dtype);
    if a.varlen {
        shape = shape.packed();
    }
    let strategy = dispatch(&shape);
    let tile = a.tile.unwrap_or(strategy.tile);

    if a.int8 {
        let corpus_q: Vec<QuantizedMatrix> = match data {
            EmbeddingData::Quantized(q) => q,
            _ => docs.iter().map(quantize_per_token).collect(),
        };
        let full = padded_batch(docs)?;
        let qq: Vec<QuantizedMatrix> = qs.iter().map(quantize_per_token).collect();
        let two_stage = a.topk.is_some();
        let (tops, ms) = timed(0, 1, || {
            qs.iter()
                .zip(&qq)
                .map(|(q, qq)| {
                    Ok(if two_stage {
                        two_stage_topk(qq, q, &corpus_q, &full, k, a.shortlist, &tile)?
                    } else {
                        rank_all(&score_corpus_int8(qq, &corpus_q, &tile)?)
                    })
                })
                .collect::<anyhow::Result<Vec<_>>>()
        })?;
        let name = if two_stage { "int8_two_stage" } else { "int8_exhaustive" };
        let mut run = Run::new(name, ms).metric("k", k as f64).metric("quantized_input", quantized_file as u8 as f64);
        if two_stage {
            run = run.metric("shortlist", (k * a.shortlist).min(n) as f64);
        }
        report.runs.push(run);
        if a.verify {
            let (exact, _, _) = fused_score_batch(&qs, &full, &tile)?;
            for (qi, (qq, top)) in qq.iter().zip(&tops).enumerate() {
                let exact_rank = rank_all(exact.row(qi));
                let coarse = score_corpus_int8(qq, &corpus_q, &tile)?;
                let rho = spearman(&widen(exact.row(qi)), &widen(&coarse));
                report.check(format!("q{qi}_int8_spearman"), rho, Cmp::Ge, INT8_MIN_SPEARMAN);
                let overlap = topk_overlap(top, &exact_rank, k.min(20));
                report.runs.push(Run::new(format!("q{qi}_fidelity"), vec![0.0]).metric("top_overlap", overlap));
            }
        }
        report.rankings = Some(rankings(tops.into_iter().map(|t| t.into_iter().take(k).collect()).collect()));
        return Ok(report);
    }

    let scores = if a.varlen {
        let packed = pack(&docs)?;
        let ((s, am, t), ms) = timed(0, 1, || Ok(fused_score_batch(&qs, &packed, &tile)?))?;
        report.runs.push(Run::new("varlen_packed", ms).traffic(t).metric("fill_ratio", packed.fill_ratio()));
        if a.verify {
            record_forward(&mut report, "", &forward_delta(&qs, &packed, &s, &am)?);
        }
        s
    } else {
        let batch = padded_batch(docs)?;
        let ((s, am, t), ms) = timed(0, 1, || Ok(fused_score_batch(&qs, &batch, &tile)?))?;
        let name = serde_json::to_value(strategy.tag)?.as_str().unwrap_or("fused").to_string();
        report.runs.push(Run::new(name, ms).traffic(t));
        if a.verify {
            record_forward(&mut report, "", &forward_delta(&qs, &batch, &s, &am)?);
        }
        s
    };
    let tops = (0..qs.len()).map(|q| rank_all(scores.row(q)).into_iter().take(k).collect()).collect();
    report.rankings = Some(rankings(tops));
    Ok(report)
}

fn stream(a: ScoreArgs, mut report: Report, qs: Vec<EmbeddingMatrix>, block: usize) -> anyhow::Result<Report> {
    let tile = a.tile.unwrap_or_default();
    let mut tops = Vec::with_capacity(qs.len());
    let mut total = TrafficReport::default();
    let mut blocks = 0;
    let (n, ms) = timed(0, 1, || {
        let mut reader = FileReader::open(&a.corpus)?;
        let n = reader.n_docs();
        let k = a.topk.unwrap_or(n);
        for q in &qs {
            let out = stream_score_topk(q, &mut reader, block, k, &tile)?;
            total = total.merge(out.traffic);
            blocks = out.blocks;
            tops.push(out.top);
        }
        Ok(n)
    })?;
    report.runs.push(
        Run::new("stream_out_of_core", ms)
            .traffic(total)
            .metric("blocks_per_query", blocks as f64)
            .metric("block_docs", block.min(n) as f64),
    );
    if a.verify {
        let corpus = read_embeddings(&a.corpus)?;
        let packed = match corpus {
            EmbeddingData::Packed { corpus, .. } => corpus,
            other => pack(&other.to_matrices())?,
        };
        let (exact, _, _) = fused_score_batch(&qs, &packed, &tile)?;
        let mut memory_mismatch = 0usize;
        let mut exact_mismatch = 0usize;
        for (qi, (q, top)) in qs.iter().zip(&tops).enumerate() {
            let want = &rank_all(exact.row(qi))[..top.len()];
            exact_mismatch += top.iter().zip(want).filter(|(x, y)| x != y).count();
            let mem = stream_score_topk(q, &mut MemoryReader::new(&packed), block, top.len(), &tile)?;
            memory_mismatch += mem.top.iter().zip(top).filter(|(x, y)| x != y).count();
        }
        report.check("stream_vs_exhaustive_mismatches", exact_mismatch as f64, Cmp::Eq, 0.0);
        report.check("file_vs_memory_mismatches", memory_mismatch as f64, Cmp::Eq, 0.0);
    }
    report.rankings = Some(rankings(tops));
    Ok(report)
}
