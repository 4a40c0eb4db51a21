use std::path::PathBuf;

use clap::{Args, Subcommand, ValueEnum};
use maxsim_core::streamio::format::encode;
use maxsim_core::synth::{synth_docs, synth_queries, LengthDist};
use maxsim_core::{pack, quantize_per_token, DocSource, ElemType, EmbeddingData};
use serde::Serialize;

use crate::args::{parse_elem, parse_lengths};
use crate::report::{timed, write_atomic, Report, Run};

#[derive(Args, Serialize)]
pub struct GenArgs {
    #[command(subcommand)]
    what: GenWhat,
}

#[derive(Subcommand, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
enum GenWhat {
    /// Unit-normalized Gaussian documents.
    Corpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        docs: usize,
        #[arg(long, default_value_t = 128)]
        dim: usize,
        /// fixed:L, uniform:MIN:MAX, wide, hotpot or ragged.
        #[arg(long, default_value = "uniform:16:64", value_parser = parse_lengths)]
        lengths: LengthDist,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "f32", value_parser = parse_elem)]
        elem: ElemType,
        #[arg(long, value_enum, default_value_t = LayoutArg::Packed)]
        layout: LayoutArg,
    },
    /// Equal-length queries in a dense file.
    Queries {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 32)]
        len: usize,
        #[arg(long, default_value_t = 128)]
        dim: usize,
        #[arg(long, default_value_t = 2)]
        seed: u64,
        #[arg(long, default_value = "f32", value_parser = parse_elem)]
        elem: ElemType,
    },
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum LayoutArg {
    Dense,
    Packed,
    Quantized,
}

pub fn run(a: GenArgs) -> anyhow::Result<Report> {
    let mut report = Report::new("gen", &a);
    let (out, data) = match &a.what {
        GenWhat::Corpus { out, docs, dim, lengths, seed, elem, layout } => {
            anyhow::ensure!(*docs > 0 && *dim > 0, "--docs and --dim must be >= 1");
            let docs = synth_docs(*seed, *docs, *dim, *lengths);
            let docs: Vec<_> = match elem {
                ElemType::F16 => docs.iter().map(|d| d.to_f16_precision()).collect(),
                _ => docs,
            };
            let data = match layout {
                LayoutArg::Dense => EmbeddingData::Dense { elem: *elem, docs },
                LayoutArg::Packed => EmbeddingData::Packed { elem: *elem, corpus: pack(&docs)? },
                LayoutArg::Quantized => EmbeddingData::Quantized(docs.iter().map(quantize_per_token).collect()),
            };
            (out, data)
        }
        GenWhat::Queries { out, count, len, dim, seed, elem } => {
            anyhow::ensure!(*count > 0 && *len > 0 && *dim > 0, "--count, --len and --dim must be >= 1");
            let qs = synth_queries(*seed, *count, *len, *dim);
            let docs = match elem {
                ElemType::F16 => qs.iter().map(|q| q.to_f16_precision()).collect(),
                _ => qs,
            };
            (out, EmbeddingData::Dense { elem: *elem, docs })
        }
    };
    let (bytes, ms) = timed(0, 1, || Ok(encode(&data)?))?;
    write_atomic(out, &bytes)?;
    let packed = pack(&data.to_matrices())?;
    report.runs.push(
        Run::new("encode", ms)
            .metric("n_docs", data.n_docs() as f64)
            .metric("total_tokens", packed.n_dest() as f64)
            .metric("fill_ratio", packed.fill_ratio())
            .metric("file_bytes", bytes.len() as f64),
    );
    Ok(report)
}
