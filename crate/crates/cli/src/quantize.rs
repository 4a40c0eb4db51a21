use std::path::PathBuf;

use clap::Args;
use maxsim_core::streamio::format::encode;
use maxsim_core::{quantize_per_token, read_embeddings, EmbeddingData, QuantizedMatrix};
use serde::Serialize;

use crate::report::{timed, write_atomic, Cmp, Report, Run};

#[derive(Args, Serialize)]
pub struct QuantizeArgs {
    input: PathBuf,
    output: PathBuf,
}

pub fn run(a: QuantizeArgs) -> anyhow::Result<Report> {
    let mut report = Report::new("quantize", &a);
    let input_bytes = std::fs::metadata(&a.input)?.len();
    let docs = read_embeddings(&a.input)?.to_matrices();
    let (quantized, ms) = timed(0, 1, || Ok(docs.iter().map(quantize_per_token).collect::<Vec<QuantizedMatrix>>()))?;
    // Worst reconstruction error in units of half a quantization step.
    let mut worst = 0.0f64;
    for (d, q) in docs.iter().zip(&quantized) {
        let back = q.dequantize();
        for i in 0..d.rows() {
            let half = q.scales()[i] as f64 / 2.0;
            for (x, y) in d.row(i).iter().zip(back.row(i)) {
                worst = worst.max((*x as f64 - *y as f64).abs() / half);
            }
        }
    }
    let bytes = encode(&EmbeddingData::Quantized(quantized))?;
    write_atomic(&a.output, &bytes)?;
    report.runs.push(
        Run::new("quantize", ms)
            .metric("input_bytes", input_bytes as f64)
            .metric("output_bytes", bytes.len() as f64)
            .metric("compression", input_bytes as f64 / bytes.len() as f64),
    );
    report.check("max_error_in_half_steps", worst, Cmp::Le, 1.0 + 1e-5);
    Ok(report)
}
