//! `mxs`: generate corpora, score, check gradients, quantize and benchmark.

mod args;
mod bench;
mod chamfer;
mod gen;
mod gradcheck;
mod quantize;
mod report;
mod score;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use report::Report;

#[derive(Parser)]
#[command(name = "mxs", version, about = "Fused late-interaction scoring toolkit")]
struct Cli {
    /// Worker threads for the engine.
    #[arg(long, global = true, env = "MXS_THREADS")]
    threads: Option<usize>,
    /// Write the JSON report here instead of stdout.
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    /// Suppress the human summary on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic corpus or query file.
    Gen(gen::GenArgs),
    /// Rank a corpus file against a query file.
    Score(score::ScoreArgs),
    /// Compare fused and dense gradients and run the toy training loop.
    Gradcheck(gradcheck::GradcheckArgs),
    /// Timed suites with correctness checks.
    Bench(bench::BenchArgs),
    /// Convert an embedding file to per-token INT8.
    Quantize(quantize::QuantizeArgs),
    /// Chamfer distance and gradients between two point clouds.
    Chamfer(chamfer::ChamferArgs),
    /// Print the report JSON schema.
    Schema,
}

/// Variant name of an engine error, e.g. `TruncatedPayload`.
fn error_kind(e: &anyhow::Error) -> Option<String> {
    let core = e.downcast_ref::<maxsim_core::Error>()?;
    let dbg = format!("{core:?}");
    let end = dbg.find(|c: char| !c.is_alphanumeric()).unwrap_or(dbg.len());
    Some(dbg[..end].to_string())
}

fn run(cli: Cli) -> anyhow::Result<Report> {
    if let Some(n) = cli.threads {
        anyhow::ensure!(n > 0, "--threads must be >= 1");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.cmd {
        Cmd::Gen(a) => gen::run(a),
        Cmd::Score(a) => score::run(a),
        Cmd::Gradcheck(a) => gradcheck::run(a),
        Cmd::Bench(a) => bench::run(a),
        Cmd::Quantize(a) => quantize::run(a),
        Cmd::Chamfer(a) => chamfer::run(a),
        Cmd::Schema => unreachable!("handled before dispatch"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if matches!(cli.cmd, Cmd::Schema) {
        print!("{}", report::SCHEMA_JSON);
        return ExitCode::SUCCESS;
    }
    let (path, quiet) = (cli.report.clone(), cli.quiet);
    let outcome = run(cli).map(Report::finish).and_then(|r| {
        r.emit(path.as_deref())?;
        Ok(r)
    });
    match outcome {
        Ok(r) => {
            if !quiet {
                eprint!("{}", r.summary());
            }
            if r.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            match error_kind(&e) {
                Some(kind) => eprintln!("error[{kind}]: {e:#}"),
                None => eprintln!("error: {e:#}"),
            }
            ExitCode::from(2)
        }
    }
}
