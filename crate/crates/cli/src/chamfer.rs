use std::path::PathBuf;

use clap::Args;
use maxsim_core::chamfer::dense_distance_bytes;
use maxsim_core::reference::{dense_chamfer, dense_chamfer_backward};
use maxsim_core::stats::{cosine, widen};
use maxsim_core::streamio::format::read_matrix;
use maxsim_core::synth::{rng, uniform_matrix};
use maxsim_core::{chamfer_backward, chamfer_forward, PointSet, TileConfig};
use serde::Serialize;

use crate::args::parse_tile;
use crate::report::{timed, Cmp, Report, Run};

pub const COSINE_TOL: f64 = 1e-7;

#[derive(Args, Serialize)]
pub struct ChamferArgs {
    /// Point file for P (one document of width 3); random when absent.
    #[arg(long, requires = "s")]
    p: Option<PathBuf>,
    #[arg(long, requires = "p")]
    s: Option<PathBuf>,
    /// Random cloud sizes.
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 2000)]
    m: usize,
    #[arg(long, default_value_t = 23)]
    seed: u64,
    #[arg(long, value_parser = parse_tile)]
    tile: Option<TileConfig>,
    /// Compare against the dense oracle, which materializes N × M distances.
    #[arg(long)]
    verify: bool,
}

fn load(path: &PathBuf) -> anyhow::Result<PointSet> {
    let m = read_matrix(path)?;
    Ok(PointSet::new(m.rows(), m.dim(), m.into_data())?)
}

pub fn run(a: ChamferArgs) -> anyhow::Result<Report> {
    let mut report = Report::new("chamfer", &a);
    let (p, s) = match (&a.p, &a.s) {
        (Some(p), Some(s)) => (load(p)?, load(s)?),
        _ => {
            let mut r = rng(a.seed);
            let p = uniform_matrix(&mut r, a.n, 3);
            let s = uniform_matrix(&mut r, a.m, 3);
            (PointSet::new(a.n, 3, p.into_data())?, PointSet::new(a.m, 3, s.into_data())?)
        }
    };
    let tile = a.tile.unwrap_or_default();
    let (f, ms) = timed(0, 1, || Ok(chamfer_forward(&p, &s, &tile)?))?;
    report.runs.push(
        Run::new("forward", ms)
            .traffic(f.traffic)
            .metric("chamfer_distance", f.cd as f64)
            .metric("dense_matrix_bytes", dense_distance_bytes(p.len(), s.len()) as f64),
    );
    let ((gp, gs), ms) = timed(0, 1, || Ok(chamfer_backward(&p, &s, &f.argmin_ps, &f.argmin_sp, 1.0)?))?;
    report.runs.push(Run::new("backward", ms));
    if a.verify {
        let d = dense_chamfer::<f32>(p.data(), s.data(), p.dim())?;
        report.check("cd_bits_differ", (d.cd.to_bits() != f.cd.to_bits()) as u8 as f64, Cmp::Eq, 0.0);
        let mism = f.argmin_ps.iter().zip(&d.argmin_ps).chain(f.argmin_sp.iter().zip(&d.argmin_sp)).filter(|(x, y)| x != y).count();
        report.check("argmin_mismatches", mism as f64, Cmp::Eq, 0.0);
        let (rp, rs) = dense_chamfer_backward::<f64>(p.data(), s.data(), p.dim(), &d.argmin_ps, &d.argmin_sp, 1.0);
        let fused: Vec<f64> = widen(&gp).into_iter().chain(widen(&gs)).collect();
        let dense: Vec<f64> = rp.into_iter().chain(rs).collect();
        report.check("grad_cosine_gap", 1.0 - cosine(&fused, &dense), Cmp::Le, COSINE_TOL);
    }
    Ok(report)
}
