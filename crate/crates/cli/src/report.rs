//! Machine-readable run reports.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use maxsim_core::{Ranked, TrafficReport};
use serde::Serialize;

pub const SCHEMA: &str = "mxs-report";
pub const SCHEMA_VERSION: u32 = 1;
pub const SCHEMA_JSON: &str = include_str!("../schema/report.schema.json");

#[derive(Debug, Serialize)]
pub struct Environment {
    pub tool_version: &'static str,
    pub os: &'static str,
    pub arch: &'static str,
    pub threads: usize,
}

impl Environment {
    pub fn current() -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION"),
            os: std::env::consts::OS,
            arch: std::env::consts::ARCH,
            threads: rayon::current_num_threads(),
        }
    }
}

/// One timed configuration.
#[derive(Debug, Serialize)]
pub struct Run {
    pub name: String,
    /// Median over the timed repeats, milliseconds.
    pub median_ms: f64,
    pub wall_ms: Vec<f64>,
    /// Median time of the baseline over this run's; timing-derived.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speedup: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub traffic: Option<TrafficReport>,
    pub metrics: BTreeMap<String, f64>,
}

impl Run {
    pub fn new(name: impl Into<String>, wall_ms: Vec<f64>) -> Self {
        let mut sorted = wall_ms.clone();
        Self {
            name: name.into(),
            median_ms: maxsim_core::stats::median(&mut sorted),
            wall_ms,
            speedup: None,
            traffic: None,
            metrics: BTreeMap::new(),
        }
    }

    pub fn traffic(mut self, t: TrafficReport) -> Self {
        self.traffic = Some(t);
        self
    }

    pub fn speedup_over(mut self, baseline: &Run) -> Self {
        self.speedup = Some(baseline.median_ms / self.median_ms.max(1e-9));
        self
    }

    pub fn metric(mut self, key: &str, value: f64) -> Self {
        self.metrics.insert(key.to_string(), value);
        self
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Cmp {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub cmp: Cmp,
    pub limit: f64,
    pub passed: bool,
}

#[derive(Debug, Serialize)]
pub struct QueryRanking {
    pub query: usize,
    pub top: Vec<Ranked>,
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub schema: &'static str,
    pub schema_version: u32,
    pub command: &'static str,
    pub config: serde_json::Value,
    pub environment: Environment,
    pub runs: Vec<Run>,
    pub checks: Vec<Check>,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rankings: Option<Vec<QueryRanking>>,
}

impl Report {
    pub fn new(command: &'static str, config: impl Serialize) -> Self {
        Self {
            schema: SCHEMA,
            schema_version: SCHEMA_VERSION,
            command,
            config: serde_json::to_value(config).expect("config serializes"),
            environment: Environment::current(),
            runs: Vec::new(),
            checks: Vec::new(),
            passed: true,
            rankings: None,
        }
    }

    pub fn check(&mut self, name: impl Into<String>, value: f64, cmp: Cmp, limit: f64) -> bool {
        let passed = match cmp {
            Cmp::Le => value <= limit,
            Cmp::Ge => value >= limit,
            Cmp::Eq => value == limit,
        };
        self.checks.push(Check { name: name.into(), value, cmp, limit, passed });
        passed
    }

    /// Settles `passed`; a non-finite number anywhere fails the report.
    pub fn finish(mut self) -> Self {
        let bad = self
            .runs
            .iter()
            .flat_map(|r| r.wall_ms.iter().chain(r.metrics.values()).chain(std::iter::once(&r.median_ms)).chain(r.speedup.iter()))
            .chain(self.checks.iter().flat_map(|c| [&c.value, &c.limit]))
            .filter(|x| !x.is_finite())
            .count();
        if bad > 0 {
            self.check("non_finite_fields", bad as f64, Cmp::Eq, 0.0);
        }
        self.passed = self.checks.iter().all(|c| c.passed);
        self
    }

    pub fn summary(&self) -> String {
        let mut s = format!("mxs {}: {}\n", self.command, if self.passed { "PASS" } else { "FAIL" });
        for r in &self.runs {
            s.push_str(&format!("  {:<32} {:>10.3} ms", r.name, r.median_ms));
            if let Some(x) = r.speedup {
                s.push_str(&format!("  speedup={x:.2}x"));
            }
            for (k, v) in &r.metrics {
                s.push_str(&format!("  {k}={v:.6}"));
            }
            s.push('\n');
        }
        for c in &self.checks {
            let op = match c.cmp {
                Cmp::Le => "<=",
                Cmp::Ge => ">=",
                Cmp::Eq => "==",
            };
            let mark = if c.passed { "ok  " } else { "FAIL" };
            s.push_str(&format!("  [{mark}] {} = {:e} {op} {:e}\n", c.name, c.value, c.limit));
        }
        s
    }

    /// Writes the report to `path`, or stdout when `None`. File output goes
    /// through a sibling temporary so a failure leaves nothing behind.
    pub fn emit(&self, path: Option<&Path>) -> anyhow::Result<()> {
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        match path {
            Some(p) => write_atomic(p, json.as_bytes()),
            None => {
                let mut out = std::io::stdout().lock();
                out.write_all(json.as_bytes())?;
                out.flush()?;
                Ok(())
            }
        }
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })?;
    Ok(())
}

/// Runs `f` `warmup` times untimed, then `repeats` times on the monotonic
/// clock. Returns the last result and every timing in milliseconds.
pub fn timed<T>(warmup: usize, repeats: usize, mut f: impl FnMut() -> anyhow::Result<T>) -> anyhow::Result<(T, Vec<f64>)> {
    for _ in 0..warmup {
        f()?;
    }
    let mut times = Vec::with_capacity(repeats.max(1));
    let mut last = None;
    for _ in 0..repeats.max(1) {
        let t0 = Instant::now();
        let out = f()?;
        times.push(t0.elapsed().as_secs_f64() * 1e3);
        last = Some(out);
    }
    Ok((last.expect("at least one repeat"), times))
}
