//! Benchmark harness: rejection ratio and speedup of screening along a path,
//! with CSV and JSON reports.
//!
//! The rejection ratio at one penalty is `N_s / N_f`, where `N_s` counts
//! the eliminated features and `N_f` the features whose coefficient in the
//! unscreened solution is at most [`ZERO_THRESHOLD`] in magnitude. A safe
//! rule keeps it in `[0, 1]`.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantile::QuantileLevel;
use crate::simgen::{Covariance, RNG_ID};
use crate::solver::{solve_path, PathResult, QuantileLasso, SolveOptions};

/// Coefficients at or below this magnitude count as zero.
pub const ZERO_THRESHOLD: f64 = 1e-7;

/// KKT target for re-solving a penalty whose reference looks unsafe.
const RECHECK_KKT: f64 = 1e-10;

/// `|screened| / |zero_set|`, or 1 when both are empty. Errors when a
/// screened feature is missing from `zero_set`.
pub fn rejection_ratio(screened: &[usize], zero_set: &[usize]) -> Result<f64> {
    let offending: Vec<usize> = screened
        .iter()
        .copied()
        .filter(|j| zero_set.binary_search(j).is_err())
        .collect();
    if !offending.is_empty() {
        return Err(Error::SafetyViolation { indices: offending });
    }
    if zero_set.is_empty() {
        return Ok(1.0);
    }
    Ok(screened.len() as f64 / zero_set.len() as f64)
}

/// Ascending indices with `|beta_j| <= threshold`.
pub fn zero_set(beta: &[f64], threshold: f64) -> Vec<usize> {
    (0..beta.len())
        .filter(|&j| beta[j].abs() <= threshold)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub lambda_ratio: f64,
    pub n_screened: usize,
    pub n_zero: usize,
    pub rejection_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchTotals {
    /// Seconds for the unscreened path.
    pub t_full: f64,
    /// Seconds for the screened path, screening included.
    pub t_screened: f64,
    pub speedup: f64,
    /// Some penalty in either run stopped at the iteration limit.
    pub tainted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchMetadata {
    pub tau: f64,
    pub n: usize,
    pub p: usize,
    pub seed: Option<u64>,
    pub covariance: Option<Covariance>,
    pub grid_size: usize,
    pub lambda_min_ratio: f64,
    pub lambda_max: f64,
    pub zero_threshold: f64,
    pub solver: SolveOptions,
    /// Timed runs per path; the fastest is reported.
    #[serde(default = "one")]
    pub repeats: usize,
    pub rng: String,
    /// Caller's full configuration, when run from the command line.
    #[serde(default)]
    pub config: Option<serde_json::Value>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub totals: BenchTotals,
    pub metadata: BenchMetadata,
}

/// Times the path with and without screening under the same options and
/// warm-start policy, after one untimed warmup of each. With `repeats > 1` the
/// two paths are timed alternately and the fastest time of each is kept.
///
/// Every eliminated feature is checked against the unscreened solution. A
/// feature that looks nonzero there triggers an untimed tight re-solve at
/// that penalty; if it is still nonzero the run fails with
/// [`Error::SafetyViolation`].
pub fn measure_speedup(
    x: &DMatrix<f64>,
    y: &[f64],
    tau: QuantileLevel,
    grid: &[f64],
    opts: &SolveOptions,
    repeats: usize,
) -> Result<BenchReport> {
    if repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be at least 1".into()));
    }
    let (n, p) = x.shape();
    if let Some(&top) = grid.iter().max_by(|a, b| a.total_cmp(b)) {
        solve_path(x, y, tau, &[top], false, None, opts)?;
        solve_path(x, y, tau, &[top], true, None, opts)?;
    }

    let timed = |screening: bool| -> Result<(f64, PathResult)> {
        let start = Instant::now();
        let path = solve_path(x, y, tau, grid, screening, None, opts)?;
        Ok((start.elapsed().as_secs_f64(), path))
    };
    let (mut t_full, full) = timed(false)?;
    let (mut t_screened, screened) = timed(true)?;
    for _ in 1..repeats {
        t_full = t_full.min(timed(false)?.0);
        t_screened = t_screened.min(timed(true)?.0);
    }

    let rows = compare_paths(x, y, tau, &full, &screened)?;
    Ok(BenchReport {
        rows,
        totals: BenchTotals {
            t_full,
            t_screened,
            speedup: t_full / t_screened,
            tainted: !(full.all_converged() && screened.all_converged()),
        },
        metadata: BenchMetadata {
            tau: tau.value(),
            n,
            p,
            seed: None,
            covariance: None,
            grid_size: full.ratios.len(),
            lambda_min_ratio: full.ratios.last().copied().unwrap_or(f64::NAN),
            lambda_max: full.lambda_max,
            zero_threshold: ZERO_THRESHOLD,
            solver: *opts,
            repeats,
            rng: RNG_ID.to_string(),
            config: None,
        },
    })
}

/// Per-penalty rows from an unscreened reference path and a screened path
/// over the same grid.
pub fn compare_paths(
    x: &DMatrix<f64>,
    y: &[f64],
    tau: QuantileLevel,
    full: &PathResult,
    screened: &PathResult,
) -> Result<Vec<BenchRow>> {
    if full.ratios != screened.ratios {
        return Err(Error::InvalidArgument(
            "paths were solved on different grids".into(),
        ));
    }
    let mut rows = Vec::with_capacity(full.ratios.len());
    for k in 0..full.ratios.len() {
        let eliminated = &screened.eliminated[k];
        let mut zeros = zero_set(&full.betas[k], ZERO_THRESHOLD);
        let ratio = match rejection_ratio(eliminated, &zeros) {
            Ok(r) => r,
            Err(Error::SafetyViolation { .. }) => {
                let lam = full.lambdas[k];
                let problem = QuantileLasso::new(x, y, tau)?;
                let refined = problem.solve_tight(lam, RECHECK_KKT, None)?;
                zeros = zero_set(&refined.beta, ZERO_THRESHOLD);
                rejection_ratio(eliminated, &zeros)?
            }
            Err(e) => return Err(e),
        };
        rows.push(BenchRow {
            lambda_ratio: full.ratios[k],
            n_screened: eliminated.len(),
            n_zero: zeros.len(),
            rejection_ratio: ratio,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(Error::InvalidArgument(format!(
                "unknown report format '{other}'"
            ))),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Csv => "csv",
            Self::Json => "json",
        })
    }
}

pub const CSV_HEADER: &str = "lambda_ratio,n_screened,n_zero,rejection_ratio";

/// CSV: the header, one line per row, then `name,value` footer lines for the
/// totals and a `metadata` line holding the metadata as quoted JSON.
pub fn report_to_string(report: &BenchReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(report)? + "\n"),
        ReportFormat::Csv => {
            let mut out = String::from(CSV_HEADER);
            out.push('\n');
            for r in &report.rows {
                out += &format!(
                    "{},{},{},{}\n",
                    r.lambda_ratio, r.n_screened, r.n_zero, r.rejection_ratio
                );
            }
            let t = &report.totals;
            out += &format!("t_full_seconds,{}\n", t.t_full);
            out += &format!("t_screened_seconds,{}\n", t.t_screened);
            out += &format!("speedup,{}\n", t.speedup);
            out += &format!("tainted,{}\n", t.tainted);
            let meta = serde_json::to_string(&report.metadata)?;
            out += &format!("metadata,\"{}\"\n", meta.replace('"', "\"\""));
            Ok(out)
        }
    }
}

pub fn emit_report(
    report: &BenchReport,
    path: impl AsRef<Path>,
    format: ReportFormat,
) -> Result<()> {
    fs::write(path, report_to_string(report, format)?)?;
    Ok(())
}

pub fn parse_report(text: &str, format: ReportFormat) -> Result<BenchReport> {
    match format {
        ReportFormat::Json => Ok(serde_json::from_str(text)?),
        ReportFormat::Csv => parse_csv_report(text),
    }
}

pub fn read_report(path: impl AsRef<Path>, format: ReportFormat) -> Result<BenchReport> {
    parse_report(&fs::read_to_string(path)?, format)
}

fn parse_csv_report(text: &str) -> Result<BenchReport> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    let mut footer = std::collections::HashMap::new();
    let mut saw_header = false;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let bad = |message: String| Error::Parse { line, message };
        if !saw_header {
            if record.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
                return Err(bad(format!("expected header '{CSV_HEADER}'")));
            }
            saw_header = true;
            continue;
        }
        match record.len() {
            4 => {
                let f = |k: usize| {
                    record[k]
                        .parse::<f64>()
                        .map_err(|e| bad(format!("field {}: {e}", k + 1)))
                };
                let u = |k: usize| {
                    record[k]
                        .parse::<usize>()
                        .map_err(|e| bad(format!("field {}: {e}", k + 1)))
                };
                rows.push(BenchRow {
                    lambda_ratio: f(0)?,
                    n_screened: u(1)?,
                    n_zero: u(2)?,
                    rejection_ratio: f(3)?,
                });
            }
            2 => {
                footer.insert(record[0].to_string(), (record[1].to_string(), line));
            }
            k => return Err(bad(format!("unexpected line with {k} fields"))),
        }
    }
    let get = |key: &str| {
        footer.get(key).ok_or_else(|| Error::Parse {
            line: 0,
            message: format!("missing footer '{key}'"),
        })
    };
    let num = |key: &str| -> Result<f64> {
        let (v, line) = get(key)?;
        v.parse().map_err(|_| Error::Parse {
            line: *line,
            message: format!("{key}: '{v}' is not a number"),
        })
    };
    let (tainted, line) = get("tainted")?;
    let tainted = tainted.parse().map_err(|_| Error::Parse {
        line: *line,
        message: format!("tainted: '{tainted}' is not a boolean"),
    })?;
    Ok(BenchReport {
        rows,
        totals: BenchTotals {
            t_full: num("t_full_seconds")?,
            t_screened: num("t_screened_seconds")?,
            speedup: num("speedup")?,
            tainted,
        },
        metadata: serde_json::from_str(&get("metadata")?.0)?,
    })
}
