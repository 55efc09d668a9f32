//! Command-line interface. [`cli_main`] parses arguments, runs one
//! subcommand and returns the process exit code; output goes to the given
//! writers so the whole surface can be driven from tests.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bench::{measure_speedup, report_to_string, ReportFormat};
use crate::dual::{ScreenOptions, ScreeningGeometry, ScreeningReport};
use crate::error::{Error, Result};
use crate::io::{load_csv, load_libsvm, load_weights, write_csv, Dataset, ResponseColumn};
use crate::quantile::QuantileLevel;
use crate::simgen::{simulate, Covariance, SimSpec, RNG_ID};
use crate::solver::{ratio_grid, solve_path, AdmmVariant, PathResult, SolveOptions};

/// Exit status for a screened feature found nonzero in a reference solve.
pub const EXIT_SAFETY: i32 = 3;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "qrscreen",
    version,
    about = "Safe screening for l1-penalized quantile regression"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
struct Global {
    /// Quantile level in (0, 1).
    #[arg(long, global = true, default_value_t = 0.5)]
    tau: f64,
    /// Number of penalties on the path.
    #[arg(long, global = true, default_value_t = 100)]
    grid_size: usize,
    /// Smallest lambda / lambda_max on the path.
    #[arg(long, global = true, default_value_t = 0.01)]
    lambda_min_ratio: f64,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long, global = true, default_value_t = 1e-6)]
    tol_abs: f64,
    #[arg(long, global = true, default_value_t = 1e-4)]
    tol_rel: f64,
    #[arg(long, global = true, default_value_t = 20_000)]
    max_iter: usize,
    #[arg(long, global = true, default_value_t = 1.0)]
    sigma: f64,
    /// Over-relaxation factor in (0, 2) for the split scheme.
    #[arg(long, global = true, default_value_t = 1.6)]
    relaxation: f64,
    #[arg(long, global = true, value_enum, default_value_t = Variant::Split)]
    variant: Variant,
    /// Write the result here instead of standard output.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Variant {
    Split,
    Linearized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum CovarianceArg {
    Identity,
    Ar1Half,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum InputFormat {
    Csv,
    Libsvm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Args, Serialize)]
struct DataArgs {
    /// Dataset file.
    #[arg(long, short)]
    input: PathBuf,
    /// Defaults to libsvm for .svm/.libsvm files, csv otherwise.
    #[arg(long, value_enum)]
    input_format: Option<InputFormat>,
    /// Response column of a CSV file: header name or 0-based index.
    #[arg(long, default_value = "0")]
    response: String,
}

#[derive(Debug, Clone, Args, Serialize)]
struct SimArgs {
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 2000)]
    p: usize,
    #[arg(long, value_enum, default_value_t = CovarianceArg::Identity)]
    covariance: CovarianceArg,
    /// Degrees of freedom of the Student-t noise.
    #[arg(long, default_value_t = 4)]
    df: u32,
}

#[derive(Debug, Clone, Args, Serialize)]
#[group(required = true, multiple = false)]
struct LambdaArgs {
    /// Absolute penalty.
    #[arg(long)]
    lambda: Option<f64>,
    /// Penalty as a multiple of lambda_max.
    #[arg(long)]
    lambda_ratio: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a simulation dataset as CSV (response column `y`).
    Simulate(SimArgs),
    /// Print the smallest penalty with an all-zero solution.
    LambdaMax {
        #[command(flatten)]
        data: DataArgs,
        /// Penalty weights file (one positive number per feature).
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Screen features at one penalty.
    Screen {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        lambda: LambdaArgs,
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Solve the regularization path.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value_t = Switch::On)]
        screen: Switch,
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Time the path with and without screening.
    Bench {
        /// Benchmark a dataset file instead of a simulation.
        #[arg(long, short)]
        input: Option<PathBuf>,
        #[arg(long, value_enum)]
        input_format: Option<InputFormat>,
        #[arg(long, default_value = "0")]
        response: String,
        /// Timed runs per path; the fastest is reported.
        #[arg(long, default_value_t = 1)]
        repeats: usize,
        #[command(flatten)]
        sim: SimArgs,
    },
}

/// Runs the command line `argv` (program name first) and returns the exit
/// code: 0 on success, [`EXIT_USAGE`] for bad arguments, [`EXIT_SAFETY`] for
/// a screening safety violation and [`EXIT_ERROR`] otherwise.
pub fn cli_main<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match run(&cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            match e {
                Error::SafetyViolation { .. } => EXIT_SAFETY,
                _ => EXIT_ERROR,
            }
        }
    }
}

fn run(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let g = &cli.global;
    let text = match &cli.command {
        Command::Simulate(sim) => {
            let spec = sim_spec(sim, g.seed);
            let (x, y) = simulate(&spec)?;
            let data = Dataset::new(x, y, None)?;
            let mut buf = Vec::new();
            write_csv(&data, &mut buf, "y")?;
            String::from_utf8(buf).expect("csv output is utf-8")
        }
        Command::LambdaMax { data, weights } => {
            let tau = QuantileLevel::new(g.tau)?;
            let ds = load_data(data)?;
            let w = load_optional_weights(weights.as_deref(), ds.p())?;
            let geometry = ScreeningGeometry::new(&ds.x, &ds.y, tau)?;
            let lam_max = match &w {
                Some(w) => geometry.lambda_max_weighted(w)?,
                None => geometry.lambda_max(),
            };
            match g.format {
                Format::Csv => format!("{lam_max}\n"),
                Format::Json => json(&serde_json::json!({
                    "lambda_max": lam_max,
                    "config": config(g, &cli.command),
                }))?,
            }
        }
        Command::Screen {
            data,
            lambda,
            weights,
        } => {
            let tau = QuantileLevel::new(g.tau)?;
            let ds = load_data(data)?;
            let w = load_optional_weights(weights.as_deref(), ds.p())?;
            let geometry = ScreeningGeometry::new(&ds.x, &ds.y, tau)?;
            let lam_max = match &w {
                Some(w) => geometry.lambda_max_weighted(w)?,
                None => geometry.lambda_max(),
            };
            let lam = match (lambda.lambda, lambda.lambda_ratio) {
                (Some(l), _) => l,
                (None, Some(r)) => r * lam_max,
                (None, None) => unreachable!("clap requires one of --lambda, --lambda-ratio"),
            };
            let report = geometry.screen(lam, w.as_deref(), &ScreenOptions::default())?;
            screen_output(&report, &ds, g, &cli.command)?
        }
        Command::Fit {
            data,
            screen,
            weights,
        } => {
            let tau = QuantileLevel::new(g.tau)?;
            let ds = load_data(data)?;
            let w = load_optional_weights(weights.as_deref(), ds.p())?;
            let grid = grid(g)?;
            let path = solve_path(
                &ds.x,
                &ds.y,
                tau,
                &grid,
                *screen == Switch::On,
                w.as_deref(),
                &solve_options(g),
            )?;
            if !path.all_converged() {
                let _ = writeln!(err, "warning: the solver hit --max-iter on some penalties");
            }
            fit_output(&path, &ds, g, &cli.command)?
        }
        Command::Bench {
            input,
            input_format,
            response,
            repeats,
            sim,
        } => {
            let tau = QuantileLevel::new(g.tau)?;
            let grid = grid(g)?;
            let (ds, spec) = match input {
                Some(path) => {
                    let args = DataArgs {
                        input: path.clone(),
                        input_format: *input_format,
                        response: response.clone(),
                    };
                    (load_data(&args)?, None)
                }
                None => {
                    let spec = sim_spec(sim, g.seed);
                    let (x, y) = simulate(&spec)?;
                    (Dataset::new(x, y, None)?, Some(spec))
                }
            };
            let mut report =
                measure_speedup(&ds.x, &ds.y, tau, &grid, &solve_options(g), *repeats)?;
            report.metadata.lambda_min_ratio = g.lambda_min_ratio;
            report.metadata.config = Some(config(g, &cli.command));
            if let Some(spec) = spec {
                report.metadata.seed = Some(spec.seed);
                report.metadata.covariance = Some(spec.covariance);
            }
            if report.totals.tainted {
                let _ = writeln!(
                    err,
                    "warning: the solver hit --max-iter on some penalties; timings are tainted"
                );
            }
            report_to_string(&report, report_format(g.format))?
        }
    };
    match &g.output {
        Some(path) => {
            let mut f = BufWriter::new(File::create(path)?);
            f.write_all(text.as_bytes())?;
            f.flush()?;
        }
        None => out.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn sim_spec(sim: &SimArgs, seed: u64) -> SimSpec {
    let covariance = match sim.covariance {
        CovarianceArg::Identity => Covariance::Identity,
        CovarianceArg::Ar1Half => Covariance::Ar1Half,
    };
    SimSpec {
        df: sim.df,
        ..SimSpec::new(sim.n, sim.p, covariance, seed)
    }
}

fn report_format(f: Format) -> ReportFormat {
    match f {
        Format::Csv => ReportFormat::Csv,
        Format::Json => ReportFormat::Json,
    }
}

fn solve_options(g: &Global) -> SolveOptions {
    SolveOptions {
        tol_abs: g.tol_abs,
        tol_rel: g.tol_rel,
        max_iter: g.max_iter,
        sigma: g.sigma,
        relaxation: g.relaxation,
        variant: match g.variant {
            Variant::Split => AdmmVariant::Split,
            Variant::Linearized => AdmmVariant::Linearized,
        },
        ..SolveOptions::default()
    }
}

fn grid(g: &Global) -> Result<Vec<f64>> {
    if g.grid_size == 0 {
        return Err(Error::InvalidArgument(
            "--grid-size must be at least 1".into(),
        ));
    }
    if !(g.lambda_min_ratio > 0.0 && g.lambda_min_ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "--lambda-min-ratio must lie in (0, 1], got {}",
            g.lambda_min_ratio
        )));
    }
    if g.grid_size > 1 && g.lambda_min_ratio == 1.0 {
        return Err(Error::InvalidArgument(
            "--lambda-min-ratio 1 allows only --grid-size 1".into(),
        ));
    }
    Ok(ratio_grid(g.grid_size, g.lambda_min_ratio))
}

fn load_data(args: &DataArgs) -> Result<Dataset> {
    let format = args
        .input_format
        .unwrap_or_else(|| guess_format(&args.input));
    match format {
        InputFormat::Csv => load_csv(
            &args.input,
            &args.response.parse::<ResponseColumn>().expect("infallible"),
        ),
        InputFormat::Libsvm => load_libsvm(&args.input),
    }
}

fn guess_format(path: &Path) -> InputFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("svm" | "libsvm") => InputFormat::Libsvm,
        _ => InputFormat::Csv,
    }
}

fn load_optional_weights(path: Option<&Path>, p: usize) -> Result<Option<Vec<f64>>> {
    path.map(|path| {
        let w = load_weights(path)?;
        crate::dual::validate_weights(&w, p)?;
        Ok(w)
    })
    .transpose()
}

/// Resolved configuration of a run: every global flag plus the subcommand
/// arguments.
fn config(g: &Global, command: &Command) -> serde_json::Value {
    let mut value = serde_json::to_value(g).expect("flags serialize");
    let (name, args) = match command {
        Command::Simulate(sim) => ("simulate", serde_json::json!({ "simulation": sim })),
        Command::LambdaMax { data, weights } => (
            "lambda-max",
            serde_json::json!({ "data": data, "weights": weights }),
        ),
        Command::Screen {
            data,
            lambda,
            weights,
        } => (
            "screen",
            serde_json::json!({ "data": data, "lambda": lambda.lambda, "lambda_ratio": lambda.lambda_ratio, "weights": weights }),
        ),
        Command::Fit {
            data,
            screen,
            weights,
        } => (
            "fit",
            serde_json::json!({ "data": data, "screen": screen, "weights": weights }),
        ),
        Command::Bench {
            input,
            input_format,
            response,
            repeats,
            sim,
        } => (
            "bench",
            serde_json::json!({
                "input": input,
                "input_format": input_format,
                "response": response,
                "repeats": repeats,
                "simulation": sim,
            }),
        ),
    };
    value["command"] = name.into();
    value["arguments"] = args;
    value["rng"] = RNG_ID.into();
    value
}

fn json(value: &impl Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn metadata_line(value: &serde_json::Value) -> String {
    format!("metadata,\"{}\"\n", value.to_string().replace('"', "\"\""))
}

fn screen_output(
    report: &ScreeningReport,
    ds: &Dataset,
    g: &Global,
    command: &Command,
) -> Result<String> {
    let cfg = config(g, command);
    match g.format {
        Format::Json => json(&serde_json::json!({
            "lambda": report.lambda,
            "lambda_max": report.lambda_max_used,
            "eliminated": report.eliminated,
            "eliminated_names": report.eliminated.iter().map(|&j| &ds.feature_names[j]).collect::<Vec<_>>(),
            "bounds": report.bounds,
            "config": cfg,
        })),
        Format::Csv => {
            let mut dropped = vec![false; ds.p()];
            report.eliminated.iter().for_each(|&j| dropped[j] = true);
            let mut s = String::from("feature,name,p_plus,p_minus,eliminated\n");
            for (j, b) in report.bounds.iter().enumerate() {
                s += &format!(
                    "{j},{},{},{},{}\n",
                    csv_field(&ds.feature_names[j]),
                    b.p_plus,
                    b.p_minus,
                    dropped[j]
                );
            }
            s += &format!("lambda,{}\n", report.lambda);
            s += &format!("lambda_max,{}\n", report.lambda_max_used);
            s += &format!("n_eliminated,{}\n", report.eliminated.len());
            s += &metadata_line(&cfg);
            Ok(s)
        }
    }
}

fn fit_output(path: &PathResult, ds: &Dataset, g: &Global, command: &Command) -> Result<String> {
    let cfg = config(g, command);
    match g.format {
        Format::Json => json(&serde_json::json!({
            "path": path,
            "feature_names": ds.feature_names,
            "config": cfg,
        })),
        Format::Csv => {
            let mut s =
                String::from("lambda_ratio,lambda,n_eliminated,n_nonzero,kkt_residual,iterations,converged,seconds");
            for name in &ds.feature_names {
                s.push(',');
                s += &csv_field(name);
            }
            s.push('\n');
            for k in 0..path.lambdas.len() {
                let beta = &path.betas[k];
                s += &format!(
                    "{},{},{},{},{},{},{},{}",
                    path.ratios[k],
                    path.lambdas[k],
                    path.eliminated[k].len(),
                    beta.iter().filter(|&&b| b != 0.0).count(),
                    path.kkt_residuals[k],
                    path.iterations[k],
                    path.converged[k],
                    path.solve_times[k]
                );
                for b in beta {
                    s += &format!(",{b}");
                }
                s.push('\n');
            }
            s += &format!("lambda_max,{}\n", path.lambda_max);
            s += &metadata_line(&cfg);
            Ok(s)
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
