//! The `proxal` command line.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use faer::Mat;
use serde::Serialize;

use crate::config::{DataSource, GridSpec, Overrides, RunConfig};
use crate::data::{gen_synthetic_lowdim, load_csv, write_csv, ProxyDataset, TruthMoments};
use crate::doubly_robust::{DoseResponseCurve, MethodTag};
use crate::error::{Error, Result};
use crate::eval::{
    curve_csv, default_dose_grid, misspec_csv, mse, oracle_suite, run_benchmark,
    run_misspecification, summary_csv, MisspecSpec,
};
use crate::io::{csv_text, write_atomic};
use crate::kernels::KernelSet;
use crate::pipeline::{fit_pipeline, Lambdas, Timings, TuningReports};
use crate::ridge::LoocvReport;

/// Exit code for invalid configuration, arguments or input files.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code for numerical failures.
pub const EXIT_NUMERIC: i32 = 3;
/// Exit code for any other failure, including a failed oracle check.
pub const EXIT_OTHER: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "proxal", version, about = "Doubly robust kernel proxy causal learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset and its ground-truth dose response.
    Generate(Common),
    /// Fit one method and write its dose-response curve.
    Fit(Common),
    /// Score methods over seeds and sample sizes against the ground truth.
    Benchmark(Common),
    /// Compare clean and coefficient-jittered doubly robust fits.
    Misspecify(Common),
    /// Write the tuning curves of every regularizer.
    Tune(Common),
    /// Check the identification identities on exact discrete worlds.
    OracleCheck(Common),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// drkpv, drpmmr, kpv, pmmr or kap.
    #[arg(long, value_name = "NAME")]
    pub method: Option<String>,
    /// Sample size.
    #[arg(long, value_name = "N")]
    pub t: Option<usize>,
    /// Nyström landmark count; 0 uses full kernels.
    #[arg(long, value_name = "P")]
    pub nystrom: Option<usize>,
    /// Standard deviation of the coefficient jitter.
    #[arg(long, value_name = "X")]
    pub jitter_sigma: Option<f64>,
    /// Number of seeds (benchmark, misspecify) or worlds (oracle-check).
    #[arg(long, value_name = "N")]
    pub runs: Option<usize>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            out: self.out.clone(),
            seed: self.seed,
            method: self.method.clone(),
            t: self.t,
            nystrom: self.nystrom,
            jitter_sigma: self.jitter_sigma,
            runs: self.runs,
        }
    }

    fn resolve(&self) -> Result<RunConfig> {
        RunConfig::resolve(self.config.as_deref(), &self.overrides())
    }
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_config() || matches!(e, Error::Io { .. } | Error::Csv(_) | Error::Json(_)) {
        EXIT_CONFIG
    } else if e.is_numeric() {
        EXIT_NUMERIC
    } else {
        EXIT_OTHER
    }
}

/// Apply `PROXAL_THREADS` to the linear-algebra thread pool.
pub fn apply_thread_cap() -> Result<()> {
    let Ok(raw) = std::env::var("PROXAL_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| Error::Config {
        path: "PROXAL_THREADS".into(),
        message: format!("expected a positive integer, got `{raw}`"),
    })?;
    match n {
        0 => {
            return Err(Error::Config {
                path: "PROXAL_THREADS".into(),
                message: "must be at least 1".into(),
            })
        }
        1 => faer::set_global_parallelism(faer::Par::Seq),
        n => faer::set_global_parallelism(faer::Par::rayon(n)),
    }
    Ok(())
}

/// Parse `args`, run the command and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Run one command; `Ok` carries the exit code for non-error failures.
pub fn run(command: &Command) -> Result<i32> {
    apply_thread_cap()?;
    match command {
        Command::Generate(c) => cmd_generate(&c.resolve()?).map(|_| 0),
        Command::Fit(c) => cmd_fit(&c.resolve()?).map(|_| 0),
        Command::Benchmark(c) => cmd_benchmark(&c.resolve()?).map(|_| 0),
        Command::Misspecify(c) => cmd_misspecify(&c.resolve()?).map(|_| 0),
        Command::Tune(c) => cmd_tune(&c.resolve()?).map(|_| 0),
        Command::OracleCheck(c) => {
            let passed = cmd_oracle_check(&c.resolve()?)?;
            Ok(if passed { 0 } else { EXIT_OTHER })
        }
    }
}

fn load_data(cfg: &RunConfig) -> Result<ProxyDataset> {
    match &cfg.data {
        DataSource::Synthetic { t } => gen_synthetic_lowdim(*t, cfg.seed),
        DataSource::Csv { path, schema } => load_csv(path, schema.as_ref()),
    }
}

/// The evaluation grid for `data`, one row per point.
pub fn resolve_grid(cfg: &RunConfig, data: &ProxyDataset) -> Result<Mat<f64>> {
    match &cfg.grid {
        GridSpec::Auto(n) => default_dose_grid(data, *n),
        GridSpec::Values(v) => {
            let d = data.a.ncols();
            if v.len() % d != 0 {
                return Err(Error::Config {
                    path: "grid.values".into(),
                    message: format!("{} values do not split into rows of width {d}", v.len()),
                });
            }
            Ok(Mat::from_fn(v.len() / d, d, |i, j| v[i * d + j]))
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

fn truth_moments(cfg: &RunConfig) -> Result<TruthMoments> {
    TruthMoments::sample(cfg.benchmark.mc_samples, cfg.benchmark.truth_seed)
}

/// `data.csv` and `truth.csv` (columns `a, theta, std_error`) in the output directory.
pub fn cmd_generate(cfg: &RunConfig) -> Result<()> {
    let DataSource::Synthetic { .. } = cfg.data else {
        return Err(Error::Config {
            path: "data.source".into(),
            message: "generate only produces synthetic data".into(),
        });
    };
    let data = load_data(cfg)?;
    let grid = resolve_grid(cfg, &data)?;
    if grid.ncols() != 1 {
        return Err(Error::MultiDimTreatmentNeedsExplicitGrid);
    }
    let a: Vec<f64> = (0..grid.nrows()).map(|i| grid[(i, 0)]).collect();
    let truth = truth_moments(cfg)?.truth(&a);
    write_csv(&data, &cfg.out_dir.join("data.csv"))?;
    let rows: Vec<Vec<Option<f64>>> = (0..a.len())
        .map(|g| vec![Some(a[g]), Some(truth.theta[g]), Some(truth.std_error[g])])
        .collect();
    write_atomic(
        &cfg.out_dir.join("truth.csv"),
        csv_text(&["a", "theta", "std_error"], &rows).as_bytes(),
    )
}

/// Contents of `report.json` written by `fit`.
#[derive(Clone, Debug, Serialize)]
pub struct FitReport {
    pub method: MethodTag,
    pub t: usize,
    pub seed: u64,
    pub lambdas: Lambdas,
    pub kernels: KernelSet,
    pub kap_kernels: KernelSet,
    pub nystrom: Option<usize>,
    /// Present when `output.timings` is on.
    pub timings: Option<Timings>,
    /// MSE against the ground truth, for synthetic data.
    pub mse: Option<f64>,
    pub identity_residual: f64,
    pub curve: DoseResponseCurve,
}

/// Fit the configured method; writes `curve.csv` and `report.json`.
pub fn cmd_fit(cfg: &RunConfig) -> Result<FitReport> {
    let data = load_data(cfg)?;
    let grid = resolve_grid(cfg, &data)?;
    let fitted = fit_pipeline(&data, &cfg.pipeline(vec![cfg.method]))?;
    let curve = fitted.curve(cfg.method, grid.as_ref())?;
    let mse = match cfg.data {
        DataSource::Synthetic { .. } if grid.ncols() == 1 => {
            let a: Vec<f64> = (0..grid.nrows()).map(|i| grid[(i, 0)]).collect();
            Some(mse(&curve, &truth_moments(cfg)?.truth(&a))?)
        }
        _ => None,
    };
    let report = FitReport {
        method: cfg.method,
        t: data.len(),
        seed: cfg.seed,
        lambdas: fitted.lambdas,
        kernels: fitted.kernels.clone(),
        kap_kernels: fitted.kap_kernels.clone(),
        nystrom: cfg.nystrom,
        timings: cfg.timings.then_some(fitted.timings),
        mse,
        identity_residual: curve.identity_residual(),
        curve,
    };
    write_atomic(&cfg.out_dir.join("curve.csv"), curve_csv(&report.curve).as_bytes())?;
    write_json(&cfg.out_dir.join("report.json"), &report)?;
    Ok(report)
}

fn write_benchmark(cfg: &RunConfig, landmarks: Option<usize>, summary: &str, cells: &str) -> Result<()> {
    let reports = run_benchmark(&cfg.benchmark_config(landmarks))?;
    for r in &reports {
        let path = cfg.out_dir.join(cells).join(format!("{}.json", r.file_stem()));
        let mut s = r.to_json()?;
        s.push('\n');
        write_atomic(&path, s.as_bytes())?;
    }
    write_atomic(&cfg.out_dir.join(summary), summary_csv(&reports).as_bytes())
}

/// `summary.csv` and `cells/*.json`; each Nyström sweep entry `P` adds
/// `summary_pP.csv` and `cells_pP/`.
pub fn cmd_benchmark(cfg: &RunConfig) -> Result<()> {
    write_benchmark(cfg, cfg.nystrom, "summary.csv", "cells")?;
    for &p in &cfg.benchmark.nystrom_sweep {
        write_benchmark(cfg, Some(p), &format!("summary_p{p}.csv"), &format!("cells_p{p}"))?;
    }
    Ok(())
}

/// `misspecify.csv` with per-point means and standard deviations over seeds,
/// and `misspecify.json` with every run.
pub fn cmd_misspecify(cfg: &RunConfig) -> Result<()> {
    let t = match cfg.data {
        DataSource::Synthetic { t } => t,
        DataSource::Csv { .. } => {
            return Err(Error::Config {
                path: "data.source".into(),
                message: "misspecify runs on synthetic data".into(),
            })
        }
    };
    let spec = MisspecSpec {
        method: cfg.method,
        target: cfg.jitter.target,
        sigma: cfg.jitter.sigma,
        jitter_seed: cfg.jitter.seed,
    };
    let mut bench = cfg.benchmark_config(cfg.nystrom);
    bench.seeds = (0..cfg.jitter.runs as u64).map(|i| cfg.seed + i).collect();
    let grid = match &cfg.grid {
        GridSpec::Values(v) => Some(Mat::from_fn(v.len(), 1, |i, _| v[i])),
        GridSpec::Auto(_) => None,
    };
    let runs = run_misspecification(&bench, t, &spec, grid)?;
    write_atomic(&cfg.out_dir.join("misspecify.csv"), misspec_csv(&runs)?.as_bytes())?;
    write_json(&cfg.out_dir.join("misspecify.json"), &runs)
}

/// Every tuning curve of one fit.
#[derive(Clone, Debug, Serialize)]
pub struct TuneReport {
    pub method: MethodTag,
    pub t: usize,
    pub seed: u64,
    pub selected: Lambdas,
    pub curves: TuningReports,
}

fn tuning_rows(r: &TuningReports) -> Vec<(&'static str, &LoocvReport)> {
    let kpv = r.kpv.as_ref();
    let kap = r.kap.as_ref();
    [
        ("h1", kpv.and_then(|k| k.h1.as_ref())),
        ("h2", kpv.and_then(|k| k.h2.as_ref())),
        ("mmr", r.pmmr.as_ref().and_then(|p| p.mmr.as_ref())),
        ("phi1", kap.and_then(|k| k.phi1.as_ref())),
        ("phi2", kap.and_then(|k| k.phi2.as_ref())),
        ("phi3", r.phi3.as_ref()),
        ("dr", r.dr.as_ref()),
    ]
    .into_iter()
    .filter_map(|(n, rep)| rep.map(|rep| (n, rep)))
    .collect()
}

/// `tuning.json` and `tuning.csv` (columns `parameter, lambda, loss, selected`).
pub fn cmd_tune(cfg: &RunConfig) -> Result<TuneReport> {
    let data = load_data(cfg)?;
    let fitted = fit_pipeline(&data, &cfg.pipeline(vec![cfg.method]))?;
    let report = TuneReport {
        method: cfg.method,
        t: data.len(),
        seed: cfg.seed,
        selected: fitted.lambdas,
        curves: fitted.tuning,
    };
    let mut csv = String::from("parameter,lambda,loss,selected\n");
    for (name, rep) in tuning_rows(&report.curves) {
        for (l, loss) in rep.grid.iter().zip(&rep.losses) {
            csv.push_str(&format!(
                "{name},{},{},{}\n",
                crate::io::fmt_f64(*l),
                crate::io::fmt_f64(*loss),
                u8::from(*l == rep.selected)
            ));
        }
    }
    write_atomic(&cfg.out_dir.join("tuning.csv"), csv.as_bytes())?;
    write_json(&cfg.out_dir.join("tuning.json"), &report)?;
    Ok(report)
}

/// `oracle.json`; returns whether every world passed.
pub fn cmd_oracle_check(cfg: &RunConfig) -> Result<bool> {
    let report = oracle_suite(cfg.oracle_worlds, cfg.seed)?;
    write_json(&cfg.out_dir.join("oracle.json"), &report)?;
    let worst = report.worlds.iter().map(|w| w.max_deviation).fold(0.0, f64::max);
    println!(
        "{} of {} worlds passed; max deviation {worst:e}",
        report.worlds.iter().filter(|w| w.passed).count(),
        report.worlds.len()
    );
    Ok(report.passed)
}
