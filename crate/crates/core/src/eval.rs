//! Dose grids, MSE scoring, benchmark orchestration and the discrete oracle suite.

use std::collections::BTreeMap;
use std::time::Instant;

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{gen_discrete_toy, gen_synthetic_lowdim, DiscreteToyWorld, ProxyDataset, SyntheticTruth, TruthMoments};
use crate::doubly_robust::{
    dr_dose_response, jitter_bridge, Bridge, DoseResponseCurve, JitterTarget, MethodTag,
};
use crate::error::{Error, Result};
use crate::io::{csv_text, fmt_f64};
use crate::kernels::{quantile_in_place, KernelSet};
use crate::pipeline::{derive_seed, fit_pipeline, KernelOptions, Lambdas, PipelineConfig};

/// `n_points` equally spaced values between the 10th and 90th percentiles of
/// a scalar treatment, as an `n x 1` matrix.
///
/// A constant treatment yields a single-point grid and a warning on stderr.
pub fn default_dose_grid(data: &ProxyDataset, n_points: usize) -> Result<Mat<f64>> {
    if data.a.ncols() != 1 {
        return Err(Error::MultiDimTreatmentNeedsExplicitGrid);
    }
    if n_points == 0 {
        return Err(Error::InvalidArgument("grid needs at least one point".into()));
    }
    let mut a: Vec<f64> = (0..data.len()).map(|i| data.a[(i, 0)]).collect();
    let lo = quantile_in_place(&mut a, 0.1);
    let hi = quantile_in_place(&mut a, 0.9);
    if hi <= lo {
        eprintln!("warning: treatment is constant; dose grid collapses to a single value");
        return Ok(Mat::from_fn(1, 1, |_, _| lo));
    }
    if n_points == 1 {
        return Ok(Mat::from_fn(1, 1, |_, _| 0.5 * (lo + hi)));
    }
    let step = (hi - lo) / (n_points - 1) as f64;
    Ok(Mat::from_fn(n_points, 1, |i, _| {
        if i + 1 == n_points {
            hi
        } else {
            lo + step * i as f64
        }
    }))
}

/// Mean squared deviation of the curve's headline estimate from the truth.
pub fn mse(curve: &DoseResponseCurve, truth: &SyntheticTruth) -> Result<f64> {
    let est = curve.estimate();
    let same_grid = curve.a_grid.len() == truth.dose_grid.len()
        && est.len() == truth.theta.len()
        && curve
            .a_grid
            .iter()
            .zip(&truth.dose_grid)
            .all(|(a, g)| a.len() == 1 && a[0] == *g);
    if !same_grid {
        return Err(Error::GridMismatch);
    }
    Ok(mse_values(est, &truth.theta))
}

pub(crate) fn mse_values(est: &[f64], truth: &[f64]) -> f64 {
    est.iter()
        .zip(truth)
        .map(|(e, t)| (e - t) * (e - t))
        .sum::<f64>()
        / est.len() as f64
}

/// Hex SHA-256 fingerprint of a set of truth moments.
pub fn truth_hash(m: &TruthMoments) -> String {
    let mut h = Sha256::new();
    for v in [m.cos_c, m.sin_c, m.cos_2c, m.sin_2c] {
        h.update(v.to_bits().to_le_bytes());
    }
    h.update((m.mc_samples as u64).to_le_bytes());
    h.update(m.seed.to_le_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Truth draws keyed by `(mc_samples, seed)`, sampled once each.
#[derive(Default)]
pub struct TruthCache {
    entries: BTreeMap<(usize, u64), TruthMoments>,
}

impl TruthCache {
    pub fn get(&mut self, mc_samples: usize, seed: u64) -> Result<TruthMoments> {
        if let Some(m) = self.entries.get(&(mc_samples, seed)) {
            return Ok(*m);
        }
        let m = TruthMoments::sample(mc_samples, seed)?;
        self.entries.insert((mc_samples, seed), m);
        Ok(m)
    }
}

/// Benchmark settings for the synthetic low-dimensional problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub methods: Vec<MethodTag>,
    pub sample_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub kernels: KernelOptions,
    pub lambdas: Lambdas,
    pub nystrom: Option<usize>,
    pub sigma_phi: f64,
    pub mmr_holdout: f64,
    pub grid_points: usize,
    pub mc_samples: usize,
    pub truth_seed: u64,
    /// Record wall time; disable for byte-identical reports.
    pub timings: bool,
}

/// Seed of the cached ground truth unless configured otherwise.
pub const DEFAULT_TRUTH_SEED: u64 = 20_250_601;

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            methods: vec![MethodTag::Drkpv, MethodTag::Drpmmr, MethodTag::Kpv],
            sample_sizes: vec![2000],
            seeds: (0..10).collect(),
            kernels: KernelOptions::default(),
            lambdas: Lambdas::default(),
            nystrom: None,
            sigma_phi: 1.0,
            mmr_holdout: 0.1,
            grid_points: 100,
            mc_samples: 1_000_000,
            truth_seed: DEFAULT_TRUTH_SEED,
            timings: true,
        }
    }
}

/// Settings a report was produced with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub lambdas: Lambdas,
    pub kernels: KernelSet,
    pub kap_kernels: KernelSet,
    pub quantile: f64,
    pub nystrom: Option<usize>,
    pub sigma_phi: f64,
    pub mc_samples: usize,
    pub truth_seed: u64,
}

/// One benchmark cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub method: MethodTag,
    pub t: usize,
    pub seed: u64,
    pub a_grid: Vec<f64>,
    pub estimate: Vec<f64>,
    pub truth: Vec<f64>,
    pub mse: f64,
    /// Largest deviation from `theta_dr = theta1 + theta2 - theta3`.
    pub identity_residual: f64,
    pub wall_time_seconds: f64,
    pub truth_hash: String,
    pub config: ConfigEcho,
    pub curve: DoseResponseCurve,
}

impl BenchmarkReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn file_stem(&self) -> String {
        format!("{}_t{}_seed{}", self.method, self.t, self.seed)
    }
}

fn cell_time(method: MethodTag, t: &crate::pipeline::Timings) -> f64 {
    let mut total = t.grams;
    if method.needs_kpv() {
        total += t.kpv;
    }
    if method.needs_pmmr() {
        total += t.pmmr;
    }
    if method.needs_kap() {
        total += t.kap;
    }
    if method.is_doubly_robust() {
        total += t.slack;
    }
    total
}

/// Fit every requested method on one synthetic draw and score each one.
pub fn run_cell(
    config: &BenchmarkConfig,
    t: usize,
    seed: u64,
    truth: &mut TruthCache,
) -> Result<Vec<BenchmarkReport>> {
    let data = gen_synthetic_lowdim(t, seed)?;
    let pipeline = PipelineConfig {
        methods: config.methods.clone(),
        kernels: config.kernels.clone(),
        lambdas: config.lambdas,
        nystrom: config.nystrom,
        sigma_phi: config.sigma_phi,
        mmr_holdout: config.mmr_holdout,
        seed,
    };
    let fitted = fit_pipeline(&data, &pipeline)?;
    let grid = default_dose_grid(&data, config.grid_points)?;
    let grid_vec: Vec<f64> = (0..grid.nrows()).map(|i| grid[(i, 0)]).collect();
    let moments = truth.get(config.mc_samples, config.truth_seed)?;
    let truth_curve = moments.truth(&grid_vec);
    let hash = truth_hash(&moments);
    let echo = ConfigEcho {
        lambdas: fitted.lambdas,
        kernels: fitted.kernels.clone(),
        kap_kernels: fitted.kap_kernels.clone(),
        quantile: config.kernels.quantile,
        nystrom: config.nystrom,
        sigma_phi: config.sigma_phi,
        mc_samples: config.mc_samples,
        truth_seed: config.truth_seed,
    };
    let mut out = Vec::with_capacity(config.methods.len());
    for &method in &config.methods {
        let clock = Instant::now();
        let curve = fitted.curve(method, grid.as_ref())?;
        let eval_time = clock.elapsed().as_secs_f64();
        out.push(BenchmarkReport {
            method,
            t,
            seed,
            a_grid: grid_vec.clone(),
            estimate: curve.estimate().to_vec(),
            truth: truth_curve.theta.clone(),
            mse: mse(&curve, &truth_curve)?,
            identity_residual: curve.identity_residual(),
            wall_time_seconds: if config.timings {
                cell_time(method, &fitted.timings) + eval_time
            } else {
                0.0
            },
            truth_hash: hash.clone(),
            config: echo.clone(),
            curve,
        });
    }
    Ok(out)
}

/// One report per `(method, t, seed)`, sorted by that key.
pub fn run_benchmark(config: &BenchmarkConfig) -> Result<Vec<BenchmarkReport>> {
    validate_benchmark(config)?;
    let mut truth = TruthCache::default();
    let mut out = Vec::new();
    for &t in &config.sample_sizes {
        for &seed in &config.seeds {
            out.extend(run_cell(config, t, seed, &mut truth)?);
        }
    }
    out.sort_by(|a, b| (a.method, a.t, a.seed).cmp(&(b.method, b.t, b.seed)));
    Ok(out)
}

fn validate_benchmark(c: &BenchmarkConfig) -> Result<()> {
    let bad = |path: &str, msg: &str| {
        Err(Error::Config {
            path: path.into(),
            message: msg.into(),
        })
    };
    if c.methods.is_empty() {
        return bad("benchmark.methods", "at least one method is required");
    }
    if c.sample_sizes.is_empty() {
        return bad("benchmark.sample_sizes", "at least one sample size is required");
    }
    if let Some(t) = c.sample_sizes.iter().find(|&&t| t < 4) {
        return bad("benchmark.sample_sizes", &format!("sample size {t} is below 4"));
    }
    if c.seeds.is_empty() {
        return bad("benchmark.seeds", "at least one seed is required");
    }
    if c.grid_points == 0 {
        return bad("benchmark.grid_points", "must be positive");
    }
    if c.mc_samples < 10_000 {
        return bad("benchmark.mc_samples", "must be at least 10000");
    }
    Ok(())
}

/// Flat summary with one row per report.
pub fn summary_csv(reports: &[BenchmarkReport]) -> String {
    let mut s = String::from("method,t,seed,mse,wall_time\n");
    for r in reports {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.method,
            r.t,
            r.seed,
            fmt_f64(r.mse),
            fmt_f64(r.wall_time_seconds)
        ));
    }
    s
}

/// Curve CSV with columns `a, theta1, theta2, theta3, theta_dr`; components a
/// method does not produce are left empty.
pub fn curve_csv(curve: &DoseResponseCurve) -> String {
    let d = curve.a_grid.first().map_or(1, Vec::len);
    let mut header: Vec<String> = if d == 1 {
        vec!["a".into()]
    } else {
        (1..=d).map(|k| format!("a{k}")).collect()
    };
    header.extend(["theta1", "theta2", "theta3", "theta_dr"].map(String::from));
    let pick = |v: &Option<Vec<f64>>, g: usize| v.as_ref().map(|v| v[g]);
    let rows: Vec<Vec<Option<f64>>> = (0..curve.len())
        .map(|g| {
            let mut row: Vec<Option<f64>> = curve.a_grid[g].iter().map(|&x| Some(x)).collect();
            row.extend([
                pick(&curve.theta1, g),
                pick(&curve.theta2, g),
                pick(&curve.theta3, g),
                pick(&curve.theta_dr, g),
            ]);
            row
        })
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    csv_text(&header, &rows)
}

/// Deviations measured on one discrete world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldCheck {
    pub seed: u64,
    /// `|DR(h0, phi0) - theta|`, maximized over both treatment levels.
    pub dr_exact: f64,
    /// DR with the treatment bridge replaced by a random table.
    pub dr_outcome_only: f64,
    /// DR with the outcome bridge replaced by a random table.
    pub dr_treatment_only: f64,
    /// `|E[phi0 h0 | a] - theta|`.
    pub slack: f64,
    /// `|E[h0(W, a)] - theta|`.
    pub outcome_functional: f64,
    /// `|E[Y phi0(Z, a) | a] - theta|`.
    pub treatment_functional: f64,
    pub max_deviation: f64,
    pub passed: bool,
}

/// Result of [`oracle_suite`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub tolerance: f64,
    pub worlds: Vec<WorldCheck>,
    pub passed: bool,
}

/// Tolerance of every exact-enumeration identity.
pub const ORACLE_TOLERANCE: f64 = 1e-10;

fn random_table(rng: &mut ChaCha8Rng) -> [[f64; 2]; 2] {
    let mut t = [[0.0; 2]; 2];
    for row in &mut t {
        for v in row.iter_mut() {
            *v = rng.random_range(-2.0..2.0);
        }
    }
    t
}

/// Check the identification identities on one world.
pub fn check_world(world: &DiscreteToyWorld, seed: u64) -> Result<WorldCheck> {
    let h0 = world.outcome_bridge()?;
    let phi0 = world.treatment_bridge()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 99));
    let h_bad = random_table(&mut rng);
    let phi_bad = random_table(&mut rng);
    let worst = |f: &dyn Fn(usize) -> f64| (0..2).map(|a| (f(a) - world.theta(a)).abs()).fold(0.0, f64::max);
    let dr_exact = worst(&|a| world.dr_functional(&h0, &phi0, a));
    let dr_outcome_only = worst(&|a| world.dr_functional(&h0, &phi_bad, a));
    let dr_treatment_only = worst(&|a| world.dr_functional(&h_bad, &phi0, a));
    let slack = worst(&|a| world.slack_functional(&h0, &phi0, a));
    let outcome_functional = worst(&|a| world.outcome_functional(&h0, a));
    let treatment_functional = worst(&|a| world.treatment_functional(&phi0, a));
    let max_deviation = [
        dr_exact,
        dr_outcome_only,
        dr_treatment_only,
        slack,
        outcome_functional,
        treatment_functional,
    ]
    .into_iter()
    .fold(0.0, f64::max);
    Ok(WorldCheck {
        seed,
        dr_exact,
        dr_outcome_only,
        dr_treatment_only,
        slack,
        outcome_functional,
        treatment_functional,
        max_deviation,
        passed: max_deviation <= ORACLE_TOLERANCE,
    })
}

/// Draw a world from `seed`, moving to the next derived seed while the bridge
/// systems are singular.
pub fn world_from_seed(seed: u64) -> Result<(DiscreteToyWorld, u64)> {
    let mut s = seed;
    for _ in 0..1000 {
        match gen_discrete_toy(s) {
            Ok(w) => return Ok((w, s)),
            Err(Error::SingularBridgeSystem) => s = derive_seed(s, 1),
            Err(e) => return Err(e),
        }
    }
    Err(Error::SingularBridgeSystem)
}

/// Run the exact-enumeration identities over `n_worlds` seeded worlds.
pub fn oracle_suite(n_worlds: usize, seed: u64) -> Result<OracleReport> {
    if n_worlds == 0 {
        return Err(Error::InvalidArgument("need at least one world".into()));
    }
    let mut worlds = Vec::with_capacity(n_worlds);
    for i in 0..n_worlds {
        let (world, s) = world_from_seed(derive_seed(seed, i as u64))?;
        worlds.push(check_world(&world, s)?);
    }
    let passed = worlds.iter().all(|w| w.passed);
    Ok(OracleReport {
        tolerance: ORACLE_TOLERANCE,
        worlds,
        passed,
    })
}

/// One paired clean/jittered run of the misspecification experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MisspecRun {
    pub seed: u64,
    pub a_grid: Vec<f64>,
    pub truth: Vec<f64>,
    pub dr_clean: Vec<f64>,
    pub dr_jittered: Vec<f64>,
    /// The curve of the perturbed bridge alone (theta1 or theta2).
    pub bridge_only_clean: Vec<f64>,
    pub bridge_only_jittered: Vec<f64>,
    pub slack_clean: Vec<f64>,
    pub slack_jittered: Vec<f64>,
    /// The untouched bridge's curve, identical in both runs.
    pub other_bridge: Vec<f64>,
}

fn sup_dev(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

impl MisspecRun {
    /// `sup |dr_jittered - dr_clean|`.
    pub fn dr_deviation(&self) -> f64 {
        sup_dev(&self.dr_jittered, &self.dr_clean)
    }

    /// `sup |bridge_only_jittered - bridge_only_clean|`.
    pub fn bridge_deviation(&self) -> f64 {
        sup_dev(&self.bridge_only_jittered, &self.bridge_only_clean)
    }

    /// Largest deviation from `delta dr = delta bridge - delta slack`.
    pub fn linear_response_residual(&self) -> f64 {
        (0..self.a_grid.len())
            .map(|g| {
                let d_dr = self.dr_jittered[g] - self.dr_clean[g];
                let d_b = self.bridge_only_jittered[g] - self.bridge_only_clean[g];
                let d_s = self.slack_jittered[g] - self.slack_clean[g];
                (d_dr - d_b + d_s).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// What the misspecification experiment perturbs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MisspecSpec {
    /// `drkpv` or `drpmmr`.
    pub method: MethodTag,
    pub target: JitterTarget,
    /// Standard deviation of the coefficient noise.
    pub sigma: f64,
    pub jitter_seed: u64,
}

/// Paired clean and jittered DR fits on synthetic data of size `t`, one run per
/// seed of `config.seeds`. Every run shares `grid`, or the default grid of the
/// first seed's data when `grid` is `None`.
pub fn run_misspecification(
    config: &BenchmarkConfig,
    t: usize,
    spec: &MisspecSpec,
    grid: Option<Mat<f64>>,
) -> Result<Vec<MisspecRun>> {
    if !spec.method.is_doubly_robust() {
        return Err(Error::Config {
            path: "method".into(),
            message: format!("misspecification needs drkpv or drpmmr, got {}", spec.method),
        });
    }
    validate_benchmark(config)?;
    let mut grid = grid;
    let mut truth_cache = TruthCache::default();
    let moments = truth_cache.get(config.mc_samples, config.truth_seed)?;
    let mut runs = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let data = gen_synthetic_lowdim(t, seed)?;
        let pipeline = PipelineConfig {
            methods: vec![spec.method],
            kernels: config.kernels.clone(),
            lambdas: config.lambdas,
            nystrom: config.nystrom,
            sigma_phi: config.sigma_phi,
            mmr_holdout: config.mmr_holdout,
            seed,
        };
        let fitted = fit_pipeline(&data, &pipeline)?;
        let g = match &grid {
            Some(g) => g.clone(),
            None => {
                let g = default_dose_grid(&data, config.grid_points)?;
                grid = Some(g.clone());
                g
            }
        };
        let est = fitted.estimator(spec.method)?;
        let clean = dr_dose_response(&est, g.as_ref())?;
        let noise_seed = derive_seed(spec.jitter_seed, seed);
        let jittered_est = match spec.target {
            JitterTarget::Outcome => match jitter_bridge(&Bridge::Outcome(est.outcome.clone()), spec.sigma, noise_seed)? {
                Bridge::Outcome(o) => est.with_outcome(o),
                Bridge::Treatment(_) => unreachable!(),
            },
            JitterTarget::Treatment => match jitter_bridge(&Bridge::Treatment(est.treatment.clone()), spec.sigma, noise_seed)? {
                Bridge::Treatment(k) => est.with_treatment(k),
                Bridge::Outcome(_) => unreachable!(),
            },
        };
        let jittered = dr_dose_response(&jittered_est, g.as_ref())?;
        let part = |c: &DoseResponseCurve, outcome: bool| -> Vec<f64> {
            let v = if outcome { &c.theta1 } else { &c.theta2 };
            v.clone().expect("doubly robust curve has every component")
        };
        let on_outcome = spec.target == JitterTarget::Outcome;
        let a_grid: Vec<f64> = (0..g.nrows()).map(|i| g[(i, 0)]).collect();
        runs.push(MisspecRun {
            seed,
            truth: moments.truth(&a_grid).theta,
            a_grid,
            dr_clean: clean.estimate().to_vec(),
            dr_jittered: jittered.estimate().to_vec(),
            bridge_only_clean: part(&clean, on_outcome),
            bridge_only_jittered: part(&jittered, on_outcome),
            slack_clean: clean.theta3.clone().expect("slack"),
            slack_jittered: jittered.theta3.clone().expect("slack"),
            other_bridge: part(&clean, !on_outcome),
        });
    }
    Ok(runs)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-grid-point means and sample standard deviations across runs, with
/// columns `a, truth, dr_clean, dr_jittered, bridge_only_clean,
/// bridge_only_jittered, slack_jittered` followed by a `_std` column for each
/// series.
pub fn misspec_csv(runs: &[MisspecRun]) -> Result<String> {
    let first = runs
        .first()
        .ok_or_else(|| Error::InvalidArgument("no misspecification runs".into()))?;
    if runs.iter().any(|r| r.a_grid != first.a_grid) {
        return Err(Error::GridMismatch);
    }
    let series: [(&str, fn(&MisspecRun) -> &Vec<f64>); 6] = [
        ("truth", |r| &r.truth),
        ("dr_clean", |r| &r.dr_clean),
        ("dr_jittered", |r| &r.dr_jittered),
        ("bridge_only_clean", |r| &r.bridge_only_clean),
        ("bridge_only_jittered", |r| &r.bridge_only_jittered),
        ("slack_jittered", |r| &r.slack_jittered),
    ];
    let mut header = vec!["a".to_string()];
    header.extend(series.iter().map(|(n, _)| n.to_string()));
    header.extend(series.iter().skip(1).map(|(n, _)| format!("{n}_std")));
    let rows: Vec<Vec<Option<f64>>> = (0..first.a_grid.len())
        .map(|g| {
            let stats: Vec<(f64, f64)> = series
                .iter()
                .map(|(_, f)| mean_std(&runs.iter().map(|r| f(r)[g]).collect::<Vec<_>>()))
                .collect();
            let mut row = vec![Some(first.a_grid[g])];
            row.extend(stats.iter().map(|s| Some(s.0)));
            row.extend(stats.iter().skip(1).map(|s| Some(s.1)));
            row
        })
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    Ok(csv_text(&header, &rows))
}
