//! TOML run configuration, validated into typed settings with field paths.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::CsvSchema;
use crate::doubly_robust::{JitterTarget, MethodTag};
use crate::error::{Error, Result};
use crate::eval::{BenchmarkConfig, DEFAULT_TRUTH_SEED};
use crate::kernels::{Kernel, KernelFamily};
use crate::pipeline::{KernelOptions, Lambdas, PipelineConfig};

/// A regularizer given either as a number or as the name of its tuning rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSetting {
    Value(f64),
    Rule(String),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawLambdas {
    pub h1: Option<LambdaSetting>,
    pub h2: Option<LambdaSetting>,
    pub mmr: Option<LambdaSetting>,
    pub phi1: Option<LambdaSetting>,
    pub phi2: Option<LambdaSetting>,
    pub phi3: Option<LambdaSetting>,
    pub dr: Option<LambdaSetting>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawData {
    /// `synthetic` or `csv`.
    pub source: Option<String>,
    pub t: Option<usize>,
    pub path: Option<PathBuf>,
    pub schema: Option<CsvSchema>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawKernel {
    pub family: String,
    pub p: Option<u32>,
    pub lengthscale: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawKernels {
    pub family: Option<String>,
    pub p: Option<u32>,
    pub quantile: Option<f64>,
    pub kap_columnwise_w: Option<bool>,
    pub a: Option<RawKernel>,
    pub z: Option<RawKernel>,
    pub w: Option<RawKernel>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawGrid {
    pub n_points: Option<usize>,
    pub values: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawNystrom {
    pub landmarks: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawJitter {
    pub target: Option<String>,
    pub sigma: Option<f64>,
    pub seed: Option<u64>,
    pub runs: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawOutput {
    pub dir: Option<PathBuf>,
    pub timings: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawBenchmark {
    pub methods: Option<Vec<String>>,
    pub sample_sizes: Option<Vec<usize>>,
    pub runs: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub mc_samples: Option<usize>,
    pub truth_seed: Option<u64>,
    pub nystrom_sweep: Option<Vec<usize>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawOracle {
    pub worlds: Option<usize>,
}

/// The configuration document exactly as written.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub method: Option<String>,
    pub seed: Option<u64>,
    pub sigma_phi: Option<f64>,
    pub mmr_holdout: Option<f64>,
    #[serde(default)]
    pub data: RawData,
    #[serde(default)]
    pub kernels: RawKernels,
    #[serde(default)]
    pub lambdas: RawLambdas,
    #[serde(default)]
    pub grid: RawGrid,
    #[serde(default)]
    pub nystrom: RawNystrom,
    #[serde(default)]
    pub jitter: RawJitter,
    #[serde(default)]
    pub output: RawOutput,
    #[serde(default)]
    pub benchmark: RawBenchmark,
    #[serde(default)]
    pub oracle: RawOracle,
}

/// Where observations come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DataSource {
    Synthetic { t: usize },
    Csv { path: PathBuf, schema: Option<CsvSchema> },
}

/// Evaluation grid for the treatment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridSpec {
    Auto(usize),
    Values(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JitterSpec {
    pub target: JitterTarget,
    pub sigma: f64,
    pub seed: u64,
    pub runs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub methods: Vec<MethodTag>,
    pub sample_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub mc_samples: usize,
    pub truth_seed: u64,
    pub nystrom_sweep: Vec<usize>,
}

/// A validated run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub method: MethodTag,
    pub seed: u64,
    pub data: DataSource,
    pub kernels: KernelOptions,
    pub lambdas: Lambdas,
    pub grid: GridSpec,
    pub nystrom: Option<usize>,
    pub sigma_phi: f64,
    pub mmr_holdout: f64,
    pub jitter: JitterSpec,
    pub out_dir: PathBuf,
    pub timings: bool,
    pub benchmark: BenchmarkSpec,
    pub oracle_worlds: usize,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub method: Option<String>,
    pub t: Option<usize>,
    pub nystrom: Option<usize>,
    pub jitter_sigma: Option<f64>,
    pub runs: Option<usize>,
}

fn bad<T>(path: &str, message: impl Into<String>) -> Result<T> {
    Err(Error::Config {
        path: path.into(),
        message: message.into(),
    })
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let message = inner.message().to_string();
            Error::Config {
                path: if path == "." { String::new() } else { path },
                message,
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = &o.out {
            self.output.dir = Some(v.clone());
        }
        if let Some(v) = o.seed {
            self.seed = Some(v);
        }
        if let Some(v) = &o.method {
            self.method = Some(v.clone());
        }
        if let Some(v) = o.t {
            self.data.t = Some(v);
            self.benchmark.sample_sizes = Some(vec![v]);
        }
        if let Some(v) = o.nystrom {
            self.nystrom.landmarks = Some(v);
        }
        if let Some(v) = o.jitter_sigma {
            self.jitter.sigma = Some(v);
        }
        if let Some(v) = o.runs {
            self.benchmark.runs = Some(v);
            self.benchmark.seeds = None;
            self.jitter.runs = Some(v);
            self.oracle.worlds = Some(v);
        }
    }

    pub fn validate(&self) -> Result<RunConfig> {
        let method = match &self.method {
            Some(m) => parse_method(m, "method")?,
            None => MethodTag::Drkpv,
        };
        let seed = self.seed.unwrap_or(0);
        let data = self.validate_data()?;
        let kernels = self.validate_kernels()?;
        let lambdas = self.validate_lambdas()?;
        let grid = match (&self.grid.values, self.grid.n_points) {
            (Some(_), Some(_)) => return bad("grid", "give either `values` or `n_points`, not both"),
            (Some(v), None) => {
                if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
                    return bad("grid.values", "must be a nonempty list of finite numbers");
                }
                GridSpec::Values(v.clone())
            }
            (None, Some(0)) => return bad("grid.n_points", "must be positive"),
            (None, n) => GridSpec::Auto(n.unwrap_or(100)),
        };
        let nystrom = match self.nystrom.landmarks {
            None | Some(0) => None,
            Some(p) => Some(p),
        };
        let sigma_phi = self.sigma_phi.unwrap_or(1.0);
        if !(sigma_phi.is_finite() && sigma_phi > 0.0) {
            return bad("sigma_phi", "must be positive");
        }
        let mmr_holdout = self.mmr_holdout.unwrap_or(0.1);
        if !(mmr_holdout > 0.0 && mmr_holdout < 1.0) {
            return bad("mmr_holdout", "must lie strictly between 0 and 1");
        }
        let jitter = JitterSpec {
            target: match self.jitter.target.as_deref() {
                None | Some("outcome") => JitterTarget::Outcome,
                Some("treatment") => JitterTarget::Treatment,
                Some(other) => {
                    return bad(
                        "jitter.target",
                        format!("expected `outcome` or `treatment`, got `{other}`"),
                    )
                }
            },
            sigma: self.jitter.sigma.unwrap_or(0.2),
            seed: self.jitter.seed.unwrap_or(seed),
            runs: self.jitter.runs.unwrap_or(5),
        };
        if !(jitter.sigma.is_finite() && jitter.sigma >= 0.0) {
            return bad("jitter.sigma", "must be a non-negative number");
        }
        if jitter.runs == 0 {
            return bad("jitter.runs", "must be positive");
        }
        let benchmark = self.validate_benchmark(seed)?;
        let oracle_worlds = self.oracle.worlds.unwrap_or(20);
        if oracle_worlds == 0 {
            return bad("oracle.worlds", "must be positive");
        }
        Ok(RunConfig {
            method,
            seed,
            data,
            kernels,
            lambdas,
            grid,
            nystrom,
            sigma_phi,
            mmr_holdout,
            jitter,
            out_dir: self.output.dir.clone().unwrap_or_else(|| PathBuf::from("out")),
            timings: self.output.timings.unwrap_or(true),
            benchmark,
            oracle_worlds,
        })
    }

    fn validate_data(&self) -> Result<DataSource> {
        match self.data.source.as_deref() {
            None | Some("synthetic") => {
                if self.data.path.is_some() {
                    return bad("data.path", "only valid with source = \"csv\"");
                }
                let t = self.data.t.unwrap_or(500);
                if t < 4 {
                    return bad("data.t", format!("need at least 4 samples, got {t}"));
                }
                Ok(DataSource::Synthetic { t })
            }
            Some("csv") => match &self.data.path {
                Some(p) => Ok(DataSource::Csv {
                    path: p.clone(),
                    schema: self.data.schema.clone(),
                }),
                None => bad("data.path", "required with source = \"csv\""),
            },
            Some(other) => bad(
                "data.source",
                format!("expected `synthetic` or `csv`, got `{other}`"),
            ),
        }
    }

    fn validate_kernels(&self) -> Result<KernelOptions> {
        let k = &self.kernels;
        let family = parse_family(k.family.as_deref().unwrap_or("gaussian"), k.p, "kernels")?;
        let quantile = k.quantile.unwrap_or(0.5);
        if !(quantile > 0.0 && quantile < 1.0) {
            return bad("kernels.quantile", "must lie strictly between 0 and 1");
        }
        let explicit = |raw: &Option<RawKernel>, path: &str| -> Result<Option<Kernel>> {
            match raw {
                None => Ok(None),
                Some(r) => {
                    let fam = parse_family(&r.family, r.p, path)?;
                    Kernel::new(fam, r.lengthscale.clone()).map(Some).or_else(|e| {
                        bad(&format!("{path}.lengthscale"), e.to_string())
                    })
                }
            }
        };
        Ok(KernelOptions {
            family,
            quantile,
            kap_columnwise_w: k.kap_columnwise_w.unwrap_or(true),
            a: explicit(&k.a, "kernels.a")?,
            z: explicit(&k.z, "kernels.z")?,
            w: explicit(&k.w, "kernels.w")?,
        })
    }

    fn validate_lambdas(&self) -> Result<Lambdas> {
        let l = &self.lambdas;
        let one = |v: &Option<LambdaSetting>, name: &str, rule: &str| -> Result<Option<f64>> {
            let path = format!("lambdas.{name}");
            match v {
                None => Ok(None),
                Some(LambdaSetting::Value(x)) if x.is_finite() && *x > 0.0 => Ok(Some(*x)),
                Some(LambdaSetting::Value(x)) => bad(&path, format!("must be positive, got {x}")),
                Some(LambdaSetting::Rule(r)) if r == rule || r == "auto" => Ok(None),
                Some(LambdaSetting::Rule(r)) => {
                    bad(&path, format!("`{r}` is not a tuning rule for {name}; use `{rule}` or a number"))
                }
            }
        };
        Ok(Lambdas {
            h1: one(&l.h1, "h1", "loocv")?,
            h2: one(&l.h2, "h2", "validation")?,
            mmr: one(&l.mmr, "mmr", "validation")?,
            phi1: one(&l.phi1, "phi1", "loocv")?,
            phi2: one(&l.phi2, "phi2", "validation")?,
            phi3: one(&l.phi3, "phi3", "loocv")?,
            dr: one(&l.dr, "dr", "loocv")?,
        })
    }

    fn validate_benchmark(&self, seed: u64) -> Result<BenchmarkSpec> {
        let b = &self.benchmark;
        let methods = match &b.methods {
            Some(ms) if ms.is_empty() => return bad("benchmark.methods", "must not be empty"),
            Some(ms) => ms
                .iter()
                .enumerate()
                .map(|(i, m)| parse_method(m, &format!("benchmark.methods[{i}]")))
                .collect::<Result<Vec<_>>>()?,
            None => vec![MethodTag::Drkpv, MethodTag::Drpmmr, MethodTag::Kpv],
        };
        let sample_sizes = b.sample_sizes.clone().unwrap_or_else(|| vec![2000]);
        if sample_sizes.is_empty() {
            return bad("benchmark.sample_sizes", "must not be empty");
        }
        if let Some(t) = sample_sizes.iter().find(|&&t| t < 4) {
            return bad("benchmark.sample_sizes", format!("sample size {t} is below 4"));
        }
        let seeds = match (&b.seeds, b.runs) {
            (Some(s), _) if s.is_empty() => return bad("benchmark.seeds", "must not be empty"),
            (Some(s), _) => s.clone(),
            (None, Some(0)) => return bad("benchmark.runs", "must be positive"),
            (None, r) => (0..r.unwrap_or(10) as u64).map(|i| seed + i).collect(),
        };
        let mc_samples = b.mc_samples.unwrap_or(1_000_000);
        if mc_samples < 10_000 {
            return bad("benchmark.mc_samples", "must be at least 10000");
        }
        let nystrom_sweep = b.nystrom_sweep.clone().unwrap_or_default();
        if nystrom_sweep.contains(&0) {
            return bad("benchmark.nystrom_sweep", "landmark counts must be positive");
        }
        Ok(BenchmarkSpec {
            methods,
            sample_sizes,
            seeds,
            mc_samples,
            truth_seed: b.truth_seed.unwrap_or(DEFAULT_TRUTH_SEED),
            nystrom_sweep,
        })
    }
}

fn parse_method(s: &str, path: &str) -> Result<MethodTag> {
    s.parse().or_else(|_| {
        bad(
            path,
            format!("unknown method `{s}`; expected drkpv, drpmmr, kpv, pmmr or kap"),
        )
    })
}

fn parse_family(name: &str, p: Option<u32>, path: &str) -> Result<KernelFamily> {
    match (name, p) {
        ("gaussian", None) => Ok(KernelFamily::Gaussian),
        ("columnwise_gaussian", None) => Ok(KernelFamily::ColumnwiseGaussian),
        ("matern", Some(p)) => Ok(KernelFamily::Matern { p }),
        ("matern", None) => bad(&format!("{path}.p"), "matern needs a smoothness `p`"),
        ("gaussian" | "columnwise_gaussian", Some(_)) => {
            bad(&format!("{path}.p"), "only the matern family takes `p`")
        }
        (other, _) => bad(
            &format!("{path}.family"),
            format!("unknown kernel family `{other}`"),
        ),
    }
}

impl RunConfig {
    /// Load, override and validate in one step; `None` uses defaults only.
    pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut raw = match path {
            Some(p) => RawConfig::load(p)?,
            None => RawConfig::default(),
        };
        raw.apply(overrides);
        raw.validate()
    }

    pub fn pipeline(&self, methods: Vec<MethodTag>) -> PipelineConfig {
        PipelineConfig {
            methods,
            kernels: self.kernels.clone(),
            lambdas: self.lambdas,
            nystrom: self.nystrom,
            sigma_phi: self.sigma_phi,
            mmr_holdout: self.mmr_holdout,
            seed: self.seed,
        }
    }

    pub fn benchmark_config(&self, nystrom: Option<usize>) -> BenchmarkConfig {
        BenchmarkConfig {
            methods: self.benchmark.methods.clone(),
            sample_sizes: self.benchmark.sample_sizes.clone(),
            seeds: self.benchmark.seeds.clone(),
            kernels: self.kernels.clone(),
            lambdas: self.lambdas,
            nystrom,
            sigma_phi: self.sigma_phi,
            mmr_holdout: self.mmr_holdout,
            grid_points: match self.grid {
                GridSpec::Auto(n) => n,
                GridSpec::Values(_) => 100,
            },
            mc_samples: self.benchmark.mc_samples,
            truth_seed: self.benchmark.truth_seed,
            timings: self.timings,
        }
    }
}
