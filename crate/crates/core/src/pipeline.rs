//! End-to-end fitting: kernels, splits, regularizer resolution and curves.

use std::time::Instant;

use faer::MatRef;
use serde::{Deserialize, Serialize};

use crate::data::{split_stages, ProxyDataset};
use crate::doubly_robust::{
    dr_dose_response, tune_lambda_dr_with, DoseResponseCurve, DrEstimator, MethodTag,
};
use crate::error::{Error, Result};
use crate::kernels::{Grams, Kernel, KernelFamily, KernelSet};
use crate::outcome_bridge::{
    kpv_fit_tuned, pmmr_fit_tuned, KpvModel, KpvTuning, OutcomeModel, PmmrModel, PmmrTuning,
};
use crate::ridge::{default_loocv_grid, LoocvBasis, LoocvReport, NystromConfig};
use crate::treatment_bridge::{kap_fit_tuned, tune_lambda_phi3_with, KapModel, KapTuning};

/// Derive an independent stream seed from a run seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut x = seed ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03);
    // splitmix64 finalizer
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// How kernels are chosen for each variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelOptions {
    /// Family used for A, Z and W.
    pub family: KernelFamily,
    /// Quantile of pairwise squared distances for the median heuristic.
    pub quantile: f64,
    /// Use a columnwise Gaussian on W inside KAP.
    pub kap_columnwise_w: bool,
    /// Explicit kernels override the heuristic per variable.
    pub a: Option<Kernel>,
    pub z: Option<Kernel>,
    pub w: Option<Kernel>,
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self {
            family: KernelFamily::Gaussian,
            quantile: 0.5,
            kap_columnwise_w: true,
            a: None,
            z: None,
            w: None,
        }
    }
}

impl KernelOptions {
    /// Kernels for the outcome-side fits and for KAP.
    pub fn resolve(&self, data: &ProxyDataset) -> Result<(KernelSet, KernelSet)> {
        let pick = |k: &Option<Kernel>, x: MatRef<'_, f64>| match k {
            Some(k) => Ok(k.clone()),
            None => Kernel::from_median_heuristic(self.family, x, self.quantile),
        };
        let base = KernelSet {
            a: pick(&self.a, data.a.as_ref())?,
            z: pick(&self.z, data.z.as_ref())?,
            w: pick(&self.w, data.w.as_ref())?,
        };
        let mut kap = base.clone();
        if self.kap_columnwise_w && self.w.is_none() && self.family == KernelFamily::Gaussian {
            kap.w = Kernel::from_median_heuristic(
                KernelFamily::ColumnwiseGaussian,
                data.w.as_ref(),
                self.quantile,
            )?;
        }
        Ok((base, kap))
    }
}

/// Every regularizer; `None` means tune by the default procedure.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Lambdas {
    pub h1: Option<f64>,
    pub h2: Option<f64>,
    pub mmr: Option<f64>,
    pub phi1: Option<f64>,
    pub phi2: Option<f64>,
    pub phi3: Option<f64>,
    pub dr: Option<f64>,
}

impl Lambdas {
    pub fn all(v: f64) -> Self {
        Self {
            h1: Some(v),
            h2: Some(v),
            mmr: Some(v),
            phi1: Some(v),
            phi2: Some(v),
            phi3: Some(v),
            dr: Some(v),
        }
    }
}

/// What to fit and how.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub methods: Vec<MethodTag>,
    pub kernels: KernelOptions,
    pub lambdas: Lambdas,
    /// Landmark count; `None` fits with full kernels.
    pub nystrom: Option<usize>,
    /// Complexity-penalty scale for the `lambda_phi2` selection.
    pub sigma_phi: f64,
    /// Fraction of samples held out when tuning `lambda_mmr`.
    pub mmr_holdout: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            methods: vec![MethodTag::Drkpv],
            kernels: KernelOptions::default(),
            lambdas: Lambdas::default(),
            nystrom: None,
            sigma_phi: 1.0,
            mmr_holdout: 0.1,
            seed: 0,
        }
    }
}

/// Tuning curves of every regularizer that was tuned.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TuningReports {
    pub kpv: Option<KpvTuning>,
    pub pmmr: Option<PmmrTuning>,
    pub kap: Option<KapTuning>,
    pub phi3: Option<LoocvReport>,
    pub dr: Option<LoocvReport>,
}

/// Wall time of each fitted piece, in seconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub grams: f64,
    pub kpv: f64,
    pub pmmr: f64,
    pub kap: f64,
    pub slack: f64,
}

/// All models a configuration asked for, fitted on one dataset.
pub struct Fitted {
    pub kernels: KernelSet,
    pub kap_kernels: KernelSet,
    pub kpv: Option<KpvModel>,
    pub pmmr: Option<PmmrModel>,
    pub kap: Option<KapModel>,
    /// Resolved regularizers; entries stay `None` when the piece was not fitted.
    pub lambdas: Lambdas,
    pub tuning: TuningReports,
    pub timings: Timings,
    /// Slack-term estimator template (outcome slot holds whichever bridge was
    /// fitted first); swap the outcome bridge with [`DrEstimator::with_outcome`].
    estimator: Option<DrEstimator>,
    nystrom: Option<NystromConfig>,
    w: faer::Mat<f64>,
}

fn nystrom_cfg(landmarks: Option<usize>, seed: u64) -> Option<NystromConfig> {
    landmarks.map(|p| NystromConfig {
        landmarks: p,
        seed: derive_seed(seed, 4),
    })
}

/// Fit every model `config.methods` needs on `data`.
pub fn fit_pipeline(data: &ProxyDataset, config: &PipelineConfig) -> Result<Fitted> {
    if config.methods.is_empty() {
        return Err(Error::InvalidArgument("no method requested".into()));
    }
    let need = |f: fn(MethodTag) -> bool| config.methods.iter().any(|&m| f(m));
    let (need_kpv, need_pmmr, need_kap) = (
        need(MethodTag::needs_kpv),
        need(MethodTag::needs_pmmr),
        need(MethodTag::needs_kap),
    );
    let need_dr = need(MethodTag::is_doubly_robust);
    let nystrom = nystrom_cfg(config.nystrom, config.seed);
    let mut timings = Timings::default();
    let mut lambdas = Lambdas::default();
    let mut tuning = TuningReports::default();

    let clock = Instant::now();
    let (kernels, kap_kernels) = config.kernels.resolve(data)?;
    let grams = Grams::new(&kernels, data.a.as_ref(), data.z.as_ref(), data.w.as_ref())?;
    let kap_grams = if kap_kernels.w != kernels.w && need_kap {
        Some(grams.with_w_kernel(&kap_kernels.w, data.w.as_ref())?)
    } else {
        None
    };
    timings.grams = clock.elapsed().as_secs_f64();

    let mut kpv = None;
    if need_kpv {
        let clock = Instant::now();
        let split = split_stages(data.len(), derive_seed(config.seed, 1))?;
        let (m, r) = kpv_fit_tuned(
            data,
            &grams,
            &split,
            &kernels,
            config.lambdas.h1,
            config.lambdas.h2,
            nystrom,
        )?;
        lambdas.h1 = Some(m.lambda_h1);
        lambdas.h2 = Some(m.lambda_h2);
        tuning.kpv = Some(r);
        kpv = Some(m);
        timings.kpv = clock.elapsed().as_secs_f64();
    }

    let mut pmmr = None;
    if need_pmmr {
        let clock = Instant::now();
        let (m, r) = pmmr_fit_tuned(
            data,
            &grams,
            &kernels,
            config.lambdas.mmr,
            config.mmr_holdout,
            derive_seed(config.seed, 3),
        )?;
        lambdas.mmr = Some(m.lambda_mmr);
        tuning.pmmr = Some(r);
        pmmr = Some(m);
        timings.pmmr = clock.elapsed().as_secs_f64();
    }

    // K_AA eigenbasis shared by the lambda_phi3 and lambda_DR selections.
    let needs_basis = (need_kap && config.lambdas.phi3.is_none())
        || (need_dr && config.lambdas.dr.is_none());
    let basis = if needs_basis {
        let clock = Instant::now();
        let b = LoocvBasis::new(grams.a.as_ref())?;
        timings.slack += clock.elapsed().as_secs_f64();
        Some(b)
    } else {
        None
    };

    let mut kap = None;
    if need_kap {
        let clock = Instant::now();
        let g = kap_grams.as_ref().unwrap_or(&grams);
        let split = split_stages(data.len(), derive_seed(config.seed, 2))?;
        let (m, r) = kap_fit_tuned(
            data,
            g,
            &split,
            &kap_kernels,
            config.lambdas.phi1,
            config.lambdas.phi2,
            config.sigma_phi,
            nystrom,
        )?;
        lambdas.phi1 = Some(m.lambda_phi1);
        lambdas.phi2 = Some(m.lambda_phi2);
        tuning.kap = Some(r);
        lambdas.phi3 = Some(match config.lambdas.phi3 {
            Some(v) => v,
            None => {
                let r = tune_lambda_phi3_with(
                    basis.as_ref().expect("basis"),
                    data,
                    g,
                    &default_loocv_grid(),
                )?;
                let v = r.selected;
                tuning.phi3 = Some(r);
                v
            }
        });
        kap = Some(m);
        timings.kap = clock.elapsed().as_secs_f64();
    }

    let mut estimator = None;
    if let Some(kap_model) = &kap {
        let clock = Instant::now();
        let lambda_dr = if need_dr {
            Some(match config.lambdas.dr {
                Some(v) => v,
                None => {
                    let r = tune_lambda_dr_with(
                        basis.as_ref().expect("basis"),
                        &grams,
                        &default_loocv_grid(),
                    )?;
                    let v = r.selected;
                    tuning.dr = Some(r);
                    v
                }
            })
        } else {
            None
        };
        lambdas.dr = lambda_dr;
        let outcome = kpv
            .clone()
            .map(OutcomeModel::Kpv)
            .or_else(|| pmmr.clone().map(OutcomeModel::Pmmr));
        if let (Some(outcome), Some(lambda_dr)) = (outcome, lambda_dr) {
            estimator = Some(DrEstimator::new(
                data,
                grams.a.as_ref(),
                outcome,
                kap_model.clone(),
                lambda_dr,
                lambdas.phi3.expect("phi3 resolved"),
                nystrom,
            )?);
        }
        timings.slack += clock.elapsed().as_secs_f64();
    }

    Ok(Fitted {
        kernels,
        kap_kernels,
        kpv,
        pmmr,
        kap,
        lambdas,
        tuning,
        timings,
        estimator,
        nystrom,
        w: data.w.clone(),
    })
}

impl Fitted {
    /// The DR estimator built on `outcome`.
    pub fn estimator_with(&self, outcome: OutcomeModel) -> Result<DrEstimator> {
        self.estimator
            .as_ref()
            .map(|e| e.with_outcome(outcome))
            .ok_or_else(|| Error::InvalidArgument("doubly robust pieces were not fitted".into()))
    }

    /// The DR estimator for `method` (DRKPV or DRPMMR).
    pub fn estimator(&self, method: MethodTag) -> Result<DrEstimator> {
        let outcome = match method {
            MethodTag::Drkpv => self.kpv.clone().map(OutcomeModel::Kpv),
            MethodTag::Drpmmr => self.pmmr.clone().map(OutcomeModel::Pmmr),
            _ => None,
        }
        .ok_or_else(|| Error::InvalidArgument(format!("{method} was not fitted")))?;
        self.estimator_with(outcome)
    }

    pub fn outcome(&self, method: MethodTag) -> Result<OutcomeModel> {
        match method {
            MethodTag::Drkpv | MethodTag::Kpv => self.kpv.clone().map(OutcomeModel::Kpv),
            MethodTag::Drpmmr | MethodTag::Pmmr => self.pmmr.clone().map(OutcomeModel::Pmmr),
            MethodTag::Kap => None,
        }
        .ok_or_else(|| Error::InvalidArgument(format!("no outcome bridge for {method}")))
    }

    /// The curve of `method` on `a_grid` (one row per grid point).
    pub fn curve(&self, method: MethodTag, a_grid: MatRef<'_, f64>) -> Result<DoseResponseCurve> {
        if a_grid.nrows() == 0 {
            return Err(Error::InvalidArgument("dose grid is empty".into()));
        }
        match method {
            MethodTag::Drkpv | MethodTag::Drpmmr => dr_dose_response(&self.estimator(method)?, a_grid),
            MethodTag::Kpv | MethodTag::Pmmr => {
                let theta1 = self.outcome(method)?.dose_response(self.w.as_ref(), a_grid)?;
                Ok(DoseResponseCurve::outcome_only(method, a_grid, theta1))
            }
            MethodTag::Kap => {
                let kap = self
                    .kap
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument("kap was not fitted".into()))?;
                let est = self.estimator.as_ref();
                let theta2 = match est {
                    Some(e) => e.theta2(a_grid)?,
                    None => kap.dose_response(
                        a_grid,
                        self.lambdas.phi3.expect("phi3 resolved"),
                        self.nystrom,
                    )?,
                };
                Ok(DoseResponseCurve::treatment_only(a_grid, theta2))
            }
        }
    }
}
