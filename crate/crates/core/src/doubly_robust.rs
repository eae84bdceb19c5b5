//! Doubly robust combination `theta_1 + theta_2 - theta_3` and coefficient jitter.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use faer::{Mat, MatRef};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::ProxyDataset;
use crate::error::{Error, Result};
use crate::kernels::{Grams, Kernel};
use crate::linalg::hadamard;
use crate::outcome_bridge::{stage_nystrom, OutcomeModel};
use crate::ridge::{loocv, LoocvBasis, LoocvReport, NystromConfig, Smoother};
use crate::treatment_bridge::KapModel;

/// Which estimator produced a curve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodTag {
    Drkpv,
    Drpmmr,
    Kpv,
    Pmmr,
    Kap,
}

impl MethodTag {
    pub const ALL: [MethodTag; 5] = [
        MethodTag::Drkpv,
        MethodTag::Drpmmr,
        MethodTag::Kpv,
        MethodTag::Pmmr,
        MethodTag::Kap,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodTag::Drkpv => "drkpv",
            MethodTag::Drpmmr => "drpmmr",
            MethodTag::Kpv => "kpv",
            MethodTag::Pmmr => "pmmr",
            MethodTag::Kap => "kap",
        }
    }

    pub fn is_doubly_robust(self) -> bool {
        matches!(self, MethodTag::Drkpv | MethodTag::Drpmmr)
    }

    pub fn needs_kpv(self) -> bool {
        matches!(self, MethodTag::Drkpv | MethodTag::Kpv)
    }

    pub fn needs_pmmr(self) -> bool {
        matches!(self, MethodTag::Drpmmr | MethodTag::Pmmr)
    }

    pub fn needs_kap(self) -> bool {
        matches!(self, MethodTag::Drkpv | MethodTag::Drpmmr | MethodTag::Kap)
    }
}

impl fmt::Display for MethodTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodTag::ALL
            .into_iter()
            .find(|m| m.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method `{s}`")))
    }
}

/// A dose-response estimate with its decomposition. Components a method does
/// not produce are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoseResponseCurve {
    pub method: MethodTag,
    /// One row per grid point.
    pub a_grid: Vec<Vec<f64>>,
    pub theta1: Option<Vec<f64>>,
    pub theta2: Option<Vec<f64>>,
    pub theta3: Option<Vec<f64>>,
    pub theta_dr: Option<Vec<f64>>,
}

impl DoseResponseCurve {
    pub fn outcome_only(method: MethodTag, a_grid: MatRef<'_, f64>, theta1: Vec<f64>) -> Self {
        Self {
            method,
            a_grid: grid_rows(a_grid),
            theta1: Some(theta1),
            theta2: None,
            theta3: None,
            theta_dr: None,
        }
    }

    pub fn treatment_only(a_grid: MatRef<'_, f64>, theta2: Vec<f64>) -> Self {
        Self {
            method: MethodTag::Kap,
            a_grid: grid_rows(a_grid),
            theta1: None,
            theta2: Some(theta2),
            theta3: None,
            theta_dr: None,
        }
    }

    /// Builds `theta_dr = theta1 + theta2 - theta3` elementwise.
    pub fn doubly_robust(
        method: MethodTag,
        a_grid: MatRef<'_, f64>,
        theta1: Vec<f64>,
        theta2: Vec<f64>,
        theta3: Vec<f64>,
    ) -> Self {
        let theta_dr = (0..theta1.len())
            .map(|g| theta1[g] + theta2[g] - theta3[g])
            .collect();
        Self {
            method,
            a_grid: grid_rows(a_grid),
            theta1: Some(theta1),
            theta2: Some(theta2),
            theta3: Some(theta3),
            theta_dr: Some(theta_dr),
        }
    }

    /// The method's headline estimate.
    pub fn estimate(&self) -> &[f64] {
        let e = match self.method {
            MethodTag::Drkpv | MethodTag::Drpmmr => &self.theta_dr,
            MethodTag::Kpv | MethodTag::Pmmr => &self.theta1,
            MethodTag::Kap => &self.theta2,
        };
        e.as_deref().unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.a_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a_grid.is_empty()
    }

    /// Largest `|theta_dr - (theta1 + theta2 - theta3)|`; zero when not DR.
    pub fn identity_residual(&self) -> f64 {
        match (&self.theta1, &self.theta2, &self.theta3, &self.theta_dr) {
            (Some(t1), Some(t2), Some(t3), Some(dr)) => (0..dr.len())
                .map(|g| (dr[g] - (t1[g] + t2[g] - t3[g])).abs())
                .fold(0.0, f64::max),
            _ => 0.0,
        }
    }
}

pub(crate) fn grid_rows(a: MatRef<'_, f64>) -> Vec<Vec<f64>> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect())
        .collect()
}

/// Doubly robust estimator over one dataset: an outcome bridge, the KAP
/// treatment bridge, and the cached slack-term smoother.
#[derive(Clone)]
pub struct DrEstimator {
    pub outcome: OutcomeModel,
    pub treatment: KapModel,
    pub lambda_dr: f64,
    pub lambda_phi3: f64,
    pub nystrom: Option<NystromConfig>,
    a: Mat<f64>,
    z: Mat<f64>,
    w: Mat<f64>,
    kernel_a: Kernel,
    xi: Arc<Smoother>,
    yz: Arc<Smoother>,
}

impl DrEstimator {
    pub fn new(
        data: &ProxyDataset,
        k_aa: MatRef<'_, f64>,
        outcome: OutcomeModel,
        treatment: KapModel,
        lambda_dr: f64,
        lambda_phi3: f64,
        nystrom: Option<NystromConfig>,
    ) -> Result<Self> {
        let t = data.len();
        let xi = Smoother::new(k_aa, t, lambda_dr, stage_nystrom(nystrom, 21))?;
        let yz = Smoother::new(k_aa, t, lambda_phi3, stage_nystrom(nystrom, 13))?;
        Ok(Self {
            kernel_a: treatment.kernels.a.clone(),
            outcome,
            treatment,
            lambda_dr,
            lambda_phi3,
            nystrom,
            a: data.a.clone(),
            z: data.z.clone(),
            w: data.w.clone(),
            xi: Arc::new(xi),
            yz: Arc::new(yz),
        })
    }

    /// Copy sharing the cached factorizations with the outcome bridge swapped.
    pub fn with_outcome(&self, outcome: OutcomeModel) -> Self {
        Self {
            outcome,
            ..self.clone()
        }
    }

    /// Copy sharing the cached factorizations with the treatment bridge swapped.
    pub fn with_treatment(&self, treatment: KapModel) -> Self {
        Self {
            treatment,
            ..self.clone()
        }
    }

    fn k_grid(&self, a_grid: MatRef<'_, f64>) -> Result<Mat<f64>> {
        self.kernel_a.gram(self.a.as_ref(), a_grid)
    }

    /// `xi(a) = (K_AA + t lambda_DR I)^-1 K_Aa`, one column per grid point.
    pub fn xi(&self, a_grid: MatRef<'_, f64>) -> Result<Mat<f64>> {
        self.xi.weights(self.k_grid(a_grid)?.as_ref())
    }

    /// `theta_3(a) = sum_i xi_i(a) phi(z_i, a) h(w_i, a)`.
    pub fn slack_term(&self, a_grid: MatRef<'_, f64>) -> Result<Vec<f64>> {
        let xi = self.xi(a_grid)?;
        let h = self.outcome.eval_matrix(self.w.as_ref(), a_grid)?;
        let phi = self.treatment.eval_matrix(self.z.as_ref(), a_grid)?;
        let prod = hadamard(hadamard(xi.as_ref(), h.as_ref()).as_ref(), phi.as_ref());
        Ok((0..prod.ncols())
            .map(|g| (0..prod.nrows()).map(|i| prod[(i, g)]).sum())
            .collect())
    }

    pub fn theta1(&self, a_grid: MatRef<'_, f64>) -> Result<Vec<f64>> {
        self.outcome.dose_response(self.w.as_ref(), a_grid)
    }

    pub fn theta2(&self, a_grid: MatRef<'_, f64>) -> Result<Vec<f64>> {
        let c = self.yz.weights(self.k_grid(a_grid)?.as_ref())?;
        self.treatment.dose_response_from_weights(c.as_ref(), a_grid)
    }

    pub fn method(&self) -> MethodTag {
        match self.outcome {
            OutcomeModel::Kpv(_) => MethodTag::Drkpv,
            OutcomeModel::Pmmr(_) => MethodTag::Drpmmr,
        }
    }
}

/// Evaluate `theta_1`, `theta_2`, `theta_3` and their DR combination on a grid.
pub fn dr_dose_response(est: &DrEstimator, a_grid: MatRef<'_, f64>) -> Result<DoseResponseCurve> {
    if a_grid.nrows() == 0 {
        return Err(Error::InvalidArgument("dose grid is empty".into()));
    }
    Ok(DoseResponseCurve::doubly_robust(
        est.method(),
        a_grid,
        est.theta1(a_grid)?,
        est.theta2(a_grid)?,
        est.slack_term(a_grid)?,
    ))
}

/// Output Gram `K_ZZ ⊙ K_WW` of the slack-term regression.
pub(crate) fn zw_gram(grams: &Grams) -> Mat<f64> {
    hadamard(grams.z.as_ref(), grams.w.as_ref())
}

/// LOOCV for `lambda_DR`: regress `k_Z ⊗ k_W` on `k_A` over all samples.
pub fn tune_lambda_dr(grams: &Grams, grid: &[f64]) -> Result<LoocvReport> {
    loocv(grams.a.as_ref(), zw_gram(grams).as_ref(), grid)
}

/// As [`tune_lambda_dr`], reusing an eigenbasis of `K_AA`.
pub fn tune_lambda_dr_with(basis: &LoocvBasis, grams: &Grams, grid: &[f64]) -> Result<LoocvReport> {
    basis.sweep(zw_gram(grams).as_ref(), grid)
}

/// Which bridge's coefficients a jitter experiment perturbs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JitterTarget {
    Outcome,
    Treatment,
}

impl FromStr for JitterTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "outcome" => Ok(JitterTarget::Outcome),
            "treatment" => Ok(JitterTarget::Treatment),
            _ => Err(Error::InvalidArgument(format!("unknown jitter target `{s}`"))),
        }
    }
}

/// Either fitted bridge.
#[derive(Clone, Debug)]
pub enum Bridge {
    Outcome(OutcomeModel),
    Treatment(KapModel),
}

/// `c + eps` with `eps_i ~ N(0, sigma^2)` i.i.d.; `sigma` is a standard deviation.
pub fn jitter_coefficients(coefs: &[f64], sigma: f64, seed: u64) -> Result<Vec<f64>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "jitter sigma must be a finite non-negative number, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(coefs.to_vec());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(coefs.iter().map(|c| c + normal.sample(&mut rng)).collect())
}

/// A copy of `model` with its coefficient vector jittered.
pub fn jitter_bridge(model: &Bridge, sigma: f64, seed: u64) -> Result<Bridge> {
    Ok(match model {
        Bridge::Outcome(m) => {
            Bridge::Outcome(m.with_coefficients(jitter_coefficients(m.coefficients(), sigma, seed)?))
        }
        Bridge::Treatment(m) => {
            Bridge::Treatment(m.with_gamma(jitter_coefficients(&m.gamma, sigma, seed)?))
        }
    })
}
