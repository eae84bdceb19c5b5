//! Outcome bridge estimators: KPV (two-stage) and PMMR (one-step).

mod kpv;
mod pmmr;

pub use kpv::{
    kpv_fit, kpv_fit_tuned, kpv_fit_with, tune_lambda_h1, tune_lambda_h2, KpvModel, KpvStage,
    KpvTuning,
};
pub(crate) use kpv::stage_nystrom;
pub use pmmr::{
    default_mmr_grid, holdout_split, pmmr_fit, pmmr_fit_tuned, pmmr_fit_with, tune_lambda_mmr,
    PmmrModel, PmmrTuning,
};

use faer::{Mat, MatRef};

use crate::error::Result;

/// A fitted outcome bridge `h(w, a)` of either family.
#[derive(Clone, Debug)]
pub enum OutcomeModel {
    Kpv(KpvModel),
    Pmmr(PmmrModel),
}

impl OutcomeModel {
    pub fn eval(&self, w: &[f64], a: &[f64]) -> Result<f64> {
        match self {
            OutcomeModel::Kpv(m) => m.eval(w, a),
            OutcomeModel::Pmmr(m) => m.eval(w, a),
        }
    }

    /// `H[s, g] = h(w_s, a_g)`.
    pub fn eval_matrix(&self, w: MatRef<'_, f64>, a: MatRef<'_, f64>) -> Result<Mat<f64>> {
        match self {
            OutcomeModel::Kpv(m) => m.eval_matrix(w, a),
            OutcomeModel::Pmmr(m) => m.eval_matrix(w, a),
        }
    }

    /// `theta_1(a) = mean_s h(w_s, a)`.
    pub fn dose_response(&self, w: MatRef<'_, f64>, a_grid: MatRef<'_, f64>) -> Result<Vec<f64>> {
        match self {
            OutcomeModel::Kpv(m) => m.dose_response(w, a_grid),
            OutcomeModel::Pmmr(m) => m.dose_response(w, a_grid),
        }
    }

    /// The representer coefficient vector `alpha`.
    pub fn coefficients(&self) -> &[f64] {
        match self {
            OutcomeModel::Kpv(m) => &m.alpha,
            OutcomeModel::Pmmr(m) => &m.alpha,
        }
    }

    pub fn with_coefficients(&self, alpha: Vec<f64>) -> Self {
        match self {
            OutcomeModel::Kpv(m) => OutcomeModel::Kpv(m.with_alpha(alpha)),
            OutcomeModel::Pmmr(m) => OutcomeModel::Pmmr(m.with_alpha(alpha)),
        }
    }
}
