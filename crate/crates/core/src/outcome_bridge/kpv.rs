use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::data::{ProxyDataset, StageSplit};
use crate::error::{Error, Result};
use crate::kernels::{Grams, KernelSet};
use crate::linalg::{column, hadamard, select, select_rows, to_vec};
use crate::ridge::{
    argmin_smallest, default_loocv_grid, loocv, LoocvReport, NystromConfig, Smoother,
    ValidationReport,
};

/// Kernel proxy variable fit in the `m`-coefficient form.
#[derive(Clone, Debug)]
pub struct KpvModel {
    pub kernels: KernelSet,
    pub stage1_w: Mat<f64>,
    pub stage2_a: Mat<f64>,
    /// `n x m` first-stage weights.
    pub b: Mat<f64>,
    pub alpha: Vec<f64>,
    pub lambda_h1: f64,
    pub lambda_h2: f64,
}

/// Everything up to the second-stage solve, reusable across `lambda_h2`.
pub struct KpvStage {
    pub(crate) stage1: Smoother,
    pub(crate) b: Mat<f64>,
    pub(crate) m: Mat<f64>,
    k_ww1: Mat<f64>,
    idx1: Vec<usize>,
    idx2: Vec<usize>,
    lambda_h1: f64,
}

pub(crate) fn stage_nystrom(cfg: Option<NystromConfig>, stream: u64) -> Option<NystromConfig> {
    cfg.map(|c| NystromConfig {
        landmarks: c.landmarks,
        seed: c.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream),
    })
}

impl KpvStage {
    pub fn new(
        grams: &Grams,
        split: &StageSplit,
        lambda_h1: f64,
        nystrom: Option<NystromConfig>,
    ) -> Result<Self> {
        let (i1, i2) = (&split.first, &split.second);
        let n = i1.len();
        let k1 = hadamard(
            select(grams.a.as_ref(), i1, i1).as_ref(),
            select(grams.z.as_ref(), i1, i1).as_ref(),
        );
        let k12 = hadamard(
            select(grams.a.as_ref(), i1, i2).as_ref(),
            select(grams.z.as_ref(), i1, i2).as_ref(),
        );
        let stage1 = Smoother::new(k1.as_ref(), n, lambda_h1, stage_nystrom(nystrom, 1))?;
        let b = stage1.weights(k12.as_ref())?;
        let k_ww1 = select(grams.w.as_ref(), i1, i1);
        let btkb = b.transpose() * (&k_ww1 * &b);
        let m = hadamard(select(grams.a.as_ref(), i2, i2).as_ref(), btkb.as_ref());
        Ok(Self {
            stage1,
            b,
            m,
            k_ww1,
            idx1: i1.clone(),
            idx2: i2.clone(),
            lambda_h1,
        })
    }

    fn finish(
        self,
        data: &ProxyDataset,
        kernels: &KernelSet,
        lambda_h2: f64,
        nystrom: Option<NystromConfig>,
    ) -> Result<KpvModel> {
        let m_h = self.idx2.len();
        let y2: Vec<f64> = self.idx2.iter().map(|&i| data.y[i]).collect();
        let stage2 = Smoother::new(self.m.as_ref(), m_h, lambda_h2, stage_nystrom(nystrom, 2))?;
        let alpha = to_vec(stage2.coefficients(column(&y2).as_ref())?.as_ref());
        Ok(KpvModel {
            kernels: kernels.clone(),
            stage1_w: select_rows(data.w.as_ref(), &self.idx1),
            stage2_a: select_rows(data.a.as_ref(), &self.idx2),
            b: self.b,
            alpha,
            lambda_h1: self.lambda_h1,
            lambda_h2,
        })
    }

    /// Held-out first-stage squared error of the bridge for each `lambda_h2`.
    ///
    /// One eigendecomposition of the second-stage matrix serves the whole grid.
    pub fn validation_sweep(
        &self,
        data: &ProxyDataset,
        grams: &Grams,
        grid: &[f64],
    ) -> Result<ValidationReport> {
        let (i1, i2) = (&self.idx1, &self.idx2);
        let m_h = i2.len();
        let k1 = hadamard(
            select(grams.a.as_ref(), i1, i1).as_ref(),
            select(grams.z.as_ref(), i1, i1).as_ref(),
        );
        let c = self.stage1.weights(k1.as_ref())?;
        let v = hadamard(
            select(grams.a.as_ref(), i2, i1).as_ref(),
            (self.b.transpose() * (&self.k_ww1 * &c)).as_ref(),
        );
        let evd = self
            .m
            .self_adjoint_eigen(faer::Side::Lower)
            .map_err(|_| Error::FactorizationFailed {
                context: "kpv validation eigendecomposition",
            })?;
        let u = evd.U();
        let y2 = column(&i2.iter().map(|&i| data.y[i]).collect::<Vec<_>>());
        let uty = u.transpose() * &y2;
        let vtu = v.transpose() * u;
        let y1: Vec<f64> = i1.iter().map(|&i| data.y[i]).collect();
        let mut losses = Vec::with_capacity(grid.len());
        for &lambda in grid {
            let shift = m_h as f64 * lambda;
            let coef = Mat::from_fn(m_h, 1, |k, _| uty[(k, 0)] / (evd.S()[k].max(0.0) + shift));
            let pred = &vtu * &coef;
            let loss = y1
                .iter()
                .enumerate()
                .map(|(r, y)| (y - pred[(r, 0)]).powi(2))
                .sum::<f64>()
                / y1.len() as f64;
            losses.push(loss);
        }
        Ok(ValidationReport {
            selected: argmin_smallest(grid, &losses)?,
            grid: grid.to_vec(),
            losses,
        })
    }
}

/// Closed-form LOOCV for `lambda_h1` on the first-stage embedding regression.
pub fn tune_lambda_h1(grams: &Grams, split: &StageSplit, grid: &[f64]) -> Result<LoocvReport> {
    let i1 = &split.first;
    let k = hadamard(
        select(grams.z.as_ref(), i1, i1).as_ref(),
        select(grams.a.as_ref(), i1, i1).as_ref(),
    );
    loocv(k.as_ref(), select(grams.w.as_ref(), i1, i1).as_ref(), grid)
}

/// Select `lambda_h2` on the first-stage samples held out from the second stage.
pub fn tune_lambda_h2(
    data: &ProxyDataset,
    grams: &Grams,
    split: &StageSplit,
    lambda_h1: f64,
    grid: &[f64],
) -> Result<ValidationReport> {
    KpvStage::new(grams, split, lambda_h1, None)?.validation_sweep(data, grams, grid)
}

/// Fit KPV with fixed regularizers.
pub fn kpv_fit(
    data: &ProxyDataset,
    split: &StageSplit,
    kernels: &KernelSet,
    lambda_h1: f64,
    lambda_h2: f64,
) -> Result<KpvModel> {
    let grams = Grams::new(kernels, data.a.as_ref(), data.z.as_ref(), data.w.as_ref())?;
    kpv_fit_with(data, &grams, split, kernels, lambda_h1, lambda_h2, None)
}

/// Fit KPV reusing precomputed full-sample Grams.
pub fn kpv_fit_with(
    data: &ProxyDataset,
    grams: &Grams,
    split: &StageSplit,
    kernels: &KernelSet,
    lambda_h1: f64,
    lambda_h2: f64,
    nystrom: Option<NystromConfig>,
) -> Result<KpvModel> {
    KpvStage::new(grams, split, lambda_h1, nystrom)?.finish(data, kernels, lambda_h2, nystrom)
}

/// Tuning curves produced while resolving KPV regularizers.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KpvTuning {
    pub h1: Option<LoocvReport>,
    pub h2: Option<ValidationReport>,
}

/// Fit KPV, tuning any regularizer passed as `None` on the default grid.
pub fn kpv_fit_tuned(
    data: &ProxyDataset,
    grams: &Grams,
    split: &StageSplit,
    kernels: &KernelSet,
    lambda_h1: Option<f64>,
    lambda_h2: Option<f64>,
    nystrom: Option<NystromConfig>,
) -> Result<(KpvModel, KpvTuning)> {
    let mut tuning = KpvTuning::default();
    let l1 = match lambda_h1 {
        Some(v) => v,
        None => {
            let r = tune_lambda_h1(grams, split, &default_loocv_grid())?;
            let v = r.selected;
            tuning.h1 = Some(r);
            v
        }
    };
    let stage = KpvStage::new(grams, split, l1, nystrom)?;
    let l2 = match lambda_h2 {
        Some(v) => v,
        None => {
            let r = stage.validation_sweep(data, grams, &default_loocv_grid())?;
            let v = r.selected;
            tuning.h2 = Some(r);
            v
        }
    };
    Ok((stage.finish(data, kernels, l2, nystrom)?, tuning))
}

impl KpvModel {
    fn check_dims(&self, w: MatRef<'_, f64>, a: MatRef<'_, f64>) -> Result<()> {
        if w.ncols() != self.stage1_w.ncols() {
            return Err(Error::DimensionMismatch {
                context: "outcome proxy point",
                expected: self.stage1_w.ncols(),
                found: w.ncols(),
            });
        }
        if a.ncols() != self.stage2_a.ncols() {
            return Err(Error::DimensionMismatch {
                context: "treatment point",
                expected: self.stage2_a.ncols(),
                found: a.ncols(),
            });
        }
        Ok(())
    }

    /// `h(w, a)` at a single point.
    pub fn eval(&self, w: &[f64], a: &[f64]) -> Result<f64> {
        let wm = Mat::from_fn(1, w.len(), |_, j| w[j]);
        let am = Mat::from_fn(1, a.len(), |_, j| a[j]);
        Ok(self.eval_matrix(wm.as_ref(), am.as_ref())?[(0, 0)])
    }

    /// `H[s, g] = h(w_s, a_g)` for every pair of rows.
    pub fn eval_matrix(&self, w: MatRef<'_, f64>, a: MatRef<'_, f64>) -> Result<Mat<f64>> {
        self.check_dims(w, a)?;
        let kw = self.kernels.w.gram(self.stage1_w.as_ref(), w)?;
        let ka = self.kernels.a.gram(self.stage2_a.as_ref(), a)?;
        let weighted = Mat::from_fn(ka.nrows(), ka.ncols(), |j, g| self.alpha[j] * ka[(j, g)]);
        let coef = &self.b * weighted;
        Ok(kw.transpose() * coef)
    }

    /// `theta_1(a) = mean_i h(w_i, a)` over the rows of `w`.
    pub fn dose_response(&self, w: MatRef<'_, f64>, a_grid: MatRef<'_, f64>) -> Result<Vec<f64>> {
        self.check_dims(w, a_grid)?;
        let kw = self.kernels.w.gram(self.stage1_w.as_ref(), w)?;
        let mean_kw = Mat::from_fn(kw.nrows(), 1, |i, _| {
            (0..kw.ncols()).map(|s| kw[(i, s)]).sum::<f64>() / kw.ncols() as f64
        });
        let u = self.b.transpose() * mean_kw;
        let ka = self.kernels.a.gram(self.stage2_a.as_ref(), a_grid)?;
        Ok((0..ka.ncols())
            .map(|g| (0..ka.nrows()).map(|j| self.alpha[j] * u[(j, 0)] * ka[(j, g)]).sum())
            .collect())
    }

    /// Copy with `alpha` replaced.
    pub fn with_alpha(&self, alpha: Vec<f64>) -> Self {
        KpvModel {
            alpha,
            ..self.clone()
        }
    }
}
