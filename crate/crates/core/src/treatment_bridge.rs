//! The KAP treatment bridge `phi(z, a)` and its dose-response regression.

use faer::{Mat, MatRef, Side};
use serde::{Deserialize, Serialize};

use crate::data::{ProxyDataset, StageSplit};
use crate::error::{Error, Result};
use crate::kernels::{Grams, KernelSet};
use crate::linalg::{column, hadamard, row_sums, select, select_rows};
use crate::outcome_bridge::stage_nystrom;
use crate::ridge::{
    argmin_smallest, default_loocv_grid, general_solve, loocv, LoocvBasis, LoocvReport,
    NystromConfig, Smoother, ValidationReport,
};

/// Fitted KAP treatment bridge.
#[derive(Clone, Debug)]
pub struct KapModel {
    pub kernels: KernelSet,
    pub stage1_z: Mat<f64>,
    pub stage2_a: Mat<f64>,
    /// `n x m` embedding weights at the second-stage pairs.
    pub b: Mat<f64>,
    /// `n x m` weights of the leave-one-out averaged embeddings.
    pub b_tilde: Mat<f64>,
    /// `m + 1` coefficients.
    pub gamma: Vec<f64>,
    pub third_z: Mat<f64>,
    pub third_a: Mat<f64>,
    pub third_y: Vec<f64>,
    pub lambda_phi1: f64,
    pub lambda_phi2: f64,
}

/// Stage-one fit and the second-stage quadratic, reusable across `lambda_phi2`.
pub struct KapStage {
    stage1: Smoother,
    b: Mat<f64>,
    b_tilde: Mat<f64>,
    /// `[[Q, r], [r^T, s]]`, which is also the RKHS norm matrix.
    n_mat: Mat<f64>,
    idx1: Vec<usize>,
    idx2: Vec<usize>,
    lambda_phi1: f64,
}

fn check_stage2(m: usize) -> Result<()> {
    if m < 2 {
        return Err(Error::TooFewStage2Samples(m));
    }
    Ok(())
}

/// Column `j` is `(sum_{l != j} k_W(., w_l)) ⊙ k_A(., a_j) / (count - 1)`.
fn loo_average_rhs(k_w: MatRef<'_, f64>, k_a: MatRef<'_, f64>) -> Mat<f64> {
    let sums = row_sums(k_w);
    let denom = (k_w.ncols() - 1) as f64;
    Mat::from_fn(k_w.nrows(), k_w.ncols(), |i, j| {
        (sums[(i, 0)] - k_w[(i, j)]) * k_a[(i, j)] / denom
    })
}

/// `(1/m) 1^T X` as a row vector.
fn col_means(x: MatRef<'_, f64>) -> Vec<f64> {
    let m = x.nrows() as f64;
    (0..x.ncols())
        .map(|j| (0..x.nrows()).map(|i| x[(i, j)]).sum::<f64>() / m)
        .collect()
}

impl KapStage {
    pub fn new(
        grams: &Grams,
        split: &StageSplit,
        lambda_phi1: f64,
        nystrom: Option<NystromConfig>,
    ) -> Result<Self> {
        let (i1, i2) = (&split.first, &split.second);
        check_stage2(i2.len())?;
        let n = i1.len();
        let m = i2.len();
        let k1 = hadamard(
            select(grams.w.as_ref(), i1, i1).as_ref(),
            select(grams.a.as_ref(), i1, i1).as_ref(),
        );
        let stage1 = Smoother::new(k1.as_ref(), n, lambda_phi1, stage_nystrom(nystrom, 11))?;
        let k_w12 = select(grams.w.as_ref(), i1, i2);
        let k_a12 = select(grams.a.as_ref(), i1, i2);
        let b = stage1.weights(hadamard(k_w12.as_ref(), k_a12.as_ref()).as_ref())?;
        let b_tilde = stage1.weights(loo_average_rhs(k_w12.as_ref(), k_a12.as_ref()).as_ref())?;

        let kz = select(grams.z.as_ref(), i1, i1);
        let ka2 = select(grams.a.as_ref(), i2, i2);
        let kz_b = &kz * &b;
        let kz_bt = &kz * &b_tilde;
        let q = hadamard((b.transpose() * &kz_b).as_ref(), ka2.as_ref());
        let p = hadamard((b.transpose() * &kz_bt).as_ref(), ka2.as_ref());
        let pt = hadamard((b_tilde.transpose() * &kz_bt).as_ref(), ka2.as_ref());
        let r: Vec<f64> = (0..m)
            .map(|i| (0..m).map(|j| p[(i, j)]).sum::<f64>() / m as f64)
            .collect();
        let s = col_means(pt.as_ref()).iter().sum::<f64>() / m as f64;
        let n_mat = Mat::from_fn(m + 1, m + 1, |i, j| match (i < m, j < m) {
            (true, true) => 0.5 * (q[(i, j)] + q[(j, i)]),
            (true, false) => r[i],
            (false, true) => r[j],
            (false, false) => s,
        });
        Ok(Self {
            stage1,
            b,
            b_tilde,
            n_mat,
            idx1: i1.clone(),
            idx2: i2.clone(),
            lambda_phi1,
        })
    }

    fn m(&self) -> usize {
        self.idx2.len()
    }

    /// `L = [Q r]`, the first `m` rows of `N`.
    pub fn l(&self) -> Mat<f64> {
        self.n_mat.subrows(0, self.m()).to_owned()
    }

    /// `M = [r; s]`, the last column of `N`.
    pub fn m_vec(&self) -> Mat<f64> {
        self.n_mat.col(self.m()).as_mat().to_owned()
    }

    pub fn n(&self) -> &Mat<f64> {
        &self.n_mat
    }

    /// `gamma = ((1/m) L^T L + lambda N)^-1 M`.
    pub fn gamma(&self, lambda_phi2: f64) -> Result<Vec<f64>> {
        let l = self.l();
        self.gamma_with(&(l.transpose() * &l), lambda_phi2)
    }

    fn gamma_with(&self, ltl: &Mat<f64>, lambda_phi2: f64) -> Result<Vec<f64>> {
        if !(lambda_phi2.is_finite() && lambda_phi2 > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "regularizer must be positive, got {lambda_phi2}"
            )));
        }
        let inv_m = 1.0 / self.m() as f64;
        let sys = Mat::from_fn(ltl.nrows(), ltl.ncols(), |i, j| {
            inv_m * ltl[(i, j)] + lambda_phi2 * self.n_mat[(i, j)]
        });
        let g = general_solve(sys.as_ref(), self.m_vec().as_ref(), "kap second stage")?;
        Ok((0..g.nrows()).map(|i| g[(i, 0)]).collect())
    }

    /// Penalized validation loss on the first-stage samples for each grid value.
    pub fn validation_sweep(
        &self,
        grams: &Grams,
        sigma: f64,
        grid: &[f64],
    ) -> Result<ValidationReport> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "complexity penalty scale must be positive, got {sigma}"
            )));
        }
        let (i1, i2) = (&self.idx1, &self.idx2);
        let (n, m) = (i1.len(), i2.len());
        let k_w11 = select(grams.w.as_ref(), i1, i1);
        let k_a11 = select(grams.a.as_ref(), i1, i1);
        let c = self.stage1.weights(hadamard(k_w11.as_ref(), k_a11.as_ref()).as_ref())?;
        let c_bar = self
            .stage1
            .weights(loo_average_rhs(k_w11.as_ref(), k_a11.as_ref()).as_ref())?;
        let kz = select(grams.z.as_ref(), i1, i1);
        let k_a21 = select(grams.a.as_ref(), i2, i1);
        let bt_kz = self.b.transpose() * &kz;
        let btt_kz = self.b_tilde.transpose() * &kz;
        let features = |x: &Mat<f64>| -> Mat<f64> {
            let top = hadamard((&bt_kz * x).as_ref(), k_a21.as_ref());
            let tail = col_means(hadamard((&btt_kz * x).as_ref(), k_a21.as_ref()).as_ref());
            Mat::from_fn(m + 1, n, |i, j| if i < m { top[(i, j)] } else { tail[j] })
        };
        let lv = features(&c);
        let mv = row_sums(features(&c_bar).as_ref()) * faer::Scale(1.0 / n as f64);
        let gram_v = &lv * lv.transpose();

        let l = self.l();
        let ltl = l.transpose() * &l;
        let eig = ltl
            .self_adjoint_eigen(Side::Lower)
            .map_err(|_| Error::FactorizationFailed {
                context: "kap penalty eigendecomposition",
            })?;
        let e: Vec<f64> = (0..m + 1).map(|k| eig.S()[k].max(0.0)).collect();

        let mut losses = Vec::with_capacity(grid.len());
        for &lambda in grid {
            let g = column(&self.gamma_with(&ltl, lambda)?);
            let quad = (g.transpose() * &gram_v * &g)[(0, 0)] / n as f64;
            let lin = (g.transpose() * &mv)[(0, 0)];
            let trace: f64 = e.iter().map(|ek| ek / (ek + m as f64 * lambda)).sum();
            losses.push(quad - 2.0 * lin + 2.0 * sigma * sigma / m as f64 * trace);
        }
        Ok(ValidationReport {
            selected: argmin_smallest(grid, &losses)?,
            grid: grid.to_vec(),
            losses,
        })
    }

    fn finish(self, data: &ProxyDataset, kernels: &KernelSet, lambda_phi2: f64) -> Result<KapModel> {
        let gamma = self.gamma(lambda_phi2)?;
        Ok(KapModel {
            kernels: kernels.clone(),
            stage1_z: select_rows(data.z.as_ref(), &self.idx1),
            stage2_a: select_rows(data.a.as_ref(), &self.idx2),
            b: self.b,
            b_tilde: self.b_tilde,
            gamma,
            third_z: data.z.clone(),
            third_a: data.a.clone(),
            third_y: data.y.clone(),
            lambda_phi1: self.lambda_phi1,
            lambda_phi2,
        })
    }
}

/// LOOCV for `lambda_phi1`: regress `k_Z` on `k_W ⊙ k_A` over the first stage.
pub fn tune_lambda_phi1(grams: &Grams, split: &StageSplit, grid: &[f64]) -> Result<LoocvReport> {
    let i1 = &split.first;
    let k = hadamard(
        select(grams.w.as_ref(), i1, i1).as_ref(),
        select(grams.a.as_ref(), i1, i1).as_ref(),
    );
    loocv(k.as_ref(), select(grams.z.as_ref(), i1, i1).as_ref(), grid)
}

/// Penalized validation selection of `lambda_phi2`.
pub fn tune_lambda_phi2(
    grams: &Grams,
    split: &StageSplit,
    lambda_phi1: f64,
    sigma: f64,
    grid: &[f64],
) -> Result<ValidationReport> {
    KapStage::new(grams, split, lambda_phi1, None)?.validation_sweep(grams, sigma, grid)
}

/// Output Gram `K_ZZ ⊙ Y Y^T` of the third-stage regression.
pub(crate) fn yz_gram(grams: &Grams, y: &[f64]) -> Mat<f64> {
    Mat::from_fn(y.len(), y.len(), |i, j| grams.z[(i, j)] * y[i] * y[j])
}

/// LOOCV for `lambda_phi3`: regress `y k_Z` on `k_A` over all samples.
pub fn tune_lambda_phi3(data: &ProxyDataset, grams: &Grams, grid: &[f64]) -> Result<LoocvReport> {
    loocv(grams.a.as_ref(), yz_gram(grams, &data.y).as_ref(), grid)
}

/// As [`tune_lambda_phi3`], reusing an eigenbasis of `K_AA`.
pub fn tune_lambda_phi3_with(
    basis: &LoocvBasis,
    data: &ProxyDataset,
    grams: &Grams,
    grid: &[f64],
) -> Result<LoocvReport> {
    basis.sweep(yz_gram(grams, &data.y).as_ref(), grid)
}

/// Fit KAP with fixed regularizers.
pub fn kap_fit(
    data: &ProxyDataset,
    split: &StageSplit,
    kernels: &KernelSet,
    lambda_phi1: f64,
    lambda_phi2: f64,
) -> Result<KapModel> {
    let grams = Grams::new(kernels, data.a.as_ref(), data.z.as_ref(), data.w.as_ref())?;
    kap_fit_with(data, &grams, split, kernels, lambda_phi1, lambda_phi2, None)
}

pub fn kap_fit_with(
    data: &ProxyDataset,
    grams: &Grams,
    split: &StageSplit,
    kernels: &KernelSet,
    lambda_phi1: f64,
    lambda_phi2: f64,
    nystrom: Option<NystromConfig>,
) -> Result<KapModel> {
    KapStage::new(grams, split, lambda_phi1, nystrom)?.finish(data, kernels, lambda_phi2)
}

/// Tuning curves produced while resolving KAP regularizers.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KapTuning {
    pub phi1: Option<LoocvReport>,
    pub phi2: Option<ValidationReport>,
}

/// Fit KAP, tuning any regularizer passed as `None`; `sigma` scales the
/// complexity penalty of the `lambda_phi2` selection.
#[allow(clippy::too_many_arguments)]
pub fn kap_fit_tuned(
    data: &ProxyDataset,
    grams: &Grams,
    split: &StageSplit,
    kernels: &KernelSet,
    lambda_phi1: Option<f64>,
    lambda_phi2: Option<f64>,
    sigma: f64,
    nystrom: Option<NystromConfig>,
) -> Result<(KapModel, KapTuning)> {
    let mut tuning = KapTuning::default();
    let l1 = match lambda_phi1 {
        Some(v) => v,
        None => {
            let r = tune_lambda_phi1(grams, split, &default_loocv_grid())?;
            let v = r.selected;
            tuning.phi1 = Some(r);
            v
        }
    };
    let stage = KapStage::new(grams, split, l1, nystrom)?;
    let l2 = match lambda_phi2 {
        Some(v) => v,
        None => {
            let r = stage.validation_sweep(grams, sigma, &default_loocv_grid())?;
            let v = r.selected;
            tuning.phi2 = Some(r);
            v
        }
    };
    Ok((stage.finish(data, kernels, l2)?, tuning))
}

impl KapModel {
    fn m(&self) -> usize {
        self.stage2_a.nrows()
    }

    fn check_dims(&self, z: MatRef<'_, f64>, a: MatRef<'_, f64>) -> Result<()> {
        if z.ncols() != self.stage1_z.ncols() {
            return Err(Error::DimensionMismatch {
                context: "treatment proxy point",
                expected: self.stage1_z.ncols(),
                found: z.ncols(),
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

    /// `n x m` weights `B diag(gamma_1..m) + (gamma_m+1 / m) B~`, so that
    /// `phi(z, a) = k_Z(z)^T W k_A(a)`.
    pub fn combined_weights(&self) -> Mat<f64> {
        let m = self.m();
        let tail = self.gamma[m] / m as f64;
        Mat::from_fn(self.b.nrows(), m, |i, j| {
            self.gamma[j] * self.b[(i, j)] + tail * self.b_tilde[(i, j)]
        })
    }

    pub fn eval(&self, z: &[f64], a: &[f64]) -> Result<f64> {
        let zm = Mat::from_fn(1, z.len(), |_, j| z[j]);
        let am = Mat::from_fn(1, a.len(), |_, j| a[j]);
        Ok(self.eval_matrix(zm.as_ref(), am.as_ref())?[(0, 0)])
    }

    /// `Phi[s, g] = phi(z_s, a_g)`.
    pub fn eval_matrix(&self, z: MatRef<'_, f64>, a: MatRef<'_, f64>) -> Result<Mat<f64>> {
        self.check_dims(z, a)?;
        let kz = self.kernels.z.gram(self.stage1_z.as_ref(), z)?;
        let ka = self.kernels.a.gram(self.stage2_a.as_ref(), a)?;
        let coef = self.combined_weights() * ka;
        Ok(kz.transpose() * coef)
    }

    /// Weights of the third-stage regression of `y k_Z(z, .)` on `a`, one
    /// column per grid point.
    pub fn yz_weights(
        &self,
        a_grid: MatRef<'_, f64>,
        lambda_phi3: f64,
        nystrom: Option<NystromConfig>,
    ) -> Result<Mat<f64>> {
        let t = self.third_a.nrows();
        let k_aa = self.kernels.a.gram_sym(self.third_a.as_ref())?;
        let smoother = Smoother::new(k_aa.as_ref(), t, lambda_phi3, stage_nystrom(nystrom, 13))?;
        smoother.weights(self.kernels.a.gram(self.third_a.as_ref(), a_grid)?.as_ref())
    }

    /// `theta_2(a) = sum_i c_i(a) y_i phi(z_i, a)` with `c(a)` from
    /// `(K_AA + t lambda_phi3 I)^-1 K_Aa`.
    pub fn dose_response(
        &self,
        a_grid: MatRef<'_, f64>,
        lambda_phi3: f64,
        nystrom: Option<NystromConfig>,
    ) -> Result<Vec<f64>> {
        self.check_dims(self.third_z.as_ref(), a_grid)?;
        let c = self.yz_weights(a_grid, lambda_phi3, nystrom)?;
        self.dose_response_from_weights(c.as_ref(), a_grid)
    }

    /// `theta_2` given precomputed third-stage weights (`t x g`).
    pub fn dose_response_from_weights(
        &self,
        c: MatRef<'_, f64>,
        a_grid: MatRef<'_, f64>,
    ) -> Result<Vec<f64>> {
        self.check_dims(self.third_z.as_ref(), a_grid)?;
        let t = self.third_y.len();
        if c.nrows() != t || c.ncols() != a_grid.nrows() {
            return Err(Error::DimensionMismatch {
                context: "third-stage weights",
                expected: t,
                found: c.nrows(),
            });
        }
        let kz = self.kernels.z.gram(self.stage1_z.as_ref(), self.third_z.as_ref())?;
        let yc = Mat::from_fn(t, c.ncols(), |i, g| self.third_y[i] * c[(i, g)]);
        let v = kz * yc;
        let wv = self.combined_weights().transpose() * v;
        let ka = self.kernels.a.gram(self.stage2_a.as_ref(), a_grid)?;
        Ok((0..ka.ncols())
            .map(|g| (0..ka.nrows()).map(|j| wv[(j, g)] * ka[(j, g)]).sum())
            .collect())
    }

    pub fn with_gamma(&self, gamma: Vec<f64>) -> Self {
        KapModel {
            gamma,
            ..self.clone()
        }
    }
}
