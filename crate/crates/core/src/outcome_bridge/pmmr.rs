use faer::{Mat, MatRef, Side};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ProxyDataset;
use crate::error::{Error, Result};
use crate::kernels::{Grams, KernelSet};
use crate::linalg::{column, hadamard, select, to_vec};
use crate::ridge::{argmin_smallest, log_grid, psd_sqrt, RidgeFactor, ValidationReport};

/// One-step maximum moment restriction fit over the full sample.
#[derive(Clone, Debug)]
pub struct PmmrModel {
    pub kernels: KernelSet,
    pub train_w: Mat<f64>,
    pub train_a: Mat<f64>,
    pub alpha: Vec<f64>,
    pub lambda_mmr: f64,
}

/// The 25-point grid on `[5e-5, 1e-3]` used to tune `lambda_mmr`.
pub fn default_mmr_grid() -> Vec<f64> {
    log_grid(5e-5, 1e-3, 25)
}

/// `alpha = S (S L S + t lambda I)^-1 S Y` with `S = sqrt(G)`.
pub(crate) fn pmmr_alpha(
    l: MatRef<'_, f64>,
    g: MatRef<'_, f64>,
    y: MatRef<'_, f64>,
    lambda: f64,
) -> Result<Mat<f64>> {
    let t = l.nrows();
    let s = psd_sqrt(g)?;
    let inner = symmetrized(&s * l * &s);
    let f = RidgeFactor::new(inner.as_ref(), t, lambda)?;
    Ok(&s * f.solve((&s * y).as_ref())?)
}

fn symmetrized(mut m: Mat<f64>) -> Mat<f64> {
    for j in 0..m.ncols() {
        for i in (j + 1)..m.nrows() {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

fn lg(grams: &Grams, idx: &[usize]) -> (Mat<f64>, Mat<f64>) {
    let ka = select(grams.a.as_ref(), idx, idx);
    let l = hadamard(ka.as_ref(), select(grams.w.as_ref(), idx, idx).as_ref());
    let g = hadamard(ka.as_ref(), select(grams.z.as_ref(), idx, idx).as_ref());
    (l, g)
}

/// Fit PMMR with a fixed regularizer.
pub fn pmmr_fit(data: &ProxyDataset, kernels: &KernelSet, lambda_mmr: f64) -> Result<PmmrModel> {
    let grams = Grams::new(kernels, data.a.as_ref(), data.z.as_ref(), data.w.as_ref())?;
    pmmr_fit_with(data, &grams, kernels, lambda_mmr)
}

pub fn pmmr_fit_with(
    data: &ProxyDataset,
    grams: &Grams,
    kernels: &KernelSet,
    lambda_mmr: f64,
) -> Result<PmmrModel> {
    let all: Vec<usize> = (0..data.len()).collect();
    let (l, g) = lg(grams, &all);
    let alpha = pmmr_alpha(l.as_ref(), g.as_ref(), data.y_col().as_ref(), lambda_mmr)?;
    Ok(PmmrModel {
        kernels: kernels.clone(),
        train_w: data.w.clone(),
        train_a: data.a.clone(),
        alpha: to_vec(alpha.as_ref()),
        lambda_mmr,
    })
}

/// Seeded train/holdout partition with `round(fraction * t)` held out (at least one).
pub fn holdout_split(t: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let n_val = ((fraction * t as f64).round() as usize).max(1);
    if !(fraction > 0.0 && fraction < 1.0) || n_val >= t {
        return Err(Error::InvalidArgument(format!(
            "holdout fraction {fraction} leaves no training data at t = {t}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut val = rand::seq::index::sample(&mut rng, t, n_val).into_vec();
    val.sort_unstable();
    let mut held = vec![false; t];
    for &i in &val {
        held[i] = true;
    }
    let train = (0..t).filter(|&i| !held[i]).collect();
    Ok((train, val))
}

/// Held-out squared error of `h(w, a)` against `y`, per grid value.
///
/// Shares one eigendecomposition of `S L S` across the grid.
pub fn tune_lambda_mmr(
    data: &ProxyDataset,
    grams: &Grams,
    holdout_fraction: f64,
    grid: &[f64],
    seed: u64,
) -> Result<ValidationReport> {
    let (train, val) = holdout_split(data.len(), holdout_fraction, seed)?;
    let (l, g) = lg(grams, &train);
    let s = psd_sqrt(g.as_ref())?;
    let inner = symmetrized(&s * &l * &s);
    let evd = inner
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| Error::FactorizationFailed {
            context: "pmmr validation eigendecomposition",
        })?;
    let u = evd.U();
    let y_tr = column(&train.iter().map(|&i| data.y[i]).collect::<Vec<_>>());
    let proj = u.transpose() * (&s * &y_tr);
    let cross = hadamard(
        select(grams.a.as_ref(), &val, &train).as_ref(),
        select(grams.w.as_ref(), &val, &train).as_ref(),
    );
    let pred_basis = &cross * &s * u;
    let t_tr = train.len() as f64;
    let mut losses = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let coef = Mat::from_fn(proj.nrows(), 1, |k, _| {
            proj[(k, 0)] / (evd.S()[k].max(0.0) + t_tr * lambda)
        });
        let pred = &pred_basis * coef;
        let loss = val
            .iter()
            .enumerate()
            .map(|(r, &i)| (data.y[i] - pred[(r, 0)]).powi(2))
            .sum::<f64>()
            / val.len() as f64;
        losses.push(loss);
    }
    Ok(ValidationReport {
        selected: argmin_smallest(grid, &losses)?,
        grid: grid.to_vec(),
        losses,
    })
}

/// Tuning curve produced while resolving `lambda_mmr`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PmmrTuning {
    pub mmr: Option<ValidationReport>,
}

/// Fit PMMR; `None` tunes on a `holdout_fraction` holdout over [`default_mmr_grid`].
pub fn pmmr_fit_tuned(
    data: &ProxyDataset,
    grams: &Grams,
    kernels: &KernelSet,
    lambda_mmr: Option<f64>,
    holdout_fraction: f64,
    seed: u64,
) -> Result<(PmmrModel, PmmrTuning)> {
    let mut tuning = PmmrTuning::default();
    let lambda = match lambda_mmr {
        Some(v) => v,
        None => {
            let r = tune_lambda_mmr(data, grams, holdout_fraction, &default_mmr_grid(), seed)?;
            let v = r.selected;
            tuning.mmr = Some(r);
            v
        }
    };
    Ok((pmmr_fit_with(data, grams, kernels, lambda)?, tuning))
}

impl PmmrModel {
    fn check_dims(&self, w: MatRef<'_, f64>, a: MatRef<'_, f64>) -> Result<()> {
        if w.ncols() != self.train_w.ncols() || a.ncols() != self.train_a.ncols() {
            return Err(Error::DimensionMismatch {
                context: "pmmr evaluation point",
                expected: self.train_w.ncols() + self.train_a.ncols(),
                found: w.ncols() + a.ncols(),
            });
        }
        Ok(())
    }

    pub fn eval(&self, w: &[f64], a: &[f64]) -> Result<f64> {
        let wm = Mat::from_fn(1, w.len(), |_, j| w[j]);
        let am = Mat::from_fn(1, a.len(), |_, j| a[j]);
        Ok(self.eval_matrix(wm.as_ref(), am.as_ref())?[(0, 0)])
    }

    /// `H[s, g] = alpha^T (K_A a_g ⊙ K_W w_s)`.
    pub fn eval_matrix(&self, w: MatRef<'_, f64>, a: MatRef<'_, f64>) -> Result<Mat<f64>> {
        self.check_dims(w, a)?;
        let kw = self.kernels.w.gram(self.train_w.as_ref(), w)?;
        let ka = self.kernels.a.gram(self.train_a.as_ref(), a)?;
        let weighted = Mat::from_fn(ka.nrows(), ka.ncols(), |i, g| self.alpha[i] * ka[(i, g)]);
        Ok(kw.transpose() * weighted)
    }

    pub fn dose_response(&self, w: MatRef<'_, f64>, a_grid: MatRef<'_, f64>) -> Result<Vec<f64>> {
        self.check_dims(w, a_grid)?;
        let kw = self.kernels.w.gram(self.train_w.as_ref(), w)?;
        let ka = self.kernels.a.gram(self.train_a.as_ref(), a_grid)?;
        let q = kw.ncols() as f64;
        let mean_kw: Vec<f64> = (0..kw.nrows())
            .map(|i| (0..kw.ncols()).map(|s| kw[(i, s)]).sum::<f64>() / q)
            .collect();
        Ok((0..ka.ncols())
            .map(|g| {
                (0..ka.nrows())
                    .map(|i| self.alpha[i] * mean_kw[i] * ka[(i, g)])
                    .sum()
            })
            .collect())
    }

    pub fn with_alpha(&self, alpha: Vec<f64>) -> Self {
        PmmrModel {
            alpha,
            ..self.clone()
        }
    }

}
