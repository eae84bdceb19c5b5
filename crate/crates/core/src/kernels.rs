//! Kernel functions, Gram matrices and the median lengthscale heuristic.
//!
//! Point sets are `Mat<f64>` with one observation per row.

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which closed form a kernel uses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelFamily {
    /// exp(-|x - y|^2 / (2 l^2)).
    Gaussian,
    /// Matérn with smoothness nu = p + 1/2. `p = 0` is the exponential kernel.
    Matern { p: u32 },
    /// Product of one-dimensional Gaussians, one lengthscale per column.
    ColumnwiseGaussian,
}

/// A kernel with its lengthscale(s) fixed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub family: KernelFamily,
    /// One entry for isotropic families, one per input column for
    /// [`KernelFamily::ColumnwiseGaussian`].
    pub lengthscales: Vec<f64>,
}

impl Kernel {
    pub fn gaussian(lengthscale: f64) -> Result<Self> {
        Self::new(KernelFamily::Gaussian, vec![lengthscale])
    }

    pub fn matern(lengthscale: f64, p: u32) -> Result<Self> {
        Self::new(KernelFamily::Matern { p }, vec![lengthscale])
    }

    pub fn columnwise_gaussian(lengthscales: Vec<f64>) -> Result<Self> {
        Self::new(KernelFamily::ColumnwiseGaussian, lengthscales)
    }

    pub fn new(family: KernelFamily, lengthscales: Vec<f64>) -> Result<Self> {
        if lengthscales.is_empty() {
            return Err(Error::InvalidKernel("no lengthscale given".into()));
        }
        if !matches!(family, KernelFamily::ColumnwiseGaussian) && lengthscales.len() != 1 {
            return Err(Error::InvalidKernel(format!(
                "isotropic kernel takes one lengthscale, got {}",
                lengthscales.len()
            )));
        }
        if let Some(l) = lengthscales.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::InvalidKernel(format!("lengthscale must be positive, got {l}")));
        }
        Ok(Self {
            family,
            lengthscales,
        })
    }

    /// Fit the lengthscale(s) of `family` to `points` with the median heuristic.
    pub fn from_median_heuristic(
        family: KernelFamily,
        points: MatRef<'_, f64>,
        quantile: f64,
    ) -> Result<Self> {
        match family {
            KernelFamily::ColumnwiseGaussian => {
                Self::new(family, columnwise_median_heuristic(points, quantile)?)
            }
            _ => Self::new(family, vec![median_heuristic(points, quantile)?]),
        }
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if matches!(self.family, KernelFamily::ColumnwiseGaussian) && self.lengthscales.len() != d {
            return Err(Error::DimensionMismatch {
                context: "columnwise kernel lengthscales",
                expected: d,
                found: self.lengthscales.len(),
            });
        }
        Ok(())
    }

    /// k(x, y) for two points given as slices.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.family {
            KernelFamily::Gaussian => {
                let l = self.lengthscales[0];
                (-sq_dist(x, y) / (2.0 * l * l)).exp()
            }
            KernelFamily::Matern { p } => matern(sq_dist(x, y).sqrt(), self.lengthscales[0], p),
            KernelFamily::ColumnwiseGaussian => {
                let e: f64 = x
                    .iter()
                    .zip(y)
                    .zip(&self.lengthscales)
                    .map(|((a, b), l)| (a - b) * (a - b) / (2.0 * l * l))
                    .sum();
                (-e).exp()
            }
        }
    }

    /// Gram matrix `K[i, j] = k(x_i, y_j)`.
    pub fn gram(&self, x: MatRef<'_, f64>, y: MatRef<'_, f64>) -> Result<Mat<f64>> {
        check_cols(x, y)?;
        self.check_dim(x.ncols())?;
        let xs = rows(x);
        let ys = rows(y);
        Ok(Mat::from_fn(x.nrows(), y.nrows(), |i, j| self.eval(&xs[i], &ys[j])))
    }

    /// Gram matrix of a point set with itself, exactly symmetric.
    pub fn gram_sym(&self, x: MatRef<'_, f64>) -> Result<Mat<f64>> {
        self.check_dim(x.ncols())?;
        let xs = rows(x);
        let n = x.nrows();
        let mut k = Mat::<f64>::zeros(n, n);
        for j in 0..n {
            k[(j, j)] = self.eval(&xs[j], &xs[j]);
            for i in (j + 1)..n {
                let v = self.eval(&xs[i], &xs[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        Ok(k)
    }
}

/// One kernel per variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSet {
    pub a: Kernel,
    pub z: Kernel,
    pub w: Kernel,
}

impl KernelSet {
    /// Gaussian kernels on every variable, lengthscales from the median heuristic.
    pub fn median_heuristic(
        a: MatRef<'_, f64>,
        z: MatRef<'_, f64>,
        w: MatRef<'_, f64>,
        quantile: f64,
    ) -> Result<Self> {
        Ok(Self {
            a: Kernel::from_median_heuristic(KernelFamily::Gaussian, a, quantile)?,
            z: Kernel::from_median_heuristic(KernelFamily::Gaussian, z, quantile)?,
            w: Kernel::from_median_heuristic(KernelFamily::Gaussian, w, quantile)?,
        })
    }
}

/// Full-sample Gram matrices of one dataset under one [`KernelSet`].
#[derive(Clone, Debug)]
pub struct Grams {
    pub a: Mat<f64>,
    pub z: Mat<f64>,
    pub w: Mat<f64>,
}

impl Grams {
    pub fn new(
        kernels: &KernelSet,
        a: MatRef<'_, f64>,
        z: MatRef<'_, f64>,
        w: MatRef<'_, f64>,
    ) -> Result<Self> {
        Ok(Self {
            a: kernels.a.gram_sym(a)?,
            z: kernels.z.gram_sym(z)?,
            w: kernels.w.gram_sym(w)?,
        })
    }

    /// Copy with the outcome-proxy Gram rebuilt under another kernel.
    pub fn with_w_kernel(&self, kernel: &Kernel, w: MatRef<'_, f64>) -> Result<Self> {
        Ok(Self {
            a: self.a.clone(),
            z: self.z.clone(),
            w: kernel.gram_sym(w)?,
        })
    }
}

fn check_cols(x: MatRef<'_, f64>, y: MatRef<'_, f64>) -> Result<()> {
    if x.ncols() != y.ncols() {
        return Err(Error::DimensionMismatch {
            context: "kernel inputs",
            expected: x.ncols(),
            found: y.ncols(),
        });
    }
    Ok(())
}

pub(crate) fn rows(x: MatRef<'_, f64>) -> Vec<Vec<f64>> {
    (0..x.nrows())
        .map(|i| (0..x.ncols()).map(|j| x[(i, j)]).collect())
        .collect()
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Matérn kernel with nu = p + 1/2 at distance `d`.
fn matern(d: f64, l: f64, p: u32) -> f64 {
    let nu = p as f64 + 0.5;
    let r = d / l;
    let scale = (-(2.0 * nu).sqrt() * r).exp();
    if p == 0 {
        return scale;
    }
    let pp = p as usize;
    // Gamma(p+1)/Gamma(2p+1) = p!/(2p)!
    let lead = factorial(pp) / factorial(2 * pp);
    let x = (8.0 * nu).sqrt() * r;
    let sum: f64 = (0..=pp)
        .map(|k| {
            factorial(pp + k) / (factorial(k) * factorial(pp - k)) * x.powi((pp - k) as i32)
        })
        .sum();
    scale * lead * sum
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Lengthscale `l` with `l^2 = 0.5 * Q_q`, where `Q_q` is the `quantile`
/// of all pairwise squared distances `|x_i - x_j|^2`, `i < j`.
///
/// Zero distances between duplicate points stay in the pool. The quantile uses
/// linear interpolation between order statistics.
pub fn median_heuristic(points: MatRef<'_, f64>, quantile: f64) -> Result<f64> {
    let xs = rows(points);
    let mut pool = Vec::with_capacity(xs.len() * xs.len().saturating_sub(1) / 2);
    for i in 0..xs.len() {
        for j in (i + 1)..xs.len() {
            pool.push(sq_dist(&xs[i], &xs[j]));
        }
    }
    lengthscale_from_pool(pool, quantile)
}

/// One median-heuristic lengthscale per column.
pub fn columnwise_median_heuristic(points: MatRef<'_, f64>, quantile: f64) -> Result<Vec<f64>> {
    (0..points.ncols())
        .map(|c| median_heuristic(points.subcols(c, 1), quantile))
        .collect()
}

fn lengthscale_from_pool(mut pool: Vec<f64>, quantile: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&quantile) {
        return Err(Error::InvalidArgument(format!(
            "quantile must lie in [0, 1], got {quantile}"
        )));
    }
    if pool.is_empty() {
        return Err(Error::TooFewSamples {
            needed: 2,
            found: 1,
        });
    }
    if pool.iter().all(|d| *d == 0.0) {
        return Err(Error::AllPointsIdentical);
    }
    let q = quantile_in_place(&mut pool, quantile);
    if q <= 0.0 {
        return Err(Error::DegenerateQuantile { quantile });
    }
    Ok((0.5 * q).sqrt())
}

/// Linear-interpolation quantile (the usual "type 7" definition).
pub(crate) fn quantile_in_place(v: &mut [f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    let (_, lo_val, upper) = v.select_nth_unstable_by(lo, f64::total_cmp);
    let lo_val = *lo_val;
    if frac == 0.0 || upper.is_empty() {
        return lo_val;
    }
    let hi_val = upper.iter().copied().fold(f64::INFINITY, f64::min);
    lo_val + frac * (hi_val - lo_val)
}
