//! Ridge solves, closed-form leave-one-out CV, Nyström and PSD square roots.

use faer::linalg::solvers::Llt;
use faer::prelude::*;
use faer::{Mat, MatRef, Side};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{add_diag, max_abs, max_asymmetry, mean_diag, select_rows};

/// `n` log-spaced values from `lo` to `hi`, both ends included.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n)
                .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
                .collect()
        }
    }
}

/// The 25-point grid on `[5e-5, 1]` used by every LOOCV selection.
pub fn default_loocv_grid() -> Vec<f64> {
    log_grid(5e-5, 1.0, 25)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "regularizer must be positive, got {lambda}"
        )));
    }
    Ok(())
}

fn check_square(m: MatRef<'_, f64>, context: &'static str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            context,
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    Ok(())
}

/// Cholesky of `m`, retrying once with `1e-10 * mean(diag)` added to the diagonal.
pub(crate) fn cholesky_with_jitter(
    mut m: Mat<f64>,
    jitter: f64,
    context: &'static str,
) -> Result<Llt<f64>> {
    if let Ok(f) = m.llt(Side::Lower) {
        return Ok(f);
    }
    add_diag(&mut m, jitter);
    m.llt(Side::Lower)
        .map_err(|_| Error::FactorizationFailed { context })
}

/// Solve a general square system by partial-pivot LU, retrying once with
/// `1e-10 * mean(|diag|)` on the diagonal when the result is not finite.
pub(crate) fn general_solve(
    m: MatRef<'_, f64>,
    rhs: MatRef<'_, f64>,
    context: &'static str,
) -> Result<Mat<f64>> {
    check_square(m, context)?;
    let finite = |x: &Mat<f64>| {
        (0..x.ncols()).all(|j| (0..x.nrows()).all(|i| x[(i, j)].is_finite()))
    };
    let x = m.partial_piv_lu().solve(rhs);
    if finite(&x) {
        return Ok(x);
    }
    let n = m.nrows().max(1);
    let scale = (0..m.nrows()).map(|i| m[(i, i)].abs()).sum::<f64>() / n as f64;
    let mut j = m.to_owned();
    add_diag(&mut j, 1e-10 * scale.max(f64::MIN_POSITIVE));
    let x = j.partial_piv_lu().solve(rhs);
    if finite(&x) {
        Ok(x)
    } else {
        Err(Error::FactorizationFailed { context })
    }
}

/// A cached factorization of `K + n * lambda * I`.
pub struct RidgeFactor {
    llt: Llt<f64>,
    dim: usize,
}

impl RidgeFactor {
    pub fn new(k: MatRef<'_, f64>, n: usize, lambda: f64) -> Result<Self> {
        check_square(k, "ridge kernel")?;
        check_lambda(lambda)?;
        let mut m = k.to_owned();
        add_diag(&mut m, n as f64 * lambda);
        let jitter = 1e-10 * mean_diag(m.as_ref());
        Ok(Self {
            llt: cholesky_with_jitter(m, jitter, "ridge solve")?,
            dim: k.nrows(),
        })
    }

    pub fn solve(&self, rhs: MatRef<'_, f64>) -> Result<Mat<f64>> {
        if rhs.nrows() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "ridge right-hand side",
                expected: self.dim,
                found: rhs.nrows(),
            });
        }
        Ok(self.llt.solve(rhs))
    }
}

/// Solve `(K + n * lambda * I) X = rhs`.
pub fn regularized_solve(
    k: MatRef<'_, f64>,
    rhs: MatRef<'_, f64>,
    n: usize,
    lambda: f64,
) -> Result<Mat<f64>> {
    RidgeFactor::new(k, n, lambda)?.solve(rhs)
}

/// Loss curve of a closed-form LOOCV sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoocvReport {
    pub grid: Vec<f64>,
    pub losses: Vec<f64>,
    pub selected: f64,
}

/// Same shape as [`LoocvReport`], for held-out validation sweeps.
pub type ValidationReport = LoocvReport;

/// Closed-form leave-one-out loss of kernel ridge regression of the features
/// with Gram `g` on inputs with Gram `k`, for every `lambda` in `grid`.
///
/// The loss at one `lambda` is `(1/t) Tr(D^-1 H G H D^-1)` with
/// `H = I - K (K + t lambda I)^-1` and `D = diag(H)`. One eigendecomposition of
/// `K` is shared across the grid. Ties go to the smaller `lambda`.
pub fn loocv(k: MatRef<'_, f64>, g: MatRef<'_, f64>, grid: &[f64]) -> Result<LoocvReport> {
    LoocvBasis::new(k)?.sweep(g, grid)
}

/// Eigendecomposition of a LOOCV input Gram, reusable across output Grams.
pub struct LoocvBasis {
    u: Mat<f64>,
    eig: Vec<f64>,
}

/// A [`LoocvBasis`] with one output Gram rotated into it.
pub struct LoocvOutput<'a> {
    basis: &'a LoocvBasis,
    g_rot: Mat<f64>,
}

impl LoocvBasis {
    pub fn new(k: MatRef<'_, f64>) -> Result<Self> {
        check_square(k, "loocv input gram")?;
        let evd = k
            .self_adjoint_eigen(Side::Lower)
            .map_err(|_| Error::FactorizationFailed {
                context: "loocv eigendecomposition",
            })?;
        let u = evd.U().to_owned();
        let eig = (0..k.nrows()).map(|i| evd.S()[i].max(0.0)).collect();
        Ok(Self { u, eig })
    }

    pub fn dim(&self) -> usize {
        self.eig.len()
    }

    pub fn output(&self, g: MatRef<'_, f64>) -> Result<LoocvOutput<'_>> {
        if g.nrows() != self.dim() || g.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "loocv output gram",
                expected: self.dim(),
                found: g.nrows(),
            });
        }
        Ok(LoocvOutput {
            basis: self,
            g_rot: self.u.transpose() * g * &self.u,
        })
    }

    pub fn sweep(&self, g: MatRef<'_, f64>, grid: &[f64]) -> Result<LoocvReport> {
        self.output(g)?.sweep(grid)
    }
}

impl LoocvOutput<'_> {
    pub fn loss(&self, lambda: f64) -> Result<f64> {
        check_lambda(lambda)?;
        let (u, eig) = (&self.basis.u, &self.basis.eig);
        let t = eig.len();
        let shift = t as f64 * lambda;
        let c: Vec<f64> = eig.iter().map(|s| shift / (s + shift)).collect();
        let x = Mat::from_fn(t, t, |i, j| u[(i, j)] * c[j]);
        let y = &x * &self.g_rot;
        let mut total = 0.0;
        for i in 0..t {
            let h: f64 = (0..t).map(|j| u[(i, j)] * x[(i, j)]).sum();
            if h.abs() < 1e-14 {
                return Err(Error::DegenerateDiagonal { lambda });
            }
            let hgh: f64 = (0..t).map(|j| y[(i, j)] * x[(i, j)]).sum();
            total += hgh / (h * h);
        }
        Ok(total / t as f64)
    }

    pub fn sweep(&self, grid: &[f64]) -> Result<LoocvReport> {
        let losses = grid
            .iter()
            .map(|&l| self.loss(l))
            .collect::<Result<Vec<_>>>()?;
        Ok(LoocvReport {
            selected: argmin_smallest(grid, &losses)?,
            grid: grid.to_vec(),
            losses,
        })
    }
}

/// The grid value with the lowest loss; ties resolve to the smaller value.
pub fn argmin_smallest(grid: &[f64], losses: &[f64]) -> Result<f64> {
    if grid.is_empty() || grid.len() != losses.len() {
        return Err(Error::InvalidArgument("empty or mismatched grid".into()));
    }
    let mut best = 0;
    for i in 1..grid.len() {
        let better = losses[i] < losses[best]
            || (losses[i] == losses[best] && grid[i] < grid[best])
            || (losses[best].is_nan() && !losses[i].is_nan());
        if better {
            best = i;
        }
    }
    Ok(grid[best])
}

/// Uniform landmark indices without replacement, sorted.
pub fn select_landmarks(t: usize, p: usize, seed: u64) -> Result<Vec<usize>> {
    if p == 0 || p > t {
        return Err(Error::InvalidArgument(format!(
            "landmark count must lie in 1..={t}, got {p}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, t, p).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Landmark settings for the Nyström approximation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NystromConfig {
    pub landmarks: usize,
    pub seed: u64,
}

fn nystrom_factor(
    k_xs: MatRef<'_, f64>,
    k_ss: MatRef<'_, f64>,
    n: usize,
    lambda: f64,
) -> Result<Llt<f64>> {
    check_lambda(lambda)?;
    check_square(k_ss, "nystrom landmark gram")?;
    if k_xs.ncols() != k_ss.nrows() {
        return Err(Error::DimensionMismatch {
            context: "nystrom cross gram",
            expected: k_ss.nrows(),
            found: k_xs.ncols(),
        });
    }
    let p = k_ss.nrows();
    let mut sys = k_xs.transpose() * k_xs;
    sys += k_ss * faer::Scale(n as f64 * lambda);
    let trace: f64 = (0..p).map(|i| k_ss[(i, i)]).sum();
    cholesky_with_jitter(sys, 1e-10 * trace / p as f64, "nystrom solve")
}

/// Nyström ridge coefficients `c` solving
/// `(K_XS^T K_XS + n lambda K_SS) c = K_XS^T targets`. Predict with `c^T K_Sx`.
pub fn nystrom_solve(
    k_xs: MatRef<'_, f64>,
    k_ss: MatRef<'_, f64>,
    targets: MatRef<'_, f64>,
    n: usize,
    lambda: f64,
) -> Result<Mat<f64>> {
    if targets.nrows() != k_xs.nrows() {
        return Err(Error::DimensionMismatch {
            context: "nystrom targets",
            expected: k_xs.nrows(),
            found: targets.nrows(),
        });
    }
    let f = nystrom_factor(k_xs, k_ss, n, lambda)?;
    Ok(f.solve(k_xs.transpose() * targets))
}

/// Kernel ridge smoother `x -> (K + t lambda I)^-1 K_Xx` over a fixed training
/// set, either exact or through Nyström landmarks.
///
/// Every stage regression in the estimators only needs these weights: the
/// prediction at `x` for targets `Y` is `weights(x)^T Y`.
pub enum Smoother {
    Full(RidgeFactor),
    Nystrom {
        landmarks: Vec<usize>,
        k_xs: Mat<f64>,
        factor: Llt<f64>,
    },
}

impl Smoother {
    /// `k` is the training Gram; `n` the sample count that scales `lambda`.
    /// With `nystrom` set and fewer landmarks than points, the Nyström form is
    /// used; with every point as a landmark the two coincide, so the exact
    /// solve is used instead.
    pub fn new(
        k: MatRef<'_, f64>,
        n: usize,
        lambda: f64,
        nystrom: Option<NystromConfig>,
    ) -> Result<Self> {
        match nystrom {
            Some(cfg) if cfg.landmarks < k.nrows() => {
                let landmarks = select_landmarks(k.nrows(), cfg.landmarks, cfg.seed)?;
                let k_xs = crate::linalg::select_cols(k, &landmarks);
                let k_ss = select_rows(k_xs.as_ref(), &landmarks);
                let factor = nystrom_factor(k_xs.as_ref(), k_ss.as_ref(), n, lambda)?;
                Ok(Smoother::Nystrom {
                    landmarks,
                    k_xs,
                    factor,
                })
            }
            _ => Ok(Smoother::Full(RidgeFactor::new(k, n, lambda)?)),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Smoother::Full(f) => f.dim,
            Smoother::Nystrom { k_xs, .. } => k_xs.nrows(),
        }
    }

    /// Weights for each query column of `k_xq` (training rows by queries).
    pub fn weights(&self, k_xq: MatRef<'_, f64>) -> Result<Mat<f64>> {
        match self {
            Smoother::Full(f) => f.solve(k_xq),
            Smoother::Nystrom {
                landmarks,
                k_xs,
                factor,
            } => {
                if k_xq.nrows() != k_xs.nrows() {
                    return Err(Error::DimensionMismatch {
                        context: "nystrom query gram",
                        expected: k_xs.nrows(),
                        found: k_xq.nrows(),
                    });
                }
                let k_sq = select_rows(k_xq, landmarks);
                Ok(k_xs * factor.solve(k_sq))
            }
        }
    }

    /// Representer coefficients over the training set for targets `y`:
    /// prediction at `x` is `sum_j coef_j k(x_j, x)`. In Nyström mode only
    /// landmark entries are nonzero.
    pub fn coefficients(&self, y: MatRef<'_, f64>) -> Result<Mat<f64>> {
        match self {
            Smoother::Full(f) => f.solve(y),
            Smoother::Nystrom {
                landmarks,
                k_xs,
                factor,
            } => {
                let c = factor.solve(k_xs.transpose() * y);
                let mut out = Mat::<f64>::zeros(k_xs.nrows(), y.ncols());
                for (r, &s) in landmarks.iter().enumerate() {
                    for j in 0..y.ncols() {
                        out[(s, j)] = c[(r, j)];
                    }
                }
                Ok(out)
            }
        }
    }
}

/// Symmetric PSD square root; negative eigenvalues are clipped to zero.
pub fn psd_sqrt(m: MatRef<'_, f64>) -> Result<Mat<f64>> {
    check_square(m, "psd_sqrt input")?;
    let asym = max_asymmetry(m);
    if asym > 1e-8 * max_abs(m).max(1.0) {
        return Err(Error::NotSymmetric {
            max_asymmetry: asym,
        });
    }
    let evd = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| Error::FactorizationFailed {
            context: "psd_sqrt eigendecomposition",
        })?;
    let u = evd.U();
    let n = m.nrows();
    let root: Vec<f64> = (0..n).map(|i| evd.S()[i].max(0.0).sqrt()).collect();
    let scaled = Mat::from_fn(n, n, |i, j| u[(i, j)] * root[j]);
    let mut s = &scaled * u.transpose();
    // exact symmetry
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (s[(i, j)] + s[(j, i)]);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_grid_endpoints_and_ratio() {
        let g = default_loocv_grid();
        assert_eq!(g.len(), 25);
        assert!((g[0] - 5e-5).abs() < 1e-18);
        assert!((g[24] - 1.0).abs() < 1e-12);
        let r = g[1] / g[0];
        for w in g.windows(2) {
            assert!((w[1] / w[0] - r).abs() < 1e-10);
        }
    }

    #[test]
    fn argmin_prefers_smaller_on_ties() {
        assert_eq!(argmin_smallest(&[1.0, 2.0, 3.0], &[5.0, 1.0, 1.0]).unwrap(), 2.0);
        assert_eq!(argmin_smallest(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn ridge_solve_two_by_two() {
        // (K + 2 * 0.5 I) = [[3, 1], [1, 2]]; inverse times [1, 0] = [0.4, -0.2]
        let k = mat![[2.0, 1.0], [1.0, 1.0]];
        let b = mat![[1.0], [0.0]];
        let x = regularized_solve(k.as_ref(), b.as_ref(), 2, 0.5).unwrap();
        assert!((x[(0, 0)] - 0.4).abs() < 1e-14);
        assert!((x[(1, 0)] + 0.2).abs() < 1e-14);
    }

    #[test]
    fn psd_sqrt_squares_back_and_clips() {
        let m = mat![[4.0, 0.0], [0.0, -1e-3]];
        let s = psd_sqrt(m.as_ref()).unwrap();
        assert!((s[(0, 0)] - 2.0).abs() < 1e-14);
        assert!(s[(1, 1)].abs() < 1e-14);
        let bad = mat![[1.0, 0.5], [0.0, 1.0]];
        assert!(matches!(psd_sqrt(bad.as_ref()), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn landmarks_are_distinct_and_seeded() {
        let a = select_landmarks(100, 10, 7).unwrap();
        let b = select_landmarks(100, 10, 7).unwrap();
        assert_eq!(a, b);
        let mut d = a.clone();
        d.dedup();
        assert_eq!(d.len(), 10);
        assert!(select_landmarks(5, 6, 0).is_err());
    }
}
