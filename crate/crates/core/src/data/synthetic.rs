use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::ProxyDataset;
use crate::error::{Error, Result};

fn draw_u(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let u1: f64 = rng.random_range(-1.0..2.0);
    let shift = if (0.0..=1.0).contains(&u1) { 1.0 } else { 0.0 };
    let u2 = rng.random::<f64>() - shift;
    (u1, u2)
}

fn phase(u1: f64, u2: f64) -> f64 {
    2.0 * (0.3 * u2 + 0.3 * u1 + 0.2)
}

/// Low-dimensional synthetic benchmark: scalar treatment, two-dimensional
/// proxies, confounders `U1 ~ U[-1, 2]` and `U2 ~ U[0, 1] - 1[0 <= U1 <= 1]`.
pub fn gen_synthetic_lowdim(t: usize, seed: u64) -> Result<ProxyDataset> {
    if t < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            found: t,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = Vec::with_capacity(t);
    let mut a = Mat::<f64>::zeros(t, 1);
    let mut z = Mat::<f64>::zeros(t, 2);
    let mut w = Mat::<f64>::zeros(t, 2);
    for i in 0..t {
        let (u1, u2) = draw_u(&mut rng);
        w[(i, 0)] = u2 + rng.random_range(-1.0..1.0);
        w[(i, 1)] = u1 + rng.sample::<f64, _>(StandardNormal);
        z[(i, 0)] = u2 + rng.sample::<f64, _>(StandardNormal);
        z[(i, 1)] = u1 + rng.random_range(-1.0..1.0);
        a[(i, 0)] = u1 + rng.sample::<f64, _>(StandardNormal);
        let noise: f64 = rng.sample(StandardNormal);
        y.push(3.0 * (phase(u1, u2) + 1.5 * a[(i, 0)]).cos() + noise);
    }
    ProxyDataset::new(y, a, z, w)
}

/// Monte Carlo moments of the confounder phase `c = 2(0.3 U2 + 0.3 U1 + 0.2)`.
///
/// `E[3 cos(c + 1.5a)]` expands into `cos c` and `sin c` moments, so one pass
/// over the draws serves any grid; the `2c` moments give the variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthMoments {
    pub cos_c: f64,
    pub sin_c: f64,
    pub cos_2c: f64,
    pub sin_2c: f64,
    pub mc_samples: usize,
    pub seed: u64,
}

impl TruthMoments {
    pub fn sample(mc_samples: usize, seed: u64) -> Result<Self> {
        if mc_samples < 10_000 {
            return Err(Error::InvalidArgument(format!(
                "need at least 1e4 Monte Carlo samples, got {mc_samples}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut c1, mut s1, mut c2, mut s2) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..mc_samples {
            let (u1, u2) = draw_u(&mut rng);
            let c = phase(u1, u2);
            c1 += c.cos();
            s1 += c.sin();
            c2 += (2.0 * c).cos();
            s2 += (2.0 * c).sin();
        }
        let n = mc_samples as f64;
        Ok(Self {
            cos_c: c1 / n,
            sin_c: s1 / n,
            cos_2c: c2 / n,
            sin_2c: s2 / n,
            mc_samples,
            seed,
        })
    }

    /// Estimate and standard error of `theta(a)`.
    pub fn theta(&self, a: f64) -> (f64, f64) {
        let b = 1.5 * a;
        let mean = 3.0 * (self.cos_c * b.cos() - self.sin_c * b.sin());
        // E[9 cos^2(c + b)] = 4.5 (1 + E[cos(2c + 2b)])
        let second = 4.5 * (1.0 + self.cos_2c * (2.0 * b).cos() - self.sin_2c * (2.0 * b).sin());
        let n = self.mc_samples as f64;
        let var = ((second - mean * mean) * n / (n - 1.0)).max(0.0);
        (mean, (var / n).sqrt())
    }

    pub fn truth(&self, grid: &[f64]) -> SyntheticTruth {
        let (theta, std_error) = grid.iter().map(|&a| self.theta(a)).unzip();
        SyntheticTruth {
            dose_grid: grid.to_vec(),
            theta,
            std_error,
            mc_samples: self.mc_samples,
            seed: self.seed,
        }
    }
}

/// Ground-truth dose response on a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub dose_grid: Vec<f64>,
    pub theta: Vec<f64>,
    pub std_error: Vec<f64>,
    pub mc_samples: usize,
    pub seed: u64,
}

/// Monte Carlo estimate of `theta(a) = E_U[3 cos(2(0.3 U2 + 0.3 U1 + 0.2) + 1.5 a)]`.
pub fn true_dose_response(grid: &[f64], mc_samples: usize, seed: u64) -> Result<SyntheticTruth> {
    Ok(TruthMoments::sample(mc_samples, seed)?.truth(grid))
}
