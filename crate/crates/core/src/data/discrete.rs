//! A binary `(U, A, Z, W)` world where every identification quantity can be
//! computed exactly by enumeration.

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ProxyDataset;
use crate::error::{Error, Result};

/// Values indexed `[x][a]` over the binary supports.
pub type Table = [[f64; 2]; 2];

/// Joint law `p(u) p(a|u) p(z|u,a) p(w|u)` with `E[Y|u,a]` deterministic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteToyWorld {
    pub p_u: [f64; 2],
    /// `p_a_u[u][a]`
    pub p_a_u: [[f64; 2]; 2],
    /// `p_z_ua[u][a][z]`
    pub p_z_ua: [[[f64; 2]; 2]; 2],
    /// `p_w_u[u][w]`
    pub p_w_u: [[f64; 2]; 2],
    /// `y[u][a] = E[Y | u, a]`
    pub y: [[f64; 2]; 2],
}

const MIN_DET: f64 = 1e-3;

fn bernoulli_pair(rng: &mut ChaCha8Rng) -> [f64; 2] {
    let p = rng.random_range(0.05..0.95);
    [1.0 - p, p]
}

/// Random world with all conditionals in `[0.05, 0.95]` and `E[Y|u,a]` in `[-1, 1]`.
///
/// Fails with [`Error::SingularBridgeSystem`] when either bridge system is
/// nearly singular; callers move on to the next seed.
pub fn gen_discrete_toy(seed: u64) -> Result<DiscreteToyWorld> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p_u = bernoulli_pair(&mut rng);
    let p_a_u = [bernoulli_pair(&mut rng), bernoulli_pair(&mut rng)];
    let mut p_z_ua = [[[0.0; 2]; 2]; 2];
    for row in p_z_ua.iter_mut() {
        for cell in row.iter_mut() {
            *cell = bernoulli_pair(&mut rng);
        }
    }
    let p_w_u = [bernoulli_pair(&mut rng), bernoulli_pair(&mut rng)];
    let mut y = [[0.0; 2]; 2];
    for row in y.iter_mut() {
        for v in row.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
    }
    let world = DiscreteToyWorld {
        p_u,
        p_a_u,
        p_z_ua,
        p_w_u,
        y,
    };
    world.outcome_bridge()?;
    world.treatment_bridge()?;
    Ok(world)
}

fn solve2(m: [[f64; 2]; 2], b: [f64; 2]) -> Result<[f64; 2]> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det.abs() < MIN_DET {
        return Err(Error::SingularBridgeSystem);
    }
    Ok([
        (b[0] * m[1][1] - m[0][1] * b[1]) / det,
        (m[0][0] * b[1] - m[1][0] * b[0]) / det,
    ])
}

impl DiscreteToyWorld {
    /// The same world with `A` independent of `U` (no confounding).
    pub fn unconfounded(mut self) -> Self {
        self.p_a_u[1] = self.p_a_u[0];
        self
    }

    /// The same world with a constant outcome.
    pub fn constant_outcome(mut self, c: f64) -> Self {
        self.y = [[c; 2]; 2];
        self
    }

    fn joint(&self, u: usize, a: usize, z: usize, w: usize) -> f64 {
        self.p_u[u] * self.p_a_u[u][a] * self.p_z_ua[u][a][z] * self.p_w_u[u][w]
    }

    pub fn p_a(&self, a: usize) -> f64 {
        (0..2).map(|u| self.p_u[u] * self.p_a_u[u][a]).sum()
    }

    pub fn p_w(&self, w: usize) -> f64 {
        (0..2).map(|u| self.p_u[u] * self.p_w_u[u][w]).sum()
    }

    fn p_wa(&self, w: usize, a: usize) -> f64 {
        (0..2)
            .map(|u| self.p_u[u] * self.p_a_u[u][a] * self.p_w_u[u][w])
            .sum()
    }

    fn p_za(&self, z: usize, a: usize) -> f64 {
        (0..2)
            .map(|u| self.p_u[u] * self.p_a_u[u][a] * self.p_z_ua[u][a][z])
            .sum()
    }

    /// `theta(a) = sum_u E[Y|u,a] p(u)`.
    pub fn theta(&self, a: usize) -> f64 {
        (0..2).map(|u| self.y[u][a] * self.p_u[u]).sum()
    }

    /// `E[Y | A = a]`, the confounded regression.
    pub fn e_y_given_a(&self, a: usize) -> f64 {
        (0..2)
            .map(|u| self.y[u][a] * self.p_u[u] * self.p_a_u[u][a])
            .sum::<f64>()
            / self.p_a(a)
    }

    /// `p(W)p(a)/p(W,a)`, the target of the treatment bridge.
    pub fn density_ratio(&self, w: usize, a: usize) -> f64 {
        self.p_w(w) * self.p_a(a) / self.p_wa(w, a)
    }

    /// Exact `h0[w][a]` from `sum_w p(w|z,a) h(w,a) = E[Y|z,a]` for both `z`.
    pub fn outcome_bridge(&self) -> Result<Table> {
        let mut h = [[0.0; 2]; 2];
        for a in 0..2 {
            let mut m = [[0.0; 2]; 2];
            let mut b = [0.0; 2];
            for z in 0..2 {
                let pza = self.p_za(z, a);
                for w in 0..2 {
                    m[z][w] = (0..2).map(|u| self.joint(u, a, z, w)).sum::<f64>() / pza;
                }
                b[z] = (0..2)
                    .map(|u| self.y[u][a] * self.p_u[u] * self.p_a_u[u][a] * self.p_z_ua[u][a][z])
                    .sum::<f64>()
                    / pza;
            }
            let sol = solve2(m, b)?;
            h[0][a] = sol[0];
            h[1][a] = sol[1];
        }
        Ok(h)
    }

    /// Exact `phi0[z][a]` from `sum_z p(z|w,a) phi(z,a) = p(w)p(a)/p(w,a)` for both `w`.
    pub fn treatment_bridge(&self) -> Result<Table> {
        let mut phi = [[0.0; 2]; 2];
        for a in 0..2 {
            let mut m = [[0.0; 2]; 2];
            let mut b = [0.0; 2];
            for w in 0..2 {
                let pwa = self.p_wa(w, a);
                for z in 0..2 {
                    m[w][z] = (0..2).map(|u| self.joint(u, a, z, w)).sum::<f64>() / pwa;
                }
                b[w] = self.density_ratio(w, a);
            }
            let sol = solve2(m, b)?;
            phi[0][a] = sol[0];
            phi[1][a] = sol[1];
        }
        Ok(phi)
    }

    /// `E[f(U, Z, W) | A = a]` by enumeration.
    fn cond_expect(&self, a: usize, f: impl Fn(usize, usize, usize) -> f64) -> f64 {
        let mut s = 0.0;
        for u in 0..2 {
            for z in 0..2 {
                for w in 0..2 {
                    s += self.joint(u, a, z, w) * f(u, z, w);
                }
            }
        }
        s / self.p_a(a)
    }

    /// `E[h(W, a)]` over the marginal of `W`.
    pub fn outcome_functional(&self, h: &Table, a: usize) -> f64 {
        (0..2).map(|w| self.p_w(w) * h[w][a]).sum()
    }

    /// `E[phi(Z, a) Y | A = a]`.
    pub fn treatment_functional(&self, phi: &Table, a: usize) -> f64 {
        self.cond_expect(a, |u, z, _| phi[z][a] * self.y[u][a])
    }

    /// `E[phi(Z, a) h(W, a) | A = a]`.
    pub fn slack_functional(&self, h: &Table, phi: &Table, a: usize) -> f64 {
        self.cond_expect(a, |_, z, w| phi[z][a] * h[w][a])
    }

    /// `E[phi(Z,a)(Y - h(W,a)) | A = a] + E[h(W,a)]`.
    pub fn dr_functional(&self, h: &Table, phi: &Table, a: usize) -> f64 {
        self.cond_expect(a, |u, z, w| phi[z][a] * (self.y[u][a] - h[w][a]))
            + self.outcome_functional(h, a)
    }

    /// `t` i.i.d. draws with `a`, `z`, `w` as 0/1 scalar features.
    pub fn sample(&self, t: usize, seed: u64) -> Result<ProxyDataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |p: &[f64; 2]| usize::from(rng.random::<f64>() >= p[0]);
        let mut y = Vec::with_capacity(t);
        let mut a = Mat::<f64>::zeros(t, 1);
        let mut z = Mat::<f64>::zeros(t, 1);
        let mut w = Mat::<f64>::zeros(t, 1);
        for i in 0..t {
            let u = draw(&self.p_u);
            let ai = draw(&self.p_a_u[u]);
            let zi = draw(&self.p_z_ua[u][ai]);
            let wi = draw(&self.p_w_u[u]);
            y.push(self.y[u][ai]);
            a[(i, 0)] = ai as f64;
            z[(i, 0)] = zi as f64;
            w[(i, 0)] = wi as f64;
        }
        ProxyDataset::new(y, a, z, w)
    }
}
