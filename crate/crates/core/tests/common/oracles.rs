//! Independent implementations of the bridge objectives from scalar kernel loops.

use super::*;
use nalgebra::{DMatrix, DVector};
use proxal::data::{ProxyDataset, StageSplit};
use proxal::faer::Mat;

pub const L: f64 = 0.7;

pub fn pts(m: &Mat<f64>, idx: &[usize]) -> Vec<Vec<f64>> {
    let r = rows(m);
    idx.iter().map(|&i| r[i].clone()).collect()
}

/// First-stage weights `(K_AA ⊙ K_ZZ + n lambda I)^-1 (K_Aq ⊙ K_Zq)` from scratch.
pub fn stage1_weights(
    a1: &[Vec<f64>],
    z1: &[Vec<f64>],
    aq: &[Vec<f64>],
    zq: &[Vec<f64>],
    lambda: f64,
) -> DMatrix<f64> {
    let n = a1.len();
    let gamma = DMatrix::from_fn(n, n, |i, j| {
        gauss(&a1[i], &a1[j], L) * gauss(&z1[i], &z1[j], L)
            + if i == j { n as f64 * lambda } else { 0.0 }
    });
    let rhs = DMatrix::from_fn(n, aq.len(), |i, j| {
        gauss(&a1[i], &aq[j], L) * gauss(&z1[i], &zq[j], L)
    });
    gamma.lu().solve(&rhs).unwrap()
}

pub struct KpvOracle {
    /// `<f_i, f_j>` of the second-stage features.
    pub ip: DMatrix<f64>,
    pub y2: Vec<f64>,
    pub w1: Vec<Vec<f64>>,
    pub a2: Vec<Vec<f64>>,
    pub b: DMatrix<f64>,
}

impl KpvOracle {
    pub fn new(data: &ProxyDataset, split: &StageSplit, l1: f64) -> Self {
        let (a1, z1, w1) = (
            pts(&data.a, &split.first),
            pts(&data.z, &split.first),
            pts(&data.w, &split.first),
        );
        let (a2, z2) = (pts(&data.a, &split.second), pts(&data.z, &split.second));
        let b = stage1_weights(&a1, &z1, &a2, &z2, l1);
        let (n, m) = (a1.len(), a2.len());
        let mut ip = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                let mut s = 0.0;
                for k in 0..n {
                    for l in 0..n {
                        s += b[(k, i)] * b[(l, j)] * gauss(&w1[k], &w1[l], L);
                    }
                }
                ip[(i, j)] = s * gauss(&a2[i], &a2[j], L);
            }
        }
        let y2 = split.second.iter().map(|&i| data.y[i]).collect();
        Self { ip, y2, w1, a2, b }
    }

    pub fn objective(&self, alpha: &DVector<f64>, l2: f64) -> f64 {
        let m = self.y2.len();
        let fit = &self.ip * alpha;
        let sse: f64 = (0..m).map(|i| (self.y2[i] - fit[i]).powi(2)).sum();
        sse / m as f64 + l2 * alpha.dot(&(&self.ip * alpha))
    }

    /// `h(w, a)` by a double loop over both stages.
    pub fn eval(&self, alpha: &[f64], w: &[f64], a: &[f64]) -> f64 {
        let mut s = 0.0;
        for j in 0..self.a2.len() {
            let mut inner = 0.0;
            for k in 0..self.w1.len() {
                inner += self.b[(k, j)] * gauss(&self.w1[k], w, L);
            }
            s += alpha[j] * gauss(&self.a2[j], a, L) * inner;
        }
        s
    }
}

pub struct PmmrOracle {
    pub l: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl PmmrOracle {
    pub fn new(data: &ProxyDataset) -> Self {
        let (a, z, w) = (rows(&data.a), rows(&data.z), rows(&data.w));
        let t = data.len();
        let ab = |i: usize, j: usize| gauss(&a[i], &a[j], L);
        Self {
            l: DMatrix::from_fn(t, t, |i, j| ab(i, j) * gauss(&w[i], &w[j], L)),
            g: DMatrix::from_fn(t, t, |i, j| ab(i, j) * gauss(&z[i], &z[j], L)),
            y: DVector::from_vec(data.y.clone()),
        }
    }

    /// `(1/t^2)(Y - L a)^T G (Y - L a) + (lambda/t) a^T L a`.
    pub fn objective(&self, alpha: &DVector<f64>, lambda: f64) -> f64 {
        let t = self.y.len() as f64;
        let r = &self.y - &self.l * alpha;
        r.dot(&(&self.g * &r)) / (t * t) + lambda / t * alpha.dot(&(&self.l * alpha))
    }
}

/// KAP built from scalar kernel evaluations and explicit loops.
pub struct KapOracle {
    pub w1: Vec<Vec<f64>>,
    pub a1: Vec<Vec<f64>>,
    pub z1: Vec<Vec<f64>>,
    pub a2: Vec<Vec<f64>>,
    pub gamma_lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    pub b: DMatrix<f64>,
    pub b_tilde: DMatrix<f64>,
    /// Inner products of the `m + 1` features.
    pub ip: DMatrix<f64>,
}

impl KapOracle {
    pub fn new(data: &ProxyDataset, split: &StageSplit, l1: f64) -> Self {
        let (w1, a1, z1) = (
            pts(&data.w, &split.first),
            pts(&data.a, &split.first),
            pts(&data.z, &split.first),
        );
        let (w2, a2) = (pts(&data.w, &split.second), pts(&data.a, &split.second));
        let (n, m) = (w1.len(), w2.len());
        let gamma = DMatrix::from_fn(n, n, |i, j| {
            gauss(&w1[i], &w1[j], L) * gauss(&a1[i], &a1[j], L)
                + if i == j { n as f64 * l1 } else { 0.0 }
        });
        let gamma_lu = gamma.lu();
        let embed = |w: &[f64], a: &[f64]| {
            let rhs = DVector::from_fn(n, |k, _| gauss(&w1[k], w, L) * gauss(&a1[k], a, L));
            gamma_lu.solve(&rhs).unwrap()
        };
        let mut b = DMatrix::zeros(n, m);
        let mut b_tilde: DMatrix<f64> = DMatrix::zeros(n, m);
        for i in 0..m {
            b.set_column(i, &embed(&w2[i], &a2[i]));
            for j in 0..m {
                if j != i {
                    let e = embed(&w2[j], &a2[i]);
                    for k in 0..n {
                        b_tilde[(k, i)] += e[k] / (m - 1) as f64;
                    }
                }
            }
        }
        let kz = DMatrix::from_fn(n, n, |i, j| gauss(&z1[i], &z1[j], L));
        let ka = |i: usize, j: usize| gauss(&a2[i], &a2[j], L);
        let cross = |x: &DMatrix<f64>, i: usize, y: &DMatrix<f64>, j: usize| {
            x.column(i).dot(&(&kz * y.column(j)))
        };
        let mut ip = DMatrix::zeros(m + 1, m + 1);
        for i in 0..m {
            for j in 0..m {
                ip[(i, j)] = cross(&b, i, &b, j) * ka(i, j);
                ip[(i, m)] += cross(&b, i, &b_tilde, j) * ka(i, j) / m as f64;
                ip[(m, m)] += cross(&b_tilde, i, &b_tilde, j) * ka(i, j) / (m * m) as f64;
            }
            ip[(m, i)] = ip[(i, m)];
        }
        Self {
            w1,
            a1,
            z1,
            a2,
            gamma_lu,
            b,
            b_tilde,
            ip,
        }
    }

    pub fn m(&self) -> usize {
        self.a2.len()
    }

    /// Sample KAP loss: `(1/m) sum_i <phi, f_i>^2 - 2 <phi, g> + lambda ||phi||^2`.
    pub fn objective(&self, gamma: &DVector<f64>, l2: f64) -> f64 {
        let m = self.m();
        let proj = &self.ip * gamma;
        let sq: f64 = (0..m).map(|i| proj[i] * proj[i]).sum();
        sq / m as f64 - 2.0 * proj[m] + l2 * gamma.dot(&proj)
    }

    pub fn phi(&self, gamma: &[f64], z: &[f64], a: &[f64]) -> f64 {
        let m = self.m();
        let mut s = 0.0;
        for i in 0..m {
            let (mut fb, mut ft) = (0.0, 0.0);
            for k in 0..self.z1.len() {
                let kz = gauss(&self.z1[k], z, L);
                fb += self.b[(k, i)] * kz;
                ft += self.b_tilde[(k, i)] * kz;
            }
            let ka = gauss(&self.a2[i], a, L);
            s += gamma[i] * fb * ka + gamma[m] * ft * ka / m as f64;
        }
        s
    }

    /// `<phi, mu(w, a) ⊗ phi_A(a)>` through the first-stage embedding.
    pub fn projected(&self, gamma: &[f64], w: &[f64], a: &[f64]) -> f64 {
        let n = self.w1.len();
        let rhs = DVector::from_fn(n, |k, _| gauss(&self.w1[k], w, L) * gauss(&self.a1[k], a, L));
        let beta = self.gamma_lu.solve(&rhs).unwrap();
        (0..n).map(|k| beta[k] * self.phi(gamma, &self.z1[k], a)).sum()
    }
}
