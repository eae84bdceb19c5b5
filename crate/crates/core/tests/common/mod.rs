#![allow(dead_code)]

pub mod oracles;

use nalgebra::{DMatrix, DVector};
use proxal::faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn to_na(m: &Mat<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

pub fn to_faer(m: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

pub fn col(v: &[f64]) -> Mat<f64> {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Mat<f64> {
    Mat::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

pub fn rows(m: &Mat<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Gaussian kernel written out from its formula.
pub fn gauss(x: &[f64], y: &[f64], l: f64) -> f64 {
    let d: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-d / (2.0 * l * l)).exp()
}

pub fn gauss_gram(x: &[Vec<f64>], y: &[Vec<f64>], l: f64) -> DMatrix<f64> {
    DMatrix::from_fn(x.len(), y.len(), |i, j| gauss(&x[i], &y[j], l))
}

/// Recover `H` and `c` of a quadratic `f(x) = x'Hx - 2c'x + f(0)` from
/// evaluations alone, then return its minimizer.
pub fn minimize_quadratic(dim: usize, f: impl Fn(&DVector<f64>) -> f64) -> DVector<f64> {
    let zero = DVector::zeros(dim);
    let f0 = f(&zero);
    let e = |i: usize| {
        let mut v = DVector::zeros(dim);
        v[i] = 1.0;
        v
    };
    let mut diag_plus = vec![0.0; dim];
    let mut diag_minus = vec![0.0; dim];
    for i in 0..dim {
        diag_plus[i] = f(&e(i));
        diag_minus[i] = f(&(-e(i)));
    }
    let mut h = DMatrix::zeros(dim, dim);
    let mut c = DVector::zeros(dim);
    for i in 0..dim {
        // f(e) + f(-e) = 2 H_ii + 2 f0; f(e) - f(-e) = -4 c_i
        h[(i, i)] = 0.5 * (diag_plus[i] + diag_minus[i]) - f0;
        c[i] = -(diag_plus[i] - diag_minus[i]) / 4.0;
    }
    for i in 0..dim {
        for j in (i + 1)..dim {
            // f(e_i + e_j) = H_ii + H_jj + 2 H_ij - 2 c_i - 2 c_j + f0
            let v = f(&(e(i) + e(j)));
            let hij = 0.5 * (v - h[(i, i)] - h[(j, j)] + 2.0 * c[i] + 2.0 * c[j] - f0);
            h[(i, j)] = hij;
            h[(j, i)] = hij;
        }
    }
    h.lu().solve(&c).expect("quadratic has a unique minimizer")
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

/// Small confounded dataset with scalar `a`, `z`, `w`.
pub fn toy_data(seed: u64, t: usize) -> proxal::data::ProxyDataset {
    let mut r = rng(seed);
    let u = uniform(&mut r, t, 1, -1.0, 1.0);
    let noise = uniform(&mut r, t, 4, -0.5, 0.5);
    let a = Mat::from_fn(t, 1, |i, _| u[(i, 0)] + noise[(i, 0)]);
    let z = Mat::from_fn(t, 1, |i, _| u[(i, 0)] + noise[(i, 1)]);
    let w = Mat::from_fn(t, 1, |i, _| u[(i, 0)] + noise[(i, 2)]);
    let y = (0..t)
        .map(|i| (a[(i, 0)] + u[(i, 0)]).cos() + noise[(i, 3)])
        .collect();
    proxal::data::ProxyDataset::new(y, a, z, w).unwrap()
}

pub fn gauss_kernels(l: f64) -> proxal::kernels::KernelSet {
    let k = proxal::kernels::Kernel::gaussian(l).unwrap();
    proxal::kernels::KernelSet {
        a: k.clone(),
        z: k.clone(),
        w: k,
    }
}

/// First discrete world at or after `seed` whose bridge systems are solvable.
pub fn discrete_world(seed: u64) -> proxal::data::DiscreteToyWorld {
    (seed..seed + 100)
        .find_map(|s| proxal::data::gen_discrete_toy(s).ok())
        .unwrap()
}

pub fn with_y(data: &proxal::data::ProxyDataset, y: Vec<f64>) -> proxal::data::ProxyDataset {
    proxal::data::ProxyDataset::new(y, data.a.clone(), data.z.clone(), data.w.clone()).unwrap()
}

/// Refit ridge regression `t` times, each without one point, with the same
/// absolute shift `t * lambda`, and average the held-out feature-space errors.
pub fn naive_loo(k: &DMatrix<f64>, g: &DMatrix<f64>, lambda: f64) -> f64 {
    let t = k.nrows();
    let mut total = 0.0;
    for i in 0..t {
        let keep: Vec<usize> = (0..t).filter(|&j| j != i).collect();
        let kk = DMatrix::from_fn(t - 1, t - 1, |a, b| k[(keep[a], keep[b])]);
        let shifted = kk + DMatrix::identity(t - 1, t - 1) * (t as f64 * lambda);
        let kx = DVector::from_fn(t - 1, |a, _| k[(keep[a], i)]);
        let beta = shifted.lu().solve(&kx).unwrap();
        // |phi_i - sum_a beta_a phi_keep[a]|^2 via the output Gram
        let mut err = g[(i, i)];
        for a in 0..t - 1 {
            err -= 2.0 * beta[a] * g[(keep[a], i)];
            for b in 0..t - 1 {
                err += beta[a] * beta[b] * g[(keep[a], keep[b])];
            }
        }
        total += err;
    }
    total / t as f64
}

/// A binary world with informative proxies, so both bridge systems are well
/// conditioned and finite-sample fits can be compared against exact bridges.
pub fn strong_proxy_world() -> proxal::data::DiscreteToyWorld {
    let proxy = |u: usize| if u == 0 { [0.97, 0.03] } else { [0.03, 0.97] };
    proxal::data::DiscreteToyWorld {
        p_u: [0.5, 0.5],
        p_a_u: [[0.6, 0.4], [0.4, 0.6]],
        p_z_ua: [[proxy(0); 2], [proxy(1); 2]],
        p_w_u: [proxy(0), proxy(1)],
        y: [[0.2, -0.5], [0.9, 0.4]],
    }
}
