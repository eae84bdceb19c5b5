mod common;

use common::oracles::*;
use common::*;
use nalgebra::{DMatrix, DVector};
use proxal::data::{split_stages, ProxyDataset, StageSplit};
use proxal::kernels::Grams;
use proxal::outcome_bridge::{
    holdout_split, kpv_fit, pmmr_fit, tune_lambda_h2, tune_lambda_mmr, KpvModel,
};
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn fit_kpv(seed: u64, t: usize, l1: f64, l2: f64) -> (ProxyDataset, StageSplit, KpvModel) {
    let data = toy_data(seed, t);
    let split = split_stages(t, seed + 7).unwrap();
    let model = kpv_fit(&data, &split, &gauss_kernels(L), l1, l2).unwrap();
    (data, split, model)
}

#[test]
fn kpv_alpha_is_the_direct_minimizer() {
    for seed in 0..5 {
        let t = 12 + seed as usize % 5;
        let (data, split, model) = fit_kpv(seed, t, 0.1, 0.05);
        let oracle = KpvOracle::new(&data, &split, 0.1);
        let best = minimize_quadratic(model.alpha.len(), |x| oracle.objective(x, 0.05));
        let err = rel_err(&model.alpha, best.as_slice());
        assert!(err < 1e-6, "seed {seed}: relative error {err}");
    }
}

#[test]
fn kpv_first_stage_residual() {
    let (data, split, model) = fit_kpv(1, 40, 0.01, 0.01);
    let (a1, z1) = (pts(&data.a, &split.first), pts(&data.z, &split.first));
    let (a2, z2) = (pts(&data.a, &split.second), pts(&data.z, &split.second));
    let n = a1.len();
    let gamma = DMatrix::from_fn(n, n, |i, j| {
        gauss(&a1[i], &a1[j], L) * gauss(&z1[i], &z1[j], L) + if i == j { n as f64 * 0.01 } else { 0.0 }
    });
    let rhs = DMatrix::from_fn(n, a2.len(), |i, j| gauss(&a1[i], &a2[j], L) * gauss(&z1[i], &z2[j], L));
    let res = (&gamma * to_na(&model.b) - &rhs).abs().max();
    assert!(res <= 1e-7, "residual {res}");
}

#[test]
fn kpv_zero_targets_give_zero_bridge() {
    let data = with_y(&toy_data(2, 20), vec![0.0; 20]);
    let split = split_stages(20, 3).unwrap();
    let model = kpv_fit(&data, &split, &gauss_kernels(L), 0.1, 0.1).unwrap();
    assert!(model.alpha.iter().all(|&a| a == 0.0));
    assert_eq!(model.eval(&[0.3], &[-0.2]).unwrap(), 0.0);
    let curve = model.dose_response(data.w.as_ref(), data.a.as_ref()).unwrap();
    assert!(curve.iter().all(|&v| v == 0.0));
}

#[test]
fn kpv_one_by_one_case() {
    let data = ProxyDataset::new(
        vec![0.4, 1.3],
        col(&[0.1, 0.6]),
        col(&[-0.2, 0.5]),
        col(&[0.9, -0.4]),
    )
    .unwrap();
    let split = StageSplit {
        first: vec![0],
        second: vec![1],
        t: 2,
    };
    let (l1, l2) = (0.3, 0.2);
    let model = kpv_fit(&data, &split, &gauss_kernels(L), l1, l2).unwrap();
    let b = gauss(&[0.1], &[0.6], L) * gauss(&[-0.2], &[0.5], L) / (1.0 + l1);
    let alpha = 1.3 / (b * b + l2);
    assert!((model.b[(0, 0)] - b).abs() < 1e-14);
    assert!((model.alpha[0] - alpha).abs() < 1e-12);
    let h = model.eval(&[0.9], &[0.6]).unwrap();
    assert!((h - alpha * b).abs() < 1e-12);
}

#[test]
fn kpv_eval_matches_double_loop() {
    let (data, split, model) = fit_kpv(4, 30, 0.05, 0.02);
    let oracle = KpvOracle::new(&data, &split, 0.05);
    let mut r = rng(9);
    let mut points: Vec<(f64, f64)> = split
        .second
        .iter()
        .map(|&i| (data.w[(i, 0)], data.a[(i, 0)]))
        .collect();
    points.extend((0..10).map(|_| (r.random_range(-2.0..2.0), r.random_range(-2.0..2.0))));
    for (w, a) in points {
        let got = model.eval(&[w], &[a]).unwrap();
        let want = oracle.eval(&model.alpha, &[w], &[a]);
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }
}

#[test]
fn kpv_eval_rejects_wrong_dimension() {
    let (_, _, model) = fit_kpv(4, 12, 0.05, 0.02);
    assert!(model.eval(&[0.0, 1.0], &[0.0]).is_err());
    assert!(model.eval(&[0.0], &[0.0, 1.0]).is_err());
}

#[test]
fn kpv_dose_response_with_one_w_is_the_bridge() {
    let (_, _, model) = fit_kpv(5, 24, 0.05, 0.02);
    let w = col(&[0.35]);
    let grid = col(&[-0.5, 0.0, 0.7]);
    let curve = model.dose_response(w.as_ref(), grid.as_ref()).unwrap();
    for (g, v) in [-0.5, 0.0, 0.7].iter().zip(&curve) {
        assert!((model.eval(&[0.35], &[*g]).unwrap() - v).abs() < 1e-12);
    }
}

#[test]
fn kpv_alpha_norm_shrinks_with_lambda() {
    let grid = [1e-4, 1e-3, 1e-2, 0.1, 1.0, 10.0];
    for seed in 0..5 {
        let data = toy_data(seed, 40);
        let split = split_stages(40, seed).unwrap();
        let norms: Vec<f64> = grid
            .iter()
            .map(|&l2| {
                let m = kpv_fit(&data, &split, &gauss_kernels(L), 0.01, l2).unwrap();
                m.alpha.iter().map(|v| v * v).sum::<f64>().sqrt()
            })
            .collect();
        assert!(norms.windows(2).all(|p| p[1] <= p[0] * (1.0 + 1e-12)), "{norms:?}");
    }
}

#[test]
fn pmmr_alpha_is_the_direct_minimizer() {
    for seed in 0..5 {
        let t = 8 + seed as usize;
        let data = toy_data(seed + 20, t);
        let lambda = 0.05;
        let model = pmmr_fit(&data, &gauss_kernels(L), lambda).unwrap();
        let oracle = PmmrOracle::new(&data);
        let best = minimize_quadratic(t, |x| oracle.objective(x, lambda));
        let err = rel_err(&model.alpha, best.as_slice());
        assert!(err < 1e-6, "seed {seed}: relative error {err}");
    }
}

#[test]
fn pmmr_normal_equation_residual() {
    let data = toy_data(3, 60);
    let lambda = 1e-3;
    let model = pmmr_fit(&data, &gauss_kernels(L), lambda).unwrap();
    let o = PmmrOracle::new(&data);
    let alpha = DVector::from_vec(model.alpha.clone());
    let lhs = &o.g * &o.l * &alpha + 60.0 * lambda * &alpha;
    let rhs = &o.g * &o.y;
    let res = (lhs - &rhs).norm() / rhs.norm();
    assert!(res <= 1e-6, "residual {res}");
}

#[test]
fn pmmr_two_point_closed_form() {
    let data = ProxyDataset::new(
        vec![1.0, -0.5],
        col(&[0.0, 0.4]),
        col(&[0.3, -0.3]),
        col(&[-0.6, 0.2]),
    )
    .unwrap();
    let lambda = 0.25;
    let model = pmmr_fit(&data, &gauss_kernels(L), lambda).unwrap();
    let ka = gauss(&[0.0], &[0.4], L);
    let l = ka * gauss(&[-0.6], &[0.2], L);
    let g = ka * gauss(&[0.3], &[-0.3], L);
    // (G L + 2 lambda I) alpha = G y with G = [[1, g], [g, 1]], L = [[1, l], [l, 1]]
    let s = 2.0 * lambda;
    let (m11, m12, m21, m22) = (1.0 + g * l + s, l + g, g + l, g * l + 1.0 + s);
    let (r1, r2) = (1.0 - 0.5 * g, g - 0.5);
    let det = m11 * m22 - m12 * m21;
    let want = [(r1 * m22 - m12 * r2) / det, (m11 * r2 - m21 * r1) / det];
    assert!(rel_err(&model.alpha, &want) < 1e-12, "{:?} vs {want:?}", model.alpha);
}

#[test]
fn pmmr_alpha_beats_random_perturbations() {
    let data = toy_data(11, 20);
    let lambda = 0.01;
    let model = pmmr_fit(&data, &gauss_kernels(L), lambda).unwrap();
    let o = PmmrOracle::new(&data);
    let alpha = DVector::from_vec(model.alpha.clone());
    let best = o.objective(&alpha, lambda);
    let scale = 0.05 * alpha.amax();
    let normal = Normal::new(0.0, scale).unwrap();
    let mut r = rng(12);
    for _ in 0..1000 {
        let delta = DVector::from_fn(20, |_, _| normal.sample(&mut r));
        assert!(o.objective(&(&alpha + delta), lambda) > best);
    }
}

#[test]
fn pmmr_zero_targets_give_zero_alpha() {
    let data = with_y(&toy_data(2, 15), vec![0.0; 15]);
    let model = pmmr_fit(&data, &gauss_kernels(L), 1e-3).unwrap();
    assert!(model.alpha.iter().all(|&a| a == 0.0));
    assert_eq!(model.eval(&[0.1], &[0.2]).unwrap(), 0.0);
}

#[test]
fn pmmr_eval_matches_loop() {
    let data = toy_data(6, 25);
    let model = pmmr_fit(&data, &gauss_kernels(L), 1e-2).unwrap();
    let (a, w) = (rows(&data.a), rows(&data.w));
    let mut r = rng(1);
    for _ in 0..10 {
        let (wq, aq) = ([r.random_range(-2.0..2.0)], [r.random_range(-2.0..2.0)]);
        let want: f64 = (0..25)
            .map(|i| model.alpha[i] * gauss(&a[i], &aq, L) * gauss(&w[i], &wq, L))
            .sum();
        assert!((model.eval(&wq, &aq).unwrap() - want).abs() < 1e-10);
    }
    let grid = col(&[-0.3, 0.8]);
    let curve = model.dose_response(data.w.as_ref(), grid.as_ref()).unwrap();
    for (g, v) in [-0.3, 0.8].iter().zip(&curve) {
        let mean = (0..25).map(|s| model.eval(&w[s], &[*g]).unwrap()).sum::<f64>() / 25.0;
        assert!((mean - v).abs() < 1e-12);
    }
}

#[test]
fn pmmr_alpha_norm_shrinks_with_lambda() {
    let grid = [1e-4, 1e-3, 1e-2, 0.1, 1.0, 10.0];
    for seed in 0..5 {
        let data = toy_data(seed + 40, 40);
        let norms: Vec<f64> = grid
            .iter()
            .map(|&l| {
                let m = pmmr_fit(&data, &gauss_kernels(L), l).unwrap();
                m.alpha.iter().map(|v| v * v).sum::<f64>().sqrt()
            })
            .collect();
        assert!(norms.windows(2).all(|p| p[1] <= p[0] * (1.0 + 1e-12)), "{norms:?}");
    }
}

fn grams(data: &ProxyDataset) -> Grams {
    Grams::new(&gauss_kernels(L), data.a.as_ref(), data.z.as_ref(), data.w.as_ref()).unwrap()
}

#[test]
fn tune_mmr_matches_refit_loop() {
    let data = toy_data(8, 100);
    let grid = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 0.1];
    let report = tune_lambda_mmr(&data, &grams(&data), 0.1, &grid, 5).unwrap();
    let (train, val) = holdout_split(100, 0.1, 5).unwrap();
    let sub = data.subset(&train);
    let (w, a) = (rows(&data.w), rows(&data.a));
    let losses: Vec<f64> = grid
        .iter()
        .map(|&l| {
            let m = pmmr_fit(&sub, &gauss_kernels(L), l).unwrap();
            val.iter()
                .map(|&i| (data.y[i] - m.eval(&w[i], &a[i]).unwrap()).powi(2))
                .sum::<f64>()
                / val.len() as f64
        })
        .collect();
    assert!(rel_err(&report.losses, &losses) < 1e-8);
    let best = grid[(0..grid.len()).min_by(|&i, &j| losses[i].total_cmp(&losses[j])).unwrap()];
    assert_eq!(report.selected, best);
}

#[test]
fn tune_mmr_trivial_grids() {
    let data = toy_data(8, 30);
    let g = grams(&data);
    assert_eq!(tune_lambda_mmr(&data, &g, 0.2, &[0.02], 1).unwrap().selected, 0.02);
    let zero = with_y(&data, vec![0.0; 30]);
    let r = tune_lambda_mmr(&zero, &g, 0.2, &[0.5, 1e-3, 0.01], 1).unwrap();
    assert_eq!(r.selected, 1e-3);
}

#[test]
fn tune_h2_matches_refit_loop() {
    let data = toy_data(13, 100);
    let split = split_stages(100, 2).unwrap();
    let l1 = 0.01;
    let grid = [1e-4, 1e-3, 1e-2, 0.1, 1.0];
    let report = tune_lambda_h2(&data, &grams(&data), &split, l1, &grid).unwrap();
    let (a1, z1) = (pts(&data.a, &split.first), pts(&data.z, &split.first));
    // Embeddings of the held-out first-stage pairs.
    let beta = stage1_weights(&a1, &z1, &a1, &z1, l1);
    let losses: Vec<f64> = grid
        .iter()
        .map(|&l2| {
            let model = kpv_fit(&data, &split, &gauss_kernels(L), l1, l2).unwrap();
            let oracle = KpvOracle::new(&data, &split, l1);
            let n = split.first.len();
            let mut sse = 0.0;
            for (r, &i) in split.first.iter().enumerate() {
                let mut pred = 0.0;
                for j in 0..oracle.a2.len() {
                    let mut inner = 0.0;
                    for k in 0..n {
                        for l in 0..n {
                            inner += oracle.b[(k, j)]
                                * beta[(l, r)]
                                * gauss(&oracle.w1[k], &oracle.w1[l], L);
                        }
                    }
                    pred += model.alpha[j] * gauss(&oracle.a2[j], &a1[r], L) * inner;
                }
                sse += (data.y[i] - pred).powi(2);
            }
            sse / n as f64
        })
        .collect();
    assert!(rel_err(&report.losses, &losses) < 1e-8, "{:?} vs {losses:?}", report.losses);
    let best = grid[(0..grid.len()).min_by(|&i, &j| losses[i].total_cmp(&losses[j])).unwrap()];
    assert_eq!(report.selected, best);
}

#[test]
fn tune_h2_trivial_grids() {
    let data = toy_data(1, 30);
    let split = split_stages(30, 1).unwrap();
    let g = grams(&data);
    assert_eq!(tune_lambda_h2(&data, &g, &split, 0.1, &[0.3]).unwrap().selected, 0.3);
    let zero = with_y(&data, vec![0.0; 30]);
    let r = tune_lambda_h2(&zero, &g, &split, 0.1, &[1.0, 1e-4, 0.01]).unwrap();
    assert_eq!(r.selected, 1e-4);
}

#[test]
fn discrete_world_outcome_curves() {
    let world = strong_proxy_world();
    let data = world.sample(400, 1).unwrap();
    let split = split_stages(400, 2).unwrap();
    let k = gauss_kernels(1.0);
    let grid = col(&[0.0, 1.0]);
    let kpv = kpv_fit(&data, &split, &k, 1e-4, 1e-4).unwrap();
    let pmmr = pmmr_fit(&data, &k, 1e-4).unwrap();
    for (name, curve) in [
        ("kpv", kpv.dose_response(data.w.as_ref(), grid.as_ref()).unwrap()),
        ("pmmr", pmmr.dose_response(data.w.as_ref(), grid.as_ref()).unwrap()),
    ] {
        for a in 0..2 {
            let dev = (curve[a] - world.theta(a)).abs();
            assert!(dev <= 0.15, "{name} at a={a}: deviation {dev}");
        }
    }
}

#[test]
fn discrete_world_bridge_recovery() {
    let world = strong_proxy_world();
    let h0 = world.outcome_bridge().unwrap();
    let data = world.sample(2000, 3).unwrap();
    let split = split_stages(2000, 4).unwrap();
    let k = gauss_kernels(1.0);
    let kpv = kpv_fit(&data, &split, &k, 1e-6, 1e-6).unwrap();
    let pmmr = pmmr_fit(&data, &k, 1e-6).unwrap();
    for w in 0..2 {
        for a in 0..2 {
            let (wf, af) = ([w as f64], [a as f64]);
            for (name, h) in [
                ("kpv", kpv.eval(&wf, &af).unwrap()),
                ("pmmr", pmmr.eval(&wf, &af).unwrap()),
            ] {
                let dev = (h - h0[w][a]).abs();
                assert!(dev <= 0.1, "{name} at (w={w}, a={a}): {h} vs {}", h0[w][a]);
            }
        }
    }
}
