mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proxal::data::{split_stages, ProxyDataset};
use proxal::doubly_robust::{
    dr_dose_response, jitter_bridge, jitter_coefficients, tune_lambda_dr, Bridge, DrEstimator,
    MethodTag,
};
use proxal::faer::Mat;
use proxal::kernels::{Grams, KernelSet};
use proxal::outcome_bridge::{kpv_fit, pmmr_fit, OutcomeModel};
use proxal::treatment_bridge::kap_fit;
use rand_distr::{Distribution, Normal};

const L: f64 = 0.7;

fn estimator(data: &ProxyDataset, kernels: &KernelSet, pmmr: bool, lambda: f64) -> DrEstimator {
    let t = data.len();
    let split = split_stages(t, 1).unwrap();
    let outcome = if pmmr {
        OutcomeModel::Pmmr(pmmr_fit(data, kernels, lambda).unwrap())
    } else {
        OutcomeModel::Kpv(kpv_fit(data, &split, kernels, lambda, lambda).unwrap())
    };
    let kap = kap_fit(data, &split_stages(t, 2).unwrap(), kernels, lambda, lambda).unwrap();
    let k_aa = kernels.a.gram_sym(data.a.as_ref()).unwrap();
    DrEstimator::new(data, k_aa.as_ref(), outcome, kap, lambda, lambda, None).unwrap()
}

fn toy_estimator(seed: u64, t: usize, pmmr: bool) -> (ProxyDataset, DrEstimator) {
    let data = toy_data(seed, t);
    let est = estimator(&data, &gauss_kernels(L), pmmr, 0.01);
    (data, est)
}

fn grid() -> Mat<f64> {
    col(&[-0.8, -0.3, 0.0, 0.4, 0.9])
}

#[test]
fn decomposition_identity_is_exact() {
    for pmmr in [false, true] {
        let (_, est) = toy_estimator(1, 40, pmmr);
        let c = dr_dose_response(&est, grid().as_ref()).unwrap();
        let (t1, t2, t3, dr) = (
            c.theta1.as_ref().unwrap(),
            c.theta2.as_ref().unwrap(),
            c.theta3.as_ref().unwrap(),
            c.theta_dr.as_ref().unwrap(),
        );
        for g in 0..dr.len() {
            assert_eq!(dr[g], t1[g] + t2[g] - t3[g]);
        }
        assert_eq!(c.identity_residual(), 0.0);
        let tag = if pmmr { MethodTag::Drpmmr } else { MethodTag::Drkpv };
        assert_eq!(c.method, tag);
    }
}

#[test]
fn slack_term_matches_loop() {
    let (data, est) = toy_estimator(2, 30, false);
    let (a, z, w) = (rows(&data.a), rows(&data.z), rows(&data.w));
    let t = data.len();
    let k = DMatrix::from_fn(t, t, |i, j| gauss(&a[i], &a[j], L) + if i == j { t as f64 * 0.01 } else { 0.0 });
    let lu = k.lu();
    let g = [-0.5, 0.2, 0.7];
    let got = est.slack_term(col(&g).as_ref()).unwrap();
    for (q, v) in g.iter().zip(&got) {
        let xi = lu.solve(&DVector::from_fn(t, |i, _| gauss(&a[i], &[*q], L))).unwrap();
        let want: f64 = (0..t)
            .map(|i| {
                xi[i] * est.treatment.eval(&z[i], &[*q]).unwrap()
                    * est.outcome.eval(&w[i], &[*q]).unwrap()
            })
            .sum();
        assert!((v - want).abs() < 1e-10, "{v} vs {want}");
    }
}

#[test]
fn slack_term_interpolates_at_training_points() {
    let toy = toy_data(3, 8);
    let spread: Vec<f64> = (0..8).map(|i| -3.0 + 6.0 * i as f64 / 7.0).collect();
    let data = ProxyDataset::new(toy.y, col(&spread), toy.z, toy.w).unwrap();
    let kernels = gauss_kernels(L);
    let base = estimator(&data, &kernels, false, 0.05);
    let k_aa = kernels.a.gram_sym(data.a.as_ref()).unwrap();
    let est = DrEstimator::new(
        &data,
        k_aa.as_ref(),
        base.outcome.clone(),
        base.treatment.clone(),
        1e-12,
        0.05,
        None,
    )
    .unwrap();
    let (z, w) = (rows(&data.z), rows(&data.w));
    let slack = est.slack_term(data.a.as_ref()).unwrap();
    for j in 0..8 {
        let aj = [data.a[(j, 0)]];
        let want = est.treatment.eval(&z[j], &aj).unwrap() * est.outcome.eval(&w[j], &aj).unwrap();
        assert!((slack[j] - want).abs() < 1e-4, "j={j}: {} vs {want}", slack[j]);
    }
}

#[test]
fn zero_outcome_bridge_zeroes_the_slack() {
    let (_, est) = toy_estimator(4, 30, true);
    let zero = est.outcome.with_coefficients(vec![0.0; est.outcome.coefficients().len()]);
    let est = est.with_outcome(zero);
    assert!(est.slack_term(grid().as_ref()).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn zero_outcome_dataset_gives_zero_curve() {
    let data = with_y(&toy_data(5, 30), vec![0.0; 30]);
    for pmmr in [false, true] {
        let est = estimator(&data, &gauss_kernels(L), pmmr, 0.01);
        let c = dr_dose_response(&est, grid().as_ref()).unwrap();
        for v in c.theta1.iter().chain(&c.theta2).chain(&c.theta3).chain(&c.theta_dr) {
            assert!(v.iter().all(|&x| x == 0.0), "{v:?}");
        }
    }
}

#[test]
fn empty_grid_is_rejected() {
    let (_, est) = toy_estimator(4, 20, false);
    assert!(dr_dose_response(&est, Mat::<f64>::zeros(0, 1).as_ref()).is_err());
}

#[test]
fn zero_jitter_is_bitwise_identity() {
    let (_, est) = toy_estimator(6, 30, false);
    let coefs = est.outcome.coefficients().to_vec();
    assert_eq!(jitter_coefficients(&coefs, 0.0, 9).unwrap(), coefs);
    let Bridge::Outcome(same) = jitter_bridge(&Bridge::Outcome(est.outcome.clone()), 0.0, 3).unwrap()
    else {
        panic!("bridge kind changed");
    };
    let clean = dr_dose_response(&est, grid().as_ref()).unwrap();
    let again = dr_dose_response(&est.with_outcome(same), grid().as_ref()).unwrap();
    assert_eq!(clean.theta_dr, again.theta_dr);
    assert!(jitter_coefficients(&coefs, -0.1, 9).is_err());
}

#[test]
fn jitter_is_deterministic_and_leaves_the_source_alone() {
    let (_, est) = toy_estimator(7, 30, false);
    let source = Bridge::Treatment(est.treatment.clone());
    let pick = |b: Bridge| match b {
        Bridge::Treatment(m) => m.gamma,
        Bridge::Outcome(_) => panic!("bridge kind changed"),
    };
    let a = pick(jitter_bridge(&source, 0.2, 11).unwrap());
    let b = pick(jitter_bridge(&source, 0.2, 11).unwrap());
    let c = pick(jitter_bridge(&source, 0.2, 12).unwrap());
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_ne!(a, est.treatment.gamma);
    assert_eq!(pick(source), est.treatment.gamma);
}

/// Sum over samples of `xi_i(a) * left_i(a) * right_i(a)` for each grid point.
fn weighted_sum(xi: &Mat<f64>, left: &Mat<f64>, right: &Mat<f64>) -> Vec<f64> {
    (0..xi.ncols())
        .map(|g| (0..xi.nrows()).map(|i| xi[(i, g)] * left[(i, g)] * right[(i, g)]).sum())
        .collect()
}

#[test]
fn outcome_jitter_responds_linearly() {
    for pmmr in [false, true] {
        let (data, est) = toy_estimator(8, 40, pmmr);
        let g = grid();
        let coefs = est.outcome.coefficients().to_vec();
        let normal = Normal::new(0.0, 0.3).unwrap();
        let mut r = rng(5);
        let delta: Vec<f64> = coefs.iter().map(|_| normal.sample(&mut r)).collect();
        let moved: Vec<f64> = coefs.iter().zip(&delta).map(|(c, d)| c + d).collect();
        let clean = dr_dose_response(&est, g.as_ref()).unwrap();
        let shifted =
            dr_dose_response(&est.with_outcome(est.outcome.with_coefficients(moved)), g.as_ref())
                .unwrap();
        let d = est.outcome.with_coefficients(delta);
        let d1 = d.dose_response(data.w.as_ref(), g.as_ref()).unwrap();
        let d3 = weighted_sum(
            &est.xi(g.as_ref()).unwrap(),
            &est.treatment.eval_matrix(data.z.as_ref(), g.as_ref()).unwrap(),
            &d.eval_matrix(data.w.as_ref(), g.as_ref()).unwrap(),
        );
        let (c, s) = (clean.theta_dr.unwrap(), shifted.theta_dr.unwrap());
        for k in 0..c.len() {
            let res = (s[k] - c[k] - (d1[k] - d3[k])).abs();
            assert!(res < 1e-8, "pmmr={pmmr}, grid {k}: residual {res}");
        }
    }
}

#[test]
fn treatment_jitter_responds_linearly() {
    let (data, est) = toy_estimator(9, 40, false);
    let g = grid();
    let normal = Normal::new(0.0, 0.3).unwrap();
    let mut r = rng(6);
    let delta: Vec<f64> = est.treatment.gamma.iter().map(|_| normal.sample(&mut r)).collect();
    let moved: Vec<f64> = est.treatment.gamma.iter().zip(&delta).map(|(c, d)| c + d).collect();
    let clean = dr_dose_response(&est, g.as_ref()).unwrap();
    let shifted =
        dr_dose_response(&est.with_treatment(est.treatment.with_gamma(moved)), g.as_ref()).unwrap();
    let d = est.treatment.with_gamma(delta);
    let d2 = d.dose_response(g.as_ref(), est.lambda_phi3, None).unwrap();
    let d3 = weighted_sum(
        &est.xi(g.as_ref()).unwrap(),
        &d.eval_matrix(data.z.as_ref(), g.as_ref()).unwrap(),
        &est.outcome.eval_matrix(data.w.as_ref(), g.as_ref()).unwrap(),
    );
    let (c, s) = (clean.theta_dr.unwrap(), shifted.theta_dr.unwrap());
    for k in 0..c.len() {
        let res = (s[k] - c[k] - (d2[k] - d3[k])).abs();
        assert!(res < 1e-8, "grid {k}: residual {res}");
    }
}

#[test]
fn tune_dr_matches_refit_loop() {
    let data = toy_data(10, 8);
    let gr = Grams::new(&gauss_kernels(L), data.a.as_ref(), data.z.as_ref(), data.w.as_ref()).unwrap();
    let grid = [1e-4, 1e-3, 1e-2, 0.1, 1.0];
    let report = tune_lambda_dr(&gr, &grid).unwrap();
    let k = to_na(&gr.a);
    let out = to_na(&gr.z).component_mul(&to_na(&gr.w));
    let losses: Vec<f64> = grid.iter().map(|&l| naive_loo(&k, &out, l)).collect();
    assert!(rel_err(&report.losses, &losses) < 1e-8);
    let best = grid[(0..grid.len()).min_by(|&i, &j| losses[i].total_cmp(&losses[j])).unwrap()];
    assert_eq!(report.selected, best);
    assert_eq!(tune_lambda_dr(&gr, &[0.3]).unwrap().selected, 0.3);
}

#[test]
fn discrete_world_slack_tracks_the_effect() {
    let world = strong_proxy_world();
    let data = world.sample(2000, 7).unwrap();
    let est = estimator(&data, &gauss_kernels(1.0), false, 1e-6);
    let slack = est.slack_term(col(&[0.0, 1.0]).as_ref()).unwrap();
    for a in 0..2 {
        let dev = (slack[a] - world.theta(a)).abs();
        assert!(dev <= 0.2, "a={a}: {} vs {}", slack[a], world.theta(a));
    }
}
