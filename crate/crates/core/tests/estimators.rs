//! Estimators against formulas written out independently of the library.

use approx::assert_abs_diff_eq;
use extcontrol::estimators::{self, EstimatorOptions, Method};
use extcontrol::learners::NuisanceFits;
use extcontrol::simulation::{self, DgpConfig};
use extcontrol::TrialDataset;

struct Fixture {
    ds: TrialDataset,
    fits: NuisanceFits,
}

fn fixture(seed: u64) -> Fixture {
    let ds = simulation::generate(&DgpConfig { n_rct: 60, n_ec: 25, seed, ..DgpConfig::default() }).unwrap();
    let n = ds.n_rows();
    let f = |i: usize, k: f64| ((i as f64 + 1.0) * k).sin();
    let m0: Vec<f64> = (0..n).map(|i| 0.5 + f(i, 0.7)).collect();
    let m1: Vec<f64> = (0..n).map(|i| 1.3 + f(i, 1.1)).collect();
    let pa: Vec<f64> = (0..n).map(|i| 0.6 + 0.1 * f(i, 0.3)).collect();
    let pd: Vec<f64> = (0..n).map(|i| 0.55 + 0.3 * f(i, 0.9)).collect();
    let r: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * f(i, 0.2)).collect();
    let fits = NuisanceFits::from_values(&ds, m0, m1, pa, pd, r).unwrap();
    Fixture { ds, fits }
}

fn w(a: f64, d: f64, pd: f64, pa: f64, r: f64) -> f64 {
    (d * (1.0 - a) * pd + (1.0 - d) * pd * r) / (pd * (1.0 - pa) + (1.0 - pd) * r)
}

#[test]
fn aipw_solves_its_estimating_equation() {
    for seed in 0..5 {
        let Fixture { ds, fits } = fixture(seed);
        let y = ds.outcome();
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..ds.n_rows() {
            let (a, d) = (ds.a(i), ds.d(i));
            let wi = w(a, d, fits.pd_hat[i], fits.pa_hat[i], fits.r_hat[i]);
            num += d * (fits.m1_hat[i] - fits.m0_hat[i]) + d * a / fits.pa_hat[i] * (y[i] - fits.m1_hat[i])
                - wi * (y[i] - fits.m0_hat[i]);
            den += d;
        }
        let tau = num / den;
        let est = estimators::estimate(Method::Aipw, &ds, &fits, &EstimatorOptions::default()).unwrap();
        assert_abs_diff_eq!(est.tau_hat, tau, epsilon = 1e-12);

        let q = den / ds.n_rows() as f64;
        let eif = est.eif_values.unwrap();
        for i in 0..ds.n_rows() {
            let (a, d) = (ds.a(i), ds.d(i));
            let wi = w(a, d, fits.pd_hat[i], fits.pa_hat[i], fits.r_hat[i]);
            let phi = (d * (fits.m1_hat[i] - fits.m0_hat[i] - tau) + d * a / fits.pa_hat[i] * (y[i] - fits.m1_hat[i])
                - wi * (y[i] - fits.m0_hat[i]))
                / q;
            assert_abs_diff_eq!(eif[i], phi, epsilon = 1e-10);
        }
    }
}

#[test]
fn tmle_targets_until_the_estimating_equation_holds() {
    for seed in 0..5 {
        let Fixture { ds, fits } = fixture(seed);
        let tmle = estimators::estimate(Method::Tmle, &ds, &fits, &EstimatorOptions::default()).unwrap();
        let eif = tmle.eif_values.as_ref().unwrap();
        let mean = eif.iter().sum::<f64>() / eif.len() as f64;
        assert!(mean.abs() <= 1e-10, "mean eif {mean}");
        assert_eq!(tmle.converged, Some(true));
        assert_abs_diff_eq!(tmle.tau_hat, tmle.mu1_hat - tmle.mu0_hat, epsilon = 1e-12);
    }
}

#[test]
fn om_and_ipdw_match_written_out_means() {
    let Fixture { ds, fits } = fixture(9);
    let y = ds.outcome();
    let n = ds.n_rows() as f64;
    let treated: Vec<usize> = (0..ds.n_rows()).filter(|&i| ds.a(i) == 1.0).collect();
    let mu1 = treated.iter().map(|&i| y[i]).sum::<f64>() / treated.len() as f64;

    let rct: Vec<usize> = (0..ds.n_rows()).filter(|&i| ds.d(i) == 1.0).collect();
    let mu0_om = rct.iter().map(|&i| fits.m0_hat[i]).sum::<f64>() / rct.len() as f64;
    let om = estimators::estimate(Method::Om, &ds, &fits, &EstimatorOptions::default()).unwrap();
    assert_abs_diff_eq!(om.tau_hat, mu1 - mu0_om, epsilon = 1e-12);

    let weights: Vec<f64> = (0..ds.n_rows())
        .map(|i| {
            let (pd, pa) = (fits.pd_hat[i], fits.pa_hat[i]);
            (n / rct.len() as f64) * (1.0 - ds.a(i)) * pd / ((1.0 - pa) * pd + 1.0 - pd)
        })
        .collect();
    let swy: f64 = weights.iter().zip(y).map(|(w, y)| w * y).sum();
    let sw: f64 = weights.iter().sum();
    let ht = estimators::estimate(Method::Ipdw, &ds, &fits, &EstimatorOptions::default()).unwrap();
    assert_abs_diff_eq!(ht.tau_hat, mu1 - swy / n, epsilon = 1e-12);
    let hajek = EstimatorOptions { hajek: true, ..EstimatorOptions::default() };
    let hj = estimators::estimate(Method::Ipdw, &ds, &fits, &hajek).unwrap();
    assert_abs_diff_eq!(hj.tau_hat, mu1 - swy / sw, epsilon = 1e-12);
}

#[test]
fn rct_estimator_ignores_external_rows() {
    let Fixture { ds, fits } = fixture(4);
    let y = ds.outcome();
    let rct: Vec<usize> = (0..ds.n_rows()).filter(|&i| ds.d(i) == 1.0).collect();
    let tau = rct
        .iter()
        .map(|&i| {
            let (a, pa, m1, m0) = (ds.a(i), fits.pa_hat[i], fits.m1_hat[i], fits.m0_internal_hat[i]);
            m1 - m0 + a / pa * (y[i] - m1) - (1.0 - a) / (1.0 - pa) * (y[i] - m0)
        })
        .sum::<f64>()
        / rct.len() as f64;
    let est = estimators::estimate(Method::Rct, &ds, &fits, &EstimatorOptions::default()).unwrap();
    assert_abs_diff_eq!(est.tau_hat, tau, epsilon = 1e-12);

    let mut y2 = y.to_vec();
    for i in 0..ds.n_rows() {
        if ds.d(i) == 0.0 {
            y2[i] += 100.0;
        }
    }
    let moved = ds.with_outcome(y2).unwrap();
    let est2 = estimators::estimate(Method::Rct, &moved, &fits, &EstimatorOptions::default()).unwrap();
    assert_eq!(est.tau_hat, est2.tau_hat);
}

#[test]
fn weight_reduces_to_randomized_control_share_without_externals() {
    // pd = 1: every control is internal and W = 1 / (1 - pa) on randomized controls.
    for pa in [0.3, 0.5, 2.0 / 3.0] {
        assert_abs_diff_eq!(estimators::weight_w(0.0, 1.0, 1.0, pa, 1.0).unwrap(), 1.0 / (1.0 - pa), epsilon = 1e-14);
        assert_eq!(estimators::weight_w(1.0, 1.0, 1.0, pa, 1.0).unwrap(), 0.0);
    }
}

#[test]
fn true_nuisances_give_a_centred_aipw() {
    // Nonlinear DGP, true nuisance values: the estimator is unbiased for tau.
    let cfg = DgpConfig { nonlinear: true, ..DgpConfig::default() };
    let reps = 400;
    let taus: Vec<f64> = (0..reps)
        .map(|rep| {
            let ds = simulation::generate_replicate(&cfg, 70_000 + rep, 1.0).unwrap();
            let fits = simulation::true_fits(&cfg, &ds).unwrap();
            estimators::estimate(Method::Aipw, &ds, &fits, &EstimatorOptions::default()).unwrap().tau_hat
        })
        .collect();
    let mean = taus.iter().sum::<f64>() / reps as f64;
    let sd = (taus.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (reps as f64 - 1.0)).sqrt();
    let mc_se = sd / (reps as f64).sqrt();
    assert!((mean - cfg.tau_true).abs() < 3.0 * mc_se, "mean {mean}, mc se {mc_se}");
}
