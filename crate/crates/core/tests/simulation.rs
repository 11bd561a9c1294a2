use extcontrol::estimators::{self, EstimatorOptions, Method};
use extcontrol::inference;
use extcontrol::learners::{crossfit, CrossFitConfig, NuisanceSpecs};
use extcontrol::simulation::{self, DgpConfig, EstimatorConfig, HarnessOptions};

#[test]
fn one_replicate_equals_the_pipeline_run_by_hand() {
    let cfg = DgpConfig::default();
    let est = EstimatorConfig::new(Method::Aipw, NuisanceSpecs::default());
    let res = simulation::run_replicates(&cfg, std::slice::from_ref(&est), 1, 77).unwrap();
    let got = res.records[0][0].as_ref().unwrap();

    let (data_seed, sign) = simulation::replicate_seed(77, 0, false);
    let ds = simulation::generate_replicate(&cfg, data_seed, sign).unwrap();
    let cf = CrossFitConfig { seed: simulation::crossfit_seed(data_seed), ..est.crossfit.clone() };
    let fits = crossfit(&ds, &est.specs, &cf).unwrap();
    let tau = estimators::estimate(Method::Aipw, &ds, &fits, &EstimatorOptions::default()).unwrap();
    let inf = inference::ic_interval(&tau, 0.95).unwrap();
    assert_eq!(got.tau_hat, tau.tau_hat);
    assert_eq!((got.ci_low, got.ci_high), (inf.ci_low, inf.ci_high));
    assert_eq!(res.summaries[0].mean, tau.tau_hat);
    assert_eq!(res.summaries[0].sd, None);
}

#[test]
fn antithetic_pairs_cancel_noise_for_linear_estimators() {
    // Correct linear nuisances: each pair averages to the noise-free estimate, tau itself.
    let cfg = DgpConfig::default();
    let est = [EstimatorConfig::new(Method::Aipw, NuisanceSpecs::default())];
    let opts = HarnessOptions { antithetic: true, ..HarnessOptions::default() };
    let res = simulation::run_replicates_with(&cfg, &est, 20, 5, &opts).unwrap();
    let s = &res.summaries[0];
    assert!(s.bias.abs() < 1e-9, "bias {}", s.bias);
    assert!(s.mc_se.unwrap() < 1e-9);
    assert!(s.sd.unwrap() > 0.05);
}

#[test]
fn more_external_controls_raise_power() {
    let base = DgpConfig::default();
    let est = [EstimatorConfig::new(Method::Aipw, NuisanceSpecs::default())];
    let table = simulation::power_curve(&base, &[0.5], &[0, 200], &est, 200, 31, &HarnessOptions::default()).unwrap();
    let none = table.row(0.5, 0, "aipw").unwrap().rejection_rate;
    let many = table.row(0.5, 200, "aipw").unwrap().rejection_rate;
    assert!(many > none + 0.1, "n_ec 0: {none}, n_ec 200: {many}");
    let null = table.row(0.0, 200, "aipw").unwrap().rejection_rate;
    assert!(null < 0.1);
}

#[test]
fn misspecified_models_bias_the_external_estimators() {
    let (dgp, est) = simulation::setting(4, &simulation::SettingOptions { n_boot: 50, ..Default::default() }).unwrap();
    let est: Vec<_> = est.into_iter().filter(|e| matches!(e.method, Method::Rct | Method::Aipw)).collect();
    let res = simulation::run_replicates(&dgp, &est, 100, 12).unwrap();
    let rct = res.summary("rct").unwrap();
    let aipw = res.summary("aipw").unwrap();
    assert!(aipw.bias.abs() > 3.0 * aipw.mc_se.unwrap());
    assert!(rct.bias.abs() < 3.0 * rct.mc_se.unwrap());
}

#[test]
fn csv_has_one_row_per_estimator() {
    let cfg = DgpConfig::default();
    let est = [
        EstimatorConfig::new(Method::Rct, NuisanceSpecs::default()),
        EstimatorConfig::new(Method::Ipdw, NuisanceSpecs::default()).with_n_boot(20),
    ];
    let res = simulation::run_replicates(&cfg, &est, 4, 1).unwrap();
    let mut buf = Vec::new();
    res.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().nth(2).unwrap().starts_with("ipdw,ipdw,1.0,50,4,"));
}
