//! Confidence intervals and tests.
//!
//! Influence-curve intervals for `rct`, `aipw` and `tmle`; a stratified
//! nonparametric percentile bootstrap with full nuisance refits for `om` and
//! `ipdw`.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::TrialDataset;
use crate::estimators::{self, EstimatorError, EstimatorOptions, Method, TauEstimate};
use crate::learners::{self, CrossFitConfig, LearnerError, NuisanceSpecs};
use crate::{rng, stats};

/// Redraws allowed per bootstrap replicate when a refit fails.
pub const MAX_REDRAWS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("method '{0}' has no influence-curve values")]
    Unsupported(Method),
    #[error("bootstrap is implemented for om and ipdw only, got '{0}'")]
    BootstrapMethod(Method),
    #[error("flexible learners need the explicit override for bootstrap inference")]
    FlexibleLearner,
    #[error("level must lie in (0, 1), got {0}")]
    Level(f64),
    #[error("bootstrap needs at least one replicate")]
    NoReplicates,
    #[error("bootstrap replicate {replicate} failed {attempts} times: {reason}")]
    ReplicateFailed { replicate: usize, attempts: usize, reason: String },
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMethod {
    BootstrapPercentile,
    InfluenceCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub tau_hat: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    /// Two-sided, against `tau = 0`.
    pub p_value: f64,
    pub method: InferenceMethod,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_boot: Option<usize>,
    /// Bootstrap resamples discarded because a refit failed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub redraws: Option<usize>,
    /// `se = 0`: the p-value is 0 or 1 by convention.
    pub degenerate: bool,
}

impl InferenceResult {
    pub fn covers(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }

    pub fn width(&self) -> f64 {
        self.ci_high - self.ci_low
    }

    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub degenerate: bool,
}

fn check_level(level: f64) -> Result<(), InferenceError> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(InferenceError::Level(level))
    }
}

fn z_test(tau: f64, se: f64, null: f64) -> TestResult {
    let diff = tau - null;
    if se > 0.0 {
        let z = diff / se;
        TestResult { statistic: z, p_value: stats::two_sided_p(z), degenerate: false }
    } else {
        let (statistic, p_value) = if diff == 0.0 { (0.0, 1.0) } else { (diff.signum() * f64::INFINITY, 0.0) };
        TestResult { statistic, p_value, degenerate: true }
    }
}

/// Two-sided normal-reference test of `tau = null_value`.
pub fn hypothesis_test(inf: &InferenceResult, null_value: f64) -> TestResult {
    z_test(inf.tau_hat, inf.se, null_value)
}

/// Interval multiplier: the conventional 1.96 at the 95% level, the exact
/// normal quantile otherwise.
pub fn ci_multiplier(level: f64) -> f64 {
    if level == 0.95 {
        1.96
    } else {
        stats::z_critical(level)
    }
}

/// `tau_hat +- z * sqrt(var(eif) / n)`.
pub fn ic_interval(est: &TauEstimate, level: f64) -> Result<InferenceResult, InferenceError> {
    check_level(level)?;
    let eif = est.eif_values.as_deref().ok_or(InferenceError::Unsupported(est.method))?;
    let se = (stats::sample_variance(eif) / eif.len() as f64).sqrt();
    let half = ci_multiplier(level) * se;
    let test = z_test(est.tau_hat, se, 0.0);
    Ok(InferenceResult {
        tau_hat: est.tau_hat,
        se,
        ci_low: est.tau_hat - half,
        ci_high: est.tau_hat + half,
        level,
        p_value: test.p_value,
        method: InferenceMethod::InfluenceCurve,
        n_boot: None,
        redraws: None,
        degenerate: test.degenerate,
    })
}

/// Estimator plus the nuisance configuration it is refit with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub method: Method,
    pub specs: NuisanceSpecs,
    pub crossfit: CrossFitConfig,
    #[serde(default)]
    pub options: EstimatorOptions,
    /// Permit random forests inside the bootstrap.
    #[serde(default)]
    pub allow_flexible: bool,
}

impl Pipeline {
    pub fn new(method: Method, specs: NuisanceSpecs) -> Self {
        Pipeline {
            method,
            specs,
            crossfit: CrossFitConfig::no_crossfit(),
            options: EstimatorOptions::default(),
            allow_flexible: false,
        }
    }
}

/// Draws each `(A, D)` cell with replacement at its own size.
pub fn stratified_resample(ds: &TrialDataset, rng: &mut rng::Rng) -> Vec<usize> {
    let mut out = Vec::with_capacity(ds.n_rows());
    for (a, d) in [(1u8, 1u8), (0, 1), (0, 0)] {
        let cell = ds.rows_where(|ai, di| ai == a && di == d);
        for _ in 0..cell.len() {
            out.push(cell[rng.random_range(0..cell.len())]);
        }
    }
    out
}

fn estimate_all(
    ds: &TrialDataset,
    methods: &[Method],
    specs: &NuisanceSpecs,
    cfg: &CrossFitConfig,
    opts: &EstimatorOptions,
) -> Result<Vec<TauEstimate>, InferenceError> {
    let fits = learners::crossfit_with(ds, specs, cfg, estimators::nuisances_for(methods))?;
    Ok(methods.iter().map(|&m| estimators::estimate(m, ds, &fits, opts)).collect::<Result<_, _>>()?)
}

/// Bootstrap for several `om`/`ipdw` estimators sharing one set of
/// resamples and refits. `estimates` are the full-sample estimates, in the
/// same order as `methods`.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_many(
    ds: &TrialDataset,
    methods: &[Method],
    estimates: &[TauEstimate],
    specs: &NuisanceSpecs,
    cfg: &CrossFitConfig,
    opts: &EstimatorOptions,
    allow_flexible: bool,
    n_boot: usize,
    seed: u64,
    level: f64,
) -> Result<Vec<InferenceResult>, InferenceError> {
    check_level(level)?;
    if n_boot == 0 {
        return Err(InferenceError::NoReplicates);
    }
    if let Some(&m) = methods.iter().find(|m| !matches!(m, Method::Om | Method::Ipdw)) {
        return Err(InferenceError::BootstrapMethod(m));
    }
    let which = estimators::nuisances_for(methods);
    let flexible = (which.m0 && !specs.m0.is_parametric())
        || (which.pd && !specs.pd.is_parametric())
        || (which.pa && !specs.pa.is_parametric());
    if !allow_flexible && flexible {
        return Err(InferenceError::FlexibleLearner);
    }
    let replicates: Vec<(Vec<f64>, usize)> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::stream(seed, b as u64);
            let mut last = String::new();
            for attempt in 0..MAX_REDRAWS {
                let idx = stratified_resample(ds, &mut rng);
                let sub = ds.subset(&idx);
                let sub_cfg = CrossFitConfig { seed: rng::derive_seed(seed ^ 0xB007, b as u64), ..cfg.clone() };
                match estimate_all(&sub, methods, specs, &sub_cfg, opts) {
                    Ok(est) => return Ok((est.iter().map(|e| e.tau_hat).collect(), attempt)),
                    Err(e) => last = e.to_string(),
                }
            }
            Err(InferenceError::ReplicateFailed { replicate: b, attempts: MAX_REDRAWS, reason: last })
        })
        .collect::<Result<_, _>>()?;
    let redraws: usize = replicates.iter().map(|r| r.1).sum();
    let alpha = 1.0 - level;
    Ok(methods
        .iter()
        .enumerate()
        .map(|(k, _)| {
            let mut taus: Vec<f64> = replicates.iter().map(|r| r.0[k]).collect();
            let se = stats::sample_sd(&taus);
            taus.sort_by(|a, b| a.total_cmp(b));
            let tau_hat = estimates[k].tau_hat;
            let test = z_test(tau_hat, se, 0.0);
            InferenceResult {
                tau_hat,
                se,
                ci_low: stats::quantile_sorted(&taus, alpha / 2.0),
                ci_high: stats::quantile_sorted(&taus, 1.0 - alpha / 2.0),
                level,
                p_value: test.p_value,
                method: InferenceMethod::BootstrapPercentile,
                n_boot: Some(n_boot),
                redraws: Some(redraws),
                degenerate: test.degenerate,
            }
        })
        .collect())
}

/// Percentile bootstrap for one pipeline: fits it on `ds`, then on `n_boot`
/// stratified resamples. Deterministic given `seed`.
pub fn bootstrap_interval(
    ds: &TrialDataset,
    pipeline: &Pipeline,
    n_boot: usize,
    seed: u64,
    level: f64,
) -> Result<InferenceResult, InferenceError> {
    let methods = [pipeline.method];
    if !matches!(pipeline.method, Method::Om | Method::Ipdw) {
        return Err(InferenceError::BootstrapMethod(pipeline.method));
    }
    let est = estimate_all(ds, &methods, &pipeline.specs, &pipeline.crossfit, &pipeline.options)?;
    let mut out = bootstrap_many(
        ds,
        &methods,
        &est,
        &pipeline.specs,
        &pipeline.crossfit,
        &pipeline.options,
        pipeline.allow_flexible,
        n_boot,
        seed,
        level,
    )?;
    Ok(out.remove(0))
}
