//! Synthetic hybrid trials and the Monte Carlo harness.
//!
//! The data-generating family has two binary covariates `b1`, `b2` followed
//! by `covariate_dim - 2` continuous ones. In the study population the
//! binaries are fair coins and the continuous covariates standard normal.
//! External controls draw the binary cell `(b1, b2)` with probability
//! proportional to `exp(-(c1 b1 + c2 b2 + c12 b1 b2))` and the continuous
//! covariates from `N(shift, 1)`. The control outcome regression is
//!
//! ```text
//! m0(x) = intercept + beta . x + gamma b1 b2
//! ```
//!
//! with a constant effect `tau_true` added for treated rows and Gaussian
//! noise whose sd depends on the source. `c12` and `gamma` are only active
//! when `nonlinear` is set; a linear outcome model or a main-effects
//! logistic source model is then misspecified. Mean exchangeability holds by
//! construction because the shift acts on `X` only, unless
//! `outcome_shift_ec` moves the external outcomes.

use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, TrialDataset};
use crate::estimators::{self, EstimatorOptions, Method};
use crate::inference::{self, InferenceResult};
use crate::learners::{self, CrossFitConfig, LearnerError, LearnerSpec, NuisanceFits, NuisanceSpecs};
use crate::rng;
use crate::stats;

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data generation failed: {0}")]
    Data(#[from] DataError),
    #[error("true nuisance values rejected: {0}")]
    Nuisance(#[from] LearnerError),
    #[error("{label}: {failed} of {n_reps} replicates failed (first error: {first_error})")]
    TooManyFailures { label: String, failed: usize, n_reps: usize, first_error: String },
    #[error("writing output failed: {0}")]
    Output(String),
}

/// Residual sd of the outcome in each source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSd {
    pub rct: f64,
    pub ec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub n_rct: usize,
    /// Treated : control allocation within the trial.
    pub rand_ratio: (usize, usize),
    pub n_ec: usize,
    pub tau_true: f64,
    pub covariate_dim: usize,
    pub intercept: f64,
    /// One coefficient per covariate.
    pub coef_outcome: Vec<f64>,
    /// Coefficient of `b1 b2` in `m0`, used when `nonlinear`.
    pub interaction_outcome: f64,
    /// Log-odds tilt `(c1, c2)` of the trial over the external population in `b1`, `b2`.
    pub coef_pd: Vec<f64>,
    /// Tilt `c12` on `b1 b2`, used when `nonlinear`.
    pub interaction_pd: f64,
    pub nonlinear: bool,
    pub noise_sd: NoiseSd,
    /// Mean of each continuous covariate among external controls.
    pub shift_ec: Vec<f64>,
    /// Added to every external outcome; nonzero values break mean exchangeability.
    #[serde(default)]
    pub outcome_shift_ec: f64,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        DgpConfig {
            n_rct: 150,
            rand_ratio: (2, 1),
            n_ec: 50,
            tau_true: 1.0,
            covariate_dim: 3,
            intercept: 0.0,
            coef_outcome: vec![1.0, 1.0, 0.5],
            interaction_outcome: 4.0,
            coef_pd: vec![1.5, 1.5],
            interaction_pd: -2.5,
            nonlinear: false,
            noise_sd: NoiseSd { rct: 1.5, ec: 1.5 },
            shift_ec: vec![0.3],
            outcome_shift_ec: 0.0,
            seed: 0,
        }
    }
}

const CELLS: [(f64, f64); 4] = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)];

impl DgpConfig {
    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |m: String| Err(SimulationError::Config(m));
        let (t, c) = self.rand_ratio;
        if t == 0 || c == 0 {
            return bad(format!("rand_ratio {t}:{c} must have both parts positive"));
        }
        if self.n_rct == 0 || self.n_rct % (t + c) != 0 {
            return bad(format!("n_rct = {} does not split into whole arms at {t}:{c}", self.n_rct));
        }
        if self.covariate_dim < 2 {
            return bad("covariate_dim must be at least 2 (two binary covariates)".into());
        }
        if self.coef_outcome.len() != self.covariate_dim {
            return bad(format!("coef_outcome has {} entries for {} covariates", self.coef_outcome.len(), self.covariate_dim));
        }
        if self.coef_pd.len() != 2 {
            return bad(format!("coef_pd needs 2 entries, got {}", self.coef_pd.len()));
        }
        if self.shift_ec.len() != self.covariate_dim - 2 {
            return bad(format!(
                "shift_ec has {} entries for {} continuous covariates",
                self.shift_ec.len(),
                self.covariate_dim - 2
            ));
        }
        for (name, v) in [("rct", self.noise_sd.rct), ("ec", self.noise_sd.ec)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("noise_sd.{name} must be positive, got {v}"));
            }
        }
        let finite = [self.tau_true, self.intercept, self.interaction_outcome, self.interaction_pd, self.outcome_shift_ec]
            .iter()
            .chain(&self.coef_outcome)
            .chain(&self.coef_pd)
            .chain(&self.shift_ec)
            .all(|v| v.is_finite());
        if !finite {
            return bad("coefficients must be finite".into());
        }
        Ok(())
    }

    pub fn n_treated(&self) -> usize {
        self.n_rct / (self.rand_ratio.0 + self.rand_ratio.1) * self.rand_ratio.0
    }

    pub fn treat_prob(&self) -> f64 {
        self.rand_ratio.0 as f64 / (self.rand_ratio.0 + self.rand_ratio.1) as f64
    }

    pub fn covariate_names(&self) -> Vec<String> {
        (0..self.covariate_dim)
            .map(|k| if k < 2 { format!("b{}", k + 1) } else { format!("x{}", k + 1) })
            .collect()
    }

    fn gamma(&self) -> f64 {
        if self.nonlinear {
            self.interaction_outcome
        } else {
            0.0
        }
    }

    fn c12(&self) -> f64 {
        if self.nonlinear {
            self.interaction_pd
        } else {
            0.0
        }
    }

    /// `E[Y | A = 0, X = x]` in the study population (and among external
    /// controls when `outcome_shift_ec = 0`).
    pub fn m0(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.coef_outcome.iter().zip(x).map(|(b, v)| b * v).sum();
        self.intercept + lin + self.gamma() * x[0] * x[1]
    }

    /// Probabilities of the cells `(0,0), (1,0), (0,1), (1,1)` among external controls.
    pub fn external_cell_probs(&self) -> [f64; 4] {
        let (c1, c2, c12) = (self.coef_pd[0], self.coef_pd[1], self.c12());
        let w = CELLS.map(|(b1, b2)| (-(c1 * b1 + c2 * b2 + c12 * b1 * b2)).exp());
        let z: f64 = w.iter().sum();
        w.map(|v| v / z)
    }

    /// `Pr(D = 1 | X = x)` in the pooled sample.
    pub fn pd(&self, x: &[f64]) -> f64 {
        if self.n_ec == 0 {
            return 1.0;
        }
        let cell = (x[0] > 0.5) as usize + 2 * (x[1] > 0.5) as usize;
        let mut logit = (self.n_rct as f64 / self.n_ec as f64).ln() + (0.25 / self.external_cell_probs()[cell]).ln();
        for (s, v) in self.shift_ec.iter().zip(&x[2..]) {
            logit += -v * s + s * s / 2.0;
        }
        learners::expit(logit)
    }

    /// `Var(Y0 | X, D = 1) / Var(Y0 | X, D = 0)`.
    pub fn variance_ratio(&self) -> f64 {
        (self.noise_sd.rct / self.noise_sd.ec).powi(2)
    }
}

/// Draws one dataset from `cfg` using `cfg.seed`.
pub fn generate(cfg: &DgpConfig) -> Result<TrialDataset, SimulationError> {
    generate_replicate(cfg, cfg.seed, 1.0)
}

/// Draws one dataset with an explicit seed; every noise draw is multiplied
/// by `sign` (`1` or `-1` for an antithetic partner).
///
/// Trial rows come from one stream and external rows, one after another,
/// from a second, so the first `k` external rows do not depend on `n_ec`.
pub fn generate_replicate(cfg: &DgpConfig, seed: u64, sign: f64) -> Result<TrialDataset, SimulationError> {
    cfg.validate()?;
    let p = cfg.covariate_dim;
    let n = cfg.n_rct + cfg.n_ec;
    let mut x = DMatrix::zeros(n, p);
    let mut y = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    let mut row = vec![0.0; p];

    let mut r = rng::stream(seed, 0);
    let n_t = cfg.n_treated();
    let mut arms: Vec<u8> = (0..cfg.n_rct).map(|i| (i < n_t) as u8).collect();
    arms.shuffle(&mut r);
    for (i, &arm) in arms.iter().enumerate() {
        row[0] = r.random_bool(0.5) as u8 as f64;
        row[1] = r.random_bool(0.5) as u8 as f64;
        for v in row.iter_mut().skip(2) {
            *v = r.sample(StandardNormal);
        }
        let eps: f64 = r.sample(StandardNormal);
        for k in 0..p {
            x[(i, k)] = row[k];
        }
        y.push(cfg.m0(&row) + arm as f64 * cfg.tau_true + sign * cfg.noise_sd.rct * eps);
        a.push(arm);
        d.push(1);
    }

    let mut r = rng::stream(seed, 1);
    let probs = cfg.external_cell_probs();
    for j in 0..cfg.n_ec {
        let u: f64 = r.random();
        let mut acc = 0.0;
        let mut cell = 3;
        for (k, pk) in probs.iter().enumerate() {
            acc += pk;
            if u < acc {
                cell = k;
                break;
            }
        }
        (row[0], row[1]) = CELLS[cell];
        for (k, v) in row.iter_mut().enumerate().skip(2) {
            let z: f64 = r.sample(StandardNormal);
            *v = cfg.shift_ec[k - 2] + z;
        }
        let eps: f64 = r.sample(StandardNormal);
        let i = cfg.n_rct + j;
        for k in 0..p {
            x[(i, k)] = row[k];
        }
        y.push(cfg.m0(&row) + cfg.outcome_shift_ec + sign * cfg.noise_sd.ec * eps);
        a.push(0);
        d.push(0);
    }
    Ok(TrialDataset::new(y, x, cfg.covariate_names(), a, d, Some(cfg.treat_prob()))?)
}

/// The true nuisance functions evaluated at every row of `ds`.
pub fn true_fits(cfg: &DgpConfig, ds: &TrialDataset) -> Result<NuisanceFits, SimulationError> {
    let x = ds.covariates();
    let rows: Vec<Vec<f64>> = (0..ds.n_rows()).map(|i| x.row(i).iter().copied().collect()).collect();
    let m0: Vec<f64> = rows.iter().map(|r| cfg.m0(r)).collect();
    let m1 = m0.iter().map(|m| m + cfg.tau_true).collect();
    let pa = vec![cfg.treat_prob(); ds.n_rows()];
    let pd = rows.iter().map(|r| cfg.pd(r)).collect();
    let r = vec![cfg.variance_ratio(); ds.n_rows()];
    Ok(NuisanceFits::from_values(ds, m0, m1, pa, pd, r)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum IntervalSpec {
    InfluenceCurve,
    Bootstrap { n_boot: usize },
}

/// One estimator as run inside the harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub label: String,
    pub method: Method,
    pub specs: NuisanceSpecs,
    /// Fold count, truncation and switches; the seed is replaced per replicate.
    pub crossfit: CrossFitConfig,
    pub interval: IntervalSpec,
    #[serde(default)]
    pub allow_flexible: bool,
    #[serde(default)]
    pub options: EstimatorOptions,
}

pub const DEFAULT_N_BOOT: usize = 1000;

impl EstimatorConfig {
    /// Influence-curve intervals with cross-fitting for `rct`, `aipw` and
    /// `tmle`; percentile bootstrap without cross-fitting for `om` and `ipdw`.
    pub fn new(method: Method, specs: NuisanceSpecs) -> Self {
        let (crossfit, interval) = if method.has_eif() {
            (CrossFitConfig::default(), IntervalSpec::InfluenceCurve)
        } else {
            (CrossFitConfig::no_crossfit(), IntervalSpec::Bootstrap { n_boot: DEFAULT_N_BOOT })
        };
        EstimatorConfig {
            label: method.as_str().to_string(),
            method,
            specs,
            crossfit,
            interval,
            allow_flexible: false,
            options: EstimatorOptions::default(),
        }
    }

    pub fn with_label(mut self, label: &str) -> Self {
        self.label = label.to_string();
        self
    }

    pub fn with_n_boot(mut self, n_boot: usize) -> Self {
        if let IntervalSpec::Bootstrap { .. } = self.interval {
            self.interval = IntervalSpec::Bootstrap { n_boot };
        }
        self
    }

    fn validate(&self) -> Result<(), SimulationError> {
        match self.interval {
            IntervalSpec::InfluenceCurve if !self.method.has_eif() => Err(SimulationError::Config(format!(
                "{}: {} has no influence curve; use a bootstrap interval",
                self.label, self.method
            ))),
            IntervalSpec::Bootstrap { .. } if !matches!(self.method, Method::Om | Method::Ipdw) => {
                Err(SimulationError::Config(format!("{}: bootstrap intervals are for om and ipdw only", self.label)))
            }
            IntervalSpec::Bootstrap { n_boot: 0 } => {
                Err(SimulationError::Config(format!("{}: n_boot must be positive", self.label)))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarnessOptions {
    pub level: f64,
    /// Significance level for the rejection rate of `H0: tau = 0`.
    pub alpha: f64,
    /// Run replicates in pairs sharing covariates, assignment and folds
    /// with noise of opposite sign.
    pub antithetic: bool,
}

impl Default for HarnessOptions {
    fn default() -> Self {
        HarnessOptions { level: 0.95, alpha: 0.05, antithetic: false }
    }
}

/// Data seed and noise sign of replicate `rep`.
pub fn replicate_seed(seed: u64, rep: usize, antithetic: bool) -> (u64, f64) {
    if antithetic {
        (rng::derive_seed(seed, (rep / 2) as u64), if rep % 2 == 0 { 1.0 } else { -1.0 })
    } else {
        (rng::derive_seed(seed, rep as u64), 1.0)
    }
}

/// Cross-fitting seed used for every estimator of the replicate with data seed `data_seed`.
pub fn crossfit_seed(data_seed: u64) -> u64 {
    rng::derive_seed(data_seed, 1)
}

/// Bootstrap seed of the replicate with data seed `data_seed`.
pub fn bootstrap_seed(data_seed: u64) -> u64 {
    rng::derive_seed(data_seed, 2)
}

/// Outcome of one estimator on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub tau_hat: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    pub mean_eif: Option<f64>,
}

pub type ReplicateOutcome = Result<ReplicateRecord, String>;

fn record(est: &estimators::TauEstimate, inf: &InferenceResult) -> ReplicateRecord {
    ReplicateRecord {
        tau_hat: est.tau_hat,
        se: inf.se,
        ci_low: inf.ci_low,
        ci_high: inf.ci_high,
        p_value: inf.p_value,
        mean_eif: est.eif_values.as_deref().map(stats::mean),
    }
}

/// Runs every estimator on one generated dataset. Estimators with equal
/// learner and cross-fitting settings share one set of nuisance fits, and
/// bootstrap estimators with equal settings share their resamples.
pub fn run_on_dataset(
    ds: &TrialDataset,
    estimators: &[EstimatorConfig],
    data_seed: u64,
    level: f64,
) -> Vec<ReplicateOutcome> {
    let mut out: Vec<Option<ReplicateOutcome>> = vec![None; estimators.len()];
    let cf_seed = crossfit_seed(data_seed);
    let mut done = vec![false; estimators.len()];
    for k in 0..estimators.len() {
        if done[k] {
            continue;
        }
        let e = &estimators[k];
        let group: Vec<usize> = (k..estimators.len())
            .filter(|&j| !done[j] && estimators[j].specs == e.specs && estimators[j].crossfit == e.crossfit)
            .collect();
        for &j in &group {
            done[j] = true;
        }
        let methods: Vec<Method> = group.iter().map(|&j| estimators[j].method).collect();
        let cfg = CrossFitConfig { seed: cf_seed, ..e.crossfit.clone() };
        let fits = match learners::crossfit_with(ds, &e.specs, &cfg, estimators::nuisances_for(&methods)) {
            Ok(f) => f,
            Err(err) => {
                for &j in &group {
                    out[j] = Some(Err(format!("learners: {err}")));
                }
                continue;
            }
        };
        let mut boot: Vec<(usize, estimators::TauEstimate)> = Vec::new();
        for &j in &group {
            let ej = &estimators[j];
            match estimators::estimate(ej.method, ds, &fits, &ej.options) {
                Err(err) => out[j] = Some(Err(format!("estimators: {err}"))),
                Ok(est) => match ej.interval {
                    IntervalSpec::InfluenceCurve => {
                        out[j] = Some(
                            inference::ic_interval(&est, level)
                                .map(|inf| record(&est, &inf))
                                .map_err(|err| format!("inference: {err}")),
                        )
                    }
                    IntervalSpec::Bootstrap { .. } => boot.push((j, est)),
                },
            }
        }
        let mut handled = vec![false; boot.len()];
        for s in 0..boot.len() {
            if handled[s] {
                continue;
            }
            let es = &estimators[boot[s].0];
            let members: Vec<usize> = (s..boot.len())
                .filter(|&t| {
                    let et = &estimators[boot[t].0];
                    !handled[t]
                        && et.interval == es.interval
                        && et.options == es.options
                        && et.allow_flexible == es.allow_flexible
                })
                .collect();
            for &t in &members {
                handled[t] = true;
            }
            let IntervalSpec::Bootstrap { n_boot } = es.interval else { unreachable!() };
            let ms: Vec<Method> = members.iter().map(|&t| estimators[boot[t].0].method).collect();
            let ests: Vec<estimators::TauEstimate> = members.iter().map(|&t| boot[t].1.clone()).collect();
            let res = inference::bootstrap_many(
                ds,
                &ms,
                &ests,
                &es.specs,
                &cfg,
                &es.options,
                es.allow_flexible,
                n_boot,
                bootstrap_seed(data_seed),
                level,
            );
            for (m, &t) in members.iter().enumerate() {
                out[boot[t].0] = Some(match &res {
                    Ok(infs) => Ok(record(&ests[m], &infs[m])),
                    Err(err) => Err(format!("inference: {err}")),
                });
            }
        }
    }
    out.into_iter().map(|o| o.expect("every estimator handled")).collect()
}

/// Per-estimator Monte Carlo summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub label: String,
    pub method: Method,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mean: f64,
    pub bias: f64,
    /// `bias^2 + population variance` of the estimates.
    pub mse: f64,
    pub sd: Option<f64>,
    /// Standard error of `mean`; from antithetic pair means when pairs are used.
    pub mc_se: Option<f64>,
    pub coverage: f64,
    pub rejection_rate: f64,
    pub mean_ci_width: f64,
    pub median_ci_width: f64,
    pub max_abs_mean_eif: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_error: Option<String>,
}

fn summarize(
    cfg: &EstimatorConfig,
    outcomes: &[&ReplicateOutcome],
    tau: f64,
    opts: &HarnessOptions,
) -> Result<EstimatorSummary, SimulationError> {
    let n_reps = outcomes.len();
    let ok: Vec<&ReplicateRecord> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    let n_failed = n_reps - ok.len();
    let first_error = outcomes.iter().find_map(|o| o.as_ref().err().cloned());
    if n_failed * 100 > n_reps || ok.is_empty() {
        return Err(SimulationError::TooManyFailures {
            label: cfg.label.clone(),
            failed: n_failed,
            n_reps,
            first_error: first_error.unwrap_or_default(),
        });
    }
    let taus: Vec<f64> = ok.iter().map(|r| r.tau_hat).collect();
    let n = taus.len() as f64;
    let mean = stats::mean(&taus);
    let bias = mean - tau;
    let pop_var = taus.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    let sd = (taus.len() > 1).then(|| stats::sample_sd(&taus));
    let mc_se = if opts.antithetic {
        let pairs: Vec<f64> = outcomes
            .chunks(2)
            .filter_map(|c| match c {
                [Ok(u), Ok(v)] => Some((u.tau_hat + v.tau_hat) / 2.0),
                _ => None,
            })
            .collect();
        (pairs.len() > 1).then(|| stats::sample_sd(&pairs) / (pairs.len() as f64).sqrt())
    } else {
        sd.map(|s| s / n.sqrt())
    };
    let widths: Vec<f64> = ok.iter().map(|r| r.ci_high - r.ci_low).collect();
    let eifs: Vec<f64> = ok.iter().filter_map(|r| r.mean_eif).map(f64::abs).collect();
    Ok(EstimatorSummary {
        label: cfg.label.clone(),
        method: cfg.method,
        n_ok: ok.len(),
        n_failed,
        mean,
        bias,
        mse: bias * bias + pop_var,
        sd,
        mc_se,
        coverage: ok.iter().filter(|r| r.ci_low <= tau && tau <= r.ci_high).count() as f64 / n,
        rejection_rate: ok.iter().filter(|r| r.p_value < opts.alpha).count() as f64 / n,
        mean_ci_width: stats::mean(&widths),
        median_ci_width: stats::median(&widths),
        max_abs_mean_eif: (!eifs.is_empty()).then(|| eifs.iter().copied().fold(0.0, f64::max)),
        first_error,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationResult {
    pub config: DgpConfig,
    pub estimators: Vec<EstimatorConfig>,
    pub n_reps: usize,
    pub seed: u64,
    pub options: HarnessOptions,
    pub summaries: Vec<EstimatorSummary>,
    /// `records[rep][k]` is estimator `k` on replicate `rep`.
    #[serde(skip)]
    pub records: Vec<Vec<ReplicateOutcome>>,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    label: &'a str,
    method: &'a str,
    tau_true: f64,
    n_ec: usize,
    n_reps: usize,
    n_ok: usize,
    n_failed: usize,
    mean: f64,
    bias: f64,
    mse: f64,
    sd: Option<f64>,
    mc_se: Option<f64>,
    coverage: f64,
    rejection_rate: f64,
    mean_ci_width: f64,
    median_ci_width: f64,
}

impl SimulationResult {
    pub fn summary(&self, label: &str) -> Option<&EstimatorSummary> {
        self.summaries.iter().find(|s| s.label == label)
    }

    /// One CSV row per estimator.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), SimulationError> {
        let mut wtr = csv::Writer::from_writer(w);
        for s in &self.summaries {
            wtr.serialize(SummaryRow {
                label: &s.label,
                method: s.method.as_str(),
                tau_true: self.config.tau_true,
                n_ec: self.config.n_ec,
                n_reps: self.n_reps,
                n_ok: s.n_ok,
                n_failed: s.n_failed,
                mean: s.mean,
                bias: s.bias,
                mse: s.mse,
                sd: s.sd,
                mc_se: s.mc_se,
                coverage: s.coverage,
                rejection_rate: s.rejection_rate,
                mean_ci_width: s.mean_ci_width,
                median_ci_width: s.median_ci_width,
            })
            .map_err(|e| SimulationError::Output(e.to_string()))?;
        }
        wtr.flush().map_err(|e| SimulationError::Output(e.to_string()))
    }
}

/// Monte Carlo study with default harness options.
pub fn run_replicates(
    cfg: &DgpConfig,
    estimators: &[EstimatorConfig],
    n_reps: usize,
    seed: u64,
) -> Result<SimulationResult, SimulationError> {
    run_replicates_with(cfg, estimators, n_reps, seed, &HarnessOptions::default())
}

/// Monte Carlo study. Replicate `rep` depends only on `(seed, rep)`, so the
/// result does not depend on the number of worker threads.
pub fn run_replicates_with(
    cfg: &DgpConfig,
    estimators: &[EstimatorConfig],
    n_reps: usize,
    seed: u64,
    opts: &HarnessOptions,
) -> Result<SimulationResult, SimulationError> {
    cfg.validate()?;
    if n_reps == 0 {
        return Err(SimulationError::Config("n_reps must be at least 1".into()));
    }
    if opts.antithetic && n_reps % 2 != 0 {
        return Err(SimulationError::Config("antithetic runs need an even n_reps".into()));
    }
    if estimators.is_empty() {
        return Err(SimulationError::Config("no estimators given".into()));
    }
    if !(opts.level > 0.0 && opts.level < 1.0) || !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(SimulationError::Config("level and alpha must lie in (0, 1)".into()));
    }
    for (k, e) in estimators.iter().enumerate() {
        e.validate()?;
        if estimators[..k].iter().any(|o| o.label == e.label) {
            return Err(SimulationError::Config(format!("duplicate estimator label {}", e.label)));
        }
    }
    let records: Vec<Vec<ReplicateOutcome>> = (0..n_reps)
        .into_par_iter()
        .map(|rep| {
            let (data_seed, sign) = replicate_seed(seed, rep, opts.antithetic);
            match generate_replicate(cfg, data_seed, sign) {
                Ok(ds) => run_on_dataset(&ds, estimators, data_seed, opts.level),
                Err(e) => vec![Err(format!("simulation: {e}")); estimators.len()],
            }
        })
        .collect();
    let summaries = estimators
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let col: Vec<&ReplicateOutcome> = records.iter().map(|r| &r[k]).collect();
            summarize(e, &col, cfg.tau_true, opts)
        })
        .collect::<Result<_, _>>()?;
    Ok(SimulationResult {
        config: cfg.clone(),
        estimators: estimators.to_vec(),
        n_reps,
        seed,
        options: *opts,
        summaries,
        records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub effect: f64,
    pub n_ec: usize,
    pub label: String,
    pub method: Method,
    pub n_ok: usize,
    pub rejection_rate: f64,
    /// `sqrt(rate (1 - rate) / n_ok)`.
    pub binomial_se: f64,
    pub coverage: f64,
    pub bias: f64,
    pub mean_ci_width: f64,
    pub max_abs_mean_eif: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerTable {
    pub base: DgpConfig,
    pub effects: Vec<f64>,
    pub n_ec: Vec<usize>,
    pub n_reps: usize,
    pub seed: u64,
    pub options: HarnessOptions,
    pub rows: Vec<PowerRow>,
}

impl PowerTable {
    pub fn row(&self, effect: f64, n_ec: usize, label: &str) -> Option<&PowerRow> {
        self.rows.iter().find(|r| r.effect == effect && r.n_ec == n_ec && r.label == label)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), SimulationError> {
        let mut wtr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wtr.serialize(r).map_err(|e| SimulationError::Output(e.to_string()))?;
        }
        wtr.flush().map_err(|e| SimulationError::Output(e.to_string()))
    }
}

/// Rejection rates over an effect-size by external-sample-size grid.
/// Effect `0` is added when absent and effects are sorted. Every grid point
/// reuses `seed`, so points differ only in `tau_true` and in how many of the
/// same external rows are kept.
pub fn power_curve(
    base: &DgpConfig,
    effects: &[f64],
    n_ec_grid: &[usize],
    estimators: &[EstimatorConfig],
    n_reps: usize,
    seed: u64,
    opts: &HarnessOptions,
) -> Result<PowerTable, SimulationError> {
    if effects.is_empty() || n_ec_grid.is_empty() {
        return Err(SimulationError::Config("effect and n_ec grids must be nonempty".into()));
    }
    if effects.iter().any(|e| !e.is_finite()) {
        return Err(SimulationError::Config("effects must be finite".into()));
    }
    let mut grid: Vec<f64> = effects.to_vec();
    if !grid.contains(&0.0) {
        grid.push(0.0);
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut rows = Vec::new();
    for &n_ec in n_ec_grid {
        for &effect in &grid {
            let cfg = DgpConfig { tau_true: effect, n_ec, ..base.clone() };
            let res = run_replicates_with(&cfg, estimators, n_reps, seed, opts)?;
            for s in res.summaries {
                let rate = s.rejection_rate;
                rows.push(PowerRow {
                    effect,
                    n_ec,
                    label: s.label,
                    method: s.method,
                    n_ok: s.n_ok,
                    rejection_rate: rate,
                    binomial_se: (rate * (1.0 - rate) / s.n_ok as f64).sqrt(),
                    coverage: s.coverage,
                    bias: s.bias,
                    mean_ci_width: s.mean_ci_width,
                    max_abs_mean_eif: s.max_abs_mean_eif,
                });
            }
        }
    }
    Ok(PowerTable {
        base: base.clone(),
        effects: grid,
        n_ec: n_ec_grid.to_vec(),
        n_reps,
        seed,
        options: *opts,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SettingOptions {
    pub trees: usize,
    pub n_boot: usize,
    /// Also run `om` in setting 2 and `ipdw` in setting 3.
    pub include_all: bool,
}

impl Default for SettingOptions {
    fn default() -> Self {
        SettingOptions { trees: learners::ForestParams::DEFAULT_TREES, n_boot: DEFAULT_N_BOOT, include_all: false }
    }
}

/// DGP and estimators of specification setting `k`:
///
/// | setting | outcome models | source model |
/// |---------|----------------|--------------|
/// | 1 | linear, correct | logistic, correct |
/// | 2 | forest | logistic, misspecified |
/// | 3 | linear, misspecified | forest |
/// | 4 | linear, misspecified | logistic, misspecified |
/// | 5 | forest | forest |
///
/// Setting 1 uses the default DGP with `nonlinear = false`, the others with
/// `nonlinear = true`. Outcome forests try every covariate at each split;
/// the source forest uses the classification defaults. `om` is left out of
/// setting 2 and `ipdw` out of setting 3, where their only nuisance is a
/// forest, unless `include_all`; setting 5 runs both with forests allowed
/// in the bootstrap.
pub fn setting(k: u8, opts: &SettingOptions) -> Result<(DgpConfig, Vec<EstimatorConfig>), SimulationError> {
    let dgp = DgpConfig { nonlinear: k != 1, ..DgpConfig::default() };
    let outcome_forest = LearnerSpec::random_forest().with_trees(opts.trees).with_mtry(dgp.covariate_dim);
    let pd_forest = LearnerSpec::random_forest().with_trees(opts.trees);
    let (outcome, pd) = match k {
        1 | 4 => (LearnerSpec::linear(), LearnerSpec::logistic()),
        2 => (outcome_forest, LearnerSpec::logistic()),
        3 => (LearnerSpec::linear(), pd_forest),
        5 => (outcome_forest, pd_forest),
        _ => return Err(SimulationError::Config(format!("setting must be 1 to 5, got {k}"))),
    };
    let specs = NuisanceSpecs::new(outcome, pd);
    let flexible = !specs.is_parametric();
    let estimators = Method::ALL
        .iter()
        .filter(|&&m| opts.include_all || !matches!((k, m), (2, Method::Om) | (3, Method::Ipdw)))
        .map(|&m| {
            let mut e = EstimatorConfig::new(m, specs.clone()).with_n_boot(opts.n_boot);
            e.allow_flexible = flexible && !m.has_eif();
            e
        })
        .collect();
    Ok((dgp, estimators))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sizes() {
        let ds = generate(&DgpConfig::default()).unwrap();
        assert_eq!((ds.n_rows(), ds.n_rct(), ds.n_ec()), (200, 150, 50));
        let treated = ds.rows_where(|a, d| a == 1 && d == 1).len();
        assert_eq!(treated, 100);
        assert_eq!(ds.known_treat_prob(), Some(2.0 / 3.0));
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            DgpConfig { n_rct: 151, ..DgpConfig::default() },
            DgpConfig { covariate_dim: 1, coef_outcome: vec![1.0], shift_ec: vec![], ..DgpConfig::default() },
            DgpConfig { noise_sd: NoiseSd { rct: 0.0, ec: 1.0 }, ..DgpConfig::default() },
            DgpConfig { shift_ec: vec![0.0, 0.0], ..DgpConfig::default() },
        ];
        for c in bad {
            assert!(matches!(generate(&c), Err(SimulationError::Config(_))));
        }
    }

    #[test]
    fn external_rows_are_nested_prefixes() {
        let big = DgpConfig { n_ec: 80, ..DgpConfig::default() };
        let small = DgpConfig { n_ec: 30, ..DgpConfig::default() };
        let a = generate_replicate(&big, 11, 1.0).unwrap();
        let b = generate_replicate(&small, 11, 1.0).unwrap();
        assert_eq!(&a.outcome()[..180], b.outcome());
        assert_eq!(a.covariates().rows(0, 180), b.covariates().rows(0, 180));
    }

    #[test]
    fn antithetic_partner_flips_noise_only() {
        let cfg = DgpConfig::default();
        let a = generate_replicate(&cfg, 3, 1.0).unwrap();
        let b = generate_replicate(&cfg, 3, -1.0).unwrap();
        assert_eq!(a.covariates(), b.covariates());
        assert_eq!(a.treatment(), b.treatment());
        let truth = true_fits(&cfg, &a).unwrap();
        for i in 0..a.n_rows() {
            let mean = truth.m0_hat[i] + a.a(i) * cfg.tau_true;
            assert!((a.outcome()[i] + b.outcome()[i] - 2.0 * mean).abs() < 1e-12);
        }
    }

    #[test]
    fn cell_probs_sum_to_one_and_pd_matches_bayes() {
        let cfg = DgpConfig { nonlinear: true, ..DgpConfig::default() };
        let p = cfg.external_cell_probs();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        // Bayes rule for cell (1,1) with continuous covariates at x = s/2,
        // where the two normal densities agree.
        let x = [1.0, 1.0, 0.15];
        let num = 150.0 * 0.25;
        let direct = num / (num + 50.0 * p[3]);
        assert!((cfg.pd(&x) - direct).abs() < 1e-12);
    }

    #[test]
    fn no_shift_no_tilt_gives_constant_pd() {
        let cfg = DgpConfig { coef_pd: vec![0.0, 0.0], shift_ec: vec![0.0], ..DgpConfig::default() };
        assert!((cfg.pd(&[1.0, 0.0, 2.0]) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn settings_omit_forest_only_estimators() {
        let o = SettingOptions { trees: 10, n_boot: 50, include_all: false };
        let labels = |k| setting(k, &o).unwrap().1.iter().map(|e| e.label.clone()).collect::<Vec<_>>();
        assert_eq!(labels(1), ["rct", "om", "ipdw", "aipw", "tmle"]);
        assert_eq!(labels(2), ["rct", "ipdw", "aipw", "tmle"]);
        assert_eq!(labels(3), ["rct", "om", "aipw", "tmle"]);
        assert_eq!(labels(5).len(), 5);
        assert!(setting(6, &o).is_err());
    }

    #[test]
    fn harness_is_deterministic_and_mse_dominates_bias() {
        let (dgp, est) = setting(1, &SettingOptions { n_boot: 20, ..Default::default() }).unwrap();
        let a = run_replicates(&dgp, &est, 4, 9).unwrap();
        let b = run_replicates(&dgp, &est, 4, 9).unwrap();
        assert_eq!(a, b);
        for s in &a.summaries {
            assert_eq!(s.n_ok, 4);
            assert!(s.mse >= s.bias * s.bias);
            assert!((0.0..=1.0).contains(&s.coverage));
        }
    }

    #[test]
    fn power_curve_inserts_null_effect() {
        let (dgp, est) = setting(1, &SettingOptions { n_boot: 20, ..Default::default() }).unwrap();
        let est: Vec<_> = est.into_iter().filter(|e| e.method == Method::Aipw).collect();
        let t = power_curve(&dgp, &[1.0], &[25, 50], &est, 2, 1, &HarnessOptions::default()).unwrap();
        assert_eq!(t.effects, [0.0, 1.0]);
        assert_eq!(t.rows.len(), 4);
        assert!(t.row(0.0, 25, "aipw").is_some());
    }
}
