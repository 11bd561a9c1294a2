//! Cross-fitted nuisance predictions.
//!
//! Rows are split into `K` folds, stratified by the `(D, A)` cell so every
//! fold's training complement keeps both randomized arms. For each fold the
//! nuisance models are trained on the other folds and predict the held-out
//! rows:
//!
//! * `m1` on randomized treated rows,
//! * `m0` on all controls (internal and external pooled),
//! * `m0_internal` on randomized controls only (used by the RCT-only estimator),
//! * `pi_d` on all rows with target `D`,
//! * `pi_a` on randomized rows with target `A`, unless the design value is used,
//! * `r` from squared control residuals regressed separately by source.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit, FittedModel, LearnerError, LearnerSpec, Task};
use crate::data::TrialDataset;
use crate::rng;

const MAX_FOLD_ATTEMPTS: usize = 10;
const MIN_VARIANCE_ROWS: usize = 5;
const RATIO_CLIP: (f64, f64) = (0.1, 10.0);

/// How the variance ratio `r(x) = Var(Y0 | X, D=1) / Var(Y0 | X, D=0)` is
/// obtained. JSON: `{"mode":"unit"}` or `{"mode":"regression","kind":"linear"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum VarianceSpec {
    #[default]
    Unit,
    Regression(LearnerSpec),
}

/// What was actually used for `r_hat`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    Unit,
    Regression,
}

fn default_regressor() -> LearnerSpec {
    LearnerSpec::linear()
}

fn default_classifier() -> LearnerSpec {
    LearnerSpec::logistic()
}

/// Learner per nuisance function. JSON keys: `m0`, `m1`, `pa`, `pd`,
/// `variance`; omitted keys default to linear / logistic / unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceSpecs {
    #[serde(default = "default_regressor")]
    pub m0: LearnerSpec,
    #[serde(default = "default_regressor")]
    pub m1: LearnerSpec,
    #[serde(default = "default_classifier")]
    pub pa: LearnerSpec,
    #[serde(default = "default_classifier")]
    pub pd: LearnerSpec,
    #[serde(default)]
    pub variance: VarianceSpec,
}

impl Default for NuisanceSpecs {
    fn default() -> Self {
        NuisanceSpecs {
            m0: default_regressor(),
            m1: default_regressor(),
            pa: default_classifier(),
            pd: default_classifier(),
            variance: VarianceSpec::Unit,
        }
    }
}

impl NuisanceSpecs {
    /// Same learner for both outcome regressions, `pd` for the study propensity.
    pub fn new(outcome: LearnerSpec, pd: LearnerSpec) -> Self {
        NuisanceSpecs { m0: outcome.clone(), m1: outcome, pd, ..Default::default() }
    }

    pub fn is_parametric(&self) -> bool {
        self.m0.is_parametric() && self.m1.is_parametric() && self.pd.is_parametric() && self.pa.is_parametric()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossFitConfig {
    pub folds: usize,
    pub seed: u64,
    /// Propensity truncation level `delta`: predictions are clipped to `[delta, 1 - delta]`.
    pub truncation: f64,
    /// `false` fits every model on all rows (single fold, in-sample predictions).
    pub crossfit: bool,
    /// Use the dataset's design value of `Pr(A = 1 | D = 1)` when available.
    pub use_known_pa: bool,
}

impl Default for CrossFitConfig {
    fn default() -> Self {
        CrossFitConfig { folds: 5, seed: 0, truncation: 0.01, crossfit: true, use_known_pa: true }
    }
}

impl CrossFitConfig {
    pub fn no_crossfit() -> Self {
        CrossFitConfig { folds: 1, crossfit: false, ..Default::default() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_folds(mut self, folds: usize) -> Self {
        self.folds = folds;
        self
    }
}

/// Per-row nuisance predictions. Every vector has one entry per dataset row.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceFits {
    pub m0_hat: Vec<f64>,
    pub m1_hat: Vec<f64>,
    /// Control-outcome regression trained on randomized controls only.
    pub m0_internal_hat: Vec<f64>,
    pub pa_hat: Vec<f64>,
    pub pd_hat: Vec<f64>,
    pub r_hat: Vec<f64>,
    pub fold_id: Vec<usize>,
    pub folds: usize,
    /// `n_rct / n`.
    pub q_hat: f64,
    pub variance_mode: VarianceMode,
}

impl NuisanceFits {
    /// Assembles fits from known or externally computed nuisance values
    /// (single fold, `m0_internal = m0`).
    pub fn from_values(
        ds: &TrialDataset,
        m0: Vec<f64>,
        m1: Vec<f64>,
        pa: Vec<f64>,
        pd: Vec<f64>,
        r: Vec<f64>,
    ) -> Result<Self, LearnerError> {
        let n = ds.n_rows();
        for (name, v) in [("m0", &m0), ("m1", &m1), ("pa", &pa), ("pd", &pd), ("r", &r)] {
            if v.len() != n {
                return Err(LearnerError::InvalidSpec(format!("{name} has {} values for {n} rows", v.len())));
            }
        }
        if pa.iter().chain(&pd).any(|&p| !(p > 0.0 && p <= 1.0)) {
            return Err(LearnerError::InvalidSpec("propensities must lie in (0, 1]".into()));
        }
        if r.iter().any(|&v| !(v > 0.0)) {
            return Err(LearnerError::InvalidSpec("variance ratios must be positive".into()));
        }
        Ok(NuisanceFits {
            m0_internal_hat: m0.clone(),
            m0_hat: m0,
            m1_hat: m1,
            pa_hat: pa,
            pd_hat: pd,
            r_hat: r,
            fold_id: vec![0; n],
            folds: 1,
            q_hat: ds.n_rct() as f64 / n as f64,
            variance_mode: VarianceMode::Unit,
        })
    }
}

/// Which nuisance functions to compute.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Which {
    pub m0: bool,
    pub m1: bool,
    pub m0_internal: bool,
    pub pa: bool,
    pub pd: bool,
}

impl Which {
    pub const ALL: Which = Which { m0: true, m1: true, m0_internal: true, pa: true, pd: true };
}

fn cell(ds: &TrialDataset, i: usize) -> usize {
    match (ds.source()[i], ds.treatment()[i]) {
        (1, 1) => 0,
        (1, 0) => 1,
        _ => 2,
    }
}

fn assign_folds(ds: &TrialDataset, k: usize, seed: u64) -> Result<Vec<usize>, LearnerError> {
    let n = ds.n_rows();
    let mut cells: [Vec<usize>; 3] = Default::default();
    for i in 0..n {
        cells[cell(ds, i)].push(i);
    }
    let mut last_reason = String::new();
    for attempt in 0..MAX_FOLD_ATTEMPTS {
        let mut rng = rng::stream(seed, 0xF0_1D00 + attempt as u64);
        let mut fold_id = vec![0usize; n];
        let mut offset = 0;
        for rows in &cells {
            let mut rows = rows.clone();
            rows.shuffle(&mut rng);
            for (j, &i) in rows.iter().enumerate() {
                fold_id[i] = (offset + j) % k;
            }
            offset = (offset + rows.len()) % k;
        }
        // Every training complement must keep both randomized arms and,
        // when external controls exist, at least one of them.
        let mut degenerate = None;
        for f in 0..k {
            let mut counts = [0usize; 3];
            for i in 0..n {
                if fold_id[i] != f {
                    counts[cell(ds, i)] += 1;
                }
            }
            let need_ec = !cells[2].is_empty();
            if counts[0] == 0 || counts[1] == 0 || (need_ec && counts[2] == 0) {
                degenerate = Some(format!("training complement of fold {f} lacks a (source, treatment) cell"));
                break;
            }
        }
        match degenerate {
            None => return Ok(fold_id),
            Some(reason) => last_reason = reason,
        }
    }
    Err(LearnerError::FoldDegenerate { attempts: MAX_FOLD_ATTEMPTS, reason: last_reason })
}

struct FoldOutput {
    rows: Vec<usize>,
    m0: Vec<f64>,
    m1: Vec<f64>,
    m0_internal: Vec<f64>,
    pa: Vec<f64>,
    pd: Vec<f64>,
    r: Vec<f64>,
    variance_fallback: bool,
}

fn fit_on(
    spec: &LearnerSpec,
    task: Task,
    ds: &TrialDataset,
    rows: &[usize],
    target: impl Fn(usize) -> f64,
    seed: u64,
) -> Result<FittedModel, LearnerError> {
    let x = ds.covariates().select_rows(rows);
    let y: Vec<f64> = rows.iter().map(|&i| target(i)).collect();
    fit(spec, task, &x, &y, None, seed)
}

fn predict_or_nan(model: Option<&FittedModel>, x: &DMatrix<f64>) -> Vec<f64> {
    match model {
        Some(m) => m.predict(x),
        None => vec![f64::NAN; x.nrows()],
    }
}

/// Fits the two conditional-variance regressions on squared control
/// residuals and returns the clipped ratio at `x_eval`, or `None` when either
/// source has too few controls.
fn variance_ratio_on(
    learner: &LearnerSpec,
    ds: &TrialDataset,
    train: &[usize],
    residual: impl Fn(usize) -> f64,
    x_eval: &DMatrix<f64>,
    seed: u64,
) -> Result<Option<Vec<f64>>, LearnerError> {
    let internal: Vec<usize> = train.iter().copied().filter(|&i| ds.source()[i] == 1 && ds.treatment()[i] == 0).collect();
    let external: Vec<usize> = train.iter().copied().filter(|&i| ds.source()[i] == 0).collect();
    if internal.len() < MIN_VARIANCE_ROWS || external.len() < MIN_VARIANCE_ROWS {
        return Ok(None);
    }
    let sq = |i: usize| residual(i).powi(2);
    let scale = internal.iter().chain(&external).map(|&i| sq(i)).sum::<f64>() / (internal.len() + external.len()) as f64;
    let floor = (1e-3 * scale).max(1e-12);
    let v1 = fit_on(learner, Task::Regression, ds, &internal, sq, rng::derive_seed(seed, 1))?.predict(x_eval);
    let v0 = fit_on(learner, Task::Regression, ds, &external, sq, rng::derive_seed(seed, 2))?.predict(x_eval);
    Ok(Some(
        v1.iter()
            .zip(&v0)
            .map(|(&a, &b)| (a.max(floor) / b.max(floor)).clamp(RATIO_CLIP.0, RATIO_CLIP.1))
            .collect(),
    ))
}

#[allow(clippy::too_many_arguments)]
fn fit_fold(
    ds: &TrialDataset,
    specs: &NuisanceSpecs,
    cfg: &CrossFitConfig,
    which: Which,
    fold_id: &[usize],
    fold: usize,
    k: usize,
    known_pa: Option<f64>,
) -> Result<FoldOutput, LearnerError> {
    let n = ds.n_rows();
    let (train, test): (Vec<usize>, Vec<usize>) = if k == 1 {
        ((0..n).collect(), (0..n).collect())
    } else {
        (0..n).partition(|&i| fold_id[i] != fold)
    };
    let x_test = ds.covariates().select_rows(&test);
    let pick = |pred: &dyn Fn(usize) -> bool| -> Vec<usize> { train.iter().copied().filter(|&i| pred(i)).collect() };
    let a = |i: usize| ds.a(i);
    let d = |i: usize| ds.d(i);
    let y = |i: usize| ds.outcome()[i];
    let seed = |id: u64| rng::derive_seed(cfg.seed, ((fold as u64) << 8) | id);

    let m1_model = if which.m1 {
        Some(fit_on(&specs.m1, Task::Regression, ds, &pick(&|i| d(i) == 1.0 && a(i) == 1.0), y, seed(1))?)
    } else {
        None
    };
    let m0_rows = pick(&|i| a(i) == 0.0);
    let m0_model = if which.m0 { Some(fit_on(&specs.m0, Task::Regression, ds, &m0_rows, y, seed(2))?) } else { None };
    let m0i_model = if which.m0_internal {
        Some(fit_on(&specs.m0, Task::Regression, ds, &pick(&|i| d(i) == 1.0 && a(i) == 0.0), y, seed(3))?)
    } else {
        None
    };
    let pd = if !which.pd {
        vec![f64::NAN; test.len()]
    } else if ds.n_ec() == 0 {
        vec![1.0; test.len()]
    } else {
        fit_on(&specs.pd, Task::Classification, ds, &train, d, seed(4))?.predict(&x_test)
    };
    let pa = match (which.pa, known_pa) {
        (false, _) => vec![f64::NAN; test.len()],
        (true, Some(p)) => vec![p; test.len()],
        (true, None) => fit_on(&specs.pa, Task::Classification, ds, &pick(&|i| d(i) == 1.0), a, seed(5))?.predict(&x_test),
    };

    let mut variance_fallback = false;
    let r = match (&specs.variance, &m0_model) {
        (VarianceSpec::Regression(learner), Some(m0)) => {
            // Residuals of the training controls under this fold's own m0 fit,
            // so r_hat for held-out rows never sees their outcomes.
            let x_ctrl = ds.covariates().select_rows(&m0_rows);
            let fitted = m0.predict(&x_ctrl);
            let mut resid = vec![0.0; n];
            for (k, &i) in m0_rows.iter().enumerate() {
                resid[i] = ds.outcome()[i] - fitted[k];
            }
            match variance_ratio_on(learner, ds, &train, |i| resid[i], &x_test, seed(6))? {
                Some(r) => r,
                None => {
                    variance_fallback = true;
                    vec![1.0; test.len()]
                }
            }
        }
        _ => vec![1.0; test.len()],
    };

    Ok(FoldOutput {
        m0: predict_or_nan(m0_model.as_ref(), &x_test),
        m1: predict_or_nan(m1_model.as_ref(), &x_test),
        m0_internal: predict_or_nan(m0i_model.as_ref(), &x_test),
        pa,
        pd,
        r,
        rows: test,
        variance_fallback,
    })
}

pub(crate) fn crossfit_with(
    ds: &TrialDataset,
    specs: &NuisanceSpecs,
    cfg: &CrossFitConfig,
    which: Which,
) -> Result<NuisanceFits, LearnerError> {
    let n = ds.n_rows();
    if !(cfg.truncation >= 0.0 && cfg.truncation < 0.5) {
        return Err(LearnerError::InvalidSpec(format!("truncation must lie in [0, 0.5), got {}", cfg.truncation)));
    }
    let k = if cfg.crossfit {
        if cfg.folds < 2 {
            return Err(LearnerError::InvalidSpec("cross-fitting needs at least 2 folds; disable cross-fitting for K = 1".into()));
        }
        if cfg.folds > n {
            return Err(LearnerError::InvalidSpec(format!("{} folds for {n} rows", cfg.folds)));
        }
        cfg.folds
    } else {
        1
    };
    let fold_id = if k == 1 { vec![0; n] } else { assign_folds(ds, k, cfg.seed)? };
    let known_pa = if cfg.use_known_pa { ds.known_treat_prob() } else { None };

    let outputs: Vec<FoldOutput> = (0..k)
        .into_par_iter()
        .map(|f| fit_fold(ds, specs, cfg, which, &fold_id, f, k, known_pa))
        .collect::<Result<_, _>>()?;

    let mut fits = NuisanceFits {
        m0_hat: vec![f64::NAN; n],
        m1_hat: vec![f64::NAN; n],
        m0_internal_hat: vec![f64::NAN; n],
        pa_hat: vec![f64::NAN; n],
        pd_hat: vec![f64::NAN; n],
        r_hat: vec![1.0; n],
        fold_id,
        folds: k,
        q_hat: ds.n_rct() as f64 / n as f64,
        variance_mode: match specs.variance {
            VarianceSpec::Unit => VarianceMode::Unit,
            VarianceSpec::Regression(_) => VarianceMode::Regression,
        },
    };
    let lo = cfg.truncation;
    let hi = 1.0 - cfg.truncation;
    let mut fallback = false;
    for out in outputs {
        fallback |= out.variance_fallback;
        for (j, &i) in out.rows.iter().enumerate() {
            fits.m0_hat[i] = out.m0[j];
            fits.m1_hat[i] = out.m1[j];
            fits.m0_internal_hat[i] = out.m0_internal[j];
            fits.pa_hat[i] = out.pa[j].clamp(lo, hi);
            fits.pd_hat[i] = out.pd[j].clamp(lo, hi);
            fits.r_hat[i] = out.r[j];
        }
    }
    if fallback && fits.variance_mode == VarianceMode::Regression {
        log::warn!("fewer than {MIN_VARIANCE_ROWS} control rows in a source; using r(x) = 1");
        fits.r_hat = vec![1.0; n];
        fits.variance_mode = VarianceMode::Unit;
    }
    Ok(fits)
}

/// Cross-fits every nuisance function. Deterministic given `cfg.seed`.
pub fn crossfit(ds: &TrialDataset, specs: &NuisanceSpecs, cfg: &CrossFitConfig) -> Result<NuisanceFits, LearnerError> {
    crossfit_with(ds, specs, cfg, Which::ALL)
}

/// Variance ratio from the squared residuals of `fits.m0_hat` on control
/// rows, regressed on `X` separately within randomized and external
/// controls (fold-wise when the fits are cross-fitted), clipped to
/// `[0.1, 10]`. Falls back to `r = 1` with a warning when either source has
/// fewer than 5 controls.
pub fn estimate_variance_ratio(
    ds: &TrialDataset,
    fits: &NuisanceFits,
    spec: &VarianceSpec,
    seed: u64,
) -> Result<Vec<f64>, LearnerError> {
    let n = ds.n_rows();
    let learner = match spec {
        VarianceSpec::Unit => return Ok(vec![1.0; n]),
        VarianceSpec::Regression(l) => l,
    };
    let mut r = vec![1.0; n];
    for f in 0..fits.folds {
        let (train, test): (Vec<usize>, Vec<usize>) = if fits.folds == 1 {
            ((0..n).collect(), (0..n).collect())
        } else {
            (0..n).partition(|&i| fits.fold_id[i] != f)
        };
        let x_test = ds.covariates().select_rows(&test);
        let resid = |i: usize| ds.outcome()[i] - fits.m0_hat[i];
        match variance_ratio_on(learner, ds, &train, resid, &x_test, rng::derive_seed(seed, f as u64))? {
            Some(vals) => {
                for (j, &i) in test.iter().enumerate() {
                    r[i] = vals[j];
                }
            }
            None => {
                log::warn!("fewer than {MIN_VARIANCE_ROWS} control rows in a source; using r(x) = 1");
                return Ok(vec![1.0; n]);
            }
        }
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TrialDataset;

    fn toy(n_per_cell: usize) -> TrialDataset {
        let mut y = Vec::new();
        let mut x = Vec::new();
        let mut a = Vec::new();
        let mut d = Vec::new();
        for (cell, (ai, di)) in [(1u8, 1u8), (0, 1), (0, 0)].into_iter().enumerate() {
            for j in 0..n_per_cell {
                let xv = j as f64 / n_per_cell as f64 + cell as f64 * 0.1;
                x.push(xv);
                y.push(1.0 + 2.0 * xv + ai as f64 + ((j * 7 + cell) % 5) as f64 * 0.1);
                a.push(ai);
                d.push(di);
            }
        }
        let n = y.len();
        TrialDataset::new(y, DMatrix::from_column_slice(n, 1, &x), vec!["x".into()], a, d, None).unwrap()
    }

    #[test]
    fn folds_are_stratified_and_balanced() {
        let ds = toy(10);
        let ids = assign_folds(&ds, 5, 1).unwrap();
        for f in 0..5 {
            for c in 0..3 {
                let cnt = (0..ds.n_rows()).filter(|&i| ids[i] == f && cell(&ds, i) == c).count();
                assert_eq!(cnt, 2);
            }
        }
    }

    #[test]
    fn tiny_cell_cannot_be_folded() {
        let ds = toy(1);
        let err = assign_folds(&ds, 2, 0).unwrap_err();
        assert!(matches!(err, LearnerError::FoldDegenerate { attempts: 10, .. }));
    }

    #[test]
    fn q_hat_is_randomized_fraction() {
        let ds = toy(6);
        let fits = crossfit(&ds, &NuisanceSpecs::default(), &CrossFitConfig::default().with_folds(2)).unwrap();
        assert_eq!(fits.q_hat, 12.0 / 18.0);
        assert!(fits.pd_hat.iter().all(|&p| (0.01..=0.99).contains(&p)));
    }

    #[test]
    fn single_fold_requires_opt_out() {
        let ds = toy(6);
        let cfg = CrossFitConfig::default().with_folds(1);
        assert!(crossfit(&ds, &NuisanceSpecs::default(), &cfg).is_err());
        assert!(crossfit(&ds, &NuisanceSpecs::default(), &CrossFitConfig::no_crossfit()).is_ok());
    }

    #[test]
    fn variance_spec_json() {
        let v: VarianceSpec = serde_json::from_str(r#"{"mode":"regression","kind":"linear"}"#).unwrap();
        assert_eq!(v, VarianceSpec::Regression(LearnerSpec::linear()));
        let specs: NuisanceSpecs =
            serde_json::from_str(r#"{"m0":{"kind":"random_forest","trees":200}, "pd":{"kind":"logistic"}}"#).unwrap();
        assert_eq!(specs.m0.trees, Some(200));
        assert_eq!(specs.m1, LearnerSpec::linear());
        assert_eq!(specs.variance, VarianceSpec::Unit);
    }
}
