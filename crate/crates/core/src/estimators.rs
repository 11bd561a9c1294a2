//! Estimators of `tau = E[Y^1 - Y^0 | D = 1]` from a dataset plus nuisance fits.
//!
//! Notation per row: `q = n_rct / n`, and the control weight
//!
//! ```text
//! W(A, D, X) = [D(1-A) pi_d + (1-D) pi_d r] / [pi_d (1-pi_a) + (1-pi_d) r]
//! ```
//!
//! The efficient influence curve is
//!
//! ```text
//! phi = (1/q) [ D(m1 - m0 - tau) + D A / pi_a (Y - m1) - W (Y - m0) ].
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::data::TrialDataset;
use crate::learners::{NuisanceFits, Which};
use crate::stats;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("no treated rows: mu1 is undefined")]
    NoTreated,
    #[error("all control weights are zero: mu0 is undefined")]
    NoControls,
    #[error("no randomized rows (q = 0)")]
    NoRct,
    #[error("randomized arm '{0}' is empty")]
    EmptyArm(&'static str),
    #[error("non-positive weight denominator at row {row}")]
    NumericGuard { row: usize },
    #[error("nuisance '{0}' is missing for some rows")]
    MissingNuisance(&'static str),
    #[error("nuisance fits cover {fits} rows, dataset has {data}")]
    Shape { fits: usize, data: usize },
    #[error("unknown method '{0}' (expected rct, om, ipdw, aipw or tmle)")]
    UnknownMethod(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rct,
    Om,
    Ipdw,
    Aipw,
    Tmle,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Rct, Method::Om, Method::Ipdw, Method::Aipw, Method::Tmle];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Rct => "rct",
            Method::Om => "om",
            Method::Ipdw => "ipdw",
            Method::Aipw => "aipw",
            Method::Tmle => "tmle",
        }
    }

    /// Methods whose estimates carry influence-curve values.
    pub fn has_eif(self) -> bool {
        matches!(self, Method::Rct | Method::Aipw | Method::Tmle)
    }

    /// Parses a comma-separated list such as `rct,om,tmle`.
    pub fn parse_list(s: &str) -> Result<Vec<Method>, EstimatorError> {
        s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(str::parse).collect()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = EstimatorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| EstimatorError::UnknownMethod(s.to_string()))
    }
}

/// Point estimate plus the pieces it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct TauEstimate {
    pub method: Method,
    pub tau_hat: f64,
    pub mu1_hat: f64,
    pub mu0_hat: f64,
    /// One value per dataset row, for `rct`, `aipw` and `tmle`.
    pub eif_values: Option<Vec<f64>>,
    pub targeting_iterations: Option<usize>,
    /// `Some(false)` when targeting stopped at `max_iter` above tolerance.
    pub converged: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EifSummary {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub min: f64,
    pub max: f64,
}

impl EifSummary {
    pub fn of(values: &[f64]) -> Self {
        EifSummary {
            n: values.len(),
            mean: stats::mean(values),
            variance: stats::sample_variance(values),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

impl TauEstimate {
    pub fn eif_summary(&self) -> Option<EifSummary> {
        self.eif_values.as_deref().map(EifSummary::of)
    }
}

impl Serialize for TauEstimate {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            method: &'a Method,
            tau_hat: f64,
            mu1: f64,
            mu0: f64,
            eif_summary: Option<EifSummary>,
            #[serde(skip_serializing_if = "Option::is_none")]
            targeting_iterations: Option<usize>,
            #[serde(skip_serializing_if = "Option::is_none")]
            converged: Option<bool>,
        }
        Repr {
            method: &self.method,
            tau_hat: self.tau_hat,
            mu1: self.mu1_hat,
            mu0: self.mu0_hat,
            eif_summary: self.eif_summary(),
            targeting_iterations: self.targeting_iterations,
            converged: self.converged,
        }
        .serialize(serializer)
    }
}

/// TMLE fluctuation family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Fluctuation {
    /// Additive least-squares offset on the outcome scale.
    #[default]
    Linear,
    /// Logistic offset on `Y` min-max scaled to `[0, 1]`; keeps `m*` inside the observed range.
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TmleConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub fluctuation: Fluctuation,
}

impl Default for TmleConfig {
    fn default() -> Self {
        TmleConfig { tol: 1e-10, max_iter: 20, fluctuation: Fluctuation::Linear }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct EstimatorOptions {
    /// Normalize the IPDW control mean by the total weight.
    pub hajek: bool,
    pub tmle: TmleConfig,
}

/// Everything the influence curve needs for one row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuisanceRow {
    pub y: f64,
    pub a: f64,
    pub d: f64,
    pub m0: f64,
    pub m1: f64,
    pub pa: f64,
    pub pd: f64,
    pub r: f64,
    pub q: f64,
}

impl NuisanceRow {
    pub fn of(ds: &TrialDataset, fits: &NuisanceFits, i: usize) -> Self {
        NuisanceRow {
            y: ds.outcome()[i],
            a: ds.a(i),
            d: ds.d(i),
            m0: fits.m0_hat[i],
            m1: fits.m1_hat[i],
            pa: fits.pa_hat[i],
            pd: fits.pd_hat[i],
            r: fits.r_hat[i],
            q: fits.q_hat,
        }
    }
}

/// `W(A, D, X)`; zero for randomized treated rows.
pub fn weight_w(a: f64, d: f64, pd: f64, pa: f64, r: f64) -> Result<f64, EstimatorError> {
    let den = pd * (1.0 - pa) + (1.0 - pd) * r;
    if !(den > 0.0) {
        return Err(EstimatorError::NumericGuard { row: usize::MAX });
    }
    Ok((d * (1.0 - a) * pd + (1.0 - d) * pd * r) / den)
}

fn row_w(row: &NuisanceRow, i: usize) -> Result<f64, EstimatorError> {
    weight_w(row.a, row.d, row.pd, row.pa, row.r).map_err(|_| EstimatorError::NumericGuard { row: i })
}

/// Efficient influence curve value of one row at `tau`.
pub fn eif(row: &NuisanceRow, tau: f64) -> Result<f64, EstimatorError> {
    if !(row.q > 0.0) {
        return Err(EstimatorError::NoRct);
    }
    let w = weight_w(row.a, row.d, row.pd, row.pa, row.r)?;
    let treated = if row.d * row.a != 0.0 { row.d * row.a / row.pa * (row.y - row.m1) } else { 0.0 };
    Ok((row.d * (row.m1 - row.m0 - tau) + treated - w * (row.y - row.m0)) / row.q)
}

fn check_shape(ds: &TrialDataset, fits: &NuisanceFits) -> Result<(), EstimatorError> {
    if fits.m0_hat.len() != ds.n_rows() {
        return Err(EstimatorError::Shape { fits: fits.m0_hat.len(), data: ds.n_rows() });
    }
    if ds.n_rct() == 0 || !(fits.q_hat > 0.0) {
        return Err(EstimatorError::NoRct);
    }
    Ok(())
}

fn require(name: &'static str, v: &[f64], rows: impl Iterator<Item = usize>) -> Result<(), EstimatorError> {
    for i in rows {
        if !v[i].is_finite() {
            return Err(EstimatorError::MissingNuisance(name));
        }
    }
    Ok(())
}

fn treated_mean(ds: &TrialDataset) -> Result<f64, EstimatorError> {
    let (mut s, mut k) = (0.0, 0usize);
    for i in 0..ds.n_rows() {
        if ds.treatment()[i] == 1 {
            s += ds.outcome()[i];
            k += 1;
        }
    }
    if k == 0 {
        return Err(EstimatorError::NoTreated);
    }
    Ok(s / k as f64)
}

/// Outcome-model (g-computation) estimator: the treated-arm mean minus the
/// pooled-control regression averaged over randomized rows.
pub fn tau_om(ds: &TrialDataset, fits: &NuisanceFits) -> Result<TauEstimate, EstimatorError> {
    check_shape(ds, fits)?;
    let rct = ds.rows_where(|_, d| d == 1);
    require("m0", &fits.m0_hat, rct.iter().copied())?;
    let mu1 = treated_mean(ds)?;
    let mu0 = rct.iter().map(|&i| fits.m0_hat[i]).sum::<f64>() / rct.len() as f64;
    Ok(TauEstimate {
        method: Method::Om,
        tau_hat: mu1 - mu0,
        mu1_hat: mu1,
        mu0_hat: mu0,
        eif_values: None,
        targeting_iterations: None,
        converged: None,
    })
}

/// Data-source weights `W_i = (n/n_rct)(1-A) pi_d / [(1-pi_a) pi_d + 1 - pi_d]`.
pub fn ipdw_weights(ds: &TrialDataset, fits: &NuisanceFits) -> Result<Vec<f64>, EstimatorError> {
    check_shape(ds, fits)?;
    let n = ds.n_rows() as f64;
    let scale = n / ds.n_rct() as f64;
    let controls = || ds.rows_where(|a, _| a == 0).into_iter();
    require("pd", &fits.pd_hat, controls())?;
    require("pa", &fits.pa_hat, controls())?;
    (0..ds.n_rows())
        .map(|i| {
            if ds.treatment()[i] == 1 {
                return Ok(0.0);
            }
            let (pd, pa) = (fits.pd_hat[i], fits.pa_hat[i]);
            let den = (1.0 - pa) * pd + (1.0 - pd);
            if !(den > 0.0) {
                return Err(EstimatorError::NumericGuard { row: i });
            }
            Ok(scale * pd / den)
        })
        .collect()
}

/// Weighting estimator: `mu0 = n^-1 sum W_i Y_i`, or `sum W_i Y_i / sum W_i`
/// when `hajek` is set.
pub fn tau_ipdw(ds: &TrialDataset, fits: &NuisanceFits, hajek: bool) -> Result<TauEstimate, EstimatorError> {
    let w = ipdw_weights(ds, fits)?;
    let mu1 = treated_mean(ds)?;
    let sw: f64 = w.iter().sum();
    if !(sw > 0.0) {
        return Err(EstimatorError::NoControls);
    }
    let swy: f64 = w.iter().zip(ds.outcome()).map(|(w, y)| w * y).sum();
    let mu0 = if hajek { swy / sw } else { swy / ds.n_rows() as f64 };
    Ok(TauEstimate {
        method: Method::Ipdw,
        tau_hat: mu1 - mu0,
        mu1_hat: mu1,
        mu0_hat: mu0,
        eif_values: None,
        targeting_iterations: None,
        converged: None,
    })
}

fn rows(ds: &TrialDataset, fits: &NuisanceFits) -> Result<Vec<NuisanceRow>, EstimatorError> {
    check_shape(ds, fits)?;
    let all = || 0..ds.n_rows();
    require("m0", &fits.m0_hat, all())?;
    require("m1", &fits.m1_hat, all())?;
    require("pa", &fits.pa_hat, all())?;
    require("pd", &fits.pd_hat, all())?;
    require("r", &fits.r_hat, all())?;
    if ds.treatment().iter().all(|&a| a == 0) {
        return Err(EstimatorError::NoTreated);
    }
    Ok((0..ds.n_rows()).map(|i| NuisanceRow::of(ds, fits, i)).collect())
}

fn eif_vector(rows: &[NuisanceRow], tau: f64) -> Result<Vec<f64>, EstimatorError> {
    rows.iter().enumerate().map(|(i, r)| eif(r, tau).map_err(|e| relabel(e, i))).collect()
}

fn relabel(e: EstimatorError, i: usize) -> EstimatorError {
    match e {
        EstimatorError::NumericGuard { .. } => EstimatorError::NumericGuard { row: i },
        other => other,
    }
}

/// Closed-form AIPW estimate; the stored influence-curve values average to zero.
pub fn tau_aipw(ds: &TrialDataset, fits: &NuisanceFits) -> Result<TauEstimate, EstimatorError> {
    let rows = rows(ds, fits)?;
    let n = rows.len() as f64;
    let q = fits.q_hat;
    let (mut s1, mut s0) = (0.0, 0.0);
    for (i, r) in rows.iter().enumerate() {
        let w = row_w(r, i)?;
        let treated = if r.d * r.a != 0.0 { r.d * r.a / r.pa * (r.y - r.m1) } else { 0.0 };
        s1 += r.d * r.m1 + treated;
        s0 += r.d * r.m0 + w * (r.y - r.m0);
    }
    let mu1 = s1 / (n * q);
    let mu0 = s0 / (n * q);
    let tau = mu1 - mu0;
    Ok(TauEstimate {
        method: Method::Aipw,
        tau_hat: tau,
        mu1_hat: mu1,
        mu0_hat: mu0,
        eif_values: Some(eif_vector(&rows, tau)?),
        targeting_iterations: None,
        converged: None,
    })
}

fn plug_in(rows: &[NuisanceRow], m1: &[f64], m0: &[f64]) -> (f64, f64) {
    let (mut s1, mut s0, mut k) = (0.0, 0.0, 0.0);
    for (i, r) in rows.iter().enumerate() {
        if r.d == 1.0 {
            s1 += m1[i];
            s0 += m0[i];
            k += 1.0;
        }
    }
    (s1 / k, s0 / k)
}

fn with_fits(rows: &[NuisanceRow], m1: &[f64], m0: &[f64]) -> Vec<NuisanceRow> {
    rows.iter().zip(m1.iter().zip(m0)).map(|(r, (&m1, &m0))| NuisanceRow { m1, m0, ..*r }).collect()
}

/// Solves `sum_i c_i h_i (y_i - expit(logit(m_i) + eps h_i)) = 0` by damped Newton.
fn logistic_offset(terms: &[(f64, f64, f64, f64)]) -> f64 {
    let score = |eps: f64| -> (f64, f64) {
        let (mut s, mut ds) = (0.0, 0.0);
        for &(c, h, y, lm) in terms {
            let p = crate::learners::expit(lm + eps * h);
            s += c * h * (y - p);
            ds -= c * h * h * p * (1.0 - p);
        }
        (s, ds)
    };
    let mut eps = 0.0;
    for _ in 0..100 {
        let (s, ds) = score(eps);
        if s.abs() < 1e-14 || ds == 0.0 {
            break;
        }
        let mut step = -s / ds;
        // The score is monotone in eps, so halving until |score| drops is safe.
        for _ in 0..50 {
            if score(eps + step).0.abs() < s.abs() {
                break;
            }
            step *= 0.5;
        }
        eps += step;
        if step.abs() < 1e-15 * (1.0 + eps.abs()) {
            break;
        }
    }
    eps
}

/// Targeted estimate. Each pass fluctuates `m1` along `h1(x) = 1/(q pi_a)`
/// using randomized treated rows, and `m0` along `h0(x) = pi_d / (q den)`
/// using all controls with weight 1 (internal) or `r` (external), so that
/// `sum H_a (Y - m_a*)` vanishes per arm; the estimate is the plug-in mean of
/// `m1* - m0*` over randomized rows.
pub fn tau_tmle(ds: &TrialDataset, fits: &NuisanceFits, cfg: &TmleConfig) -> Result<TauEstimate, EstimatorError> {
    let rows = rows(ds, fits)?;
    let n = rows.len();
    let q = fits.q_hat;
    let mut m1: Vec<f64> = rows.iter().map(|r| r.m1).collect();
    let mut m0: Vec<f64> = rows.iter().map(|r| r.m0).collect();
    let mut h1 = vec![0.0; n];
    let mut h0 = vec![0.0; n];
    for (i, r) in rows.iter().enumerate() {
        let den = r.pd * (1.0 - r.pa) + (1.0 - r.pd) * r.r;
        if !(den > 0.0) {
            return Err(EstimatorError::NumericGuard { row: i });
        }
        h1[i] = 1.0 / (q * r.pa);
        h0[i] = r.pd / (q * den);
    }
    // Control-score weights: W/q = v * h0 with v = 1 (D=1) or r (D=0).
    let v: Vec<f64> = rows.iter().map(|r| if r.d == 1.0 { 1.0 } else { r.r }).collect();

    let (ylo, yhi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.y), hi.max(r.y)));
    let span = if yhi > ylo { yhi - ylo } else { 1.0 };
    let scale_y = |y: f64| (y - ylo) / span;
    let scale = |m: f64| scale_y(m).clamp(1e-5, 1.0 - 1e-5);
    let logit = crate::learners::logit;

    let mean_eif = |m1: &[f64], m0: &[f64]| -> Result<(f64, f64, Vec<f64>), EstimatorError> {
        let (p1, p0) = plug_in(&rows, m1, m0);
        let tau = p1 - p0;
        let e = eif_vector(&with_fits(&rows, m1, m0), tau)?;
        Ok((tau, e.iter().sum::<f64>() / n as f64, e))
    };

    let (mut tau, mut mean, mut e) = mean_eif(&m1, &m0)?;
    let mut iterations = 0;
    while mean.abs() >= cfg.tol && iterations < cfg.max_iter {
        match cfg.fluctuation {
            Fluctuation::Linear => {
                let (mut num1, mut den1, mut num0, mut den0) = (0.0, 0.0, 0.0, 0.0);
                for (i, r) in rows.iter().enumerate() {
                    if r.d == 1.0 && r.a == 1.0 {
                        num1 += h1[i] * (r.y - m1[i]);
                        den1 += h1[i] * h1[i];
                    } else if r.a == 0.0 {
                        num0 += v[i] * h0[i] * (r.y - m0[i]);
                        den0 += v[i] * h0[i] * h0[i];
                    }
                }
                let eps1 = if den1 > 0.0 { num1 / den1 } else { 0.0 };
                let eps0 = if den0 > 0.0 { num0 / den0 } else { 0.0 };
                for i in 0..n {
                    m1[i] += eps1 * h1[i];
                    m0[i] += eps0 * h0[i];
                }
            }
            Fluctuation::Logistic => {
                let mut t1 = Vec::new();
                let mut t0 = Vec::new();
                for (i, r) in rows.iter().enumerate() {
                    if r.d == 1.0 && r.a == 1.0 {
                        t1.push((1.0, h1[i], scale_y(r.y), logit(scale(m1[i]))));
                    } else if r.a == 0.0 {
                        t0.push((v[i], h0[i], scale_y(r.y), logit(scale(m0[i]))));
                    }
                }
                let eps1 = logistic_offset(&t1);
                let eps0 = logistic_offset(&t0);
                let expit = crate::learners::expit;
                for i in 0..n {
                    m1[i] = ylo + span * expit(logit(scale(m1[i])) + eps1 * h1[i]);
                    m0[i] = ylo + span * expit(logit(scale(m0[i])) + eps0 * h0[i]);
                }
            }
        }
        iterations += 1;
        (tau, mean, e) = mean_eif(&m1, &m0)?;
    }
    let converged = mean.abs() < cfg.tol;
    if !converged {
        log::warn!("tmle targeting stopped after {iterations} iterations with mean eif {mean:e}");
    }
    let (mu1, mu0) = plug_in(&rows, &m1, &m0);
    Ok(TauEstimate {
        method: Method::Tmle,
        tau_hat: tau,
        mu1_hat: mu1,
        mu0_hat: mu0,
        eif_values: Some(e),
        targeting_iterations: Some(iterations),
        converged: Some(converged),
    })
}

/// AIPW on randomized rows only, with the internal-control regression.
/// External rows get zero influence.
pub fn tau_rct(ds: &TrialDataset, fits: &NuisanceFits) -> Result<TauEstimate, EstimatorError> {
    check_shape(ds, fits)?;
    let rct = ds.rows_where(|_, d| d == 1);
    if !rct.iter().any(|&i| ds.treatment()[i] == 1) {
        return Err(EstimatorError::EmptyArm("treated"));
    }
    if !rct.iter().any(|&i| ds.treatment()[i] == 0) {
        return Err(EstimatorError::EmptyArm("control"));
    }
    require("m1", &fits.m1_hat, rct.iter().copied())?;
    require("m0_internal", &fits.m0_internal_hat, rct.iter().copied())?;
    require("pa", &fits.pa_hat, rct.iter().copied())?;
    let y = ds.outcome();
    let mut psi1 = Vec::with_capacity(rct.len());
    let mut psi0 = Vec::with_capacity(rct.len());
    for &i in &rct {
        let (m1, m0, pa) = (fits.m1_hat[i], fits.m0_internal_hat[i], fits.pa_hat[i]);
        if ds.treatment()[i] == 1 {
            psi1.push(m1 + (y[i] - m1) / pa);
            psi0.push(m0);
        } else {
            psi1.push(m1);
            psi0.push(m0 + (y[i] - m0) / (1.0 - pa));
        }
    }
    let mu1 = stats::mean(&psi1);
    let mu0 = stats::mean(&psi0);
    let tau = mu1 - mu0;
    let mut eif = vec![0.0; ds.n_rows()];
    for (k, &i) in rct.iter().enumerate() {
        eif[i] = (psi1[k] - psi0[k] - tau) / fits.q_hat;
    }
    Ok(TauEstimate {
        method: Method::Rct,
        tau_hat: tau,
        mu1_hat: mu1,
        mu0_hat: mu0,
        eif_values: Some(eif),
        targeting_iterations: None,
        converged: None,
    })
}

/// Nuisance functions the given methods read.
pub(crate) fn nuisances_for(methods: &[Method]) -> Which {
    let mut w = Which { m0: false, m1: false, m0_internal: false, pa: false, pd: false };
    for m in methods {
        match m {
            Method::Rct => {
                w.m1 = true;
                w.m0_internal = true;
                w.pa = true;
            }
            Method::Om => w.m0 = true,
            Method::Ipdw => {
                w.pa = true;
                w.pd = true;
            }
            Method::Aipw | Method::Tmle => {
                w.m0 = true;
                w.m1 = true;
                w.pa = true;
                w.pd = true;
            }
        }
    }
    w
}

pub fn estimate(
    method: Method,
    ds: &TrialDataset,
    fits: &NuisanceFits,
    opts: &EstimatorOptions,
) -> Result<TauEstimate, EstimatorError> {
    match method {
        Method::Rct => tau_rct(ds, fits),
        Method::Om => tau_om(ds, fits),
        Method::Ipdw => tau_ipdw(ds, fits, opts.hajek),
        Method::Aipw => tau_aipw(ds, fits),
        Method::Tmle => tau_tmle(ds, fits, &opts.tmle),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn dataset(y: &[f64], x: &[f64], a: &[u8], d: &[u8]) -> TrialDataset {
        let n = y.len();
        TrialDataset::new(y.to_vec(), DMatrix::from_column_slice(n, 1, x), vec!["x".into()], a.to_vec(), d.to_vec(), None)
            .unwrap()
    }

    fn fits(ds: &TrialDataset, m0: Vec<f64>, m1: Vec<f64>, pa: f64, pd: f64) -> NuisanceFits {
        let n = ds.n_rows();
        NuisanceFits::from_values(ds, m0, m1, vec![pa; n], vec![pd; n], vec![1.0; n]).unwrap()
    }

    fn toy() -> TrialDataset {
        dataset(
            &[5.0, 7.0, 4.0, 3.5, 4.5, 2.0],
            &[1.0, 3.0, 1.0, 3.0, 0.0, 2.0],
            &[1, 1, 0, 0, 0, 0],
            &[1, 1, 1, 1, 0, 0],
        )
    }

    #[test]
    fn om_constant_and_two_point_examples() {
        let ds = toy();
        let f = fits(&ds, vec![4.0; 6], vec![0.0; 6], 0.5, 0.5);
        let est = tau_om(&ds, &f).unwrap();
        assert_eq!(est.mu0_hat, 4.0);
        assert_eq!(est.tau_hat, 2.0);
        let m0: Vec<f64> = ds.covariates().column(0).iter().copied().collect();
        let f = fits(&ds, m0, vec![0.0; 6], 0.5, 0.5);
        assert!((tau_om(&ds, &f).unwrap().mu0_hat - 2.0).abs() < 1e-12);
    }

    #[test]
    fn w_hand_value() {
        let w = weight_w(0.0, 1.0, 0.5, 2.0 / 3.0, 1.0).unwrap();
        assert!((w - 0.75).abs() < 1e-12);
        // D = 0 collapse: eif = -(1/q) W (Y - m0).
        let row = NuisanceRow { y: 1.0, a: 0.0, d: 0.0, m0: 0.0, m1: 0.0, pa: 2.0 / 3.0, pd: 0.5, r: 1.0, q: 0.5 };
        assert!((eif(&row, 0.3).unwrap() + 1.5).abs() < 1e-12);
    }

    #[test]
    fn eif_vanishes_on_perfect_treated_row() {
        let row = NuisanceRow { y: 3.0, a: 1.0, d: 1.0, m0: 1.0, m1: 3.0, pa: 0.6, pd: 0.7, r: 1.3, q: 0.4 };
        assert_eq!(eif(&row, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn ipdw_collapses_when_pd_is_one() {
        let ds = toy();
        let f = fits(&ds, vec![0.0; 6], vec![0.0; 6], 2.0 / 3.0, 1.0);
        let w = ipdw_weights(&ds, &f).unwrap();
        let expect = (6.0 / 4.0) / (1.0 / 3.0);
        assert!((w[2] - expect).abs() < 1e-12 && (w[3] - expect).abs() < 1e-12);
        assert_eq!(w[0], 0.0);
        // Without external rows nothing else carries weight.
        let (rct, _) = crate::data::split_by_source(&ds);
        let f = fits(&rct, vec![0.0; 4], vec![0.0; 4], 2.0 / 3.0, 1.0);
        let w = ipdw_weights(&rct, &f).unwrap();
        assert!((w[2] - 3.0).abs() < 1e-12 && w[0] == 0.0);
    }

    #[test]
    fn ipdw_hand_weight() {
        // n / n_rct = 1 needs no external rows; row 2 is D=1, A=0.
        let ds = dataset(&[1.0, 2.0, 3.0], &[0.0, 1.0, 2.0], &[1, 0, 0], &[1, 1, 1]);
        let f = fits(&ds, vec![0.0; 3], vec![0.0; 3], 2.0 / 3.0, 0.5);
        assert!((ipdw_weights(&ds, &f).unwrap()[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn aipw_mean_eif_is_zero() {
        let ds = toy();
        let m0 = vec![3.9, 4.1, 3.8, 3.6, 4.4, 2.5];
        let m1 = vec![5.5, 6.8, 5.0, 6.1, 5.2, 5.9];
        let f = NuisanceFits::from_values(&ds, m0, m1, vec![0.55; 6], vec![0.3, 0.7, 0.6, 0.8, 0.2, 0.4], vec![1.0, 1.2, 0.9, 1.1, 1.0, 0.8])
            .unwrap();
        let est = tau_aipw(&ds, &f).unwrap();
        let e = est.eif_values.as_ref().unwrap();
        assert!(stats::mean(e).abs() < 1e-12);
        assert!((est.tau_hat - (est.mu1_hat - est.mu0_hat)).abs() < 1e-15);
    }

    #[test]
    fn aipw_zero_outcome_models_is_weighting() {
        let ds = toy();
        let f = fits(&ds, vec![0.0; 6], vec![0.0; 6], 0.5, 0.5);
        let est = tau_aipw(&ds, &f).unwrap();
        let q = 4.0 / 6.0;
        let w = weight_w(0.0, 1.0, 0.5, 0.5, 1.0).unwrap();
        let we = weight_w(0.0, 0.0, 0.5, 0.5, 1.0).unwrap();
        let mu1 = (5.0 + 7.0) / 0.5 / (6.0 * q);
        let mu0 = (w * (4.0 + 3.5) + we * (4.5 + 2.0)) / (6.0 * q);
        assert!((est.tau_hat - (mu1 - mu0)).abs() < 1e-12);
    }

    #[test]
    fn tmle_targets_and_is_plug_in() {
        let ds = toy();
        let f = NuisanceFits::from_values(
            &ds,
            vec![3.0, 4.0, 3.5, 3.0, 4.0, 2.0],
            vec![6.0, 6.5, 6.0, 6.2, 5.0, 5.5],
            vec![0.5; 6],
            vec![0.4, 0.6, 0.5, 0.7, 0.3, 0.4],
            vec![1.0; 6],
        )
        .unwrap();
        for fl in [Fluctuation::Linear, Fluctuation::Logistic] {
            let est = tau_tmle(&ds, &f, &TmleConfig { fluctuation: fl, ..Default::default() }).unwrap();
            let e = est.eif_values.as_ref().unwrap();
            assert!(stats::mean(e).abs() < 1e-10, "{fl:?}");
            assert!(est.converged.unwrap());
            assert!(est.targeting_iterations.unwrap() >= 1);
            assert!((est.tau_hat - (est.mu1_hat - est.mu0_hat)).abs() < 1e-12);
        }
    }

    #[test]
    fn tmle_fixed_point_needs_no_iterations() {
        // Treated residuals sum to zero under h1 constant; control residuals
        // weighted by W sum to zero: already targeted.
        let ds = toy();
        let f = NuisanceFits::from_values(
            &ds,
            vec![3.5, 3.5, 3.5, 3.5, 3.5, 3.5],
            vec![6.0; 6],
            vec![0.5; 6],
            vec![0.5; 6],
            vec![1.0; 6],
        )
        .unwrap();
        let est = tau_tmle(&ds, &f, &TmleConfig::default()).unwrap();
        assert_eq!(est.targeting_iterations, Some(0));
        assert_eq!(est.tau_hat, 2.5);
    }

    #[test]
    fn rct_ignores_externals_and_collapses_to_ht() {
        let ds = toy();
        let f = fits(&ds, vec![0.0; 6], vec![0.0; 6], 0.5, 0.5);
        let est = tau_rct(&ds, &f).unwrap();
        let ht = ((5.0 + 7.0) / 0.5 - (4.0 + 3.5) / 0.5) / 4.0;
        assert!((est.tau_hat - ht).abs() < 1e-12);
        let moved = ds.with_outcome(vec![5.0, 7.0, 4.0, 3.5, 100.0, -50.0]).unwrap();
        assert_eq!(tau_rct(&moved, &f).unwrap().tau_hat, est.tau_hat);
        let e = est.eif_values.unwrap();
        assert_eq!(e[4], 0.0);
        assert!(stats::mean(&e).abs() < 1e-12);
    }

    #[test]
    fn method_parsing_and_json() {
        assert_eq!(Method::parse_list("rct, om,IPDW").unwrap(), vec![Method::Rct, Method::Om, Method::Ipdw]);
        assert!("dr".parse::<Method>().is_err());
        let ds = toy();
        let f = fits(&ds, vec![4.0; 6], vec![0.0; 6], 0.5, 0.5);
        let json = serde_json::to_value(tau_om(&ds, &f).unwrap()).unwrap();
        assert_eq!(json["method"], "om");
        assert_eq!(json["tau_hat"], 2.0);
        assert_eq!(json["mu0"], 4.0);
        assert!(json["eif_summary"].is_null());
    }

    #[test]
    fn missing_nuisance_is_reported() {
        let ds = toy();
        let mut f = fits(&ds, vec![4.0; 6], vec![0.0; 6], 0.5, 0.5);
        f.m1_hat[3] = f64::NAN;
        assert_eq!(tau_aipw(&ds, &f).unwrap_err(), EstimatorError::MissingNuisance("m1"));
    }
}
