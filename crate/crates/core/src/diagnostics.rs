//! Empirical checks on the external controls: the study-propensity
//! difference, control outcomes bucketed by `pi_d`, and a within-bucket
//! permutation test of `E[Y | A=0, D=1, X] = E[Y | A=0, D=0, X]`.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::TrialDataset;
use crate::learners::NuisanceFits;
use crate::{rng, stats};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("no external controls: the diagnostic is undefined")]
    NoExternal,
    #[error("no randomized controls")]
    NoInternalControls,
    #[error("bucket width must lie in (0, 0.5], got {0}")]
    Width(f64),
    #[error("only {0} bucket(s) hold both internal and external controls; at least 2 are needed")]
    InsufficientOverlap(usize),
    #[error("nuisance fits cover {fits} rows, dataset has {data}")]
    Shape { fits: usize, data: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsConfig {
    pub width: f64,
    pub threshold: f64,
    pub n_perm: usize,
    pub seed: u64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig { width: 0.05, threshold: 0.25, n_perm: 2000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub lower: f64,
    pub upper: f64,
    pub n_internal: usize,
    pub n_external: usize,
    pub mean_internal: Option<f64>,
    pub mean_external: Option<f64>,
    /// Normal-approximation 95% interval; present with at least 3 rows.
    pub ci_internal: Option<(f64, f64)>,
    pub ci_external: Option<(f64, f64)>,
    /// Exactly one of the two arms is empty.
    pub empty_arm: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationTest {
    pub statistic: f64,
    pub p_value: f64,
    pub n_perm: usize,
    pub mixed_buckets: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub delta_pd: f64,
    pub overdependence_flag: bool,
    pub threshold: f64,
    pub width: f64,
    pub buckets: Vec<Bucket>,
    pub implication_p_value: Option<f64>,
    pub implication_statistic: Option<f64>,
    /// Why the implication test was skipped, if it was.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub implication_note: Option<String>,
}

fn check_fits(ds: &TrialDataset, fits: &NuisanceFits) -> Result<(), DiagnosticsError> {
    if fits.pd_hat.len() != ds.n_rows() {
        return Err(DiagnosticsError::Shape { fits: fits.pd_hat.len(), data: ds.n_rows() });
    }
    Ok(())
}

/// Mean `pi_d` over randomized rows minus mean over external rows, and
/// whether it exceeds `threshold`.
pub fn propensity_difference(ds: &TrialDataset, fits: &NuisanceFits, threshold: f64) -> Result<(f64, bool), DiagnosticsError> {
    check_fits(ds, fits)?;
    if ds.n_ec() == 0 {
        return Err(DiagnosticsError::NoExternal);
    }
    let (mut s1, mut s0) = (0.0, 0.0);
    for i in 0..ds.n_rows() {
        if ds.source()[i] == 1 {
            s1 += fits.pd_hat[i];
        } else {
            s0 += fits.pd_hat[i];
        }
    }
    let delta = s1 / ds.n_rct() as f64 - s0 / ds.n_ec() as f64;
    Ok((delta, delta > threshold))
}

/// Number of buckets covering `[0, 1]` at `width`.
pub fn bucket_count(width: f64) -> usize {
    let k = 1.0 / width;
    if (k - k.round()).abs() < 1e-9 {
        k.round() as usize
    } else {
        k.ceil() as usize
    }
}

/// Bucket of a probability; `1.0` goes to the top bucket.
pub fn bucket_index(p: f64, width: f64, count: usize) -> usize {
    // Nudge so that e.g. 0.15 / 0.05 = 2.9999999999999996 lands in bucket 3.
    let raw = (p / width * (1.0 + 1e-12)).floor();
    (raw.max(0.0) as usize).min(count - 1)
}

fn check_width(width: f64) -> Result<usize, DiagnosticsError> {
    if width > 0.0 && width <= 0.5 {
        Ok(bucket_count(width))
    } else {
        Err(DiagnosticsError::Width(width))
    }
}

/// Control rows grouped by bucket: `(internal, external)` row indices.
fn control_groups(ds: &TrialDataset, fits: &NuisanceFits, width: f64) -> Result<Vec<(Vec<usize>, Vec<usize>)>, DiagnosticsError> {
    check_fits(ds, fits)?;
    let k = check_width(width)?;
    let mut groups = vec![(Vec::new(), Vec::new()); k];
    for i in 0..ds.n_rows() {
        if ds.treatment()[i] != 0 {
            continue;
        }
        let b = bucket_index(fits.pd_hat[i], width, k);
        if ds.source()[i] == 1 {
            groups[b].0.push(i);
        } else {
            groups[b].1.push(i);
        }
    }
    Ok(groups)
}

fn arm_summary(y: &[f64]) -> (Option<f64>, Option<(f64, f64)>) {
    if y.is_empty() {
        return (None, None);
    }
    let m = stats::mean(y);
    let ci = (y.len() >= 3).then(|| {
        let half = stats::z_critical(0.95) * stats::sample_sd(y) / (y.len() as f64).sqrt();
        (m - half, m + half)
    });
    (Some(m), ci)
}

/// Control outcomes binned by `pi_d` into `[k w, (k+1) w)`.
pub fn bucketed_outcomes(ds: &TrialDataset, fits: &NuisanceFits, width: f64) -> Result<Vec<Bucket>, DiagnosticsError> {
    let groups = control_groups(ds, fits, width)?;
    let y = ds.outcome();
    Ok(groups
        .iter()
        .enumerate()
        .map(|(b, (int, ext))| {
            let yi: Vec<f64> = int.iter().map(|&i| y[i]).collect();
            let ye: Vec<f64> = ext.iter().map(|&i| y[i]).collect();
            let (mean_internal, ci_internal) = arm_summary(&yi);
            let (mean_external, ci_external) = arm_summary(&ye);
            Bucket {
                lower: b as f64 * width,
                upper: ((b + 1) as f64 * width).min(1.0),
                n_internal: yi.len(),
                n_external: ye.len(),
                mean_internal,
                mean_external,
                ci_internal,
                ci_external,
                empty_arm: yi.is_empty() != ye.is_empty(),
            }
        })
        .collect())
}

/// `sum_b n_b (mean_internal_b - mean_external_b)^2`; `labels[k]` marks
/// internal rows within the concatenated bucket values.
fn statistic(buckets: &[(Vec<f64>, Vec<bool>)]) -> f64 {
    let mut total = 0.0;
    for (values, labels) in buckets {
        let (mut si, mut ni, mut se, mut ne) = (0.0, 0usize, 0.0, 0usize);
        for (v, &internal) in values.iter().zip(labels) {
            if internal {
                si += v;
                ni += 1;
            } else {
                se += v;
                ne += 1;
            }
        }
        let diff = si / ni as f64 - se / ne as f64;
        total += values.len() as f64 * diff * diff;
    }
    total
}

/// Permutation test of equal control means within `pi_d` buckets: source
/// labels are shuffled within each bucket holding both kinds of control.
/// `p = (1 + #{perm >= observed}) / (n_perm + 1)`.
pub fn implication_test(
    ds: &TrialDataset,
    fits: &NuisanceFits,
    width: f64,
    n_perm: usize,
    seed: u64,
) -> Result<PermutationTest, DiagnosticsError> {
    if ds.n_ec() == 0 {
        return Err(DiagnosticsError::NoExternal);
    }
    let groups = control_groups(ds, fits, width)?;
    if groups.iter().all(|g| g.0.is_empty()) {
        return Err(DiagnosticsError::NoInternalControls);
    }
    let y = ds.outcome();
    let mixed: Vec<(Vec<f64>, Vec<bool>)> = groups
        .iter()
        .filter(|(int, ext)| !int.is_empty() && !ext.is_empty())
        .map(|(int, ext)| {
            let values = int.iter().chain(ext).map(|&i| y[i]).collect();
            let labels = (0..int.len() + ext.len()).map(|k| k < int.len()).collect();
            (values, labels)
        })
        .collect();
    if mixed.len() < 2 {
        return Err(DiagnosticsError::InsufficientOverlap(mixed.len()));
    }
    let observed = statistic(&mixed);
    let tie = 1e-12 * observed.abs().max(1e-300);
    let exceed: usize = (0..n_perm)
        .into_par_iter()
        .map(|p| {
            let mut rng = rng::stream(seed, p as u64);
            let mut shuffled = mixed.clone();
            for (_, labels) in shuffled.iter_mut() {
                labels.shuffle(&mut rng);
            }
            usize::from(statistic(&shuffled) >= observed - tie)
        })
        .sum();
    Ok(PermutationTest {
        statistic: observed,
        p_value: (1 + exceed) as f64 / (n_perm + 1) as f64,
        n_perm,
        mixed_buckets: mixed.len(),
    })
}

/// Runs all three diagnostics. A failed implication test (too little
/// overlap) is recorded in the report rather than returned as an error.
pub fn diagnose(ds: &TrialDataset, fits: &NuisanceFits, cfg: &DiagnosticsConfig) -> Result<DiagnosticsReport, DiagnosticsError> {
    let (delta_pd, overdependence_flag) = propensity_difference(ds, fits, cfg.threshold)?;
    let buckets = bucketed_outcomes(ds, fits, cfg.width)?;
    let (p, s, note) = match implication_test(ds, fits, cfg.width, cfg.n_perm, cfg.seed) {
        Ok(t) => (Some(t.p_value), Some(t.statistic), None),
        Err(e @ (DiagnosticsError::InsufficientOverlap(_) | DiagnosticsError::NoInternalControls)) => {
            (None, None, Some(e.to_string()))
        }
        Err(e) => return Err(e),
    };
    Ok(DiagnosticsReport {
        delta_pd,
        overdependence_flag,
        threshold: cfg.threshold,
        width: cfg.width,
        buckets,
        implication_p_value: p,
        implication_statistic: s,
        implication_note: note,
    })
}

/// Bucket table as CSV for plotting.
pub fn buckets_csv(buckets: &[Bucket]) -> String {
    let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    let mut out = String::from(
        "lower,upper,n_internal,n_external,mean_internal,mean_external,ci_internal_low,ci_internal_high,ci_external_low,ci_external_high,empty_arm\n",
    );
    for b in buckets {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            b.lower,
            b.upper,
            b.n_internal,
            b.n_external,
            fmt_opt(b.mean_internal),
            fmt_opt(b.mean_external),
            fmt_opt(b.ci_internal.map(|c| c.0)),
            fmt_opt(b.ci_internal.map(|c| c.1)),
            fmt_opt(b.ci_external.map(|c| c.0)),
            fmt_opt(b.ci_external.map(|c| c.1)),
            b.empty_arm
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn dataset(y: Vec<f64>, a: Vec<u8>, d: Vec<u8>) -> TrialDataset {
        let n = y.len();
        let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
        TrialDataset::new(y, DMatrix::from_column_slice(n, 1, &x), vec!["x".into()], a, d, None).unwrap()
    }

    fn fits_with_pd(ds: &TrialDataset, pd: Vec<f64>) -> NuisanceFits {
        let n = ds.n_rows();
        NuisanceFits::from_values(ds, vec![0.0; n], vec![0.0; n], vec![0.5; n], pd, vec![1.0; n]).unwrap()
    }

    fn design(n_int: usize, n_ext: usize) -> (Vec<u8>, Vec<u8>) {
        let a = (0..n_int + n_ext).map(|i| u8::from(i < 2)).collect();
        let d = (0..n_int + n_ext).map(|i| u8::from(i < n_int)).collect();
        (a, d)
    }

    #[test]
    fn constant_separation() {
        let (a, d) = design(6, 4);
        let ds = dataset(vec![1.0; 10], a, d);
        let pd = (0..10).map(|i| if i < 6 { 0.9 } else { 0.2 }).collect();
        let (delta, flag) = propensity_difference(&ds, &fits_with_pd(&ds, pd), 0.25).unwrap();
        assert!((delta - 0.7).abs() < 1e-12 && flag);
        let (delta, flag) = propensity_difference(&ds, &fits_with_pd(&ds, vec![0.4; 10]), 0.25).unwrap();
        assert!(delta.abs() < 1e-15 && !flag);
    }

    #[test]
    fn bucket_geometry() {
        assert_eq!(bucket_count(0.05), 20);
        assert_eq!(bucket_count(0.3), 4);
        assert_eq!(bucket_index(1.0, 0.05, 20), 19);
        assert_eq!(bucket_index(0.0, 0.05, 20), 0);
        assert_eq!(bucket_index(0.15, 0.05, 20), 3);
        assert_eq!(bucket_index(0.149, 0.05, 20), 2);
    }

    #[test]
    fn buckets_cover_controls() {
        let (a, d) = design(6, 4);
        let ds = dataset((0..10).map(|i| i as f64).collect(), a, d);
        let pd = vec![0.5, 0.5, 0.31, 0.32, 0.33, 1.0, 0.34, 0.3, 0.001, 0.99];
        let b = bucketed_outcomes(&ds, &fits_with_pd(&ds, pd), 0.05).unwrap();
        assert_eq!(b.len(), 20);
        assert_eq!(b.iter().map(|x| x.n_internal + x.n_external).sum::<usize>(), 8);
        assert_eq!(b[19].n_internal + b[19].n_external, 2);
        assert_eq!(b[6].n_internal, 3);
        assert_eq!(b[6].n_external, 2);
        assert!(b[6].ci_internal.is_some() && b[6].ci_external.is_none());
        let single = bucketed_outcomes(&ds, &fits_with_pd(&ds, vec![0.42; 10]), 0.05).unwrap();
        assert_eq!(single.iter().filter(|x| x.n_internal + x.n_external > 0).count(), 1);
    }

    #[test]
    fn constant_outcome_p_is_one() {
        let (a, d) = design(10, 6);
        let ds = dataset(vec![2.0; 16], a, d);
        let pd = (0..16).map(|i| if i % 2 == 0 { 0.12 } else { 0.61 }).collect();
        let t = implication_test(&ds, &fits_with_pd(&ds, pd), 0.05, 99, 3).unwrap();
        assert_eq!(t.statistic, 0.0);
        assert_eq!(t.p_value, 1.0);
        assert_eq!(t.mixed_buckets, 2);
    }

    #[test]
    fn too_little_overlap_is_an_error() {
        let (a, d) = design(10, 6);
        let ds = dataset((0..16).map(|i| i as f64).collect(), a, d);
        let fits = fits_with_pd(&ds, vec![0.5; 16]);
        assert_eq!(implication_test(&ds, &fits, 0.05, 10, 0).unwrap_err(), DiagnosticsError::InsufficientOverlap(1));
        let report = diagnose(&ds, &fits, &DiagnosticsConfig::default()).unwrap();
        assert!(report.implication_p_value.is_none() && report.implication_note.is_some());
    }

    #[test]
    fn shifted_externals_are_detected() {
        let n_int = 40;
        let n_ext = 40;
        let (a, d) = design(n_int, n_ext);
        let y = (0..n_int + n_ext).map(|i| ((i * 7919) % 13) as f64 * 0.1 + if i >= n_int { 3.0 } else { 0.0 }).collect();
        let ds = dataset(y, a, d);
        let pd = (0..n_int + n_ext).map(|i| if i % 2 == 0 { 0.22 } else { 0.71 }).collect();
        let t = implication_test(&ds, &fits_with_pd(&ds, pd), 0.05, 199, 1).unwrap();
        assert!(t.p_value <= 0.01, "{}", t.p_value);
    }

    #[test]
    fn csv_has_one_line_per_bucket() {
        let (a, d) = design(6, 4);
        let ds = dataset(vec![1.0; 10], a, d);
        let b = bucketed_outcomes(&ds, &fits_with_pd(&ds, vec![0.3; 10]), 0.1).unwrap();
        assert_eq!(buckets_csv(&b).lines().count(), 11);
    }
}
