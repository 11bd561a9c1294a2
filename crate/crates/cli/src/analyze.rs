use std::path::PathBuf;

use clap::Args;
use extcontrol::diagnostics::{self, DiagnosticsConfig, DiagnosticsReport};
use extcontrol::estimators::{self, EstimatorOptions, Method, TauEstimate};
use extcontrol::inference::{self, InferenceResult};
use extcontrol::learners::{self, CrossFitConfig, NuisanceFits, NuisanceSpecs};
use extcontrol::{rng, AdjustmentVerdict, Schema};
use serde::Serialize;

use crate::failure::{Failure, EXIT_IDENTIFICATION};
use crate::input::{self, DataArgs, LearnerArgs};

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Selection diagram JSON; the adjustment set is checked before estimation.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Comma-separated adjustment set; defaults to all covariates. Estimation uses only these columns.
    #[arg(long)]
    pub adjust: Option<String>,
    #[arg(long, default_value = "rct,om,ipdw,aipw,tmle")]
    pub methods: String,
    #[command(flatten)]
    pub learners: LearnerArgs,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Bootstrap replicates for om and ipdw.
    #[arg(long, default_value_t = 1000)]
    pub boot: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Propensity truncation level.
    #[arg(long, default_value_t = 0.01)]
    pub truncation: f64,
    /// Normalize the ipdw control mean by the total weight.
    #[arg(long)]
    pub hajek: bool,
    /// Diagnostic bucket width on the pi_d scale.
    #[arg(long, default_value_t = 0.05)]
    pub width: f64,
    #[arg(long, default_value_t = 2000)]
    pub perms: usize,
    /// Threshold for the pi_d overdependence flag.
    #[arg(long, default_value_t = 0.25)]
    pub threshold: f64,
    /// Proceed even if the graph rejects the adjustment set.
    #[arg(long)]
    pub force: bool,
    /// Allow random forests inside the om/ipdw bootstrap.
    #[arg(long)]
    pub allow_flexible: bool,
    /// JSON report path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Tool {
    name: &'static str,
    version: &'static str,
}

#[derive(Serialize)]
struct ResolvedConfig {
    data: String,
    schema: Schema,
    graph: Option<String>,
    adjustment_set: Vec<String>,
    methods: Vec<Method>,
    learners: NuisanceSpecs,
    folds: usize,
    truncation: f64,
    n_boot: usize,
    level: f64,
    seed: u64,
    crossfit_seed: u64,
    bootstrap_seed: u64,
    permutation_seed: u64,
    options: EstimatorOptions,
    diagnostics: DiagnosticsConfig,
    force: bool,
    allow_flexible: bool,
}

#[derive(Serialize)]
struct DataSummary {
    n: usize,
    n_rct: usize,
    n_ec: usize,
    n_treated: usize,
    n_internal_controls: usize,
}

#[derive(Serialize)]
struct Identification {
    checked: bool,
    verdict: Option<AdjustmentVerdict>,
    /// The graph rejected the set and the analysis ran anyway.
    forced: bool,
}

#[derive(Serialize)]
struct MethodResult {
    method: Method,
    estimate: TauEstimate,
    inference: InferenceResult,
}

#[derive(Serialize)]
struct Report {
    tool: Tool,
    config: ResolvedConfig,
    data: DataSummary,
    identification: Identification,
    results: Vec<MethodResult>,
    diagnostics: Option<DiagnosticsReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    diagnostics_note: Option<String>,
}

pub fn run(args: &AnalyzeArgs) -> Result<(), Failure> {
    let (schema, full) = input::load(&args.data)?;
    let adjust: Vec<String> = match &args.adjust {
        Some(s) => input::split_list(s),
        None => schema.covariates.clone(),
    };
    for a in &adjust {
        if !schema.covariates.contains(a) {
            return Err(Failure::validation("cli", format!("adjustment variable '{a}' is not a covariate column")));
        }
    }

    let mut identification = Identification { checked: false, verdict: None, forced: false };
    if let Some(path) = &args.graph {
        let swig = input::load_graph(path)?;
        let set: Vec<&str> = adjust.iter().map(String::as_str).collect();
        let verdict = swig.verify_adjustment(&set)?;
        if !verdict.sufficient {
            if !args.force {
                return Err(Failure { code: EXIT_IDENTIFICATION, message: format!("graph: {verdict}") });
            }
            log::warn!("graph: {verdict}; continuing because --force was given");
            identification.forced = true;
        }
        identification.checked = true;
        identification.verdict = Some(verdict);
    }

    let ds = if adjust == schema.covariates { full } else { full.with_covariates(&adjust)? };
    let methods = Method::parse_list(&args.methods)?;
    let specs = input::resolve_learners(&args.learners)?;
    let options = EstimatorOptions { hajek: args.hajek, ..EstimatorOptions::default() };
    let cf_seed = rng::derive_seed(args.seed, 1);
    let boot_seed = rng::derive_seed(args.seed, 2);
    let diag_cfg =
        DiagnosticsConfig { width: args.width, threshold: args.threshold, n_perm: args.perms, seed: rng::derive_seed(args.seed, 3) };
    if !(args.level > 0.0 && args.level < 1.0) {
        return Err(Failure::validation("inference", format!("level must lie in (0, 1), got {}", args.level)));
    }
    if !(args.width > 0.0 && args.width <= 0.5) {
        return Err(Failure::validation("diagnostics", format!("bucket width must lie in (0, 0.5], got {}", args.width)));
    }

    let cf_cfg = CrossFitConfig { folds: args.folds, seed: cf_seed, truncation: args.truncation, ..CrossFitConfig::default() };
    let nc_cfg = CrossFitConfig { seed: cf_seed, truncation: args.truncation, ..CrossFitConfig::no_crossfit() };

    let need_cf = methods.iter().any(|m| m.has_eif());
    let cf_fits: Option<Result<NuisanceFits, learners::LearnerError>> =
        (need_cf || ds.n_ec() > 0).then(|| learners::crossfit(&ds, &specs, &cf_cfg));
    let boot_methods: Vec<Method> = methods.iter().copied().filter(|m| !m.has_eif()).collect();

    let mut by_method: Vec<Option<MethodResult>> = methods.iter().map(|_| None).collect();
    for (k, &m) in methods.iter().enumerate() {
        if m.has_eif() {
            let fits = match cf_fits.as_ref().expect("cross-fit computed") {
                Ok(f) => f,
                Err(e) => return Err(e.clone().into()),
            };
            let est = estimators::estimate(m, &ds, fits, &options)?;
            let inf = inference::ic_interval(&est, args.level)?;
            by_method[k] = Some(MethodResult { method: m, estimate: est, inference: inf });
        }
    }
    if !boot_methods.is_empty() {
        let fits = learners::crossfit(&ds, &specs, &nc_cfg)?;
        let ests: Vec<TauEstimate> =
            boot_methods.iter().map(|&m| estimators::estimate(m, &ds, &fits, &options)).collect::<Result<_, _>>()?;
        let infs = inference::bootstrap_many(
            &ds,
            &boot_methods,
            &ests,
            &specs,
            &nc_cfg,
            &options,
            args.allow_flexible,
            args.boot,
            boot_seed,
            args.level,
        )
        .map_err(|e| match e {
            inference::InferenceError::FlexibleLearner => {
                Failure::validation("inference", format!("{e}; pass --allow-flexible to proceed"))
            }
            other => other.into(),
        })?;
        for (est, inf) in ests.into_iter().zip(infs) {
            let k = methods.iter().position(|&m| m == est.method).expect("method listed");
            by_method[k] = Some(MethodResult { method: est.method, estimate: est, inference: inf });
        }
    }
    let results: Vec<MethodResult> = by_method.into_iter().map(|r| r.expect("every method run")).collect();

    let (diagnostics, diagnostics_note) = if ds.n_ec() == 0 {
        (None, Some("no external controls".to_string()))
    } else {
        match cf_fits.as_ref().expect("cross-fit computed") {
            Err(e) => (None, Some(format!("learners: {e}"))),
            Ok(fits) => match diagnostics::diagnose(&ds, fits, &diag_cfg) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(format!("diagnostics: {e}"))),
            },
        }
    };

    print_table(&results, args.level);
    if let Some(d) = &diagnostics {
        println!();
        println!("delta_pd = {:.4}{}", d.delta_pd, if d.overdependence_flag { "  (overdependence flag)" } else { "" });
        match d.implication_p_value {
            Some(p) => println!("implication test p = {p:.4}"),
            None => println!("implication test skipped: {}", d.implication_note.as_deref().unwrap_or("")),
        }
    }

    let report = Report {
        tool: Tool { name: env!("CARGO_PKG_NAME"), version: env!("CARGO_PKG_VERSION") },
        config: ResolvedConfig {
            data: args.data.data.display().to_string(),
            schema,
            graph: args.graph.as_ref().map(|p| p.display().to_string()),
            adjustment_set: adjust,
            methods: methods.clone(),
            learners: specs,
            folds: args.folds,
            truncation: args.truncation,
            n_boot: args.boot,
            level: args.level,
            seed: args.seed,
            crossfit_seed: cf_seed,
            bootstrap_seed: boot_seed,
            permutation_seed: diag_cfg.seed,
            options,
            diagnostics: diag_cfg,
            force: args.force,
            allow_flexible: args.allow_flexible,
        },
        data: DataSummary {
            n: ds.n_rows(),
            n_rct: ds.n_rct(),
            n_ec: ds.n_ec(),
            n_treated: ds.rows_where(|a, d| a == 1 && d == 1).len(),
            n_internal_controls: ds.rows_where(|a, d| a == 0 && d == 1).len(),
        },
        identification,
        results,
        diagnostics,
        diagnostics_note,
    };
    if let Some(path) = &args.out {
        input::write_file(path, &input::to_json(&report)?)?;
    }
    Ok(())
}

fn print_table(results: &[MethodResult], level: f64) {
    let ci = format!("{}% CI", (level * 100.0).round());
    println!("{:<8} {:>10}  {:<24} {:>8}", "method", "tau_hat", ci, "p-value");
    for r in results {
        let inf = &r.inference;
        println!(
            "{:<8} {:>10.4}  {:<24} {:>8.4}",
            r.method.as_str(),
            inf.tau_hat,
            format!("({:.4}, {:.4})", inf.ci_low, inf.ci_high),
            inf.p_value
        );
    }
}
