mod analyze;
mod failure;
mod input;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use extcontrol::diagnostics::{self, DiagnosticsConfig, DiagnosticsReport};
use extcontrol::estimators::Method;
use extcontrol::learners::{self, CrossFitConfig, NuisanceSpecs};
use extcontrol::simulation::{self, DgpConfig, HarnessOptions, SettingOptions};
use extcontrol::{rng, AdjustmentVerdict, Schema};
use serde::Serialize;

use failure::{Failure, EXIT_IDENTIFICATION};
use input::{DataArgs, LearnerArgs};

#[derive(Debug, Parser)]
#[command(name = "extcontrol", version, about = "Treatment effects in randomized trials augmented with external controls")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Identification check, estimation, inference and diagnostics on one dataset.
    Analyze(analyze::AnalyzeArgs),
    /// Selection-diagram queries.
    #[command(subcommand)]
    Graph(GraphCommand),
    /// Compare internal and external controls.
    Diagnose(DiagnoseArgs),
    /// Monte Carlo study of one specification setting.
    Simulate(SimulateArgs),
    /// Rejection rates over effect sizes and external-control counts.
    Power(PowerArgs),
    /// Write one synthetic hybrid trial as CSV.
    Generate(GenerateArgs),
}

#[derive(Debug, Subcommand)]
enum GraphCommand {
    /// Is the adjustment set sufficient? Exits 3 if not.
    Check {
        #[arg(long)]
        graph: PathBuf,
        /// Comma-separated covariates; empty for the empty set.
        #[arg(long, default_value = "")]
        adjust: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// All inclusion-minimal sufficient adjustment sets.
    Minimal {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = usize::MAX)]
        max_size: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    learners: LearnerArgs,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 0.01)]
    truncation: f64,
    #[arg(long, default_value_t = 0.05)]
    width: f64,
    #[arg(long, default_value_t = 2000)]
    perms: usize,
    #[arg(long, default_value_t = 0.25)]
    threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Bucket table CSV path.
    #[arg(long)]
    buckets: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StudyArgs {
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trees per forest in settings that use forests.
    #[arg(long, default_value_t = 200)]
    trees: usize,
    /// Bootstrap replicates for om and ipdw.
    #[arg(long, default_value_t = 1000)]
    boot: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Replicates in pairs with noise of opposite sign (needs even --reps).
    #[arg(long)]
    antithetic: bool,
    /// DGP JSON replacing the setting's default DGP.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `.json` writes JSON, anything else CSV; CSV to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 1)]
    setting: u8,
    /// Also run om in setting 2 and ipdw in setting 3.
    #[arg(long)]
    all_estimators: bool,
    #[command(flatten)]
    study: StudyArgs,
}

#[derive(Debug, Args)]
struct PowerArgs {
    #[arg(long, default_value_t = 5)]
    setting: u8,
    #[arg(long, default_value = "0.25,0.5,0.75")]
    effects: String,
    #[arg(long, default_value = "25,50,100,200")]
    n_ec: String,
    #[arg(long, default_value = "rct,aipw,tmle")]
    methods: String,
    #[command(flatten)]
    study: StudyArgs,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 1)]
    setting: u8,
    /// DGP JSON replacing the setting's default DGP.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Tool {
    name: &'static str,
    version: &'static str,
}

const TOOL: Tool = Tool { name: env!("CARGO_PKG_NAME"), version: env!("CARGO_PKG_VERSION") };

#[derive(Serialize)]
struct GraphCheckReport<'a> {
    tool: Tool,
    graph: String,
    verdict: &'a AdjustmentVerdict,
}

#[derive(Serialize)]
struct GraphMinimalReport<'a> {
    tool: Tool,
    graph: String,
    max_size: Option<usize>,
    sets: &'a [Vec<String>],
}

#[derive(Serialize)]
struct DiagnoseConfig {
    data: String,
    schema: Schema,
    learners: NuisanceSpecs,
    folds: usize,
    truncation: f64,
    seed: u64,
    crossfit_seed: u64,
    diagnostics: DiagnosticsConfig,
}

#[derive(Serialize)]
struct DiagnoseReport {
    tool: Tool,
    config: DiagnoseConfig,
    report: DiagnosticsReport,
}

fn graph_cmd(cmd: &GraphCommand) -> Result<(), Failure> {
    match cmd {
        GraphCommand::Check { graph, adjust, out } => {
            let swig = input::load_graph(graph)?;
            let set = input::split_list(adjust);
            let refs: Vec<&str> = set.iter().map(String::as_str).collect();
            let verdict = swig.verify_adjustment(&refs)?;
            println!("{verdict}");
            if let Some(path) = out {
                let report = GraphCheckReport { tool: TOOL, graph: graph.display().to_string(), verdict: &verdict };
                input::write_file(path, &input::to_json(&report)?)?;
            }
            if !verdict.sufficient {
                return Err(Failure { code: EXIT_IDENTIFICATION, message: format!("graph: {verdict}") });
            }
            Ok(())
        }
        GraphCommand::Minimal { graph, max_size, out } => {
            let swig = input::load_graph(graph)?;
            let sets = swig.minimal_adjustment_sets(*max_size)?;
            if sets.is_empty() {
                println!("no sufficient adjustment set among observed covariates");
            }
            for s in &sets {
                println!("{{{}}}", s.join(", "));
            }
            if let Some(path) = out {
                let report = GraphMinimalReport {
                    tool: TOOL,
                    graph: graph.display().to_string(),
                    max_size: (*max_size != usize::MAX).then_some(*max_size),
                    sets: &sets,
                };
                input::write_file(path, &input::to_json(&report)?)?;
            }
            Ok(())
        }
    }
}

fn diagnose_cmd(args: &DiagnoseArgs) -> Result<(), Failure> {
    let (schema, ds) = input::load(&args.data)?;
    let specs = input::resolve_learners(&args.learners)?;
    let cf_seed = rng::derive_seed(args.seed, 1);
    let cfg = CrossFitConfig { folds: args.folds, seed: cf_seed, truncation: args.truncation, ..CrossFitConfig::default() };
    let diag = DiagnosticsConfig {
        width: args.width,
        threshold: args.threshold,
        n_perm: args.perms,
        seed: rng::derive_seed(args.seed, 3),
    };
    let fits = learners::crossfit(&ds, &specs, &cfg)?;
    let report = diagnostics::diagnose(&ds, &fits, &diag)?;

    println!("delta_pd = {:.4}{}", report.delta_pd, if report.overdependence_flag { "  (overdependence flag)" } else { "" });
    match report.implication_p_value {
        Some(p) => println!("implication test p = {p:.4} ({} permutations)", diag.n_perm),
        None => println!("implication test skipped: {}", report.implication_note.as_deref().unwrap_or("")),
    }
    println!("{} buckets of width {}", report.buckets.len(), report.width);

    if let Some(path) = &args.buckets {
        input::write_file(path, &diagnostics::buckets_csv(&report.buckets))?;
    }
    if let Some(path) = &args.out {
        let doc = DiagnoseReport {
            tool: TOOL,
            config: DiagnoseConfig {
                data: args.data.data.display().to_string(),
                schema,
                learners: specs,
                folds: args.folds,
                truncation: args.truncation,
                seed: args.seed,
                crossfit_seed: cf_seed,
                diagnostics: diag,
            },
            report,
        };
        input::write_file(path, &input::to_json(&doc)?)?;
    }
    Ok(())
}

fn study_setup(
    setting: u8,
    include_all: bool,
    study: &StudyArgs,
) -> Result<(DgpConfig, Vec<simulation::EstimatorConfig>, HarnessOptions), Failure> {
    let opts = SettingOptions { trees: study.trees, n_boot: study.boot, include_all };
    let (mut dgp, estimators) = simulation::setting(setting, &opts)?;
    if let Some(path) = &study.config {
        dgp = serde_json::from_str(&input::read_text(path)?)
            .map_err(|e| Failure::validation("simulation", format!("DGP config: {e}")))?;
    }
    let harness = HarnessOptions { level: study.level, antithetic: study.antithetic, ..HarnessOptions::default() };
    Ok((dgp, estimators, harness))
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

fn emit<T: Serialize>(
    out: Option<&PathBuf>,
    value: &T,
    csv: impl Fn(&mut Vec<u8>) -> Result<(), simulation::SimulationError>,
) -> Result<(), Failure> {
    let text = match out {
        Some(p) if is_json(p) => input::to_json(value)?,
        _ => {
            let mut buf = Vec::new();
            csv(&mut buf)?;
            String::from_utf8(buf).map_err(|e| Failure::internal("cli", e))?
        }
    };
    match out {
        Some(p) => input::write_file(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn simulate_cmd(args: &SimulateArgs) -> Result<(), Failure> {
    let (dgp, estimators, harness) = study_setup(args.setting, args.all_estimators, &args.study)?;
    let result = simulation::run_replicates_with(&dgp, &estimators, args.study.reps, args.study.seed, &harness)?;
    if args.study.out.is_some() {
        for s in &result.summaries {
            eprintln!(
                "{:<6} bias {:>8.4}  mse {:>7.4}  coverage {:.3}  rejection {:.3}",
                s.label, s.bias, s.mse, s.coverage, s.rejection_rate
            );
        }
    }
    emit(args.study.out.as_ref(), &result, |w| result.write_csv(w))
}

fn parse_numbers<T: std::str::FromStr>(flag: &str, s: &str) -> Result<Vec<T>, Failure> {
    input::split_list(s)
        .iter()
        .map(|t| t.parse::<T>().map_err(|_| Failure::validation("cli", format!("--{flag}: cannot read '{t}'"))))
        .collect()
}

fn power_cmd(args: &PowerArgs) -> Result<(), Failure> {
    let (dgp, estimators, harness) = study_setup(args.setting, true, &args.study)?;
    let methods = Method::parse_list(&args.methods)?;
    let chosen: Vec<_> = estimators.into_iter().filter(|e| methods.contains(&e.method)).collect();
    let effects: Vec<f64> = parse_numbers("effects", &args.effects)?;
    let n_ec: Vec<usize> = parse_numbers("n-ec", &args.n_ec)?;
    let table = simulation::power_curve(&dgp, &effects, &n_ec, &chosen, args.study.reps, args.study.seed, &harness)?;
    emit(args.study.out.as_ref(), &table, |w| table.write_csv(w))
}

fn generate_cmd(args: &GenerateArgs) -> Result<(), Failure> {
    let dgp = match &args.config {
        Some(path) => serde_json::from_str(&input::read_text(path)?)
            .map_err(|e| Failure::validation("simulation", format!("DGP config: {e}")))?,
        None => simulation::setting(args.setting, &SettingOptions::default())?.0,
    };
    let ds = simulation::generate(&DgpConfig { seed: args.seed, ..dgp })?;
    let mut buf = Vec::new();
    extcontrol::write_dataset(&ds, &extcontrol::data::default_schema(&ds), &mut buf)?;
    let text = String::from_utf8(buf).map_err(|e| Failure::internal("cli", e))?;
    match &args.out {
        Some(p) => input::write_file(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("EC_THREADS") else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::validation("cli", format!("EC_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure::internal("cli", e))
}

fn run(cli: &Cli) -> Result<(), Failure> {
    configure_threads()?;
    match &cli.command {
        Command::Analyze(a) => analyze::run(a),
        Command::Graph(g) => graph_cmd(g),
        Command::Diagnose(d) => diagnose_cmd(d),
        Command::Simulate(s) => simulate_cmd(s),
        Command::Power(p) => power_cmd(p),
        Command::Generate(g) => generate_cmd(g),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code as u8)
        }
    }
}
