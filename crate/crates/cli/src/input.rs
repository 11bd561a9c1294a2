use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use extcontrol::graph::SelectionSwig;
use extcontrol::learners::{LearnerSpec, NuisanceSpecs};
use extcontrol::{load_dataset, Schema, TrialDataset};
use serde::Serialize;

use crate::failure::Failure;

/// Input file and column roles.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// JSON schema: {"outcome":"y","treatment":"a","source":"d","covariates":["x1"]}.
    #[arg(long, conflicts_with_all = ["outcome", "treatment", "source", "covariates"])]
    pub schema: Option<PathBuf>,
    #[arg(long, default_value = "y")]
    pub outcome: String,
    #[arg(long, default_value = "a")]
    pub treatment: String,
    #[arg(long, default_value = "d")]
    pub source: String,
    /// Comma-separated; defaults to every other column.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    /// Design value of Pr(A = 1 | D = 1), if known.
    #[arg(long)]
    pub treat_prob: Option<f64>,
}

/// Nuisance learner selection.
#[derive(Debug, Clone, Args)]
pub struct LearnerArgs {
    /// `linear`, `forest`, or a NuisanceSpecs JSON document (inline or a file path).
    #[arg(long, default_value = "linear")]
    pub learners: String,
    /// Trees per forest for the `forest` preset.
    #[arg(long, default_value_t = 200)]
    pub trees: usize,
}

pub fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::io(&path.display().to_string(), e))
}

fn csv_header(path: &Path) -> Result<Vec<String>, Failure> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Failure::validation("data_model", e))?;
    let header = rdr.headers().map_err(|e| Failure::validation("data_model", e))?;
    Ok(header.iter().map(|h| h.trim().to_string()).collect())
}

pub fn resolve_schema(args: &DataArgs) -> Result<Schema, Failure> {
    let mut schema = match &args.schema {
        Some(path) => Schema::from_json(&read_text(path)?)?,
        None => {
            let covariates = match &args.covariates {
                Some(c) => c.iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
                None => {
                    let roles = [&args.outcome, &args.treatment, &args.source];
                    csv_header(&args.data)?.into_iter().filter(|h| !roles.contains(&h)).collect()
                }
            };
            Schema {
                outcome: args.outcome.clone(),
                treatment: args.treatment.clone(),
                source: args.source.clone(),
                covariates,
                known_treat_prob: None,
            }
        }
    };
    if args.treat_prob.is_some() {
        schema.known_treat_prob = args.treat_prob;
    }
    Ok(schema)
}

pub fn load(args: &DataArgs) -> Result<(Schema, TrialDataset), Failure> {
    let schema = resolve_schema(args)?;
    let ds = load_dataset(&args.data, &schema).map_err(|e| match e {
        extcontrol::data::DataError::Io(io) => Failure::io(&args.data.display().to_string(), io),
        other => Failure::from(other),
    })?;
    Ok((schema, ds))
}

pub fn resolve_learners(args: &LearnerArgs) -> Result<NuisanceSpecs, Failure> {
    match args.learners.as_str() {
        "linear" => Ok(NuisanceSpecs::default()),
        "forest" => {
            let forest = LearnerSpec::random_forest().with_trees(args.trees);
            Ok(NuisanceSpecs { m0: forest.clone(), m1: forest.clone(), pd: forest, ..NuisanceSpecs::default() })
        }
        other => {
            let text = if other.trim_start().starts_with('{') { other.to_string() } else { read_text(Path::new(other))? };
            serde_json::from_str(&text).map_err(|e| Failure::validation("learners", format!("learner specs: {e}")))
        }
    }
}

pub fn load_graph(path: &Path) -> Result<SelectionSwig, Failure> {
    Ok(SelectionSwig::from_json(&read_text(path)?)?)
}

pub fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect()
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String, Failure> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Failure::internal("cli", e))?;
    s.push('\n');
    Ok(s)
}

pub fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::io(&path.display().to_string(), e))
}
