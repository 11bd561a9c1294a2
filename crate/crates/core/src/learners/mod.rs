//! Nuisance-function learners behind a common fit/predict interface, and
//! cross-fitting of the outcome regressions `m_a(x)`, treatment propensity
//! `pi_a(x)`, study propensity `pi_d(x)` and variance ratio `r(x)`.

mod crossfit;
mod forest;
mod linear;
mod logistic;

pub use crossfit::{crossfit, estimate_variance_ratio, CrossFitConfig, NuisanceFits, NuisanceSpecs, VarianceMode, VarianceSpec};
pub use forest::{Forest, ForestParams};
pub use linear::LinearModel;
pub use logistic::LogisticModel;
pub(crate) use crossfit::{crossfit_with, Which};
pub(crate) use logistic::{expit, logit};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("design matrix is rank deficient")]
    Rank,
    #[error("degenerate target: {0}")]
    DegenerateTarget(String),
    #[error("invalid learner spec: {0}")]
    InvalidSpec(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("fold assignment degenerate after {attempts} attempts: {reason}")]
    FoldDegenerate { attempts: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Linear,
    Logistic,
    RandomForest,
    Constant,
}

/// Whether a learner is fitted to a real-valued or a 0/1 target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Regression,
    Classification,
}

/// Learner family plus hyperparameters. Serializes flat, e.g.
/// `{"kind":"random_forest","trees":200,"min_leaf":5}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trees: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_leaf: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mtry: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ridge: Option<f64>,
}

impl LearnerSpec {
    pub fn of(kind: LearnerKind) -> Self {
        LearnerSpec { kind, trees: None, min_leaf: None, mtry: None, ridge: None }
    }

    pub fn linear() -> Self {
        Self::of(LearnerKind::Linear)
    }

    pub fn logistic() -> Self {
        Self::of(LearnerKind::Logistic)
    }

    pub fn constant() -> Self {
        Self::of(LearnerKind::Constant)
    }

    pub fn random_forest() -> Self {
        Self::of(LearnerKind::RandomForest)
    }

    pub fn with_trees(mut self, trees: usize) -> Self {
        self.trees = Some(trees);
        self
    }

    pub fn with_min_leaf(mut self, min_leaf: usize) -> Self {
        self.min_leaf = Some(min_leaf);
        self
    }

    pub fn with_mtry(mut self, mtry: usize) -> Self {
        self.mtry = Some(mtry);
        self
    }

    pub fn with_ridge(mut self, ridge: f64) -> Self {
        self.ridge = Some(ridge);
        self
    }

    /// Parametric families, for which the bootstrap is justified.
    pub fn is_parametric(&self) -> bool {
        matches!(self.kind, LearnerKind::Linear | LearnerKind::Logistic | LearnerKind::Constant)
    }

    fn check_task(&self, task: Task) -> Result<(), LearnerError> {
        match (self.kind, task) {
            (LearnerKind::Logistic, Task::Regression) => {
                Err(LearnerError::InvalidSpec("logistic learner requires a binary target".into()))
            }
            (LearnerKind::Linear, Task::Classification) => {
                Err(LearnerError::InvalidSpec("linear learner requires a real-valued target".into()))
            }
            _ => Ok(()),
        }
    }
}

/// A fitted nuisance model.
#[derive(Debug, Clone)]
pub enum FittedModel {
    Linear(LinearModel),
    Logistic(LogisticModel),
    Forest(Forest),
    Constant(f64),
}

impl FittedModel {
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        match self {
            FittedModel::Linear(m) => m.predict(x),
            FittedModel::Logistic(m) => m.predict(x),
            FittedModel::Forest(m) => m.predict(x),
            FittedModel::Constant(c) => vec![*c; x.nrows()],
        }
    }
}

fn weighted_mean(y: &[f64], w: Option<&[f64]>) -> f64 {
    match w {
        None => y.iter().sum::<f64>() / y.len() as f64,
        Some(w) => {
            let sw: f64 = w.iter().sum();
            y.iter().zip(w).map(|(y, w)| y * w).sum::<f64>() / sw
        }
    }
}

/// Fits `spec` to `(x, y)`. `seed` only matters for random forests.
pub fn fit(
    spec: &LearnerSpec,
    task: Task,
    x: &DMatrix<f64>,
    y: &[f64],
    weights: Option<&[f64]>,
    seed: u64,
) -> Result<FittedModel, LearnerError> {
    spec.check_task(task)?;
    let n = y.len();
    if x.nrows() != n {
        return Err(LearnerError::InvalidSpec(format!("{} feature rows for {} targets", x.nrows(), n)));
    }
    if let Some(w) = weights {
        if w.len() != n || w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(LearnerError::InvalidSpec("weights must be finite, non-negative and one per row".into()));
        }
        if w.iter().sum::<f64>() <= 0.0 {
            return Err(LearnerError::InsufficientData("all weights are zero".into()));
        }
    }
    if n == 0 {
        return Err(LearnerError::InsufficientData("empty training set".into()));
    }
    if task == Task::Classification && y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(LearnerError::InvalidSpec("classification target must be coded 0/1".into()));
    }
    match spec.kind {
        LearnerKind::Constant => Ok(FittedModel::Constant(weighted_mean(y, weights))),
        LearnerKind::Linear => {
            if n < 2 {
                return Err(LearnerError::InsufficientData("linear fit needs at least two rows".into()));
            }
            LinearModel::fit(x, y, weights, spec.ridge.unwrap_or(0.0)).map(FittedModel::Linear)
        }
        LearnerKind::Logistic => LogisticModel::fit(x, y, weights, spec.ridge.unwrap_or(0.0)).map(FittedModel::Logistic),
        LearnerKind::RandomForest => {
            let params = ForestParams::from_spec(spec, task, x.ncols());
            if n < params.min_leaf {
                return Err(LearnerError::InsufficientData(format!(
                    "forest needs at least min_leaf = {} rows, got {n}",
                    params.min_leaf
                )));
            }
            Ok(FittedModel::Forest(Forest::fit(x, y, weights, &params, seed)))
        }
    }
}
