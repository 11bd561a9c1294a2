//! Average treatment effect estimation for randomized trials whose control
//! arm is augmented with external (non-randomized) controls.
//!
//! The crate is organised around the analysis pipeline for such hybrid
//! trials:
//!
//! * [`graph`] checks whether a candidate adjustment set makes the internal
//!   and external control outcomes mean-exchangeable, using d-separation on a
//!   selection diagram after node-splitting the treatment.
//! * [`data`] holds the observed data `(Y, X, A, D)` and enforces its
//!   structural constraints.
//! * [`learners`] fits and cross-fits the nuisance functions.
//! * [`estimators`] computes the RCT-only, outcome-model, weighting,
//!   AIPW and TMLE estimates together with efficient influence curve values.
//! * [`inference`] turns estimates into intervals and tests.
//! * [`diagnostics`] compares internal and external controls empirically.
//! * [`simulation`] generates synthetic hybrid trials and runs Monte Carlo
//!   studies over them.

pub mod data;
pub mod diagnostics;
pub mod estimators;
pub mod graph;
pub mod inference;
pub mod learners;
pub mod rng;
pub mod simulation;
pub mod stats;

pub use nalgebra::DMatrix;
pub use data::{load_dataset, split_by_source, write_dataset, Schema, TrialDataset, ValidationReport};
pub use diagnostics::{DiagnosticsConfig, DiagnosticsReport};
pub use estimators::{Method, TauEstimate};
pub use graph::{AdjustmentVerdict, NodeKind, SelectionSwig};
pub use inference::{InferenceMethod, InferenceResult};
pub use learners::{CrossFitConfig, LearnerKind, LearnerSpec, NuisanceFits, NuisanceSpecs};
pub use simulation::{DgpConfig, SimulationResult};

use thiserror::Error;

/// Crate-wide error, one variant per module.
#[derive(Debug, Error)]
pub enum Error {
    #[error("data_model: {0}")]
    Data(#[from] data::DataError),
    #[error("learners: {0}")]
    Learner(#[from] learners::LearnerError),
    #[error("estimators: {0}")]
    Estimator(#[from] estimators::EstimatorError),
    #[error("inference: {0}")]
    Inference(#[from] inference::InferenceError),
    #[error("graph: {0}")]
    Graph(#[from] graph::GraphError),
    #[error("diagnostics: {0}")]
    Diagnostics(#[from] diagnostics::DiagnosticsError),
    #[error("simulation: {0}")]
    Simulation(#[from] simulation::SimulationError),
}

impl Error {
    /// Name of the module the error originated in.
    pub fn module(&self) -> &'static str {
        match self {
            Error::Data(_) => "data_model",
            Error::Learner(_) => "learners",
            Error::Estimator(_) => "estimators",
            Error::Inference(_) => "inference",
            Error::Graph(_) => "graph",
            Error::Diagnostics(_) => "diagnostics",
            Error::Simulation(_) => "simulation",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
