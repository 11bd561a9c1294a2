use std::fmt;

use extcontrol::diagnostics::DiagnosticsError;
use extcontrol::estimators::EstimatorError;
use extcontrol::inference::InferenceError;
use extcontrol::learners::LearnerError;
use extcontrol::simulation::SimulationError;
use extcontrol::Error;

pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_IDENTIFICATION: i32 = 3;

/// A failed command: message for stderr plus the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn validation(module: &str, msg: impl fmt::Display) -> Self {
        Failure { code: EXIT_VALIDATION, message: format!("{module}: {msg}") }
    }

    pub fn internal(module: &str, msg: impl fmt::Display) -> Self {
        Failure { code: EXIT_INTERNAL, message: format!("{module}: {msg}") }
    }

    pub fn io(path: &str, err: std::io::Error) -> Self {
        Failure::validation("cli", format!("{path}: {err}"))
    }
}

fn learner_code(e: &LearnerError) -> i32 {
    match e {
        LearnerError::InvalidSpec(_) | LearnerError::InsufficientData(_) => EXIT_VALIDATION,
        _ => EXIT_INTERNAL,
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        let code = match &err {
            Error::Data(_) | Error::Graph(_) => EXIT_VALIDATION,
            Error::Estimator(EstimatorError::UnknownMethod(_)) => EXIT_VALIDATION,
            Error::Estimator(_) => EXIT_INTERNAL,
            Error::Learner(e) => learner_code(e),
            Error::Inference(e) => match e {
                InferenceError::Learner(l) => learner_code(l),
                InferenceError::Estimator(_) | InferenceError::ReplicateFailed { .. } => EXIT_INTERNAL,
                _ => EXIT_VALIDATION,
            },
            Error::Diagnostics(e) => match e {
                DiagnosticsError::Width(_) => EXIT_VALIDATION,
                _ => EXIT_INTERNAL,
            },
            Error::Simulation(e) => match e {
                SimulationError::Config(_) | SimulationError::Data(_) => EXIT_VALIDATION,
                _ => EXIT_INTERNAL,
            },
        };
        Failure { code, message: err.to_string() }
    }
}

macro_rules! via_crate_error {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::from(Error::from(e))
            }
        }
    )*};
}

via_crate_error!(
    extcontrol::data::DataError,
    extcontrol::graph::GraphError,
    EstimatorError,
    LearnerError,
    InferenceError,
    DiagnosticsError,
    SimulationError
);
