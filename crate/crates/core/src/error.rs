use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: missing mandatory column `{column}`")]
    MissingColumn { path: PathBuf, column: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: duplicate patient_id `{patient_id}`")]
    DuplicatePatient {
        path: PathBuf,
        line: usize,
        patient_id: String,
    },

    #[error("{path}:{line}: unknown patient_id `{patient_id}`")]
    UnknownPatient {
        path: PathBuf,
        line: usize,
        patient_id: String,
    },

    #[error("{path}:{line}: malformed rule: {message}")]
    MalformedRule {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("patient `{0}` has encounters or a death date but no diagnosis date")]
    MissingDiagnosisDate(String),

    #[error("indication-filtered counting requires an indication map")]
    MissingIndications,

    #[error("tensor has no nonzero entries")]
    EmptyTensor,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("index ({i}, {j}, {k}) out of range for dims {dims:?}")]
    IndexOutOfRange {
        i: usize,
        j: usize,
        k: usize,
        dims: [usize; 3],
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("objective became non-finite at outer iteration {iteration}")]
    Diverged {
        iteration: usize,
        trace: Box<crate::solver::FitTrace>,
    },

    #[error("labels contain a single class")]
    SingleClass,

    #[error("cross-validation fold {fold} (repetition {rep}) contains a single class")]
    DegenerateFold { rep: usize, fold: usize },

    #[error("full model log-likelihood {full} is below reduced model {reduced}")]
    LikelihoodOrder { full: f64, reduced: f64 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

/// Coarse failure classes, used by the command line front end for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Input,
    Numerical,
    Degenerate,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::NonFinite(_) | Error::Diverged { .. } | Error::LikelihoodOrder { .. } => ErrorClass::Numerical,
            Error::SingleClass | Error::DegenerateFold { .. } => ErrorClass::Degenerate,
            Error::Stage { source, .. } => source.class(),
            _ => ErrorClass::Input,
        }
    }
}
