use thiserror::Error;

/// Workspace-wide error type. Variants map to the failure classes the CLI
/// distinguishes: malformed configuration, missing input files, and runtime
/// failures inside a pipeline stage.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Unphysical state or a failed integration step.
    #[error("plant dynamics: {0}")]
    Dynamics(String),

    /// A root search was handed an interval with no sign change.
    #[error("bisection bracket has no sign change ({what}): residual {f_lo:+e} at lower end, {f_hi:+e} at upper end")]
    Bracket { f_lo: f64, f_hi: f64, what: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("model file: {0}")]
    Model(String),

    #[error("training: {0}")]
    Training(String),

    #[error("solver: {0}")]
    Solver(String),

    #[error("malformed config {path}: {detail}")]
    Config { path: String, detail: String },

    #[error("missing file: {path}")]
    MissingFile { path: String },

    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wraps an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
