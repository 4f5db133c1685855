use thiserror::Error;

/// Errors raised by the numeric kernels, solvers and file formats.
#[derive(Debug, Error)]
pub enum SbssError {
    #[error("empty input")]
    EmptyInput,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("negative threshold {value} at index {index}")]
    NegativeThreshold { index: usize, value: f64 },

    #[error("rank deficient; supply ridge")]
    RankDeficient,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("image {width}x{height} too small for {n_scales} starlet scales")]
    ImageTooSmall {
        width: usize,
        height: usize,
        n_scales: usize,
    },

    #[error("separation collapsed")]
    SeparationCollapsed,

    #[error("zero mixing iterate")]
    ZeroMixing,

    #[error("zero source iterate")]
    ZeroSources,

    #[error("use Hungarian variant: {0} sources exceeds exhaustive alignment limit of 8")]
    TooManySources(usize),

    #[error("{stage} failed at iteration {iteration}: {source}")]
    Iteration {
        stage: Stage,
        iteration: usize,
        #[source]
        source: Box<SbssError>,
    },

    #[error("{stage} stage failed: {source}")]
    InStage {
        stage: Stage,
        #[source]
        source: Box<SbssError>,
    },

    #[error("malformed matrix file: {0}")]
    Format(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SbssError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        SbssError::ShapeMismatch(msg.into())
    }

    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        SbssError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn at_iteration(self, stage: Stage, iteration: usize) -> Self {
        SbssError::Iteration {
            stage,
            iteration,
            source: Box::new(self),
        }
    }

    pub(crate) fn in_stage(self, stage: Stage) -> Self {
        SbssError::InStage {
            stage,
            source: Box::new(self),
        }
    }

    /// True for failures that come from the solvers rather than from
    /// malformed inputs or the filesystem.
    pub fn is_solver_failure(&self) -> bool {
        match self {
            SbssError::Io(_) | SbssError::Format(_) | SbssError::Config { .. } => false,
            SbssError::Iteration { .. } | SbssError::InStage { .. } => true,
            SbssError::SeparationCollapsed
            | SbssError::ZeroMixing
            | SbssError::ZeroSources
            | SbssError::RankDeficient => true,
            _ => false,
        }
    }
}

/// Solver stage tag carried by errors and objective traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Warmup,
    Refinement,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stage::Warmup => f.write_str("warm-up (GMCA)"),
            Stage::Refinement => f.write_str("refinement (PALM)"),
        }
    }
}

pub type Result<T> = std::result::Result<T, SbssError>;
