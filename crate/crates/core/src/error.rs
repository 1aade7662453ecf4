use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("no feasible boundary correspondence: {0}")]
    Infeasible(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Error {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// True for errors caused by bad user input rather than a failing stage.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::InvalidInput(_) | Error::Format(_) | Error::Io(_) | Error::Json(_) => true,
            Error::Stage { source, .. } => source.is_input_error(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Attach a stage name to any error produced inside that stage.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
