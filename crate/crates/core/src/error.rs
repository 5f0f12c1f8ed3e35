use std::path::PathBuf;

/// Errors raised by the simulator, the identification pipeline and the file formats.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid motor parameters: {0}")]
    InvalidParams(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error(
        "integration diverged{} at step {step}: state (q={q}, v={v}), q_des={q_des}",
        segment.map(|s| format!(" in segment {s}")).unwrap_or_default()
    )]
    Divergence {
        segment: Option<usize>,
        step: usize,
        q: f64,
        v: f64,
        q_des: f64,
    },

    #[error(
        "fit diverged at epoch {epoch} (armature={armature}, damping={damping}, frictionloss={frictionloss}): {reason}"
    )]
    FitDiverged {
        epoch: usize,
        armature: f64,
        damping: f64,
        frictionloss: f64,
        reason: String,
    },

    #[error("check failed: {0}")]
    CheckFailed(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for numerical blow-ups (as opposed to bad inputs).
    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::Divergence { .. } | Error::FitDiverged { .. })
    }

    /// Process exit status: 2 for bad input, 3 for numerical divergence, 4 for a failed check.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence { .. } | Error::FitDiverged { .. } => 3,
            Error::CheckFailed(_) => 4,
            _ => 2,
        }
    }

    /// Attaches a segment index to a divergence raised inside a segment rollout.
    pub(crate) fn in_segment(self, index: usize) -> Self {
        match self {
            Error::Divergence {
                step, q, v, q_des, ..
            } => Error::Divergence {
                segment: Some(index),
                step,
                q,
                v,
                q_des,
            },
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
