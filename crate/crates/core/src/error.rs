use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },

    #[error("depth {z} m outside the quantization range [{z_min}, {z_max})")]
    DepthOutOfRange { z: f64, z_min: f64, z_max: f64 },

    #[error("joint {joint} cannot be encoded: {reason}")]
    JointOutOfRange { joint: usize, reason: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: parse error at byte {offset}: {message}", path.display())]
    Parse {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("augmentation moved {outside} of {total} joints out of view")]
    AugmentationRejected { outside: usize, total: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("no jointly valid joints to evaluate")]
    EmptyEvaluation,

    #[error("non-finite loss at epoch {epoch}, batch {batch} (rpe = {rpe}, rpf = {rpf})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        rpe: f64,
        rpf: f64,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
