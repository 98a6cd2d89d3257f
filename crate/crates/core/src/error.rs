use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: non-finite value")]
    NonFinite { op: &'static str },
    #[error("max pool group {group} has no valid rows")]
    EmptyGroup { group: usize },
    #[error("backward requires a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("function is not deterministic: two forward passes differ")]
    NonDeterministic,
    #[error("degenerate quaternion with norm {norm:e}")]
    DegenerateQuaternion { norm: f64 },
    #[error("log-rotation norm {norm} exceeds pi")]
    RotationOutOfRange { norm: f64 },
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("no points within radius of center {center}")]
    EmptyNeighborhood { center: usize },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{}: parse error at byte {offset}: {msg}", path.display())]
    CloudParse {
        path: PathBuf,
        offset: u64,
        msg: String,
    },
    #[error("{}:{line}: {msg}", path.display())]
    Manifest {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("pose at {position:?} is outside the free space of the room")]
    PoseOutsideRoom { position: [f64; 3] },
    #[error("no gradient for parameter {name}")]
    MissingGradient { name: String },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("split {0} is empty")]
    EmptySplit(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    /// True for failures caused by the numbers themselves rather than by
    /// inputs or I/O.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::NonFiniteLoss { .. } | Error::NonDeterministic
        )
    }
}
