use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("size mismatch: expected {expected}, got {actual}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("DFOV mismatch: expected {expected} cm, got {actual} cm")]
    DfovMismatch { expected: f64, actual: f64 },
    #[error("inverse transform is not real: max |imag| = {max_imag:e}, max |real| = {max_real:e}")]
    NonRealResult { max_imag: f64, max_real: f64 },
    #[error("index ({u}, {v}) out of range for grid of size {size}")]
    IndexOutOfRange { u: usize, v: usize, size: usize },
    #[error("negative frequency {0} lp/cm")]
    NegativeFrequency(f64),
    #[error("input MTF vanishes at {frequency} lp/cm and eps is zero")]
    DivisionBlowup { frequency: f64 },
    #[error("singular system: {0}")]
    SingularSystem(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("activation tape does not match: {0}")]
    TapeMismatch(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("no point response found: peak {peak:e} <= noise floor {floor:e}")]
    NoPeak { peak: f64, floor: f64 },
    #[error("ROI of half-width {half_width} around ({row}, {col}) does not fit in a {size}x{size} image")]
    RoiOutOfBounds {
        row: usize,
        col: usize,
        half_width: usize,
        size: usize,
    },
    #[error("band [{lo}, {hi}] lp/cm is outside the curve support")]
    BandOutOfRange { lo: f64, hi: f64 },
    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
