use std::path::PathBuf;

use crate::grid::GaussianParams;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("position out of range: lat {lat_deg}, lon {lon_deg}")]
    InvalidPosition { lat_deg: f64, lon_deg: f64 },

    #[error("local offset of {magnitude_m} m is outside the local tangent plane bound")]
    OffsetTooLarge { magnitude_m: f64 },

    #[error("origin latitude {lat_deg} is too close to a pole for a local offset")]
    PolarOrigin { lat_deg: f64 },

    #[error("noise target must be finite and non-negative, got {0}")]
    InvalidNoise(f64),

    #[error("{}: line {line}, field `{field}`: {message}", path_label(.path))]
    Parse {
        path: Option<PathBuf>,
        line: u64,
        field: String,
        message: String,
    },

    #[error("sample {sample_id}: {message}")]
    InvalidSample { sample_id: u64, message: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),

    #[error("sample {sample_id} has no transmitter-labelled detection")]
    MissingTransmitter { sample_id: u64 },

    #[error("sample {sample_id} has no {what} position")]
    MissingPosition { sample_id: u64, what: &'static str },

    #[error("codebook needs at least as many beams as antennas (M = {antennas}, Q = {beams})")]
    InvalidCodebook { antennas: usize, beams: usize },

    #[error("azimuth {azimuth_deg}° is behind the array")]
    BehindArray { azimuth_deg: f64 },

    #[error("target at {offset_deg}° off boresight is outside the {hfov_deg}° field of view")]
    OutsideFrustum { offset_deg: f64, hfov_deg: f64 },

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("normalized x-center {0} is outside [0, 1]")]
    XCenterOutOfRange(f64),

    #[error("grid count must be at least 1")]
    InvalidGridCount,

    #[error("beam index {beam} out of range for a codebook of {beams}")]
    BeamOutOfRange { beam: usize, beams: usize },

    #[error("histogram is degenerate: {0}")]
    DegenerateHistogram(String),

    #[error("Gaussian fit did not converge after {iterations} iterations")]
    FitDidNotConverge {
        iterations: usize,
        last: Box<GaussianParams>,
    },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid training configuration: {0}")]
    InvalidTrainConfig(String),

    #[error("training diverged at epoch {epoch} (loss = {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("invalid weight file: {0}")]
    WeightFile(String),

    #[error("detection list is empty")]
    NoDetections,

    #[error("lookup table has no populated grid")]
    EmptyLookupTable,

    #[error("{0}")]
    Invalid(String),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{}: {source}", .path.display())]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
}

impl Error {
    /// True for failures caused by bad input or configuration rather than by
    /// the environment or a numerical breakdown.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io { .. } | Error::Diverged { .. } | Error::FitDidNotConverge { .. }
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

fn path_label(path: &Option<PathBuf>) -> String {
    match path {
        Some(p) => p.display().to_string(),
        None => "<input>".to_string(),
    }
}
