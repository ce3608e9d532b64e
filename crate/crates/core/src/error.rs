use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point is behind the camera (camera-frame z = {0})")]
    BehindCamera(f64),
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("invalid belt configuration: {0}")]
    InvalidBelt(String),
    #[error("capture history holds {have} timesteps, window needs {need}")]
    InsufficientHistory { have: usize, need: usize },
    #[error("capture timestamps are not uniform multiples of the timestep: {0}")]
    NonUniformTimestamps(String),
    #[error("execution time precedes detection time by {0} s")]
    NegativeDelay(f64),
    #[error("object at {position} mm is already past the suction zone")]
    AlreadyPassed { position: f64 },
    #[error("belt is stopped; object upstream of the suction zone never arrives")]
    BeltStopped,
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid asset: {0}")]
    InvalidAsset(String),
    #[error("unknown asset id {0:?}")]
    UnknownAsset(String),
    #[error("invalid randomization spec: {0}")]
    InvalidRandomization(String),
    #[error("could not place object {index} after {attempts} attempts")]
    PlacementFailure { index: usize, attempts: usize },
    #[error("score component out of range: {0}")]
    OutOfRange(String),
    #[error("raster dimensions {got:?} do not match camera {expected:?}")]
    DimensionMismatch { expected: (usize, usize), got: (usize, usize) },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("volume has no observed zero crossing")]
    EmptySurface,
    #[error("mesh of instance {0} is not watertight; inside/outside parity is ambiguous")]
    NonWatertight(u32),
    #[error("grid specs differ")]
    SpecMismatch,
    #[error("raster sizes differ: {0:?} vs {1:?}")]
    RasterMismatch((usize, usize), (usize, usize)),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("view has no recorded {0} raster")]
    MissingRaster(&'static str),
    #[error("{}: bad magic {found:?}, expected {expected:?}", .path.display())]
    BadMagic { path: PathBuf, expected: [u8; 4], found: [u8; 4] },
    #[error("{}: truncated file ({missing} bytes short)", .path.display())]
    TruncatedFile { path: PathBuf, missing: usize },
    #[error("{path}: trailing bytes after payload", path = .0.display())]
    TrailingBytes(PathBuf),
    #[error("manifest version {found:?} is not supported (expected {expected:?})")]
    SchemaVersionMismatch { expected: String, found: String },
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("referenced file does not exist: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("parse error in {what}: {msg}")]
    Parse { what: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
