use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("bilinear interpolation of a mask cannot produce a binary result; use nearest mode")]
    BilinearOnMask,
    #[error("crop window {window_mm} mm exceeds image extent {extent_mm} mm")]
    CropTooLarge { window_mm: f64, extent_mm: f64 },
    #[error("pad size {size_mm} mm is smaller than image extent {extent_mm} mm")]
    PadTooSmall { size_mm: f64, extent_mm: f64 },
    #[error("histogram standard is not monotone nondecreasing within [0,1]")]
    NonMonotoneStandard,
    #[error("singular thin-plate spline system (degenerate control grid)")]
    SingularTps,
    #[error("invalid transform: {0}")]
    InvalidTransform(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid network configuration: {0}")]
    InvalidConfig(String),
    #[error("input image {width}x{height} is smaller than the network minimum {min}x{min}")]
    InputTooSmall { width: usize, height: usize, min: usize },
    #[error("backward called without a matching forward cache: {0}")]
    StaleCache(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("missing data: {0}")]
    MissingData(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("phantom generation failed: {0}")]
    Phantom(String),
    #[error("checkpoint format: {0}")]
    Checkpoint(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("image codec: {0}")]
    Codec(#[from] image::ImageError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
