use thiserror::Error;

/// Errors produced by the registration pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("rays are parallel; no unique closest point")]
    ParallelRays,
    #[error("keypoint {keypoint} has clicks in {views} view(s); at least 2 are required")]
    InsufficientViews { keypoint: usize, views: usize },
    #[error("need at least {required} keypoints, got {got}")]
    InsufficientKeypoints { required: usize, got: usize },
    #[error("keypoint lists differ in length ({a} vs {b})")]
    KeypointCountMismatch { a: usize, b: usize },
    #[error("view index {0} out of range")]
    InvalidView(usize),
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("density field returned a non-finite value at {0:?}")]
    NonFiniteDensity([f64; 3]),
    #[error("scene has no cameras")]
    NoCameras,
    #[error("prediction must be positive, got {0}")]
    NonPositivePrediction(f64),
    #[error("field is degenerate (constant); cannot distill")]
    DegenerateField,
    #[error("sample set is empty")]
    EmptySampleSet,
    #[error("keypoint list is empty")]
    EmptyKeypoints,
    #[error("non-finite loss or gradient at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("vertex list is empty")]
    EmptyMesh,
    #[error("vertex set has zero diameter")]
    ZeroDiameter,
    #[error("invalid transform: {0}")]
    InvalidTransform(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
