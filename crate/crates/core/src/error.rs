use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient matches: {found} available, at least {required} required")]
    InsufficientMatches { found: usize, required: usize },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("plane passes through the first camera center (|d| = {0:e})")]
    DegeneratePlane(f64),

    #[error("homographies are not on a common scale (rank-1 residual {residual:e})")]
    ScaleMismatch { residual: f64 },

    #[error("invalid image size {width}x{height}")]
    InvalidSize { width: i64, height: i64 },

    #[error("point maps to the plane at infinity")]
    PointAtInfinity,

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("epipole lies at infinity")]
    EpipoleAtInfinity,

    #[error("displacement grid would hold {anchors} anchors")]
    ExcessiveGrid { anchors: usize },

    #[error("canvas {width}x{height} exceeds {cap}x the reference area")]
    ExcessiveCanvas { width: usize, height: usize, cap: f64 },

    #[error("overlap region is empty")]
    EmptyOverlap,

    #[error("no evaluation points")]
    NoEvalPoints,

    #[error("invalid scene: {0}")]
    InvalidSpec(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("coordinate out of bounds: {0}")]
    Bounds(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        if err.is_io() {
            Error::Io(err.into())
        } else {
            Error::Parse(err.to_string())
        }
    }
}
