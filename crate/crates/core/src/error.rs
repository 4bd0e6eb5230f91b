use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("scene must contain at least one gaussian")]
    EmptyScene,
    #[error("bounds must satisfy min < max componentwise")]
    InvalidBounds,
    #[error("scene stream has a malformed header")]
    MalformedScene,
    #[error("scene stream truncated at byte {0}")]
    TruncatedScene(usize),
    #[error("scene invariant violated: {0}")]
    InvariantViolation(String),

    #[error("invalid camera intrinsics")]
    InvalidIntrinsics,
    #[error("invalid pose")]
    InvalidPose,
    #[error("trajectory needs rows >= 1, steps >= 2 and a positive standoff")]
    InvalidTrajectory,

    #[error("image of {0} pixels exceeds the render limit")]
    ImageTooLarge(usize),
    #[error("image dimensions do not match: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("value outside the function domain: {0}")]
    DomainError(String),
    #[error("only {found} keypoint matches, need {required}")]
    InsufficientMatches { found: usize, required: usize },

    #[error("codec stream malformed at byte {offset}: {reason}")]
    CodecParse { offset: usize, reason: &'static str },
    #[error("codec input invalid: {0}")]
    CodecInput(String),

    #[error("unsupported packet magic or version")]
    UnsupportedPacket,
    #[error("packet checksum mismatch")]
    CorruptPacket,
    #[error("packet truncated")]
    TruncatedPacket,
    #[error("residual payload too large for the packet length field")]
    PayloadTooLarge,

    #[error("invalid image file: {0}")]
    ImageFormat(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
