use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("zero embedding vector at row {0}")]
    ZeroVector(usize),

    #[error("no clips: {0}")]
    ZeroClips(String),

    #[error("annotation overlap: {0}")]
    Overlap(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("mask length mismatch: expected {expected} frames, file has {got}")]
    LengthMismatch { expected: u32, got: u32 },

    #[error("all clips removed for video {video} at tau {tau}")]
    AllClipsRemoved { video: String, tau: f64 },

    #[error("k too large: k={k} exceeds {n} points")]
    KTooLarge { k: usize, n: usize },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("instance too large for brute force: {0}")]
    TooLarge(String),

    #[error("could not place separated centers: {0}")]
    InfeasibleSeparation(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// Process exit code for the CLI: 2 config, 4 numerical, 3 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Numerical(_) => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
