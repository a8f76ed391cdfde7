use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("transfer function is singular at omega = {omega} (|Delta| = {modulus:e})")]
    SingularTransfer { omega: f64, modulus: f64 },

    #[error("contour too coarse: refinement exceeded {0} samples")]
    ContourTooCoarse(usize),

    #[error("root on contour after {0} nudges")]
    RootOnContour(usize),

    #[error("Newton refinement did not converge from seed {re}{im:+}i")]
    Refine { re: f64, im: f64 },

    #[error("certificate unavailable: {0}")]
    CertificateUnavailable(String),

    #[error("mode {k}: {source}")]
    Mode { k: usize, source: Box<Error> },

    #[error("step-singular at t = {t}: {reason}")]
    StepSingular { t: f64, reason: String },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("tail bound unavailable: {0}")]
    TailBoundUnavailable(String),

    #[error("insufficient length: {0}")]
    InsufficientLength(String),

    #[error("Picard iteration did not converge in window starting at t = {t0} (mode {k})")]
    PicardNonConvergence { k: usize, t0: f64 },
}

impl Error {
    pub(crate) fn in_mode(self, k: usize) -> Self {
        Error::Mode {
            k,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
