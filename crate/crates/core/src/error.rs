use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid box: width {w} and height {h} must be finite and positive")]
    InvalidBox { w: f64, h: f64 },
    #[error("detection score {0} is not finite")]
    InvalidScore(f64),
    #[error("IoU threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {field}: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("activation cache does not belong to the current network parameters")]
    StaleCache,
    #[error("no annotations: recall is undefined")]
    NoAnnotations,
    #[error("non-finite {quantity} ({value}) at iteration {iteration}, frame {frame_id}")]
    NonFinite {
        quantity: &'static str,
        value: f64,
        iteration: usize,
        frame_id: String,
    },
}

impl Error {
    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Config {
            field,
            reason: reason.into(),
        }
    }
}
