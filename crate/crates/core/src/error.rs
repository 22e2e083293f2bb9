use alloc::string::String;

/// Errors raised by the pure core. Backend failures never originate here;
/// they travel through the `Error` associated types of [`crate::NliJudge`]
/// and [`crate::Embedder`].
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("probability {value} is outside [0, 1] ({context})")]
    ProbabilityOutOfRange { value: f64, context: &'static str },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid example `{id}`: {reason}")]
    InvalidExample { id: String, reason: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub fn check_probability(value: f64, context: &'static str) -> Result<f64> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(Error::ProbabilityOutOfRange { value, context })
    }
}
