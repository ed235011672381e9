use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid {what}: {detail}")]
    Invalid { what: &'static str, detail: String },

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error(
        "logging probability is zero for company {company}, seeker {seeker} \
         while the target probability is positive (common support violated)"
    )]
    ZeroPropensity { company: usize, seeker: usize },

    #[error("company {0} has no logged propensity and the model has no estimated logging policy")]
    MissingPropensity(usize),

    #[error("estimator requires model component `{0}`")]
    MissingModel(&'static str),

    #[error(
        "second-stage model overestimates at company {company}, seeker {seeker}: \
         q_hat_r = {q_hat_r} > q_r = {q_r}"
    )]
    Overestimation {
        company: usize,
        seeker: usize,
        q_hat_r: f64,
        q_r: f64,
    },

    #[error("non-finite gradient at iteration {0}")]
    NonFiniteGradient(usize),

    #[error("enumeration over {0} joint outcomes exceeds the limit")]
    EnumerationTooLarge(u128),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(what: &'static str, detail: impl Into<String>) -> Error {
    Error::Invalid {
        what,
        detail: detail.into(),
    }
}
