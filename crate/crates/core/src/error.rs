use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("integration diverged at t = {time}")]
    IntegrationDiverged { time: f64 },

    #[error("atom number drifted by {relative_drift:e} (relative) at t = {time}")]
    ConservationViolated { time: f64, relative_drift: f64 },

    #[error("feedback parameter F = {f} is below the critical value F_c = {f_c}")]
    BelowCritical { f: f64, f_c: f64 },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
