use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An input lies outside the domain an operation accepts.
    #[error("domain error: {0}")]
    Domain(String),

    /// The closed loop blew up; carries the simulation time of the first bad sample.
    #[error("simulation diverged at t = {time:.6} s: {reason}")]
    Diverged { time: f64, reason: String },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
