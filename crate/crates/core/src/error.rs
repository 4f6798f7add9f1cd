use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    /// An invalid hyperparameter; `key` names the offending setting.
    #[error("config error in `{key}`: {msg}")]
    Config { key: &'static str, msg: String },

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("training diverged at batch {batch}: loss {loss}")]
    Divergence { batch: usize, loss: f64 },
}

impl Error {
    pub(crate) fn config(key: &'static str, msg: impl Into<String>) -> Self {
        Error::Config { key, msg: msg.into() }
    }
}

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Shape(alloc::format!($($arg)*))
    };
}
pub(crate) use shape_err;
