use thiserror::Error;

/// Errors raised by the solvers, evaluators and configuration layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain violation: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid setting: {0}")]
    InvalidSetting(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("wealth {wealth} leaves the grid range [{lo}, {hi}]")]
    OutOfGrid { wealth: f64, lo: f64, hi: f64 },

    #[error("optimum not bracketed: {0}")]
    NotBracketed(String),

    #[error("{what} did not converge (residual {residual:e})")]
    NonConvergence { what: &'static str, residual: f64 },

    #[error("objective has {count} local maxima; aggregator is not strictly quasi-concave")]
    MultipleMaxima { count: usize },

    #[error("singular Jacobian: {0}")]
    Singular(String),

    #[error("zero saver: REMV undefined when first-period savings are zero")]
    ZeroSaver,

    #[error("REMV undefined: shock leaves the continuation value unchanged (v_alpha = 0)")]
    UndefinedRemv,

    #[error("corner solution at w = {wealth}: consumption is not interior")]
    NotInterior { wealth: f64 },

    #[error("setting is not homothetic: {0}")]
    NotHomothetic(String),

    #[error("shock incompatible with setting: {0}")]
    Incompatible(String),

    #[error("alpha {alpha} outside the path [{lo}, {hi}]")]
    AlphaOutOfRange { alpha: f64, lo: f64, hi: f64 },

    #[error("non-smooth continuation value near savings {savings} at alpha {alpha}")]
    Kink { alpha: f64, savings: f64 },

    #[error("cross partial f_cv = {0:e} is not positive")]
    CrossPartial(f64),

    #[error("first stage is zero: the shifter does not move the marginal value of wealth")]
    FirstStageZero,

    #[error("degenerate shifter: no within-group variation in {0}")]
    DegenerateShifter(String),

    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("config parse error: {0}")]
    Parse(String),

    #[error("cache error: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
