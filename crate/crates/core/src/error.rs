use thiserror::Error;

/// Errors produced by the modelling, analysis and simulation layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parse error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse { line: Option<usize>, message: String },

    #[error("invalid value for `{field}`: {message}")]
    Invariant { field: String, message: String },

    #[error("io error: {0}")]
    Io(String),

    #[error("cable {cable} is degenerate: {message}")]
    Degenerate { cable: usize, message: String },

    #[error("{what} is rank deficient (rank {rank}, expected {expected})")]
    RankDeficient {
        what: &'static str,
        rank: usize,
        expected: usize,
    },

    #[error("coupled cables of quadrotor {owner} disagree by {gap:.3e} m")]
    CoupledCableMismatch { owner: usize, gap: f64 },

    #[error("moment demand {demand:?} N·m is outside the propeller box of quadrotor {quadrotor}")]
    InfeasibleMoment { quadrotor: usize, demand: [f64; 3] },

    #[error("fixed-point iteration did not converge after {iterations} iterations (last iterate {last:.6})")]
    NoConvergence { iterations: usize, last: f64 },

    #[error("unsupported dimension: {0}")]
    Dimension(String),

    #[error("thrust vector norm {norm:.3e} N is too small to define an attitude")]
    ZeroThrust { norm: f64 },

    #[error("thrust vector points downward (z = {z:.3} N); fixed-pitch propellers cannot reverse")]
    ThrustReversal { z: f64 },

    #[error("cable constraint solve failed for cables {cables:?} (residual {residual:.3e})")]
    ConstraintSolve { cables: Vec<usize>, residual: f64 },

    #[error("payload error {error:.3} m exceeded bound {bound:.3} m at t = {time:.3} s")]
    Divergence { time: f64, error: f64, bound: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invariant(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invariant {
            field: field.into(),
            message: message.into(),
        }
    }
}
