use thiserror::Error;

/// Errors produced by the shell-model laboratory.
#[derive(Debug, Error)]
pub enum ShellError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shell count mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical blow-up at t = {t}: |v|_H = {v_h}, ||z||_V = {z_v}")]
    BlowUp { t: f64, v_h: f64, z_v: f64 },

    #[error("explicit scheme unstable: dt * nu * k_N^2 = {0} exceeds 2")]
    Stability(f64),

    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    #[error(
        "absorbing exponent not contracting over [{from}, {to}]: mean drift {mean_drift} >= 0 \
         (alpha below alpha_* or window too short)"
    )]
    ExponentNotContracting { from: f64, to: f64, mean_drift: f64 },

    #[error("ensemble member {member}: {source}")]
    Member { member: usize, source: Box<ShellError> },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ShellError>;
