//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("step must be positive and finite, got {0}")]
    InvalidStep(f64),

    #[error("{what} = {value} is not aligned to the grid step {step}")]
    NotGridAligned {
        what: &'static str,
        value: f64,
        step: f64,
    },

    #[error("horizons must be nonnegative with at least one positive (got past={past}, future={future})")]
    InvalidHorizons { past: f64, future: f64 },

    #[error("time {t} is outside the stored horizon [{lo}, {hi}]; regenerate the path with past horizon >= {required_past}")]
    OutOfHorizon {
        t: f64,
        lo: f64,
        hi: f64,
        required_past: f64,
    },

    #[error("increment requires s <= t, got s={s}, t={t}")]
    ReversedInterval { s: f64, t: f64 },

    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("matrix is singular or nearly singular (pivot {pivot:e})")]
    SingularMatrix { pivot: f64 },

    #[error("state blew up (first non-finite entry at step {step_index}, time {t})")]
    BlowUp { step_index: usize, t: f64 },

    #[error(
        "pullback state blew up at depth {depth} (step {step_index}); partial trajectory retained"
    )]
    PullbackBlowUp {
        depth: f64,
        step_index: usize,
        partial: Box<crate::integrators::Trajectory>,
    },

    #[error("initial point {member_index} (coords {point:?}) blew up during pullback")]
    MemberBlowUp {
        member_index: usize,
        point: Vec<f64>,
    },

    #[error("unknown preset {name:?}; available presets: {catalog}")]
    UnknownPreset { name: String, catalog: String },

    #[error("operation {op} is not defined for system class {class}")]
    UnsupportedClass {
        op: &'static str,
        class: &'static str,
    },

    #[error("process bundle does not cover [{lo}, {hi}] (bundle range [{have_lo}, {have_hi}])")]
    BundleCoverage {
        lo: f64,
        hi: f64,
        have_lo: f64,
        have_hi: f64,
    },

    #[error("expression parse error: {0}")]
    ExprParse(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("file format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
