use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index {index} out of range 0..={max}")]
    Range { index: usize, max: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("noise level must be positive, got {0}")]
    ZeroSigma(f64),

    #[error("training diverged at step {step} (loss = {loss})")]
    Training { step: usize, loss: f64 },

    #[error("format error: {0}")]
    Format(String),

    #[error("KS solver: Newton failed to converge at step {step} (residual {residual:e})")]
    NewtonDiverged { step: usize, residual: f64 },

    #[error("KS solver: non-finite state at step {step}")]
    BlowUp { step: usize },

    #[error("projection produced a non-finite objective after {iters} iterations")]
    Projection { iters: usize, last_finite: Vec<f64> },

    #[error("oracle exhausted: accepted {accepted} of {target} after {proposals} proposals")]
    OracleExhausted {
        accepted: usize,
        target: usize,
        proposals: usize,
    },

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("not enough points: need {need}, have {have}")]
    InsufficientPoints { need: usize, have: usize },

    #[error("singular matrix")]
    Singular,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_finite(x: &[f64], what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Input(format!("{what} contains non-finite entries")))
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
