use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("width {0} is not a dyadic power 2^-k in (0, 1]")]
    NonDyadic(f64),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("work budget exceeded: {needed} operations requested, budget {budget}")]
    Budget { needed: u128, budget: u128 },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("resolution error: {0}")]
    Resolution(String),
    #[error("frequency too high: {0}")]
    FrequencyTooHigh(String),
    #[error("support violation: {0}")]
    Support(String),
    #[error("sampling failed: {0}")]
    Sampling(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;

/// Default per-call work budget in elementary operations.
pub const DEFAULT_BUDGET: u128 = 1_000_000_000;

pub(crate) fn check_budget(needed: u128, budget: u128) -> Result<()> {
    if needed > budget {
        Err(LabError::Budget { needed, budget })
    } else {
        Ok(())
    }
}
