use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("p must be an odd prime (got {0})")]
    InvalidModulus(usize),
    #[error("k must be in [{min}, {max}] (got {k})")]
    InvalidArity { k: usize, min: usize, max: usize },
    #[error("enumeration of {needed} evaluations exceeds the budget of {cap} (set FC_BUDGET to raise it)")]
    BudgetExceeded { needed: u128, cap: u128 },
    #[error("value {value} is out of range [0, {bound})")]
    OutOfRange { value: usize, bound: usize },
    #[error("train fraction must lie in (0, 1] (got {0})")]
    InvalidFraction(f64),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("frequency {zeta} is outside [1, {max}]")]
    InvalidFrequency { zeta: usize, max: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("zero network has no spectrum or norm to normalize")]
    ZeroNetwork,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("training diverged at step {step}: loss is {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
