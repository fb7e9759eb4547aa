use thiserror::Error;

/// Errors raised by every module of the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is rank deficient (min |r_ii| = {min_diag:e}, max |r_ii| = {max_diag:e})")]
    RankDeficient { min_diag: f64, max_diag: f64 },

    #[error("jacobi SVD did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },

    #[error("column space is all of R^{0}; orthogonal complement is empty")]
    NoComplement(usize),

    #[error("basis is not orthonormal (||B^T B - I||_F = {0:e})")]
    NotOrthonormal(f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("mask window [{start}, {start}+{length}) out of range for dimension {dim}")]
    WindowOutOfRange { start: usize, length: usize, dim: usize },

    #[error("dictionary needs at least 2 atoms, got {0}")]
    TooFewAtoms(usize),

    #[error("dictionary needs at least 2 groups, got {0}")]
    TooFewGroups(usize),

    #[error("support enumeration C({atoms}, {k}) exceeds the cap of {cap}")]
    EnumerationTooLarge { atoms: usize, k: usize, cap: u128 },

    #[error("invalid dictionary: {0}")]
    InvalidDictionary(String),

    #[error("restricted isometry constant {0} >= 1, leakage bound undefined")]
    DeltaTooLarge(f64),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("training diverged at step {step} (loss = {loss:e})")]
    Diverged { step: usize, loss: f64 },

    #[error("intersection estimate is degenerate (||z*|| = {0:e})")]
    DegenerateZStar(f64),

    #[error("attention normalizer entry {0:e} below 1e-12")]
    DegenerateNormalizer(f64),

    #[error("integer overflow in {0}")]
    Overflow(&'static str),

    #[error("epsilon {epsilon} must be below the reach {tau}")]
    EpsilonExceedsReach { epsilon: f64, tau: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
