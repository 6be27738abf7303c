use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum QtpError {
    #[error("spacetime dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("unsupported spacetime dimension D = {0} (only 2 and 4)")]
    UnsupportedDimension(usize),
    #[error("coincident points rejected: two-point kernels are singular there")]
    CoincidentPoints,
    #[error("contraction plan cap exceeded: {count} plans > cap {cap}")]
    PlanCapExceeded { count: usize, cap: usize },
    #[error("odd number of operator slots cannot be paired")]
    OddSlotCount,
    #[error("quadrature failed to converge: estimate {estimate:e} > tolerance {tolerance:e}")]
    QuadratureNonConvergence { estimate: f64, tolerance: f64 },
    #[error("imaginary residue {residue:e} above tolerance; probable ordering bug")]
    ImaginaryResidue { residue: f64 },
    #[error("total detection probability {0} >= 1: coupling too large for leading order")]
    PerturbativeBreakdown(f64),
    #[error("conditioning requires P_det > 0 (got {0:e})")]
    NoDetectionMass(f64),
    #[error("truncated Fock cutoff too low: norm leakage {0:e}")]
    CutoffLeakage(f64),
    #[error("resource cap: {0}")]
    ResourceCap(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("grid error: {0}")]
    Grid(String),
}

pub type Result<T> = std::result::Result<T, QtpError>;
