use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KamError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("grid of {grid} points per dimension cannot resolve modes up to |k| = {k_out} (need at least {needed})")]
    InsufficientGrid { grid: usize, k_out: usize, needed: usize },

    #[error("sigma must be non-negative, got {0}")]
    NegativeSigma(f64),

    #[error("mode {mode:?} exceeds storage cutoff {k_store}")]
    ModeOutOfRange { mode: Vec<i32>, k_store: usize },

    #[error("normal-form assumption violated: |N - N0| = {deviation:.3e} >= {bound:.3e}")]
    AssumptionViolated { deviation: f64, bound: f64 },

    #[error("perturbation is not real-valued on the real torus (defect {0:.3e})")]
    NotRealValued(f64),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("matrix logarithm left its convergence ball (|M| = {0:.3e})")]
    LogarithmBranch(f64),

    #[error("quadratic form is not positive definite (min eigenvalue {0:.3e})")]
    NotPositiveDefinite(f64),

    #[error("step control failed: {0}")]
    StepControl(String),

    #[error("truncation leak {leak:.3e} exceeds tolerance {tol:.3e} at t = {t:.3}; enlarge the basis")]
    Leak { leak: f64, tol: f64, t: f64 },

    #[error("near-resonant divisor {divisor:.3e} at k = {mode:?}, mode {index}: not exactly resonant")]
    NearResonance { mode: Vec<i32>, index: usize, divisor: f64 },

    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, KamError>;
