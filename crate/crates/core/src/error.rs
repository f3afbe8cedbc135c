use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("grid resolution must be even and positive, got {0}")]
    InvalidResolution(usize),
    #[error("invalid dealiasing fraction {num}/{den}")]
    InvalidDealias { num: u32, den: u32 },
    #[error("expected {expected} entries, got {got}")]
    Length { expected: usize, got: usize },
    #[error("components live on different lattices")]
    LatticeMismatch,
    #[error("incompatible source: mean {mean:e} is not zero")]
    IncompatibleSource { mean: f64 },
    #[error("quadrature grid {m} is too coarse for lattice {n}")]
    GridTooCoarse { n: usize, m: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("magnetic intensity must be finite and nonnegative, got {0}")]
    InvalidIntensity(f64),
    #[error("direction must be a finite unit vector")]
    InvalidDirection,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiophantineError {
    #[error("direction is not a unit vector (|omega| = {norm})")]
    NotUnit { norm: f64 },
    #[error("truncation must be at least 1")]
    InvalidTruncation,
    #[error("certification failed: chi = {witness:?} is orthogonal to omega")]
    Orthogonal { witness: [i64; 3] },
    #[error("no random direction certified after {attempts} attempts")]
    SamplingExhausted { attempts: usize },
    #[error("frequency {witness:?} in band is orthogonal to omega; Poincare constant is infinite")]
    InfiniteConstant { witness: [i64; 3] },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PressureError {
    #[error("no contraction: update ratio {ratio:.3e} >= 1 for 3 consecutive iterations (iteration {iterations})")]
    NoContraction { iterations: usize, ratio: f64 },
    #[error("max iterations ({iterations}) reached with residual {residual:.3e}")]
    MaxIterations { iterations: usize, residual: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvolutionError {
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("pressure solve failed: {0}")]
    Pressure(#[from] PressureError),
    #[error("constraint restoration failed: {0}")]
    Restoration(PressureError),
    #[error("constraint blowup: div_A u residual {0:.3e} after restoration")]
    ConstraintBlowup(f64),
    #[error("initial state is not divergence-free (residual {0:.3e})")]
    NotDivergenceFree(f64),
    #[error("initial-data fixed point did not converge (last residual {residual:.3e})")]
    InitialData { residual: f64 },
    #[error("epsilon {0} outside [0, 0.2]")]
    EpsilonOutOfRange(f64),
    #[error("non-finite value in state at t = {0}")]
    NonFinite(f64),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
