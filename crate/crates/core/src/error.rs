use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("singular primary distance: {0:.3e} nondim from a primary (guard 1e-6)")]
    SingularPrimaryDistance(f64),

    #[error("degenerate local frame: {0}")]
    DegenerateFrame(String),

    #[error("epoch mismatch: {0} vs {1}")]
    EpochMismatch(f64, f64),

    #[error("Kepler iteration failed to converge after {0} steps")]
    KeplerNonConvergence(usize),

    #[error("integration failure: {0}")]
    Integration(String),

    #[error("Newton corrector diverged: {0}")]
    NewtonDivergence(String),

    #[error("rank-deficient Jacobian in corrector (rcond {0:.3e})")]
    RankDeficient(f64),

    #[error("no oscillatory mode in monodromy spectrum")]
    NoOscillatoryMode,

    #[error("near-singular toroidal basis (condition number {0:.3e})")]
    SingularBasis(f64),

    #[error("phase undefined: eps < 1e-12 with nonzero rates")]
    PhaseUndefined,

    #[error("model mismatch: operation requires {expected}, got {got}")]
    ModelMismatch { expected: String, got: String },

    #[error("infeasible problem: {0}")]
    Infeasible(String),

    #[error("conic solver failure: {0}")]
    SolverFailure(String),

    #[error("trajectory grids do not match: {0}")]
    GridMismatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}
