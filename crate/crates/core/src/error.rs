use thiserror::Error;

/// Errors raised across the toolkit.
///
/// Variants are grouped by the stage that raises them; `exit_code` maps them
/// onto the CLI contract (2 = validation, 3 = solver/runtime failure).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid periodic field: {0}")]
    InvalidField(String),

    #[error("switching rate must be strictly positive: min {name} = {min}")]
    NonPositiveRate { name: &'static str, min: f64 },

    #[error("invalid cell grid: {0}")]
    InvalidGrid(String),

    #[error(
        "grid Peclet number {peclet:.3} >= 2 at N = {n}; increase the grid to N >= {n_required}"
    )]
    PecletViolation {
        n: usize,
        peclet: f64,
        n_required: usize,
    },

    #[error("eigenvalue iteration did not converge within {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("converged eigenvector has a non-positive component (min = {min}); the discretization lost monotonicity")]
    NonPositiveEigenvector { min: f64 },

    #[error("primal/adjoint eigenvalues disagree: {primal} vs {adjoint} (tolerance {tol})")]
    EigenvalueMismatch { primal: f64, adjoint: f64, tol: f64 },

    #[error("degenerate duality pairing (denominator {denominator}); upstream eigensolve failed")]
    DegeneratePairing { denominator: f64 },

    #[error("conjugate search bracket exceeded |p| = {cap} for q = {q}")]
    BracketFailure { q: f64, cap: f64 },

    #[error("sweep failed at p = {p}: {source}")]
    SweepEntry { p: f64, source: Box<Error> },

    #[error("domain too small: {0}")]
    DomainTooSmall(String),

    #[error("invalid bump mass: {0}")]
    InvalidMass(String),

    #[error("time step {dt} violates the advection CFL bound; dt must be <= {dt_max}")]
    CflViolation { dt: f64, dt_max: f64 },

    #[error("simulation state became non-finite at t = {t}")]
    NonFiniteState { t: f64 },

    #[error("no snapshot recorded near t = {t} (closest gap {gap})")]
    SnapshotMissing { t: f64, gap: f64 },

    #[error("velocity fit needs at least {needed} snapshots in the fit window, got {got}")]
    InconclusiveFit { needed: usize, got: usize },

    #[error("mass windows overlap: window {a} and window {b}")]
    WindowOverlap { a: usize, b: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown preset `{0}`; known presets: {1}")]
    UnknownPreset(String, String),

    #[error("model spec: {0}")]
    BadModelSpec(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// CLI exit code class: 2 for validation errors, 3 for solver failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidField(_)
            | Error::NonPositiveRate { .. }
            | Error::InvalidGrid(_)
            | Error::DomainTooSmall(_)
            | Error::InvalidMass(_)
            | Error::WindowOverlap { .. }
            | Error::InvalidArgument(_)
            | Error::UnknownPreset(..)
            | Error::BadModelSpec(_)
            | Error::Io(_) => 2,
            Error::SweepEntry { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}
