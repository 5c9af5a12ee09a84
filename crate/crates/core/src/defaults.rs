//! Central defaults table.
//!
//! Every tunable the CLI and the experiment harness fall back to lives here,
//! so a reported run is reproducible from its manifest plus this table.

/// Cell-problem grid size per axis used by `hbar`, `sweep`, `velocity`.
pub const CELL_GRID_N: usize = 128;

/// Finite-volume cells per eps-period of the potential in the simulator.
/// Keeps the upwind numerical diffusion O(h |psi'|) well below the physical
/// diffusion eps.
pub const CELLS_PER_PERIOD: usize = 64;

/// Convergence tolerance on successive principal-eigenvalue estimates.
pub const EIG_TOL: f64 = 1e-11;

/// Iteration cap for the shift-inverted Perron iteration.
pub const EIG_MAX_ITER: usize = 10_000;

/// Exponential decay rate A of the initial bumps, n_i(x,0) ~ exp(-A|x|/eps).
pub const BUMP_DECAY: f64 = 2.0;

/// Default time horizon T for simulations and experiments.
pub const HORIZON: f64 = 1.0;

/// Advective CFL safety factor: dt <= CFL_SAFETY * h / max|drift|.
pub const CFL_SAFETY: f64 = 0.9;

/// Cap dt at this multiple of h even when the drift vanishes.
pub const DT_CAP_CELLS: f64 = 1.0;

/// Stationarity tolerance |q - DHbar(p)| for the Legendre maximizer search.
pub const LEGENDRE_GRAD_TOL: f64 = 1e-8;

/// Momentum cap for the expanding conjugate-search bracket.
pub const LEGENDRE_P_CAP: f64 = 50.0;

/// Snapshots recorded per simulation run by the experiment harness.
pub const SNAPSHOTS_PER_RUN: usize = 40;

/// Environment variable naming the output root directory for the CLI.
pub const OUT_DIR_ENV: &str = "RATCHET_OUT_DIR";
