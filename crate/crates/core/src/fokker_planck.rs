//! Mass-conservative finite-volume simulator of the eps-scaled two-species
//! system on a one-dimensional torus.
//!
//! Time stepping is Strang splitting with the stiff switching solved exactly:
//!
//! - reaction half-step: pointwise closed-form 2x2 exchange (the sum
//!   `n1 + n2` is invariant, the deviation from local equilibrium decays at
//!   rate `(nu1 + nu2)/eps`), so the eps^-1 coupling never limits `dt`;
//! - transport step: explicit first-order upwind drift in flux form plus
//!   backward-Euler diffusion via a prefactored cyclic tridiagonal solve;
//! - reaction half-step again.
//!
//! Every substep conserves total mass (flux telescoping on the torus and the
//! pointwise reaction invariant), and positivity holds under the advective
//! CFL bound.

use crate::model::MotorModel;
use crate::output::compensated_sum;
use crate::{Error, Result};

/// Torus geometry: `periods` potential periods of length eps, `cells_per_period`
/// finite-volume cells each, so `L = periods * eps` and `h = eps / cells_per_period`.
#[derive(Debug, Clone, Copy)]
pub struct DomainSpec {
    pub periods: usize,
    pub cells_per_period: usize,
}

impl DomainSpec {
    pub fn cells(&self) -> usize {
        self.periods * self.cells_per_period
    }
}

/// Requested initial bump: center position and total (two-species) mass.
#[derive(Debug, Clone, Copy)]
pub struct Bump {
    pub center: f64,
    pub mass: f64,
}

/// A placed bump with its discrete normalization constant `c`:
/// `n_i(x, 0) = (mass/2) c exp(-A dist(x, center)/eps)` per species.
#[derive(Debug, Clone, Copy)]
pub struct BumpInit {
    pub center: f64,
    pub mass: f64,
    pub norm_c: f64,
}

/// Discrete state of the two densities on the torus.
#[derive(Debug, Clone)]
pub struct SimState {
    pub epsilon: f64,
    pub h: f64,
    pub length: f64,
    /// Cell centers on `[-L/2, L/2)`.
    pub x: Vec<f64>,
    pub n1: Vec<f64>,
    pub n2: Vec<f64>,
    pub t: f64,
    /// Total mass at initialization.
    pub initial_mass: f64,
    /// Envelope decay rate A of the initial data.
    pub decay_a: f64,
    /// Envelope offset B: tight constant with `n1 + n2 <= exp((-A d + B)/eps)` at t = 0.
    pub envelope_b: f64,
    /// Envelope growth rate D of the barrier `exp((-A d + B + D t)/eps)`.
    pub envelope_d: f64,
    /// Speed estimate for the outside-mass diagnostic window.
    pub window_speed: f64,
    bumps: Vec<BumpInit>,
    com_ref: f64,
    /// Advection velocity `-psi'(x/eps)` at cell interfaces, per species.
    drift1: Vec<f64>,
    drift2: Option<Vec<f64>>,
    max_drift: f64,
    nu1: Vec<f64>,
    nu2: Vec<f64>,
    diffusion: Option<DiffusionSolver>,
}

/// Per-snapshot diagnostics, including the exponential-transform fields
/// `R_i = -eps ln n_i`.
#[derive(Debug, Clone)]
pub struct Diagnostics {
    pub t: f64,
    pub mass1: f64,
    pub mass2: f64,
    pub total: f64,
    /// Center of mass of `n1 + n2` in unwrapped coordinates.
    pub com: f64,
    /// Standard deviation about the center of mass.
    pub spread: f64,
    /// Location of the minimum of `min(r1, r2)`.
    pub argmin_r: f64,
    /// Mass fraction outside the window of half-width `3 max(1, speed t)`
    /// around the center of mass.
    pub outside_fraction: f64,
    /// Max of `eps ln n_i + A d(x) - B - D t`; nonpositive means the
    /// propagated envelope holds. NaN when the state has no bump data.
    pub envelope_margin: f64,
    pub r1: Vec<f64>,
    pub r2: Vec<f64>,
}

impl SimState {
    /// Initializes two equal species densities as exponential bumps,
    /// `n_i(x,0) = sum_j (m_j/2) c_j exp(-A dist(x, x_j)/eps)`, with each `c_j`
    /// normalizing the bump's two-species mass to `m_j` exactly on the grid.
    pub fn init(
        model: &MotorModel,
        epsilon: f64,
        domain: DomainSpec,
        bumps: &[Bump],
        decay_a: f64,
    ) -> Result<Self> {
        if !epsilon.is_finite() || epsilon <= 0.0 {
            return Err(Error::InvalidArgument(format!("epsilon = {epsilon}")));
        }
        if !decay_a.is_finite() || decay_a <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "bump decay rate must be positive, got {decay_a}"
            )));
        }
        if bumps.is_empty() {
            return Err(Error::InvalidMass("no bumps given".into()));
        }
        for b in bumps {
            if !b.mass.is_finite() || b.mass <= 0.0 {
                return Err(Error::InvalidMass(format!(
                    "bump at {} has mass {}",
                    b.center, b.mass
                )));
            }
        }
        let mut state = Self::empty(model, epsilon, domain)?;
        let length = state.length;
        let h = state.h;

        let mut inits = Vec::with_capacity(bumps.len());
        for bump in bumps {
            let center = wrap_into(bump.center, length);
            // Seam sits at +-L/2; the bump must keep its core away from it.
            let seam_dist = 0.5 * length - center.abs();
            if seam_dist < 10.0 * epsilon {
                return Err(Error::DomainTooSmall(format!(
                    "bump at {center} is {seam_dist:.4} from the torus seam (need >= {})",
                    10.0 * epsilon
                )));
            }
            let raw: Vec<f64> = state
                .x
                .iter()
                .map(|&x| (-decay_a * torus_dist(x, center, length) / epsilon).exp())
                .collect();
            let weight = h * compensated_sum(raw.iter().copied());
            let norm_c = 1.0 / weight;
            let amp = 0.5 * bump.mass * norm_c;
            for (i, r) in raw.iter().enumerate() {
                state.n1[i] += amp * r;
                state.n2[i] += amp * r;
            }
            inits.push(BumpInit {
                center,
                mass: bump.mass,
                norm_c,
            });
        }
        state.bumps = inits;
        state.decay_a = decay_a;
        state.initial_mass = state.mass_of(&state.n1) + state.mass_of(&state.n2);
        state.com_ref = {
            let total: f64 = bumps.iter().map(|b| b.mass).sum();
            bumps.iter().map(|b| b.center * b.mass).sum::<f64>() / total
        };
        state.envelope_b = state.tight_envelope_b();
        state.envelope_d = envelope_rate(model, decay_a);
        Ok(state)
    }

    /// Uniform state at a constant per-species level (diagnostics baseline).
    pub fn init_uniform(
        model: &MotorModel,
        epsilon: f64,
        domain: DomainSpec,
        level: f64,
    ) -> Result<Self> {
        if !level.is_finite() || level <= 0.0 {
            return Err(Error::InvalidMass(format!("uniform level {level}")));
        }
        let mut state = Self::empty(model, epsilon, domain)?;
        state.n1.fill(level);
        state.n2.fill(level);
        state.initial_mass = state.mass_of(&state.n1) + state.mass_of(&state.n2);
        state.decay_a = 1.0;
        state.envelope_b = f64::NAN;
        state.envelope_d = f64::NAN;
        Ok(state)
    }

    fn empty(model: &MotorModel, epsilon: f64, domain: DomainSpec) -> Result<Self> {
        if domain.periods == 0 || domain.cells_per_period < 4 {
            return Err(Error::DomainTooSmall(format!(
                "domain needs >= 1 period and >= 4 cells/period, got {} x {}",
                domain.periods, domain.cells_per_period
            )));
        }
        let cells = domain.cells();
        let length = domain.periods as f64 * epsilon;
        let h = length / cells as f64;
        let x: Vec<f64> = (0..cells)
            .map(|i| -0.5 * length + (i as f64 + 0.5) * h)
            .collect();

        // Coefficients sampled at the fast variable x/eps; interfaces carry
        // the advection velocity -psi'(x/eps).
        let dpsi = model.psi.derivative(1);
        let iface_frac = |i: usize| {
            let xi = -0.5 * length + (i as f64 + 1.0) * h;
            xi / epsilon
        };
        let drift1: Vec<f64> = (0..cells).map(|i| -dpsi.eval(iface_frac(i))).collect();
        let drift2 = model.psi2.as_ref().map(|psi2| {
            let d = psi2.derivative(1);
            (0..cells)
                .map(|i| -d.eval(iface_frac(i)))
                .collect::<Vec<f64>>()
        });
        let max_drift = drift1
            .iter()
            .chain(drift2.iter().flatten())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let nu1: Vec<f64> = x.iter().map(|&xi| model.nu1.eval(xi / epsilon)).collect();
        let nu2: Vec<f64> = x.iter().map(|&xi| model.nu2.eval(xi / epsilon)).collect();

        Ok(SimState {
            epsilon,
            h,
            length,
            x,
            n1: vec![0.0; cells],
            n2: vec![0.0; cells],
            t: 0.0,
            initial_mass: 0.0,
            decay_a: 1.0,
            envelope_b: f64::NAN,
            envelope_d: f64::NAN,
            window_speed: 0.0,
            bumps: Vec::new(),
            com_ref: 0.0,
            drift1,
            drift2,
            max_drift,
            nu1,
            nu2,
            diffusion: None,
        })
    }

    pub fn cells(&self) -> usize {
        self.x.len()
    }

    pub fn bump_inits(&self) -> &[BumpInit] {
        &self.bumps
    }

    /// Largest stable time step for the explicit upwind drift.
    pub fn max_stable_dt(&self) -> f64 {
        if self.max_drift == 0.0 {
            f64::INFINITY
        } else {
            crate::defaults::CFL_SAFETY * self.h / self.max_drift
        }
    }

    fn mass_of(&self, n: &[f64]) -> f64 {
        self.h * compensated_sum(n.iter().copied())
    }

    /// Tightest B with `n1 + n2 <= exp((-A d(x) + B)/eps)` on the initial data.
    fn tight_envelope_b(&self) -> f64 {
        let mut b = f64::NEG_INFINITY;
        for i in 0..self.cells() {
            let s = self.n1[i] + self.n2[i];
            if s > 0.0 {
                b = b.max(self.epsilon * s.ln() + self.decay_a * self.bump_dist(self.x[i]));
            }
        }
        b
    }

    fn bump_dist(&self, x: f64) -> f64 {
        self.bumps
            .iter()
            .map(|b| torus_dist(x, b.center, self.length))
            .fold(f64::INFINITY, f64::min)
    }

    /// One Strang step: exact reaction half, upwind drift + implicit
    /// diffusion, exact reaction half.
    pub fn step(&mut self, dt: f64) -> Result<()> {
        let dt_max = self.max_stable_dt();
        if dt > dt_max * (1.0 + 1e-12) {
            return Err(Error::CflViolation { dt, dt_max });
        }
        if !dt.is_finite() || dt <= 0.0 {
            return Err(Error::InvalidArgument(format!("dt = {dt}")));
        }

        self.reaction_half(0.5 * dt);
        self.transport(dt)?;
        self.reaction_half(0.5 * dt);
        self.t += dt;
        Ok(())
    }

    /// Pointwise closed-form switching: `n1' = (nu2 s - (nu1+nu2) n1)/eps`
    /// with invariant sum `s`, solved exactly over `dt`.
    fn reaction_half(&mut self, dt: f64) {
        let eps = self.epsilon;
        for i in 0..self.cells() {
            let s = self.n1[i] + self.n2[i];
            let rate = self.nu1[i] + self.nu2[i];
            let eq1 = self.nu2[i] * s / rate;
            let decay = (-rate * dt / eps).exp();
            let n1 = eq1 + (self.n1[i] - eq1) * decay;
            self.n1[i] = n1;
            self.n2[i] = s - n1;
        }
    }

    fn transport(&mut self, dt: f64) -> Result<()> {
        let beta = self.epsilon * dt / (self.h * self.h);
        let rebuild = match &self.diffusion {
            Some(d) => d.beta != beta || d.len() != self.cells(),
            None => true,
        };
        if rebuild {
            self.diffusion = Some(DiffusionSolver::new(self.cells(), beta));
        }

        upwind_advect(&mut self.n1, &self.drift1, dt, self.h);
        if let Some(drift2) = &self.drift2 {
            upwind_advect(&mut self.n2, drift2, dt, self.h);
        }
        let solver = self.diffusion.take().expect("diffusion solver");
        solver.solve(&mut self.n1);
        solver.solve(&mut self.n2);
        self.diffusion = Some(solver);
        Ok(())
    }

    /// Advances to absolute time `t_end`, recording diagnostics every
    /// `snapshot_every` steps (plus the initial and final states).
    pub fn run(&mut self, t_end: f64, dt: f64, snapshot_every: usize) -> Result<Vec<Diagnostics>> {
        let mut out = Vec::new();
        self.run_with(t_end, dt, snapshot_every, |_, diag| {
            out.push(diag.clone());
            Ok(())
        })?;
        Ok(out)
    }

    /// Like [`run`](Self::run), but hands every snapshot (state plus
    /// diagnostics) to a sink, so callers can serialize raw densities.
    pub fn run_with<F>(
        &mut self,
        t_end: f64,
        dt: f64,
        snapshot_every: usize,
        mut on_snapshot: F,
    ) -> Result<()>
    where
        F: FnMut(&SimState, &Diagnostics) -> Result<()>,
    {
        if snapshot_every == 0 {
            return Err(Error::InvalidArgument("snapshot_every must be >= 1".into()));
        }
        if t_end < self.t {
            return Err(Error::InvalidArgument(format!(
                "t_end = {t_end} is before current t = {}",
                self.t
            )));
        }
        on_snapshot(self, &self.diagnostics())?;
        let mut steps = 0usize;
        let tol = 1e-13 * (1.0 + t_end.abs());
        while self.t < t_end - tol {
            let dt_k = dt.min(t_end - self.t);
            self.step(dt_k)?;
            steps += 1;
            let finished = self.t >= t_end - tol;
            if steps.is_multiple_of(snapshot_every) || finished {
                let diag = self.diagnostics();
                if !diag.total.is_finite() {
                    return Err(Error::NonFiniteState { t: self.t });
                }
                on_snapshot(self, &diag)?;
            }
        }
        Ok(())
    }

    /// Snapshot diagnostics of the current state.
    pub fn diagnostics(&self) -> Diagnostics {
        let cells = self.cells();
        let eps = self.epsilon;
        let mass1 = self.mass_of(&self.n1);
        let mass2 = self.mass_of(&self.n2);
        let total = mass1 + mass2;

        // Unwrapped coordinates relative to the initial bump reference.
        let rel = |x: f64| wrap_into(x - self.com_ref, self.length);
        let mut wsum = 0.0;
        let mut msum = 0.0;
        for i in 0..cells {
            let w = self.n1[i] + self.n2[i];
            wsum += w * rel(self.x[i]);
            msum += w;
        }
        let com_rel = if msum > 0.0 { wsum / msum } else { 0.0 };
        let com = self.com_ref + com_rel;

        let mut var = 0.0;
        for i in 0..cells {
            let w = self.n1[i] + self.n2[i];
            let d = rel(self.x[i]) - com_rel;
            var += w * d * d;
        }
        let spread = if msum > 0.0 { (var / msum).sqrt() } else { 0.0 };

        let mut peak = f64::NEG_INFINITY;
        let mut argmin_r = 0.0;
        for i in 0..cells {
            let m = self.n1[i].max(self.n2[i]);
            if m > peak {
                peak = m;
                argmin_r = self.x[i];
            }
        }

        let half_width = 3.0 * (1.0f64).max(self.window_speed.abs() * self.t);
        let mut outside = 0.0;
        for i in 0..cells {
            if torus_dist(self.x[i], wrap_into(com, self.length), self.length) > half_width {
                outside += self.n1[i] + self.n2[i];
            }
        }
        let outside_fraction = if msum > 0.0 { outside / msum } else { 0.0 };

        let envelope_margin = if self.bumps.is_empty() || !self.envelope_b.is_finite() {
            f64::NAN
        } else {
            let mut margin = f64::NEG_INFINITY;
            for i in 0..cells {
                let n = self.n1[i].max(self.n2[i]);
                if n > 0.0 {
                    let bound = -self.decay_a * self.bump_dist(self.x[i])
                        + self.envelope_b
                        + self.envelope_d * self.t;
                    margin = margin.max(eps * n.ln() - bound);
                }
            }
            margin
        };

        let r = |n: &[f64]| n.iter().map(|&v| -eps * v.ln()).collect::<Vec<f64>>();
        Diagnostics {
            t: self.t,
            mass1,
            mass2,
            total,
            com,
            spread,
            argmin_r,
            outside_fraction,
            envelope_margin,
            r1: r(&self.n1),
            r2: r(&self.n2),
        }
    }
}

/// Envelope growth rate sufficient for the barrier `exp((-A d + B + D t)/eps)`
/// to dominate both species equations: the kink costs `A^2`, the drift terms
/// `A max|psi'| + max|psi''|`, and the switching `max|nu1 - nu2|`. A 10%
/// headroom covers the upwind scheme's numerical diffusion.
fn envelope_rate(model: &MotorModel, decay_a: f64) -> f64 {
    let mut dpsi = model.psi.derivative(1).max_abs();
    let mut ddpsi = model.psi.derivative(2).max_abs();
    if let Some(psi2) = &model.psi2 {
        dpsi = dpsi.max(psi2.derivative(1).max_abs());
        ddpsi = ddpsi.max(psi2.derivative(2).max_abs());
    }
    let probe = 512;
    let mut nu_gap = 0.0f64;
    for k in 0..probe {
        let y = k as f64 / probe as f64;
        nu_gap = nu_gap.max((model.nu1.eval(y) - model.nu2.eval(y)).abs());
    }
    1.1 * (decay_a * decay_a + decay_a * dpsi + ddpsi + nu_gap)
}

/// Conservative first-order upwind update `n -= dt/h (F_{i+1/2} - F_{i-1/2})`
/// with `F = a upwind(n)` at interfaces.
fn upwind_advect(n: &mut [f64], drift: &[f64], dt: f64, h: f64) {
    let cells = n.len();
    let mut flux = vec![0.0; cells];
    for i in 0..cells {
        let a = drift[i];
        let donor = if a >= 0.0 { n[i] } else { n[(i + 1) % cells] };
        flux[i] = a * donor;
    }
    let factor = dt / h;
    for i in 0..cells {
        let fm = flux[(i + cells - 1) % cells];
        n[i] -= factor * (flux[i] - fm);
    }
}

/// Prefactored solver for `(I - beta Lap_h) u = rhs` on the periodic grid:
/// Thomas elimination on a corner-free modification plus a Sherman-Morrison
/// rank-one correction for the wrap entries.
#[derive(Debug, Clone)]
struct DiffusionSolver {
    beta: f64,
    /// Forward-elimination multipliers and pivots.
    w: Vec<f64>,
    d_inv: Vec<f64>,
    /// Solution of the corner-free system for the correction vector u.
    z: Vec<f64>,
    /// 1 + v^T z.
    denom: f64,
    /// alpha/gamma in v = (1, 0, ..., 0, alpha/gamma).
    v_last: f64,
}

impl DiffusionSolver {
    // Thomas sweeps are recurrences; index form is the clearest here.
    #[allow(clippy::needless_range_loop)]
    fn new(cells: usize, beta: f64) -> Self {
        assert!(cells >= 3);
        let b = 1.0 + 2.0 * beta;
        let off = -beta;
        let gamma = -b;
        // Corner entries alpha = delta = -beta.
        let b_first = b - gamma;
        let b_last = b - (off * off) / gamma;

        let mut w = vec![0.0; cells];
        let mut d = vec![0.0; cells];
        d[0] = b_first;
        for i in 1..cells {
            let bi = if i == cells - 1 { b_last } else { b };
            w[i] = off / d[i - 1];
            d[i] = bi - w[i] * off;
        }
        let d_inv: Vec<f64> = d.iter().map(|v| 1.0 / v).collect();

        let mut z = vec![0.0; cells];
        z[0] = gamma;
        z[cells - 1] = off;
        Self::solve_raw(&w, &d_inv, off, &mut z);
        let v_last = off / gamma;
        let denom = 1.0 + z[0] + v_last * z[cells - 1];

        DiffusionSolver {
            beta,
            w,
            d_inv,
            z,
            denom,
            v_last,
        }
    }

    fn len(&self) -> usize {
        self.w.len()
    }

    #[allow(clippy::needless_range_loop)]
    fn solve_raw(w: &[f64], d_inv: &[f64], off: f64, rhs: &mut [f64]) {
        let cells = rhs.len();
        for i in 1..cells {
            rhs[i] -= w[i] * rhs[i - 1];
        }
        rhs[cells - 1] *= d_inv[cells - 1];
        for i in (0..cells - 1).rev() {
            rhs[i] = (rhs[i] - off * rhs[i + 1]) * d_inv[i];
        }
    }

    fn solve(&self, rhs: &mut [f64]) {
        let cells = rhs.len();
        let off = -self.beta;
        Self::solve_raw(&self.w, &self.d_inv, off, rhs);
        let vy = rhs[0] + self.v_last * rhs[cells - 1];
        let scale = vy / self.denom;
        for (r, z) in rhs.iter_mut().zip(&self.z) {
            *r -= scale * z;
        }
    }
}

fn wrap_into(x: f64, length: f64) -> f64 {
    let w = (x + 0.5 * length).rem_euclid(length) - 0.5 * length;
    if w >= 0.5 * length {
        w - length
    } else {
        w
    }
}

fn torus_dist(a: f64, b: f64, length: f64) -> f64 {
    wrap_into(a - b, length).abs()
}
