//! End-to-end verification harness: transport-velocity measurement,
//! multi-bump transport, rate-profile comparison against the Hopf-Lax
//! solution, and the Harnack-quotient diagnostic.
//!
//! Every experiment is deterministic given (model, eps, grid, dt) and reruns
//! bit-identically; experiments for distinct eps values run concurrently.

use std::fmt;

use rayon::prelude::*;
use serde::Serialize;

use crate::defaults;
use crate::effective::{hopf_lax_profile, velocity};
use crate::fokker_planck::{Bump, Diagnostics, DomainSpec, SimState};
use crate::model::MotorModel;
use crate::{Error, Result};

/// Resolution knobs shared by the experiments.
#[derive(Debug, Clone, Copy)]
pub struct ResolutionPolicy {
    /// Finite-volume cells per eps-period.
    pub cells_per_period: usize,
    /// Cell-problem grid for `vbar` and `Hstar` evaluations.
    pub cell_grid_n: usize,
    /// Snapshots recorded per run.
    pub snapshots: usize,
    /// Spatial padding (beyond the transport distance) per domain side.
    pub domain_pad: f64,
    /// Sample points for profile comparisons.
    pub profile_samples: usize,
}

impl Default for ResolutionPolicy {
    fn default() -> Self {
        Self {
            cells_per_period: defaults::CELLS_PER_PERIOD,
            cell_grid_n: defaults::CELL_GRID_N,
            snapshots: defaults::SNAPSHOTS_PER_RUN,
            domain_pad: 3.2,
            profile_samples: 161,
        }
    }
}

fn choose_domain(eps: f64, vbar: f64, t: f64, policy: &ResolutionPolicy) -> DomainSpec {
    let needed = 2.0 * (vbar.abs() * t + policy.domain_pad);
    let periods = (needed / eps).ceil() as usize + 1;
    DomainSpec {
        periods: periods.max(16),
        cells_per_period: policy.cells_per_period,
    }
}

fn choose_dt(state: &SimState) -> f64 {
    state.max_stable_dt().min(defaults::DT_CAP_CELLS * state.h)
}

/// Runs a single unit-mass bump at the origin to time `t_end`.
/// Enforces the no-wrap guard: outside-window mass must stay below 1e-6.
fn standard_run(
    model: &MotorModel,
    eps: f64,
    t_end: f64,
    vbar: f64,
    policy: &ResolutionPolicy,
) -> Result<(SimState, Vec<Diagnostics>)> {
    let domain = choose_domain(eps, vbar, t_end, policy);
    let mut state = SimState::init(
        model,
        eps,
        domain,
        &[Bump {
            center: 0.0,
            mass: 1.0,
        }],
        defaults::BUMP_DECAY,
    )?;
    state.window_speed = vbar.abs();
    let dt = choose_dt(&state);
    let steps = (t_end / dt).ceil().max(1.0) as usize;
    let every = (steps / policy.snapshots.max(1)).max(1);
    let snaps = state.run(t_end, dt, every)?;
    if let Some(last) = snaps.last() {
        if last.outside_fraction >= 1e-6 {
            return Err(Error::DomainTooSmall(format!(
                "outside-window mass fraction {:.3e} at t = {}; the bump reached the seam",
                last.outside_fraction, last.t
            )));
        }
    }
    Ok((state, snaps))
}

/// One epsilon row of a transport study.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct TransportRow {
    pub epsilon: f64,
    pub cell_width: f64,
    pub v_measured: f64,
    pub abs_error: f64,
    /// Mass fraction outside the transport window at the final time.
    pub final_outside_fraction: f64,
    /// Center-of-mass trajectory samples (t, com).
    pub com_series: Vec<(f64, f64)>,
}

/// Transport-velocity verification: the center of mass of the simulated
/// densities must travel at `vbar` as eps shrinks.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct TransportReport {
    pub fingerprint: String,
    pub v_bar: f64,
    pub horizon: f64,
    pub rows: Vec<TransportRow>,
    /// Errors decrease with eps (up to a 2h noise floor).
    pub monotone_ok: bool,
    /// Smallest-eps error under 10% relative (or 0.02 absolute for small vbar).
    pub final_ok: bool,
    pub pass: bool,
}

impl fmt::Display for TransportReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "transport: vbar = {:.6e}  T = {}  [{}]",
            self.v_bar,
            self.horizon,
            if self.pass { "PASS" } else { "FAIL" }
        )?;
        writeln!(f, "  {:>12} {:>14} {:>12}", "eps", "v_measured", "abs_err")?;
        for r in &self.rows {
            writeln!(
                f,
                "  {:>12.6} {:>14.6e} {:>12.3e}",
                r.epsilon, r.v_measured, r.abs_error
            )?;
        }
        Ok(())
    }
}

/// Least-squares slope of com(t) over the second half of the horizon.
fn fit_velocity(snaps: &[Diagnostics], t_end: f64) -> Result<f64> {
    let pts: Vec<(f64, f64)> = snaps
        .iter()
        .filter(|d| d.t >= 0.5 * t_end - 1e-12)
        .map(|d| (d.t, d.com))
        .collect();
    if pts.len() < 10 {
        return Err(Error::InconclusiveFit {
            needed: 10,
            got: pts.len(),
        });
    }
    let n = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let cm = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, c) in &pts {
        num += (t - tm) * (c - cm);
        den += (t - tm) * (t - tm);
    }
    if den <= 0.0 {
        return Err(Error::InconclusiveFit {
            needed: 10,
            got: pts.len(),
        });
    }
    Ok(num / den)
}

pub fn transport(
    model: &MotorModel,
    eps_list: &[f64],
    t_end: f64,
    policy: &ResolutionPolicy,
) -> Result<TransportReport> {
    if eps_list.is_empty() || eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument(
            "eps list must be nonempty and strictly decreasing".into(),
        ));
    }
    if t_end.is_nan() || t_end <= 0.0 {
        return Err(Error::InvalidArgument(format!("T = {t_end}")));
    }
    let v_bar = velocity(model, policy.cell_grid_n)?.v_bar;

    let rows: Vec<TransportRow> = eps_list
        .par_iter()
        .map(|&eps| -> Result<TransportRow> {
            let (state, snaps) = standard_run(model, eps, t_end, v_bar, policy)?;
            let v_measured = fit_velocity(&snaps, t_end)?;
            Ok(TransportRow {
                epsilon: eps,
                cell_width: state.h,
                v_measured,
                abs_error: (v_measured - v_bar).abs(),
                final_outside_fraction: snaps.last().map_or(0.0, |d| d.outside_fraction),
                com_series: snaps.iter().map(|d| (d.t, d.com)).collect(),
            })
        })
        .collect::<Result<_>>()?;

    let monotone_ok = rows
        .windows(2)
        .all(|w| w[1].abs_error <= w[0].abs_error + 2.0 * w[1].cell_width);
    let last = rows.last().expect("nonempty rows");
    let final_ok = if v_bar.abs() < 0.2 {
        last.abs_error < 0.02
    } else {
        last.abs_error < 0.1 * v_bar.abs()
    };
    Ok(TransportReport {
        fingerprint: model.fingerprint(),
        v_bar,
        horizon: t_end,
        rows,
        monotone_ok,
        final_ok,
        pass: monotone_ok && final_ok,
    })
}

/// Per-bump accounting of a multi-bump run.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct MultimassWindow {
    pub start_center: f64,
    pub final_center: f64,
    pub half_width: f64,
    pub initial_mass: f64,
    pub window_mass: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct MultimassReport {
    pub fingerprint: String,
    pub epsilon: f64,
    pub horizon: f64,
    pub v_bar: f64,
    pub windows: Vec<MultimassWindow>,
    pub union_fraction: f64,
    /// Union captures at least 1 - 1e-3 of the mass.
    pub union_ok: bool,
    /// Every window mass matches its bump mass within 5%.
    pub split_ok: bool,
    pub pass: bool,
}

impl fmt::Display for MultimassReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "multimass: eps = {}  T = {}  vbar = {:.6e}  union fraction = {:.6}  [{}]",
            self.epsilon,
            self.horizon,
            self.v_bar,
            self.union_fraction,
            if self.pass { "PASS" } else { "FAIL" }
        )?;
        for w in &self.windows {
            writeln!(
                f,
                "  bump {:>8.4} -> {:>8.4}  mass {:.4} vs {:.4} (rel err {:.3e})",
                w.start_center, w.final_center, w.window_mass, w.initial_mass, w.relative_error
            )?;
        }
        Ok(())
    }
}

/// Verifies that several separated bumps each translate by `T vbar` while
/// keeping their individual masses. A single bump degenerates to the
/// transport check on its window.
pub fn multimass(
    model: &MotorModel,
    eps: f64,
    bumps: &[Bump],
    t_end: f64,
    policy: &ResolutionPolicy,
) -> Result<MultimassReport> {
    if bumps.is_empty() {
        return Err(Error::InvalidMass("no bumps given".into()));
    }
    let v_bar = velocity(model, policy.cell_grid_n)?.v_bar;
    let min_sep = 4.0 * (1.0f64).max(v_bar.abs()) * t_end;
    for i in 0..bumps.len() {
        for j in (i + 1)..bumps.len() {
            if (bumps[i].center - bumps[j].center).abs() < min_sep {
                return Err(Error::WindowOverlap { a: i, b: j });
            }
        }
    }

    let span = bumps.iter().map(|b| b.center.abs()).fold(0.0f64, f64::max);
    let needed = 2.0 * (span + v_bar.abs() * t_end + policy.domain_pad);
    let domain = DomainSpec {
        periods: ((needed / eps).ceil() as usize + 1).max(16),
        cells_per_period: policy.cells_per_period,
    };
    let mut state = SimState::init(model, eps, domain, bumps, defaults::BUMP_DECAY)?;
    state.window_speed = v_bar.abs();
    let dt = choose_dt(&state);
    let steps = (t_end / dt).ceil().max(1.0) as usize;
    let every = (steps / policy.snapshots.max(1)).max(1);
    state.run(t_end, dt, every)?;

    // Window half-width: five spreads of the heat-kernel estimate
    // sqrt(2 (eps/A)^2 + 2 eps T).
    let a = defaults::BUMP_DECAY;
    let half_width = 5.0 * (2.0 * (eps / a).powi(2) + 2.0 * eps * t_end).sqrt();
    let centers: Vec<f64> = bumps.iter().map(|b| b.center + t_end * v_bar).collect();
    for i in 0..centers.len() {
        for j in (i + 1)..centers.len() {
            if (centers[i] - centers[j]).abs() < 2.0 * half_width {
                return Err(Error::WindowOverlap { a: i, b: j });
            }
        }
    }

    let h = state.h;
    let total: f64 = state
        .n1
        .iter()
        .zip(&state.n2)
        .map(|(a, b)| (a + b) * h)
        .sum();
    let mut windows = Vec::new();
    let mut union_mass = 0.0;
    for (bump, center) in bumps.iter().zip(&centers) {
        let mut mass = 0.0;
        for i in 0..state.cells() {
            let d = (state.x[i] - center).abs();
            let d = d.min(state.length - d);
            if d <= half_width {
                mass += (state.n1[i] + state.n2[i]) * h;
            }
        }
        union_mass += mass;
        windows.push(MultimassWindow {
            start_center: bump.center,
            final_center: *center,
            half_width,
            initial_mass: bump.mass,
            window_mass: mass,
            relative_error: (mass - bump.mass).abs() / bump.mass,
        });
    }
    let union_fraction = union_mass / total;
    let union_ok = union_fraction >= 1.0 - 1e-3;
    let split_ok = windows.iter().all(|w| w.relative_error <= 0.05);
    Ok(MultimassReport {
        fingerprint: model.fingerprint(),
        epsilon: eps,
        horizon: t_end,
        v_bar,
        windows,
        union_fraction,
        union_ok,
        split_ok,
        pass: union_ok && split_ok,
    })
}

/// Comparison of the simulated rate profile with the Hopf-Lax solution.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ProfileReport {
    pub fingerprint: String,
    pub epsilon: f64,
    pub t_eval: f64,
    pub v_bar: f64,
    /// Sup-norm gap between the min-shifted profile and `t Hstar(x/t)` over
    /// the window `|x - t vbar| <= 1`.
    pub sup_gap: f64,
    /// Same gap restricted to `|x - t vbar| <= 1/2`.
    pub sup_gap_half: f64,
    /// Distance from the profile minimizer to `t vbar`.
    pub argmin_distance: f64,
    /// Tolerance `5h + 2 eps` for the minimizer distance.
    pub argmin_tol: f64,
    /// Sampled columns: x, min-shifted simulated rate, Hopf-Lax profile.
    pub samples: Vec<(f64, f64, f64)>,
    pub pass: bool,
}

impl fmt::Display for ProfileReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "profile: eps = {}  t = {}  sup gap = {:.4} (half-window {:.4})  argmin dist = {:.4} (tol {:.4})  [{}]",
            self.epsilon,
            self.t_eval,
            self.sup_gap,
            self.sup_gap_half,
            self.argmin_distance,
            self.argmin_tol,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

/// Min-shifts the simulated rate field `min_i(-eps ln n_i)` and compares it
/// with the Hopf-Lax profile on the transport window.
pub fn profile_compare(
    model: &MotorModel,
    eps: f64,
    t_eval: f64,
    policy: &ResolutionPolicy,
) -> Result<ProfileReport> {
    if t_eval.is_nan() || t_eval <= 0.0 {
        return Err(Error::InvalidArgument(format!("t_eval = {t_eval}")));
    }
    let v_bar = velocity(model, policy.cell_grid_n)?.v_bar;
    let (state, snaps) = standard_run(model, eps, t_eval, v_bar, policy)?;
    let last = snaps.last().expect("nonempty snapshots");

    let r_min: Vec<f64> = last
        .r1
        .iter()
        .zip(&last.r2)
        .map(|(a, b)| a.min(*b))
        .collect();
    let shift = r_min.iter().copied().fold(f64::INFINITY, f64::min);

    let center = t_eval * v_bar;
    // Sample the window on a uniform sub-grid of cells.
    let samples_wanted = policy.profile_samples.max(8);
    let in_window: Vec<usize> = (0..state.cells())
        .filter(|&i| (state.x[i] - center).abs() <= 1.0)
        .collect();
    if in_window.is_empty() {
        return Err(Error::DomainTooSmall(
            "profile window lies outside the domain".into(),
        ));
    }
    let stride = (in_window.len() / samples_wanted).max(1);
    let chosen: Vec<usize> = in_window.iter().copied().step_by(stride).collect();
    let xs: Vec<f64> = chosen.iter().map(|&i| state.x[i]).collect();
    let hopf = hopf_lax_profile(model, t_eval, &xs, policy.cell_grid_n)?;

    let mut sup_gap = 0.0f64;
    let mut sup_gap_half = 0.0f64;
    let mut samples = Vec::with_capacity(chosen.len());
    for (k, &i) in chosen.iter().enumerate() {
        let shifted = r_min[i] - shift;
        let gap = (shifted - hopf[k]).abs();
        sup_gap = sup_gap.max(gap);
        if (state.x[i] - center).abs() <= 0.5 {
            sup_gap_half = sup_gap_half.max(gap);
        }
        samples.push((state.x[i], shifted, hopf[k]));
    }

    let argmin_distance = (last.argmin_r - center).abs();
    let argmin_tol = 5.0 * state.h + 2.0 * eps;
    Ok(ProfileReport {
        fingerprint: model.fingerprint(),
        epsilon: eps,
        t_eval,
        v_bar,
        sup_gap,
        sup_gap_half,
        argmin_distance,
        argmin_tol,
        samples,
        pass: argmin_distance <= argmin_tol,
    })
}

/// Empirical constant of the parabolic Harnack-type bound
/// `R_j(z', t0 + eps) - R_i(z, t0) <= eps C` over pairs `|z - z'| <= eps`.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct HarnackReport {
    pub epsilon: f64,
    pub t0: f64,
    pub c_hat: f64,
    /// Number of grid points excluded because the density underflowed.
    pub excluded: usize,
}

/// Runs a single-bump simulation and evaluates the empirical Harnack
/// constant between the snapshots at `t0` and `t0 + eps`.
pub fn harnack_diag(
    model: &MotorModel,
    eps: f64,
    t0: f64,
    delta: f64,
    policy: &ResolutionPolicy,
) -> Result<HarnackReport> {
    if delta.is_nan() || delta <= 0.0 || t0 < eps * delta {
        return Err(Error::InvalidArgument(format!(
            "need t0 >= eps * delta > 0, got t0 = {t0}, eps = {eps}, delta = {delta}"
        )));
    }
    let v_bar = velocity(model, policy.cell_grid_n)?.v_bar;
    let domain = choose_domain(eps, v_bar, t0 + eps, policy);
    let mut state = SimState::init(
        model,
        eps,
        domain,
        &[Bump {
            center: 0.0,
            mass: 1.0,
        }],
        defaults::BUMP_DECAY,
    )?;
    state.window_speed = v_bar.abs();
    let dt = choose_dt(&state);
    state.run(t0, dt, usize::MAX)?;
    let first = state.diagnostics();
    state.run(t0 + eps, dt, usize::MAX)?;
    let second = state.diagnostics();
    harnack_from_snapshots(&state, &first, &second)
}

/// Computes the empirical Harnack constant from two recorded snapshots that
/// must be exactly `eps` apart in time.
pub fn harnack_from_snapshots(
    state: &SimState,
    at_t0: &Diagnostics,
    at_t1: &Diagnostics,
) -> Result<HarnackReport> {
    let eps = state.epsilon;
    let gap = (at_t1.t - at_t0.t - eps).abs();
    if gap > 1e-9 * (1.0 + at_t1.t.abs()) {
        return Err(Error::SnapshotMissing {
            t: at_t0.t + eps,
            gap,
        });
    }
    let cells = state.cells();
    let window = (eps / state.h).round() as usize;

    // min over species and |z - z'| <= eps of R(z, t0), per target cell.
    let r0: Vec<f64> = at_t0
        .r1
        .iter()
        .zip(&at_t0.r2)
        .map(|(a, b)| a.min(*b))
        .collect();
    let r1: Vec<f64> = at_t1
        .r1
        .iter()
        .zip(&at_t1.r2)
        .map(|(a, b)| a.max(*b))
        .collect();

    let mut c_hat = f64::NEG_INFINITY;
    let mut excluded = 0usize;
    for (z_prime, &target) in r1.iter().enumerate() {
        if !target.is_finite() {
            excluded += 1;
            continue;
        }
        let mut base = f64::INFINITY;
        let mut any = false;
        for off in 0..=2 * window {
            let z = (z_prime + cells + off - window) % cells;
            if r0[z].is_finite() {
                base = base.min(r0[z]);
                any = true;
            }
        }
        if !any {
            excluded += 1;
            continue;
        }
        c_hat = c_hat.max((target - base) / eps);
    }
    if !c_hat.is_finite() {
        return Err(Error::SnapshotMissing {
            t: at_t0.t,
            gap: f64::NAN,
        });
    }
    Ok(HarnackReport {
        epsilon: eps,
        t0: at_t0.t,
        c_hat,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_preset;

    fn coarse_policy() -> ResolutionPolicy {
        ResolutionPolicy {
            cells_per_period: 64,
            cell_grid_n: 64,
            snapshots: 40,
            domain_pad: 3.2,
            profile_samples: 81,
        }
    }

    #[test]
    fn transport_symmetric_is_stationary() {
        let model = build_preset("symmetric", 64).unwrap();
        let policy = coarse_policy();
        let report = transport(&model, &[1.0 / 16.0, 1.0 / 32.0], 1.0, &policy).unwrap();
        assert!(report.v_bar.abs() < 1e-7);
        for row in &report.rows {
            assert!(
                row.v_measured.abs() <= 3.0 * row.cell_width / report.horizon,
                "eps {}: v = {}",
                row.epsilon,
                row.v_measured
            );
        }
        assert!(report.pass, "{report}");
    }

    #[test]
    fn transport_flat_spread_matches_heat_kernel() {
        let model = build_preset("flat", 64).unwrap();
        let policy = coarse_policy();
        let eps = 1.0 / 32.0;
        let (_, snaps) = standard_run(&model, eps, 1.0, 0.0, &policy).unwrap();
        let report = transport(&model, &[eps], 1.0, &policy).unwrap();
        assert!(report.rows[0].v_measured.abs() < 1e-10);
        let last = snaps.last().unwrap();
        let expected = (2.0 * eps * 1.0f64).sqrt();
        let rel = (last.spread - expected).abs() / expected;
        assert!(rel < 0.05, "spread {} vs {expected}", last.spread);
    }

    #[test]
    fn transport_validates_eps_list() {
        let model = build_preset("flat", 32).unwrap();
        let policy = coarse_policy();
        assert!(transport(&model, &[], 1.0, &policy).is_err());
        assert!(transport(&model, &[0.1, 0.2], 1.0, &policy).is_err());
    }

    #[test]
    fn multimass_symmetric_preserves_split() {
        let model = build_preset("symmetric", 64).unwrap();
        let policy = coarse_policy();
        let report = multimass(
            &model,
            1.0 / 16.0,
            &[
                Bump {
                    center: -2.5,
                    mass: 0.3,
                },
                Bump {
                    center: 2.5,
                    mass: 0.7,
                },
            ],
            1.0,
            &policy,
        )
        .unwrap();
        assert!(report.pass, "{report}");
        for w in &report.windows {
            assert!((w.final_center - w.start_center).abs() < 1e-7);
        }
    }

    #[test]
    fn multimass_single_bump_degenerates_to_transport() {
        let model = build_preset("flat", 64).unwrap();
        let policy = coarse_policy();
        let report = multimass(
            &model,
            1.0 / 16.0,
            &[Bump {
                center: 0.0,
                mass: 1.0,
            }],
            0.5,
            &policy,
        )
        .unwrap();
        assert!(report.pass, "{report}");
        assert_eq!(report.windows.len(), 1);
        assert!((report.windows[0].final_center).abs() < 1e-9);
    }

    #[test]
    fn multimass_rejects_close_bumps() {
        let model = build_preset("symmetric", 64).unwrap();
        let policy = coarse_policy();
        let err = multimass(
            &model,
            1.0 / 16.0,
            &[
                Bump {
                    center: -0.5,
                    mass: 0.5,
                },
                Bump {
                    center: 0.5,
                    mass: 0.5,
                },
            ],
            1.0,
            &policy,
        )
        .unwrap_err();
        assert!(matches!(err, Error::WindowOverlap { .. }));
    }

    #[test]
    fn profile_flat_matches_quadratic_rate() {
        let model = build_preset("flat", 64).unwrap();
        let policy = coarse_policy();
        let report = profile_compare(&model, 1.0 / 32.0, 1.0, &policy).unwrap();
        assert!(report.pass, "{report}");
        assert!(report.sup_gap_half < 0.15, "{report}");
        // The Hopf-Lax samples must reproduce x^2/4 for this model.
        for (x, _, hopf) in &report.samples {
            assert!((hopf - x * x / 4.0).abs() < 1e-5, "x = {x}");
        }
    }

    #[test]
    fn profile_gap_does_not_grow_as_eps_halves() {
        let model = build_preset("asymmetric-ratchet", 64).unwrap();
        let policy = coarse_policy();
        let coarse = profile_compare(&model, 1.0 / 16.0, 0.5, &policy).unwrap();
        let fine = profile_compare(&model, 1.0 / 32.0, 0.5, &policy).unwrap();
        assert!(
            fine.sup_gap <= coarse.sup_gap + 5e-3,
            "gap grew: {} -> {}",
            coarse.sup_gap,
            fine.sup_gap
        );
    }

    #[test]
    fn harnack_flat_bump_is_heat_kernel_bounded() {
        // For a diffusing bump the rate field is ~ x^2/(4t) plus linear
        // tails of slope A, so the quotient stays of order A^2 + A.
        let model = build_preset("flat", 64).unwrap();
        let policy = coarse_policy();
        let rep = harnack_diag(&model, 1.0 / 16.0, 0.25, 1.0, &policy).unwrap();
        assert!(rep.c_hat.is_finite());
        assert!(rep.c_hat < 20.0, "c_hat = {}", rep.c_hat);
        assert_eq!(rep.excluded, 0);
    }

    #[test]
    fn harnack_uniform_state_is_flat() {
        let model = build_preset("flat", 64).unwrap();
        let eps = 1.0 / 16.0;
        let mut state = SimState::init_uniform(
            &model,
            eps,
            DomainSpec {
                periods: 32,
                cells_per_period: 64,
            },
            1.0,
        )
        .unwrap();
        let dt = state.h;
        state.run(0.25, dt, usize::MAX).unwrap();
        let first = state.diagnostics();
        state.run(0.25 + eps, dt, usize::MAX).unwrap();
        let second = state.diagnostics();
        let report = harnack_from_snapshots(&state, &first, &second).unwrap();
        assert!(report.c_hat.abs() < 1e-9, "c_hat = {}", report.c_hat);
    }

    #[test]
    fn harnack_bounded_across_eps() {
        let model = build_preset("asymmetric-ratchet", 64).unwrap();
        let policy = coarse_policy();
        let a = harnack_diag(&model, 1.0 / 16.0, 0.25, 1.0, &policy).unwrap();
        let b = harnack_diag(&model, 1.0 / 32.0, 0.25, 1.0, &policy).unwrap();
        assert!(a.c_hat.is_finite() && b.c_hat.is_finite());
        let ratio = b.c_hat.max(1e-12) / a.c_hat.max(1e-12);
        assert!(ratio < 3.0, "ratio {ratio} ({} vs {})", a.c_hat, b.c_hat);
    }

    #[test]
    fn harnack_validates_preconditions() {
        let model = build_preset("flat", 32).unwrap();
        let policy = coarse_policy();
        assert!(harnack_diag(&model, 0.25, 0.1, 1.0, &policy).is_err());
    }

    #[test]
    fn experiments_rerun_identically() {
        let model = build_preset("asymmetric-ratchet", 64).unwrap();
        let policy = coarse_policy();
        let a = transport(&model, &[1.0 / 16.0], 0.5, &policy).unwrap();
        let b = transport(&model, &[1.0 / 16.0], 0.5, &policy).unwrap();
        assert_eq!(a, b);
    }
}
