//! Mapping out the effective Hamiltonian over momentum space and the derived
//! objects: structural certificates (midpoint convexity, quadratic
//! coercivity), the Legendre transform `Hstar`, the transport velocity
//! `vbar = DHbar(0)`, and the Hopf-Lax profile `R(x,t) = t Hstar(x/t)` of the
//! limit problem with point initial data.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::cell::{dhbar, solve_cell};
use crate::defaults;
use crate::model::MotorModel;
use crate::output::write_atomic;
use crate::{Error, Result};

/// Sampled map `p -> (Hbar(p), DHbar(p))` on a uniform momentum grid.
#[derive(Debug, Clone, PartialEq)]
pub struct HbarTable {
    pub p: Vec<f64>,
    pub hbar: Vec<f64>,
    pub dhbar: Vec<f64>,
    pub fingerprint: String,
    /// Cell grid used for every entry.
    pub n: usize,
}

impl HbarTable {
    /// The `Hbar` entry at `p = 0`, if the grid contains it.
    pub fn hbar_at_zero(&self) -> Option<f64> {
        self.p
            .iter()
            .position(|p| p.abs() < 1e-12)
            .map(|i| self.hbar[i])
    }

    /// CSV with header `p,hbar,dhbar`, full float precision.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("p,hbar,dhbar\n");
        for i in 0..self.p.len() {
            out.push_str(&format!(
                "{:.16e},{:.16e},{:.16e}\n",
                self.p[i], self.hbar[i], self.dhbar[i]
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_csv())
    }

    /// JSON sidecar holding the provenance of the table.
    pub fn sidecar_json(&self) -> String {
        let v = serde_json::json!({
            "fingerprint": self.fingerprint,
            "grid_n": self.n,
            "eig_tol": defaults::EIG_TOL,
            "count": self.p.len(),
            "p_min": self.p.first(),
            "p_max": self.p.last(),
        });
        serde_json::to_string_pretty(&v).expect("sidecar json")
    }

    /// Reads a table back from its CSV form (fingerprint and grid unknown).
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut p = Vec::new();
        let mut hbar = Vec::new();
        let mut dh = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if lineno == 0 {
                if line.trim() != "p,hbar,dhbar" {
                    return Err(Error::InvalidArgument(format!(
                        "unexpected table header `{line}`"
                    )));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(Error::InvalidArgument(format!(
                    "table line {} has {} columns",
                    lineno + 1,
                    cols.len()
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                s.trim()
                    .parse()
                    .map_err(|e| Error::InvalidArgument(format!("bad float `{s}`: {e}")))
            };
            p.push(parse(cols[0])?);
            hbar.push(parse(cols[1])?);
            dh.push(parse(cols[2])?);
        }
        Ok(HbarTable {
            p,
            hbar,
            dhbar: dh,
            fingerprint: String::new(),
            n: 0,
        })
    }
}

/// Solves the cell problem on a uniform momentum grid. Entries are
/// independent and run in parallel; failures carry the offending momentum.
pub fn sweep(
    model: &MotorModel,
    p_min: f64,
    p_max: f64,
    count: usize,
    n: usize,
) -> Result<HbarTable> {
    if count < 3 {
        return Err(Error::InvalidArgument(format!(
            "sweep needs at least 3 points, got {count}"
        )));
    }
    if p_min.is_nan() || p_max.is_nan() || p_min >= p_max {
        return Err(Error::InvalidArgument(format!(
            "need p_min < p_max, got [{p_min}, {p_max}]"
        )));
    }
    let ps: Vec<f64> = (0..count)
        .map(|i| p_min + (p_max - p_min) * i as f64 / (count - 1) as f64)
        .collect();
    let entries: Vec<(f64, f64)> = ps
        .par_iter()
        .map(|&p| -> Result<(f64, f64)> {
            let sol = solve_cell(model, p, n).map_err(|e| Error::SweepEntry {
                p,
                source: Box::new(e),
            })?;
            let g = dhbar(&sol, model).map_err(|e| Error::SweepEntry {
                p,
                source: Box::new(e),
            })?;
            Ok((sol.hbar, g))
        })
        .collect::<Result<_>>()?;
    Ok(HbarTable {
        p: ps,
        hbar: entries.iter().map(|e| e.0).collect(),
        dhbar: entries.iter().map(|e| e.1).collect(),
        fingerprint: model.fingerprint(),
        n,
    })
}

/// Midpoint-convexity certificate over the table grid.
#[derive(Debug, Clone, Serialize)]
pub struct ConvexityReport {
    pub pass: bool,
    /// Smallest midpoint gap `(Hbar(p_i)+Hbar(p_j))/2 - Hbar(mid)`.
    pub margin: f64,
    /// Violating triples `(i, mid, j)` by table index.
    pub violations: Vec<(usize, usize, usize)>,
}

/// Checks strict midpoint convexity for every grid pair whose midpoint is a
/// grid point. A `1e-10` slack absorbs roundoff between equal values.
pub fn check_convexity(table: &HbarTable) -> ConvexityReport {
    let m = table.p.len();
    let mut margin = f64::INFINITY;
    let mut violations = Vec::new();
    for i in 0..m {
        for j in (i + 2)..m {
            if (i + j) % 2 != 0 {
                continue;
            }
            let mid = (i + j) / 2;
            let gap = 0.5 * (table.hbar[i] + table.hbar[j]) - table.hbar[mid];
            margin = margin.min(gap);
            if gap <= 1e-10 {
                violations.push((i, mid, j));
            }
        }
    }
    ConvexityReport {
        pass: violations.is_empty() && margin > 1e-10,
        margin,
        violations,
    }
}

impl fmt::Display for ConvexityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "convexity: {} (min midpoint margin {:.3e}, {} violations)",
            if self.pass { "PASS" } else { "FAIL" },
            self.margin,
            self.violations.len()
        )
    }
}

/// Coercivity certificate `Hbar(p) >= |p|^2 - C(p)` with
/// `C(p) = max|Lap psi| + |p| max|Dpsi| + max nu1` from the field samples.
#[derive(Debug, Clone, Serialize)]
pub struct CoercivityReport {
    pub pass: bool,
    /// Smallest slack `Hbar(p) - |p|^2 + C(p)` over the table.
    pub min_slack: f64,
    pub violations: Vec<usize>,
}

pub fn coercivity_check(model: &MotorModel, table: &HbarTable) -> CoercivityReport {
    let (dpsi_max, ddpsi_max) = potential_norms(model);
    let nu1_max = model.nu1.max_abs();
    let mut min_slack = f64::INFINITY;
    let mut violations = Vec::new();
    for (i, (&p, &h)) in table.p.iter().zip(&table.hbar).enumerate() {
        let c = ddpsi_max + p.abs() * dpsi_max + nu1_max;
        let slack = h - (p * p - c);
        min_slack = min_slack.min(slack);
        if slack < 0.0 {
            violations.push(i);
        }
    }
    CoercivityReport {
        pass: violations.is_empty(),
        min_slack,
        violations,
    }
}

impl fmt::Display for CoercivityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "coercivity: {} (min slack {:.3e}, {} violations)",
            if self.pass { "PASS" } else { "FAIL" },
            self.min_slack,
            self.violations.len()
        )
    }
}

/// Sup-norm of the first and second potential derivatives, maximized over the
/// species potentials that are present.
fn potential_norms(model: &MotorModel) -> (f64, f64) {
    let mut d = model.psi.derivative(1).max_abs();
    let mut dd = model.psi.derivative(2).max_abs();
    if let Some(psi2) = &model.psi2 {
        d = d.max(psi2.derivative(1).max_abs());
        dd = dd.max(psi2.derivative(2).max_abs());
    }
    (d, dd)
}

/// Legendre transform `Hstar(q) = sup_p (q p - Hbar(p))`.
///
/// The supremum is located by solving the stationarity condition
/// `q = DHbar(p)` (monotone in `p` by strict convexity) with a safeguarded
/// false-position iteration inside an expanding bracket derived from the
/// coercivity bound.
pub fn legendre(model: &MotorModel, q: f64, n: usize) -> Result<f64> {
    legendre_searched(model, q, n, None).map(|r| r.value)
}

/// Result of a conjugate search; the maximizer doubles as a warm start.
#[derive(Debug, Clone, Copy)]
pub struct ConjugatePoint {
    pub value: f64,
    pub p_star: f64,
}

pub fn legendre_searched(
    model: &MotorModel,
    q: f64,
    n: usize,
    warm: Option<f64>,
) -> Result<ConjugatePoint> {
    let cap = defaults::LEGENDRE_P_CAP;
    let tol = defaults::LEGENDRE_GRAD_TOL;
    // Evaluates f(p) = DHbar(p) - q, returning Hbar(p) alongside.
    let eval = |p: f64| -> Result<(f64, f64)> {
        let sol = solve_cell(model, p, n)?;
        let g = dhbar(&sol, model)?;
        Ok((g - q, sol.hbar))
    };

    let (dpsi_max, ddpsi_max) = potential_norms(model);
    let radius = match warm {
        Some(_) => 0.5,
        None => 0.5 * (q.abs() + dpsi_max) + 1.0 + (ddpsi_max + model.nu1.max_abs()).sqrt(),
    };
    let center = warm.unwrap_or(0.0);
    let mut lo = center - radius;
    let mut hi = center + radius;
    let (mut flo, mut hlo) = eval(lo)?;
    if flo.abs() < tol {
        return Ok(ConjugatePoint {
            value: q * lo - hlo,
            p_star: lo,
        });
    }
    let (mut fhi, mut hhi) = eval(hi)?;
    if fhi.abs() < tol {
        return Ok(ConjugatePoint {
            value: q * hi - hhi,
            p_star: hi,
        });
    }
    // Expand until the gradient changes sign (it is increasing in p).
    while flo > 0.0 {
        lo -= hi - lo;
        if lo < -cap {
            return Err(Error::BracketFailure { q, cap });
        }
        let r = eval(lo)?;
        flo = r.0;
        hlo = r.1;
    }
    while fhi < 0.0 {
        hi += hi - lo;
        if hi > cap {
            return Err(Error::BracketFailure { q, cap });
        }
        let r = eval(hi)?;
        fhi = r.0;
        hhi = r.1;
    }
    if flo.abs() < tol {
        return Ok(ConjugatePoint {
            value: q * lo - hlo,
            p_star: lo,
        });
    }
    if fhi.abs() < tol {
        return Ok(ConjugatePoint {
            value: q * hi - hhi,
            p_star: hi,
        });
    }

    // Illinois false position on the monotone gradient.
    let mut side = 0i8;
    for _ in 0..200 {
        let denom = fhi - flo;
        let mut p_new = if denom.abs() > 1e-300 {
            hi - fhi * (hi - lo) / denom
        } else {
            0.5 * (lo + hi)
        };
        if !(p_new > lo && p_new < hi) {
            p_new = 0.5 * (lo + hi);
        }
        let (f_new, h_new) = eval(p_new)?;
        if f_new.abs() < tol || (hi - lo) < 1e-13 {
            return Ok(ConjugatePoint {
                value: q * p_new - h_new,
                p_star: p_new,
            });
        }
        if f_new < 0.0 {
            lo = p_new;
            flo = f_new;
            if side == -1 {
                fhi *= 0.5;
            }
            side = -1;
        } else {
            hi = p_new;
            fhi = f_new;
            if side == 1 {
                flo *= 0.5;
            }
            side = 1;
        }
    }
    Err(Error::NoConvergence { iterations: 200 })
}

/// The transport velocity and its self-checks.
#[derive(Debug, Clone, Serialize)]
pub struct VelocityReport {
    pub v_bar: f64,
    /// `Hstar(v_bar)`; vanishes when the conjugate pair is consistent.
    pub hstar_at_vbar: f64,
    /// Coercivity constant `C(0)` used in the bound check.
    pub coercivity_c: f64,
}

/// `vbar = DHbar(0)` plus the conjugate self-check `Hstar(vbar) = 0`.
pub fn velocity(model: &MotorModel, n: usize) -> Result<VelocityReport> {
    let sol = solve_cell(model, 0.0, n)?;
    let v_bar = dhbar(&sol, model)?;
    let hstar_at_vbar = legendre(model, v_bar, n)?;
    let (_, ddpsi_max) = potential_norms(model);
    Ok(VelocityReport {
        v_bar,
        hstar_at_vbar,
        coercivity_c: ddpsi_max + model.nu1.max_abs(),
    })
}

/// Hopf-Lax profile of the limit problem with point initial data:
/// `R(x, t) = t Hstar(x/t)`, evaluated over `x_grid`. Warm starts follow the
/// grid in sorted order, so neighbouring maximizers seed each other.
pub fn hopf_lax_profile(model: &MotorModel, t: f64, x_grid: &[f64], n: usize) -> Result<Vec<f64>> {
    if t.is_nan() || t <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "hopf-lax time must be positive, got {t}"
        )));
    }
    let mut order: Vec<usize> = (0..x_grid.len()).collect();
    order.sort_by(|&a, &b| x_grid[a].total_cmp(&x_grid[b]));
    let mut out = vec![0.0; x_grid.len()];
    let mut warm: Option<f64> = None;
    for idx in order {
        let q = x_grid[idx] / t;
        let point = match legendre_searched(model, q, n, warm) {
            Ok(p) => p,
            // A stale warm start can strand the bracket; retry cold.
            Err(Error::BracketFailure { .. }) if warm.is_some() => {
                legendre_searched(model, q, n, None)?
            }
            Err(e) => return Err(e),
        };
        warm = Some(point.p_star);
        out[idx] = t * point.value;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_preset;

    #[test]
    fn flat_sweep_is_p_squared() {
        let model = build_preset("flat", 32).unwrap();
        let table = sweep(&model, -2.0, 2.0, 41, 32).unwrap();
        for (i, &p) in table.p.iter().enumerate() {
            assert!((table.hbar[i] - p * p).abs() < 1e-7, "p = {p}");
            assert!((table.dhbar[i] - 2.0 * p).abs() < 1e-7, "p = {p}");
        }
        assert!(table.hbar_at_zero().unwrap().abs() < 1e-8);
    }

    #[test]
    fn sweep_validates_arguments() {
        let model = build_preset("flat", 32).unwrap();
        assert!(sweep(&model, -1.0, 1.0, 2, 32).is_err());
        assert!(sweep(&model, 1.0, -1.0, 5, 32).is_err());
    }

    #[test]
    fn sweep_error_names_offending_momentum() {
        let model = build_preset("asymmetric-ratchet", 32).unwrap();
        // p = 20 violates the Peclet bound at N = 16.
        let err = sweep(&model, -20.0, 20.0, 5, 16).unwrap_err();
        match err {
            Error::SweepEntry { p, source } => {
                assert!(p.abs() > 9.0);
                assert!(matches!(*source, Error::PecletViolation { .. }));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn symmetric_sweep_is_even() {
        let model = build_preset("symmetric", 64).unwrap();
        let table = sweep(&model, -1.0, 1.0, 21, 64).unwrap();
        let m = table.p.len();
        for i in 0..m {
            assert!(
                (table.hbar[i] - table.hbar[m - 1 - i]).abs() < 1e-8,
                "asymmetry at p = {}",
                table.p[i]
            );
        }
    }

    #[test]
    fn convexity_passes_on_square() {
        let model = build_preset("flat", 32).unwrap();
        let table = sweep(&model, -2.0, 2.0, 21, 32).unwrap();
        let report = check_convexity(&table);
        assert!(report.pass);
        // Adjacent-pair margin for p^2 on a uniform grid is (2 dp)^2 / 4.
        let dp = table.p[1] - table.p[0];
        assert!((report.margin - dp * dp).abs() < 1e-7);
    }

    #[test]
    fn convexity_flags_corrupted_entry() {
        let model = build_preset("flat", 32).unwrap();
        let mut table = sweep(&model, -2.0, 2.0, 21, 32).unwrap();
        // Lowering one entry pulls chords through it below their midpoints.
        table.hbar[10] -= 1.0;
        let report = check_convexity(&table);
        assert!(!report.pass);
        assert!(report
            .violations
            .iter()
            .any(|&(i, mid, j)| i == 10 || mid == 10 || j == 10));
    }

    #[test]
    fn coercivity_flat_has_unit_slack() {
        let model = build_preset("flat", 32).unwrap();
        let table = sweep(&model, -2.0, 2.0, 9, 32).unwrap();
        let report = coercivity_check(&model, &table);
        assert!(report.pass);
        // Bound reads p^2 >= p^2 - 1 for this model.
        assert!((report.min_slack - 1.0).abs() < 1e-6);
    }

    #[test]
    fn coercivity_passes_on_presets() {
        for preset in ["asymmetric-ratchet", "symmetric"] {
            let model = build_preset(preset, 64).unwrap();
            let (lo, hi) = if preset == "symmetric" {
                (-3.0, 3.0)
            } else {
                (-2.0, 2.0)
            };
            let table = sweep(&model, lo, hi, 13, 64).unwrap();
            let report = coercivity_check(&model, &table);
            assert!(report.pass, "{preset}: {report}");
        }
    }

    #[test]
    fn legendre_of_square_is_quarter_square() {
        let model = build_preset("flat", 32).unwrap();
        let h = legendre(&model, 2.0, 32).unwrap();
        assert!((h - 1.0).abs() < 1e-6, "Hstar(2) = {h}");
    }

    #[test]
    fn legendre_vanishes_at_vbar_and_grows_away() {
        for preset in ["flat", "symmetric", "asymmetric-ratchet"] {
            let model = build_preset(preset, 64).unwrap();
            let report = velocity(&model, 64).unwrap();
            assert!(
                report.hstar_at_vbar.abs() < 1e-6,
                "{preset}: Hstar(vbar) = {}",
                report.hstar_at_vbar
            );
            for dq in [-0.5, 0.5] {
                let h = legendre(&model, report.v_bar + dq, 64).unwrap();
                assert!(h > 0.0, "{preset}: Hstar(vbar{dq:+}) = {h}");
            }
        }
    }

    #[test]
    fn fenchel_inequality_on_table_nodes() {
        let model = build_preset("asymmetric-ratchet", 64).unwrap();
        let table = sweep(&model, -1.5, 1.5, 13, 64).unwrap();
        for q in [-0.8, -0.1, 0.0, 0.4, 1.2] {
            let hstar = legendre(&model, q, 64).unwrap();
            for (i, &p) in table.p.iter().enumerate() {
                assert!(
                    hstar >= p * q - table.hbar[i] - 1e-9,
                    "Fenchel violated at p = {p}, q = {q}"
                );
            }
        }
    }

    #[test]
    fn biconjugate_recovers_hbar() {
        let model = build_preset("asymmetric-ratchet", 64).unwrap();
        let v = velocity(&model, 64).unwrap().v_bar;
        // Conjugate pairs q = DHbar(p) cover the table range; the grid must be
        // fine enough that the discrete sup is within 1e-4 of the true one.
        let qs: Vec<f64> = (0..401).map(|i| v - 4.0 + 8.0 * i as f64 / 400.0).collect();
        let mut hstars = Vec::new();
        let mut warm = None;
        for &q in &qs {
            let pt = legendre_searched(&model, q, 64, warm).unwrap();
            warm = Some(pt.p_star);
            hstars.push(pt.value);
        }
        for p in [-0.9, 0.0, 0.7] {
            let direct = crate::cell::hbar_only(&model, p, 64).unwrap();
            let bi = qs
                .iter()
                .zip(&hstars)
                .map(|(q, hs)| p * q - hs)
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((bi - direct).abs() < 1e-4, "p = {p}: {bi} vs {direct}");
        }
    }

    #[test]
    fn velocity_asymmetric_matches_golden_value() {
        // Fine-grid self-oracle: value computed at N = 256 and frozen; the
        // finite-difference derivative of Hbar cross-checks it.
        let model = build_preset("asymmetric-ratchet", 64).unwrap();
        let golden = 5.295417796986e-2;
        let report = velocity(&model, 256).unwrap();
        assert!(
            (report.v_bar - golden).abs() < 1e-9,
            "vbar = {:.12e} vs golden {golden:.12e}",
            report.v_bar
        );
        let delta = 1e-4;
        let fd = (crate::cell::hbar_only(&model, delta, 256).unwrap()
            - crate::cell::hbar_only(&model, -delta, 256).unwrap())
            / (2.0 * delta);
        assert!((report.v_bar - fd).abs() < 1e-6, "fd cross-check {fd:.6e}");
    }

    #[test]
    fn velocity_zero_for_symmetric_models() {
        for preset in ["flat", "symmetric"] {
            let model = build_preset(preset, 64).unwrap();
            let report = velocity(&model, 64).unwrap();
            assert!(
                report.v_bar.abs() < 1e-7,
                "{preset}: vbar = {}",
                report.v_bar
            );
        }
    }

    #[test]
    fn hopf_lax_flat_profile() {
        let model = build_preset("flat", 32).unwrap();
        let profile = hopf_lax_profile(&model, 1.0, &[2.0], 32).unwrap();
        assert!((profile[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn hopf_lax_nonnegative_with_zero_at_tvbar() {
        let model = build_preset("asymmetric-ratchet", 64).unwrap();
        let v = velocity(&model, 64).unwrap().v_bar;
        let t = 1.0;
        // At x = t vbar the profile vanishes.
        let at_center = hopf_lax_profile(&model, t, &[t * v], 64).unwrap()[0];
        assert!(at_center.abs() < 1e-6, "R(t vbar, t) = {at_center}");
        let xs: Vec<f64> = (0..101).map(|i| -2.0 + 4.0 * i as f64 / 100.0).collect();
        let profile = hopf_lax_profile(&model, t, &xs, 64).unwrap();
        let mut min_val = f64::INFINITY;
        let mut argmin = 0.0;
        for (x, r) in xs.iter().zip(&profile) {
            assert!(*r >= -1e-9, "negative profile value {r} at x = {x}");
            if *r < min_val {
                min_val = *r;
                argmin = *x;
            }
        }
        let dx = xs[1] - xs[0];
        assert!(
            (argmin - t * v).abs() <= dx + 1e-9,
            "argmin {argmin} vs t vbar {}",
            t * v
        );
        // Away from the zero the profile is strictly positive.
        for (x, r) in xs.iter().zip(&profile) {
            if (x - t * v).abs() > 1e-3 + dx {
                assert!(*r > 0.0, "profile not positive at x = {x}");
            }
        }
    }

    #[test]
    fn table_csv_roundtrip() {
        let model = build_preset("flat", 32).unwrap();
        let table = sweep(&model, -1.0, 1.0, 5, 32).unwrap();
        let parsed = HbarTable::from_csv(&table.to_csv()).unwrap();
        assert_eq!(table.p, parsed.p);
        assert_eq!(table.hbar, parsed.hbar);
        assert_eq!(table.dhbar, parsed.dhbar);
    }
}
