//! Acceptance suite: every release-gating criterion runs here at its stated
//! tolerance and prints one pass/fail line (visible with `--nocapture`).
//!
//! Run with: `cargo test --release -p ratchet-core --test acceptance`

use std::time::Instant;

use ratchet_core::cell::{adjoint_eigenpair, assemble, dhbar, hbar_only, solve_cell};
use ratchet_core::effective::{check_convexity, coercivity_check, legendre, sweep, velocity};
use ratchet_core::experiments::{
    harnack_diag, multimass, profile_compare, transport, ResolutionPolicy,
};
use ratchet_core::fokker_planck::{Bump, DomainSpec, SimState};
use ratchet_core::model::{build_preset, MotorModel};

const PRESETS: [&str; 3] = ["flat", "symmetric", "asymmetric-ratchet"];
const GRID: usize = 128;

fn preset(name: &str) -> MotorModel {
    build_preset(name, 64).expect("preset")
}

struct Criterion {
    name: &'static str,
    start: Instant,
}

impl Criterion {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            start: Instant::now(),
        }
    }

    fn check(&self, pass: bool, detail: &str) {
        let elapsed = self.start.elapsed();
        println!(
            "[{}] {} ({elapsed:.2?}) {detail}",
            if pass { "PASS" } else { "FAIL" },
            self.name,
        );
        assert!(pass, "{}: {detail}", self.name);
    }
}

#[test]
fn criterion_01_hbar_vanishes_at_origin() {
    let c = Criterion::new("criterion 1: Hbar(0) = 0 for all presets at N = 128");
    let mut worst = 0.0f64;
    for name in PRESETS {
        let h = hbar_only(&preset(name), 0.0, GRID).expect("solve");
        worst = worst.max(h.abs());
    }
    c.check(worst < 1e-8, &format!("max |Hbar(0)| = {worst:.2e}"));
}

#[test]
fn criterion_02_flat_model_is_analytic() {
    let c = Criterion::new("criterion 2: flat model reproduces Hbar = p^2, DHbar = 2p");
    let table = sweep(&preset("flat"), -2.0, 2.0, 41, GRID).expect("sweep");
    let mut err_h = 0.0f64;
    let mut err_g = 0.0f64;
    for (i, &p) in table.p.iter().enumerate() {
        err_h = err_h.max((table.hbar[i] - p * p).abs());
        err_g = err_g.max((table.dhbar[i] - 2.0 * p).abs());
    }
    c.check(
        err_h < 1e-6 && err_g < 1e-6,
        &format!("max |Hbar - p^2| = {err_h:.2e}, max |DHbar - 2p| = {err_g:.2e}"),
    );
}

#[test]
fn criterion_03_gradient_formula_matches_finite_differences() {
    let c = Criterion::new("criterion 3: adjoint gradient formula vs central differences");
    let model = preset("asymmetric-ratchet");
    let delta = 1e-4;
    let mut worst = 0.0f64;
    for i in 0..21 {
        let p = -2.0 + 4.0 * i as f64 / 20.0;
        let sol = solve_cell(&model, p, GRID).expect("solve");
        let g = dhbar(&sol, &model).expect("dhbar");
        let fd = (hbar_only(&model, p + delta, GRID).unwrap()
            - hbar_only(&model, p - delta, GRID).unwrap())
            / (2.0 * delta);
        worst = worst.max((g - fd).abs());
    }
    c.check(worst < 1e-4, &format!("max |dhbar - FD| = {worst:.2e}"));
}

#[test]
fn criterion_04_structure_certificates() {
    let c = Criterion::new("criterion 4: convexity and coercivity certificates");
    let mut detail = String::new();
    let mut pass = true;
    for name in PRESETS {
        let model = preset(name);
        let (lo, hi) = if name == "symmetric" {
            (-3.0, 3.0)
        } else {
            (-2.0, 2.0)
        };
        let table = sweep(&model, lo, hi, 21, GRID).expect("sweep");
        let conv = check_convexity(&table);
        let coer = coercivity_check(&model, &table);
        pass &= conv.pass && conv.margin > 0.0 && coer.pass;
        detail.push_str(&format!(
            "{name}: margin {:.2e}, slack {:.2e}; ",
            conv.margin, coer.min_slack
        ));
    }
    c.check(pass, &detail);
}

#[test]
fn criterion_05_adjoint_trivial_solution_at_origin() {
    let c = Criterion::new("criterion 5: adjoint eigenvector constant at p = 0");
    let mut worst = 0.0f64;
    for name in PRESETS {
        let model = preset(name);
        let op = assemble(&model, 0.0, GRID).expect("assemble");
        let adj = adjoint_eigenpair(&op, 1e-11).expect("adjoint");
        let mean = adj.iter().sum::<f64>() / adj.len() as f64;
        let dev = adj
            .iter()
            .map(|v| (v / mean - 1.0).abs())
            .fold(0.0f64, f64::max);
        worst = worst.max(dev);
    }
    c.check(worst < 1e-8, &format!("max deviation = {worst:.2e}"));
}

#[test]
fn criterion_06_legendre_self_consistency() {
    let c = Criterion::new("criterion 6: Hstar(vbar) = 0, positivity away, Fenchel");
    let mut pass = true;
    let mut detail = String::new();
    for name in PRESETS {
        let model = preset(name);
        let report = velocity(&model, GRID).expect("velocity");
        let at_vbar_ok = report.hstar_at_vbar.abs() < 1e-6;
        let mut away_ok = true;
        for dq in [-0.5, 0.5] {
            let h = legendre(&model, report.v_bar + dq, GRID).expect("legendre");
            away_ok &= h > 0.0;
        }
        // Fenchel inequality over sampled (p, q) pairs.
        let table = sweep(&model, -1.5, 1.5, 13, GRID).expect("sweep");
        let mut fenchel_ok = true;
        for q in [
            report.v_bar - 0.5,
            report.v_bar,
            report.v_bar + 0.5,
            -1.0,
            1.0,
        ] {
            let hstar = legendre(&model, q, GRID).expect("legendre");
            for (i, &p) in table.p.iter().enumerate() {
                fenchel_ok &= hstar >= p * q - table.hbar[i] - 1e-9;
            }
        }
        pass &= at_vbar_ok && away_ok && fenchel_ok;
        detail.push_str(&format!(
            "{name}: Hstar(vbar) = {:.1e}; ",
            report.hstar_at_vbar
        ));
    }
    c.check(pass, &detail);
}

#[test]
fn criterion_07_mass_conservation_over_1000_steps() {
    let c = Criterion::new("criterion 7: 1000-step mass conservation at eps = 1/32");
    let model = preset("asymmetric-ratchet");
    let eps = 1.0 / 32.0;
    let mut state = SimState::init(
        &model,
        eps,
        DomainSpec {
            periods: 160,
            cells_per_period: 64,
        },
        &[Bump {
            center: 0.0,
            mass: 1.0,
        }],
        2.0,
    )
    .expect("init");
    let dt = 0.9 * state.max_stable_dt();
    let snaps = state.run(1000.0 * dt, dt, 100).expect("run");
    let drift = snaps
        .iter()
        .map(|d| ((d.total - state.initial_mass) / state.initial_mass).abs())
        .fold(0.0f64, f64::max);
    c.check(drift < 1e-11, &format!("max relative drift = {drift:.2e}"));
}

#[test]
fn criterion_08_transport_velocity_convergence() {
    let c = Criterion::new("criterion 8: transport toward vbar across eps");
    let model = preset("asymmetric-ratchet");
    let policy = ResolutionPolicy::default();
    let report =
        transport(&model, &[1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0], 1.0, &policy).expect("transport");
    let last = report.rows.last().unwrap();
    // |vbar| < 0.2 for this preset, so the absolute branch applies.
    let final_ok = if report.v_bar.abs() < 0.2 {
        last.abs_error < 0.02
    } else {
        last.abs_error < 0.1 * report.v_bar.abs()
    };
    let outside_ok = report
        .rows
        .windows(2)
        .all(|w| w[1].final_outside_fraction <= w[0].final_outside_fraction + 1e-12);
    let errs: Vec<String> = report
        .rows
        .iter()
        .map(|r| format!("{:.3e}", r.abs_error))
        .collect();
    c.check(
        report.monotone_ok && final_ok && outside_ok,
        &format!(
            "vbar = {:.4e}, errors = [{}], outside fractions shrink: {outside_ok}",
            report.v_bar,
            errs.join(", ")
        ),
    );
}

#[test]
fn criterion_09_zero_velocity_controls() {
    let c =
        Criterion::new("criterion 9: symmetric/flat controls stay put; flat spread is diffusive");
    let policy = ResolutionPolicy::default();
    let mut pass = true;
    let mut detail = String::new();
    for name in ["symmetric", "flat"] {
        let model = preset(name);
        let report = transport(&model, &[1.0 / 16.0, 1.0 / 32.0], 1.0, &policy).expect("transport");
        for row in &report.rows {
            let bound = 3.0 * row.cell_width / report.horizon;
            pass &= row.v_measured.abs() <= bound;
            detail.push_str(&format!(
                "{name} eps {:.4}: |v| = {:.1e} (<= {:.1e}); ",
                row.epsilon,
                row.v_measured.abs(),
                bound
            ));
        }
    }
    // Heat-kernel spread oracle on the flat preset.
    let model = preset("flat");
    let eps = 1.0 / 32.0;
    let mut state = SimState::init(
        &model,
        eps,
        DomainSpec {
            periods: 256,
            cells_per_period: 64,
        },
        &[Bump {
            center: 0.0,
            mass: 1.0,
        }],
        2.0,
    )
    .expect("init");
    let dt = state.h;
    state.run(1.0, dt, usize::MAX).expect("run");
    let spread = state.diagnostics().spread;
    let expected = (2.0 * eps * 1.0f64).sqrt();
    let rel = (spread - expected).abs() / expected;
    pass &= rel < 0.05;
    detail.push_str(&format!("flat spread rel err = {rel:.3}"));
    c.check(pass, &detail);
}

#[test]
fn criterion_10_multibump_transport() {
    let c = Criterion::new("criterion 10: two bumps keep masses in translated windows");
    let model = preset("asymmetric-ratchet");
    let policy = ResolutionPolicy::default();
    let report = multimass(
        &model,
        1.0 / 32.0,
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
    .expect("multimass");
    let splits: Vec<String> = report
        .windows
        .iter()
        .map(|w| format!("{:.4}/{:.4}", w.window_mass, w.initial_mass))
        .collect();
    c.check(
        report.union_fraction >= 1.0 - 1e-3 && report.split_ok,
        &format!(
            "union fraction = {:.6}, windows = [{}]",
            report.union_fraction,
            splits.join(", ")
        ),
    );
}

#[test]
fn criterion_11_hopf_lax_profile() {
    let c = Criterion::new("criterion 11: rate profile matches Hopf-Lax; argmin at t vbar");
    let policy = ResolutionPolicy::default();
    let mut pass = true;
    let mut detail = String::new();

    // Flat preset at eps = 1/64: sup gap on |x| <= 1/2 below 0.15 against x^2/4.
    let flat_report = profile_compare(&preset("flat"), 1.0 / 64.0, 1.0, &policy).expect("profile");
    pass &= flat_report.sup_gap_half < 0.15;
    for (x, _, hopf) in &flat_report.samples {
        pass &= (hopf - x * x / 4.0).abs() < 1e-5;
    }
    detail.push_str(&format!("flat sup gap = {:.4}; ", flat_report.sup_gap_half));

    // Argmin criterion for all presets.
    for name in PRESETS {
        let eps = if name == "flat" {
            1.0 / 64.0
        } else {
            1.0 / 32.0
        };
        let report = profile_compare(&preset(name), eps, 1.0, &policy).expect("profile");
        pass &= report.argmin_distance <= report.argmin_tol;
        detail.push_str(&format!(
            "{name}: argmin dist {:.4} (tol {:.4}); ",
            report.argmin_distance, report.argmin_tol
        ));
    }
    c.check(pass, &detail);
}

#[test]
fn criterion_12_diagnostics_boundedness() {
    let c = Criterion::new("criterion 12: Harnack constant bounded; envelope never violated");
    let model = preset("asymmetric-ratchet");
    let policy = ResolutionPolicy::default();
    let coarse = harnack_diag(&model, 1.0 / 16.0, 0.25, 1.0, &policy).expect("harnack");
    let fine = harnack_diag(&model, 1.0 / 32.0, 0.25, 1.0, &policy).expect("harnack");
    let ratio = fine.c_hat.max(1e-12) / coarse.c_hat.max(1e-12);
    let harnack_ok = coarse.c_hat.is_finite() && fine.c_hat.is_finite() && ratio < 3.0;

    // Envelope diagnostic over a full run.
    let eps = 1.0 / 32.0;
    let mut state = SimState::init(
        &model,
        eps,
        DomainSpec {
            periods: 256,
            cells_per_period: 64,
        },
        &[Bump {
            center: 0.0,
            mass: 1.0,
        }],
        2.0,
    )
    .expect("init");
    let dt = 0.9 * state.max_stable_dt();
    let snaps = state.run(1.0, dt, 500).expect("run");
    let worst_margin = snaps
        .iter()
        .map(|d| d.envelope_margin)
        .fold(f64::NEG_INFINITY, f64::max);
    let envelope_ok = worst_margin <= 1e-9;

    c.check(
        harnack_ok && envelope_ok,
        &format!(
            "C_hat = {:.3} -> {:.3} (ratio {ratio:.2}), max envelope margin = {worst_margin:.2e}",
            coarse.c_hat, fine.c_hat
        ),
    );
}
