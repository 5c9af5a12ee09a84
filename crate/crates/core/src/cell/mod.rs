//! The discrete cell problem: for one momentum `p`, assemble the coupled
//! periodic operator acting on the positive unknowns `(w1, w2)`, extract the
//! principal eigenpair and its adjoint, and recover `Hbar(p)`, the correctors
//! `phi_i = -ln w_i`, and the gradient `DHbar(p)`.
//!
//! The operator rows read, per species (species 2 drops the potential terms
//! unless a second potential is present):
//!
//! ```text
//! -Lap w1 + 2p.D w1 - div(Dpsi w1) + (-|p|^2 + p.Dpsi + nu1) w1 - nu2 w2 = -Hbar(p) w1
//! -Lap w2 + 2p.D w2                + (-|p|^2          + nu2) w2 - nu1 w1 = -Hbar(p) w2
//! ```
//!
//! so `Hbar(p) = -lambda` with `lambda` the principal eigenvalue. Diffusion
//! and drift use second-order central differences; the conservative term is
//! in flux form with interface averaging, which preserves constants exactly
//! and makes the stacked operator annihilate `(1,1)` in adjoint form at
//! `p = 0` (whence `Hbar(0) = 0` holds at the discrete level).

mod eig;

pub use eig::{gershgorin_lower, perron_eigenpair, require_positive, EigOptions, EigPair};

use nalgebra::{DMatrix, DVector};

use crate::model::{MotorModel, MotorModel2, PeriodicField, PeriodicField2};
use crate::{Error, Result};

/// Smallest admissible cell grid per axis.
pub const MIN_CELL_GRID: usize = 16;

/// Discretized cell operator for one momentum (d = 1).
#[derive(Debug, Clone)]
pub struct DiscreteCellOperator {
    pub p: f64,
    pub n: usize,
    matrix: DMatrix<f64>,
}

impl DiscreteCellOperator {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let x = DVector::from_column_slice(v);
        (&self.matrix * x).as_slice().to_vec()
    }

    /// Shift making `s I - A` entrywise nonnegative (Perron iteration form).
    pub fn nonnegative_shift(&self) -> f64 {
        1.0 + max_abs_row_sum(&self.matrix)
    }
}

/// Discretized cell operator for one momentum (d = 2, tensor grid).
#[derive(Debug, Clone)]
pub struct DiscreteCellOperator2 {
    pub p: [f64; 2],
    pub n: usize,
    matrix: DMatrix<f64>,
}

impl DiscreteCellOperator2 {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

fn max_abs_row_sum(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Full solution of the cell problem at one momentum (d = 1).
#[derive(Debug, Clone)]
pub struct CellSolution {
    pub p: f64,
    pub n: usize,
    /// Effective Hamiltonian value, `-lambda`.
    pub hbar: f64,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    pub w1_adj: Vec<f64>,
    pub w2_adj: Vec<f64>,
    /// Correctors `phi_i = -ln w_i`.
    pub phi1: Vec<f64>,
    pub phi2: Vec<f64>,
    /// Twisted eigenfunctions `chi_i(y) = exp(-p y) w_i(y)`.
    pub chi1: Vec<f64>,
    pub chi2: Vec<f64>,
    /// Max-norm residual of the nonlinear corrector equations evaluated with
    /// spectral derivatives of `phi_i`.
    pub residual: f64,
}

/// Two-dimensional counterpart; fields are row-major over the tensor grid.
#[derive(Debug, Clone)]
pub struct CellSolution2 {
    pub p: [f64; 2],
    pub n: usize,
    pub hbar: f64,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    pub w1_adj: Vec<f64>,
    pub w2_adj: Vec<f64>,
    pub phi1: Vec<f64>,
    pub phi2: Vec<f64>,
    pub residual: f64,
}

// ---------------------------------------------------------------------------
// Assembly
// ---------------------------------------------------------------------------

struct SpeciesData {
    /// Per axis: potential-gradient samples at nodes and at axis interfaces,
    /// `None` when the species has no potential.
    dpsi: Option<Vec<(Vec<f64>, Vec<f64>)>>,
    /// Own switching rate at nodes.
    nu_own: Vec<f64>,
    /// Coupling rate (the other species' rate) at nodes.
    nu_other: Vec<f64>,
}

fn validate_grid(n: usize) -> Result<()> {
    if n < MIN_CELL_GRID || !n.is_multiple_of(2) {
        return Err(Error::InvalidGrid(format!(
            "grid must be even and >= {MIN_CELL_GRID}, got {n}"
        )));
    }
    Ok(())
}

fn even_at_least(x: usize) -> usize {
    let x = x.max(MIN_CELL_GRID);
    if x.is_multiple_of(2) {
        x
    } else {
        x + 1
    }
}

/// Central-difference monotonicity guard: `max|2p - Dpsi| h < 2` over every
/// interface and species. On violation, the suggested grid comes from the
/// conservative bound `2|p| + sup|Dpsi|` probed on a fine grid, so the
/// suggested size always passes.
fn peclet_guard(n: usize, p: &[f64], species: &[SpeciesData], drift_bound: f64) -> Result<()> {
    let h = 1.0 / n as f64;
    let mut vmax = 0.0f64;
    for s in species {
        for (a, pa) in p.iter().enumerate() {
            let iface: Option<&[f64]> = s.dpsi.as_ref().map(|d| d[a].1.as_slice());
            match iface {
                Some(vals) => {
                    for &g in vals {
                        vmax = vmax.max((2.0 * pa - g).abs());
                    }
                }
                None => vmax = vmax.max((2.0 * pa).abs()),
            }
        }
    }
    let peclet = vmax * h;
    if peclet >= 2.0 {
        let n_required = even_at_least((drift_bound / 2.0).floor() as usize + 1);
        return Err(Error::PecletViolation {
            n,
            peclet,
            n_required,
        });
    }
    Ok(())
}

/// Builds the stacked `2 n^dim` operator matrix. Paired entries (flux pairs,
/// reaction coupling) reuse the same computed value so that the stacked
/// constant vector is an exact adjoint null vector at `p = 0`.
fn assemble_matrix(dim: usize, n: usize, p: &[f64], species: &[SpeciesData]) -> DMatrix<f64> {
    let nodes = n.pow(dim as u32);
    let total = 2 * nodes;
    let h = 1.0 / n as f64;
    let inv_h2 = 1.0 / (h * h);
    let mut m = DMatrix::zeros(total, total);

    // Axis strides in the row-major node index.
    let stride = |a: usize| n.pow(a as u32);

    for (s, data) in species.iter().enumerate() {
        let base = s * nodes;
        for idx in 0..nodes {
            let row = base + idx;
            for a in 0..dim {
                let st = stride(a);
                let coord = (idx / st) % n;
                let up = idx - coord * st + ((coord + 1) % n) * st;
                let dn = idx - coord * st + ((coord + n - 1) % n) * st;

                // Diffusion -Lap.
                m[(row, base + up)] -= inv_h2;
                m[(row, base + dn)] -= inv_h2;
                m[(row, row)] += 2.0 * inv_h2;

                // Drift 2 p . D (central).
                let q = p[a] / h;
                m[(row, base + up)] += q;
                m[(row, base + dn)] -= q;

                // Conservative -div(Dpsi w) in flux form.
                if let Some(dpsi) = &data.dpsi {
                    let iface = &dpsi[a].1;
                    // Interface k+1/2 along axis `a` is indexed by the node index.
                    let gp = iface[idx] / (2.0 * h);
                    let gm = iface[dn] / (2.0 * h);
                    m[(row, base + up)] -= gp;
                    m[(row, row)] -= gp;
                    m[(row, row)] += gm;
                    m[(row, base + dn)] += gm;
                }
            }

            // Zeroth-order terms.
            let p2: f64 = p.iter().map(|v| v * v).sum();
            let mut z = -p2 + data.nu_own[idx];
            if let Some(dpsi) = &data.dpsi {
                for a in 0..dim {
                    z += p[a] * dpsi[a].0[idx];
                }
            }
            m[(row, row)] += z;

            // Coupling to the other species at the same node (same value that
            // the other species carries on its diagonal).
            let other_base = (1 - s) * nodes;
            m[(row, other_base + idx)] -= data.nu_other[idx];
        }
    }
    m
}

/// Assembles the discrete cell operator for a one-dimensional model.
pub fn assemble(model: &MotorModel, p: f64, n: usize) -> Result<DiscreteCellOperator> {
    validate_grid(n)?;
    let species = species_data_1d(model, n);
    let fine = |f: &PeriodicField| {
        f.derivative(1)
            .sample_at(1024, 0.0)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    };
    let mut bound = 2.0 * p.abs();
    bound += fine(&model.psi).max(model.psi2.as_ref().map(&fine).unwrap_or(0.0));
    peclet_guard(n, &[p], &species, bound)?;
    let matrix = assemble_matrix(1, n, &[p], &species);
    Ok(DiscreteCellOperator { p, n, matrix })
}

fn species_data_1d(model: &MotorModel, n: usize) -> Vec<SpeciesData> {
    let field_axis = |f: &PeriodicField| {
        let d = f.derivative(1);
        vec![(d.sample_at(n, 0.0), d.sample_at(n, 0.5))]
    };
    let nu1 = model.nu1.sample_at(n, 0.0);
    let nu2 = model.nu2.sample_at(n, 0.0);
    vec![
        SpeciesData {
            dpsi: Some(field_axis(&model.psi)),
            nu_own: nu1.clone(),
            nu_other: nu2.clone(),
        },
        SpeciesData {
            dpsi: model.psi2.as_ref().map(field_axis),
            nu_own: nu2,
            nu_other: nu1,
        },
    ]
}

/// Assembles the operator for a two-dimensional model on a tensor grid.
pub fn assemble2(model: &MotorModel2, p: [f64; 2], n: usize) -> Result<DiscreteCellOperator2> {
    validate_grid(n)?;
    let species = species_data_2d(model, n);
    let fine = |f: &PeriodicField2| {
        (0..2)
            .map(|a| {
                f.derivative(a, 1)
                    .sample_grid(256, [0.0, 0.0])
                    .iter()
                    .fold(0.0f64, |m, v| m.max(v.abs()))
            })
            .fold(0.0f64, f64::max)
    };
    let pmax = p[0].abs().max(p[1].abs());
    let mut bound = 2.0 * pmax;
    bound += fine(&model.psi).max(model.psi2.as_ref().map(&fine).unwrap_or(0.0));
    peclet_guard(n, &p, &species, bound)?;
    let matrix = assemble_matrix(2, n, &p, &species);
    Ok(DiscreteCellOperator2 { p, n, matrix })
}

fn species_data_2d(model: &MotorModel2, n: usize) -> Vec<SpeciesData> {
    let field_axes = |f: &PeriodicField2| {
        (0..2)
            .map(|a| {
                let d = f.derivative(a, 1);
                let mut offset = [0.0, 0.0];
                offset[a] = 0.5;
                (d.sample_grid(n, [0.0, 0.0]), d.sample_grid(n, offset))
            })
            .collect::<Vec<_>>()
    };
    let nu1 = model.nu1.sample_grid(n, [0.0, 0.0]);
    let nu2 = model.nu2.sample_grid(n, [0.0, 0.0]);
    vec![
        SpeciesData {
            dpsi: Some(field_axes(&model.psi)),
            nu_own: nu1.clone(),
            nu_other: nu2.clone(),
        },
        SpeciesData {
            dpsi: model.psi2.as_ref().map(field_axes),
            nu_own: nu2,
            nu_other: nu1,
        },
    ]
}

// ---------------------------------------------------------------------------
// Eigenpairs
// ---------------------------------------------------------------------------

/// Principal eigenpair of the operator: the eigenvalue carrying a strictly
/// positive eigenvector. `Hbar(p) = -lambda`. The returned vector is
/// positivity-checked but not yet normalized.
pub fn principal_eigenpair(op: &DiscreteCellOperator, tol: f64) -> Result<(f64, Vec<f64>)> {
    principal_of(&op.matrix, tol)
}

fn principal_of(matrix: &DMatrix<f64>, tol: f64) -> Result<(f64, Vec<f64>)> {
    let pair = perron_eigenpair(
        matrix,
        EigOptions {
            tol,
            ..EigOptions::default()
        },
    )?;
    require_positive(&pair.vector)?;
    Ok((pair.lambda, pair.vector.as_slice().to_vec()))
}

/// Principal eigenvector of the transposed operator, normalized so that the
/// duality pairing with the primal eigenvector integrates to one. Errors with
/// `EigenvalueMismatch` if the transpose eigenvalue strays beyond `10 tol`.
pub fn adjoint_eigenpair(op: &DiscreteCellOperator, tol: f64) -> Result<Vec<f64>> {
    let (lambda, w) = principal_of(&op.matrix, tol)?;
    let (_, adj) = adjoint_of(&op.matrix, lambda, tol)?;
    Ok(normalize_pairing(&w, adj, op.n, 1))
}

fn adjoint_of(matrix: &DMatrix<f64>, primal_lambda: f64, tol: f64) -> Result<(f64, Vec<f64>)> {
    let (lambda_adj, adj) = principal_of(&matrix.transpose(), tol)?;
    let allowed = 10.0 * tol * (1.0 + primal_lambda.abs());
    if (lambda_adj - primal_lambda).abs() > allowed {
        return Err(Error::EigenvalueMismatch {
            primal: primal_lambda,
            adjoint: lambda_adj,
            tol: allowed,
        });
    }
    Ok((lambda_adj, adj))
}

fn normalize_pairing(w: &[f64], mut adj: Vec<f64>, n: usize, dim: u32) -> Vec<f64> {
    let nodes = n.pow(dim);
    let hd = (1.0 / n as f64).powi(dim as i32);
    let pairing: f64 = (0..2 * nodes).map(|i| w[i] * adj[i]).sum::<f64>() * hd;
    for v in &mut adj {
        *v /= pairing;
    }
    adj
}

// ---------------------------------------------------------------------------
// Full solve
// ---------------------------------------------------------------------------

/// Quadrature weight factors for the twisted trapezoid rule along one axis:
/// node 0 carries `(1 + exp(-p_a))/2` because `chi(1) = exp(-p_a) chi(0)`.
fn twisted_weight(coord: usize, pa: f64) -> f64 {
    if coord == 0 {
        0.5 * (1.0 + (-pa).exp())
    } else {
        1.0
    }
}

/// Solves the cell problem for one momentum, with adjoint fields, correctors,
/// twisted eigenfunctions and the corrector-equation residual.
pub fn solve_cell(model: &MotorModel, p: f64, n: usize) -> Result<CellSolution> {
    let op = assemble(model, p, n)?;
    let tol = crate::defaults::EIG_TOL;
    let (lambda, mut w) = principal_of(&op.matrix, tol)?;
    let (_, adj) = adjoint_of(&op.matrix, lambda, tol)?;
    let hbar = -lambda;
    let h = 1.0 / n as f64;

    // Normalization: integral of (chi1 + chi2) over the unit cell equals one,
    // with chi_i = exp(-p y) w_i and twisted trapezoid quadrature.
    let chi_raw: Vec<f64> = (0..2 * n)
        .map(|i| (-p * ((i % n) as f64) * h).exp() * w[i])
        .collect();
    let integral: f64 = (0..2 * n)
        .map(|i| twisted_weight(i % n, p) * chi_raw[i])
        .sum::<f64>()
        * h;
    for v in &mut w {
        *v /= integral;
    }

    let adj = normalize_pairing(&w, adj, n, 1);

    let chi: Vec<f64> = chi_raw.iter().map(|v| v / integral).collect();
    let phi: Vec<f64> = w.iter().map(|v| -v.ln()).collect();

    let residual = corrector_residual(model, p, n, hbar, &phi[..n], &phi[n..]);

    Ok(CellSolution {
        p,
        n,
        hbar,
        w1: w[..n].to_vec(),
        w2: w[n..].to_vec(),
        w1_adj: adj[..n].to_vec(),
        w2_adj: adj[n..].to_vec(),
        phi1: phi[..n].to_vec(),
        phi2: phi[n..].to_vec(),
        chi1: chi[..n].to_vec(),
        chi2: chi[n..].to_vec(),
        residual,
    })
}

/// `Hbar(p)` alone (no adjoint solve); used by finite-difference oracles and
/// sweep-free probes.
pub fn hbar_only(model: &MotorModel, p: f64, n: usize) -> Result<f64> {
    let op = assemble(model, p, n)?;
    let (lambda, _) = principal_of(&op.matrix, crate::defaults::EIG_TOL)?;
    Ok(-lambda)
}

fn corrector_residual(
    model: &MotorModel,
    p: f64,
    n: usize,
    hbar: f64,
    phi1: &[f64],
    phi2: &[f64],
) -> f64 {
    let f1 = PeriodicField::from_samples(phi1.to_vec()).expect("phi field");
    let f2 = PeriodicField::from_samples(phi2.to_vec()).expect("phi field");
    let d1 = f1.derivative(1).sample_at(n, 0.0);
    let l1 = f1.derivative(2).sample_at(n, 0.0);
    let d2 = f2.derivative(1).sample_at(n, 0.0);
    let l2 = f2.derivative(2).sample_at(n, 0.0);
    let dpsi = model.psi.derivative(1).sample_at(n, 0.0);
    let ddpsi = model.psi.derivative(2).sample_at(n, 0.0);
    let dpsi2 = model
        .psi2
        .as_ref()
        .map(|f| f.derivative(1).sample_at(n, 0.0));
    let ddpsi2 = model
        .psi2
        .as_ref()
        .map(|f| f.derivative(2).sample_at(n, 0.0));
    let nu1 = model.nu1.sample_at(n, 0.0);
    let nu2 = model.nu2.sample_at(n, 0.0);

    let mut res = 0.0f64;
    for k in 0..n {
        let g1 = d1[k] + p;
        let g2 = d2[k] + p;
        let eq1 = -l1[k] + g1 * g1 - dpsi[k] * g1 + ddpsi[k] + nu2[k] * (phi1[k] - phi2[k]).exp()
            - nu1[k]
            - hbar;
        let mut eq2 = -l2[k] + g2 * g2 + nu1[k] * (phi2[k] - phi1[k]).exp() - nu2[k] - hbar;
        if let (Some(dp2), Some(ddp2)) = (&dpsi2, &ddpsi2) {
            eq2 += -dp2[k] * g2 + ddp2[k];
        }
        res = res.max(eq1.abs()).max(eq2.abs());
    }
    res
}

/// Gradient of the effective Hamiltonian from the primal/adjoint pairing:
///
/// ```text
/// DHbar(p) = 2p - [2 Int w1* D w1 + 2 Int w2* D w2 + Int Dpsi w1 w1*
///                  (+ Int Dpsi2 w2 w2*)] / [Int w1 w1* + Int w2 w2*]
/// ```
///
/// The derivative operator here is the same central difference that enters
/// the assembled matrix, so this is the exact momentum derivative of the
/// discrete eigenvalue (Hellmann-Feynman) up to solver tolerance; it agrees
/// with finite differences of the computed `Hbar` far below the O(h^2)
/// discretization error.
pub fn dhbar(sol: &CellSolution, model: &MotorModel) -> Result<f64> {
    let n = sol.n;
    let h = 1.0 / n as f64;
    let central = |w: &[f64], k: usize| (w[(k + 1) % n] - w[(k + n - 1) % n]) / (2.0 * h);
    let dpsi = model.psi.derivative(1).sample_at(n, 0.0);
    let dpsi2 = model
        .psi2
        .as_ref()
        .map(|f| f.derivative(1).sample_at(n, 0.0));

    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..n {
        num += 2.0 * sol.w1_adj[k] * central(&sol.w1, k);
        num += 2.0 * sol.w2_adj[k] * central(&sol.w2, k);
        num += dpsi[k] * sol.w1[k] * sol.w1_adj[k];
        if let Some(dp2) = &dpsi2 {
            num += dp2[k] * sol.w2[k] * sol.w2_adj[k];
        }
        den += sol.w1[k] * sol.w1_adj[k] + sol.w2[k] * sol.w2_adj[k];
    }
    num *= h;
    den *= h;
    if den.abs() < 1e-14 {
        return Err(Error::DegeneratePairing { denominator: den });
    }
    Ok(2.0 * sol.p - num / den)
}

// ---------------------------------------------------------------------------
// Two-dimensional solve
// ---------------------------------------------------------------------------

pub fn solve_cell2(model: &MotorModel2, p: [f64; 2], n: usize) -> Result<CellSolution2> {
    let op = assemble2(model, p, n)?;
    let tol = crate::defaults::EIG_TOL;
    let (lambda, mut w) = principal_of(&op.matrix, tol)?;
    let (_, adj) = adjoint_of(&op.matrix, lambda, tol)?;
    let hbar = -lambda;
    let nodes = n * n;
    let h = 1.0 / n as f64;

    let mut integral = 0.0;
    for (i, &wi) in w.iter().enumerate() {
        let (i0, i1) = ((i % nodes) % n, (i % nodes) / n);
        let chi = (-p[0] * i0 as f64 * h - p[1] * i1 as f64 * h).exp() * wi;
        integral += twisted_weight(i0, p[0]) * twisted_weight(i1, p[1]) * chi;
    }
    integral *= h * h;
    for v in &mut w {
        *v /= integral;
    }
    let adj = normalize_pairing(&w, adj, n, 2);

    let phi: Vec<f64> = w.iter().map(|v| -v.ln()).collect();
    let residual = corrector_residual2(model, p, n, hbar, &phi[..nodes], &phi[nodes..]);

    Ok(CellSolution2 {
        p,
        n,
        hbar,
        w1: w[..nodes].to_vec(),
        w2: w[nodes..].to_vec(),
        w1_adj: adj[..nodes].to_vec(),
        w2_adj: adj[nodes..].to_vec(),
        phi1: phi[..nodes].to_vec(),
        phi2: phi[nodes..].to_vec(),
        residual,
    })
}

fn corrector_residual2(
    model: &MotorModel2,
    p: [f64; 2],
    n: usize,
    hbar: f64,
    phi1: &[f64],
    phi2: &[f64],
) -> f64 {
    let fld = |v: &[f64]| PeriodicField2::from_samples(n, v.to_vec()).expect("phi field");
    let f1 = fld(phi1);
    let f2 = fld(phi2);
    let grad = |f: &PeriodicField2| [f.derivative(0, 1), f.derivative(1, 1)];
    let lap = |f: &PeriodicField2| {
        let a = f.derivative(0, 2);
        let b = f.derivative(1, 2);
        a.samples()
            .iter()
            .zip(b.samples())
            .map(|(x, y)| x + y)
            .collect::<Vec<_>>()
    };
    let g1 = grad(&f1);
    let g2 = grad(&f2);
    let l1 = lap(&f1);
    let l2 = lap(&f2);
    let gpsi = grad(&model.psi);
    let lpsi = lap(&model.psi);
    let gpsi2 = model.psi2.as_ref().map(grad);
    let lpsi2 = model.psi2.as_ref().map(lap);
    let nu1 = model.nu1.sample_grid(n, [0.0, 0.0]);
    let nu2 = model.nu2.sample_grid(n, [0.0, 0.0]);

    let mut res = 0.0f64;
    for k in 0..n * n {
        let v1 = [g1[0].samples()[k] + p[0], g1[1].samples()[k] + p[1]];
        let v2 = [g2[0].samples()[k] + p[0], g2[1].samples()[k] + p[1]];
        let dot = |a: [f64; 2], b: [f64; 2]| a[0] * b[0] + a[1] * b[1];
        let gp = [gpsi[0].samples()[k], gpsi[1].samples()[k]];
        let eq1 = -l1[k] + dot(v1, v1) - dot(gp, v1) + lpsi[k] + nu2[k] * (phi1[k] - phi2[k]).exp()
            - nu1[k]
            - hbar;
        let mut eq2 = -l2[k] + dot(v2, v2) + nu1[k] * (phi2[k] - phi1[k]).exp() - nu2[k] - hbar;
        if let (Some(gp2), Some(lp2)) = (&gpsi2, &lpsi2) {
            let g = [gp2[0].samples()[k], gp2[1].samples()[k]];
            eq2 += -dot(g, v2) + lp2[k];
        }
        res = res.max(eq1.abs()).max(eq2.abs());
    }
    res
}

pub fn dhbar2(sol: &CellSolution2, model: &MotorModel2) -> Result<[f64; 2]> {
    let n = sol.n;
    let nodes = n * n;
    let h = 1.0 / n as f64;
    let hd = 1.0 / nodes as f64;
    let gpsi = [
        model.psi.derivative(0, 1).sample_grid(n, [0.0, 0.0]),
        model.psi.derivative(1, 1).sample_grid(n, [0.0, 0.0]),
    ];
    let gpsi2 = model.psi2.as_ref().map(|f| {
        [
            f.derivative(0, 1).sample_grid(n, [0.0, 0.0]),
            f.derivative(1, 1).sample_grid(n, [0.0, 0.0]),
        ]
    });

    let den: f64 = (0..nodes)
        .map(|k| sol.w1[k] * sol.w1_adj[k] + sol.w2[k] * sol.w2_adj[k])
        .sum::<f64>()
        * hd;
    if den.abs() < 1e-14 {
        return Err(Error::DegeneratePairing { denominator: den });
    }

    // Central difference along `axis`, matching the assembled stencil.
    let central = |w: &[f64], idx: usize, axis: usize| {
        let st = if axis == 0 { 1 } else { n };
        let coord = (idx / st) % n;
        let up = idx - coord * st + ((coord + 1) % n) * st;
        let dn = idx - coord * st + ((coord + n - 1) % n) * st;
        (w[up] - w[dn]) / (2.0 * h)
    };

    let mut out = [0.0; 2];
    for a in 0..2 {
        let mut num = 0.0;
        for k in 0..nodes {
            num += 2.0 * sol.w1_adj[k] * central(&sol.w1, k, a);
            num += 2.0 * sol.w2_adj[k] * central(&sol.w2, k, a);
            num += gpsi[a][k] * sol.w1[k] * sol.w1_adj[k];
            if let Some(g2) = &gpsi2 {
                num += g2[a][k] * sol.w2[k] * sol.w2_adj[k];
            }
        }
        out[a] = 2.0 * sol.p[a] - num * hd / den;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Twisted-form consistency check
// ---------------------------------------------------------------------------

/// Residual of the twisted eigenfunctions in the conjugated eigenvalue form
/// (second-order stencils with twisted wrap `chi(y+1) = exp(-p) chi(y)`),
/// normalized by the largest `chi` value. Diagnoses consistency between the
/// periodic-unknown solve and the twisted formulation.
pub fn chi_form_residual(sol: &CellSolution, model: &MotorModel) -> f64 {
    let n = sol.n;
    let h = 1.0 / n as f64;
    let inv_h2 = 1.0 / (h * h);
    let p = sol.p;
    let up_twist = (-p).exp();
    let dn_twist = p.exp();
    let dpsi_if = model.psi.derivative(1).sample_at(n, 0.5);
    let dpsi2_if = model
        .psi2
        .as_ref()
        .map(|f| f.derivative(1).sample_at(n, 0.5));
    let nu1 = model.nu1.sample_at(n, 0.0);
    let nu2 = model.nu2.sample_at(n, 0.0);

    let neighbor = |chi: &[f64], k: usize, dir: i64| -> f64 {
        match (k as i64 + dir).rem_euclid(n as i64) as usize {
            j if dir > 0 && j == 0 => chi[j] * up_twist,
            j if dir < 0 && j == n - 1 => chi[j] * dn_twist,
            j => chi[j],
        }
    };

    let scale = sol
        .chi1
        .iter()
        .chain(&sol.chi2)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let mut res = 0.0f64;
    for k in 0..n {
        let c1 = sol.chi1[k];
        let c2 = sol.chi2[k];
        let c1u = neighbor(&sol.chi1, k, 1);
        let c1d = neighbor(&sol.chi1, k, -1);
        let c2u = neighbor(&sol.chi2, k, 1);
        let c2d = neighbor(&sol.chi2, k, -1);
        let lap1 = (c1u - 2.0 * c1 + c1d) * inv_h2;
        let lap2 = (c2u - 2.0 * c2 + c2d) * inv_h2;
        let div1 = (dpsi_if[k] * (c1 + c1u) - dpsi_if[(k + n - 1) % n] * (c1d + c1)) / (2.0 * h);
        let eq1 = -lap1 - div1 + nu1[k] * c1 - nu2[k] * c2 + sol.hbar * c1;
        let mut eq2 = -lap2 + nu2[k] * c2 - nu1[k] * c1 + sol.hbar * c2;
        if let Some(d2) = &dpsi2_if {
            let div2 = (d2[k] * (c2 + c2u) - d2[(k + n - 1) % n] * (c2d + c2)) / (2.0 * h);
            eq2 -= div2;
        }
        res = res.max(eq1.abs()).max(eq2.abs());
    }
    res / scale
}
