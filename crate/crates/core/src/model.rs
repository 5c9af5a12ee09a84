//! Smooth 1-periodic coefficient fields and motor-model assembly.
//!
//! Fields are band-limited trigonometric interpolants stored as uniform
//! samples on the unit cell. Differentiation is spectral, so derivatives of
//! resolved modes are exact and "smooth coefficients" is realized literally.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::{Error, Result};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Minimum sample count for a periodic field.
pub const MIN_FIELD_SAMPLES: usize = 8;

/// A smooth 1-periodic scalar function represented by uniform samples on the
/// unit cell, `y_k = k/N`. Evaluation anywhere uses trigonometric
/// interpolation of the periodic extension; the interpolant is 1-periodic by
/// construction.
#[derive(Debug, Clone)]
pub struct PeriodicField {
    samples: Vec<f64>,
    // Interpolation coefficients: f(y) = cos_c[k] cos(2 pi k y) + sin_c[k] sin(2 pi k y),
    // k = 0..=N/2, with the Nyquist sine coefficient fixed to zero.
    cos_c: Vec<f64>,
    sin_c: Vec<f64>,
}

impl PeriodicField {
    /// Builds a field from uniform samples over `[0,1)`.
    pub fn from_samples(samples: Vec<f64>) -> Result<Self> {
        let n = samples.len();
        if n < MIN_FIELD_SAMPLES {
            return Err(Error::InvalidField(format!(
                "need at least {MIN_FIELD_SAMPLES} samples, got {n}"
            )));
        }
        if !n.is_multiple_of(2) {
            return Err(Error::InvalidField(format!(
                "sample count must be even, got {n}"
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidField("non-finite sample".into()));
        }
        let (cos_c, sin_c) = real_dft(&samples);
        Ok(Self {
            samples,
            cos_c,
            sin_c,
        })
    }

    /// Constant field at a given resolution.
    pub fn constant(value: f64, n: usize) -> Result<Self> {
        Self::from_samples(vec![value; n])
    }

    /// Samples a finite Fourier series `a0 + sum a_k cos(2 pi k y) + b_k sin(2 pi k y)`
    /// at `n` uniform nodes. Fails if the series is not resolved (`k >= n/2`).
    pub fn from_fourier(n: usize, a0: f64, cos: &[f64], sin: &[f64]) -> Result<Self> {
        let modes = cos.len().max(sin.len());
        if n < MIN_FIELD_SAMPLES || !n.is_multiple_of(2) {
            return Err(Error::InvalidField(format!("invalid sample count {n}")));
        }
        if 2 * modes >= n {
            return Err(Error::InvalidField(format!(
                "mode {modes} is not resolved by {n} samples"
            )));
        }
        let samples = (0..n)
            .map(|j| {
                let y = j as f64 / n as f64;
                let mut v = a0;
                for (k, a) in cos.iter().enumerate() {
                    v += a * (TWO_PI * (k + 1) as f64 * y).cos();
                }
                for (k, b) in sin.iter().enumerate() {
                    v += b * (TWO_PI * (k + 1) as f64 * y).sin();
                }
                v
            })
            .collect();
        Self::from_samples(samples)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Evaluates the interpolant at an arbitrary point; 1-periodic.
    pub fn eval(&self, y: f64) -> f64 {
        let u = y - y.floor();
        let mut v = self.cos_c[0];
        for k in 1..self.cos_c.len() {
            let arg = TWO_PI * k as f64 * u;
            v += self.cos_c[k] * arg.cos() + self.sin_c[k] * arg.sin();
        }
        v
    }

    /// Spectral derivative of order 1 or 2, resampled on the same grid.
    pub fn derivative(&self, order: u32) -> PeriodicField {
        assert!(order == 1 || order == 2, "derivative order must be 1 or 2");
        let n = self.len();
        let half = n / 2;
        let mut cos_c = vec![0.0; half + 1];
        let mut sin_c = vec![0.0; half + 1];
        for k in 1..=half {
            let om = TWO_PI * k as f64;
            match order {
                // (a cos + b sin)' = -a om sin + b om cos; the Nyquist sine
                // interpolant vanishes on the grid, so its node derivative is 0.
                1 => {
                    if k < half {
                        cos_c[k] = om * self.sin_c[k];
                        sin_c[k] = -om * self.cos_c[k];
                    }
                }
                _ => {
                    cos_c[k] = -om * om * self.cos_c[k];
                    sin_c[k] = -om * om * self.sin_c[k];
                }
            }
        }
        let samples = (0..n)
            .map(|j| {
                let u = j as f64 / n as f64;
                let mut v = cos_c[0];
                for k in 1..=half {
                    let arg = TWO_PI * k as f64 * u;
                    v += cos_c[k] * arg.cos() + sin_c[k] * arg.sin();
                }
                v
            })
            .collect::<Vec<_>>();
        PeriodicField {
            samples,
            cos_c,
            sin_c,
        }
    }

    /// Samples the interpolant at `n` uniform points `(j + offset)/n`.
    /// `offset = 0.5` gives interface (staggered) values.
    pub fn sample_at(&self, n: usize, offset: f64) -> Vec<f64> {
        (0..n)
            .map(|j| self.eval((j as f64 + offset) / n as f64))
            .collect()
    }

    pub fn min(&self) -> f64 {
        self.samples.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.samples
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.len() as f64
    }
}

/// Real trigonometric interpolation coefficients of even-length samples.
/// Direct O(N^2) transform; field resolutions here are small. Coefficients
/// below the transform's own roundoff floor are snapped to zero, so constant
/// data evaluates exactly and its derivative is exactly zero.
fn real_dft(samples: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len();
    let half = n / 2;
    let mut cos_c = vec![0.0; half + 1];
    let mut sin_c = vec![0.0; half + 1];
    for k in 0..=half {
        let mut a = 0.0;
        let mut b = 0.0;
        for (j, &f) in samples.iter().enumerate() {
            let arg = TWO_PI * (k * j) as f64 / n as f64;
            a += f * arg.cos();
            b += f * arg.sin();
        }
        let scale = if k == 0 || k == half { 1.0 } else { 2.0 };
        cos_c[k] = scale * a / n as f64;
        sin_c[k] = scale * b / n as f64;
    }
    // The Nyquist mode is represented by its cosine part only.
    sin_c[half] = 0.0;
    let floor = 128.0 * f64::EPSILON * samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for c in cos_c.iter_mut().skip(1).chain(sin_c.iter_mut()) {
        if c.abs() < floor {
            *c = 0.0;
        }
    }
    (cos_c, sin_c)
}

/// A 1-periodic function of two variables on a tensor-product sample grid
/// (`n x n`, row-major with the first axis fastest). Used by the
/// two-dimensional cell solver only.
#[derive(Debug, Clone)]
pub struct PeriodicField2 {
    n: usize,
    samples: Vec<f64>,
}

impl PeriodicField2 {
    pub fn from_samples(n: usize, samples: Vec<f64>) -> Result<Self> {
        if n < MIN_FIELD_SAMPLES || !n.is_multiple_of(2) {
            return Err(Error::InvalidField(format!("invalid axis length {n}")));
        }
        if samples.len() != n * n {
            return Err(Error::InvalidField(format!(
                "expected {} samples, got {}",
                n * n,
                samples.len()
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidField("non-finite sample".into()));
        }
        Ok(Self { n, samples })
    }

    pub fn constant(value: f64, n: usize) -> Result<Self> {
        Self::from_samples(n, vec![value; n * n])
    }

    /// Lifts a one-dimensional field along the given axis (constant in the other).
    pub fn from_axis(f: &PeriodicField, axis: usize, n: usize) -> Result<Self> {
        let samples = (0..n * n)
            .map(|idx| {
                let (i0, i1) = (idx % n, idx / n);
                let j = if axis == 0 { i0 } else { i1 };
                f.eval(j as f64 / n as f64)
            })
            .collect();
        Self::from_samples(n, samples)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn at(&self, i0: usize, i1: usize) -> f64 {
        self.samples[i0 + self.n * i1]
    }

    /// Evaluates by tensor trigonometric interpolation.
    pub fn eval(&self, y0: f64, y1: f64) -> f64 {
        // Interpolate along axis 0 for each row, then along axis 1.
        let n = self.n;
        let mut line = Vec::with_capacity(n);
        for i1 in 0..n {
            let row: Vec<f64> = (0..n).map(|i0| self.at(i0, i1)).collect();
            let (c, s) = real_dft(&row);
            line.push(eval_coeffs(&c, &s, y0));
        }
        let (c, s) = real_dft(&line);
        eval_coeffs(&c, &s, y1)
    }

    /// Spectral partial derivative along `axis`, order 1 or 2.
    pub fn derivative(&self, axis: usize, order: u32) -> PeriodicField2 {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for other in 0..n {
            let line: Vec<f64> = (0..n)
                .map(|i| {
                    if axis == 0 {
                        self.at(i, other)
                    } else {
                        self.at(other, i)
                    }
                })
                .collect();
            let d = PeriodicField::from_samples(line)
                .expect("interior line is valid")
                .derivative(order);
            for (i, &v) in d.samples().iter().enumerate() {
                let idx = if axis == 0 {
                    i + n * other
                } else {
                    other + n * i
                };
                out[idx] = v;
            }
        }
        PeriodicField2 { n, samples: out }
    }

    /// Separable resampling onto an `n x n` grid at `(j + offset_a)/n` per axis.
    pub fn sample_grid(&self, n: usize, offset: [f64; 2]) -> Vec<f64> {
        let m = self.n;
        // Resample along axis 0 row by row, then along axis 1 column by column.
        let mut mid = vec![0.0; n * m];
        for i1 in 0..m {
            let row: Vec<f64> = (0..m).map(|i0| self.at(i0, i1)).collect();
            let (c, s) = real_dft(&row);
            for j0 in 0..n {
                mid[j0 + n * i1] = eval_coeffs(&c, &s, (j0 as f64 + offset[0]) / n as f64);
            }
        }
        let mut out = vec![0.0; n * n];
        for j0 in 0..n {
            let col: Vec<f64> = (0..m).map(|i1| mid[j0 + n * i1]).collect();
            let (c, s) = real_dft(&col);
            for j1 in 0..n {
                out[j0 + n * j1] = eval_coeffs(&c, &s, (j1 as f64 + offset[1]) / n as f64);
            }
        }
        out
    }

    pub fn min(&self) -> f64 {
        self.samples.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

fn eval_coeffs(cos_c: &[f64], sin_c: &[f64], y: f64) -> f64 {
    let u = y - y.floor();
    let mut v = cos_c[0];
    for k in 1..cos_c.len() {
        let arg = TWO_PI * k as f64 * u;
        v += cos_c[k] * arg.cos() + sin_c[k] * arg.sin();
    }
    v
}

/// Problem data of the two-species system in one dimension: potential(s) and
/// strictly positive switching rates.
#[derive(Debug, Clone)]
pub struct MotorModel {
    pub psi: PeriodicField,
    /// Second-species potential; `None` means species 2 has zero drift.
    pub psi2: Option<PeriodicField>,
    pub nu1: PeriodicField,
    pub nu2: PeriodicField,
}

impl MotorModel {
    pub fn new(
        psi: PeriodicField,
        psi2: Option<PeriodicField>,
        nu1: PeriodicField,
        nu2: PeriodicField,
    ) -> Result<Self> {
        check_rate("nu1", &nu1)?;
        check_rate("nu2", &nu2)?;
        Ok(Self {
            psi,
            psi2,
            nu1,
            nu2,
        })
    }

    /// Hex fingerprint of the coefficient data, for manifests and sidecars.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"d=1");
        for (tag, f) in [
            ("psi", Some(&self.psi)),
            ("psi2", self.psi2.as_ref()),
            ("nu1", Some(&self.nu1)),
            ("nu2", Some(&self.nu2)),
        ] {
            h.update(tag.as_bytes());
            if let Some(f) = f {
                h.update((f.len() as u64).to_le_bytes());
                for v in f.samples() {
                    h.update(v.to_le_bytes());
                }
            }
        }
        let digest = h.finalize();
        let mut out = String::new();
        for b in digest.iter().take(8) {
            let _ = write!(out, "{b:02x}");
        }
        out
    }
}

fn check_rate(name: &'static str, f: &PeriodicField) -> Result<()> {
    let min = f.min();
    if min <= 0.0 {
        return Err(Error::NonPositiveRate { name, min });
    }
    Ok(())
}

/// Two-dimensional model data (cell solver only).
#[derive(Debug, Clone)]
pub struct MotorModel2 {
    pub psi: PeriodicField2,
    pub psi2: Option<PeriodicField2>,
    pub nu1: PeriodicField2,
    pub nu2: PeriodicField2,
}

impl MotorModel2 {
    pub fn new(
        psi: PeriodicField2,
        psi2: Option<PeriodicField2>,
        nu1: PeriodicField2,
        nu2: PeriodicField2,
    ) -> Result<Self> {
        for (name, f) in [("nu1", &nu1), ("nu2", &nu2)] {
            let min = f.min();
            if min <= 0.0 {
                return Err(Error::NonPositiveRate { name, min });
            }
        }
        Ok(Self {
            psi,
            psi2,
            nu1,
            nu2,
        })
    }
}

// ---------------------------------------------------------------------------
// Coefficient spec files and presets
// ---------------------------------------------------------------------------

/// One coefficient in a spec file: either a finite Fourier series or raw
/// samples. TOML shape, e.g. `psi.sin = [0.7, 0.35]` or `nu1.samples = [...]`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    #[serde(default)]
    pub konst: Option<f64>,
    #[serde(default, rename = "const")]
    pub const_alias: Option<f64>,
    #[serde(default)]
    pub cos: Vec<f64>,
    #[serde(default)]
    pub sin: Vec<f64>,
    #[serde(default)]
    pub samples: Vec<f64>,
}

impl FieldSpec {
    fn build(&self, n: usize, what: &str) -> Result<PeriodicField> {
        let a0 = self.const_alias.or(self.konst).unwrap_or(0.0);
        if !self.samples.is_empty() {
            if a0 != 0.0 || !self.cos.is_empty() || !self.sin.is_empty() {
                return Err(Error::BadModelSpec(format!(
                    "{what}: give either samples or Fourier data, not both"
                )));
            }
            return PeriodicField::from_samples(self.samples.clone());
        }
        PeriodicField::from_fourier(n, a0, &self.cos, &self.sin)
    }

    fn is_given(&self) -> bool {
        self.konst.is_some()
            || self.const_alias.is_some()
            || !self.cos.is_empty()
            || !self.sin.is_empty()
            || !self.samples.is_empty()
    }
}

/// Parsed coefficient description: a preset reference or explicit fields.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default)]
    pub preset: Option<String>,
    /// Sample count used when fields are given as Fourier data.
    #[serde(default, alias = "N")]
    pub n: Option<usize>,
    #[serde(default)]
    pub psi: Option<FieldSpec>,
    #[serde(default)]
    pub psi2: Option<FieldSpec>,
    #[serde(default)]
    pub nu1: Option<FieldSpec>,
    #[serde(default)]
    pub nu2: Option<FieldSpec>,
}

impl ModelSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::BadModelSpec(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }
}

/// Default sampling resolution for preset and Fourier-spec fields.
pub const PRESET_FIELD_SAMPLES: usize = 64;

type PresetBuilder = fn(usize) -> Result<MotorModel>;

/// Named presets, selectable at runtime by the CLI and spec files.
pub fn preset_registry() -> BTreeMap<&'static str, PresetBuilder> {
    let mut m: BTreeMap<&'static str, PresetBuilder> = BTreeMap::new();
    m.insert("flat", preset_flat);
    m.insert("symmetric", preset_symmetric);
    m.insert("asymmetric-ratchet", preset_asymmetric_ratchet);
    m
}

pub fn preset_names() -> Vec<&'static str> {
    preset_registry().keys().copied().collect()
}

/// Builds a named preset at the given field resolution.
pub fn build_preset(name: &str, n: usize) -> Result<MotorModel> {
    match preset_registry().get(name) {
        Some(build) => build(n),
        None => Err(Error::UnknownPreset(
            name.to_string(),
            preset_names().join(", "),
        )),
    }
}

/// psi = 0, nu1 = nu2 = 1: the analytic case Hbar(p) = p^2.
fn preset_flat(n: usize) -> Result<MotorModel> {
    MotorModel::new(
        PeriodicField::constant(0.0, n)?,
        None,
        PeriodicField::constant(1.0, n)?,
        PeriodicField::constant(1.0, n)?,
    )
}

/// Even potential, constant rates: Hbar is even, vbar = 0.
fn preset_symmetric(n: usize) -> Result<MotorModel> {
    MotorModel::new(
        PeriodicField::from_fourier(n, 0.0, &[1.0], &[])?,
        None,
        PeriodicField::constant(1.0, n)?,
        PeriodicField::constant(1.0, n)?,
    )
}

/// Breaks the y -> -y symmetry in both the potential and the rates so the
/// transport velocity is nonzero.
fn preset_asymmetric_ratchet(n: usize) -> Result<MotorModel> {
    MotorModel::new(
        PeriodicField::from_fourier(n, 0.0, &[], &[0.7, 0.35])?,
        None,
        PeriodicField::from_fourier(n, 1.5, &[1.0], &[])?,
        PeriodicField::from_fourier(n, 1.5, &[-1.0], &[])?,
    )
}

/// Resolves a model from a spec: preset name wins, else explicit fields.
pub fn build_model(spec: &ModelSpec) -> Result<MotorModel> {
    let n = spec.n.unwrap_or(PRESET_FIELD_SAMPLES);
    if let Some(name) = &spec.preset {
        if spec.psi.is_some() || spec.nu1.is_some() || spec.nu2.is_some() || spec.psi2.is_some() {
            return Err(Error::BadModelSpec(
                "give either a preset or explicit fields, not both".into(),
            ));
        }
        return build_preset(name, n);
    }
    let psi = match &spec.psi {
        Some(f) if f.is_given() => f.build(n, "psi")?,
        _ => PeriodicField::constant(0.0, n)?,
    };
    let psi2 = match &spec.psi2 {
        Some(f) if f.is_given() => Some(f.build(n, "psi2")?),
        _ => None,
    };
    let nu1 = spec
        .nu1
        .as_ref()
        .filter(|f| f.is_given())
        .ok_or_else(|| Error::BadModelSpec("nu1 is required".into()))?
        .build(n, "nu1")?;
    let nu2 = spec
        .nu2
        .as_ref()
        .filter(|f| f.is_given())
        .ok_or_else(|| Error::BadModelSpec("nu2 is required".into()))?
        .build(n, "nu2")?;
    MotorModel::new(psi, psi2, nu1, nu2)
}

/// Loads a model from a preset name or a spec-file path.
pub fn resolve_model(name_or_path: &str, n: usize) -> Result<MotorModel> {
    let path = Path::new(name_or_path);
    if path.is_file() {
        let mut spec = ModelSpec::from_path(path)?;
        if spec.n.is_none() {
            spec.n = Some(n);
        }
        build_model(&spec)
    } else {
        build_preset(name_or_path, n)
    }
}
