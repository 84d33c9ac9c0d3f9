//! Pattern dictionary: smooth unit-norm functions on `Ω = [-1, 1]^d`, their
//! rasterized kernels and smoothness functionals.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MssError, Result};
use crate::field::TensorField;
use crate::geometry::{footprint, Geometry, ScaleVec};
use crate::quadrature;
use crate::rng;
use crate::scalar::Scalar;
use crate::stats;

/// Cells per unit length used when populating smoothness constants.
const SMOOTHNESS_RESOLUTION: u32 = 64;
/// Relative headroom added to computed γ₁ and c_A.
const DECLARED_MARGIN: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatternKind {
    QuadraticBump,
    TruncatedGaussian,
    WindowedSinusoid,
    TensorCosine,
    Tabulated,
}

impl PatternKind {
    pub const BUILTIN: [PatternKind; 4] = [
        PatternKind::QuadraticBump,
        PatternKind::TruncatedGaussian,
        PatternKind::WindowedSinusoid,
        PatternKind::TensorCosine,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PatternKind::QuadraticBump => "quadratic-bump",
            PatternKind::TruncatedGaussian => "truncated-gaussian",
            PatternKind::WindowedSinusoid => "windowed-sinusoid",
            PatternKind::TensorCosine => "tensor-cosine",
            PatternKind::Tabulated => "tabulated",
        }
    }
}

impl std::str::FromStr for PatternKind {
    type Err = MssError;

    fn from_str(s: &str) -> Result<Self> {
        PatternKind::BUILTIN
            .iter()
            .chain(std::iter::once(&PatternKind::Tabulated))
            .find(|k| k.as_str() == s)
            .copied()
            .ok_or_else(|| MssError::UnknownKind(s.to_string()))
    }
}

/// One-dimensional factor of a product pattern, supported on `[-1, 1]`.
#[derive(Clone, Debug)]
enum Profile {
    Quadratic,
    Gaussian { sigma: f64, floor: f64 },
    SineWindow { cycles: f64 },
    Window,
    Cosine { freq: f64 },
}

impl Profile {
    fn value(&self, u: f64) -> f64 {
        if !(-1.0..=1.0).contains(&u) {
            return 0.0;
        }
        match *self {
            Profile::Quadratic => 1.0 - u * u,
            Profile::Gaussian { sigma, floor } => {
                (-u * u / (2.0 * sigma * sigma)).exp() - floor
            }
            Profile::SineWindow { cycles } => {
                (cycles * PI * u).sin() * (0.5 * PI * u).cos().powi(2)
            }
            Profile::Window => (0.5 * PI * u).cos().powi(2),
            Profile::Cosine { freq } => (0.5 * freq * PI * u).cos(),
        }
    }

    fn derivative(&self, u: f64) -> f64 {
        if !(-1.0..=1.0).contains(&u) {
            return 0.0;
        }
        match *self {
            Profile::Quadratic => -2.0 * u,
            Profile::Gaussian { sigma, .. } => {
                let s2 = sigma * sigma;
                -u / s2 * (-u * u / (2.0 * s2)).exp()
            }
            Profile::SineWindow { cycles } => {
                let w = (0.5 * PI * u).cos().powi(2);
                let dw = -0.5 * PI * (PI * u).sin();
                cycles * PI * (cycles * PI * u).cos() * w + (cycles * PI * u).sin() * dw
            }
            Profile::Window => -0.5 * PI * (PI * u).sin(),
            Profile::Cosine { freq } => -0.5 * freq * PI * (0.5 * freq * PI * u).sin(),
        }
    }

    /// `∫_{-1}^{1} φ²`.
    fn norm_sq(&self) -> f64 {
        match *self {
            Profile::Quadratic => 16.0 / 15.0,
            Profile::Cosine { .. } => 1.0,
            _ => quadrature::integrate_1d(|u| self.value(u).powi(2), -1.0, 1.0, 4096),
        }
    }
}

/// Samples on a uniform grid of cell centers over `Ω`, interpolated multilinearly
/// with zero boundary nodes at `±1`.
#[derive(Clone, Debug)]
struct Table {
    /// Node coordinates per axis, including the boundary nodes.
    nodes: Vec<Vec<f64>>,
    /// Node values, row-major over the padded node grid.
    values: Vec<f64>,
    shape: Vec<usize>,
}

impl Table {
    fn from_field(field: &TensorField<f64>) -> Result<Self> {
        let geom = field.geometry;
        if (geom.half_width - 1.0).abs() > 1e-9 {
            return Err(MssError::invalid(format!(
                "tabulated pattern must cover [-1, 1]^d, got L = {}",
                geom.half_width
            )));
        }
        let m = geom.cells();
        let axis: Vec<f64> = std::iter::once(-1.0)
            .chain((0..m as i64).map(|k| geom.cell_center(k)))
            .chain(std::iter::once(1.0))
            .collect();
        let d = geom.d;
        let shape = vec![m + 2; d];
        let mut values = vec![0.0; (m + 2).pow(d as u32)];
        for (idx, &v) in field.values.indexed_iter() {
            let mut flat = 0;
            for j in 0..d {
                flat = flat * (m + 2) + idx[j] + 1;
            }
            values[flat] = v;
        }
        Ok(Table {
            nodes: vec![axis; d],
            values,
            shape,
        })
    }

    fn locate(&self, j: usize, u: f64) -> (usize, f64) {
        let nodes = &self.nodes[j];
        let i = match nodes.binary_search_by(|x| x.total_cmp(&u)) {
            Ok(i) => i.min(nodes.len() - 2),
            Err(i) => i.saturating_sub(1).min(nodes.len() - 2),
        };
        let w = (u - nodes[i]) / (nodes[i + 1] - nodes[i]);
        (i, w)
    }

    fn corner_sum(&self, cells: &[(usize, f64)], deriv_axis: Option<usize>) -> f64 {
        let d = cells.len();
        let mut sum = 0.0;
        for corner in 0..(1usize << d) {
            let mut weight = 1.0;
            let mut flat = 0;
            for (j, &(i, w)) in cells.iter().enumerate() {
                let hi = (corner >> j) & 1 == 1;
                let factor = if deriv_axis == Some(j) {
                    let width = self.nodes[j][i + 1] - self.nodes[j][i];
                    if hi { 1.0 / width } else { -1.0 / width }
                } else if hi {
                    w
                } else {
                    1.0 - w
                };
                weight *= factor;
                flat = flat * self.shape[j] + i + usize::from(hi);
            }
            sum += weight * self.values[flat];
        }
        sum
    }

    fn value(&self, u: &[f64]) -> f64 {
        if u.iter().any(|x| !(-1.0..=1.0).contains(x)) {
            return 0.0;
        }
        let cells: Vec<_> = u.iter().enumerate().map(|(j, &x)| self.locate(j, x)).collect();
        self.corner_sum(&cells, None)
    }

    fn gradient(&self, u: &[f64]) -> Vec<f64> {
        if u.iter().any(|x| !(-1.0..=1.0).contains(x)) {
            return vec![0.0; u.len()];
        }
        let cells: Vec<_> = u.iter().enumerate().map(|(j, &x)| self.locate(j, x)).collect();
        (0..u.len()).map(|j| self.corner_sum(&cells, Some(j))).collect()
    }
}

#[derive(Clone, Debug)]
enum Shape {
    Product { scale: f64, profiles: Vec<Profile> },
    Tabulated { scale: f64, table: Table },
}

/// Dictionary-file entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternSpec {
    pub name: String,
    pub kind: PatternKind,
    pub d: usize,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma2: Option<f64>,
    #[serde(default, rename = "c_A", skip_serializing_if = "Option::is_none")]
    pub c_a: Option<f64>,
    /// Tensor file with the samples of a tabulated pattern.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
}

/// A smooth, unit-L2-norm function on `Ω = [-1, 1]^d`.
#[derive(Clone, Debug)]
pub struct Pattern {
    pub name: String,
    pub d: usize,
    pub kind: PatternKind,
    pub params: BTreeMap<String, f64>,
    /// Total-variation bound.
    pub gamma1: Option<f64>,
    /// Average-Hölder exponent.
    pub gamma2: Option<f64>,
    /// Average-Hölder constant.
    pub c_a: Option<f64>,
    shape: Shape,
}

fn param(params: &BTreeMap<String, f64>, key: &str, default: f64) -> f64 {
    params.get(key).copied().unwrap_or(default)
}

fn check_params(name: &str, params: &BTreeMap<String, f64>, allowed: &[&str]) -> Result<()> {
    for key in params.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(MssError::InvalidPattern {
                name: name.to_string(),
                reason: format!("unknown parameter `{key}` (allowed: {allowed:?})"),
            });
        }
    }
    Ok(())
}

/// Builds a built-in pattern named after its kind.
///
/// Parameters: `truncated-gaussian` takes `sigma` (default 0.2),
/// `windowed-sinusoid` takes `cycles` (default 1), `tensor-cosine` takes an odd
/// integer `frequency` (default 3). Smoothness constants are computed by quadrature.
pub fn make_pattern(kind: PatternKind, d: usize, params: BTreeMap<String, f64>) -> Result<Pattern> {
    Pattern::from_spec(
        &PatternSpec {
            name: kind.as_str().to_string(),
            kind,
            d,
            params,
            gamma1: None,
            gamma2: None,
            c_a: None,
            table: None,
        },
        None,
    )
}

impl Pattern {
    pub fn from_spec(spec: &PatternSpec, base_dir: Option<&Path>) -> Result<Pattern> {
        let name = spec.name.clone();
        let bad = |reason: String| MssError::InvalidPattern {
            name: name.clone(),
            reason,
        };
        let d = spec.d;
        if d == 0 {
            return Err(bad("d must be positive".into()));
        }
        let params = &spec.params;
        let shape = match spec.kind {
            PatternKind::QuadraticBump => {
                check_params(&name, params, &[])?;
                product_shape(vec![Profile::Quadratic; d])
            }
            PatternKind::TruncatedGaussian => {
                check_params(&name, params, &["sigma"])?;
                let sigma = param(params, "sigma", 0.2);
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return Err(bad(format!("sigma must be positive, got {sigma}")));
                }
                let floor = (-1.0 / (2.0 * sigma * sigma)).exp();
                product_shape(vec![Profile::Gaussian { sigma, floor }; d])
            }
            PatternKind::WindowedSinusoid => {
                check_params(&name, params, &["cycles"])?;
                let cycles = param(params, "cycles", 1.0);
                if cycles.fract() != 0.0 || cycles < 1.0 {
                    return Err(bad(format!(
                        "cycles must be a positive integer (zero gives the zero function), got {cycles}"
                    )));
                }
                let mut profiles = vec![Profile::Window; d];
                profiles[0] = Profile::SineWindow { cycles };
                product_shape(profiles)
            }
            PatternKind::TensorCosine => {
                check_params(&name, params, &["frequency"])?;
                let freq = param(params, "frequency", 3.0);
                if freq.fract() != 0.0 || freq < 1.0 || freq % 2.0 != 1.0 {
                    return Err(bad(format!(
                        "frequency must be an odd positive integer so the pattern vanishes on ∂Ω, got {freq}"
                    )));
                }
                product_shape(vec![Profile::Cosine { freq }; d])
            }
            PatternKind::Tabulated => {
                check_params(&name, params, &[])?;
                let rel = spec
                    .table
                    .as_ref()
                    .ok_or_else(|| bad("tabulated pattern needs a `table` tensor file".into()))?;
                let path = match base_dir {
                    Some(dir) if rel.is_relative() => dir.join(rel),
                    _ => rel.clone(),
                };
                let field = crate::io::read_tensor(&path)?;
                if field.geometry.d != d {
                    return Err(bad(format!(
                        "table has d = {}, spec says {d}",
                        field.geometry.d
                    )));
                }
                if spec.gamma1.is_none() && spec.gamma2.is_none() {
                    return Err(bad("tabulated patterns must declare gamma1 or gamma2".into()));
                }
                let table = Table::from_field(&field)?;
                let raw = Shape::Tabulated { scale: 1.0, table };
                let norm_sq = shape_norm_sq(&raw, d);
                if !(norm_sq > 1e-300) {
                    return Err(bad("table is identically zero".into()));
                }
                match raw {
                    Shape::Tabulated { table, .. } => Shape::Tabulated {
                        scale: norm_sq.sqrt().recip(),
                        table,
                    },
                    Shape::Product { .. } => unreachable!(),
                }
            }
        };

        let mut pattern = Pattern {
            name: spec.name.clone(),
            d,
            kind: spec.kind,
            params: spec.params.clone(),
            gamma1: spec.gamma1,
            gamma2: spec.gamma2,
            c_a: spec.c_a,
            shape,
        };
        if let Some(g) = pattern.gamma2 {
            if !(g > 0.0 && g <= 1.0) {
                return Err(bad(format!("gamma2 must lie in (0, 1], got {g}")));
            }
        }
        if pattern.kind != PatternKind::Tabulated {
            // Built-in families are Lipschitz: γ₂ = 1 with c_A = ∫‖∇f‖².
            if pattern.gamma1.is_none() {
                let tv = tv_norm(&pattern, SMOOTHNESS_RESOLUTION);
                pattern.gamma1 = Some(tv * (1.0 + DECLARED_MARGIN));
            }
            if pattern.gamma2.is_none() {
                pattern.gamma2 = Some(1.0);
                pattern.c_a = Some(sobolev_sq(&pattern, SMOOTHNESS_RESOLUTION) * (1.0 + DECLARED_MARGIN));
            }
        }
        if pattern.gamma2.is_some() && pattern.c_a.is_none() {
            let c = if pattern.gamma2 == Some(1.0) {
                sobolev_sq(&pattern, SMOOTHNESS_RESOLUTION) * (1.0 + DECLARED_MARGIN)
            } else {
                // A_{t,s} ≤ 2 always, and ‖t − s‖ ≤ 2 is where the bound binds.
                2.0
            };
            pattern.c_a = Some(c);
        }
        Ok(pattern)
    }

    pub fn spec(&self) -> PatternSpec {
        PatternSpec {
            name: self.name.clone(),
            kind: self.kind,
            d: self.d,
            params: self.params.clone(),
            gamma1: self.gamma1,
            gamma2: self.gamma2,
            c_a: self.c_a,
            table: None,
        }
    }

    /// `f(u)`; zero outside `Ω`.
    pub fn evaluate(&self, u: &[f64]) -> f64 {
        debug_assert_eq!(u.len(), self.d);
        match &self.shape {
            Shape::Product { scale, profiles } => {
                let mut v = *scale;
                for (p, &x) in profiles.iter().zip(u) {
                    v *= p.value(x);
                    if v == 0.0 {
                        break;
                    }
                }
                v
            }
            Shape::Tabulated { scale, table } => scale * table.value(u),
        }
    }

    /// `∇f(u)`; zero outside `Ω`.
    pub fn gradient(&self, u: &[f64]) -> Vec<f64> {
        match &self.shape {
            Shape::Product { scale, profiles } => {
                let values: Vec<f64> = profiles.iter().zip(u).map(|(p, &x)| p.value(x)).collect();
                (0..self.d)
                    .map(|j| {
                        let mut g = scale * profiles[j].derivative(u[j]);
                        for (k, v) in values.iter().enumerate() {
                            if k != j {
                                g *= v;
                            }
                        }
                        g
                    })
                    .collect()
            }
            Shape::Tabulated { scale, table } => {
                table.gradient(u).into_iter().map(|g| g * scale).collect()
            }
        }
    }

    /// Whether `f(-u) = f(u)` coordinatewise for built-in kinds.
    pub fn is_even(&self) -> bool {
        !matches!(self.kind, PatternKind::WindowedSinusoid | PatternKind::Tabulated)
    }
}

fn product_shape(profiles: Vec<Profile>) -> Shape {
    let norm_sq: f64 = profiles.iter().map(Profile::norm_sq).product();
    Shape::Product {
        scale: norm_sq.sqrt().recip(),
        profiles,
    }
}

fn shape_norm_sq(shape: &Shape, d: usize) -> f64 {
    match shape {
        Shape::Product { scale, profiles } => {
            scale * scale * profiles.iter().map(Profile::norm_sq).product::<f64>()
        }
        Shape::Tabulated { scale, table } => {
            // Multilinear squared is quadratic per node interval: 4-point Gauss is exact.
            let mut sum = 0.0;
            let per_axis: Vec<(Vec<f64>, Vec<f64>)> = table.nodes[..d]
                .iter()
                .map(|nodes| {
                    let mut x = Vec::new();
                    let mut w = Vec::new();
                    for pair in nodes.windows(2) {
                        let (a, b) = quadrature::rule_1d(pair[0], pair[1], 1);
                        x.extend(a);
                        w.extend(b);
                    }
                    (x, w)
                })
                .collect();
            let m = per_axis[0].0.len();
            let mut point = vec![0.0; d];
            for flat in 0..m.pow(d as u32) {
                let mut rem = flat;
                let mut weight = 1.0;
                for j in (0..d).rev() {
                    let i = rem % m;
                    rem /= m;
                    point[j] = per_axis[j].0[i];
                    weight *= per_axis[j].1[i];
                }
                sum += weight * table.value(&point).powi(2);
            }
            scale * scale * sum
        }
    }
}

/// Quadrature `∫_Ω f²` with `2R` panels per axis.
pub fn l2_norm_sq(f: &Pattern, resolution: u32) -> f64 {
    let d = f.d;
    quadrature::integrate_box(
        |u| f.evaluate(u).powi(2),
        &vec![-1.0; d],
        &vec![1.0; d],
        2 * resolution as usize,
    )
}

fn panels(resolution: u32, d: usize) -> usize {
    // keep d ≥ 3 quadrature tractable
    let r = if d >= 3 { resolution.min(16) } else { resolution };
    2 * r as usize
}

/// Isotropic total variation `∫_Ω ‖∇f‖₂` by quadrature over the interior of `Ω`.
pub fn tv_norm(f: &Pattern, resolution: u32) -> f64 {
    let d = f.d;
    quadrature::integrate_box(
        |u| f.gradient(u).iter().map(|g| g * g).sum::<f64>().sqrt(),
        &vec![-1.0; d],
        &vec![1.0; d],
        panels(resolution, d),
    )
}

/// `∫_Ω ‖∇f‖₂²`, the constant for which `A_{t,s}(f) ≤ c‖t − s‖²`.
pub fn sobolev_sq(f: &Pattern, resolution: u32) -> f64 {
    let d = f.d;
    quadrature::integrate_box(
        |u| f.gradient(u).iter().map(|g| g * g).sum::<f64>(),
        &vec![-1.0; d],
        &vec![1.0; d],
        panels(resolution, d),
    )
}

/// Hölder functional `A_{t,s}(f) = ∫ |f(t − z) − f(s − z)|² dz`, which depends on
/// `t − s` only.
pub fn holder_functional(f: &Pattern, shift: &[f64]) -> f64 {
    let d = f.d;
    if shift.iter().all(|&x| x == 0.0) {
        return 0.0;
    }
    if shift.iter().any(|x| x.abs() >= 2.0) {
        // disjoint supports: ‖f‖² + ‖f‖²
        return 2.0;
    }
    if d == 1 {
        let s = shift[0];
        let mut breaks = [-1.0, 1.0, -1.0 + s, 1.0 + s];
        breaks.sort_by(f64::total_cmp);
        return breaks
            .windows(2)
            .map(|w| {
                quadrature::integrate_1d(
                    |z| (f.evaluate(&[z]) - f.evaluate(&[z - s])).powi(2),
                    w[0],
                    w[1],
                    512,
                )
            })
            .sum();
    }
    let lo: Vec<f64> = shift.iter().map(|&s| -1.0 + s.min(0.0)).collect();
    let hi: Vec<f64> = shift.iter().map(|&s| 1.0 + s.max(0.0)).collect();
    quadrature::integrate_box(
        |z| {
            let moved: Vec<f64> = z.iter().zip(shift).map(|(z, s)| z - s).collect();
            (f.evaluate(z) - f.evaluate(&moved)).powi(2)
        },
        &lo,
        &hi,
        if d == 2 { 96 } else { 24 },
    )
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HolderSample {
    pub distance: f64,
    pub functional: f64,
    pub declared_bound: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HolderReport {
    pub pattern: String,
    /// Half the log-log slope of `A_{t,s}` against `‖t − s‖`.
    pub fitted_exponent: f64,
    pub fitted_constant: f64,
    pub declared_exponent: Option<f64>,
    pub declared_constant: Option<f64>,
    /// True when every sample satisfies the declared bound (or nothing is declared).
    pub dominated: bool,
    pub violations: Vec<HolderSample>,
    pub samples: usize,
}

/// Fits the average-Hölder exponent from random shifts with `‖t − s‖` log-uniform
/// in `[1e-3, 0.25]` and checks the declared `(γ₂, c_A)` against every sample.
pub fn holder_check(f: &Pattern, sample_count: usize, seed: u64) -> Result<HolderReport> {
    if sample_count < 10 {
        return Err(MssError::invalid(format!(
            "holder_check needs at least 10 samples, got {sample_count}"
        )));
    }
    let mut xs = Vec::with_capacity(sample_count);
    let mut ys = Vec::with_capacity(sample_count);
    let mut violations = Vec::new();
    for i in 0..sample_count {
        let mut r = rng::stream(seed, &[rng::purpose::HOLDER, i as u64]);
        let radius = (1e-3f64.ln() + r.random::<f64>() * (0.25f64.ln() - 1e-3f64.ln())).exp();
        let mut dir: Vec<f64> = (0..f.d)
            .map(|_| r.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|x| *x *= radius / norm);
        let a = holder_functional(f, &dir);
        let bound = match (f.gamma2, f.c_a) {
            (Some(g), Some(c)) => Some(c * radius.powf(2.0 * g)),
            _ => None,
        };
        if let Some(b) = bound {
            if a > b * (1.0 + 1e-9) {
                violations.push(HolderSample {
                    distance: radius,
                    functional: a,
                    declared_bound: Some(b),
                });
            }
        }
        if a > 0.0 {
            xs.push(radius.ln());
            ys.push(a.ln());
        }
    }
    let (slope, intercept) = stats::linear_fit(&xs, &ys);
    Ok(HolderReport {
        pattern: f.name.clone(),
        fitted_exponent: slope / 2.0,
        fitted_constant: intercept.exp(),
        declared_exponent: f.gamma2,
        declared_constant: f.c_a,
        dominated: violations.is_empty(),
        violations,
        samples: sample_count,
    })
}

/// Rasterized `f_h` with unit discrete ℓ2 norm.
#[derive(Clone, Debug)]
pub struct Kernel<T> {
    pub values: ArrayD<T>,
    /// Cells per axis, `⌈2 h_j R⌉`.
    pub footprint: Vec<usize>,
    pub scale: ScaleVec,
    pub resolution: u32,
}

impl<T: Scalar> Kernel<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|v| v.to_f64_lossy().powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn negated(&self) -> Kernel<T> {
        Kernel {
            values: self.values.mapv(|v| -v),
            ..self.clone()
        }
    }
}

fn unit_normalize(values: &mut [f64]) -> Result<()> {
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(MssError::invalid("rasterized kernel is identically zero"));
    }
    values.iter_mut().for_each(|v| *v /= norm);
    Ok(())
}

fn for_each_index(shape: &[usize], mut visit: impl FnMut(&[usize])) {
    let total: usize = shape.iter().product();
    let mut idx = vec![0usize; shape.len()];
    for _ in 0..total {
        visit(&idx);
        for j in (0..shape.len()).rev() {
            idx[j] += 1;
            if idx[j] < shape[j] {
                break;
            }
            idx[j] = 0;
        }
    }
}

/// Samples `f_h` at cell centers of its `⌈2 h_j R⌉`-cell footprint and rescales to
/// unit ℓ2 norm.
pub fn rasterize<T: Scalar>(f: &Pattern, h: &ScaleVec, resolution: u32) -> Result<Kernel<T>> {
    if h.d() != f.d {
        return Err(MssError::geometry(format!(
            "scale has {} components, pattern `{}` has d = {}",
            h.d(),
            f.name,
            f.d
        )));
    }
    if h.0.iter().any(|&x| x < 1.0 - 1e-9) {
        return Err(MssError::invalid(format!("scales must be ≥ 1, got {:?}", h.0)));
    }
    if resolution < 4 {
        return Err(MssError::invalid(format!(
            "resolution must be at least 4, got {resolution}"
        )));
    }
    let r = resolution as f64;
    let shape: Vec<usize> = h.0.iter().map(|&hj| footprint(hj, r)).collect();
    let mut raw = Vec::with_capacity(shape.iter().product());
    let mut u = vec![0.0; f.d];
    for_each_index(&shape, |idx| {
        for j in 0..f.d {
            u[j] = (idx[j] as f64 + 0.5 - shape[j] as f64 / 2.0) / (r * h.0[j]);
        }
        raw.push(f.evaluate(&u));
    });
    unit_normalize(&mut raw)?;
    let values = ArrayD::from_shape_vec(
        IxDyn(&shape),
        raw.into_iter().map(T::from_f64_lossy).collect(),
    )
    .expect("shape matches sample count");
    Ok(Kernel {
        values,
        footprint: shape,
        scale: h.clone(),
        resolution,
    })
}

/// `S_t f_h` sampled on the absolute cell grid of `geom` (which need not contain it)
/// and normalized to unit ℓ2 norm.
#[derive(Clone, Debug)]
pub struct GridKernel {
    /// Grid index of the first sampled cell per axis.
    pub start: Vec<i64>,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl GridKernel {
    pub fn sample(f: &Pattern, t: &[f64], h: &[f64], geom: &Geometry) -> Result<GridKernel> {
        let r = geom.r();
        let mut start = Vec::with_capacity(f.d);
        let mut shape = Vec::with_capacity(f.d);
        for j in 0..f.d {
            let lo = ((t[j] - h[j] + geom.half_width) * r - 0.5).ceil() as i64;
            let hi = ((t[j] + h[j] + geom.half_width) * r - 0.5).floor() as i64;
            start.push(lo);
            shape.push((hi - lo + 1).max(0) as usize);
        }
        let mut values = Vec::with_capacity(shape.iter().product());
        let mut u = vec![0.0; f.d];
        for_each_index(&shape, |idx| {
            for j in 0..f.d {
                u[j] = (geom.cell_center(start[j] + idx[j] as i64) - t[j]) / h[j];
            }
            values.push(f.evaluate(&u));
        });
        unit_normalize(&mut values)?;
        Ok(GridKernel {
            start,
            shape,
            values,
        })
    }

    fn get(&self, idx: &[i64]) -> f64 {
        let mut flat = 0usize;
        for (j, &i) in idx.iter().enumerate() {
            let k = i - self.start[j];
            if k < 0 || k as usize >= self.shape[j] {
                return 0.0;
            }
            flat = flat * self.shape[j] + k as usize;
        }
        self.values[flat]
    }

    /// `‖a − b‖₂` over the union of both supports.
    pub fn distance(&self, other: &GridKernel) -> f64 {
        let d = self.start.len();
        let lo: Vec<i64> = (0..d).map(|j| self.start[j].min(other.start[j])).collect();
        let hi: Vec<i64> = (0..d)
            .map(|j| {
                (self.start[j] + self.shape[j] as i64).max(other.start[j] + other.shape[j] as i64)
            })
            .collect();
        let span: Vec<usize> = (0..d).map(|j| (hi[j] - lo[j]) as usize).collect();
        let mut sum = 0.0;
        let mut idx = vec![0i64; d];
        for_each_index(&span, |k| {
            for j in 0..d {
                idx[j] = lo[j] + k[j] as i64;
            }
            let diff = self.get(&idx) - other.get(&idx);
            sum += diff * diff;
        });
        sum.sqrt()
    }

    pub fn inner(&self, other: &GridKernel) -> f64 {
        let dist = self.distance(other);
        1.0 - dist * dist / 2.0
    }
}

/// Loads a JSON dictionary file.
pub fn load_dictionary(path: &Path) -> Result<Vec<Pattern>> {
    let text = std::fs::read_to_string(path).map_err(|source| MssError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let specs: Vec<PatternSpec> = serde_json::from_str(&text).map_err(|source| MssError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    dictionary_from_specs(&specs, path.parent())
}

pub fn dictionary_from_specs(specs: &[PatternSpec], base_dir: Option<&Path>) -> Result<Vec<Pattern>> {
    if specs.is_empty() {
        return Err(MssError::invalid("dictionary is empty"));
    }
    let mut seen = std::collections::BTreeSet::new();
    specs
        .iter()
        .map(|s| {
            if !seen.insert(s.name.clone()) {
                return Err(MssError::invalid(format!("duplicate pattern name `{}`", s.name)));
            }
            Pattern::from_spec(s, base_dir)
        })
        .collect()
}

/// The four built-in families with default parameters.
pub fn builtin_dictionary(d: usize) -> Result<Vec<Pattern>> {
    PatternKind::BUILTIN
        .iter()
        .map(|&k| make_pattern(k, d, BTreeMap::new()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bump(d: usize) -> Pattern {
        make_pattern(PatternKind::QuadraticBump, d, BTreeMap::new()).unwrap()
    }

    #[test]
    fn quadratic_bump_closed_form() {
        let f = bump(1);
        let c = 15f64.sqrt() / 4.0;
        assert!((f.evaluate(&[0.0]) - c).abs() < 1e-15);
        assert_eq!(f.evaluate(&[1.5]), 0.0);
        assert_eq!(f.evaluate(&[0.5]), f.evaluate(&[-0.5]));
        assert!((l2_norm_sq(&f, 64) - 1.0).abs() < 1e-12);

        let f2 = bump(2);
        assert!((f2.evaluate(&[0.0, 0.0]) - 15.0 / 16.0).abs() < 1e-15);
        assert!((f2.evaluate(&[0.5, -0.25]) - 15.0 / 16.0 * 0.75 * 0.9375).abs() < 1e-15);
        assert!((l2_norm_sq(&f2, 64) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn windowed_sinusoid_normalized_against_fine_riemann_sum() {
        let params = BTreeMap::from([("cycles".to_string(), 3.0)]);
        let f = make_pattern(PatternKind::WindowedSinusoid, 1, params).unwrap();
        // oracle: midpoint sum at 10^5 points of the raw shape
        let n = 100_000;
        let raw = |u: f64| (3.0 * PI * u).sin() * (0.5 * PI * u).cos().powi(2);
        let raw_sq: f64 = (0..n)
            .map(|i| raw(-1.0 + (i as f64 + 0.5) * 2.0 / n as f64).powi(2))
            .sum::<f64>()
            * 2.0
            / n as f64;
        let c = raw_sq.sqrt().recip();
        for u in [-0.7, -0.2, 0.1, 0.45, 0.9] {
            assert!((f.evaluate(&[u]) - c * raw(u)).abs() < 1e-8);
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let zero = BTreeMap::from([("cycles".to_string(), 0.0)]);
        assert!(make_pattern(PatternKind::WindowedSinusoid, 1, zero).is_err());
        let even = BTreeMap::from([("frequency".to_string(), 2.0)]);
        assert!(make_pattern(PatternKind::TensorCosine, 1, even).is_err());
        let unknown = BTreeMap::from([("width".to_string(), 2.0)]);
        assert!(make_pattern(PatternKind::QuadraticBump, 1, unknown).is_err());
        assert!(matches!(
            "zigzag".parse::<PatternKind>(),
            Err(MssError::UnknownKind(_))
        ));
    }

    #[test]
    fn builtin_invariants() {
        for d in [1, 2] {
            for f in builtin_dictionary(d).unwrap() {
                assert!((l2_norm_sq(&f, 64) - 1.0).abs() < 1e-6, "{} d={d}", f.name);
                let tv = tv_norm(&f, 64);
                assert!(tv.is_finite() && tv <= f.gamma1.unwrap(), "{} d={d}", f.name);
                assert!(f.gamma2.is_some() && f.c_a.is_some());
                for h in [1.0, 1.7, 3.0] {
                    let k: Kernel<f64> = rasterize(&f, &ScaleVec::uniform(h, d), 8).unwrap();
                    assert!((k.norm() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn tv_of_bump_matches_closed_form() {
        let f = bump(1);
        assert!((tv_norm(&f, 64) - 15f64.sqrt() / 2.0).abs() < 1e-9);
    }

    #[test]
    fn tv_converges_in_resolution() {
        for f in builtin_dictionary(1).unwrap() {
            let a = tv_norm(&f, 16);
            let b = tv_norm(&f, 32);
            assert!((a - b).abs() / b < 0.01, "{}", f.name);
        }
    }

    #[test]
    fn footprint_and_symmetry() {
        let f = bump(2);
        let k: Kernel<f64> = rasterize(&f, &ScaleVec(vec![1.0, 2.5]), 16).unwrap();
        assert_eq!(k.footprint, vec![32, 80]);
        let flipped = k.values.slice(ndarray::s![..;-1, ..;-1]).to_owned();
        let diff = (&k.values - &flipped).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-15);
    }

    #[test]
    fn shifted_kernel_overlap_matches_polynomial_integral() {
        // ρ = (15/16) ∫_{-0.5}^{1} (1 − u²)(1 − (u − 0.5)²) du, by exact antiderivative
        let poly = |u: f64| {
            // (1 − u²)(1 − (u − ½)²) = u⁴ − u³ − (7/4)u² + u + 3/4
            u.powi(5) / 5.0 - u.powi(4) / 4.0 - 7.0 / 12.0 * u.powi(3) + 0.5 * u * u + 0.75 * u
        };
        let rho = 15.0 / 16.0 * (poly(1.0) - poly(-0.5));
        let f = bump(1);
        let k: Kernel<f64> = rasterize(&f, &ScaleVec(vec![1.0]), 16).unwrap();
        let v = k.values.as_slice().unwrap();
        let self_inner: f64 = v.iter().map(|x| x * x).sum();
        assert!((self_inner - 1.0).abs() < 1e-12);
        let shifted: f64 = (0..v.len() - 8).map(|i| v[i] * v[i + 8]).sum();
        assert!((shifted - rho).abs() < 1e-3, "{shifted} vs {rho}");
    }

    #[test]
    fn holder_functional_edges() {
        let f = bump(1);
        assert_eq!(holder_functional(&f, &[0.0]), 0.0);
        assert!((holder_functional(&f, &[4.0]) - 2.0).abs() < 1e-12);
        // just below disjointness the quadrature must agree with 2 − 2ρ
        let a = holder_functional(&f, &[1.999_999]);
        assert!((a - 2.0).abs() < 1e-6);
        let f2 = bump(2);
        assert!((holder_functional(&f2, &[3.0, 0.0]) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn holder_check_lipschitz_exponent() {
        for f in builtin_dictionary(1).unwrap() {
            let rep = holder_check(&f, 40, 11).unwrap();
            assert!(rep.fitted_exponent >= 0.95, "{} {}", f.name, rep.fitted_exponent);
            assert!(rep.dominated, "{}: {:?}", f.name, rep.violations);
        }
    }

    #[test]
    fn holder_check_flags_violation() {
        let mut f = bump(1);
        f.c_a = Some(0.1);
        let rep = holder_check(&f, 20, 3).unwrap();
        assert!(!rep.dominated);
        assert!(holder_check(&f, 5, 3).is_err());
    }

    #[test]
    fn grid_kernel_matches_rasterize_at_aligned_center() {
        let geom = Geometry::new(1, 8.0, 16).unwrap();
        let f = builtin_dictionary(1).unwrap().remove(2);
        let k: Kernel<f64> = rasterize(&f, &ScaleVec(vec![2.0]), 16).unwrap();
        let g = GridKernel::sample(&f, &[0.0], &[2.0], &geom).unwrap();
        assert_eq!(g.shape, k.footprint);
        for (a, b) in g.values.iter().zip(k.values.iter()) {
            assert!((a - b).abs() < 1e-13);
        }
    }
}
