//! Canonical distance `ν_f` on location/scale pairs and its closed-form upper bounds.
//!
//! Distances are computed between unit-norm kernels sampled on one absolute cell
//! grid (cell centers at `(k + 0.5)/R` offsets from an integer), the same grid the
//! scan evaluates on. `ν` is therefore an honest ℓ2 distance: symmetric, zero on the
//! diagonal and subadditive, and invariant under shifts by whole cells.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::MetricConstants;
use crate::error::{MssError, Result};
use crate::geometry::Geometry;
use crate::pattern::{GridKernel, Pattern};
use crate::rng;
use crate::stats::linear_fit;

/// One `(t, h)` point of `𝓓`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamPoint {
    pub t: Vec<f64>,
    pub h: Vec<f64>,
}

impl ParamPoint {
    pub fn new(t: Vec<f64>, h: Vec<f64>) -> Self {
        ParamPoint { t, h }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamPair {
    pub a: ParamPoint,
    pub b: ParamPoint,
}

fn reference_grid(d: usize, resolution: u32) -> Result<Geometry> {
    if resolution < 4 {
        return Err(MssError::invalid(format!(
            "resolution must be at least 4, got {resolution}"
        )));
    }
    Ok(Geometry {
        d,
        half_width: 2.0,
        resolution,
    })
}

fn check_point(f: &Pattern, p: &ParamPoint) -> Result<()> {
    if p.t.len() != f.d || p.h.len() != f.d {
        return Err(MssError::geometry(format!(
            "point has dimension ({}, {}), pattern `{}` has d = {}",
            p.t.len(),
            p.h.len(),
            f.name,
            f.d
        )));
    }
    if p.h.iter().any(|&h| !(h > 0.0)) {
        return Err(MssError::invalid(format!("scales must be positive, got {:?}", p.h)));
    }
    Ok(())
}

/// `ν_f(a, b)` with both kernels sampled on the cell grid of `geom`.
pub fn nu_at(f: &Pattern, a: &ParamPoint, b: &ParamPoint, geom: &Geometry) -> Result<f64> {
    check_point(f, a)?;
    check_point(f, b)?;
    let ka = GridKernel::sample(f, &a.t, &a.h, geom)?;
    let kb = GridKernel::sample(f, &b.t, &b.h, geom)?;
    Ok(ka.distance(&kb))
}

/// `ν_f((t, h), (t′, h′)) = ‖S_t f_h − S_{t′} f_{h′}‖` on the resolution-`R` grid.
pub fn nu(f: &Pattern, pair: &ParamPair, resolution: u32) -> Result<f64> {
    nu_at(f, &pair.a, &pair.b, &reference_grid(f.d, resolution)?)
}

/// Bracket of the total-variation bound (unit constant):
/// `‖(t − t′)/h‖² + ‖(h − h′)/h‖² + (√(h′_•/h_•) − 1)²`, scaled by the first point.
pub fn tvc_bracket(pair: &ParamPair) -> f64 {
    let (a, b) = (&pair.a, &pair.b);
    let mut loc = 0.0;
    let mut scale = 0.0;
    for j in 0..a.h.len() {
        loc += ((a.t[j] - b.t[j]) / a.h[j]).powi(2);
        scale += ((a.h[j] - b.h[j]) / a.h[j]).powi(2);
    }
    let vol_a: f64 = a.h.iter().product();
    let vol_b: f64 = b.h.iter().product();
    loc + scale + ((vol_b / vol_a).sqrt() - 1.0).powi(2)
}

/// Bracket of the average-Hölder bound (unit constant):
/// `Σ|Δt_j/h_j|^{2γ} + Σ|Δh_j/√(h_j h′_j)|² + Σ|Δh_j/√(h_j h′_j)|^{2γ}`.
pub fn ahc_bracket(gamma2: f64, pair: &ParamPair) -> f64 {
    let (a, b) = (&pair.a, &pair.b);
    let mut total = 0.0;
    for j in 0..a.h.len() {
        let dt = ((a.t[j] - b.t[j]) / a.h[j]).abs();
        let dh = ((a.h[j] - b.h[j]) / (a.h[j] * b.h[j]).sqrt()).abs();
        total += dt.powf(2.0 * gamma2) + dh * dh + dh.powf(2.0 * gamma2);
    }
    total
}

/// Upper bound on `ν²` under a total-variation bound `γ₁`.
pub fn nu_bound_tvc(gamma1: f64, pair: &ParamPair, c: f64) -> f64 {
    c * gamma1 * tvc_bracket(pair)
}

/// Upper bound on `ν²` under an average-Hölder exponent `γ₂`.
pub fn nu_bound_ahc(gamma2: f64, pair: &ParamPair, c: f64) -> f64 {
    c * ahc_bracket(gamma2, pair)
}

/// Random pair around a base point with log-uniform relative perturbation sizes.
pub fn random_pair(rng: &mut impl Rng, d: usize, max_scale: f64) -> ParamPair {
    let h: Vec<f64> = (0..d)
        .map(|_| rng.random_range(0.0..max_scale.ln()).exp())
        .collect();
    let t: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let size_t = 10f64.powf(rng.random_range(-3.0..0.0));
    let size_h = 10f64.powf(rng.random_range(-3.0..0.0));
    let t2 = t
        .iter()
        .zip(&h)
        .map(|(&tj, &hj)| tj + size_t * hj * rng.random_range(-1.0..1.0))
        .collect();
    let h2 = h
        .iter()
        .map(|&hj| (hj * (size_h * rng.random_range(-1.0..1.0f64)).exp()).max(1.0))
        .collect();
    ParamPair {
        a: ParamPoint { t, h },
        b: ParamPoint { t: t2, h: h2 },
    }
}

/// Largest observed ratio of `ν²` to each bound bracket over random pairs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DominationReport {
    pub pattern: String,
    pub pairs: usize,
    /// `max ν² / (γ₁·bracket)`, when `γ₁` is declared.
    pub tvc_ratio: Option<f64>,
    /// `max ν² / bracket`, when `γ₂` is declared.
    pub ahc_ratio: Option<f64>,
    pub tvc_violations: usize,
    pub ahc_violations: usize,
}

/// Evaluates `ν²` against both bounds (with constants `c`) on `pairs` random pairs.
pub fn domination_check(
    f: &Pattern,
    pairs: usize,
    seed: u64,
    resolution: u32,
    c: MetricConstants,
) -> Result<DominationReport> {
    let results = crate::parallel::try_map_indices(pairs, |i| {
        let mut r = rng::stream(seed, &[rng::purpose::PAIR, i as u64]);
        let pair = random_pair(&mut r, f.d, 8.0);
        let nu2 = nu(f, &pair, resolution)?.powi(2);
        let tvc = f.gamma1.map(|g1| nu2 / (g1 * tvc_bracket(&pair)));
        let ahc = f.gamma2.map(|g2| nu2 / ahc_bracket(g2, &pair));
        Ok((tvc, ahc))
    })?;
    let max_opt = |xs: Vec<Option<f64>>| -> Option<f64> {
        xs.into_iter().flatten().filter(|x| x.is_finite()).reduce(f64::max)
    };
    let tvc_ratio = max_opt(results.iter().map(|r| r.0).collect());
    let ahc_ratio = max_opt(results.iter().map(|r| r.1).collect());
    Ok(DominationReport {
        pattern: f.name.clone(),
        pairs,
        tvc_ratio,
        ahc_ratio,
        tvc_violations: results.iter().filter(|r| r.0.is_some_and(|x| x > c.c_tvc)).count(),
        ahc_violations: results.iter().filter(|r| r.1.is_some_and(|x| x > c.c_ahc)).count(),
    })
}

/// Smallest constants dominating every sampled pair for every pattern, times `margin`.
pub fn calibrate_metric_constants(
    dict: &[Pattern],
    pairs: usize,
    seed: u64,
    resolution: u32,
    margin: f64,
) -> Result<MetricConstants> {
    let mut c_tvc: f64 = 0.0;
    let mut c_ahc: f64 = 0.0;
    let unit = MetricConstants { c_tvc: 1.0, c_ahc: 1.0 };
    for f in dict {
        let rep = domination_check(f, pairs, seed, resolution, unit)?;
        c_tvc = c_tvc.max(rep.tvc_ratio.unwrap_or(0.0));
        c_ahc = c_ahc.max(rep.ahc_ratio.unwrap_or(0.0));
    }
    Ok(MetricConstants {
        c_tvc: c_tvc * margin,
        c_ahc: c_ahc * margin,
    })
}

/// Log-log slope of `ν²` against the total-variation bracket over shrinking
/// perturbations `s·direction`, `s = 2^{-k}`.
pub fn shrinking_slope(
    f: &Pattern,
    base: &ParamPoint,
    direction: &ParamPoint,
    levels: std::ops::RangeInclusive<i32>,
    resolution: u32,
) -> Result<f64> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for k in levels {
        let s = 2f64.powi(-k);
        let b = ParamPoint {
            t: base.t.iter().zip(&direction.t).map(|(t, dt)| t + s * dt).collect(),
            h: base.h.iter().zip(&direction.h).map(|(h, dh)| h * (s * dh).exp()).collect(),
        };
        let pair = ParamPair { a: base.clone(), b };
        let nu2 = nu(f, &pair, resolution)?.powi(2);
        let bracket = tvc_bracket(&pair);
        if nu2 > 0.0 && bracket > 0.0 {
            xs.push(bracket.ln());
            ys.push(nu2.ln());
        }
    }
    if xs.len() < 3 {
        return Err(MssError::invalid("too few usable perturbation levels"));
    }
    Ok(linear_fit(&xs, &ys).0)
}
