//! Finite ε-nets `D_{β,α}` of location/scale parameters.
//!
//! Scales are the geometric grid `β^ℓ`, `ℓ ∈ {0, …, ℓ_max}^d`; at each scale the
//! locations are the lattice `×_j (α h_j ℤ) ∩ 𝓣_h`. Refined nets keep the same base
//! `(α, β)` and subdivide both grids by integer step counts, so every entry of the
//! coarse net is reproduced bit-for-bit in the refined one.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{EngineConfig, NetConstants};
use crate::error::{MssError, Result};
use crate::geometry::{footprint, snap, Geometry, LocationVec, ScaleVec};
use crate::metric::{nu_at, ParamPoint};
use crate::pattern::Pattern;
use crate::rng;

const FUZZ: f64 = 1e-9;

/// `α = C_α ε^{1/γ}`, `β = 1 + C_β((1 + ε)^{2/d} − 1)`.
pub fn params_for_epsilon(
    epsilon: f64,
    gamma: f64,
    d: usize,
    constants: NetConstants,
) -> Result<(f64, f64)> {
    if !(epsilon > 0.0) {
        return Err(MssError::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    if epsilon > 1.0 {
        return Err(MssError::invalid(format!("epsilon must be at most 1, got {epsilon}")));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(MssError::invalid(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    if !(constants.c_alpha > 0.0 && constants.c_beta > 0.0) {
        return Err(MssError::invalid("net constants must be positive"));
    }
    let alpha = constants.c_alpha * epsilon.powf(1.0 / gamma);
    let growth = (1.0 + epsilon).powf(2.0 / d as f64) - 1.0;
    let beta = (1.0 + constants.c_beta * growth).max(1.0 + 1e-12);
    Ok((alpha, beta))
}

/// `ℓ_max = ⌊log_β L⌋` for a grid subdivided into `steps` per factor of `β`.
fn max_level(half_width: f64, beta: f64, steps: u32) -> u32 {
    (steps as f64 * half_width.ln() / beta.ln() + FUZZ).floor() as u32
}

fn level_scale(beta: f64, level: u32, steps: u32) -> f64 {
    beta.powf(level as f64 / steps as f64)
}

/// One-dimensional scale levels `β^{ℓ/steps} < L`.
fn scale_levels(half_width: f64, beta: f64, steps: u32) -> Vec<f64> {
    (0..=max_level(half_width, beta, steps))
        .map(|l| level_scale(beta, l, steps))
        .filter(|&h| h < half_width * (1.0 - 1e-12))
        .collect()
}

/// All `d`-fold products of `{β⁰, …, β^{ℓ_max}}`, dropping any component `≥ L`.
pub fn build_scales(half_width: f64, beta: f64, d: usize) -> Vec<ScaleVec> {
    let levels = scale_levels(half_width, beta, 1);
    product(&vec![levels; d]).into_iter().map(ScaleVec).collect()
}

fn product(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for axis in axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&x| {
                    let mut v = prefix.clone();
                    v.push(x);
                    v
                })
            })
            .collect();
    }
    out
}

/// The lattice `×_j (α h_j ℤ) ∩ 𝓣_h`.
pub fn build_locations(h: &ScaleVec, half_width: f64, alpha: f64) -> Vec<LocationVec> {
    ScaleBlock::new(h.clone(), half_width, alpha, 1).locations().collect()
}

/// Locations of one scale: `t_j = (i / steps)·α·h_j` for `|i| ≤ half_counts[j]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleBlock {
    pub h: ScaleVec,
    pub alpha: f64,
    pub loc_steps: u32,
    pub half_counts: Vec<usize>,
}

impl ScaleBlock {
    fn new(h: ScaleVec, half_width: f64, alpha: f64, loc_steps: u32) -> Self {
        let half_counts = h
            .0
            .iter()
            .map(|&hj| {
                let spacing = alpha * hj / loc_steps as f64;
                ((half_width - hj) / spacing + FUZZ).floor().max(0.0) as usize
            })
            .collect();
        ScaleBlock {
            h,
            alpha,
            loc_steps,
            half_counts,
        }
    }

    pub fn coordinate(&self, axis: usize, i: i64) -> f64 {
        (i as f64 / self.loc_steps as f64) * self.alpha * self.h.0[axis]
    }

    /// `∏_j (2 m_j + 1)`.
    pub fn count(&self) -> u128 {
        self.half_counts.iter().map(|&m| 2 * m as u128 + 1).product()
    }

    /// Lattice coordinates along one axis.
    pub fn axis_coordinates(&self, axis: usize) -> Vec<f64> {
        let m = self.half_counts[axis] as i64;
        (-m..=m).map(|i| self.coordinate(axis, i)).collect()
    }

    /// Locations in lexicographic order.
    pub fn locations(&self) -> impl Iterator<Item = LocationVec> + '_ {
        let axes: Vec<Vec<f64>> = (0..self.h.d()).map(|j| self.axis_coordinates(j)).collect();
        product(&axes).into_iter().map(LocationVec)
    }
}

/// The finite set `D_{β,α}` grouped by scale, finest first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Net {
    #[serde(rename = "L")]
    pub half_width: f64,
    pub d: usize,
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub gamma_used: f64,
    /// Scale grid is `β^{ℓ/scale_steps}`.
    pub scale_steps: u32,
    /// Location grid is `(α/loc_steps) h ℤ`.
    pub loc_steps: u32,
    pub blocks: Vec<ScaleBlock>,
}

/// Net construction request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    #[serde(rename = "L")]
    pub half_width: f64,
    pub d: usize,
    pub epsilon: f64,
    #[serde(default = "one")]
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, rename = "C_alpha", skip_serializing_if = "Option::is_none")]
    pub c_alpha: Option<f64>,
    #[serde(default, rename = "C_beta", skip_serializing_if = "Option::is_none")]
    pub c_beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_entries: Option<u64>,
}

fn one() -> f64 {
    1.0
}

impl NetSpec {
    pub fn new(half_width: f64, d: usize, epsilon: f64) -> Self {
        NetSpec {
            half_width,
            d,
            epsilon,
            gamma: 1.0,
            alpha: None,
            beta: None,
            c_alpha: None,
            c_beta: None,
            max_entries: None,
        }
    }

    pub fn with_alpha_beta(mut self, alpha: f64, beta: f64) -> Self {
        self.alpha = Some(alpha);
        self.beta = Some(beta);
        self
    }
}

/// Smoothness exponent for α sizing: the smallest declared γ₂ over the dictionary,
/// or 1 when only total-variation bounds are declared.
pub fn dictionary_gamma(dict: &[Pattern]) -> f64 {
    dict.iter()
        .map(|f| f.gamma2.unwrap_or(1.0))
        .fold(1.0, f64::min)
}

pub fn build_net(spec: &NetSpec, config: &EngineConfig) -> Result<Net> {
    if spec.d == 0 {
        return Err(MssError::invalid("d must be positive"));
    }
    if !(spec.half_width > 1.0) {
        return Err(MssError::invalid(format!("L must exceed 1, got {}", spec.half_width)));
    }
    let defaults = config.net_constants(spec.d);
    let constants = NetConstants {
        c_alpha: spec.c_alpha.unwrap_or(defaults.c_alpha),
        c_beta: spec.c_beta.unwrap_or(defaults.c_beta),
    };
    let (rule_alpha, rule_beta) = params_for_epsilon(spec.epsilon, spec.gamma, spec.d, constants)?;
    let alpha = spec.alpha.unwrap_or(rule_alpha);
    let beta = spec.beta.unwrap_or(rule_beta);
    if !(alpha > 0.0) {
        return Err(MssError::invalid(format!("alpha must be positive, got {alpha}")));
    }
    if !(beta > 1.0) {
        return Err(MssError::invalid(format!("beta must exceed 1, got {beta}")));
    }
    let net = Net::assemble(spec.half_width, spec.d, alpha, beta, spec.epsilon, spec.gamma, 1, 1);
    let cap = spec.max_entries.unwrap_or(config.max_entries);
    net.check_size(cap)?;
    Ok(net)
}

impl Net {
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        half_width: f64,
        d: usize,
        alpha: f64,
        beta: f64,
        epsilon: f64,
        gamma_used: f64,
        scale_steps: u32,
        loc_steps: u32,
    ) -> Net {
        let levels = scale_levels(half_width, beta, scale_steps);
        let blocks = product(&vec![levels; d])
            .into_iter()
            .map(|h| ScaleBlock::new(ScaleVec(h), half_width, alpha, loc_steps))
            .collect();
        Net {
            half_width,
            d,
            alpha,
            beta,
            epsilon,
            gamma_used,
            scale_steps,
            loc_steps,
            blocks,
        }
    }

    fn check_size(&self, cap: u64) -> Result<()> {
        let entries = self.len();
        if entries > cap as u128 {
            return Err(MssError::NetTooLarge {
                entries,
                cap,
                alpha: self.effective_alpha(),
                beta: self.effective_beta(),
            });
        }
        Ok(())
    }

    pub fn len(&self) -> u128 {
        self.blocks.iter().map(ScaleBlock::count).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn scales(&self) -> impl Iterator<Item = &ScaleVec> {
        self.blocks.iter().map(|b| &b.h)
    }

    /// Location spacing factor actually used, `α / loc_steps`.
    pub fn effective_alpha(&self) -> f64 {
        self.alpha / self.loc_steps as f64
    }

    /// Scale ratio actually used, `β^{1/scale_steps}`.
    pub fn effective_beta(&self) -> f64 {
        self.beta.powf(1.0 / self.scale_steps as f64)
    }

    /// Every `(t, h)` entry, grouped by scale.
    pub fn entries(&self) -> impl Iterator<Item = (LocationVec, &ScaleVec)> + '_ {
        self.blocks
            .iter()
            .flat_map(|b| b.locations().map(move |t| (t, &b.h)))
    }

    /// Superset net with the scale grid split into `scale_steps` and the location grid
    /// into `loc_steps` sub-steps.
    pub fn refine(&self, scale_steps: u32, loc_steps: u32, epsilon: f64) -> Net {
        Net::assemble(
            self.half_width,
            self.d,
            self.alpha,
            self.beta,
            epsilon,
            self.gamma_used,
            self.scale_steps * scale_steps.max(1),
            self.loc_steps * loc_steps.max(1),
        )
    }

    /// Nested refinement at least as fine as the `ε / divisor` rule.
    pub fn fine_net(&self, divisor: f64, config: &EngineConfig) -> Result<Net> {
        let epsilon = self.epsilon / divisor;
        let (alpha, beta) =
            params_for_epsilon(epsilon, self.gamma_used, self.d, config.net_constants(self.d))?;
        let scale_steps = (self.effective_beta().ln() / beta.ln() - FUZZ).ceil().max(1.0) as u32;
        let loc_steps = (self.effective_alpha() / alpha - FUZZ).ceil().max(1.0) as u32;
        let net = self.refine(scale_steps, loc_steps, epsilon);
        net.check_size(config.max_entries)?;
        Ok(net)
    }

    /// Candidate entries near `(t, h)`: adjacent scale levels per axis and a few
    /// lattice steps around `t` at each.
    fn neighbours(&self, point: &ParamPoint) -> Vec<ParamPoint> {
        let levels = scale_levels(self.half_width, self.beta, self.scale_steps);
        let beta = self.effective_beta();
        let per_axis_scales: Vec<Vec<f64>> = point
            .h
            .iter()
            .map(|&h| {
                let l = (h.ln() / beta.ln() + FUZZ).floor().max(0.0) as usize;
                [l, l + 1]
                    .iter()
                    .filter_map(|&i| levels.get(i).copied())
                    .collect()
            })
            .collect();
        let mut out = Vec::new();
        for hs in product(&per_axis_scales) {
            let block = ScaleBlock::new(
                ScaleVec(hs.clone()),
                self.half_width,
                self.alpha,
                self.loc_steps,
            );
            let per_axis_locs: Vec<Vec<f64>> = (0..self.d)
                .map(|j| {
                    let spacing = self.alpha * hs[j] / self.loc_steps as f64;
                    let m = block.half_counts[j] as i64;
                    let c = (point.t[j] / spacing).floor() as i64;
                    ((c - 1)..=(c + 2))
                        .filter(|i| i.abs() <= m)
                        .map(|i| block.coordinate(j, i))
                        .collect()
                })
                .collect();
            for t in product(&per_axis_locs) {
                out.push(ParamPoint { t, h: hs.clone() });
            }
        }
        out
    }
}

/// Outcome of a Monte Carlo covering check.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoverageReport {
    pub pattern: String,
    pub epsilon: f64,
    pub alpha: f64,
    pub beta: f64,
    pub trials: usize,
    /// Largest over trials of the distance to the nearest net entry.
    pub max_min_distance: f64,
    /// Fraction of trials within `epsilon`.
    pub coverage: f64,
    pub worst: Option<ParamPoint>,
}

/// Uniform point of `𝓓`: `h_j ~ U[1, L)`, then `t_j ~ U[-(L − h_j), L − h_j]`.
pub fn sample_point(rng: &mut impl Rng, half_width: f64, d: usize) -> ParamPoint {
    let h: Vec<f64> = (0..d).map(|_| rng.random_range(1.0..half_width)).collect();
    let t = h
        .iter()
        .map(|&hj| {
            let w = half_width - hj;
            if w > 0.0 {
                rng.random_range(-w..=w)
            } else {
                0.0
            }
        })
        .collect();
    ParamPoint { t, h }
}

/// Distance from `point` to the nearest net entry as evaluated by the scan, i.e.
/// with entry locations snapped to the cell grid.
pub fn nearest_distance(net: &Net, f: &Pattern, point: &ParamPoint, geom: &Geometry) -> Result<f64> {
    let mut best = f64::INFINITY;
    for cand in net.neighbours(point) {
        let mut t = Vec::with_capacity(net.d);
        let mut fits = true;
        for j in 0..net.d {
            match snap(cand.t[j], footprint(cand.h[j], geom.r()), geom) {
                Some((_, c)) => t.push(c),
                None => {
                    fits = false;
                    break;
                }
            }
        }
        if !fits {
            continue;
        }
        let snapped = ParamPoint { t, h: cand.h };
        best = best.min(nu_at(f, point, &snapped, geom)?);
    }
    Ok(best)
}

/// Samples `trials` uniform points of `𝓓` and measures their distance to the net.
pub fn verify_net(
    net: &Net,
    f: &Pattern,
    epsilon: f64,
    trials: usize,
    seed: u64,
    resolution: u32,
) -> Result<CoverageReport> {
    if trials == 0 {
        return Err(MssError::invalid("verify_net needs at least one trial"));
    }
    if f.d != net.d {
        return Err(MssError::geometry(format!(
            "pattern `{}` has d = {}, net has d = {}",
            f.name, f.d, net.d
        )));
    }
    let geom = Geometry::new(net.d, net.half_width, resolution)?;
    let distances = crate::parallel::try_map_indices(trials, |i| {
        let mut r = rng::stream(seed, &[rng::purpose::NET_TRIAL, i as u64]);
        let point = sample_point(&mut r, net.half_width, net.d);
        nearest_distance(net, f, &point, &geom).map(|dist| (dist, point))
    })?;
    let mut worst: Option<(f64, ParamPoint)> = None;
    let mut covered = 0usize;
    for (dist, point) in distances {
        if dist <= epsilon {
            covered += 1;
        }
        if worst.as_ref().is_none_or(|(w, _)| dist > *w) {
            worst = Some((dist, point));
        }
    }
    let (max_min_distance, worst) = worst.map(|(d, p)| (d, Some(p))).unwrap_or((0.0, None));
    Ok(CoverageReport {
        pattern: f.name.clone(),
        epsilon,
        alpha: net.effective_alpha(),
        beta: net.effective_beta(),
        trials,
        max_min_distance,
        coverage: covered as f64 / trials as f64,
        worst,
    })
}

/// One grid point of the net-constant search.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConstantsCandidate {
    pub constants: NetConstants,
    pub entries: u128,
    pub min_coverage: f64,
    pub max_distance: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NetCalibration {
    pub d: usize,
    pub half_width: f64,
    pub epsilon: f64,
    pub trials: usize,
    /// Coarsest passing candidate (fewest entries).
    pub best: Option<ConstantsCandidate>,
    pub candidates: Vec<ConstantsCandidate>,
}

/// Grid search for the coarsest `(C_α, C_β)` whose net covers every pattern of
/// `dict` at `epsilon` on all `trials` draws.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_net_constants(
    dict: &[Pattern],
    half_width: f64,
    epsilon: f64,
    c_alpha_grid: &[f64],
    c_beta_grid: &[f64],
    trials: usize,
    seed: u64,
    config: &EngineConfig,
) -> Result<NetCalibration> {
    let d = dict.first().ok_or_else(|| MssError::invalid("empty dictionary"))?.d;
    let gamma = dictionary_gamma(dict);
    let mut candidates = Vec::new();
    for &c_alpha in c_alpha_grid {
        for &c_beta in c_beta_grid {
            let constants = NetConstants { c_alpha, c_beta };
            let mut spec = NetSpec::new(half_width, d, epsilon);
            spec.gamma = gamma;
            spec.c_alpha = Some(c_alpha);
            spec.c_beta = Some(c_beta);
            let net = build_net(&spec, config)?;
            let mut min_coverage: f64 = 1.0;
            let mut max_distance: f64 = 0.0;
            for f in dict {
                let rep = verify_net(&net, f, epsilon, trials, seed, config.resolution)?;
                min_coverage = min_coverage.min(rep.coverage);
                max_distance = max_distance.max(rep.max_min_distance);
                if min_coverage < 1.0 {
                    break;
                }
            }
            candidates.push(ConstantsCandidate {
                constants,
                entries: net.len(),
                min_coverage,
                max_distance,
            });
        }
    }
    let best = candidates
        .iter()
        .filter(|c| c.min_coverage >= 1.0)
        .min_by(|a, b| {
            a.entries
                .cmp(&b.entries)
                .then(a.max_distance.total_cmp(&b.max_distance))
        })
        .cloned();
    Ok(NetCalibration {
        d,
        half_width,
        epsilon,
        trials,
        best,
        candidates,
    })
}
