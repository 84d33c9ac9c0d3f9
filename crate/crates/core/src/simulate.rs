//! Null/alternative data generation, tail diagnostics and the end-to-end experiment
//! harness. Every random draw comes from a counter-based stream keyed by
//! `(seed, purpose, replicate, index)`, so results do not depend on scheduling.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::detect::{decide, PowerInputs, ThresholdSpec};
use crate::error::{MssError, Result};
use crate::field::{Provenance, TensorField};
use crate::geometry::{snap, Geometry, LocationVec, ScaleVec};
use crate::net::Net;
use crate::pattern::{rasterize, Pattern};
use crate::rng::{self, purpose};
use crate::scalar::Scalar;
use crate::scan::ScanPlan;
use crate::stats;

/// Maximum placement redraws before giving up.
pub const MAX_REDRAWS: usize = 100;

/// How per-tensor scales are drawn under the alternative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ScaleLaw {
    Fixed { h: Vec<f64> },
    LogUniform { h_min: f64, h_max: f64 },
}

/// Signal amplitude: fixed, or `√2·V_n/M_n + gap` from the drawn scales.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Amplitude {
    Mu(f64),
    PowerGap(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Hypothesis {
    H0,
    H1 {
        pattern: String,
        amplitude: Amplitude,
        #[serde(default = "default_scale_law")]
        scale_law: ScaleLaw,
    },
}

fn default_scale_law() -> ScaleLaw {
    ScaleLaw::LogUniform {
        h_min: 1.0,
        h_max: 4.0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub d: usize,
    #[serde(rename = "L")]
    pub half_width: f64,
    #[serde(rename = "R", default = "default_resolution")]
    pub resolution: u32,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    pub hypothesis: Hypothesis,
}

fn default_resolution() -> u32 {
    16
}

impl SimConfig {
    pub fn geometry(&self) -> Result<Geometry> {
        Geometry::new(self.d, self.half_width, self.resolution)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry()?;
        if self.n == 0 {
            return Err(MssError::invalid("n must be positive"));
        }
        if let Hypothesis::H1 {
            amplitude,
            scale_law,
            ..
        } = &self.hypothesis
        {
            match *amplitude {
                Amplitude::Mu(mu) if !(mu >= 0.0) => {
                    return Err(MssError::invalid(format!("mu must be nonnegative, got {mu}")))
                }
                Amplitude::PowerGap(g) if !g.is_finite() => {
                    return Err(MssError::invalid("power gap must be finite"))
                }
                _ => {}
            }
            match scale_law {
                ScaleLaw::Fixed { h } => {
                    if h.len() != self.d {
                        return Err(MssError::geometry(format!(
                            "fixed scale has {} components, d = {}",
                            h.len(),
                            self.d
                        )));
                    }
                    ScaleVec(h.clone()).validate(self.half_width)?;
                }
                ScaleLaw::LogUniform { h_min, h_max } => {
                    if !(*h_min >= 1.0 && h_max >= h_min && *h_max < self.half_width) {
                        return Err(MssError::invalid(format!(
                            "scale law needs 1 ≤ h_min ≤ h_max < L, got [{h_min}, {h_max}]"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// What was planted in one tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub pattern: String,
    pub mu: f64,
    /// Realized (cell-snapped) center.
    pub t: LocationVec,
    pub h: ScaleVec,
}

/// iid standard normal cells for tensor 0 of `replicate`.
pub fn gen_null_field<T: Scalar>(geom: &Geometry, seed: u64, replicate: u64) -> TensorField<T> {
    noise_field(geom, seed, replicate, 0)
}

/// iid standard normal cells for tensor `index` of `replicate`.
pub fn noise_field<T: Scalar>(geom: &Geometry, seed: u64, replicate: u64, index: u64) -> TensorField<T> {
    let mut r = rng::stream(seed, &[purpose::TENSOR, replicate, index]);
    let values = ArrayD::from_shape_simple_fn(IxDyn(&geom.shape()), || {
        let z: f64 = StandardNormal.sample(&mut r);
        T::from_f64_lossy(z)
    });
    TensorField {
        geometry: *geom,
        values,
        provenance: Provenance::Null,
    }
}

fn draw_scale(rng: &mut impl Rng, law: &ScaleLaw, d: usize) -> ScaleVec {
    match law {
        ScaleLaw::Fixed { h } => ScaleVec(h.clone()),
        ScaleLaw::LogUniform { h_min, h_max } => ScaleVec(
            (0..d)
                .map(|_| {
                    if h_max > h_min {
                        rng.random_range(h_min.ln()..h_max.ln()).exp()
                    } else {
                        *h_min
                    }
                })
                .collect(),
        ),
    }
}

/// Draws a scale and a uniform location in `𝓣_h` whose kernel fits the grid; returns
/// window starts, realized center and scale.
fn draw_placement(
    rng: &mut impl Rng,
    law: &ScaleLaw,
    geom: &Geometry,
) -> Result<(Vec<usize>, LocationVec, ScaleVec)> {
    for _ in 0..MAX_REDRAWS {
        let h = draw_scale(rng, law, geom.d);
        let mut starts = Vec::with_capacity(geom.d);
        let mut center = Vec::with_capacity(geom.d);
        for &hj in &h.0 {
            let w = geom.half_width - hj;
            let t = if w > 0.0 { rng.random_range(-w..=w) } else { 0.0 };
            match snap(t, crate::geometry::footprint(hj, geom.r()), geom) {
                Some((s, c)) => {
                    starts.push(s);
                    center.push(c);
                }
                None => break,
            }
        }
        if starts.len() == geom.d {
            return Ok((starts, LocationVec(center), h));
        }
    }
    Err(MssError::PlacementInfeasible(MAX_REDRAWS))
}

fn add_kernel<T: Scalar>(x: &mut TensorField<T>, kernel: &ArrayD<T>, starts: &[usize], mu: f64) {
    let mu = T::from_f64_lossy(mu);
    let mut view = x.values.slice_each_axis_mut(|ax| {
        let s = starts[ax.axis.index()];
        ndarray::Slice::from(s..s + kernel.shape()[ax.axis.index()])
    });
    view.zip_mut_with(kernel, |a, &k| *a = *a + mu * k);
}

fn find_pattern<'a>(dict: &'a [Pattern], name: &str) -> Result<&'a Pattern> {
    dict.iter()
        .find(|f| f.name == name)
        .ok_or_else(|| MssError::invalid(format!("planted pattern `{name}` is not in the dictionary")))
}

/// One replicate dataset of `config.n` tensors, with ground truth under H1.
pub fn gen_dataset<T: Scalar>(
    config: &SimConfig,
    dict: &[Pattern],
    replicate: u64,
) -> Result<Vec<(TensorField<T>, Option<GroundTruth>)>> {
    config.validate()?;
    let geom = config.geometry()?;
    let (pattern, amplitude, law) = match &config.hypothesis {
        Hypothesis::H0 => {
            return Ok((0..config.n as u64)
                .map(|i| (noise_field(&geom, config.seed, replicate, i), None))
                .collect())
        }
        Hypothesis::H1 {
            pattern,
            amplitude,
            scale_law,
        } => (find_pattern(dict, pattern)?, *amplitude, scale_law),
    };
    let placements: Vec<_> = (0..config.n as u64)
        .map(|i| {
            let mut r = rng::stream(config.seed, &[purpose::PLACEMENT, replicate, i]);
            draw_placement(&mut r, law, &geom)
        })
        .collect::<Result<_>>()?;
    let mu = match amplitude {
        Amplitude::Mu(mu) => mu,
        Amplitude::PowerGap(gap) => {
            let pw = PowerInputs {
                mu: 0.0,
                scales: placements.iter().map(|p| p.2.clone()).collect(),
                half_width: geom.half_width,
                n: config.n,
                epsilon: 0.0,
            };
            pw.critical_mu() + gap
        }
    };
    placements
        .into_iter()
        .enumerate()
        .map(|(i, (starts, t, h))| {
            let mut x = noise_field::<T>(&geom, config.seed, replicate, i as u64);
            let kernel = rasterize::<T>(pattern, &h, geom.resolution)?;
            add_kernel(&mut x, &kernel.values, &starts, mu);
            x.provenance = Provenance::Embedded {
                pattern: pattern.name.clone(),
                mu,
                t: t.clone(),
                h: h.clone(),
            };
            let truth = GroundTruth {
                pattern: pattern.name.clone(),
                mu,
                t,
                h,
            };
            Ok((x, Some(truth)))
        })
        .collect()
}

/// Single null tensor (replicate `index`, tensor 0).
pub fn gen_null<T: Scalar>(config: &SimConfig, index: u64) -> Result<TensorField<T>> {
    Ok(noise_field(&config.geometry()?, config.seed, index, 0))
}

/// Single alternative tensor (replicate `index`, tensor 0).
pub fn gen_alt<T: Scalar>(
    config: &SimConfig,
    dict: &[Pattern],
    index: u64,
) -> Result<(TensorField<T>, GroundTruth)> {
    if matches!(config.hypothesis, Hypothesis::H0) {
        return Err(MssError::invalid("gen_alt needs an H1 configuration"));
    }
    let one = SimConfig {
        n: 1,
        ..config.clone()
    };
    let (x, truth) = gen_dataset(&one, dict, index)?.remove(0);
    Ok((x, truth.expect("H1 records ground truth")))
}

/// Exceedance fraction at one threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exceedance {
    pub u: f64,
    pub fraction: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub reference: f64,
    pub pass: bool,
}

fn exceedance(sorted: &[f64], u: f64, reference: f64) -> Exceedance {
    let reps = sorted.len();
    let above = reps - sorted.partition_point(|&z| z <= u);
    let p = above as f64 / reps as f64;
    let se = stats::binomial_se(p, reps);
    Exceedance {
        u,
        fraction: p,
        ci_low: (p - 3.0 * se).max(0.0),
        ci_high: (p + 3.0 * se).min(1.0),
        reference,
        pass: p <= reference + 3.0 * stats::binomial_se(reference.min(1.0), reps),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MaxGaussReport {
    #[serde(rename = "N")]
    pub n: usize,
    pub reps: usize,
    /// `√(2 ln N)`.
    pub center: f64,
    pub median_max: f64,
    /// `Φ⁻¹(2^{-1/N})`, the exact median of the maximum.
    pub exact_median: f64,
    pub exceedance: Vec<Exceedance>,
    pub pass: bool,
}

/// Maximum of `N` iid standard normals standardized as `2√(2 ln N)(max − √(2 ln N))`,
/// compared with `e^{-u}`.
pub fn tail_maxgauss(n: usize, reps: usize, u_grid: &[f64], seed: u64) -> Result<MaxGaussReport> {
    if n < 2 {
        return Err(MssError::invalid("N must be at least 2"));
    }
    if reps < 10_000 {
        return Err(MssError::InsufficientReplicates(format!(
            "tail_maxgauss needs at least 10^4 replicates, got {reps}"
        )));
    }
    let maxima = crate::parallel::map_indices(reps, |i| {
        let mut r = rng::stream(seed, &[purpose::MAXGAUSS, i as u64]);
        (0..n)
            .map(|_| StandardNormal.sample(&mut r))
            .fold(f64::NEG_INFINITY, f64::max)
    });
    let center = (2.0 * (n as f64).ln()).sqrt();
    let z = stats::sorted(&maxima.iter().map(|m| 2.0 * center * (m - center)).collect::<Vec<_>>());
    let exceedance: Vec<Exceedance> = u_grid.iter().map(|&u| exceedance(&z, u, (-u).exp())).collect();
    Ok(MaxGaussReport {
        n,
        reps,
        center,
        median_max: stats::median(&maxima),
        exact_median: stats::normal_quantile(0.5f64.powf(1.0 / n as f64)),
        pass: exceedance.iter().all(|e| e.pass),
        exceedance,
    })
}

/// Affine map `Z = u_lo + (S − q_lo)·(u_hi − u_lo)/(q_hi − q_lo)` putting the
/// empirical exceedance of `S` on the `e^{-u}` curve at two probabilities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub q_lo: f64,
    pub q_hi: f64,
    pub u_lo: f64,
    pub u_hi: f64,
}

/// Exceedance probabilities the fit is anchored at.
pub const FIT_PROBABILITIES: (f64, f64) = (0.5, 0.1);

impl TailFit {
    pub fn from_samples(sorted: &[f64]) -> TailFit {
        let (p_lo, p_hi) = FIT_PROBABILITIES;
        TailFit {
            q_lo: stats::quantile_sorted(sorted, 1.0 - p_lo),
            q_hi: stats::quantile_sorted(sorted, 1.0 - p_hi),
            u_lo: -p_lo.ln(),
            u_hi: -p_hi.ln(),
        }
    }

    /// `c₁` of the fitted form `c₁ S − a`.
    pub fn scale(&self) -> f64 {
        (self.u_hi - self.u_lo) / (self.q_hi - self.q_lo)
    }

    pub fn standardize(&self, s: f64) -> f64 {
        self.u_lo + (s - self.q_lo) * self.scale()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TailFitReport {
    pub label: String,
    pub fit: TailFit,
    pub median: f64,
    pub exceedance: Vec<Exceedance>,
    /// Least-squares slope of `ln(exceedance)` against `u` over nonzero points.
    pub slope: f64,
    pub pass: bool,
}

/// Slope must not exceed this for exponential-or-faster decay.
pub const MAX_TAIL_SLOPE: f64 = -1.0 + 0.15;

pub fn fit_tail(label: &str, samples: &[f64], u_grid: &[f64]) -> TailFitReport {
    let sorted = stats::sorted(samples);
    let fit = TailFit::from_samples(&sorted);
    let z: Vec<f64> = sorted.iter().map(|&s| fit.standardize(s)).collect();
    let exceedance: Vec<Exceedance> = u_grid.iter().map(|&u| exceedance(&z, u, (-u).exp())).collect();
    let (us, logs): (Vec<f64>, Vec<f64>) = exceedance
        .iter()
        .filter(|e| e.fraction > 0.0)
        .map(|e| (e.u, e.fraction.ln()))
        .unzip();
    let slope = if us.len() >= 2 {
        stats::linear_fit(&us, &logs).0
    } else {
        f64::NEG_INFINITY
    };
    TailFitReport {
        label: label.to_string(),
        fit,
        median: stats::quantile_sorted(&sorted, 0.5),
        exceedance,
        slope,
        pass: slope <= MAX_TAIL_SLOPE,
    }
}

/// Per-block and full-scan maxima under the null.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlockMaxima {
    /// `⌊log₂ h⌋` per axis for each block.
    pub blocks: Vec<Vec<i32>>,
    /// `[replicate][block]` standardized maxima.
    pub standardized: Vec<Vec<f64>>,
    /// `[replicate][block]` unstandardized maxima of the convolution.
    pub raw: Vec<Vec<f64>>,
    pub full: Vec<f64>,
}

impl BlockMaxima {
    fn column(rows: &[Vec<f64>], b: usize) -> Vec<f64> {
        rows.iter().map(|r| r[b]).collect()
    }

    pub fn standardized_medians(&self) -> Vec<f64> {
        (0..self.blocks.len())
            .map(|b| stats::median(&Self::column(&self.standardized, b)))
            .collect()
    }

    pub fn raw_medians(&self) -> Vec<f64> {
        (0..self.blocks.len())
            .map(|b| stats::median(&Self::column(&self.raw, b)))
            .collect()
    }
}

fn dyadic_block(h: &ScaleVec) -> Vec<i32> {
    h.0.iter().map(|&x| (x.log2() + 1e-9).floor() as i32).collect()
}

/// Null scans of `reps` single tensors, maxima grouped by dyadic scale block.
pub fn null_block_maxima(
    f: &Pattern,
    geom: &Geometry,
    net: &Net,
    reps: usize,
    seed: u64,
    config: &EngineConfig,
) -> Result<BlockMaxima> {
    let plan = ScanPlan::<f64>::new(geom, std::slice::from_ref(f), net, config)?;
    let mut blocks: Vec<Vec<i32>> = plan.scales().map(dyadic_block).collect();
    blocks.dedup();
    let block_of: Vec<usize> = plan
        .scales()
        .map(|h| blocks.iter().position(|b| *b == dyadic_block(h)).expect("block listed"))
        .collect();
    let results = crate::parallel::try_map_indices(reps, |i| {
        let x = gen_null_field::<f64>(geom, seed, i as u64);
        let res = plan.scan(&x)?.remove(0);
        let mut st = vec![f64::NEG_INFINITY; blocks.len()];
        let mut raw = vec![f64::NEG_INFINITY; blocks.len()];
        for (s, m) in res.per_scale_max.iter().enumerate() {
            st[block_of[s]] = st[block_of[s]].max(m.standardized);
            raw[block_of[s]] = raw[block_of[s]].max(m.raw);
        }
        Ok((st, raw, res.statistic))
    })?;
    let mut out = BlockMaxima {
        blocks,
        standardized: Vec::with_capacity(reps),
        raw: Vec::with_capacity(reps),
        full: Vec::with_capacity(reps),
    };
    for (st, raw, full) in results {
        out.standardized.push(st);
        out.raw.push(raw);
        out.full.push(full);
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TailScanReport {
    pub pattern: String,
    #[serde(rename = "L")]
    pub half_width: f64,
    pub reps: usize,
    pub full: TailFitReport,
    pub blocks: Vec<TailFitReport>,
    pub pass: bool,
}

/// Exponential tail check of the null scan maximum, per dyadic block and overall.
pub fn tail_scan(
    f: &Pattern,
    geom: &Geometry,
    net: &Net,
    reps: usize,
    u_grid: &[f64],
    seed: u64,
    config: &EngineConfig,
) -> Result<TailScanReport> {
    if reps < 500 {
        return Err(MssError::InsufficientReplicates(format!(
            "tail_scan needs at least 500 replicates, got {reps}"
        )));
    }
    let maxima = null_block_maxima(f, geom, net, reps, seed, config)?;
    let blocks = maxima
        .blocks
        .iter()
        .enumerate()
        .map(|(b, label)| {
            fit_tail(
                &format!("block {label:?}"),
                &BlockMaxima::column(&maxima.standardized, b),
                u_grid,
            )
        })
        .collect();
    let full = fit_tail("full", &maxima.full, u_grid);
    Ok(TailScanReport {
        pattern: f.name.clone(),
        half_width: geom.half_width,
        reps,
        pass: full.pass,
        full,
        blocks,
    })
}

/// One replicate of an experiment.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: u64,
    #[serde(rename = "E_n")]
    pub e_n: f64,
    pub reject: bool,
    pub best_pattern: String,
    pub planted: Option<String>,
    pub mu: Option<f64>,
    /// `‖(t̂ − t)/h‖` per tensor.
    pub location_errors: Vec<f64>,
    /// `‖log₂(ĥ/h)‖` per tensor.
    pub scale_errors: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErrorQuantiles {
    pub median: f64,
    pub q90: f64,
    pub max: f64,
}

fn error_quantiles(xs: &[f64]) -> Option<ErrorQuantiles> {
    if xs.is_empty() {
        return None;
    }
    let s = stats::sorted(xs);
    Some(ErrorQuantiles {
        median: stats::quantile_sorted(&s, 0.5),
        q90: stats::quantile_sorted(&s, 0.9),
        max: *s.last().expect("nonempty"),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub replicates: usize,
    pub detection_rate: f64,
    /// Fraction of replicates whose best pattern is the planted one (H1 only).
    pub recovery_rate: Option<f64>,
    pub location_error: Option<ErrorQuantiles>,
    pub scale_error: Option<ErrorQuantiles>,
    pub records: Vec<ReplicateRecord>,
}

/// Generates `replicates` datasets, runs the averaged scan and the decision on each,
/// and aggregates detection, recovery and localization.
pub fn run_experiment(
    config: &SimConfig,
    dict: &[Pattern],
    net: &Net,
    thr: &ThresholdSpec,
    replicates: usize,
    engine: &EngineConfig,
) -> Result<ExperimentSummary> {
    config.validate()?;
    let geom = config.geometry()?;
    let plan = ScanPlan::<f64>::new(&geom, dict, net, engine)?;
    let records = crate::parallel::try_map_indices(replicates, |r| {
        let data = gen_dataset::<f64>(config, dict, r as u64)?;
        let (xs, truths): (Vec<_>, Vec<_>) = data.into_iter().unzip();
        let report = decide(plan.pamss(&xs)?, thr);
        let mut location_errors = Vec::new();
        let mut scale_errors = Vec::new();
        for (res, truth) in report.pamss.per_tensor.iter().zip(&truths) {
            if let Some(g) = truth {
                let loc: f64 = (0..geom.d)
                    .map(|j| ((res.argmax_t.0[j] - g.t.0[j]) / g.h.0[j]).powi(2))
                    .sum();
                let sc: f64 = (0..geom.d)
                    .map(|j| (res.argmax_h.0[j] / g.h.0[j]).log2().powi(2))
                    .sum();
                location_errors.push(loc.sqrt());
                scale_errors.push(sc.sqrt());
            }
        }
        let first = truths.first().and_then(|t| t.as_ref());
        Ok(ReplicateRecord {
            replicate: r as u64,
            e_n: report.e_n,
            reject: report.reject,
            best_pattern: report.pamss.best_pattern.clone(),
            planted: first.map(|g| g.pattern.clone()),
            mu: first.map(|g| g.mu),
            location_errors,
            scale_errors,
        })
    })?;
    let reps = records.len().max(1) as f64;
    let detection_rate = records.iter().filter(|r| r.reject).count() as f64 / reps;
    let recovery_rate = match config.hypothesis {
        Hypothesis::H0 => None,
        Hypothesis::H1 { .. } => Some(
            records
                .iter()
                .filter(|r| r.planted.as_deref() == Some(r.best_pattern.as_str()))
                .count() as f64
                / reps,
        ),
    };
    let loc: Vec<f64> = records.iter().flat_map(|r| r.location_errors.clone()).collect();
    let sc: Vec<f64> = records.iter().flat_map(|r| r.scale_errors.clone()).collect();
    Ok(ExperimentSummary {
        replicates: records.len(),
        detection_rate,
        recovery_rate,
        location_error: error_quantiles(&loc),
        scale_error: error_quantiles(&sc),
        records,
    })
}
