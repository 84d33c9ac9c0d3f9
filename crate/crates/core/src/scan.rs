//! Multiscale scan: scale-corrected maxima of matched-filter fields over a net, and
//! the dictionary-level averaged statistic `E_n`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::conv::{correlate_direct_at, gather, Correlator, Spectrum};
use crate::error::{MssError, Result};
use crate::field::TensorField;
use crate::geometry::{snap, Geometry, LocationVec, ScaleVec};
use crate::net::Net;
use crate::pattern::{rasterize, Kernel, Pattern};
use crate::scalar::Scalar;

/// Cached kernel spectra are dropped beyond this many bytes.
const SPECTRUM_BUDGET: usize = 256 << 20;

/// Scale correction `v_h = √(2 Σ_j ln(L/h_j))`.
pub fn v_h(h: &ScaleVec, half_width: f64) -> f64 {
    let s: f64 = h.0.iter().map(|&hj| (half_width / hj).ln()).sum();
    (2.0 * s).max(0.0).sqrt()
}

/// Maxima at one scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleMax {
    pub h: ScaleVec,
    /// `max_t v_h(conv − v_h)`.
    pub standardized: f64,
    /// `max_t conv`.
    pub raw: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub pattern: String,
    pub statistic: f64,
    #[serde(rename = "t")]
    pub argmax_t: LocationVec,
    #[serde(rename = "h")]
    pub argmax_h: ScaleVec,
    pub raw_convolution_at_argmax: f64,
    /// Set when the maximum came from the sign-flipped pattern.
    #[serde(default)]
    pub negated: bool,
    pub per_scale_max: Vec<ScaleMax>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternScore {
    pub pattern: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PamssResult {
    pub best_pattern: String,
    #[serde(rename = "E_n")]
    pub e_n: f64,
    pub n: usize,
    /// `n^{-1/2} Σ_i e(X^i; f)` in dictionary order.
    pub per_pattern_scores: Vec<PatternScore>,
    /// Scan results of the winning pattern, one per tensor.
    pub per_tensor: Vec<ScanResult>,
}

/// Evaluation points of one net scale: deduplicated snapped window starts per axis.
#[derive(Clone, Debug)]
struct ScalePlan {
    h: ScaleVec,
    v: f64,
    footprint: Vec<usize>,
    starts: Vec<Vec<usize>>,
    centers: Vec<Vec<f64>>,
}

impl ScalePlan {
    fn points(&self) -> usize {
        self.starts.iter().map(Vec::len).product()
    }
}

struct KernelPlan<T: Scalar> {
    kernel: Kernel<T>,
    spectrum: Option<Spectrum<T>>,
    direct: bool,
}

/// Net, dictionary and geometry compiled for repeated scanning.
pub struct ScanPlan<T: Scalar> {
    geometry: Geometry,
    names: Vec<String>,
    scales: Vec<ScalePlan>,
    /// `[pattern][scale]`.
    kernels: Vec<Vec<KernelPlan<T>>>,
    correlator: Correlator<T>,
    two_sided: bool,
}

fn scale_plans(net: &Net, geom: &Geometry) -> Result<Vec<ScalePlan>> {
    if net.d != geom.d || (net.half_width - geom.half_width).abs() > 1e-9 {
        return Err(MssError::geometry(format!(
            "net has (d = {}, L = {}), tensor has (d = {}, L = {})",
            net.d, net.half_width, geom.d, geom.half_width
        )));
    }
    let r = geom.r();
    let mut out = Vec::new();
    for block in &net.blocks {
        let footprint = block.h.footprint(r);
        if footprint.iter().any(|&n| n > geom.cells()) {
            return Err(MssError::KernelTooLarge {
                kernel: footprint,
                tensor: geom.shape(),
            });
        }
        let mut starts = Vec::with_capacity(net.d);
        let mut centers = Vec::with_capacity(net.d);
        for (j, &n) in footprint.iter().enumerate() {
            let mut s_axis: Vec<usize> = Vec::new();
            let mut c_axis: Vec<f64> = Vec::new();
            for t in block.axis_coordinates(j) {
                if let Some((s, c)) = snap(t, n, geom) {
                    if s_axis.last() != Some(&s) {
                        s_axis.push(s);
                        c_axis.push(c);
                    }
                }
            }
            starts.push(s_axis);
            centers.push(c_axis);
        }
        if starts.iter().any(Vec::is_empty) {
            continue;
        }
        out.push(ScalePlan {
            v: v_h(&block.h, geom.half_width),
            h: block.h.clone(),
            footprint,
            starts,
            centers,
        });
    }
    if out.is_empty() {
        return Err(MssError::EmptyNet);
    }
    Ok(out)
}

fn use_direct(scale: &ScalePlan, cells: usize, d: usize, crossover: usize) -> bool {
    if scale.footprint.iter().any(|&n| n >= crossover) {
        return false;
    }
    let klen: usize = scale.footprint.iter().product();
    let total = (cells as f64).powi(d as i32);
    let fft_cost = 8.0 * total * total.log2().max(1.0);
    (scale.points() as f64) * (klen as f64) <= fft_cost
}

impl<T: Scalar> ScanPlan<T> {
    pub fn new(geom: &Geometry, dict: &[Pattern], net: &Net, config: &EngineConfig) -> Result<Self> {
        geom.validate()?;
        if dict.is_empty() {
            return Err(MssError::invalid("dictionary is empty"));
        }
        if let Some(f) = dict.iter().find(|f| f.d != geom.d) {
            return Err(MssError::geometry(format!(
                "pattern `{}` has d = {}, tensors have d = {}",
                f.name, f.d, geom.d
            )));
        }
        let scales = scale_plans(net, geom)?;
        let correlator = Correlator::new(&geom.shape())?;
        let spectrum_bytes = geom.len() * std::mem::size_of::<T>() * 2;
        let mut budget = SPECTRUM_BUDGET;
        let mut kernels = Vec::with_capacity(dict.len());
        for f in dict {
            let mut row = Vec::with_capacity(scales.len());
            for s in &scales {
                let kernel = rasterize::<T>(f, &s.h, geom.resolution)?;
                let direct = use_direct(s, geom.cells(), geom.d, config.fft_crossover);
                let spectrum = if !direct && budget >= spectrum_bytes {
                    budget -= spectrum_bytes;
                    Some(correlator.kernel_spectrum(&kernel.values)?)
                } else {
                    None
                };
                row.push(KernelPlan {
                    kernel,
                    spectrum,
                    direct,
                });
            }
            kernels.push(row);
        }
        Ok(ScanPlan {
            geometry: *geom,
            names: dict.iter().map(|f| f.name.clone()).collect(),
            scales,
            kernels,
            correlator,
            two_sided: config.two_sided,
        })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn patterns(&self) -> &[String] {
        &self.names
    }

    /// Net scales that have at least one admissible entry, in net order.
    pub fn scales(&self) -> impl Iterator<Item = &ScaleVec> {
        self.scales.iter().map(|s| &s.h)
    }

    /// Number of evaluated (snapped, deduplicated) entries.
    pub fn evaluated_entries(&self) -> usize {
        self.scales.iter().map(ScalePlan::points).sum()
    }

    fn check(&self, x: &TensorField<T>) -> Result<()> {
        if !self.geometry.matches(&x.geometry) {
            return Err(MssError::geometry(format!(
                "tensor geometry {:?} differs from plan geometry {:?}",
                x.geometry, self.geometry
            )));
        }
        Ok(())
    }

    fn scale_outcome(
        &self,
        x: &TensorField<T>,
        spectrum: Option<&Spectrum<T>>,
        p: usize,
        s: usize,
    ) -> Result<ScaleOutcome> {
        let scale = &self.scales[s];
        let kp = &self.kernels[p][s];
        let values = if kp.direct {
            correlate_direct_at(&x.values, &kp.kernel.values, &scale.starts)?
        } else {
            let xs = spectrum.expect("tensor spectrum computed for FFT scales");
            let full = match &kp.spectrum {
                Some(ks) => self.correlator.correlate_spectra(xs, ks),
                None => {
                    let ks = self.correlator.kernel_spectrum(&kp.kernel.values)?;
                    self.correlator.correlate_spectra(xs, &ks)
                }
            };
            gather(&full, &self.geometry.shape(), &scale.starts)
        };
        let v = scale.v;
        let mut best = f64::NEG_INFINITY;
        let mut best_flat = 0usize;
        let mut best_conv = 0.0;
        let mut negated = false;
        let mut raw = f64::NEG_INFINITY;
        for (i, c) in values.iter().enumerate() {
            let c = c.to_f64_lossy();
            raw = raw.max(c);
            let (eff, neg) = if self.two_sided && -c > c { (-c, true) } else { (c, false) };
            let stat = v * (eff - v);
            if stat > best {
                best = stat;
                best_flat = i;
                best_conv = c;
                negated = neg;
            }
        }
        // Unflatten the argmax in lexicographic order.
        let mut t = vec![0.0; scale.starts.len()];
        let mut rem = best_flat;
        for j in (0..t.len()).rev() {
            let m = scale.starts[j].len();
            t[j] = scale.centers[j][rem % m];
            rem /= m;
        }
        Ok(ScaleOutcome {
            standardized: best,
            raw,
            t,
            conv: best_conv,
            negated,
        })
    }

    /// Scans one tensor against the selected patterns (all when `None`).
    pub fn scan_patterns(&self, x: &TensorField<T>, patterns: &[usize]) -> Result<Vec<ScanResult>> {
        self.check(x)?;
        let needs_fft = patterns
            .iter()
            .any(|&p| self.kernels[p].iter().any(|k| !k.direct));
        let spectrum = needs_fft.then(|| self.correlator.tensor_spectrum(x.as_slice()));
        let jobs: Vec<(usize, usize)> = patterns
            .iter()
            .flat_map(|&p| (0..self.scales.len()).map(move |s| (p, s)))
            .collect();
        let outcomes: Vec<ScaleOutcome> = jobs
            .par_iter()
            .map(|&(p, s)| self.scale_outcome(x, spectrum.as_ref(), p, s))
            .collect::<Result<_>>()?;
        let per = self.scales.len();
        Ok(patterns
            .iter()
            .enumerate()
            .map(|(k, &p)| self.reduce(p, &outcomes[k * per..(k + 1) * per]))
            .collect())
    }

    pub fn scan(&self, x: &TensorField<T>) -> Result<Vec<ScanResult>> {
        let all: Vec<usize> = (0..self.names.len()).collect();
        self.scan_patterns(x, &all)
    }

    fn reduce(&self, p: usize, outcomes: &[ScaleOutcome]) -> ScanResult {
        let mut best: Option<usize> = None;
        for (s, o) in outcomes.iter().enumerate() {
            let better = match best {
                None => true,
                Some(b) => {
                    let cur = &outcomes[b];
                    if o.standardized != cur.standardized {
                        o.standardized > cur.standardized
                    } else {
                        let (vo, vc) = (self.scales[s].h.volume(), self.scales[b].h.volume());
                        if vo != vc {
                            vo > vc
                        } else {
                            o.t < cur.t
                        }
                    }
                }
            };
            if better {
                best = Some(s);
            }
        }
        let b = best.expect("plan has at least one scale");
        let o = &outcomes[b];
        ScanResult {
            pattern: self.names[p].clone(),
            statistic: o.standardized,
            argmax_t: LocationVec(o.t.clone()),
            argmax_h: self.scales[b].h.clone(),
            raw_convolution_at_argmax: o.conv,
            negated: o.negated,
            per_scale_max: outcomes
                .iter()
                .zip(&self.scales)
                .map(|(o, s)| ScaleMax {
                    h: s.h.clone(),
                    standardized: o.standardized,
                    raw: o.raw,
                })
                .collect(),
        }
    }

    /// `E_n` over a sample of tensors sharing the plan geometry.
    pub fn pamss(&self, xs: &[TensorField<T>]) -> Result<PamssResult> {
        if xs.is_empty() {
            return Err(MssError::invalid("pamss needs at least one tensor"));
        }
        let per_tensor: Vec<Vec<ScanResult>> =
            xs.par_iter().map(|x| self.scan(x)).collect::<Result<_>>()?;
        Ok(assemble_pamss(&self.names, per_tensor))
    }
}

struct ScaleOutcome {
    standardized: f64,
    raw: f64,
    t: Vec<f64>,
    conv: f64,
    negated: bool,
}

/// Combines per-tensor, per-pattern scan results (`[tensor][pattern]`).
pub fn assemble_pamss(names: &[String], mut per_tensor: Vec<Vec<ScanResult>>) -> PamssResult {
    let n = per_tensor.len();
    let norm = (n as f64).sqrt();
    let scores: Vec<PatternScore> = names
        .iter()
        .enumerate()
        .map(|(p, name)| PatternScore {
            pattern: name.clone(),
            score: per_tensor.iter().map(|r| r[p].statistic).sum::<f64>() / norm,
        })
        .collect();
    let mut best = 0;
    for (p, s) in scores.iter().enumerate() {
        if s.score > scores[best].score {
            best = p;
        }
    }
    PamssResult {
        best_pattern: names[best].clone(),
        e_n: scores[best].score,
        n,
        per_pattern_scores: scores,
        per_tensor: per_tensor.iter_mut().map(|r| r.swap_remove(best)).collect(),
    }
}

/// `e_{β,α}(X; f)` over `net`.
pub fn scan_single<T: Scalar>(
    x: &TensorField<T>,
    f: &Pattern,
    net: &Net,
    config: &EngineConfig,
) -> Result<ScanResult> {
    let plan = ScanPlan::new(&x.geometry, std::slice::from_ref(f), net, config)?;
    Ok(plan.scan(x)?.remove(0))
}

/// `E_n = max_f n^{-1/2} Σ_i e(X^i; f)`.
pub fn pamss<T: Scalar>(
    xs: &[TensorField<T>],
    dict: &[Pattern],
    net: &Net,
    config: &EngineConfig,
) -> Result<PamssResult> {
    let first = xs
        .first()
        .ok_or_else(|| MssError::invalid("pamss needs at least one tensor"))?;
    if let Some(x) = xs.iter().find(|x| !x.geometry.matches(&first.geometry)) {
        return Err(MssError::geometry(format!(
            "tensor geometry {:?} differs from {:?}",
            x.geometry, first.geometry
        )));
    }
    ScanPlan::new(&first.geometry, dict, net, config)?.pamss(xs)
}
