//! Thresholds (closed-form and simulated), decisions, and power analysis.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::EngineConfig;
use crate::error::{MssError, Result};
use crate::geometry::{Geometry, ScaleVec};
use crate::net::Net;
use crate::pattern::Pattern;
use crate::rng::{self, purpose};
use crate::scan::{v_h, PamssResult, ScanPlan};
use crate::simulate::noise_field;
use crate::stats;

/// Type-1 levels used by [`calibrate_k`].
pub const DELTA_GRID: [f64; 3] = [0.1, 0.05, 0.01];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMethod {
    Theoretical,
    MonteCarlo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSpec {
    pub method: ThresholdMethod,
    pub delta: f64,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    pub n: usize,
    pub dict_size: usize,
    #[serde(rename = "L")]
    pub half_width: f64,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Null `E_n` replicates behind a simulated threshold, kept for p-values.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub null_samples: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    #[serde(rename = "E_n")]
    pub e_n: f64,
    pub threshold: f64,
    pub threshold_method: ThresholdMethod,
    pub delta: f64,
    pub reject: bool,
    #[serde(rename = "p_value")]
    pub p_value_estimate: Option<f64>,
    pub pamss: PamssResult,
}

/// Value of `F_n(δ)` and which branch is active.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FnValue {
    pub value: f64,
    /// 1 for the square-root branch, 2 for the linear one.
    pub regime: u8,
    pub sqrt_branch: f64,
    pub linear_branch: f64,
}

/// `F_n(δ)`: `√(K ln(|𝓕|/δ))` when `ln|𝓕| ≤ n/K + ln δ`, else `(K/√n) ln(|𝓕|/δ)`.
pub fn f_n(n: usize, dict_size: f64, delta: f64, k: f64) -> FnValue {
    let x = (dict_size / delta).ln();
    let sqrt_branch = (k * x).sqrt();
    let linear_branch = k * x / (n as f64).sqrt();
    let regime1 = dict_size.ln() <= n as f64 / k + delta.ln();
    FnValue {
        value: if regime1 { sqrt_branch } else { linear_branch },
        regime: if regime1 { 1 } else { 2 },
        sqrt_branch,
        linear_branch,
    }
}

fn check_threshold_args(n: usize, dict_size: usize, delta: f64, half_width: f64) -> Result<()> {
    if n == 0 || dict_size == 0 {
        return Err(MssError::invalid("n and |F| must be positive"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(MssError::invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(half_width > std::f64::consts::E) {
        return Err(MssError::invalid(format!(
            "L must exceed e for ln ln L > 0, got {half_width}"
        )));
    }
    Ok(())
}

/// `F_n(δ)·ln ln L`.
pub fn theoretical_threshold(
    n: usize,
    dict_size: usize,
    delta: f64,
    half_width: f64,
    k: f64,
) -> Result<f64> {
    check_threshold_args(n, dict_size, delta, half_width)?;
    if !(k > 0.0) {
        return Err(MssError::invalid(format!("K must be positive, got {k}")));
    }
    Ok(f_n(n, dict_size as f64, delta, k).value * half_width.ln().ln())
}

pub fn theoretical_spec(
    n: usize,
    dict_size: usize,
    delta: f64,
    half_width: f64,
    k: f64,
) -> Result<ThresholdSpec> {
    Ok(ThresholdSpec {
        method: ThresholdMethod::Theoretical,
        delta,
        k: Some(k),
        n,
        dict_size,
        half_width,
        value: theoretical_threshold(n, dict_size, delta, half_width, k)?,
        reps: None,
        seed: None,
        null_samples: Vec::new(),
    })
}

/// Smallest `K` with `F_n(δ; K)·ln ln L ≥ target`. `F_n` is continuous and increasing
/// in `K`, so this is solved in closed form per branch.
pub fn k_for_target(n: usize, dict_size: usize, delta: f64, half_width: f64, target: f64) -> f64 {
    let tau = target / half_width.ln().ln();
    let x = (dict_size as f64 / delta).ln();
    let k = if tau <= 0.0 {
        0.0
    } else if tau * tau <= n as f64 {
        tau * tau / x
    } else {
        tau * (n as f64).sqrt() / x
    };
    k.max(f64::EPSILON)
}

/// Null draws of `E_n`: replicate `r` uses tensors `(seed, r, 0..n)`.
pub fn null_statistics(
    geom: &Geometry,
    dict: &[Pattern],
    net: &Net,
    n: usize,
    reps: usize,
    seed: u64,
    config: &EngineConfig,
) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(MssError::invalid("n must be positive"));
    }
    let plan = ScanPlan::<f64>::new(geom, dict, net, config)?;
    null_statistics_with(&plan, n, reps, seed)
}

pub fn null_statistics_with(plan: &ScanPlan<f64>, n: usize, reps: usize, seed: u64) -> Result<Vec<f64>> {
    let geom = *plan.geometry();
    crate::parallel::try_map_indices(reps, |r| {
        let mut sums = vec![0.0; plan.patterns().len()];
        for i in 0..n {
            let x = noise_field::<f64>(&geom, seed, r as u64, i as u64);
            for (s, res) in sums.iter_mut().zip(plan.scan(&x)?) {
                *s += res.statistic;
            }
        }
        Ok(sums.into_iter().fold(f64::NEG_INFINITY, f64::max) / (n as f64).sqrt())
    })
}


/// Empirical `(1 − δ)` quantile of `E_n` under the null.
#[allow(clippy::too_many_arguments)]
pub fn mc_threshold(
    geom: &Geometry,
    dict: &[Pattern],
    net: &Net,
    n: usize,
    delta: f64,
    reps: usize,
    seed: u64,
    config: &EngineConfig,
) -> Result<ThresholdSpec> {
    check_mc_args(delta, reps)?;
    let samples = null_statistics(geom, dict, net, n, reps, seed, config)?;
    mc_spec_from_samples(samples, geom.half_width, dict.len(), n, delta, seed)
}

fn check_mc_args(delta: f64, reps: usize) -> Result<()> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(MssError::invalid(format!("delta must lie in (0, 1], got {delta}")));
    }
    if (reps as f64) * delta < 5.0 {
        return Err(MssError::InsufficientReplicates(format!(
            "reps·delta = {} < 5",
            reps as f64 * delta
        )));
    }
    Ok(())
}

pub fn mc_spec_from_samples(
    samples: Vec<f64>,
    half_width: f64,
    dict_size: usize,
    n: usize,
    delta: f64,
    seed: u64,
) -> Result<ThresholdSpec> {
    check_mc_args(delta, samples.len())?;
    let sorted = stats::sorted(&samples);
    Ok(ThresholdSpec {
        method: ThresholdMethod::MonteCarlo,
        delta,
        k: None,
        n,
        dict_size,
        half_width,
        value: stats::upper_quantile(&sorted, delta),
        reps: Some(samples.len()),
        seed: Some(seed),
        null_samples: samples,
    })
}

/// Rejects iff `E_n > value`.
pub fn decide(pamss: PamssResult, thr: &ThresholdSpec) -> DetectionReport {
    let p_value_estimate = (thr.method == ThresholdMethod::MonteCarlo && !thr.null_samples.is_empty())
        .then(|| {
            thr.null_samples.iter().filter(|&&s| s >= pamss.e_n).count() as f64
                / thr.null_samples.len() as f64
        });
    DetectionReport {
        e_n: pamss.e_n,
        threshold: thr.value,
        threshold_method: thr.method,
        delta: thr.delta,
        reject: pamss.e_n > thr.value,
        p_value_estimate,
        pamss,
    }
}

/// Calibrated `K` with its per-level null quantiles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KCalibration {
    pub geometry_hash: String,
    #[serde(rename = "K")]
    pub k: f64,
    /// 95% bootstrap interval for `K`.
    pub ci: (f64, f64),
    pub seed: u64,
    pub reps: usize,
    pub n: usize,
    pub dict_size: usize,
    /// `(δ, empirical (1−δ) quantile of E_n, K needed at δ)`.
    pub quantiles: Vec<(f64, f64, f64)>,
}

impl KCalibration {
    pub fn load(path: &Path) -> Result<KCalibration> {
        let text = std::fs::read_to_string(path).map_err(|source| MssError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| MssError::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("serializable");
        std::fs::write(path, text).map_err(|source| MssError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Hash of everything the null distribution of `E_n` depends on.
pub fn geometry_hash(geom: &Geometry, dict: &[Pattern], net: &Net, n: usize, config: &EngineConfig) -> String {
    let key = serde_json::json!({
        "geometry": geom,
        "patterns": dict.iter().map(Pattern::spec).collect::<Vec<_>>(),
        "alpha": net.effective_alpha(),
        "beta": net.effective_beta(),
        "n": n,
        "two_sided": config.two_sided,
    });
    let digest = Sha256::digest(key.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn k_from_samples(sorted: &[f64], n: usize, dict_size: usize, half_width: f64) -> (f64, Vec<(f64, f64, f64)>) {
    let mut k: f64 = f64::EPSILON;
    let mut rows = Vec::new();
    for delta in DELTA_GRID {
        let q = stats::upper_quantile(sorted, delta);
        let kd = k_for_target(n, dict_size, delta, half_width, q);
        k = k.max(kd);
        rows.push((delta, q, kd));
    }
    (k, rows)
}

/// Smallest `K` whose closed-form threshold covers the simulated null quantiles at
/// every level of [`DELTA_GRID`].
#[allow(clippy::too_many_arguments)]
pub fn calibrate_k(
    geom: &Geometry,
    dict: &[Pattern],
    net: &Net,
    n: usize,
    reps: usize,
    seed: u64,
    config: &EngineConfig,
) -> Result<KCalibration> {
    if reps < 100 {
        return Err(MssError::InsufficientReplicates(format!(
            "calibrate_K needs at least 100 replicates, got {reps}"
        )));
    }
    check_threshold_args(n, dict.len(), 0.5, geom.half_width)?;
    let samples = null_statistics(geom, dict, net, n, reps, seed, config)?;
    Ok(k_calibration_from_samples(&samples, geom, dict, net, n, seed, config))
}

pub fn k_calibration_from_samples(
    samples: &[f64],
    geom: &Geometry,
    dict: &[Pattern],
    net: &Net,
    n: usize,
    seed: u64,
    config: &EngineConfig,
) -> KCalibration {
    let sorted = stats::sorted(samples);
    let (k, quantiles) = k_from_samples(&sorted, n, dict.len(), geom.half_width);
    let ci = bootstrap_k(&sorted, n, dict.len(), geom.half_width, 200, seed);
    KCalibration {
        geometry_hash: geometry_hash(geom, dict, net, n, config),
        k,
        ci,
        seed,
        reps: samples.len(),
        n,
        dict_size: dict.len(),
        quantiles,
    }
}

fn bootstrap_k(sorted: &[f64], n: usize, dict_size: usize, half_width: f64, rounds: usize, seed: u64) -> (f64, f64) {
    use rand::Rng;
    let ks = crate::parallel::map_indices(rounds, |b| {
        let mut r = rng::stream(seed, &[purpose::BOOTSTRAP, b as u64]);
        let resample: Vec<f64> = (0..sorted.len())
            .map(|_| sorted[r.random_range(0..sorted.len())])
            .collect();
        k_from_samples(&stats::sorted(&resample), n, dict_size, half_width).0
    });
    let s = stats::sorted(&ks);
    (stats::quantile_sorted(&s, 0.025), stats::quantile_sorted(&s, 0.975))
}

/// Loads a cached calibration when its hash matches, otherwise calibrates and saves.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_k_cached(
    cache: &Path,
    geom: &Geometry,
    dict: &[Pattern],
    net: &Net,
    n: usize,
    reps: usize,
    seed: u64,
    config: &EngineConfig,
) -> Result<KCalibration> {
    let hash = geometry_hash(geom, dict, net, n, config);
    if let Ok(cached) = KCalibration::load(cache) {
        if cached.geometry_hash == hash && cached.reps >= reps {
            return Ok(cached);
        }
    }
    let cal = calibrate_k(geom, dict, net, n, reps, seed, config)?;
    cal.save(cache)?;
    Ok(cal)
}

/// Per-tensor planted scales and amplitude for the power analysis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerInputs {
    pub mu: f64,
    pub scales: Vec<ScaleVec>,
    #[serde(rename = "L")]
    pub half_width: f64,
    pub n: usize,
    pub epsilon: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Type2Bound {
    /// `Φ(u)`.
    pub bound: f64,
    /// `(μ(1 − ε²/2)M_n − V_n)/√n`.
    pub centering: f64,
    /// `√(V_n/n)`.
    pub spread: f64,
}

impl PowerInputs {
    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() || self.scales.len() != self.n {
            return Err(MssError::invalid(format!(
                "expected {} per-tensor scales, got {}",
                self.n,
                self.scales.len()
            )));
        }
        self.scales.iter().try_for_each(|h| h.validate(self.half_width))
    }

    /// `M_n = Σ_i v_{h^i}`.
    pub fn m_n(&self) -> f64 {
        self.scales.iter().map(|h| v_h(h, self.half_width)).sum()
    }

    /// `V_n = Σ_i v_{h^i}²`.
    pub fn v_n(&self) -> f64 {
        self.scales.iter().map(|h| v_h(h, self.half_width).powi(2)).sum()
    }

    /// `√2·V_n/M_n`, the amplitude at which the power gap vanishes.
    pub fn critical_mu(&self) -> f64 {
        2f64.sqrt() * self.v_n() / self.m_n()
    }
}

pub fn type2_bound(pw: &PowerInputs, u: f64) -> Type2Bound {
    let n = pw.n as f64;
    Type2Bound {
        bound: stats::normal_cdf(u),
        centering: (pw.mu * (1.0 - pw.epsilon * pw.epsilon / 2.0) * pw.m_n() - pw.v_n()) / n.sqrt(),
        spread: (pw.v_n() / n).sqrt(),
    }
}

/// `μ − √2·V_n/M_n`.
pub fn power_gap(pw: &PowerInputs) -> f64 {
    pw.mu - pw.critical_mu()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{build_net, NetSpec};
    use crate::pattern::builtin_dictionary;
    use std::f64::consts::E;

    #[test]
    fn closed_form_regime_one() {
        let fv = f_n(10, E, (-1f64).exp(), 1.0);
        assert_eq!(fv.regime, 1);
        assert!((fv.value - 2f64.sqrt()).abs() < 1e-12);
        let thr = theoretical_threshold(10, 3, 0.5, 64.0, 1.0).unwrap();
        let expected = (6f64.ln()).sqrt() * 64f64.ln().ln();
        assert!((thr - expected).abs() < 1e-12);
        assert!(theoretical_threshold(10, 3, 0.5, E, 1.0).is_err());
    }

    #[test]
    fn single_pattern_regime_one_ignores_n() {
        let a = f_n(5, 1.0, 0.05, 1.0);
        let b = f_n(500, 1.0, 0.05, 1.0);
        assert_eq!(a.regime, 1);
        assert_eq!(a.value, b.value);
    }

    #[test]
    fn branches_meet_at_the_switch() {
        // ln(|F|/δ) = n/K exactly.
        let n = 16;
        let delta = 0.05;
        let k = n as f64 / (4f64 / delta).ln();
        let v = f_n(n, 4.0, delta, k);
        assert!((v.sqrt_branch - v.linear_branch).abs() < 1e-12);
        let lo = f_n(n, 4.0, delta, k * (1.0 - 1e-9)).value;
        let hi = f_n(n, 4.0, delta, k * (1.0 + 1e-9)).value;
        assert!((lo - hi).abs() < 1e-6);
    }

    #[test]
    fn k_inversion_reaches_target() {
        for &(n, size, delta, target) in &[(10, 4, 0.05, 3.0), (1, 4, 0.01, 12.0), (20, 1, 0.1, 0.5)] {
            let k = k_for_target(n, size, delta, 256.0, target);
            let thr = theoretical_threshold(n, size, delta, 256.0, k).unwrap();
            assert!((thr - target).abs() < 1e-9 * target.max(1.0), "{thr} vs {target}");
        }
        assert_eq!(k_for_target(10, 4, 0.05, 256.0, -3.0), f64::EPSILON);
    }

    #[test]
    fn monotone_in_dictionary_and_delta() {
        let mut last = 0.0;
        for size in 1..20 {
            let v = theoretical_threshold(10, size, 0.05, 256.0, 2.0).unwrap();
            assert!(v >= last);
            last = v;
        }
        assert!(
            theoretical_threshold(10, 4, 0.01, 256.0, 2.0).unwrap()
                >= theoretical_threshold(10, 4, 0.05, 256.0, 2.0).unwrap()
        );
    }

    fn pamss_with(e_n: f64) -> PamssResult {
        PamssResult {
            best_pattern: "f".into(),
            e_n,
            n: 1,
            per_pattern_scores: vec![],
            per_tensor: vec![],
        }
    }

    #[test]
    fn strict_decision_and_p_value() {
        let thr = mc_spec_from_samples((0..100).map(f64::from).collect(), 256.0, 1, 1, 0.05, 0).unwrap();
        assert_eq!(thr.value, 95.0);
        assert!(!decide(pamss_with(95.0), &thr).reject);
        let big = decide(pamss_with(1e300), &thr);
        assert!(big.reject);
        assert_eq!(big.p_value_estimate, Some(0.0));
        assert_eq!(decide(pamss_with(90.0), &thr).p_value_estimate, Some(0.1));
        let theo = theoretical_spec(1, 1, 0.05, 256.0, 1.0).unwrap();
        assert_eq!(decide(pamss_with(0.0), &theo).p_value_estimate, None);
    }

    #[test]
    fn simulated_quantile_conventions() {
        let samples: Vec<f64> = (0..50).map(|i| f64::from(i) * 0.5).collect();
        let min = mc_spec_from_samples(samples.clone(), 256.0, 1, 1, 1.0, 0).unwrap();
        assert_eq!(min.value, 0.0);
        let a = mc_spec_from_samples(samples.clone(), 256.0, 1, 1, 0.1, 0).unwrap();
        let b = mc_spec_from_samples(samples, 256.0, 1, 1, 0.2, 0).unwrap();
        assert!(a.value > b.value);
        assert!(mc_spec_from_samples(vec![0.0; 50], 256.0, 1, 1, 0.05, 0).is_err());
    }

    #[test]
    fn power_formulas() {
        let h = ScaleVec(vec![4.0]);
        let v = v_h(&h, 256.0);
        let pw = PowerInputs {
            mu: 10.0,
            scales: vec![h.clone(); 5],
            half_width: 256.0,
            n: 5,
            epsilon: 0.0,
        };
        assert!((power_gap(&pw) - (10.0 - 2f64.sqrt() * v)).abs() < 1e-12);
        let at_critical = PowerInputs { mu: pw.critical_mu(), ..pw.clone() };
        assert!(power_gap(&at_critical).abs() < 1e-12);
        let t2 = type2_bound(&pw, 0.0);
        assert_eq!(t2.bound, 0.5);
        assert!((t2.centering - (10.0 * 5.0 * v - 5.0 * v * v) / 5f64.sqrt()).abs() < 1e-9);
        assert!((t2.spread - v).abs() < 1e-12);
    }

    #[test]
    fn single_scan_calibration_matches_null_quantiles() {
        let config = EngineConfig::default();
        let geom = Geometry::new(1, 32.0, 16).unwrap();
        let dict = builtin_dictionary(1).unwrap();
        let net = build_net(&NetSpec::new(32.0, 1, 0.5), &config).unwrap();
        let one = &dict[..1];
        let cal = calibrate_k(&geom, one, &net, 1, 100, 3, &config).unwrap();
        let samples = null_statistics(&geom, one, &net, 1, 100, 3, &config).unwrap();
        let sorted = stats::sorted(&samples);
        for &(delta, q, _) in &cal.quantiles {
            assert_eq!(q, stats::upper_quantile(&sorted, delta));
            let thr = theoretical_threshold(1, 1, delta, 32.0, cal.k).unwrap();
            assert!(thr >= q - 1e-9);
        }
        assert!(cal.ci.0 <= cal.k * 1.0001 + 1e-12 || cal.ci.1 >= cal.k);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.json");
        cal.save(&path).unwrap();
        let again = calibrate_k_cached(&path, &geom, one, &net, 1, 100, 99, &config).unwrap();
        assert_eq!(again, cal);
    }
}
