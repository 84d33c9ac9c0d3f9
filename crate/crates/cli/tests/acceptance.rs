//! End-to-end acceptance checks. Each criterion prints one line; the process fails if
//! any criterion fails.

use std::collections::BTreeMap;
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::{ArrayD, IxDyn};
use rand::Rng;

use mss_core::conv::convolve_at_scale;
use mss_core::detect::{self, null_statistics_with};
use mss_core::io::{read_tensor, write_tensor};
use mss_core::metric::{domination_check, shrinking_slope, ParamPoint};
use mss_core::net::verify_net;
use mss_core::pattern::{builtin_dictionary, make_pattern, rasterize, PatternKind};
use mss_core::rng;
use mss_core::simulate::{
    noise_field, null_block_maxima, run_experiment, tail_maxgauss, tail_scan, Amplitude, Hypothesis, ScaleLaw,
};
use mss_core::stats;
use mss_core::{build_net, EngineConfig, Field, Geometry, NetSpec, Pattern, Plan, Provenance, ScaleVec, SimConfig};

const SEED: u64 = 20_240_611;

type Criterion = (&'static str, Duration, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn geometry(d: usize, l: f64) -> Geometry {
    Geometry::new(d, l, 16).unwrap()
}

/// Four patterns with pairwise best-match correlation well below one.
fn separable_dictionary() -> Vec<Pattern> {
    let named = |kind, key: &str, value: f64, name: &str| {
        let params = if key.is_empty() {
            BTreeMap::new()
        } else {
            BTreeMap::from([(key.to_string(), value)])
        };
        let mut f = make_pattern(kind, 1, params).unwrap();
        f.name = name.to_string();
        f
    };
    vec![
        named(PatternKind::TruncatedGaussian, "sigma", 0.2, "gauss"),
        named(PatternKind::WindowedSinusoid, "cycles", 1.0, "sinusoid"),
        named(PatternKind::TensorCosine, "frequency", 3.0, "cosine-3"),
        named(PatternKind::TensorCosine, "frequency", 5.0, "cosine-5"),
    ]
}

fn null_standardization() -> Outcome {
    const SCALES: [f64; 5] = [1.0, 2.0, 4.0, 8.0, 16.0];
    const MIN_EVALS: usize = 10_000;
    let geom = geometry(1, 256.0);
    let mut worst_var: f64 = 1.0;
    let mut worst_z: f64 = 0.0;
    let mut pass = true;
    for (p, f) in builtin_dictionary(1).unwrap().iter().enumerate() {
        for (s, &h) in SCALES.iter().enumerate() {
            let kernel = rasterize::<f64>(f, &ScaleVec::uniform(h, 1), geom.resolution).unwrap();
            // Windows a full footprint apart do not overlap, so samples are independent.
            let stride = kernel.footprint[0];
            let mut xs = Vec::with_capacity(MIN_EVALS);
            let mut rep = 0u64;
            while xs.len() < MIN_EVALS {
                let x = noise_field::<f64>(&geom, SEED + p as u64, s as u64, rep);
                let conv = convolve_at_scale(&x, &kernel).unwrap();
                xs.extend(conv.iter().step_by(stride).copied());
                rep += 1;
            }
            let var = stats::variance(&xs);
            let z = stats::mean(&xs) / (var / xs.len() as f64).sqrt();
            pass &= (0.95..=1.05).contains(&var) && z.abs() <= 3.0;
            if (var - 1.0).abs() > (worst_var - 1.0).abs() {
                worst_var = var;
            }
            worst_z = worst_z.max(z.abs());
        }
    }
    check(
        pass,
        format!("worst variance {worst_var:.4} (band [0.95, 1.05]), worst |mean|/SE {worst_z:.2} (≤ 3)"),
    )
}

fn maxgauss_tail() -> Outcome {
    let report = tail_maxgauss(10_000, 100_000, &[0.5, 1.0, 2.0, 3.0], SEED).unwrap();
    let detail = report
        .exceedance
        .iter()
        .map(|e| format!("u={}: {:.4} vs e^-u={:.4}", e.u, e.fraction, e.reference))
        .collect::<Vec<_>>()
        .join(", ");
    check(report.exceedance.iter().all(|e| e.pass), detail)
}

fn net_covering() -> Outcome {
    const EPS: f64 = 0.25;
    let config = EngineConfig::default();
    let f = make_pattern(PatternKind::QuadraticBump, 1, BTreeMap::new()).unwrap();
    let net = build_net(&NetSpec::new(32.0, 1, EPS), &config).unwrap();
    let rep = verify_net(&net, &f, EPS, 200, SEED, config.resolution).unwrap();
    check(
        rep.coverage == 1.0,
        format!(
            "{} entries, coverage {:.3}, max distance to net {:.4} (ε = {EPS})",
            net.len(),
            rep.coverage,
            rep.max_min_distance
        ),
    )
}

fn metric_domination() -> Outcome {
    const MIN_SLOPE: f64 = 0.95;
    let config = EngineConfig::default();
    let c = config.metric_constants(1);
    let base = ParamPoint::new(vec![0.0], vec![2.0]);
    let direction = ParamPoint::new(vec![0.7], vec![0.4]);
    let mut pass = true;
    let mut parts = Vec::new();
    for f in builtin_dictionary(1).unwrap() {
        let rep = domination_check(&f, 1000, SEED, config.resolution, c).unwrap();
        let slope = shrinking_slope(&f, &base, &direction, 2..=10, config.resolution).unwrap();
        pass &= rep.tvc_violations == 0 && rep.ahc_violations == 0 && slope >= MIN_SLOPE;
        parts.push(format!(
            "{}: violations {}+{}, slope {slope:.3}",
            f.name, rep.tvc_violations, rep.ahc_violations
        ));
    }
    check(pass, parts.join("; "))
}

fn type1_control() -> Outcome {
    const DELTA: f64 = 0.05;
    const REPS: usize = 500;
    let limit = DELTA + 3.0 * (DELTA * (1.0 - DELTA) / REPS as f64).sqrt();
    let config = EngineConfig::default();
    let geom = geometry(1, 256.0);
    let dict = separable_dictionary();
    let net = build_net(&NetSpec::new(256.0, 1, 0.5), &config).unwrap();
    let plan = Plan::new(&geom, &dict, &net, &config).unwrap();
    let calibration = null_statistics_with(&plan, 10, REPS, SEED).unwrap();
    let thr = detect::mc_spec_from_samples(calibration, 256.0, dict.len(), 10, DELTA, SEED).unwrap();
    let holdout = null_statistics_with(&plan, 10, REPS, SEED + 1).unwrap();
    let fpr = holdout.iter().filter(|&&e| e > thr.value).count() as f64 / REPS as f64;
    check(
        fpr <= limit,
        format!("threshold {:.3}, holdout FPR {fpr:.3} (≤ {limit:.3})", thr.value),
    )
}

fn power_and_learning() -> Outcome {
    const RATE: f64 = 0.9;
    const SEEDS: usize = 100;
    let config = EngineConfig::default();
    let geom = geometry(1, 256.0);
    let dict = separable_dictionary();
    let net = build_net(&NetSpec::new(256.0, 1, 0.5), &config).unwrap();
    let (alpha, beta) = (net.effective_alpha(), net.effective_beta());
    let thr = detect::mc_threshold(&geom, &dict, &net, 20, 0.05, 200, SEED, &config).unwrap();
    let mut records = Vec::new();
    for (p, f) in dict.iter().enumerate() {
        let sim = SimConfig {
            d: 1,
            half_width: 256.0,
            resolution: geom.resolution,
            n: 20,
            seed: SEED + 10 + p as u64,
            hypothesis: Hypothesis::H1 {
                pattern: f.name.clone(),
                amplitude: Amplitude::PowerGap(3.0),
                scale_law: ScaleLaw::LogUniform {
                    h_min: 4.0,
                    h_max: 16.0,
                },
            },
        };
        let summary = run_experiment(&sim, &dict, &net, &thr, SEEDS / dict.len(), &config).unwrap();
        records.extend(summary.records);
    }
    let total = records.len() as f64;
    let detection = records.iter().filter(|r| r.reject).count() as f64 / total;
    let recovery = records.iter().filter(|r| r.planted.as_ref() == Some(&r.best_pattern)).count() as f64 / total;
    let loc: Vec<f64> = records.iter().flat_map(|r| r.location_errors.iter().copied()).collect();
    let scale: Vec<f64> = records.iter().flat_map(|r| r.scale_errors.iter().copied()).collect();
    let (loc_med, scale_med) = (stats::median(&loc), stats::median(&scale));
    check(
        detection >= RATE && recovery >= RATE && loc_med <= alpha && scale_med <= beta.log2(),
        format!(
            "detection {detection:.2}, recovery {recovery:.2} (≥ {RATE}); median location error {loc_med:.4} (≤ α = {alpha:.4}), median scale error {scale_med:.4} (≤ log₂β = {:.4})",
            beta.log2()
        ),
    )
}

fn scale_equalization() -> Outcome {
    const BAND: f64 = 1.5;
    let config = EngineConfig::default();
    let geom = geometry(1, 256.0);
    let f = make_pattern(PatternKind::QuadraticBump, 1, BTreeMap::new()).unwrap();
    let net = build_net(&NetSpec::new(256.0, 1, 0.5), &config).unwrap();
    let maxima = null_block_maxima(&f, &geom, &net, 500, SEED, &config).unwrap();
    let st = maxima.standardized_medians();
    let raw = maxima.raw_medians();
    let width = st.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - st.iter().cloned().fold(f64::INFINITY, f64::min);
    // Blocks are ordered from the finest scale up.
    let decreasing = raw.windows(2).all(|w| w[0] > w[1]);
    check(
        width <= BAND && decreasing,
        format!(
            "{} blocks, standardized median spread {width:.3} (≤ {BAND}), raw medians {} from finest to coarsest",
            st.len(),
            if decreasing { "strictly decreasing" } else { "NOT strictly decreasing" }
        ),
    )
}

fn net_monotonicity() -> Outcome {
    let config = EngineConfig::default();
    let geom = geometry(1, 256.0);
    let dict = builtin_dictionary(1).unwrap();
    let coarse = build_net(&NetSpec::new(256.0, 1, 0.5), &config).unwrap();
    let fine = coarse.fine_net(4.0, &config).unwrap();
    let coarse_plan = Plan::new(&geom, &dict, &coarse, &config).unwrap();
    let fine_plan = Plan::new(&geom, &dict, &fine, &config).unwrap();
    let mut violations = 0;
    let mut min_gap = f64::INFINITY;
    for r in 0..100 {
        let x = noise_field::<f64>(&geom, SEED, r, 0);
        let a = coarse_plan.pamss(std::slice::from_ref(&x)).unwrap().e_n;
        let b = fine_plan.pamss(std::slice::from_ref(&x)).unwrap().e_n;
        if b < a {
            violations += 1;
        }
        min_gap = min_gap.min(b - a);
    }
    check(
        violations == 0,
        format!(
            "{} vs {} entries, {violations} violations in 100 pairs, smallest gap {min_gap:.4}",
            fine.len(),
            coarse.len()
        ),
    )
}

fn tail_decay() -> Outcome {
    let config = EngineConfig::default();
    let geom = geometry(1, 256.0);
    let f = make_pattern(PatternKind::QuadraticBump, 1, BTreeMap::new()).unwrap();
    let net = build_net(&NetSpec::new(256.0, 1, 0.5), &config).unwrap();
    let rep = tail_scan(&f, &geom, &net, 1000, &[0.5, 1.0, 2.0, 3.0], SEED, &config).unwrap();
    check(
        rep.pass,
        format!("log-exceedance slope {:.3} (≤ {})", rep.full.slope, mss_core::simulate::MAX_TAIL_SLOPE),
    )
}

fn run_cli(args: &[&str], jobs: &str) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_mss"))
        .args(args)
        .args(["--jobs", jobs, "--deterministic"])
        .output()
        .expect("mss runs");
    assert!(
        out.status.success(),
        "mss {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

fn random_field(r: &mut impl Rng) -> Field {
    let d = r.random_range(1..=3);
    let l = if d == 3 { 2.0 } else { r.random_range(2..=8) as f64 };
    let geom = Geometry::new(d, l, r.random_range(1..=4)).unwrap();
    let values: Vec<f64> = (0..geom.len())
        .map(|_| loop {
            let v = f64::from_bits(r.random());
            if v.is_finite() {
                break v;
            }
        })
        .collect();
    Field::new(geom, ArrayD::from_shape_vec(IxDyn(&geom.shape()), values).unwrap(), Provenance::External).unwrap()
}

fn determinism_and_format() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let sim = dir.path().join("sim.json");
    std::fs::write(
        &sim,
        r#"{"d": 1, "L": 32, "n": 4, "seed": 5,
            "hypothesis": {"type": "H1", "pattern": "windowed-sinusoid", "amplitude": {"mu": 6.0},
                           "scale_law": {"type": "log_uniform", "h_min": 2.0, "h_max": 6.0}}}"#,
    )
    .unwrap();
    let sim_s = sim.to_str().unwrap();
    let data_s = data.to_str().unwrap();
    run_cli(&["gen", "--sim", sim_s, "--out", data_s], "1");
    let manifest = data.join("manifest.json");
    let m = manifest.to_str().unwrap();
    let mut identical = true;
    for cmd in [
        vec!["detect", "--manifest", m, "--reps", "100"],
        vec!["learn", "--manifest", m, "--reps", "100"],
        vec!["calibrate", "--mode", "k", "--L", "16", "--n", "2", "--reps", "100"],
    ] {
        identical &= run_cli(&cmd, "1") == run_cli(&cmd, "8");
    }

    let mut r = rng::stream(SEED, &[99]);
    let mut exact = 0;
    for i in 0..1000 {
        let x = random_field(&mut r);
        let path = dir.path().join(format!("r{i}.msst"));
        write_tensor(&x, &path).unwrap();
        let y = read_tensor(&path).unwrap();
        let same = y.geometry == x.geometry
            && x.as_slice().iter().zip(y.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits());
        exact += same as usize;
    }
    check(
        identical && exact == 1000,
        format!(
            "reports {} across 1 vs 8 workers; {exact}/1000 files round-trip bit-exact",
            if identical { "byte-identical" } else { "DIFFER" }
        ),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("null standardization", Duration::from_secs(60), null_standardization),
        ("max-of-Gaussians tail", Duration::from_secs(120), maxgauss_tail),
        ("net covering", Duration::from_secs(120), net_covering),
        ("distance-bound domination", Duration::from_secs(180), metric_domination),
        ("type-1 control", Duration::from_secs(600), type1_control),
        ("power and learning", Duration::from_secs(900), power_and_learning),
        ("scale-correction equalization", Duration::from_secs(600), scale_equalization),
        ("net monotonicity", Duration::from_secs(600), net_monotonicity),
        ("tail decay", Duration::from_secs(600), tail_decay),
        ("determinism and format", Duration::from_secs(600), determinism_and_format),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let label = format!("{}", i + 1);
        if !filter.is_empty() && !filter.contains(&label) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let pass = outcome.pass && elapsed <= *budget;
        failed += !pass as usize;
        println!(
            "criterion {label:>2} {name}: {} ({}; {:.1}s of {}s)",
            if pass { "PASS" } else { "FAIL" },
            outcome.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
