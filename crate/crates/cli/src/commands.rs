use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::ValueEnum;
use serde::{de::DeserializeOwned, Serialize};
use serde_json::{json, Value};

use mss_core::detect::{self, KCalibration};
use mss_core::io::{write_tensor, Manifest, ManifestEntry};
use mss_core::metric;
use mss_core::net::{self, dictionary_gamma};
use mss_core::parallel::with_jobs;
use mss_core::pattern::{builtin_dictionary, load_dictionary};
use mss_core::simulate::{self, gen_dataset};
use mss_core::{
    build_net, decide, EngineConfig, Geometry, MssError, Net, NetSpec, Pattern, ScanPlan, ScanResult, SimConfig,
    ThresholdSpec,
};

use crate::{Command, Common, DictArgs, NetArgs, ThresholdArgs};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CalibrateMode {
    /// Simulated null quantile of E_n.
    Threshold,
    /// Constant of the closed-form threshold.
    K,
    /// Constants of the distance bounds.
    Metric,
    /// Net constants by grid search.
    Net,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TailMode {
    Maxgauss,
    Scan,
}

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<MssError> for CliError {
    fn from(e: MssError) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {what} {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("invalid {what} {}: {e}", path.display())))
}

fn engine_config(common: &Common) -> CliResult<EngineConfig> {
    match &common.config {
        Some(p) => read_json(p, "config"),
        None => Ok(EngineConfig::default()),
    }
}

fn dictionary(args: &DictArgs, d: usize) -> CliResult<Vec<Pattern>> {
    let dict = match &args.dict {
        Some(p) => {
            if !p.exists() {
                return Err(invalid(format!("dictionary file {} does not exist", p.display())));
            }
            load_dictionary(p)?
        }
        None => builtin_dictionary(d)?,
    };
    if let Some(f) = dict.iter().find(|f| f.d != d) {
        return Err(invalid(format!(
            "dictionary pattern `{}` has d = {}, data has d = {d}",
            f.name, f.d
        )));
    }
    Ok(dict)
}

fn select_patterns(dict: Vec<Pattern>, name: Option<&str>) -> CliResult<Vec<Pattern>> {
    match name {
        None => Ok(dict),
        Some(n) => {
            let f = dict
                .into_iter()
                .find(|f| f.name == n)
                .ok_or_else(|| invalid(format!("pattern `{n}` is not in the dictionary")))?;
            Ok(vec![f])
        }
    }
}

fn net_spec(args: &NetArgs, half_width: f64, d: usize, dict: &[Pattern]) -> CliResult<NetSpec> {
    let spec = match &args.net {
        Some(p) => {
            let spec: NetSpec = read_json(p, "net spec")?;
            if spec.d != d || spec.half_width != half_width {
                return Err(invalid(format!(
                    "net spec {} has d = {}, L = {}; data has d = {d}, L = {half_width}",
                    p.display(),
                    spec.d,
                    spec.half_width
                )));
            }
            spec
        }
        None => {
            let mut spec = NetSpec::new(half_width, d, args.epsilon);
            spec.gamma = args.gamma.unwrap_or_else(|| dictionary_gamma(dict));
            spec.alpha = args.alpha;
            spec.beta = args.beta;
            spec
        }
    };
    Ok(spec)
}

fn make_net(args: &NetArgs, geom: &Geometry, dict: &[Pattern], config: &EngineConfig) -> CliResult<Net> {
    Ok(build_net(&net_spec(args, geom.half_width, geom.d, dict)?, config)?)
}

fn threshold(
    args: &ThresholdArgs,
    common: &Common,
    geom: &Geometry,
    dict: &[Pattern],
    net: &Net,
    n: usize,
    config: &EngineConfig,
) -> CliResult<ThresholdSpec> {
    let thr = if let Some(p) = &args.threshold {
        let thr: ThresholdSpec = read_json(p, "threshold")?;
        if thr.n != n || thr.dict_size != dict.len() || thr.half_width != geom.half_width {
            return Err(invalid(format!(
                "threshold {} was computed for n = {}, |F| = {}, L = {}; data has n = {n}, |F| = {}, L = {}",
                p.display(),
                thr.n,
                thr.dict_size,
                thr.half_width,
                dict.len(),
                geom.half_width
            )));
        }
        thr
    } else if let Some(k) = args.k {
        detect::theoretical_spec(n, dict.len(), args.delta, geom.half_width, k)?
    } else {
        detect::mc_threshold(geom, dict, net, n, args.delta, args.reps, seed(common), config)?
    };
    Ok(thr)
}

fn seed(common: &Common) -> u64 {
    common.seed.unwrap_or(0)
}

fn emit<T: Serialize>(common: &Common, command: &str, report: &T) -> CliResult<()> {
    let mut value = serde_json::to_value(report).map_err(|e| CliError::Runtime(e.to_string()))?;
    if let Value::Object(map) = &mut value {
        map.insert("command".into(), json!(command));
        if !common.deterministic {
            let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
            map.insert("generated_at".into(), json!(now));
        }
    }
    let mut text = serde_json::to_string_pretty(&value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    match &common.out {
        Some(dir) => {
            fs::create_dir_all(dir)
                .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
            let path = dir.join(format!("{command}.json"));
            fs::write(&path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_manifest(path: &Path) -> CliResult<(Manifest, Vec<mss_core::Field>)> {
    if !path.exists() {
        return Err(invalid(format!("manifest {} does not exist", path.display())));
    }
    let manifest = Manifest::load(path)?;
    if manifest.entries.is_empty() {
        return Err(invalid(format!("manifest {} lists no tensors", path.display())));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let tensors = manifest.load_tensors(base)?;
    Ok((manifest, tensors))
}

fn jobs(command: &Command) -> usize {
    match command {
        Command::Gen { common, .. }
        | Command::Net { common, .. }
        | Command::Scan { common, .. }
        | Command::Detect { common, .. }
        | Command::Learn { common, .. }
        | Command::Calibrate { common, .. }
        | Command::VerifyNet { common, .. }
        | Command::DiagnoseTails { common, .. } => common.jobs,
    }
}

pub fn run(command: Command) -> CliResult<()> {
    with_jobs(jobs(&command), move || dispatch(command))
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Gen {
            common,
            dict,
            sim,
            replicate,
        } => gen(&common, &dict, &sim, replicate),
        Command::Net {
            common,
            net,
            half_width,
            d,
            list,
        } => net_cmd(&common, &net, half_width, d, list),
        Command::Scan {
            common,
            dict,
            net,
            tensor,
        } => scan(&common, &dict, &net, &tensor),
        Command::Detect {
            common,
            dict,
            net,
            threshold,
            manifest,
        } => {
            let (report, _) = detect_cmd(&common, &dict, &net, &threshold, &manifest)?;
            emit(&common, "detect", &report)
        }
        Command::Learn {
            common,
            dict,
            net,
            threshold,
            manifest,
        } => learn(&common, &dict, &net, &threshold, &manifest),
        Command::Calibrate {
            common,
            dict,
            net,
            mode,
            half_width,
            d,
            resolution,
            n,
            delta,
            reps,
            cache,
        } => {
            let mut config = engine_config(&common)?;
            if let Some(r) = resolution {
                config.resolution = r;
            }
            let geom = Geometry::new(d, half_width, config.resolution)?;
            let dict = dictionary(&dict, d)?;
            calibrate(&common, &config, &geom, &dict, &net, mode, n, delta, reps, cache.as_deref())
        }
        Command::VerifyNet {
            common,
            dict,
            net,
            half_width,
            d,
            pattern,
            trials,
        } => verify(&common, &dict, &net, half_width, d, pattern.as_deref(), trials),
        Command::DiagnoseTails {
            common,
            dict,
            net,
            mode,
            count,
            reps,
            u,
            half_width,
            pattern,
        } => diagnose(&common, &dict, &net, mode, count, reps, &u, half_width, pattern.as_deref()),
    }
}

fn gen(common: &Common, dict: &DictArgs, sim: &Path, replicate: u64) -> CliResult<()> {
    let out = common
        .out
        .as_ref()
        .ok_or_else(|| invalid("gen needs --out <dir> for the tensor files"))?;
    let mut config: SimConfig = read_json(sim, "simulation config")?;
    if let Some(s) = common.seed {
        config.seed = s;
    }
    config.validate()?;
    let dict = dictionary(dict, config.d)?;
    let data = gen_dataset::<f64>(&config, &dict, replicate)?;
    fs::create_dir_all(out).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out.display())))?;
    let mut entries = Vec::with_capacity(data.len());
    for (i, (x, truth)) in data.into_iter().enumerate() {
        let name = PathBuf::from(format!("tensor_{i:03}.msst"));
        write_tensor(&x, &out.join(&name))?;
        entries.push(ManifestEntry {
            path: name,
            provenance: x.provenance,
            ground_truth: truth,
        });
    }
    let manifest = Manifest {
        geometry: config.geometry()?,
        entries,
        seed_lineage: vec![config.seed, replicate],
    };
    let manifest_path = out.join("manifest.json");
    manifest.save(&manifest_path)?;
    emit(
        common,
        "gen",
        &json!({
            "manifest": manifest_path,
            "tensors": manifest.entries.len(),
            "sim": config,
            "replicate": replicate,
        }),
    )
}

fn net_cmd(common: &Common, args: &NetArgs, half_width: Option<f64>, d: Option<usize>, list: bool) -> CliResult<()> {
    let config = engine_config(common)?;
    let spec = match (&args.net, half_width, d) {
        (Some(p), _, _) => read_json::<NetSpec>(p, "net spec")?,
        (None, Some(l), Some(d)) => {
            let mut spec = NetSpec::new(l, d, args.epsilon);
            spec.gamma = args.gamma.unwrap_or(1.0);
            spec.alpha = args.alpha;
            spec.beta = args.beta;
            spec
        }
        _ => return Err(invalid("net needs either --net <spec> or both --L and --d")),
    };
    let net = build_net(&spec, &config)?;
    let scales: Vec<Value> = net
        .blocks
        .iter()
        .map(|b| json!({ "h": b.h, "locations": b.count() as u64 }))
        .collect();
    let mut report = json!({
        "spec": spec,
        "L": net.half_width,
        "d": net.d,
        "alpha": net.effective_alpha(),
        "beta": net.effective_beta(),
        "epsilon": net.epsilon,
        "gamma": net.gamma_used,
        "scales": scales,
        "entries": net.len() as u64,
    });
    if list {
        let entries: Vec<Value> = net.entries().map(|(t, h)| json!({ "t": t, "h": h })).collect();
        report["net"] = json!(entries);
    }
    emit(common, "net", &report)
}

fn scan(common: &Common, dict: &DictArgs, net: &NetArgs, tensor: &Path) -> CliResult<()> {
    if !tensor.exists() {
        return Err(invalid(format!("tensor file {} does not exist", tensor.display())));
    }
    let config = engine_config(common)?;
    let x = mss_core::io::read_tensor(tensor)?;
    let dict = dictionary(dict, x.geometry.d)?;
    let net = make_net(net, &x.geometry, &dict, &config)?;
    let plan = ScanPlan::<f64>::new(&x.geometry, &dict, &net, &config)?;
    let results = plan.scan(&x)?;
    emit(
        common,
        "scan",
        &json!({
            "tensor": tensor,
            "geometry": x.geometry,
            "net_entries": net.len() as u64,
            "results": results,
        }),
    )
}

fn detect_cmd(
    common: &Common,
    dict: &DictArgs,
    net: &NetArgs,
    thr: &ThresholdArgs,
    manifest: &Path,
) -> CliResult<(detect::DetectionReport, Manifest)> {
    let config = engine_config(common)?;
    let (manifest, tensors) = load_manifest(manifest)?;
    let geom = manifest.geometry;
    let dict = dictionary(dict, geom.d)?;
    let net = make_net(net, &geom, &dict, &config)?;
    let spec = threshold(thr, common, &geom, &dict, &net, tensors.len(), &config)?;
    let plan = ScanPlan::<f64>::new(&geom, &dict, &net, &config)?;
    let report = decide(plan.pamss(&tensors)?, &spec);
    Ok((report, manifest))
}

/// Per-tensor estimate without the per-scale detail.
fn estimate(path: &Path, r: &ScanResult) -> Value {
    json!({
        "path": path,
        "pattern": r.pattern,
        "statistic": r.statistic,
        "t": r.argmax_t,
        "h": r.argmax_h,
        "negated": r.negated,
    })
}

fn learn(common: &Common, dict: &DictArgs, net: &NetArgs, thr: &ThresholdArgs, manifest: &Path) -> CliResult<()> {
    let (report, manifest) = detect_cmd(common, dict, net, thr, manifest)?;
    let estimates: Vec<Value> = manifest
        .entries
        .iter()
        .zip(&report.pamss.per_tensor)
        .map(|(e, r)| estimate(&e.path, r))
        .collect();
    emit(
        common,
        "learn",
        &json!({
            "reject": report.reject,
            "E_n": report.e_n,
            "threshold": report.threshold,
            "threshold_method": report.threshold_method,
            "delta": report.delta,
            "p_value": report.p_value_estimate,
            "best_pattern": report.pamss.best_pattern,
            "per_pattern_scores": report.pamss.per_pattern_scores,
            "estimates": estimates,
        }),
    )
}

#[allow(clippy::too_many_arguments)]
fn calibrate(
    common: &Common,
    config: &EngineConfig,
    geom: &Geometry,
    dict: &[Pattern],
    net_args: &NetArgs,
    mode: CalibrateMode,
    n: usize,
    delta: f64,
    reps: usize,
    cache: Option<&Path>,
) -> CliResult<()> {
    let seed = seed(common);
    match mode {
        CalibrateMode::Threshold => {
            let net = make_net(net_args, geom, dict, config)?;
            let thr = detect::mc_threshold(geom, dict, &net, n, delta, reps, seed, config)?;
            emit(common, "calibrate", &thr)
        }
        CalibrateMode::K => {
            let net = make_net(net_args, geom, dict, config)?;
            let cal: KCalibration = match cache {
                Some(c) => detect::calibrate_k_cached(c, geom, dict, &net, n, reps, seed, config)?,
                None => detect::calibrate_k(geom, dict, &net, n, reps, seed, config)?,
            };
            emit(common, "calibrate", &cal)
        }
        CalibrateMode::Metric => {
            let c = metric::calibrate_metric_constants(dict, reps, seed, config.resolution, 1.0)?;
            let per_pattern = dict
                .iter()
                .map(|f| metric::domination_check(f, reps, seed, config.resolution, c))
                .collect::<Result<Vec<_>, _>>()?;
            emit(
                common,
                "calibrate",
                &json!({ "d": geom.d, "pairs": reps, "constants": c, "per_pattern": per_pattern }),
            )
        }
        CalibrateMode::Net => {
            let grid_a = [0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5];
            let grid_b = [0.1, 0.15, 0.2, 0.3, 0.4, 0.6];
            let cal = net::calibrate_net_constants(
                dict,
                geom.half_width,
                net_args.epsilon,
                &grid_a,
                &grid_b,
                reps,
                seed,
                config,
            )?;
            emit(common, "calibrate", &cal)
        }
    }
}

fn verify(
    common: &Common,
    dict: &DictArgs,
    net_args: &NetArgs,
    half_width: f64,
    d: usize,
    pattern: Option<&str>,
    trials: usize,
) -> CliResult<()> {
    let config = engine_config(common)?;
    let geom = Geometry::new(d, half_width, config.resolution)?;
    let dict = dictionary(dict, d)?;
    let net = make_net(net_args, &geom, &dict, &config)?;
    let patterns = select_patterns(dict, pattern)?;
    let reports = patterns
        .iter()
        .map(|f| net::verify_net(&net, f, net.epsilon, trials, seed(common), config.resolution))
        .collect::<Result<Vec<_>, _>>()?;
    let pass = reports.iter().all(|r| r.coverage >= 1.0);
    emit(
        common,
        "verify-net",
        &json!({ "entries": net.len() as u64, "pass": pass, "reports": reports }),
    )
}

#[allow(clippy::too_many_arguments)]
fn diagnose(
    common: &Common,
    dict: &DictArgs,
    net_args: &NetArgs,
    mode: TailMode,
    count: usize,
    reps: usize,
    u: &[f64],
    half_width: f64,
    pattern: Option<&str>,
) -> CliResult<()> {
    match mode {
        TailMode::Maxgauss => {
            let report = simulate::tail_maxgauss(count, reps, u, seed(common))?;
            emit(common, "diagnose-tails", &report)
        }
        TailMode::Scan => {
            let config = engine_config(common)?;
            let geom = Geometry::new(1, half_width, config.resolution)?;
            let dict = dictionary(dict, 1)?;
            let net = make_net(net_args, &geom, &dict, &config)?;
            let name = pattern.unwrap_or(&dict[0].name).to_string();
            let f = select_patterns(dict, Some(&name))?.remove(0);
            let report = simulate::tail_scan(&f, &geom, &net, reps, u, seed(common), &config)?;
            emit(common, "diagnose-tails", &report)
        }
    }
}
