//! Command-line frontend: simulate traffic, train per-node models,
//! replay detection and mitigation, run evaluation sweeps and scaling
//! benchmarks.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 runtime
//! failure. Errors are emitted as one JSON object on stderr.

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use std::collections::HashMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use odit::baselines::{MixtureParams, RenyiConfig};
use odit::detector::{
    build_normalization, calibrate_threshold, normalize, threshold_grid, train, DetectorConfig,
    DetectorState, EvidenceMode, OditModel,
};
use odit::eval::{
    add_vs_fpr, scaling_bench, CoopOdit, Curve, MaxOdit, RenyiNodes, Scenario,
};
use odit::mitigation::{identify, MitigationConfig, ScoreKind};
use odit::model_io::{load_model, save_model};
use odit::sim::{
    generate_attacked_network, generate_network, AttackSpec, Topology, TrafficTrace,
};
use odit::trace_io::{read_trace, write_ground_truth, write_trace};
use odit::baselines::CooperativeCusum;

const SCHEMA_VERSION: u32 = 1;
const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "odit", version, about = "Sequential anomaly detection toolkit")]
struct Cli {
    /// Flat key=value config file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for all randomized work.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-node traffic trace.
    Simulate(SimulateArgs),
    /// Train one detection model per node from an attack-free trace.
    Train(TrainArgs),
    /// Replay a trace through trained models and report alarms.
    Detect(DetectArgs),
    /// Localize attacking nodes and devices after an alarm.
    Mitigate(MitigateArgs),
    /// Sweep thresholds over Monte-Carlo trials: delay vs false alarms.
    Evaluate(EvaluateArgs),
    /// Measure evidence-computation cost over a model-size grid.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    devices: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    /// Attack start step; omit for an attack-free trace.
    #[arg(long)]
    attack_onset: Option<u64>,
    /// Fraction of all devices compromised.
    #[arg(long)]
    attack_fraction: Option<f64>,
    /// Relative rate increase on compromised devices (0.1 = +10%).
    #[arg(long)]
    attack_rate: Option<f64>,
    /// Attack length in steps; omit for open-ended.
    #[arg(long)]
    attack_duration: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Attack-free training trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    m1: Option<usize>,
    #[arg(long)]
    m2: Option<usize>,
    /// Per-node alarm threshold stored in the model.
    #[arg(long)]
    threshold: Option<f64>,
    /// Calibrate the threshold to this false-alarm probability instead.
    #[arg(long)]
    target_fpr: Option<f64>,
    /// Horizon (steps) for threshold calibration.
    #[arg(long)]
    horizon: Option<usize>,
    /// Monte-Carlo trials for threshold calibration.
    #[arg(long)]
    cal_trials: Option<usize>,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Directory holding model_node<N>.json files.
    #[arg(long)]
    models: Option<PathBuf>,
    /// Alarm threshold on the decision statistic.
    #[arg(long)]
    threshold: Option<f64>,
    /// Sum per-node statistics (otherwise each node alarms alone).
    #[arg(long)]
    cooperative: bool,
}

#[derive(Args)]
struct MitigateArgs {
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    models: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Node-level flagging threshold.
    #[arg(long)]
    theta1: Option<f64>,
    /// Device-level flagging threshold.
    #[arg(long)]
    theta2: Option<f64>,
    /// Score devices by absolute deviation instead of signed deviation.
    #[arg(long)]
    magnitude: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// One of: coop, single, cusum, renyi.
    #[arg(long)]
    detector: Option<String>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    devices: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    attack_onset: Option<u64>,
    #[arg(long)]
    attack_fraction: Option<f64>,
    #[arg(long)]
    attack_rate: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    m1: Option<usize>,
    #[arg(long)]
    m2: Option<usize>,
    /// Training-trace length in steps.
    #[arg(long)]
    train_steps: Option<usize>,
    /// Comma-separated threshold grid; default is detector-specific.
    #[arg(long)]
    h_grid: Option<String>,
    /// Report the delay at this matched false-positive rate.
    #[arg(long)]
    target_fpr: Option<f64>,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated reference-set sizes.
    #[arg(long)]
    m2: Option<String>,
    /// Comma-separated dimension counts.
    #[arg(long)]
    d: Option<String>,
    #[arg(long)]
    reps: Option<usize>,
}

#[derive(Debug)]
enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::Runtime(_) => "runtime",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<odit::Error> for CliError {
    fn from(e: odit::Error) -> Self {
        use odit::Error::*;
        let msg = e.to_string();
        match e {
            EmptyTrace | DimensionMismatch { .. } | InsufficientData { .. }
            | InsufficientReferences { .. } | InvalidConfig(_) | EmptyAttackSelection { .. }
            | EmptyMask | MalformedCsv { .. } | SchemaVersion { .. } => {
                CliError::Validation(msg)
            }
            _ => CliError::Runtime(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

/// Flat `key = value` file, `#` comments. Flags win over the file.
struct Settings(HashMap<String, String>);

impl Settings {
    fn load(path: Option<&Path>) -> CliResult<Self> {
        let mut map = HashMap::new();
        if let Some(path) = path {
            let text = fs::read_to_string(path).map_err(|e| {
                CliError::Validation(format!("cannot read config {}: {e}", path.display()))
            })?;
            for (i, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    CliError::Validation(format!(
                        "config line {} is not key=value: {line:?}",
                        i + 1
                    ))
                })?;
                map.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        Ok(Settings(map))
    }

    /// flag > config > default.
    fn get<T>(&self, key: &str, flag: Option<T>, default: T) -> CliResult<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.0.get(key) {
            Some(raw) => raw.parse().map_err(|e| {
                CliError::Validation(format!("config key {key}={raw:?}: {e}"))
            }),
            None => Ok(default),
        }
    }

    fn get_opt<T>(&self, key: &str, flag: Option<T>) -> CliResult<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.0.get(key) {
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| CliError::Validation(format!("config key {key}={raw:?}: {e}"))),
            None => Ok(None),
        }
    }
}

fn parse_list<T>(raw: &str, what: &str) -> CliResult<Vec<T>>
where
    T: FromStr,
    T::Err: Display,
{
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|e| CliError::Validation(format!("bad {what} entry {s:?}: {e}")))
        })
        .collect()
}

fn write_report(out: &Path, name: &str, seed: u64, body: serde_json::Value) -> CliResult<PathBuf> {
    let mut wrapped = json!({
        "schema_version": SCHEMA_VERSION,
        "tool_version": TOOL_VERSION,
        "seed": seed,
    });
    let obj = wrapped.as_object_mut().unwrap();
    for (k, v) in body.as_object().cloned().unwrap_or_default() {
        obj.insert(k, v);
    }
    let path = out.join(name);
    fs::write(&path, serde_json::to_string_pretty(&wrapped)?)?;
    Ok(path)
}

fn ensure_out(out: &Option<PathBuf>) -> CliResult<PathBuf> {
    let dir = out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn load_models(dir: &Path) -> CliResult<Vec<OditModel>> {
    let mut models = Vec::new();
    for n in 0.. {
        let path = dir.join(format!("model_node{n}.json"));
        if !path.exists() {
            break;
        }
        models.push(load_model(&path)?.0);
    }
    if models.is_empty() {
        return Err(CliError::Validation(format!(
            "no model_node<N>.json files in {}",
            dir.display()
        )));
    }
    Ok(models)
}

/// Per-step replay artifacts used by detect and mitigate.
struct Replay {
    /// Global statistic per step (sum when cooperative, max otherwise).
    global: Vec<f64>,
    /// (t, s) per node.
    node_histories: Vec<Vec<(u64, f64)>>,
    /// (t, y) per node.
    device_histories: Vec<Vec<(u64, Vec<f64>)>>,
    alarm: Option<u64>,
}

fn replay(
    models: &[OditModel],
    trace: &TrafficTrace,
    h: f64,
    cooperative: bool,
) -> CliResult<Replay> {
    if trace.nodes.len() != models.len() {
        return Err(CliError::Validation(format!(
            "trace has {} nodes but {} models were loaded",
            trace.nodes.len(),
            models.len()
        )));
    }
    let mut states: Vec<DetectorState> = models
        .iter()
        .map(|_| DetectorState::with_capacity(0))
        .collect();
    let mut node_histories = vec![Vec::new(); models.len()];
    let mut device_histories = vec![Vec::new(); models.len()];
    let mut global = Vec::with_capacity(trace.steps);
    let mut alarm = None;
    for t in 0..trace.steps {
        let time = t as u64 + 1;
        let mut sum = 0.0;
        let mut max = f64::NEG_INFINITY;
        for (n, ((model, state), node)) in
            models.iter().zip(&mut states).zip(&trace.nodes).enumerate()
        {
            let x = model.normalize_row(&node.counts[t], time)?;
            let ev = model.evidence(&x)?;
            device_histories[n].push((time, ev.y_t.clone()));
            state.update(&ev);
            node_histories[n].push((time, state.s));
            sum += state.s;
            max = max.max(state.s);
        }
        let stat = if cooperative { sum } else { max };
        global.push(stat);
        if alarm.is_none() && stat >= h {
            alarm = Some(time);
        }
    }
    Ok(Replay {
        global,
        node_histories,
        device_histories,
        alarm,
    })
}

fn cmd_simulate(cli: &Cli, args: &SimulateArgs, cfg: &Settings) -> CliResult<()> {
    let seed = cfg.get("seed", cli.seed, 0)?;
    let nodes = cfg.get("nodes", args.nodes, 10)?;
    let devices = cfg.get("devices", args.devices, 20)?;
    let steps = cfg.get("steps", args.steps, 500)?;
    let onset = cfg.get_opt("attack_onset", args.attack_onset)?;
    let out = ensure_out(&cli.out)?;

    let topology = Topology::uniform(nodes, devices);
    let (trace, attack) = match onset {
        None => (generate_network(&topology, steps, seed)?, None),
        Some(onset) => {
            let spec = AttackSpec {
                onset,
                fraction_compromised: cfg.get("attack_fraction", args.attack_fraction, 0.1)?,
                rate_increase: cfg.get("attack_rate", args.attack_rate, 0.1)?,
                selection_seed: seed,
                explicit_devices: None,
                duration: cfg.get_opt("attack_duration", args.attack_duration)?,
            };
            (
                generate_attacked_network(&topology, steps, seed, &spec)?,
                Some(spec),
            )
        }
    };
    let trace_path = out.join("trace.csv");
    write_trace(&trace, &trace_path)?;
    let mut body = json!({
        "nodes": nodes,
        "devices_per_node": devices,
        "steps": steps,
        "trace": trace_path,
    });
    if let Some(gt) = &trace.ground_truth {
        let gt_path = out.join("ground_truth.json");
        write_ground_truth(gt, &gt_path)?;
        body["ground_truth"] = json!(gt_path);
        body["attack"] = serde_json::to_value(attack).unwrap();
    }
    let report = write_report(&out, "simulate.json", seed, body)?;
    println!("{}", report.display());
    Ok(())
}

fn cmd_train(cli: &Cli, args: &TrainArgs, cfg: &Settings) -> CliResult<()> {
    let seed = cfg.get("seed", cli.seed, 0)?;
    let trace_path: PathBuf = cfg
        .get_opt("trace", args.trace.clone())?
        .ok_or_else(|| CliError::Validation("--trace is required".into()))?;
    let trace = read_trace(&trace_path)?;
    let n = trace.steps;
    let m1 = cfg.get("m1", args.m1, (n / 5).max(1))?;
    let m2 = cfg.get("m2", args.m2, n.saturating_sub((n / 5).max(1)).max(1))?;
    let k = cfg.get("k", args.k, 4)?;
    let alpha = cfg.get("alpha", args.alpha, 0.05)?;
    let h = cfg.get("threshold", args.threshold, 16.0)?;
    let target_fpr = cfg.get_opt("target_fpr", args.target_fpr)?;
    let horizon = cfg.get("horizon", args.horizon, 200)?;
    let cal_trials = cfg.get("cal_trials", args.cal_trials, 200)?;
    let out = ensure_out(&cli.out)?;

    let mut model_paths = Vec::new();
    let mut thresholds = Vec::new();
    for (node_idx, node) in trace.nodes.iter().enumerate() {
        let normalization = build_normalization(node)?;
        let obs = normalize(node, &normalization)?;
        let dc = DetectorConfig {
            k,
            alpha,
            m1,
            m2,
            h,
            seed: odit::seed_derive(seed, node_idx as u64),
            evidence_mode: EvidenceMode::LogRatio,
        };
        let mut model = train(&obs, normalization, dc)?;
        if let Some(target) = target_fpr {
            model.config.h = calibrate_threshold(
                &model,
                &obs,
                target,
                horizon,
                cal_trials,
                odit::seed_derive(seed, 0xca1 + node_idx as u64),
            )?;
        }
        thresholds.push(model.config.h);
        let path = out.join(format!("model_node{node_idx}.json"));
        save_model(&model, None, &path)?;
        model_paths.push(path);
    }
    let report = write_report(
        &out,
        "train.json",
        seed,
        json!({
            "models": model_paths,
            "thresholds": thresholds,
            "k": k, "alpha": alpha, "m1": m1, "m2": m2,
            "calibrated": target_fpr.is_some(),
        }),
    )?;
    println!("{}", report.display());
    Ok(())
}

fn cmd_detect(cli: &Cli, args: &DetectArgs, cfg: &Settings) -> CliResult<()> {
    let seed = cfg.get("seed", cli.seed, 0)?;
    let trace_path: PathBuf = cfg
        .get_opt("trace", args.trace.clone())?
        .ok_or_else(|| CliError::Validation("--trace is required".into()))?;
    let models_dir: PathBuf = cfg
        .get_opt("models", args.models.clone())?
        .ok_or_else(|| CliError::Validation("--models is required".into()))?;
    let cooperative = args.cooperative || cfg.0.get("cooperative").map(|v| v == "true") == Some(true);
    let models = load_models(&models_dir)?;
    let default_h = if cooperative {
        models.iter().map(|m| m.config.h).sum::<f64>()
    } else {
        models[0].config.h
    };
    let h = cfg.get("threshold", args.threshold, default_h)?;
    let trace = read_trace(&trace_path)?;
    let out = ensure_out(&cli.out)?;

    let rep = replay(&models, &trace, h, cooperative)?;
    let report = write_report(
        &out,
        "detect.json",
        seed,
        json!({
            "cooperative": cooperative,
            "threshold": h,
            "alarmed": rep.alarm.is_some(),
            "alarm_time": rep.alarm,
            "trajectory": rep.global,
            "final_node_statistics": rep
                .node_histories
                .iter()
                .map(|hist| hist.last().map(|(_, s)| *s).unwrap_or(0.0))
                .collect::<Vec<f64>>(),
        }),
    )?;
    println!("{}", report.display());
    Ok(())
}

fn cmd_mitigate(cli: &Cli, args: &MitigateArgs, cfg: &Settings) -> CliResult<()> {
    let seed = cfg.get("seed", cli.seed, 0)?;
    let trace_path: PathBuf = cfg
        .get_opt("trace", args.trace.clone())?
        .ok_or_else(|| CliError::Validation("--trace is required".into()))?;
    let models_dir: PathBuf = cfg
        .get_opt("models", args.models.clone())?
        .ok_or_else(|| CliError::Validation("--models is required".into()))?;
    let models = load_models(&models_dir)?;
    let default_h = models.iter().map(|m| m.config.h).sum::<f64>();
    let h = cfg.get("threshold", args.threshold, default_h)?;
    let theta1 = cfg.get("theta1", args.theta1, 0.5)?;
    let theta2 = cfg.get("theta2", args.theta2, 0.05)?;
    let magnitude =
        args.magnitude || cfg.0.get("magnitude").map(|v| v == "true") == Some(true);
    let trace = read_trace(&trace_path)?;
    let out = ensure_out(&cli.out)?;

    let rep = replay(&models, &trace, h, true)?;
    let alarm = rep
        .alarm
        .ok_or_else(|| CliError::Runtime("no alarm raised; nothing to localize".into()))?;
    let global_s: Vec<(u64, f64)> = rep
        .global
        .iter()
        .enumerate()
        .map(|(t, s)| (t as u64 + 1, *s))
        .collect();
    let mcfg = MitigationConfig {
        theta1,
        theta2,
        score_kind: if magnitude {
            ScoreKind::Magnitude
        } else {
            ScoreKind::Signed
        },
    };
    let result = identify(
        &global_s,
        &rep.node_histories,
        &rep.device_histories,
        alarm,
        &mcfg,
    )?;
    let report = write_report(
        &out,
        "mitigate.json",
        seed,
        json!({
            "threshold": h,
            "theta1": theta1,
            "theta2": theta2,
            "alarm_time": alarm,
            "estimated_onset": result.onset,
            "node_scores": result.node_scores,
            "device_scores": result.device_scores,
            "flagged_nodes": result.flagged_nodes,
            "flagged_devices": result.flagged_devices,
        }),
    )?;
    println!("{}", report.display());
    Ok(())
}

#[derive(Serialize)]
struct EvaluateSummary<'a> {
    detector: &'a str,
    trials: usize,
    matched_fpr: f64,
    add_at_matched_fpr: Option<f64>,
    threshold_at_matched_fpr: Option<f64>,
    curve_csv: PathBuf,
}

fn train_node_models(
    topology: &Topology,
    train_steps: usize,
    k: usize,
    alpha: f64,
    m1: usize,
    m2: usize,
    seed: u64,
) -> CliResult<Vec<OditModel>> {
    let training = generate_network(topology, train_steps, seed)?;
    let mut models = Vec::new();
    for (node_idx, node) in training.nodes.iter().enumerate() {
        let normalization = build_normalization(node)?;
        let obs = normalize(node, &normalization)?;
        let dc = DetectorConfig {
            k,
            alpha,
            m1,
            m2,
            h: f64::INFINITY,
            seed: odit::seed_derive(seed, node_idx as u64),
            evidence_mode: EvidenceMode::LogRatio,
        };
        models.push(train(&obs, normalization, dc)?);
    }
    Ok(models)
}

fn cmd_evaluate(cli: &Cli, args: &EvaluateArgs, cfg: &Settings) -> CliResult<()> {
    let seed = cfg.get("seed", cli.seed, 0)?;
    let detector = cfg.get("detector", args.detector.clone(), "coop".to_string())?;
    let nodes = cfg.get("nodes", args.nodes, 10)?;
    let devices = cfg.get("devices", args.devices, 20)?;
    let steps = cfg.get("steps", args.steps, 300)?;
    let onset = cfg.get("attack_onset", args.attack_onset, 50)?;
    let fraction = cfg.get("attack_fraction", args.attack_fraction, 0.1)?;
    let rate = cfg.get("attack_rate", args.attack_rate, 0.1)?;
    let trials = cfg.get("trials", args.trials, 50)?;
    let k = cfg.get("k", args.k, 4)?;
    let alpha = cfg.get("alpha", args.alpha, 0.05)?;
    let train_steps = cfg.get("train_steps", args.train_steps, 4500)?;
    let m1 = cfg.get("m1", args.m1, train_steps / 5)?;
    let m2 = cfg.get("m2", args.m2, (train_steps - train_steps / 5).min(2500))?;
    let target_fpr = cfg.get("target_fpr", args.target_fpr, 0.05)?;
    let h_grid_raw = cfg.get_opt("h_grid", args.h_grid.clone())?;
    let out = ensure_out(&cli.out)?;

    let topology = Topology::uniform(nodes, devices);
    let scenario = Scenario {
        id: format!("{nodes}x{devices}"),
        topology: topology.clone(),
        steps,
        onset,
        attack: AttackSpec {
            onset,
            fraction_compromised: fraction,
            rate_increase: rate,
            selection_seed: 0,
            explicit_devices: None,
            duration: None,
        },
    };
    let default_grid: Vec<f64> = match detector.as_str() {
        "renyi" => (0..25).map(|i| 1e-4 * f64::powi(2.0, i)).collect(),
        _ => threshold_grid(),
    };
    let h_grid = match h_grid_raw {
        Some(raw) => parse_list::<f64>(&raw, "h_grid")?,
        None => default_grid,
    };
    let train_seed = odit::seed_derive(seed, 0x7121);

    let curve: Curve = match detector.as_str() {
        "coop" | "single" => {
            let models = train_node_models(&topology, train_steps, k, alpha, m1, m2, train_seed)?;
            if detector == "coop" {
                add_vs_fpr(
                    || CoopOdit::new(models.clone(), 0),
                    "coop",
                    &scenario,
                    &h_grid,
                    trials,
                    seed,
                )?
            } else {
                add_vs_fpr(
                    || MaxOdit(CoopOdit::new(models.clone(), 0)),
                    "single",
                    &scenario,
                    &h_grid,
                    trials,
                    seed,
                )?
            }
        }
        "cusum" => {
            let params: Vec<Vec<MixtureParams>> = topology
                .devices
                .iter()
                .map(|node| {
                    node.iter()
                        .map(|p| MixtureParams::from_profile(p, rate))
                        .collect()
                })
                .collect();
            add_vs_fpr(
                || CooperativeCusum::new(params.clone()),
                "cusum",
                &scenario,
                &h_grid,
                trials,
                seed,
            )?
        }
        "renyi" => {
            let training = generate_network(&topology, train_steps, train_seed)?;
            let aggregates: Vec<Vec<f64>> = training
                .nodes
                .iter()
                .map(|node| {
                    node.counts
                        .iter()
                        .map(|row| row.iter().sum::<u64>() as f64)
                        .collect()
                })
                .collect();
            let rcfg = RenyiConfig::default();
            add_vs_fpr(
                || RenyiNodes::from_training(&aggregates, rcfg.clone()).unwrap(),
                "renyi",
                &scenario,
                &h_grid,
                trials,
                seed,
            )?
        }
        other => {
            return Err(CliError::Validation(format!(
                "unknown detector {other:?}; expected coop, single, cusum, or renyi"
            )))
        }
    };

    let csv_path = out.join(format!("curve_{detector}.csv"));
    fs::write(&csv_path, curve.to_csv())?;
    let matched = curve.add_at_fpr(target_fpr);
    let report = write_report(
        &out,
        "evaluate.json",
        seed,
        json!({
            "summary": EvaluateSummary {
                detector: &detector,
                trials,
                matched_fpr: target_fpr,
                add_at_matched_fpr: matched.and_then(|p| p.add),
                threshold_at_matched_fpr: matched.map(|p| p.h),
                curve_csv: csv_path.clone(),
            },
            "points": curve.points,
        }),
    )?;
    println!("{}", report.display());
    Ok(())
}

fn cmd_bench(cli: &Cli, args: &BenchArgs, cfg: &Settings) -> CliResult<()> {
    let seed = cfg.get("seed", cli.seed, 0)?;
    let m2_raw = cfg.get("m2", args.m2.clone(), "500,1000,2000".to_string())?;
    let d_raw = cfg.get("d", args.d.clone(), "25,50,100".to_string())?;
    let reps = cfg.get("reps", args.reps, 30)?;
    let out = ensure_out(&cli.out)?;

    let m2_grid = parse_list::<usize>(&m2_raw, "m2")?;
    let d_grid = parse_list::<usize>(&d_raw, "d")?;
    let result = scaling_bench(&m2_grid, &d_grid, reps)?;
    let csv_path = out.join("bench.csv");
    fs::write(&csv_path, result.to_csv())?;
    let report = write_report(
        &out,
        "bench.json",
        seed,
        json!({
            "cells": result.cells,
            "r2_m2": result.r2_m2,
            "r2_d": result.r2_d,
            "csv": csv_path,
        }),
    )?;
    println!("{}", report.display());
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    let settings = Settings::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Simulate(args) => cmd_simulate(cli, args, &settings),
        Command::Train(args) => cmd_train(cli, args, &settings),
        Command::Detect(args) => cmd_detect(cli, args, &settings),
        Command::Mitigate(args) => cmd_mitigate(cli, args, &settings),
        Command::Evaluate(args) => cmd_evaluate(cli, args, &settings),
        Command::Bench(args) => cmd_bench(cli, args, &settings),
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "{}",
                json!({ "error": { "kind": e.kind(), "message": e.message() } })
            );
            ExitCode::from(e.code())
        }
    }
}
