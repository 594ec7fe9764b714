//! Evaluation harness: seeded trials, Average Detection Delay vs False
//! Positive Rate curves, mitigation ROC/AUC, and scaling measurements.
//! Trials parallelize by seed; results are reduced in seed order so
//! outputs are byte-identical regardless of thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::baselines::{CooperativeCusum, RenyiConfig, RenyiDetector};
use crate::detector::{DetectorState, ObservationVector, OditModel};
use crate::seed;
use crate::sim::{generate_network, inject_attack, AttackSpec, Topology, TrafficTrace};
use crate::{Error, Result};

/// A detector driven one step at a time with the raw per-device counts
/// of every node; returns the global decision statistic.
pub trait SequentialDetector {
    fn step(&mut self, counts: &[Vec<u64>]) -> Result<f64>;
}

/// Cooperative ODIT: per-node detectors, global statistic is the sum.
pub struct CoopOdit {
    pub models: Vec<OditModel>,
    states: Vec<DetectorState>,
    t: u64,
    history_cap: usize,
}

impl CoopOdit {
    pub fn new(models: Vec<OditModel>, history_cap: usize) -> Self {
        let states = models
            .iter()
            .map(|_| DetectorState::with_capacity(history_cap))
            .collect();
        Self {
            models,
            states,
            t: 0,
            history_cap,
        }
    }

    pub fn states(&self) -> &[DetectorState] {
        &self.states
    }

    pub fn reset(&mut self) {
        for st in &mut self.states {
            *st = DetectorState::with_capacity(self.history_cap);
        }
        self.t = 0;
    }
}

impl SequentialDetector for CoopOdit {
    fn step(&mut self, counts: &[Vec<u64>]) -> Result<f64> {
        if counts.len() != self.models.len() {
            return Err(Error::DimensionMismatch {
                expected: self.models.len(),
                got: counts.len(),
            });
        }
        self.t += 1;
        let mut total = 0.0;
        for ((model, state), row) in self.models.iter().zip(&mut self.states).zip(counts) {
            let x = model.normalize_row(row, self.t)?;
            let ev = model.evidence(&x)?;
            state.update(&ev);
            total += state.s;
        }
        Ok(total)
    }
}

/// Non-cooperative multi-node ODIT: every node runs alone and the run
/// stops when the first node alarms, i.e. the decision statistic is the
/// maximum local statistic.
pub struct MaxOdit(pub CoopOdit);

impl SequentialDetector for MaxOdit {
    fn step(&mut self, counts: &[Vec<u64>]) -> Result<f64> {
        self.0.step(counts)?;
        Ok(self
            .0
            .states()
            .iter()
            .map(|s| s.s)
            .fold(f64::NEG_INFINITY, f64::max))
    }
}

impl SequentialDetector for CooperativeCusum {
    fn step(&mut self, counts: &[Vec<u64>]) -> Result<f64> {
        CooperativeCusum::step(self, counts)
    }
}

/// Windowed information-metric detector per node on the node's
/// aggregate count; the decision statistic is the largest per-node
/// divergence (alarm when any node's metric crosses the threshold).
pub struct RenyiNodes {
    detectors: Vec<RenyiDetector>,
}

impl RenyiNodes {
    /// `nominal_aggregates[n]` = attack-free aggregate count series of
    /// node `n`.
    pub fn from_training(nominal_aggregates: &[Vec<f64>], cfg: RenyiConfig) -> Result<Self> {
        Ok(Self {
            detectors: nominal_aggregates
                .iter()
                .map(|agg| RenyiDetector::from_training(agg, cfg.clone()))
                .collect::<Result<_>>()?,
        })
    }
}

impl SequentialDetector for RenyiNodes {
    fn step(&mut self, counts: &[Vec<u64>]) -> Result<f64> {
        if counts.len() != self.detectors.len() {
            return Err(Error::DimensionMismatch {
                expected: self.detectors.len(),
                got: counts.len(),
            });
        }
        let mut max_div: f64 = 0.0;
        for (det, row) in self.detectors.iter_mut().zip(counts) {
            let agg = row.iter().sum::<u64>() as f64;
            if let Some((div, _)) = det.step(agg) {
                max_div = max_div.max(div);
            }
        }
        Ok(max_div)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub alarm_time: Option<u64>,
    pub attack_onset: Option<u64>,
    /// Alarm time minus onset, when detected at/after onset.
    pub delay: Option<u64>,
    /// Alarm before onset, or any alarm in an attack-free run.
    pub false_alarm: bool,
    pub seed: u64,
}

/// Feed a trace sequentially and classify the first alarm.
pub fn run_trial<D: SequentialDetector>(
    detector: &mut D,
    trace: &TrafficTrace,
    onset: Option<u64>,
    h: f64,
    trial_seed: u64,
) -> Result<TrialOutcome> {
    let counts_at = |t: usize| -> Vec<Vec<u64>> {
        trace.nodes.iter().map(|n| n.counts[t].clone()).collect()
    };
    let mut alarm_time = None;
    for t in 0..trace.steps {
        let stat = detector.step(&counts_at(t))?;
        if stat >= h {
            alarm_time = Some(t as u64);
            break;
        }
    }
    Ok(classify(alarm_time, onset, trial_seed))
}

fn classify(alarm_time: Option<u64>, onset: Option<u64>, trial_seed: u64) -> TrialOutcome {
    let (delay, false_alarm) = match (alarm_time, onset) {
        (Some(at), Some(on)) if at >= on => (Some(at - on), false),
        (Some(_), Some(_)) => (None, true),
        (Some(_), None) => (None, true),
        (None, _) => (None, false),
    };
    TrialOutcome {
        alarm_time,
        attack_onset: onset,
        delay,
        false_alarm,
        seed: trial_seed,
    }
}

/// One point of an ADD-vs-FPR curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub h: f64,
    pub fpr: f64,
    /// Mean delay over detected attacked trials; `None` when nothing
    /// detected at this threshold.
    pub add: Option<f64>,
    /// 95% CI half-width (normal approximation).
    pub ci_halfwidth: f64,
    /// Censored variant: misses folded in at the post-onset horizon.
    pub add_censored: f64,
    pub detected: usize,
    pub missed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub detector_id: String,
    pub scenario_id: String,
    pub trials: usize,
    /// Sorted by threshold ascending (FPR descending).
    pub points: Vec<CurvePoint>,
}

impl Curve {
    /// ADD at matched FPR: the smallest threshold whose measured FPR is
    /// at most `target`.
    pub fn add_at_fpr(&self, target: f64) -> Option<&CurvePoint> {
        self.points.iter().find(|p| p.fpr <= target)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("fpr,add,ci,h\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{}\n",
                p.fpr,
                p.add.map_or(String::from("nan"), |a| a.to_string()),
                p.ci_halfwidth,
                p.h
            ));
        }
        out
    }
}

/// Scenario shared by all detectors under comparison.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub id: String,
    pub topology: Topology,
    pub steps: usize,
    pub onset: u64,
    pub attack: AttackSpec,
}

/// First index where the trajectory reaches `h`.
pub fn first_crossing(trajectory: &[f64], h: f64) -> Option<usize> {
    trajectory.iter().position(|&s| s >= h)
}

/// Full statistic trajectory of one trace.
pub fn trajectory<D: SequentialDetector>(detector: &mut D, trace: &TrafficTrace) -> Result<Vec<f64>> {
    (0..trace.steps)
        .map(|t| {
            let counts: Vec<Vec<u64>> =
                trace.nodes.iter().map(|n| n.counts[t].clone()).collect();
            detector.step(&counts)
        })
        .collect()
}

/// Estimate an ADD-vs-FPR curve over a threshold grid.
///
/// Per trial, one attack-free and one attacked trace are generated from
/// derived sub-seeds and their statistic trajectories recorded once;
/// every threshold is then evaluated on the recorded trajectories. FPR
/// is the fraction of attack-free trials with any alarm within the
/// trace horizon; ADD averages the delay of detected attacked trials.
pub fn add_vs_fpr<D, F>(
    factory: F,
    detector_id: &str,
    scenario: &Scenario,
    h_grid: &[f64],
    trials: usize,
    run_seed: u64,
) -> Result<Curve>
where
    D: SequentialDetector,
    F: Fn() -> D + Sync,
{
    if h_grid.is_empty() {
        return Err(Error::InvalidConfig("threshold grid is empty".into()));
    }
    if trials == 0 {
        return Err(Error::InvalidConfig("trials must be >= 1".into()));
    }
    let per_trial: Vec<(Vec<f64>, Vec<f64>)> = (0..trials)
        .into_par_iter()
        .map(|i| -> Result<(Vec<f64>, Vec<f64>)> {
            let clean_seed = seed::derive(run_seed, 2 * i as u64);
            let attack_seed = seed::derive(run_seed, 2 * i as u64 + 1);
            let clean = generate_network(&scenario.topology, scenario.steps, clean_seed)?;
            let mut det = factory();
            let clean_traj = trajectory(&mut det, &clean)?;

            let nominal = generate_network(&scenario.topology, scenario.steps, attack_seed)?;
            let mut spec = scenario.attack.clone();
            spec.selection_seed = seed::derive(run_seed, 0x5e1ec7 + i as u64);
            let attacked = inject_attack(&scenario.topology, &nominal, &spec)?;
            let mut det = factory();
            let attacked_traj = trajectory(&mut det, &attacked)?;
            Ok((clean_traj, attacked_traj))
        })
        .collect::<Result<_>>()?;

    let horizon = scenario.steps as u64;
    let mut hs = h_grid.to_vec();
    hs.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let points = hs
        .iter()
        .map(|&h| {
            let mut false_alarms = 0usize;
            let mut delays = Vec::new();
            let mut missed = 0usize;
            for (clean_traj, attacked_traj) in &per_trial {
                if first_crossing(clean_traj, h).is_some() {
                    false_alarms += 1;
                }
                match first_crossing(attacked_traj, h) {
                    Some(t) if t as u64 >= scenario.onset => {
                        delays.push((t as u64 - scenario.onset) as f64)
                    }
                    // an early alarm on the attacked trace is a false
                    // alarm, not a detection
                    Some(_) => missed += 1,
                    None => missed += 1,
                }
            }
            let detected = delays.len();
            let add = (detected > 0).then(|| delays.iter().sum::<f64>() / detected as f64);
            let ci_halfwidth = if detected > 1 {
                let m = add.unwrap();
                let var = delays.iter().map(|d| (d - m) * (d - m)).sum::<f64>()
                    / (detected - 1) as f64;
                1.96 * (var / detected as f64).sqrt()
            } else {
                0.0
            };
            let censor = (horizon - scenario.onset) as f64;
            let add_censored = (delays.iter().sum::<f64>() + missed as f64 * censor)
                / (detected + missed).max(1) as f64;
            CurvePoint {
                h,
                fpr: false_alarms as f64 / trials as f64,
                add,
                ci_halfwidth,
                add_censored,
                detected,
                missed,
            }
        })
        .collect();
    Ok(Curve {
        detector_id: detector_id.to_string(),
        scenario_id: scenario.id.clone(),
        trials,
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    /// (fpr, tpr) points, monotone in fpr.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// ROC over device verdicts as the decision threshold sweeps from +inf
/// down to -inf; AUC by the trapezoid rule. Ties on the score move
/// together.
pub fn mitigation_roc(scores: &[(f64, bool)]) -> RocResult {
    let positives = scores.iter().filter(|(_, a)| *a).count();
    let negatives = scores.len() - positives;
    let mut sorted: Vec<(f64, bool)> = scores.to_vec();
    sorted.sort_unstable_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let score = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == score {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((
            fp as f64 / negatives.max(1) as f64,
            tp as f64 / positives.max(1) as f64,
        ));
    }
    if points.last() != Some(&(1.0, 1.0)) {
        points.push((1.0, 1.0));
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * 0.5 * (w[0].1 + w[1].1))
        .sum();
    RocResult { points, auc }
}

pub fn roc_to_csv(roc: &RocResult) -> String {
    let mut out = String::from("fpr,tpr\n");
    for (fpr, tpr) in &roc.points {
        out.push_str(&format!("{fpr},{tpr}\n"));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub m2: usize,
    pub d: usize,
    pub median_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingResult {
    pub cells: Vec<BenchCell>,
    /// Linear-fit R^2 of time vs m2, averaged over d rows.
    pub r2_m2: f64,
    /// Linear-fit R^2 of time vs d, averaged over m2 columns.
    pub r2_d: f64,
}

impl ScalingResult {
    pub fn cell(&self, m2: usize, d: usize) -> Option<&BenchCell> {
        self.cells.iter().find(|c| c.m2 == m2 && c.d == d)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("m2,d,median_ns\n");
        for c in &self.cells {
            out.push_str(&format!("{},{},{}\n", c.m2, c.d, c.median_ns));
        }
        out
    }
}

/// Least-squares line fit; returns (slope, intercept, r2).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (slope * x + intercept);
            e * e
        })
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    (slope, intercept, r2)
}

/// Median per-evidence wall time over a grid of (m2, d) cells, with
/// linear-fit R^2 per axis. Models are synthetic: random reference
/// points at each cell size.
pub fn scaling_bench(m2_grid: &[usize], d_grid: &[usize], reps: usize) -> Result<ScalingResult> {
    use crate::detector::{DetectorConfig, EvidenceMode, NormalizationMap};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    if m2_grid.is_empty() || d_grid.is_empty() || reps == 0 {
        return Err(Error::InvalidConfig("bench grid and reps must be nonempty".into()));
    }
    let mut cells = Vec::new();
    for &d in d_grid {
        for &m2 in m2_grid {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(0xbe_c4, (m2 * 31 + d) as u64));
            let gen_point = |rng: &mut ChaCha8Rng, t: u64| ObservationVector {
                values: (0..d).map(|_| rng.gen::<f64>()).collect(),
                time_index: t,
            };
            let refs: Vec<ObservationVector> =
                (0..m2).map(|i| gen_point(&mut rng, i as u64)).collect();
            let model = OditModel {
                reference_set: refs,
                baseline_stat: 1.0,
                normalization: NormalizationMap(vec![1.0; d]),
                config: DetectorConfig {
                    k: 2.min(m2),
                    alpha: 0.05,
                    m1: 1,
                    m2,
                    h: 1.0,
                    seed: 0,
                    evidence_mode: EvidenceMode::LogRatio,
                },
                legacy: None,
                d,
            };
            let queries: Vec<ObservationVector> =
                (0..16).map(|i| gen_point(&mut rng, i)).collect();
            // warmup
            for q in &queries {
                std::hint::black_box(model.evidence(q)?);
            }
            let mut samples = Vec::with_capacity(reps);
            for r in 0..reps {
                let start = Instant::now();
                for q in &queries {
                    std::hint::black_box(model.evidence(q)?);
                }
                let _ = r;
                samples.push(start.elapsed().as_nanos() as f64 / queries.len() as f64);
            }
            samples.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
            cells.push(BenchCell {
                m2,
                d,
                median_ns: samples[samples.len() / 2],
            });
        }
    }
    let result_r2 = |by_axis: bool| -> f64 {
        let outer: Vec<usize> = if by_axis { d_grid.to_vec() } else { m2_grid.to_vec() };
        let mut total = 0.0;
        for &fixed in &outer {
            let (xs, ys): (Vec<f64>, Vec<f64>) = cells
                .iter()
                .filter(|c| if by_axis { c.d == fixed } else { c.m2 == fixed })
                .map(|c| {
                    (
                        if by_axis { c.m2 as f64 } else { c.d as f64 },
                        c.median_ns,
                    )
                })
                .unzip();
            let (_, _, r2) = linear_fit(&xs, &ys);
            total += r2;
        }
        total / outer.len() as f64
    };
    Ok(ScalingResult {
        r2_m2: result_r2(true),
        r2_d: result_r2(false),
        cells,
    })
}
