//! Comparator detectors: clairvoyant cooperative CUSUM over the known
//! generative mixture, G-CUSUM with EM-estimated parameters, raw-rate
//! filtering, and a windowed Renyi information-metric detector.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::detector::RawTrace;
use crate::sim::DeviceProfile;
use crate::{Error, Result};

const DENSITY_FLOOR: f64 = 1e-300;

/// Two-component Gaussian mixture for one device, plus the attack
/// scaling that defines the post-change density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub active_prob: f64,
    pub active_mean: f64,
    pub idle_mean: f64,
    pub sigma: f64,
    /// Post-change means are `(1 + attack_scale) *` pre-change means.
    pub attack_scale: f64,
}

impl MixtureParams {
    /// Clairvoyant parameters straight from the generative profile.
    pub fn from_profile(p: &DeviceProfile, rate_increase: f64) -> Self {
        Self {
            active_prob: p.active_prob,
            active_mean: p.active_mean,
            idle_mean: p.idle_mean,
            sigma: p.sigma,
            attack_scale: rate_increase,
        }
    }

    fn density(&self, x: f64, scale: f64) -> f64 {
        let phi = |mean: f64| {
            let z = (x - mean) / self.sigma;
            (-0.5 * z * z).exp() / (self.sigma * (2.0 * std::f64::consts::PI).sqrt())
        };
        let f = self.active_prob * phi(self.active_mean * scale)
            + (1.0 - self.active_prob) * phi(self.idle_mean * scale);
        f.max(DENSITY_FLOOR)
    }
}

/// `log f1(x) / f0(x)` with the continuous mixture densities evaluated
/// at the integer count. The rounding mismatch is deliberate: the real
/// count distribution deviates from the generative bimodal Gaussian.
pub fn mixture_llr(count: f64, params: &MixtureParams) -> f64 {
    let f0 = params.density(count, 1.0);
    let f1 = params.density(count, 1.0 + params.attack_scale);
    f1.ln() - f0.ln()
}

/// Per-device CUSUM statistic, same clamped recursion as the core
/// detector with the LLR as evidence.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CusumState {
    pub s: f64,
}

pub fn cusum_step(state: CusumState, llr: f64) -> CusumState {
    CusumState {
        s: (state.s + llr).max(0.0),
    }
}

/// Cooperative CUSUM across all devices of all nodes: the global
/// statistic is the sum of the per-device statistics.
#[derive(Debug, Clone)]
pub struct CooperativeCusum {
    /// `params[n][j]` for device `j` of node `n`.
    pub params: Vec<Vec<MixtureParams>>,
    states: Vec<Vec<CusumState>>,
}

impl CooperativeCusum {
    pub fn new(params: Vec<Vec<MixtureParams>>) -> Self {
        let states = params
            .iter()
            .map(|node| vec![CusumState::default(); node.len()])
            .collect();
        Self { params, states }
    }

    /// Advance one step with `counts[n][j]`; returns the global statistic.
    pub fn step(&mut self, counts: &[Vec<u64>]) -> Result<f64> {
        if counts.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                got: counts.len(),
            });
        }
        let mut total = 0.0;
        for (n, row) in counts.iter().enumerate() {
            if row.len() != self.params[n].len() {
                return Err(Error::DimensionMismatch {
                    expected: self.params[n].len(),
                    got: row.len(),
                });
            }
            for (j, &c) in row.iter().enumerate() {
                let llr = mixture_llr(c as f64, &self.params[n][j]);
                self.states[n][j] = cusum_step(self.states[n][j], llr);
                total += self.states[n][j].s;
            }
        }
        Ok(total)
    }

    pub fn reset(&mut self) {
        for node in &mut self.states {
            node.fill(CusumState::default());
        }
    }
}

/// One fitted two-component mixture (shared sigma).
#[derive(Debug, Clone, PartialEq)]
pub struct FittedMixture {
    pub active_prob: f64,
    pub active_mean: f64,
    pub idle_mean: f64,
    pub sigma: f64,
    /// The fit collapsed to a single component.
    pub collapsed: bool,
}

/// EM fit of a two-component Gaussian mixture with shared sigma.
/// K-means-style initialization from the sample quantiles, 100
/// iteration cap.
pub fn fit_mixture(samples: &[f64], device: usize) -> Result<FittedMixture> {
    if samples.len() < 4 {
        return Err(Error::InsufficientData {
            needed: 4,
            have: samples.len(),
        });
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let overall_std = var.sqrt().max(1e-6);

    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let quant = |q: f64| sorted[((q * (sorted.len() - 1) as f64).round()) as usize];
    let mut m_lo = quant(0.1);
    let mut m_hi = quant(0.9);
    if m_hi - m_lo < 1e-9 {
        // all mass in one cluster: single-component fit
        return Ok(FittedMixture {
            active_prob: 1.0,
            active_mean: mean,
            idle_mean: mean,
            sigma: overall_std,
            collapsed: true,
        });
    }
    let mut p = 0.5;
    let mut sigma = overall_std;
    let mut last_ll = f64::NEG_INFINITY;
    let tol = 1e-9;
    let max_iter = 100;
    let mut converged = false;
    for _ in 0..max_iter {
        // E step
        let mut r = Vec::with_capacity(samples.len());
        let mut ll = 0.0;
        for &x in samples {
            let phi = |m: f64| {
                let z = (x - m) / sigma;
                (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
            };
            let a = (p * phi(m_hi)).max(DENSITY_FLOOR);
            let b = ((1.0 - p) * phi(m_lo)).max(DENSITY_FLOOR);
            r.push(a / (a + b));
            ll += (a + b).ln();
        }
        // M step
        let r_sum: f64 = r.iter().sum();
        let q_sum = n - r_sum;
        p = (r_sum / n).clamp(1e-12, 1.0 - 1e-12);
        if r_sum > 1e-12 {
            m_hi = samples.iter().zip(&r).map(|(x, w)| x * w).sum::<f64>() / r_sum;
        }
        if q_sum > 1e-12 {
            m_lo = samples
                .iter()
                .zip(&r)
                .map(|(x, w)| x * (1.0 - w))
                .sum::<f64>()
                / q_sum;
        }
        let ss: f64 = samples
            .iter()
            .zip(&r)
            .map(|(x, w)| w * (x - m_hi).powi(2) + (1.0 - w) * (x - m_lo).powi(2))
            .sum();
        sigma = (ss / n).sqrt().max(1e-6);
        if (ll - last_ll).abs() < tol * n {
            converged = true;
            break;
        }
        last_ll = ll;
    }
    // Bayesian information criterion guard: a second component must buy
    // more log-likelihood than its 2 extra parameters cost, otherwise
    // the data is unimodal and EM is splitting one cluster in half
    // (which also makes it creep past the iteration cap).
    let single_ll: f64 = samples
        .iter()
        .map(|&x| {
            let z = (x - mean) / overall_std;
            -0.5 * z * z - (overall_std * (2.0 * std::f64::consts::PI).sqrt()).ln()
        })
        .sum();
    let bic_justified = last_ll - single_ll > n.ln();
    if !converged {
        if !bic_justified {
            return Ok(FittedMixture {
                active_prob: 1.0,
                active_mean: mean,
                idle_mean: mean,
                sigma: overall_std,
                collapsed: true,
            });
        }
        return Err(Error::EmNonConvergence {
            device,
            detail: format!(
                "log-likelihood still moving after {max_iter} iterations \
                 (p={p:.4}, means={m_lo:.2}/{m_hi:.2}, sigma={sigma:.3})"
            ),
        });
    }
    // order the components and detect collapse
    if m_hi < m_lo {
        std::mem::swap(&mut m_hi, &mut m_lo);
        p = 1.0 - p;
    }
    let collapsed = !bic_justified
        || (m_hi - m_lo) < 0.05 * overall_std.max(1.0)
        || p > 0.999
        || p < 0.001;
    if collapsed {
        return Ok(FittedMixture {
            active_prob: 1.0,
            active_mean: mean,
            idle_mean: mean,
            sigma: overall_std,
            collapsed: true,
        });
    }
    Ok(FittedMixture {
        active_prob: p,
        active_mean: m_hi,
        idle_mean: m_lo,
        sigma,
        collapsed: false,
    })
}

/// Estimate per-device mixture parameters from a nominal trace and the
/// attack scale from a trace recorded under attack.
pub fn fit_gcusum(nominal: &RawTrace, attack: &RawTrace) -> Result<Vec<MixtureParams>> {
    if nominal.is_empty() || attack.is_empty() {
        return Err(Error::EmptyTrace);
    }
    if nominal.device_count() != attack.device_count() {
        return Err(Error::DimensionMismatch {
            expected: nominal.device_count(),
            got: attack.device_count(),
        });
    }
    (0..nominal.device_count())
        .map(|j| {
            let col = |trace: &RawTrace| -> Vec<f64> {
                trace.counts.iter().map(|r| r[j] as f64).collect()
            };
            let f0 = fit_mixture(&col(nominal), j)?;
            let f1 = fit_mixture(&col(attack), j)?;
            // attack scale from the ratio of matched component means
            let ratio = if f0.collapsed || f1.collapsed {
                let m0 = mean_of(&col(nominal));
                let m1 = mean_of(&col(attack));
                if m0 > 1e-9 {
                    m1 / m0
                } else {
                    1.0
                }
            } else {
                let hi = if f0.active_mean > 1e-9 {
                    f1.active_mean / f0.active_mean
                } else {
                    1.0
                };
                let lo = if f0.idle_mean > 1e-9 {
                    f1.idle_mean / f0.idle_mean
                } else {
                    hi
                };
                0.5 * (hi + lo)
            };
            Ok(MixtureParams {
                active_prob: f0.active_prob,
                active_mean: f0.active_mean,
                idle_mean: f0.idle_mean,
                sigma: f0.sigma,
                attack_scale: (ratio - 1.0).max(0.0),
            })
        })
        .collect()
}

fn mean_of(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Raw-rate filtering outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub alarm_time: Option<u64>,
    /// Devices that exceeded their threshold at any step.
    pub flagged: Vec<usize>,
    /// Per-device max exceedance ratio `count / threshold`, usable as a
    /// ranking score.
    pub scores: Vec<f64>,
}

/// Alarm at the first step any device's raw count exceeds its
/// per-device threshold.
pub fn filter_detector(trace: &RawTrace, thresholds: &[f64]) -> Result<FilterOutcome> {
    if thresholds.len() != trace.device_count() {
        return Err(Error::DimensionMismatch {
            expected: trace.device_count(),
            got: thresholds.len(),
        });
    }
    if thresholds.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::InvalidConfig("thresholds must be positive".into()));
    }
    let d = trace.device_count();
    let mut alarm_time = None;
    let mut exceeded = vec![false; d];
    let mut scores = vec![0.0f64; d];
    for (t, row) in trace.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            let ratio = c as f64 / thresholds[j];
            scores[j] = scores[j].max(ratio);
            if ratio > 1.0 {
                exceeded[j] = true;
                alarm_time.get_or_insert(t as u64);
            }
        }
    }
    Ok(FilterOutcome {
        alarm_time,
        flagged: exceeded
            .iter()
            .enumerate()
            .filter(|(_, &e)| e)
            .map(|(j, _)| j)
            .collect(),
        scores,
    })
}

/// Per-device upper-percentile thresholds from a nominal trace.
pub fn percentile_thresholds(nominal: &RawTrace, percentile: f64) -> Vec<f64> {
    let d = nominal.device_count();
    (0..d)
        .map(|j| {
            let mut col: Vec<u64> = nominal.counts.iter().map(|r| r[j]).collect();
            col.sort_unstable();
            let rank = ((percentile / 100.0).clamp(0.0, 1.0) * (col.len() - 1) as f64).round()
                as usize;
            (col[rank] as f64).max(0.5)
        })
        .collect()
}

/// Fixed-width histogram over `[0, hi)` with add-one smoothing applied
/// when converting to probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub hi: f64,
    pub bins: Vec<u64>,
}

impl Histogram {
    pub fn new(hi: f64, bin_count: usize) -> Result<Self> {
        if bin_count < 2 || !(hi > 0.0) {
            return Err(Error::InvalidConfig(
                "histogram needs hi > 0 and >= 2 bins".into(),
            ));
        }
        Ok(Self {
            hi,
            bins: vec![0; bin_count],
        })
    }

    pub fn add(&mut self, value: f64) {
        let b = ((value / self.hi) * self.bins.len() as f64).floor() as usize;
        let b = b.min(self.bins.len() - 1);
        self.bins[b] += 1;
    }

    /// Add-one smoothed probability vector; never zero in any bin.
    pub fn probabilities(&self) -> Vec<f64> {
        let total: u64 = self.bins.iter().sum::<u64>() + self.bins.len() as u64;
        self.bins
            .iter()
            .map(|&c| (c + 1) as f64 / total as f64)
            .collect()
    }
}

/// Renyi divergence of order `order` between two probability vectors
/// over shared bins: `1/(order-1) * ln sum p_i^order q_i^(1-order)`.
pub fn renyi_divergence(p: &[f64], q: &[f64], order: f64) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    let sum: f64 = p
        .iter()
        .zip(q)
        .map(|(&pi, &qi)| pi.powf(order) * qi.powf(1.0 - order))
        .sum();
    sum.ln() / (order - 1.0)
}

/// KL divergence, the order -> 1 limit of the Renyi divergence. Test
/// oracle for the limit cross-check.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenyiConfig {
    pub window_len: usize,
    pub order: f64,
    pub bin_count: usize,
    pub threshold: f64,
}

impl Default for RenyiConfig {
    fn default() -> Self {
        Self {
            window_len: 30,
            order: 2.0,
            bin_count: 20,
            threshold: 1.0,
        }
    }
}

impl RenyiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_len < 2 || self.bin_count < 2 {
            return Err(Error::InvalidConfig(
                "renyi window must be >= 2 and bins >= 2".into(),
            ));
        }
        if !(self.order > 0.0) || (self.order - 1.0).abs() < 1e-12 {
            return Err(Error::InvalidConfig(
                "renyi order must be > 0 and != 1".into(),
            ));
        }
        Ok(())
    }
}

/// Windowed information-metric detector over one node's aggregate
/// per-step packet count. Simplified stand-in for the referenced
/// entropy-metric method: divergence between the windowed empirical
/// histogram and the training histogram.
#[derive(Debug, Clone)]
pub struct RenyiDetector {
    cfg: RenyiConfig,
    reference: Vec<f64>,
    hi: f64,
    bin_count: usize,
    window: VecDeque<f64>,
}

impl RenyiDetector {
    /// Build from nominal aggregate counts; bins cover
    /// `[0, 1.5 * nominal max)`.
    pub fn from_training(nominal_aggregate: &[f64], cfg: RenyiConfig) -> Result<Self> {
        cfg.validate()?;
        if nominal_aggregate.is_empty() {
            return Err(Error::EmptyTrace);
        }
        let max = nominal_aggregate.iter().cloned().fold(0.0, f64::max);
        let hi = (1.5 * max).max(1.0);
        let mut hist = Histogram::new(hi, cfg.bin_count)?;
        for &v in nominal_aggregate {
            hist.add(v);
        }
        Ok(Self {
            reference: hist.probabilities(),
            hi,
            bin_count: cfg.bin_count,
            window: VecDeque::with_capacity(cfg.window_len),
            cfg,
        })
    }

    /// Push one aggregate count; once the window is full, returns the
    /// divergence and whether it reaches the threshold.
    pub fn step(&mut self, aggregate: f64) -> Option<(f64, bool)> {
        if self.window.len() == self.cfg.window_len {
            self.window.pop_front();
        }
        self.window.push_back(aggregate);
        if self.window.len() < self.cfg.window_len {
            return None;
        }
        let mut hist = Histogram::new(self.hi, self.bin_count).expect("validated config");
        for &v in &self.window {
            hist.add(v);
        }
        let div = renyi_divergence(&hist.probabilities(), &self.reference, self.cfg.order);
        Some((div, div >= self.cfg.threshold))
    }

    pub fn reset(&mut self) {
        self.window.clear();
    }
}

/// Recover per-device mixture parameters on synthetic data and check
/// the recovery bands. Shared by the unit tests and the acceptance
/// suite.
pub fn mixture_recovery_check(sample_seed: u64) -> Result<(f64, f64, f64)> {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let truth = (0.25, 25.0, 5.0); // (p, active mean, idle mean), sigma 5
    let n = 100_000;
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let active = rand::Rng::gen::<f64>(&mut rng) < truth.0;
        let mean = if active { truth.1 } else { truth.2 };
        let z: f64 = rand::Rng::sample(&mut rng, rand_distr::StandardNormal);
        samples.push((mean + 5.0 * z).round().max(0.0));
    }
    samples.shuffle(&mut rng);
    let fit = fit_mixture(&samples, 0)?;
    Ok((
        (fit.active_prob - truth.0).abs(),
        (fit.active_mean - truth.1).abs(),
        (fit.idle_mean - truth.2).abs(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn camera_params() -> MixtureParams {
        MixtureParams {
            active_prob: 1.0,
            active_mean: 80.0,
            idle_mean: 0.0,
            sigma: 5.0,
            attack_scale: 0.10,
        }
    }

    #[test]
    fn llr_zero_when_distributions_match() {
        let mut p = camera_params();
        p.attack_scale = 0.0;
        for c in [0.0, 10.0, 80.0, 200.0] {
            assert_relative_eq!(mixture_llr(c, &p), 0.0);
        }
    }

    #[test]
    fn llr_positive_far_above_both_means() {
        let p = MixtureParams {
            active_prob: 0.25,
            active_mean: 25.0,
            idle_mean: 5.0,
            sigma: 5.0,
            attack_scale: 0.10,
        };
        assert!(mixture_llr(60.0, &p) > 0.0);
    }

    #[test]
    fn llr_single_gaussian_hand_case() {
        // p=1, mean 80 -> 88, sigma 5, count 90:
        // ((90-80)^2 - (90-88)^2) / (2*25) = 96/50 = 1.92
        let p = camera_params();
        assert_relative_eq!(mixture_llr(90.0, &p), 1.92, epsilon = 1e-9);
    }

    #[test]
    fn cusum_step_clamps() {
        let s = cusum_step(CusumState { s: 0.0 }, -1.0);
        assert_eq!(s.s, 0.0);
        let s = cusum_step(CusumState { s: 2.0 }, 3.0);
        assert_eq!(s.s, 5.0);
        let s = cusum_step(CusumState { s: 0.5 }, -0.5);
        assert_eq!(s.s, 0.0);
    }

    #[test]
    fn cooperative_cusum_degeneracies() {
        let p = camera_params();
        let mut coop = CooperativeCusum::new(vec![vec![p.clone()]]);
        let mut single = CusumState::default();
        for c in [85u64, 90, 70, 95] {
            let total = coop.step(&[vec![c]]).unwrap();
            single = cusum_step(single, mixture_llr(c as f64, &p));
            assert_relative_eq!(total, single.s, epsilon = 1e-12);
        }
    }

    #[test]
    fn cooperative_cusum_zero_statistics() {
        let mut p = camera_params();
        p.attack_scale = 0.0; // identical models -> LLR 0 -> statistic 0
        let mut coop = CooperativeCusum::new(vec![vec![p.clone(), p]]);
        assert_eq!(coop.step(&[vec![80, 82]]).unwrap(), 0.0);
    }

    #[test]
    fn mixture_recovery_within_bands() {
        let (dp, dhi, dlo) = mixture_recovery_check(1).unwrap();
        assert!(dp < 0.05, "p error {dp}");
        assert!(dhi < 0.5, "active mean error {dhi}");
        assert!(dlo < 0.5, "idle mean error {dlo}");
    }

    #[test]
    fn single_state_device_collapses() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let samples: Vec<f64> = (0..5000)
            .map(|_| {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                (80.0 + 5.0 * z).round()
            })
            .collect();
        let fit = fit_mixture(&samples, 0).unwrap();
        assert!(fit.collapsed);
        assert_relative_eq!(fit.active_prob, 1.0);
        assert!((fit.active_mean - 80.0).abs() < 0.5);
    }

    #[test]
    fn gcusum_empty_attack_trace_errors() {
        // RawTrace can't be constructed empty, so exercise via len check
        let nominal = RawTrace::new(vec!["a".into()], vec![vec![5], vec![6]]).unwrap();
        let attack = RawTrace {
            device_ids: vec!["a".into()],
            counts: vec![],
        };
        assert!(matches!(
            fit_gcusum(&nominal, &attack),
            Err(Error::EmptyTrace)
        ));
    }

    #[test]
    fn filter_detector_basics() {
        let trace = RawTrace::new(
            vec!["a".into(), "b".into()],
            vec![vec![1, 0], vec![3, 0], vec![9, 2]],
        )
        .unwrap();
        // threshold above the global max: never alarms
        let out = filter_detector(&trace, &[100.0, 100.0]).unwrap();
        assert_eq!(out.alarm_time, None);
        assert!(out.flagged.is_empty());
        // threshold 0.5 on integer counts: alarms at the first nonzero
        let out = filter_detector(&trace, &[0.5, 0.5]).unwrap();
        assert_eq!(out.alarm_time, Some(0));
        assert_eq!(out.flagged, vec![0, 1]);
    }

    #[test]
    fn renyi_zero_for_identical_distributions() {
        let cfg = RenyiConfig {
            window_len: 4,
            order: 2.0,
            bin_count: 4,
            threshold: 10.0,
        };
        // training data and the window hold the same values
        let data = [1.0, 5.0, 9.0, 13.0];
        let mut det = RenyiDetector::from_training(&data, cfg).unwrap();
        let mut last = None;
        for &v in &data {
            last = det.step(v);
        }
        let (div, alarm) = last.unwrap();
        assert!(div.abs() < 1e-9, "divergence {div}");
        assert!(!alarm);
    }

    #[test]
    fn renyi_order_near_one_matches_kl() {
        let p = [0.2, 0.5, 0.3];
        let q = [0.4, 0.4, 0.2];
        let kl = kl_divergence(&p, &q);
        let near = renyi_divergence(&p, &q, 1.0 + 1e-7);
        assert!((near - kl).abs() < 1e-6, "renyi {near} vs kl {kl}");
    }

    #[test]
    fn renyi_nonnegative_on_smoothed_histograms() {
        let cfg = RenyiConfig::default();
        let data: Vec<f64> = (0..200).map(|i| (i % 40) as f64).collect();
        let mut det = RenyiDetector::from_training(&data, cfg).unwrap();
        for i in 0..100 {
            if let Some((div, _)) = det.step((i % 37) as f64) {
                assert!(div >= -1e-12);
            }
        }
    }
}
