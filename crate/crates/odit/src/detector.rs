//! Core single-node detector: train a nonparametric model from
//! attack-free data, then turn each observation into anomaly evidence
//! and accumulate it with a CUSUM-style recursion.
//!
//! Training: split the nominal data into two subsets, compute the kNN
//! distance of every first-subset point against the second subset, and
//! keep an upper order statistic of those distances as the baseline
//! scale. Testing: the evidence for observation `x` is
//! `d * (ln L_t - ln baseline)` where `L_t` is the kNN distance of `x`
//! to the stored reference subset. A legacy mode using the plain
//! difference of total edge lengths is kept for comparison.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::{Error, Result};

/// Default history retention, sized for a 3600-step detection horizon
/// with an order-of-magnitude margin.
pub const DEFAULT_HISTORY_CAP: usize = 36_000;

/// Raw per-device packet counts, one row per time step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTrace {
    pub device_ids: Vec<String>,
    /// `counts[t][j]` = packets from device `j` during step `t`.
    pub counts: Vec<Vec<u64>>,
}

impl RawTrace {
    pub fn new(device_ids: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        if counts.is_empty() || device_ids.is_empty() {
            return Err(Error::EmptyTrace);
        }
        let d = device_ids.len();
        for row in &counts {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: row.len(),
                });
            }
        }
        let mut ids = device_ids.clone();
        ids.sort();
        ids.dedup();
        if ids.len() != device_ids.len() {
            return Err(Error::InvalidConfig("duplicate device ids".into()));
        }
        Ok(Self { device_ids, counts })
    }

    pub fn device_count(&self) -> usize {
        self.device_ids.len()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// Per-device normalization constants (training-trace maxima).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationMap(pub Vec<f64>);

impl NormalizationMap {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// One time step of normalized per-device packet counts.
///
/// Values are nominally in `[0, 1]` but can exceed 1 under attack;
/// overshoot is the signal and is never clipped.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationVector {
    pub values: Vec<f64>,
    pub time_index: u64,
}

impl ObservationVector {
    pub fn new(values: Vec<f64>, time_index: u64) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidConfig(
                "observation entries must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { values, time_index })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvidenceMode {
    /// `D_t = d (ln L_t - ln baseline)`, the journal form.
    LogRatio,
    /// `D_t = L_t - L_(M)`, the earlier GEM-style form.
    LegacyGem,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Neighbor order of the kNN distance.
    pub k: usize,
    /// Significance level of the baseline order statistic.
    pub alpha: f64,
    /// First training-partition size (percentile sample).
    pub m1: usize,
    /// Second training-partition size (reference set).
    pub m2: usize,
    /// Alarm threshold.
    pub h: f64,
    /// Seed for the training split.
    pub seed: u64,
    pub evidence_mode: EvidenceMode,
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.m2 {
            return Err(Error::InvalidConfig(format!(
                "k must satisfy 1 <= k <= m2 (k={}, m2={})",
                self.k, self.m2
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must be in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.m1 == 0 {
            return Err(Error::InvalidConfig("m1 must be positive".into()));
        }
        if !(self.h > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "threshold h must be positive, got {}",
                self.h
            )));
        }
        Ok(())
    }
}

/// Parameters of the legacy GEM evidence mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegacyGemConfig {
    pub n1: usize,
    pub n2: usize,
    /// Graph size M: the number of lowest-total-edge-length points kept.
    pub m_graph: usize,
    pub k: usize,
    /// Number of trailing neighbor edges summed (neighbors k-s+1 .. k).
    pub s: usize,
    /// Power applied to each edge length.
    pub gamma: f64,
}

impl LegacyGemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_graph == 0 || self.m_graph > self.n1 {
            return Err(Error::InvalidConfig(format!(
                "m_graph must satisfy 1 <= M <= n1 (M={}, n1={})",
                self.m_graph, self.n1
            )));
        }
        if self.s == 0 || self.s > self.k {
            return Err(Error::InvalidConfig(format!(
                "s must satisfy 1 <= s <= k (s={}, k={})",
                self.s, self.k
            )));
        }
        if self.k > self.n2 {
            return Err(Error::InvalidConfig(format!(
                "k must not exceed n2 (k={}, n2={})",
                self.k, self.n2
            )));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidConfig("gamma must be positive".into()));
        }
        Ok(())
    }
}

/// Trained detector artifact. Immutable after training; safe to share
/// across concurrent readers.
#[derive(Debug, Clone, PartialEq)]
pub struct OditModel {
    /// Second training partition, used as the reference set at test time.
    pub reference_set: Vec<ObservationVector>,
    /// Upper order statistic of training kNN distances (LogRatio mode)
    /// or the boundary total edge length L_(M) (LegacyGem mode).
    pub baseline_stat: f64,
    pub normalization: NormalizationMap,
    pub config: DetectorConfig,
    pub legacy: Option<LegacyGemConfig>,
    pub d: usize,
}

/// Per-step output of the evidence computation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceResult {
    /// Anomaly evidence added to the running statistic.
    pub d_t: f64,
    /// kNN distance of the test point (LogRatio) or total edge length
    /// (LegacyGem).
    pub l_t: f64,
    /// Signed per-device difference to the k-th nearest reference point.
    pub y_t: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub t: u64,
    pub y: Vec<f64>,
    pub s: f64,
}

/// Running statistic for one node stream. Single-owner mutable.
#[derive(Debug, Clone)]
pub struct DetectorState {
    pub s: f64,
    pub t: u64,
    /// Most recent step at which `s` was zero.
    pub last_zero: u64,
    history: VecDeque<HistoryEntry>,
    cap: usize,
}

impl Default for DetectorState {
    fn default() -> Self {
        Self::with_capacity(DEFAULT_HISTORY_CAP)
    }
}

impl DetectorState {
    pub fn with_capacity(cap: usize) -> Self {
        Self {
            s: 0.0,
            t: 0,
            last_zero: 0,
            history: VecDeque::new(),
            cap,
        }
    }

    pub fn history(&self) -> impl Iterator<Item = &HistoryEntry> {
        self.history.iter()
    }

    /// CUSUM update: `s <- max(s + D_t, 0)`.
    pub fn update(&mut self, ev: &EvidenceResult) {
        self.t += 1;
        self.s = (self.s + ev.d_t).max(0.0);
        if self.s == 0.0 {
            self.last_zero = self.t;
        }
        if self.cap > 0 {
            if self.history.len() == self.cap {
                self.history.pop_front();
            }
            self.history.push_back(HistoryEntry {
                t: self.t,
                y: ev.y_t.clone(),
                s: self.s,
            });
        }
    }

    /// Stopping rule: alarm at the first time `s >= h` (inclusive).
    pub fn alarmed(&self, h: f64) -> bool {
        self.s >= h
    }
}

/// Per-device maxima over the training trace. Devices that never sent
/// a packet get constant 1 so they stay representable.
pub fn build_normalization(raw: &RawTrace) -> Result<NormalizationMap> {
    if raw.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let d = raw.device_count();
    let mut maxima = vec![0u64; d];
    for row in &raw.counts {
        for (m, &c) in maxima.iter_mut().zip(row) {
            *m = (*m).max(c);
        }
    }
    Ok(NormalizationMap(
        maxima
            .into_iter()
            .map(|m| if m == 0 { 1.0 } else { m as f64 })
            .collect(),
    ))
}

/// Divide counts by the per-device maxima. Values above 1 (attack
/// overshoot) are preserved.
pub fn normalize(raw: &RawTrace, map: &NormalizationMap) -> Result<Vec<ObservationVector>> {
    if map.len() != raw.device_count() {
        return Err(Error::DimensionMismatch {
            expected: raw.device_count(),
            got: map.len(),
        });
    }
    Ok(raw
        .counts
        .iter()
        .enumerate()
        .map(|(t, row)| ObservationVector {
            values: row
                .iter()
                .zip(&map.0)
                .map(|(&c, &m)| c as f64 / m)
                .collect(),
            time_index: t as u64,
        })
        .collect())
}

/// Uniformly random disjoint split into subsets of sizes `m1` and `m2`.
/// Deterministic given `seed`.
pub fn split_training(
    data: &[ObservationVector],
    m1: usize,
    m2: usize,
    split_seed: u64,
) -> Result<(Vec<ObservationVector>, Vec<ObservationVector>)> {
    if data.len() < m1 + m2 {
        return Err(Error::InsufficientData {
            needed: m1 + m2,
            have: data.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(split_seed, 0));
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut rng);
    let part1 = idx[..m1].iter().map(|&i| data[i].clone()).collect();
    let part2 = idx[m1..m1 + m2].iter().map(|&i| data[i].clone()).collect();
    Ok((part1, part2))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The `k` nearest reference points, ascending by (distance, index).
/// Ties break toward the lower reference index; duplicates count as
/// distinct neighbors.
pub(crate) fn knn_neighbors(
    point: &[f64],
    refs: &[ObservationVector],
    k: usize,
) -> Result<Vec<(f64, usize)>> {
    if refs.len() < k || k == 0 {
        return Err(Error::InsufficientReferences {
            k,
            have: refs.len(),
        });
    }
    let mut dists: Vec<(f64, usize)> = refs
        .iter()
        .enumerate()
        .map(|(i, r)| (sq_dist(point, &r.values), i))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| {
        a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1))
    };
    if k < dists.len() {
        dists.select_nth_unstable_by(k - 1, cmp);
        dists.truncate(k);
    }
    dists.sort_unstable_by(cmp);
    Ok(dists.into_iter().map(|(d2, i)| (d2.sqrt(), i)).collect())
}

/// Euclidean distance to the k-th closest reference point, plus the
/// index of that point.
pub fn knn_distance(
    point: &ObservationVector,
    refs: &[ObservationVector],
    k: usize,
) -> Result<(f64, usize)> {
    let nn = knn_neighbors(&point.values, refs, k)?;
    Ok(nn[k - 1])
}

/// Percentile rank of the baseline order statistic:
/// `min(M1, floor((1 - alpha) * M1) + 1)`, 1-based over ascending
/// distances.
pub(crate) fn percentile_rank(m1: usize, alpha: f64) -> usize {
    (((1.0 - alpha) * m1 as f64).floor() as usize + 1).min(m1)
}

/// Train the detector in LogRatio mode.
pub fn train(
    data: &[ObservationVector],
    normalization: NormalizationMap,
    cfg: DetectorConfig,
) -> Result<OditModel> {
    cfg.validate()?;
    let (part1, part2) = split_training(data, cfg.m1, cfg.m2, cfg.seed)?;
    let d = part2[0].dim();
    let mut dists: Vec<f64> = part1
        .iter()
        .map(|p| knn_distance(p, &part2, cfg.k).map(|(l, _)| l))
        .collect::<Result<_>>()?;
    dists.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let baseline_stat = dists[percentile_rank(cfg.m1, cfg.alpha) - 1];
    if baseline_stat <= 0.0 {
        return Err(Error::DegenerateBaseline);
    }
    Ok(OditModel {
        reference_set: part2,
        baseline_stat,
        normalization,
        config: cfg,
        legacy: None,
        d,
    })
}

/// Total edge length of `point` with respect to `refs`: the sum of the
/// gamma-powered distances to its (k-s+1)..k-th nearest neighbors.
pub fn total_edge_length(
    point: &[f64],
    refs: &[ObservationVector],
    gem: &LegacyGemConfig,
) -> Result<f64> {
    let nn = knn_neighbors(point, refs, gem.k)?;
    Ok(nn[gem.k - gem.s..gem.k]
        .iter()
        .map(|(dist, _)| dist.powf(gem.gamma))
        .sum())
}

/// Train the detector in LegacyGem mode: keep the `m_graph` first-subset
/// points with the smallest total edge length; the baseline is the
/// largest kept value (the boundary point).
pub fn train_legacy(
    data: &[ObservationVector],
    normalization: NormalizationMap,
    cfg: DetectorConfig,
    gem: LegacyGemConfig,
) -> Result<OditModel> {
    gem.validate()?;
    if !(cfg.h > 0.0) {
        return Err(Error::InvalidConfig("threshold h must be positive".into()));
    }
    let (part1, part2) = split_training(data, gem.n1, gem.n2, cfg.seed)?;
    let d = part2[0].dim();
    let mut lengths: Vec<f64> = part1
        .iter()
        .map(|p| total_edge_length(&p.values, &part2, &gem))
        .collect::<Result<_>>()?;
    lengths.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let baseline_stat = lengths[gem.m_graph - 1];
    if baseline_stat <= 0.0 {
        return Err(Error::DegenerateBaseline);
    }
    Ok(OditModel {
        reference_set: part2,
        baseline_stat,
        normalization,
        config: DetectorConfig {
            evidence_mode: EvidenceMode::LegacyGem,
            ..cfg
        },
        legacy: Some(gem),
        d,
    })
}

impl OditModel {
    /// Finite stand-in for `-inf` when the test point coincides with a
    /// reference point in LogRatio mode. The clamp at zero makes the
    /// exact value immaterial.
    pub fn neg_cap(&self) -> f64 {
        -10.0 * self.d as f64 * self.baseline_stat.ln().abs() - 10.0
    }

    /// Per-step anomaly evidence for one observation.
    pub fn evidence(&self, x: &ObservationVector) -> Result<EvidenceResult> {
        if x.dim() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: x.dim(),
            });
        }
        match self.config.evidence_mode {
            EvidenceMode::LogRatio => {
                let (l_t, kth) = knn_distance(x, &self.reference_set, self.config.k)?;
                let y_t = diff(&x.values, &self.reference_set[kth].values);
                let d_t = if l_t == 0.0 {
                    self.neg_cap()
                } else {
                    self.d as f64 * (l_t.ln() - self.baseline_stat.ln())
                };
                Ok(EvidenceResult { d_t, l_t, y_t })
            }
            EvidenceMode::LegacyGem => {
                let gem = self
                    .legacy
                    .as_ref()
                    .ok_or_else(|| Error::InvalidConfig("legacy config missing".into()))?;
                let nn = knn_neighbors(&x.values, &self.reference_set, gem.k)?;
                let l_t: f64 = nn[gem.k - gem.s..gem.k]
                    .iter()
                    .map(|(dist, _)| dist.powf(gem.gamma))
                    .sum();
                let kth = nn[gem.k - 1].1;
                let y_t = diff(&x.values, &self.reference_set[kth].values);
                Ok(EvidenceResult {
                    d_t: l_t - self.baseline_stat,
                    l_t,
                    y_t,
                })
            }
        }
    }

    /// Normalize a raw count row with the model's stored constants.
    pub fn normalize_row(&self, row: &[u64], t: u64) -> Result<ObservationVector> {
        if row.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: row.len(),
            });
        }
        Ok(ObservationVector {
            values: row
                .iter()
                .zip(&self.normalization.0)
                .map(|(&c, &m)| c as f64 / m)
                .collect(),
            time_index: t,
        })
    }
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Geometric grid of alarm-threshold candidates used by calibration.
pub fn threshold_grid() -> Vec<f64> {
    (0..25).map(|i| 0.0625 * f64::powi(2.0, i)).collect()
}

/// Pick the smallest threshold from the geometric candidate grid whose
/// Monte-Carlo false-alarm probability over `horizon` steps of
/// attack-free data is at most `target_fpr`.
///
/// Each trial draws `horizon` observations with replacement from
/// `nominal` and replays the detector; deterministic given `cal_seed`.
pub fn calibrate_threshold(
    model: &OditModel,
    nominal: &[ObservationVector],
    target_fpr: f64,
    horizon: usize,
    trials: usize,
    cal_seed: u64,
) -> Result<f64> {
    if !(target_fpr > 0.0 && target_fpr <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "target_fpr must be in (0, 1], got {target_fpr}"
        )));
    }
    if trials == 0 {
        return Err(Error::InvalidConfig("trials must be >= 1".into()));
    }
    if nominal.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let maxima = attack_free_maxima(model, nominal, horizon, trials, cal_seed)?;
    let total = trials as f64;
    for h in threshold_grid() {
        let fpr = maxima.iter().filter(|&&m| m >= h).count() as f64 / total;
        if fpr <= target_fpr {
            return Ok(h);
        }
    }
    let top = *threshold_grid().last().unwrap();
    let best = maxima.iter().filter(|&&m| m >= top).count() as f64 / total;
    Err(Error::CalibrationFailed {
        target: target_fpr,
        best,
    })
}

/// Per-trial maximum of the running statistic over attack-free replays.
/// Shared by calibration and the FPR-validation tests.
pub fn attack_free_maxima(
    model: &OditModel,
    nominal: &[ObservationVector],
    horizon: usize,
    trials: usize,
    cal_seed: u64,
) -> Result<Vec<f64>> {
    (0..trials)
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cal_seed, trial as u64));
            let mut state = DetectorState::with_capacity(0);
            let mut max_s: f64 = 0.0;
            for _ in 0..horizon {
                let x = &nominal[rng.gen_range(0..nominal.len())];
                let ev = model.evidence(x)?;
                state.update(&ev);
                max_s = max_s.max(state.s);
            }
            Ok(max_s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn obs(values: &[f64]) -> ObservationVector {
        ObservationVector {
            values: values.to_vec(),
            time_index: 0,
        }
    }

    fn cfg() -> DetectorConfig {
        DetectorConfig {
            k: 1,
            alpha: 0.2,
            m1: 5,
            m2: 10,
            h: 10.0,
            seed: 7,
            evidence_mode: EvidenceMode::LogRatio,
        }
    }

    #[test]
    fn normalization_takes_columnwise_max() {
        let raw = RawTrace::new(
            vec!["a".into(), "b".into()],
            vec![vec![1, 10], vec![4, 2]],
        )
        .unwrap();
        let map = build_normalization(&raw).unwrap();
        assert_eq!(map.0, vec![4.0, 10.0]);
    }

    #[test]
    fn normalization_single_column() {
        let raw = RawTrace::new(vec!["a".into()], vec![vec![3], vec![5], vec![2]]).unwrap();
        assert_eq!(build_normalization(&raw).unwrap().0, vec![5.0]);
    }

    #[test]
    fn all_zero_column_falls_back_to_one() {
        let raw = RawTrace::new(vec!["a".into()], vec![vec![0], vec![0], vec![0]]).unwrap();
        assert_eq!(build_normalization(&raw).unwrap().0, vec![1.0]);
    }

    #[test]
    fn normalize_preserves_overshoot() {
        let map = NormalizationMap(vec![5.0]);
        let raw = RawTrace::new(vec!["a".into()], vec![vec![5], vec![0], vec![8]]).unwrap();
        let obs = normalize(&raw, &map).unwrap();
        assert_eq!(obs[0].values, vec![1.0]);
        assert_eq!(obs[1].values, vec![0.0]);
        assert_eq!(obs[2].values, vec![1.6]);
    }

    #[test]
    fn normalize_rejects_dimension_mismatch() {
        let map = NormalizationMap(vec![5.0, 1.0]);
        let raw = RawTrace::new(vec!["a".into()], vec![vec![5]]).unwrap();
        assert!(matches!(
            normalize(&raw, &map),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let data: Vec<_> = (0..15).map(|i| obs(&[i as f64])).collect();
        let (p1, p2) = split_training(&data, 5, 10, 42).unwrap();
        assert_eq!((p1.len(), p2.len()), (5, 10));
        let (q1, q2) = split_training(&data, 5, 10, 42).unwrap();
        assert_eq!(p1, q1);
        assert_eq!(p2, q2);
        // disjoint
        for a in &p1 {
            assert!(!p2.contains(a));
        }
    }

    #[test]
    fn split_rejects_insufficient_data() {
        let data: Vec<_> = (0..10).map(|i| obs(&[i as f64])).collect();
        assert!(matches!(
            split_training(&data, 5, 10, 0),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn knn_coincident_point_has_zero_distance() {
        let refs = vec![obs(&[0.0, 0.0]), obs(&[1.0, 0.0]), obs(&[0.0, 1.0])];
        let (l, idx) = knn_distance(&obs(&[0.0, 0.0]), &refs, 1).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(idx, 0);
    }

    #[test]
    fn knn_ties_break_by_reference_index() {
        let refs = vec![obs(&[1.0, 0.0]), obs(&[0.0, 1.0]), obs(&[3.0, 0.0])];
        let (l, idx) = knn_distance(&obs(&[0.0, 0.0]), &refs, 2).unwrap();
        assert_eq!(l, 1.0);
        assert_eq!(idx, 1); // second of the two unit-distance neighbors
    }

    #[test]
    fn knn_rejects_small_reference_set() {
        let refs = vec![obs(&[1.0])];
        assert!(matches!(
            knn_distance(&obs(&[0.0]), &refs, 2),
            Err(Error::InsufficientReferences { .. })
        ));
    }

    #[test]
    fn knn_matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let refs: Vec<_> = (0..50)
            .map(|_| obs(&[rng.gen::<f64>(), rng.gen::<f64>()]))
            .collect();
        for _ in 0..20 {
            let p = obs(&[rng.gen::<f64>(), rng.gen::<f64>()]);
            let (l, _) = knn_distance(&p, &refs, 3).unwrap();
            // oracle: sort all distances, take the 3rd smallest
            let mut all: Vec<f64> = refs
                .iter()
                .map(|r| sq_dist(&p.values, &r.values).sqrt())
                .collect();
            all.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
            assert_relative_eq!(l, all[2], epsilon = 1e-12);
        }
    }

    #[test]
    fn percentile_rank_rule() {
        assert_eq!(percentile_rank(5, 0.2), 5); // largest of 5
        assert_eq!(percentile_rank(100, 0.05), 96);
    }

    fn gaussian_data(n: usize, data_seed: u64) -> Vec<ObservationVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(data_seed);
        (0..n)
            .map(|i| {
                let v: Vec<f64> = (0..2)
                    .map(|_| {
                        (0.5 + 0.1 * rng.sample::<f64, _>(rand_distr::StandardNormal)).max(0.0)
                    })
                    .collect();
                ObservationVector {
                    values: v,
                    time_index: i as u64,
                }
            })
            .collect()
    }

    #[test]
    fn train_matches_independent_recomputation() {
        let data = gaussian_data(15, 3);
        let c = cfg();
        let model = train(&data, NormalizationMap(vec![1.0, 1.0]), c.clone()).unwrap();
        // independent oracle: redo steps 1-3 from the same split
        let (p1, p2) = split_training(&data, c.m1, c.m2, c.seed).unwrap();
        let mut dists: Vec<f64> = p1
            .iter()
            .map(|p| {
                let mut all: Vec<f64> = p2
                    .iter()
                    .map(|r| sq_dist(&p.values, &r.values).sqrt())
                    .collect();
                all.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
                all[c.k - 1]
            })
            .collect();
        dists.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        // alpha = 0.2, m1 = 5 -> the largest kNN distance
        assert_eq!(model.baseline_stat, dists[4]);
    }

    #[test]
    fn train_is_deterministic() {
        let data = gaussian_data(20, 9);
        let a = train(&data, NormalizationMap(vec![1.0, 1.0]), cfg()).unwrap();
        let b = train(&data, NormalizationMap(vec![1.0, 1.0]), cfg()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn train_rejects_duplicated_data() {
        let data: Vec<_> = (0..20).map(|_| obs(&[0.5, 0.5])).collect();
        assert!(matches!(
            train(&data, NormalizationMap(vec![1.0, 1.0]), cfg()),
            Err(Error::DegenerateBaseline)
        ));
    }

    #[test]
    fn legacy_single_term_reduces_to_kth_distance() {
        let data = gaussian_data(15, 5);
        let gem = LegacyGemConfig {
            n1: 5,
            n2: 10,
            m_graph: 4,
            k: 2,
            s: 1,
            gamma: 1.0,
        };
        let (p1, p2) = split_training(&data, 5, 10, cfg().seed).unwrap();
        for p in &p1 {
            let l = total_edge_length(&p.values, &p2, &gem).unwrap();
            let (kth, _) = knn_distance(p, &p2, 2).unwrap();
            assert_relative_eq!(l, kth, epsilon = 1e-12);
        }
    }

    #[test]
    fn legacy_baseline_is_mth_smallest_length() {
        let data = gaussian_data(15, 5);
        let gem = LegacyGemConfig {
            n1: 5,
            n2: 10,
            m_graph: 4,
            k: 2,
            s: 1,
            gamma: 1.0,
        };
        let model =
            train_legacy(&data, NormalizationMap(vec![1.0, 1.0]), cfg(), gem.clone()).unwrap();
        let (p1, p2) = split_training(&data, 5, 10, cfg().seed).unwrap();
        let mut lengths: Vec<f64> = p1
            .iter()
            .map(|p| total_edge_length(&p.values, &p2, &gem).unwrap())
            .collect();
        lengths.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(model.baseline_stat, lengths[3]);
    }

    #[test]
    fn legacy_squared_sum_on_hand_placed_points() {
        // refs on a line, point at origin: distances 1, 2, 3, 4 and a far one
        let refs = vec![
            obs(&[1.0, 0.0]),
            obs(&[2.0, 0.0]),
            obs(&[3.0, 0.0]),
            obs(&[4.0, 0.0]),
            obs(&[10.0, 0.0]),
        ];
        let gem = LegacyGemConfig {
            n1: 5,
            n2: 5,
            m_graph: 4,
            k: 2,
            s: 2,
            gamma: 2.0,
        };
        let l = total_edge_length(&[0.0, 0.0], &refs, &gem).unwrap();
        // |e_(1)|^2 + |e_(2)|^2 = 1 + 4
        assert_relative_eq!(l, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn logratio_evidence_values() {
        let data = gaussian_data(600, 11);
        let model = train(
            &data,
            NormalizationMap(vec![1.0, 1.0]),
            DetectorConfig {
                k: 2,
                alpha: 0.05,
                m1: 50,
                m2: 500,
                h: 10.0,
                seed: 1,
                evidence_mode: EvidenceMode::LogRatio,
            },
        )
        .unwrap();
        // l_t == baseline -> d_t == 0; l_t == e * baseline -> d_t == d
        let b = model.baseline_stat;
        let d = model.d as f64;
        assert_relative_eq!(d * ((b).ln() - b.ln()), 0.0);
        assert_relative_eq!(
            d * ((std::f64::consts::E * b).ln() - b.ln()),
            d,
            epsilon = 1e-9
        );
        // coincident test point gets the finite sentinel (k = 1 so the
        // nearest neighbor is the duplicate itself)
        let mut single = model.clone();
        single.config.k = 1;
        let coincident = single.reference_set[0].clone();
        let ev = single.evidence(&coincident).unwrap();
        assert_eq!(ev.l_t, 0.0);
        assert_eq!(ev.d_t, model.neg_cap());
        assert!(ev.d_t.is_finite());
    }

    #[test]
    fn evidence_y_norm_matches_l() {
        let data = gaussian_data(300, 13);
        let model = train(
            &data,
            NormalizationMap(vec![1.0, 1.0]),
            DetectorConfig {
                k: 2,
                alpha: 0.05,
                m1: 40,
                m2: 200,
                h: 10.0,
                seed: 1,
                evidence_mode: EvidenceMode::LogRatio,
            },
        )
        .unwrap();
        let ev = model.evidence(&obs(&[0.9, 0.1])).unwrap();
        let norm2: f64 = ev.y_t.iter().map(|y| y * y).sum();
        assert_relative_eq!(norm2, ev.l_t * ev.l_t, epsilon = 1e-10);
    }

    #[test]
    fn legacy_evidence_is_plain_difference() {
        let data = gaussian_data(20, 17);
        let gem = LegacyGemConfig {
            n1: 5,
            n2: 10,
            m_graph: 4,
            k: 2,
            s: 1,
            gamma: 1.0,
        };
        let model = train_legacy(&data, NormalizationMap(vec![1.0, 1.0]), cfg(), gem).unwrap();
        let ev = model.evidence(&obs(&[0.9, 0.9])).unwrap();
        assert_relative_eq!(ev.d_t, ev.l_t - model.baseline_stat, epsilon = 1e-12);
    }

    #[test]
    fn update_clamps_and_tracks_last_zero() {
        let mut st = DetectorState::with_capacity(8);
        let ev = |d_t: f64| EvidenceResult {
            d_t,
            l_t: 0.0,
            y_t: vec![],
        };
        st.update(&ev(-1.0));
        assert_eq!(st.s, 0.0);
        assert_eq!(st.last_zero, 1);
        st.update(&ev(2.0));
        st.update(&ev(3.0));
        assert_eq!(st.s, 5.0);
        assert_eq!(st.last_zero, 1);
        st.update(&ev(-4.5));
        st.update(&ev(-0.5));
        assert_eq!(st.s, 0.0);
        assert_eq!(st.last_zero, 5);
    }

    #[test]
    fn alarm_is_inclusive() {
        let mut st = DetectorState::with_capacity(0);
        st.s = 9.99;
        assert!(!st.alarmed(10.0));
        st.s = 10.0;
        assert!(st.alarmed(10.0));
    }

    #[test]
    fn history_cap_evicts_oldest() {
        let mut st = DetectorState::with_capacity(3);
        for i in 0..5 {
            st.update(&EvidenceResult {
                d_t: 1.0,
                l_t: 0.0,
                y_t: vec![i as f64],
            });
        }
        let ts: Vec<u64> = st.history().map(|e| e.t).collect();
        assert_eq!(ts, vec![3, 4, 5]);
    }

    #[test]
    fn calibration_target_one_returns_smallest_candidate() {
        let data = gaussian_data(200, 21);
        let model = train(
            &data,
            NormalizationMap(vec![1.0, 1.0]),
            DetectorConfig {
                k: 2,
                alpha: 0.2,
                m1: 20,
                m2: 100,
                h: 1.0,
                seed: 1,
                evidence_mode: EvidenceMode::LogRatio,
            },
        )
        .unwrap();
        let h = calibrate_threshold(&model, &data, 1.0, 20, 10, 99).unwrap();
        assert_eq!(h, threshold_grid()[0]);
    }

    #[test]
    fn calibrated_threshold_meets_target_on_fresh_run() {
        let data = gaussian_data(800, 23);
        let model = train(
            &data,
            NormalizationMap(vec![1.0, 1.0]),
            DetectorConfig {
                k: 2,
                alpha: 0.05,
                m1: 50,
                m2: 500,
                h: 1.0,
                seed: 1,
                evidence_mode: EvidenceMode::LogRatio,
            },
        )
        .unwrap();
        let h = calibrate_threshold(&model, &data, 0.05, 50, 400, 31).unwrap();
        // held-out validation with a different seed
        let maxima = attack_free_maxima(&model, &data, 50, 1000, 77).unwrap();
        let fpr = maxima.iter().filter(|&&m| m >= h).count() as f64 / 1000.0;
        assert!(fpr <= 0.10, "held-out FPR {fpr} too far above target");
    }
}
