//! Post-alarm localization: estimate the attack onset from the global
//! statistic, average per-node statistics and per-device distance
//! components over the attack window, and flag nodes / devices against
//! thresholds. Pure computation over recorded histories.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoreKind {
    /// Signed per-device components: a rate increase scores positive,
    /// benign downward deviations score negative.
    Signed,
    /// Magnitude variant, kept for comparison.
    Magnitude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationConfig {
    pub theta1: f64,
    pub theta2: f64,
    pub score_kind: ScoreKind,
}

impl MitigationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta1.is_finite() && self.theta1 >= 0.0) || !(self.theta2 >= 0.0) {
            return Err(Error::InvalidConfig(
                "theta1 must be finite and >= 0, theta2 >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationReport {
    /// Estimated attack onset.
    pub onset: u64,
    /// Alarm time.
    pub alarm: u64,
    pub node_scores: Vec<f64>,
    /// `device_scores[n][j]` = time-averaged distance component for
    /// device `j` of node `n`.
    pub device_scores: Vec<Vec<f64>>,
    pub flagged_nodes: Vec<usize>,
    /// Block list of (node, device) pairs.
    pub flagged_devices: Vec<(usize, usize)>,
}

/// Onset estimate: one step after the last time the global statistic
/// was zero at or before the alarm. If the statistic never touched
/// zero in the retained window, fall back to the window start.
pub fn estimate_onset(global_s: &[(u64, f64)], alarm: u64) -> Result<u64> {
    if global_s.is_empty() {
        return Err(Error::EmptyHistory);
    }
    let last_zero = global_s
        .iter()
        .filter(|(t, s)| *t <= alarm && *s == 0.0)
        .map(|(t, _)| *t)
        .max();
    match last_zero {
        Some(t) => Ok(t + 1),
        None => {
            log::warn!("statistic never zero in retained window; onset falls back to window start");
            Ok(global_s[0].0)
        }
    }
}

fn window<'a, T>(
    history: &'a [(u64, T)],
    onset: u64,
    alarm: u64,
) -> Result<impl Iterator<Item = &'a T>> {
    // entries are in time order; coverage means the window endpoints
    // both fall inside the retained range
    let covered = matches!(
        (history.first(), history.last()),
        (Some((first, _)), Some((last, _))) if *first <= onset && *last >= alarm
    );
    if !covered {
        return Err(Error::HistoryGap {
            from: onset,
            to: alarm,
        });
    }
    Ok(history
        .iter()
        .filter(move |(t, _)| *t >= onset && *t <= alarm)
        .map(|(_, v)| v))
}

/// Time-averaged node statistic over `[onset, alarm]`.
pub fn node_score(history: &[(u64, f64)], onset: u64, alarm: u64) -> Result<f64> {
    let vals: Vec<f64> = window(history, onset, alarm)?.copied().collect();
    if vals.is_empty() {
        return Err(Error::HistoryGap {
            from: onset,
            to: alarm,
        });
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Time-averaged per-device distance components over `[onset, alarm]`.
pub fn device_score(
    history: &[(u64, Vec<f64>)],
    onset: u64,
    alarm: u64,
    kind: ScoreKind,
) -> Result<Vec<f64>> {
    let rows: Vec<&Vec<f64>> = window(history, onset, alarm)?.collect();
    if rows.is_empty() {
        return Err(Error::HistoryGap {
            from: onset,
            to: alarm,
        });
    }
    let d = rows[0].len();
    let mut sums = vec![0.0; d];
    for row in &rows {
        for (acc, &y) in sums.iter_mut().zip(row.iter()) {
            *acc += match kind {
                ScoreKind::Signed => y,
                ScoreKind::Magnitude => y.abs(),
            };
        }
    }
    let n = rows.len() as f64;
    Ok(sums.into_iter().map(|s| s / n).collect())
}

/// Flag node `n` iff its average statistic reaches `theta1`; flag
/// device `j` of a flagged node iff its average distance component
/// reaches `theta2`. Devices under unflagged nodes are never flagged.
pub fn identify(
    global_s: &[(u64, f64)],
    node_histories: &[Vec<(u64, f64)>],
    device_histories: &[Vec<(u64, Vec<f64>)>],
    alarm: u64,
    cfg: &MitigationConfig,
) -> Result<MitigationReport> {
    cfg.validate()?;
    let onset = estimate_onset(global_s, alarm)?;
    let mut node_scores = Vec::with_capacity(node_histories.len());
    let mut device_scores = Vec::with_capacity(node_histories.len());
    for (hist, dev_hist) in node_histories.iter().zip(device_histories) {
        node_scores.push(node_score(hist, onset, alarm)?);
        device_scores.push(device_score(dev_hist, onset, alarm, cfg.score_kind)?);
    }
    let flagged_nodes: Vec<usize> = node_scores
        .iter()
        .enumerate()
        .filter(|(_, s)| **s >= cfg.theta1)
        .map(|(n, _)| n)
        .collect();
    let mut flagged_devices = Vec::new();
    for &n in &flagged_nodes {
        for (j, &y) in device_scores[n].iter().enumerate() {
            if y >= cfg.theta2 {
                flagged_devices.push((n, j));
            }
        }
    }
    Ok(MitigationReport {
        onset,
        alarm,
        node_scores,
        device_scores,
        flagged_nodes,
        flagged_devices,
    })
}
