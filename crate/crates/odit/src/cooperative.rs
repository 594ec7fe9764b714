//! Cooperative detection: each node advances one step, the center sums
//! the local statistics and applies the global stopping rule. Local
//! statistics are clamped at zero, so a clean node never delays the
//! global alarm.

use crate::{Error, Result};

/// Snapshot of all local statistics at one (shared) time index.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeStatistics {
    pub s: Vec<f64>,
    pub t: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalAlarm {
    pub alarmed: bool,
    pub alarm_time: Option<u64>,
    /// Per-node statistics at the alarm step, kept for mitigation.
    pub contributing: Vec<f64>,
}

/// Global statistic: the exact sum of the local statistics.
pub fn aggregate(stats: &NodeStatistics) -> Result<f64> {
    if stats.s.is_empty() {
        return Err(Error::EmptyHistory);
    }
    Ok(stats.s.iter().sum())
}

/// One synchronous step of the center: alarm iff the sum reaches `h`.
pub fn global_step(stats: &NodeStatistics, h: f64) -> Result<GlobalAlarm> {
    let total = aggregate(stats)?;
    let alarmed = total >= h;
    Ok(GlobalAlarm {
        alarmed,
        alarm_time: alarmed.then_some(stats.t),
        contributing: stats.s.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_sums_exactly() {
        let z = NodeStatistics {
            s: vec![0.0, 0.0, 0.0],
            t: 0,
        };
        assert_eq!(aggregate(&z).unwrap(), 0.0);
        let s = NodeStatistics {
            s: vec![1.5, 0.0, 2.5],
            t: 1,
        };
        assert_eq!(aggregate(&s).unwrap(), 4.0);
    }

    #[test]
    fn single_node_reduces_to_local() {
        let s = NodeStatistics { s: vec![3.2], t: 5 };
        assert_eq!(aggregate(&s).unwrap(), 3.2);
    }

    #[test]
    fn empty_statistics_error() {
        let s = NodeStatistics { s: vec![], t: 0 };
        assert!(aggregate(&s).is_err());
    }

    #[test]
    fn boundary_alarms_inclusive() {
        let s = NodeStatistics {
            s: vec![2.0, 3.0],
            t: 9,
        };
        let g = global_step(&s, 5.0).unwrap();
        assert!(g.alarmed);
        assert_eq!(g.alarm_time, Some(9));
        assert_eq!(g.contributing, vec![2.0, 3.0]);

        let s = NodeStatistics {
            s: vec![2.0, 2.0],
            t: 9,
        };
        let g = global_step(&s, 5.0).unwrap();
        assert!(!g.alarmed);
        assert_eq!(g.alarm_time, None);
    }

    #[test]
    fn sum_dominates_each_component() {
        // nonnegative locals: aggregate >= max component
        let s = NodeStatistics {
            s: vec![0.3, 4.1, 0.0, 2.2],
            t: 0,
        };
        let total = aggregate(&s).unwrap();
        let max = s.s.iter().cloned().fold(f64::MIN, f64::max);
        assert!(total >= max);
    }
}
