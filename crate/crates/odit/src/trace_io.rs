//! Trace serialization: long-form CSV `t,node,device,count` plus an
//! optional ground-truth JSON sidecar naming the compromised devices.
//!
//! Reading is strict: the header must match exactly, every (t, node,
//! device) cell must appear exactly once, and counts must be base-10
//! nonnegative integers. Violations report the 1-based line number.

use std::fs;
use std::path::Path;

use crate::detector::RawTrace;
use crate::sim::{GroundTruth, TrafficTrace};
use crate::{Error, Result};

const HEADER: &str = "t,node,device,count";

pub fn trace_to_csv(trace: &TrafficTrace) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for t in 0..trace.steps {
        for (n, node) in trace.nodes.iter().enumerate() {
            for (j, count) in node.counts[t].iter().enumerate() {
                out.push_str(&format!("{t},{n},{j},{count}\n"));
            }
        }
    }
    out
}

fn malformed(line: usize, msg: impl Into<String>) -> Error {
    Error::MalformedCsv {
        line,
        msg: msg.into(),
    }
}

fn parse_index(field: &str, name: &str, line: usize) -> Result<usize> {
    field
        .parse::<usize>()
        .map_err(|_| malformed(line, format!("{name} is not a nonnegative integer: {field:?}")))
}

/// Parse a long-form trace. Rows may arrive in any order but the
/// (t, node, device) grid must be complete and duplicate-free.
pub fn trace_from_csv(csv: &str) -> Result<TrafficTrace> {
    let mut lines = csv.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == HEADER => {}
        Some((_, h)) => {
            return Err(malformed(1, format!("expected header {HEADER:?}, got {h:?}")))
        }
        None => return Err(malformed(1, "empty input")),
    }

    let mut rows: Vec<(usize, usize, usize, u64, usize)> = Vec::new();
    let (mut max_t, mut max_node) = (0usize, 0usize);
    for (idx, raw_line) in lines {
        let line_no = idx + 1;
        let line = raw_line.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(malformed(line_no, format!("expected 4 fields, got {}", fields.len())));
        }
        let t = parse_index(fields[0], "t", line_no)?;
        let node = parse_index(fields[1], "node", line_no)?;
        let device = parse_index(fields[2], "device", line_no)?;
        let count = fields[3].parse::<u64>().map_err(|_| {
            malformed(
                line_no,
                format!("count is not a nonnegative integer: {:?}", fields[3]),
            )
        })?;
        max_t = max_t.max(t);
        max_node = max_node.max(node);
        rows.push((t, node, device, count, line_no));
    }
    if rows.is_empty() {
        return Err(Error::EmptyTrace);
    }

    let steps = max_t + 1;
    let node_count = max_node + 1;
    let mut device_counts = vec![0usize; node_count];
    for &(_, node, device, _, _) in &rows {
        device_counts[node] = device_counts[node].max(device + 1);
    }

    let mut grids: Vec<Vec<Vec<Option<u64>>>> = device_counts
        .iter()
        .map(|&dc| vec![vec![None; dc]; steps])
        .collect();
    for &(t, node, device, count, line_no) in &rows {
        let cell = &mut grids[node][t][device];
        if cell.is_some() {
            return Err(malformed(
                line_no,
                format!("duplicate cell t={t} node={node} device={device}"),
            ));
        }
        *cell = Some(count);
    }

    let mut nodes = Vec::with_capacity(node_count);
    for (n, grid) in grids.into_iter().enumerate() {
        let mut counts = Vec::with_capacity(steps);
        for (t, row) in grid.into_iter().enumerate() {
            let row: Option<Vec<u64>> = row.into_iter().collect();
            match row {
                Some(r) => counts.push(r),
                None => {
                    return Err(malformed(
                        0,
                        format!("missing cell at t={t} node={n}"),
                    ))
                }
            }
        }
        let ids = (0..device_counts[n]).map(|j| format!("d{j}")).collect();
        nodes.push(RawTrace::new(ids, counts)?);
    }
    Ok(TrafficTrace {
        nodes,
        ground_truth: None,
        seed: 0,
        steps,
    })
}

pub fn write_trace(trace: &TrafficTrace, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, trace_to_csv(trace))?;
    Ok(())
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<TrafficTrace> {
    trace_from_csv(&fs::read_to_string(path)?)
}

pub fn write_ground_truth(gt: &GroundTruth, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(gt)?)?;
    Ok(())
}

pub fn read_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_network, Topology};

    #[test]
    fn round_trip_preserves_counts() {
        let topology = Topology::uniform(3, 5);
        let trace = generate_network(&topology, 12, 42).unwrap();
        let csv = trace_to_csv(&trace);
        let back = trace_from_csv(&csv).unwrap();
        assert_eq!(back.steps, trace.steps);
        assert_eq!(back.nodes.len(), trace.nodes.len());
        for (a, b) in back.nodes.iter().zip(&trace.nodes) {
            assert_eq!(a.counts, b.counts);
        }
    }

    #[test]
    fn header_is_mandatory() {
        let err = trace_from_csv("time,node,device,count\n0,0,0,1\n").unwrap_err();
        assert!(matches!(err, Error::MalformedCsv { line: 1, .. }));
    }

    #[test]
    fn negative_count_is_rejected_with_line_number() {
        let err = trace_from_csv("t,node,device,count\n0,0,0,5\n1,0,0,-3\n").unwrap_err();
        match err {
            Error::MalformedCsv { line, msg } => {
                assert_eq!(line, 3);
                assert!(msg.contains("count"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn fractional_count_is_rejected() {
        let err = trace_from_csv("t,node,device,count\n0,0,0,1.5\n").unwrap_err();
        assert!(matches!(err, Error::MalformedCsv { line: 2, .. }));
    }

    #[test]
    fn duplicate_cell_is_rejected() {
        let err = trace_from_csv("t,node,device,count\n0,0,0,1\n0,0,0,2\n").unwrap_err();
        match err {
            Error::MalformedCsv { line: 3, msg } => assert!(msg.contains("duplicate"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_cell_is_rejected() {
        // t=1 present for device 0 but t=0 missing for device 1
        let err = trace_from_csv("t,node,device,count\n0,0,0,1\n1,0,0,2\n1,0,1,3\n").unwrap_err();
        assert!(matches!(err, Error::MalformedCsv { .. }));
    }

    #[test]
    fn rows_in_any_order() {
        let csv = "t,node,device,count\n1,0,0,4\n0,0,0,3\n";
        let trace = trace_from_csv(csv).unwrap();
        assert_eq!(trace.nodes[0].counts, vec![vec![3], vec![4]]);
    }

    #[test]
    fn ground_truth_sidecar_round_trip() {
        let dir = std::env::temp_dir().join("odit_trace_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("gt.json");
        let gt = GroundTruth {
            attacked: vec![(0, 3), (2, 1)],
            onset: 50,
        };
        write_ground_truth(&gt, &path).unwrap();
        assert_eq!(read_ground_truth(&path).unwrap(), gt);
        std::fs::remove_dir_all(&dir).ok();
    }
}
