//! Reproducible IoT traffic simulator. Each device is a two-state
//! renewal process: at every session boundary it redraws active/idle,
//! and within a session the per-step packet count is a rounded Gaussian
//! draw around the state mean. One time step is one second.
//!
//! Streams are seeded per (node, device), so any device's series can be
//! regenerated independently and unattacked devices are bit-identical
//! with and without an attack injected.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::detector::RawTrace;
use crate::seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionLength {
    Steps(u64),
    AlwaysOn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub kind: String,
    pub active_prob: f64,
    pub active_mean: f64,
    pub idle_prob: f64,
    pub idle_mean: f64,
    pub session_len: SessionLength,
    pub sigma: f64,
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<()> {
        if (self.active_prob + self.idle_prob - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "active_prob + idle_prob must be 1, got {} + {}",
                self.active_prob, self.idle_prob
            )));
        }
        if self.active_mean < 0.0 || self.idle_mean < 0.0 {
            return Err(Error::InvalidConfig("means must be >= 0".into()));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidConfig("sigma must be positive".into()));
        }
        if let SessionLength::Steps(0) = self.session_len {
            return Err(Error::InvalidConfig("session length must be positive".into()));
        }
        Ok(())
    }

    fn new(
        kind: &str,
        active_prob: f64,
        active_mean: f64,
        idle_mean: f64,
        session_len: SessionLength,
    ) -> Self {
        Self {
            kind: kind.into(),
            active_prob,
            active_mean,
            idle_prob: 1.0 - active_prob,
            idle_mean,
            session_len,
            sigma: 5.0,
        }
    }

    pub fn thermostat() -> Self {
        Self::new("thermostat", 0.25, 25.0, 5.0, SessionLength::Steps(5))
    }

    pub fn smart_light() -> Self {
        Self::new("smart_light", 0.05, 10.0, 5.0, SessionLength::Steps(10))
    }

    pub fn security_camera() -> Self {
        Self::new("security_camera", 1.0, 80.0, 0.0, SessionLength::AlwaysOn)
    }

    pub fn smart_printer() -> Self {
        Self::new("smart_printer", 0.05, 75.0, 5.0, SessionLength::Steps(40))
    }

    pub fn smart_tv() -> Self {
        Self::new("smart_tv", 0.3, 120.0, 10.0, SessionLength::Steps(900))
    }

    /// The five profiles of the nominal data model, cycled to fill
    /// `count` devices.
    pub fn standard_mix(count: usize) -> Vec<DeviceProfile> {
        let kinds = [
            Self::thermostat(),
            Self::smart_light(),
            Self::security_camera(),
            Self::smart_printer(),
            Self::smart_tv(),
        ];
        (0..count).map(|i| kinds[i % kinds.len()].clone()).collect()
    }

    pub fn by_kind(kind: &str) -> Option<DeviceProfile> {
        match kind {
            "thermostat" => Some(Self::thermostat()),
            "smart_light" => Some(Self::smart_light()),
            "security_camera" => Some(Self::security_camera()),
            "smart_printer" => Some(Self::smart_printer()),
            "smart_tv" => Some(Self::smart_tv()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    /// `devices[n]` = profiles of the devices monitored by node `n`.
    pub devices: Vec<Vec<DeviceProfile>>,
}

impl Topology {
    pub fn validate(&self) -> Result<()> {
        if self.devices.is_empty() || self.devices.iter().any(|d| d.is_empty()) {
            return Err(Error::InvalidConfig(
                "topology needs >= 1 node with >= 1 device each".into(),
            ));
        }
        for node in &self.devices {
            for p in node {
                p.validate()?;
            }
        }
        Ok(())
    }

    /// `nodes` identical nodes with a standard device mix.
    pub fn uniform(nodes: usize, devices_per_node: usize) -> Self {
        Self {
            devices: (0..nodes)
                .map(|_| DeviceProfile::standard_mix(devices_per_node))
                .collect(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.devices.len()
    }

    pub fn total_devices(&self) -> usize {
        self.devices.iter().map(|d| d.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub onset: u64,
    /// Fraction of all devices compromised, in (0, 1].
    pub fraction_compromised: f64,
    /// Fractional rate increase, e.g. 0.10 for +10%.
    pub rate_increase: f64,
    pub selection_seed: u64,
    /// Overrides random selection when set.
    pub explicit_devices: Option<Vec<(usize, usize)>>,
    /// Attack length in steps; open-ended when `None`.
    pub duration: Option<u64>,
}

impl AttackSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction_compromised > 0.0 && self.fraction_compromised <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "fraction_compromised must be in (0, 1], got {}",
                self.fraction_compromised
            )));
        }
        if self.rate_increase < 0.0 {
            return Err(Error::InvalidConfig("rate_increase must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub attacked: Vec<(usize, usize)>,
    pub onset: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficTrace {
    pub nodes: Vec<RawTrace>,
    pub ground_truth: Option<GroundTruth>,
    /// Seed the trace was generated from; attack injection reuses it.
    pub seed: u64,
    pub steps: usize,
}

#[derive(Debug, Clone, Copy)]
struct AttackWindow {
    onset: u64,
    scale: f64,
    end: Option<u64>,
}

impl AttackWindow {
    fn scale_at(&self, t: u64) -> f64 {
        let active = t >= self.onset && self.end.map_or(true, |e| t < e);
        if active {
            self.scale
        } else {
            1.0
        }
    }
}

fn generate_device_inner(
    profile: &DeviceProfile,
    steps: usize,
    device_seed: u64,
    attack: Option<AttackWindow>,
) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(device_seed);
    let mut active = true;
    let mut out = Vec::with_capacity(steps);
    for t in 0..steps as u64 {
        if let SessionLength::Steps(len) = profile.session_len {
            // independent state redraw at every session boundary
            if t % len == 0 {
                active = rng.gen::<f64>() < profile.active_prob;
            }
        }
        let mean = if active {
            profile.active_mean
        } else {
            profile.idle_mean
        };
        let scale = attack.map_or(1.0, |a| a.scale_at(t));
        let z: f64 = rng.sample(StandardNormal);
        let value = mean * scale + profile.sigma * z;
        out.push(value.round().max(0.0) as u64);
    }
    out
}

/// One device's packet-count series. Deterministic given `device_seed`.
pub fn generate_device(profile: &DeviceProfile, steps: usize, device_seed: u64) -> Result<Vec<u64>> {
    profile.validate()?;
    if steps == 0 {
        return Err(Error::EmptyTrace);
    }
    Ok(generate_device_inner(profile, steps, device_seed, None))
}

fn device_seed(network_seed: u64, node: usize, device: usize) -> u64 {
    seed::derive2(network_seed, node as u64, device as u64)
}

/// Attack-free multi-node trace; every device stream is independent
/// with a derived sub-seed.
pub fn generate_network(topology: &Topology, steps: usize, net_seed: u64) -> Result<TrafficTrace> {
    topology.validate()?;
    if steps == 0 {
        return Err(Error::EmptyTrace);
    }
    let nodes = build_nodes(topology, steps, net_seed, None, &[])?;
    Ok(TrafficTrace {
        nodes,
        ground_truth: None,
        seed: net_seed,
        steps,
    })
}

fn build_nodes(
    topology: &Topology,
    steps: usize,
    net_seed: u64,
    attack: Option<AttackWindow>,
    attacked: &[(usize, usize)],
) -> Result<Vec<RawTrace>> {
    topology
        .devices
        .iter()
        .enumerate()
        .map(|(n, profiles)| {
            let ids = (0..profiles.len())
                .map(|j| format!("n{n}d{j}"))
                .collect::<Vec<_>>();
            let columns: Vec<Vec<u64>> = profiles
                .iter()
                .enumerate()
                .map(|(j, p)| {
                    let w = if attacked.contains(&(n, j)) { attack } else { None };
                    generate_device_inner(p, steps, device_seed(net_seed, n, j), w)
                })
                .collect();
            let counts: Vec<Vec<u64>> = (0..steps)
                .map(|t| columns.iter().map(|c| c[t]).collect())
                .collect();
            RawTrace::new(ids, counts)
        })
        .collect()
}

/// Pick the attacked device set for `spec` over `topology`.
pub fn select_attacked(topology: &Topology, spec: &AttackSpec) -> Result<Vec<(usize, usize)>> {
    if let Some(list) = &spec.explicit_devices {
        for &(n, j) in list {
            if n >= topology.node_count() || j >= topology.devices[n].len() {
                return Err(Error::InvalidConfig(format!(
                    "explicit attack device ({n}, {j}) not in topology"
                )));
            }
        }
        return Ok(list.clone());
    }
    let total = topology.total_devices();
    let count = (spec.fraction_compromised * total as f64).round() as usize;
    if count == 0 {
        return Err(Error::EmptyAttackSelection {
            fraction: spec.fraction_compromised,
        });
    }
    let mut all: Vec<(usize, usize)> = topology
        .devices
        .iter()
        .enumerate()
        .flat_map(|(n, d)| (0..d.len()).map(move |j| (n, j)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(spec.selection_seed, 0xA77));
    use rand::seq::SliceRandom;
    all.shuffle(&mut rng);
    let mut chosen: Vec<(usize, usize)> = all.into_iter().take(count).collect();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Regenerate the trace with the attack applied: selected devices have
/// both state means scaled by `1 + rate_increase` from the onset on;
/// unselected devices keep their exact original series.
pub fn inject_attack(
    topology: &Topology,
    trace: &TrafficTrace,
    spec: &AttackSpec,
) -> Result<TrafficTrace> {
    spec.validate()?;
    if spec.onset >= trace.steps as u64 {
        return Err(Error::InvalidConfig(format!(
            "attack onset {} outside trace of {} steps",
            spec.onset, trace.steps
        )));
    }
    let attacked = select_attacked(topology, spec)?;
    let window = AttackWindow {
        onset: spec.onset,
        scale: 1.0 + spec.rate_increase,
        end: spec.duration.map(|d| spec.onset + d),
    };
    let mut nodes = trace.nodes.clone();
    for &(n, j) in &attacked {
        let series = generate_device_inner(
            &topology.devices[n][j],
            trace.steps,
            device_seed(trace.seed, n, j),
            Some(window),
        );
        for (t, row) in nodes[n].counts.iter_mut().enumerate() {
            row[j] = series[t];
        }
    }
    Ok(TrafficTrace {
        nodes,
        ground_truth: Some(GroundTruth {
            attacked,
            onset: spec.onset,
        }),
        seed: trace.seed,
        steps: trace.steps,
    })
}

/// Generate a trace and inject an attack in one pass.
pub fn generate_attacked_network(
    topology: &Topology,
    steps: usize,
    net_seed: u64,
    spec: &AttackSpec,
) -> Result<TrafficTrace> {
    let nominal = generate_network(topology, steps, net_seed)?;
    inject_attack(topology, &nominal, spec)
}
