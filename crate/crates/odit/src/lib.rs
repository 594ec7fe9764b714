//! Sequential, nonparametric detection and mitigation of stealthy DDoS
//! attacks over per-device packet-rate time series.
//!
//! The core detector accumulates kNN-distance anomaly evidence with a
//! CUSUM-style recursion. Around it: cooperative multi-node detection,
//! post-alarm attacker localization, dynamic device-count support, an
//! IoT traffic simulator, comparison baselines, and an evaluation
//! harness for detection-delay / false-alarm tradeoffs.

pub mod baselines;
pub mod cooperative;
pub mod detector;
pub mod dynamic;
pub mod eval;
pub mod mitigation;
pub mod model_io;
pub mod sim;
pub mod trace_io;

mod seed;

pub use seed::{derive as seed_derive, derive2 as seed_derive2};

pub use detector::{
    DetectorConfig, DetectorState, EvidenceMode, EvidenceResult, LegacyGemConfig,
    NormalizationMap, ObservationVector, OditModel, RawTrace,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty trace")]
    EmptyTrace,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("insufficient data: need {needed} points, have {have}")]
    InsufficientData { needed: usize, have: usize },
    #[error("need at least k={k} reference points, have {have}")]
    InsufficientReferences { k: usize, have: usize },
    #[error(
        "degenerate baseline statistic (zero kNN distance at the percentile rank): \
         training data contains duplicated points; deduplicate or add jitter"
    )]
    DegenerateBaseline,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no threshold candidate meets target FPR {target}; best achievable {best}")]
    CalibrationFailed { target: f64, best: f64 },
    #[error("empty history")]
    EmptyHistory,
    #[error("history does not cover [{from}, {to}]")]
    HistoryGap { from: u64, to: u64 },
    #[error("regression design is rank deficient; collinear inputs: {0}")]
    RankDeficient(String),
    #[error("EM did not converge for device {device}: {detail}")]
    EmNonConvergence { device: usize, detail: String },
    #[error("attack fraction {fraction} selects no devices")]
    EmptyAttackSelection { fraction: f64 },
    #[error("all dimensions masked out")]
    EmptyMask,
    #[error("malformed trace CSV at line {line}: {msg}")]
    MalformedCsv { line: usize, msg: String },
    #[error("unsupported schema version {got}, expected {expected}")]
    SchemaVersion { got: u32, expected: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
