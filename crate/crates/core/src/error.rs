use thiserror::Error;

use crate::topology::{HexCoord, NodeId};

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("cell radius must be positive and finite, got {0}")]
    InvalidCellRadius(f64),
    #[error("grid has no cells")]
    EmptyGrid,
    #[error("sensors_per_cell must be at least 1")]
    NoSensors,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("event at {at}us is before the current clock {now}us")]
    InPast { at: u64, now: u64 },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MacError {
    #[error("frame of {frame_length} slots cannot hold {sensors} sensors")]
    FrameTooShort { frame_length: u32, sensors: usize },
    #[error("schedule needs at least one sensor")]
    NoSensors,
    #[error("packet claims origin {0}, which is not a sensor of this cell")]
    ForeignOrigin(NodeId),
}

#[derive(Debug, Error, PartialEq)]
pub enum AttackError {
    #[error("attack {index}: interval start {start} must be before end {end}")]
    EmptyInterval { index: usize, start: u64, end: u64 },
    #[error("attack {index}: node {node} does not exist")]
    UnknownNode { index: usize, node: NodeId },
    #[error("attack {index}: cell {cell} is not in the grid")]
    UnknownCell { index: usize, cell: HexCoord },
    #[error("attack {index}: node {node} is not a sensor")]
    NotASensor { index: usize, node: NodeId },
    #[error("attack {index}: victim {node} owns every slot, no foreign slot exists")]
    NoForeignSlot { index: usize, node: NodeId },
    #[error("attack {index}: awake_fraction is 1, no sleep window exists")]
    NoSleepWindow { index: usize },
    #[error("attack {index}: detour relay {relay} equals the best-route next hop")]
    NoOpDetour { index: usize, relay: NodeId },
    #[error("attack {index}: only cluster and regional nodes can be compromised, {node} is a {role}")]
    BadCompromiseTarget { index: usize, node: NodeId, role: &'static str },
    #[error("attack {index}: no transmission time satisfies the injection constraints")]
    NoFeasibleTime { index: usize },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DetectError {
    #[error("no route from {src} to {dst}")]
    NoRoute { src: NodeId, dst: NodeId },
    #[error("{monitor} cannot act as watchdog over {monitored}")]
    IllegalWatchdogPair { monitor: NodeId, monitored: NodeId },
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("run log has no ground-truth section")]
    MissingGroundTruth,
    #[error("scenario hashes differ: {0} vs {1}")]
    ScenarioMismatch(String, String),
}

/// A configuration problem, reported with the offending key.
#[derive(Debug, Error, PartialEq)]
#[error("{key}: {message}")]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            message: message.into(),
        }
    }
}

/// Top-level error for running a scenario.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("topology error: {0}")]
    Topology(#[from] TopologyError),
    #[error("schedule error: {0}")]
    Mac(#[from] MacError),
    #[error("attack error: {0}")]
    Attack(#[from] AttackError),
    #[error("runtime invariant violated: {0}")]
    Invariant(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
