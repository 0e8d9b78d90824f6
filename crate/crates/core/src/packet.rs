use serde::{Deserialize, Serialize};

use crate::event::SimTime;
use crate::topology::NodeId;

pub type PacketId = u64;
pub type AlertId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PacketKind {
    SensorData,
    ClusterReport,
    RegionalAlarm,
    Heartbeat,
    AttackTraffic,
    /// Flat baseline: periodic per-sensor neighbor exchange.
    NeighborExchange,
    /// Flat baseline: anomaly signal broadcast by a detecting sensor.
    AnomalySignal,
}

impl PacketKind {
    pub const ALL: [PacketKind; 7] = [
        PacketKind::SensorData,
        PacketKind::ClusterReport,
        PacketKind::RegionalAlarm,
        PacketKind::Heartbeat,
        PacketKind::AttackTraffic,
        PacketKind::NeighborExchange,
        PacketKind::AnomalySignal,
    ];

    /// Position in [`PacketKind::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PacketKind::SensorData => "sensor_data",
            PacketKind::ClusterReport => "cluster_report",
            PacketKind::RegionalAlarm => "regional_alarm",
            PacketKind::Heartbeat => "heartbeat",
            PacketKind::AttackTraffic => "attack_traffic",
            PacketKind::NeighborExchange => "neighbor_exchange",
            PacketKind::AnomalySignal => "anomaly_signal",
        }
    }

    /// Kinds whose transmissions count as IDS control traffic, alerts aside.
    pub fn is_ids_control(self) -> bool {
        matches!(
            self,
            PacketKind::ClusterReport
                | PacketKind::RegionalAlarm
                | PacketKind::Heartbeat
                | PacketKind::NeighborExchange
                | PacketKind::AnomalySignal
        )
    }
}

/// Unit of simulated traffic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Packet {
    pub id: PacketId,
    /// Sender of the current hop as claimed in the header.
    pub src: NodeId,
    /// Final destination.
    pub dst: NodeId,
    /// Claimed original source.
    pub origin: NodeId,
    /// Nodes traversed so far, starting at the origin; the receiver is
    /// appended on each delivered hop.
    pub path: Vec<NodeId>,
    pub kind: PacketKind,
    pub tx_power_dbm: f64,
    pub created_at: SimTime,
    /// Reporting window for reports and alarms.
    pub window: Option<u64>,
    /// Alerts carried by reports and alarms.
    pub alerts: Vec<AlertId>,
}

impl Packet {
    pub fn new(id: PacketId, origin: NodeId, dst: NodeId, kind: PacketKind, tx_power_dbm: f64, created_at: SimTime) -> Self {
        Self {
            id,
            src: origin,
            dst,
            origin,
            path: vec![origin],
            kind,
            tx_power_dbm,
            created_at,
            window: None,
            alerts: Vec::new(),
        }
    }

    /// True when the path never revisits a node.
    pub fn path_is_simple(&self) -> bool {
        let mut seen = std::collections::BTreeSet::new();
        self.path.iter().all(|n| seen.insert(*n))
    }
}
