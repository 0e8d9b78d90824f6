//! Detection rules and the monitoring hierarchy.
//!
//! Cluster nodes run a three-phase pipeline per window: collect the
//! window's packets and channel statistics, apply the rules (jamming vote,
//! slot, sleep, route), and package each firing as an [`Alert`]. Regional
//! nodes forward child alerts, watch their cluster nodes, and send one
//! aggregated alarm per window to the base station, which watches the
//! regional nodes and builds the [`SummaryReport`].

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::io;

use serde::{Deserialize, Serialize};

use crate::attacks::{AttackKind, GroundTruthEvent};
use crate::config::ScenarioConfig;
use crate::error::DetectError;
use crate::event::SimTime;
use crate::mac::CellSchedule;
use crate::packet::{AlertId, Packet, PacketId, PacketKind};
use crate::topology::{HexCoord, NodeId, NodeRole, Subject, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Layer {
    Physical,
    Mac,
    Network,
    Application,
}

impl Layer {
    pub fn as_str(self) -> &'static str {
        match self {
            Layer::Physical => "physical",
            Layer::Mac => "mac",
            Layer::Network => "network",
            Layer::Application => "application",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Rule {
    JammingSuspected,
    SlotViolation,
    SleepViolation,
    ForeignOrigin,
    RouteDeviation,
    MissedHeartbeat,
    SuppressedAlerts,
}

impl Rule {
    pub const ALL: [Rule; 7] = [
        Rule::JammingSuspected,
        Rule::SlotViolation,
        Rule::SleepViolation,
        Rule::ForeignOrigin,
        Rule::RouteDeviation,
        Rule::MissedHeartbeat,
        Rule::SuppressedAlerts,
    ];

    /// Rules with no stochastic input.
    pub const DETERMINISTIC: [Rule; 4] = [Rule::SlotViolation, Rule::SleepViolation, Rule::ForeignOrigin, Rule::RouteDeviation];

    pub fn layer(self) -> Layer {
        match self {
            Rule::JammingSuspected => Layer::Physical,
            Rule::SlotViolation | Rule::SleepViolation | Rule::ForeignOrigin => Layer::Mac,
            Rule::RouteDeviation => Layer::Network,
            Rule::MissedHeartbeat | Rule::SuppressedAlerts => Layer::Application,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Rule::JammingSuspected => "jamming_suspected",
            Rule::SlotViolation => "slot_violation",
            Rule::SleepViolation => "sleep_violation",
            Rule::ForeignOrigin => "foreign_origin",
            Rule::RouteDeviation => "route_deviation",
            Rule::MissedHeartbeat => "missed_heartbeat",
            Rule::SuppressedAlerts => "suppressed_alerts",
        }
    }

    pub fn is_deterministic(self) -> bool {
        Self::DETERMINISTIC.contains(&self)
    }

    /// Whether an alert of this rule counts as detecting an attack of `kind`.
    pub fn detects(self, kind: AttackKind) -> bool {
        matches!(
            (kind, self),
            (AttackKind::Jamming, Rule::JammingSuspected)
                | (AttackKind::SlotSpoof, Rule::SlotViolation)
                | (AttackKind::SleepReplay, Rule::SleepViolation)
                | (AttackKind::RouteDeviation, Rule::RouteDeviation)
                | (AttackKind::NodeCompromise, Rule::MissedHeartbeat | Rule::SuppressedAlerts)
        )
    }
}

/// Per-cell channel statistics over one window, measured at the cluster node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelWindowStats {
    pub cell: HexCoord,
    pub window: u64,
    pub start: SimTime,
    pub end: SimTime,
    pub sent: u32,
    pub delivered: u32,
    /// `delivered / sent`, or 1 when nothing was sent.
    pub pdr: f64,
    pub mean_idle_rssi_dbm: f64,
    /// Mean wait for an idle channel over the cluster node's own
    /// transmissions; zero when it did not transmit.
    pub mean_carrier_sense_us: f64,
}

impl ChannelWindowStats {
    pub fn pdr_of(sent: u32, delivered: u32) -> f64 {
        if sent == 0 {
            1.0
        } else {
            f64::from(delivered) / f64::from(sent)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorThresholds {
    pub pdr_min: f64,
    pub idle_rssi_max_dbm: f64,
    pub carrier_sense_max_us: f64,
    pub jamming_vote_k: u8,
    pub heartbeat_timeout: u32,
    pub aggregation_window_us: SimTime,
}

impl DetectorThresholds {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        Self {
            pdr_min: cfg.detect.pdr_min,
            idle_rssi_max_dbm: cfg.idle_rssi_max_dbm(),
            carrier_sense_max_us: cfg.carrier_sense_max_us() as f64,
            jamming_vote_k: cfg.detect.jamming_vote_k,
            heartbeat_timeout: cfg.detect.heartbeat_timeout,
            aggregation_window_us: cfg.workload.report_interval_us,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Evidence {
    Channel {
        pdr: f64,
        mean_idle_rssi_dbm: f64,
        mean_carrier_sense_us: f64,
        trips: u8,
    },
    Packet {
        packet: PacketId,
        origin: NodeId,
        tx_time: SimTime,
        slot_owner: NodeId,
    },
    Route {
        packet: PacketId,
        path: Vec<NodeId>,
        expected: Vec<NodeId>,
    },
    Missed {
        windows: u32,
    },
    Suppressed {
        windows: u32,
    },
}

impl Evidence {
    /// Packet the evidence cites, if any.
    pub fn packet(&self) -> Option<PacketId> {
        match self {
            Evidence::Packet { packet, .. } | Evidence::Route { packet, .. } => Some(*packet),
            _ => None,
        }
    }

    pub fn summary(&self) -> String {
        fn ids(p: &[NodeId]) -> String {
            p.iter().map(ToString::to_string).collect::<Vec<_>>().join(">")
        }
        match self {
            Evidence::Channel { pdr, mean_idle_rssi_dbm, mean_carrier_sense_us, trips } => format!(
                "pdr={pdr:.3} idle_rssi={mean_idle_rssi_dbm:.2}dBm cs={mean_carrier_sense_us:.1}us trips={trips}"
            ),
            Evidence::Packet { packet, origin, tx_time, slot_owner } => {
                format!("packet={packet} origin={origin} tx={tx_time}us slot_owner={slot_owner}")
            }
            Evidence::Route { packet, path, expected } => {
                format!("packet={packet} path={} expected={}", ids(path), ids(expected))
            }
            Evidence::Missed { windows } => format!("missed={windows}"),
            Evidence::Suppressed { windows } => format!("suppressed={windows}"),
        }
    }
}

/// Deduplication key: one alert per rule, suspect, window and cited packet.
pub type AlertKey = (Rule, Subject, u64, Option<PacketId>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub id: AlertId,
    pub layer: Layer,
    pub rule: Rule,
    pub suspect: Subject,
    /// Cell the suspect belongs to; a regional node's first cell.
    pub cell: HexCoord,
    pub window: u64,
    pub evidence: Evidence,
    pub detected_at: SimTime,
    pub detected_by: NodeId,
    /// Nodes that have held this alert, starting at the detector.
    pub hop_trail: Vec<NodeId>,
}

impl Alert {
    pub fn new(rule: Rule, suspect: Subject, cell: HexCoord, window: u64, evidence: Evidence, detected_at: SimTime, detected_by: NodeId) -> Self {
        Self {
            id: 0,
            layer: rule.layer(),
            rule,
            suspect,
            cell,
            window,
            evidence,
            detected_at,
            detected_by,
            hop_trail: vec![detected_by],
        }
    }

    pub fn key(&self) -> AlertKey {
        (self.rule, self.suspect, self.window, self.evidence.packet())
    }
}

/// Indicator trips of the jamming vote: low PDR, high idle RSSI, long carrier sense.
pub fn jamming_trips(stats: &ChannelWindowStats, th: &DetectorThresholds) -> [bool; 3] {
    [
        stats.pdr < th.pdr_min,
        stats.mean_idle_rssi_dbm > th.idle_rssi_max_dbm,
        stats.mean_carrier_sense_us > th.carrier_sense_max_us,
    ]
}

/// Fires iff at least `jamming_vote_k` indicators trip.
pub fn detect_jamming(stats: &ChannelWindowStats, th: &DetectorThresholds, detected_at: SimTime, detected_by: NodeId) -> Option<Alert> {
    let trips = jamming_trips(stats, th).iter().filter(|&&t| t).count() as u8;
    (trips >= th.jamming_vote_k).then(|| {
        Alert::new(
            Rule::JammingSuspected,
            Subject::Cell(stats.cell),
            stats.cell,
            stats.window,
            Evidence::Channel {
                pdr: stats.pdr,
                mean_idle_rssi_dbm: stats.mean_idle_rssi_dbm,
                mean_carrier_sense_us: stats.mean_carrier_sense_us,
                trips,
            },
            detected_at,
            detected_by,
        )
    })
}

/// Connectivity graph over all nodes: an edge joins two nodes no farther
/// apart than the short radio range.
#[derive(Debug, Clone)]
pub struct RouteTable {
    adjacency: Vec<Vec<NodeId>>,
    /// Hop distances towards each cluster node.
    to_cluster: BTreeMap<NodeId, Vec<u32>>,
}

const UNREACHED: u32 = u32::MAX;

impl RouteTable {
    pub fn new(topology: &Topology, short_range_m: f64) -> Self {
        let nodes = topology.nodes();
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for (i, a) in nodes.iter().enumerate() {
            for b in &nodes[i + 1..] {
                if a.position.distance(b.position) <= short_range_m {
                    adjacency[a.id.index()].push(b.id);
                    adjacency[b.id.index()].push(a.id);
                }
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        let mut table = Self {
            adjacency,
            to_cluster: BTreeMap::new(),
        };
        for cell in topology.cells() {
            let d = table.distances_to(cell.cluster);
            table.to_cluster.insert(cell.cluster, d);
        }
        table
    }

    pub fn neighbors(&self, node: NodeId) -> &[NodeId] {
        &self.adjacency[node.index()]
    }

    fn distances_to(&self, dst: NodeId) -> Vec<u32> {
        let mut dist = vec![UNREACHED; self.adjacency.len()];
        let mut queue = VecDeque::from([dst]);
        dist[dst.index()] = 0;
        while let Some(n) = queue.pop_front() {
            for &m in &self.adjacency[n.index()] {
                if dist[m.index()] == UNREACHED {
                    dist[m.index()] = dist[n.index()] + 1;
                    queue.push_back(m);
                }
            }
        }
        dist
    }

    /// Minimum-hop path from `src` to `dst`, ties broken towards the
    /// lexicographically smallest id sequence.
    pub fn expected_route(&self, src: NodeId, dst: NodeId) -> Result<Vec<NodeId>, DetectError> {
        let owned;
        let dist = match self.to_cluster.get(&dst) {
            Some(d) => d,
            None => {
                owned = self.distances_to(dst);
                &owned
            }
        };
        if dist[src.index()] == UNREACHED {
            return Err(DetectError::NoRoute { src, dst });
        }
        let mut path = vec![src];
        let mut at = src;
        while at != dst {
            let want = dist[at.index()] - 1;
            at = *self.adjacency[at.index()]
                .iter()
                .find(|m| dist[m.index()] == want)
                .expect("a shorter neighbor exists on every reachable node");
            path.push(at);
        }
        Ok(path)
    }
}

/// Route-tracing rule. Fires when the traversed path differs from the
/// expected route and names the first node off that route.
pub fn check_route(packet: &Packet, routes: &RouteTable, window: u64, cell: HexCoord, detected_at: SimTime, detected_by: NodeId) -> Option<Alert> {
    let expected = routes.expected_route(packet.origin, packet.dst).unwrap_or_default();
    if packet.path == expected {
        return None;
    }
    let diverge = packet
        .path
        .iter()
        .zip(&expected)
        .position(|(a, b)| a != b)
        .unwrap_or(expected.len().min(packet.path.len().saturating_sub(1)));
    let suspect = packet.path.get(diverge).copied().unwrap_or(packet.origin);
    Some(Alert::new(
        Rule::RouteDeviation,
        Subject::Node(suspect),
        cell,
        window,
        Evidence::Route {
            packet: packet.id,
            path: packet.path.clone(),
            expected,
        },
        detected_at,
        detected_by,
    ))
}

/// A packet as seen by its receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedPacket {
    pub packet: Packet,
    /// Transmission start of the last hop: receive time minus hop latency.
    pub tx_time: SimTime,
    pub rx_time: SimTime,
}

/// Deterministic MAC and route rules applied to one received packet.
/// Returns the firings and the number of rule evaluations performed.
pub fn packet_rules(
    received: &ReceivedPacket,
    schedule: &CellSchedule,
    routes: &RouteTable,
    window: u64,
    detected_at: SimTime,
    detected_by: NodeId,
) -> (Vec<Alert>, u64) {
    let p = &received.packet;
    let cell = schedule.tdma.cell;
    let mut out = Vec::new();
    let evidence = Evidence::Packet {
        packet: p.id,
        origin: p.origin,
        tx_time: received.tx_time,
        slot_owner: schedule.tdma.slot_owner_at(received.tx_time),
    };
    match schedule.is_slot_violation(p, received.tx_time) {
        Err(_) => {
            out.push(Alert::new(Rule::ForeignOrigin, Subject::Node(p.origin), cell, window, evidence, detected_at, detected_by));
            return (out, 1);
        }
        Ok(true) => out.push(Alert::new(Rule::SlotViolation, Subject::Node(p.origin), cell, window, evidence.clone(), detected_at, detected_by)),
        Ok(false) => {}
    }
    if schedule.is_sleep_violation(p, received.tx_time) == Ok(true) {
        out.push(Alert::new(Rule::SleepViolation, Subject::Node(p.origin), cell, window, evidence, detected_at, detected_by));
    }
    out.extend(check_route(p, routes, window, cell, detected_at, detected_by));
    (out, 3)
}

/// Inputs of one cluster node for one window.
#[derive(Debug, Clone)]
pub struct ClusterWindow<'a> {
    pub cluster: NodeId,
    pub window: u64,
    pub now: SimTime,
    pub packets: &'a [ReceivedPacket],
    pub stats: &'a ChannelWindowStats,
    pub schedule: &'a CellSchedule,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PipelineOutput {
    pub alerts: Vec<Alert>,
    pub evaluations: u64,
}

/// The cluster node's per-window pipeline: jamming vote, then slot, sleep
/// and route rules per packet, deduplicated by [`Alert::key`].
pub fn cluster_pipeline(input: &ClusterWindow<'_>, routes: &RouteTable, th: &DetectorThresholds) -> PipelineOutput {
    let mut seen = BTreeSet::new();
    let mut out = PipelineOutput {
        alerts: Vec::new(),
        evaluations: 1,
    };
    let mut push = |a: Alert, out: &mut PipelineOutput| {
        if seen.insert(a.key()) {
            out.alerts.push(a);
        }
    };
    if let Some(a) = detect_jamming(input.stats, th, input.now, input.cluster) {
        push(a, &mut out);
    }
    for rp in input.packets {
        if !matches!(rp.packet.kind, PacketKind::SensorData | PacketKind::AttackTraffic) {
            continue;
        }
        let (alerts, evals) = packet_rules(rp, input.schedule, routes, input.window, input.now, input.cluster);
        out.evaluations += evals;
        for a in alerts {
            push(a, &mut out);
        }
    }
    out
}

/// What a monitor saw from one monitored node in one window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observation {
    Missing,
    Heard {
        alerts: usize,
        /// The monitor's own observation of the child's cell shows an anomaly.
        anomaly: bool,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Streak {
    pub missed: u32,
    pub suppressed: u32,
}

/// Consecutive-window counters per monitored node.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HeartbeatLedger {
    streaks: BTreeMap<NodeId, Streak>,
}

impl HeartbeatLedger {
    pub fn observe(&mut self, node: NodeId, obs: Observation) -> Streak {
        let s = self.streaks.entry(node).or_default();
        match obs {
            Observation::Missing => {
                s.missed += 1;
                s.suppressed = 0;
            }
            Observation::Heard { alerts, anomaly } => {
                s.missed = 0;
                if alerts == 0 && anomaly {
                    s.suppressed += 1;
                } else {
                    s.suppressed = 0;
                }
            }
        }
        *s
    }

    pub fn streak(&self, node: NodeId) -> Streak {
        self.streaks.get(&node).copied().unwrap_or_default()
    }
}

/// Whether `monitor` may watch `monitored`: cluster over its sensors,
/// regional over its cluster nodes, base station over regional nodes.
pub fn is_watchdog_pair(topology: &Topology, monitor: NodeId, monitored: NodeId) -> bool {
    let (Some(a), Some(b)) = (topology.node(monitor), topology.node(monitored)) else {
        return false;
    };
    match (a.role, b.role) {
        (NodeRole::ClusterNode, NodeRole::Sensor) => a.cell == b.cell,
        (NodeRole::RegionalNode, NodeRole::ClusterNode) => a.region == b.region,
        (NodeRole::BaseStation, NodeRole::RegionalNode) => true,
        _ => false,
    }
}

/// Cell used to file alerts about `node`.
pub fn home_cell(topology: &Topology, node: NodeId) -> HexCoord {
    topology
        .cell_of(node)
        .or_else(|| {
            let region = topology.node(node)?.region?;
            topology.region(region)?.cells.first().copied()
        })
        .unwrap_or(HexCoord::ORIGIN)
}

/// Fires once per outage, in the window the streak reaches the timeout.
pub fn watchdog_check(
    topology: &Topology,
    monitor: NodeId,
    monitored: NodeId,
    ledger: &HeartbeatLedger,
    th: &DetectorThresholds,
    window: u64,
    now: SimTime,
) -> Result<Option<Alert>, DetectError> {
    if !is_watchdog_pair(topology, monitor, monitored) {
        return Err(DetectError::IllegalWatchdogPair { monitor, monitored });
    }
    let s = ledger.streak(monitored);
    let cell = home_cell(topology, monitored);
    let alert = if s.missed == th.heartbeat_timeout {
        Some(Alert::new(Rule::MissedHeartbeat, Subject::Node(monitored), cell, window, Evidence::Missed { windows: s.missed }, now, monitor))
    } else if s.suppressed == th.heartbeat_timeout {
        Some(Alert::new(
            Rule::SuppressedAlerts,
            Subject::Node(monitored),
            cell,
            window,
            Evidence::Suppressed { windows: s.suppressed },
            now,
            monitor,
        ))
    } else {
        None
    };
    Ok(alert)
}

/// One child of a regional node in one window.
#[derive(Debug, Clone)]
pub struct ChildWindow {
    pub cluster: NodeId,
    pub cell: HexCoord,
    /// Alerts carried by the child's report, or `None` if no report arrived.
    pub report: Option<Vec<Alert>>,
    /// Channel statistics of the child's cell as overheard by the regional node.
    pub overheard: ChannelWindowStats,
}

/// Per-window summary sent from a regional node to the base station.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregatedAlarm {
    pub regional: Option<NodeId>,
    pub window: u64,
    pub counts: BTreeMap<(HexCoord, Rule), u32>,
}

impl AggregatedAlarm {
    pub fn total(&self) -> u32 {
        self.counts.values().sum()
    }
}

#[derive(Debug, Clone, Default)]
pub struct RegionalOutput {
    /// Child alerts with the regional node appended to their trail.
    pub forwarded: Vec<Alert>,
    /// Watchdog alerts raised by the regional node itself.
    pub raised: Vec<Alert>,
    pub alarm: AggregatedAlarm,
    pub evaluations: u64,
}

pub fn regional_aggregate(
    topology: &Topology,
    regional: NodeId,
    window: u64,
    now: SimTime,
    children: &[ChildWindow],
    ledger: &mut HeartbeatLedger,
    th: &DetectorThresholds,
) -> Result<RegionalOutput, DetectError> {
    let mut out = RegionalOutput {
        alarm: AggregatedAlarm {
            regional: Some(regional),
            window,
            counts: BTreeMap::new(),
        },
        ..RegionalOutput::default()
    };
    for child in children {
        let anomaly = jamming_trips(&child.overheard, th).iter().filter(|&&t| t).count() as u8 >= th.jamming_vote_k;
        out.evaluations += 2;
        let obs = match &child.report {
            None => Observation::Missing,
            Some(alerts) => {
                for a in alerts {
                    let mut f = a.clone();
                    f.hop_trail.push(regional);
                    out.forwarded.push(f);
                }
                Observation::Heard { alerts: alerts.len(), anomaly }
            }
        };
        ledger.observe(child.cluster, obs);
        if let Some(a) = watchdog_check(topology, regional, child.cluster, ledger, th, window, now)? {
            out.raised.push(a);
        }
    }
    for a in out.forwarded.iter().chain(&out.raised) {
        *out.alarm.counts.entry((a.cell, a.rule)).or_insert(0) += 1;
    }
    Ok(out)
}

/// Ground-truth event an alert detects, if any: compatible rule, agreeing
/// suspect, and detection time inside the matching window. Packet-level
/// events additionally require the alert to cite the same packet.
pub fn matching_truth(alert: &Alert, truth: &[GroundTruthEvent], match_window_us: SimTime) -> Option<usize> {
    truth.iter().position(|g| {
        if !alert.rule.detects(g.kind) || alert.suspect != g.target {
            return false;
        }
        if g.kind.is_packet_level() {
            alert.evidence.packet() == g.packet && g.delivered && alert.detected_at >= g.time && alert.detected_at <= g.time + match_window_us
        } else {
            alert.detected_at >= g.time && alert.detected_at <= g.end + match_window_us
        }
    })
}

/// Whether an alert that detects no event is still a consequence of an
/// injected attack: any rule citing an attack packet; jamming and
/// missed-heartbeat alerts anywhere during a jamming interval; and
/// missed-heartbeat alerts inside a cell under any other attack.
pub fn is_attack_side_effect(alert: &Alert, truth: &[GroundTruthEvent], match_window_us: SimTime) -> bool {
    truth.iter().any(|g| {
        let during = alert.detected_at >= g.time && alert.detected_at <= g.end + match_window_us;
        if g.packet.is_some() && alert.evidence.packet() == g.packet {
            return true;
        }
        match g.kind {
            AttackKind::Jamming => during && matches!(alert.rule, Rule::JammingSuspected | Rule::MissedHeartbeat),
            _ => during && alert.rule == Rule::MissedHeartbeat && alert.cell == g.cell,
        }
    })
}

/// An alert as it reached the base station.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseArrival {
    pub alert: Alert,
    pub arrival: SimTime,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimelineRow {
    pub alert_id: AlertId,
    pub detected_at_us: SimTime,
    pub layer: &'static str,
    pub rule: &'static str,
    pub suspect: String,
    pub cell: String,
    pub detected_by: NodeId,
    pub hop_trail: String,
    pub base_arrival_us: SimTime,
    /// From the matched ground-truth event to base arrival; empty if unmatched.
    pub latency_us: Option<SimTime>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SummaryReport {
    pub tally: BTreeMap<(HexCoord, Rule), u32>,
    pub timeline: Vec<TimelineRow>,
    /// Monitors named by watchdog alerts.
    pub compromised: Vec<NodeId>,
}

pub fn base_station_report(topology: &Topology, arrivals: &[BaseArrival], truth: &[GroundTruthEvent], match_window_us: SimTime) -> SummaryReport {
    let mut report = SummaryReport::default();
    let mut compromised = BTreeSet::new();
    for arr in arrivals {
        let a = &arr.alert;
        *report.tally.entry((a.cell, a.rule)).or_insert(0) += 1;
        if let (Rule::MissedHeartbeat | Rule::SuppressedAlerts, Subject::Node(n)) = (a.rule, a.suspect) {
            if topology.role(n).is_some_and(|r| matches!(r, NodeRole::ClusterNode | NodeRole::RegionalNode)) {
                compromised.insert(n);
            }
        }
        let latency = matching_truth(a, truth, match_window_us).map(|i| arr.arrival.saturating_sub(truth[i].time));
        report.timeline.push(TimelineRow {
            alert_id: a.id,
            detected_at_us: a.detected_at,
            layer: a.layer.as_str(),
            rule: a.rule.as_str(),
            suspect: a.suspect.to_string(),
            cell: a.cell.to_string(),
            detected_by: a.detected_by,
            hop_trail: a.hop_trail.iter().map(ToString::to_string).collect::<Vec<_>>().join(">"),
            base_arrival_us: arr.arrival,
            latency_us: latency,
        });
    }
    report.timeline.sort_by_key(|r| (r.base_arrival_us, r.alert_id));
    report.compromised = compromised.into_iter().collect();
    report
}

impl SummaryReport {
    pub fn count(&self, cell: HexCoord, rule: Rule) -> u32 {
        self.tally.get(&(cell, rule)).copied().unwrap_or(0)
    }

    pub fn rule_total(&self, rule: Rule) -> u32 {
        self.tally.iter().filter(|((_, r), _)| *r == rule).map(|(_, n)| n).sum()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "per-cell tally");
        let _ = writeln!(s, "{:<10} {:<18} {:>6}", "cell", "rule", "count");
        for ((cell, rule), n) in &self.tally {
            let _ = writeln!(s, "{:<10} {:<18} {:>6}", cell.to_string(), rule.as_str(), n);
        }
        let _ = writeln!(s, "\ncompromised monitors: {}", if self.compromised.is_empty() {
            "none".to_string()
        } else {
            self.compromised.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
        });
        let _ = writeln!(s, "\nalert timeline");
        let _ = writeln!(
            s,
            "{:>12} {:<12} {:<18} {:<12} {:>6} {:>12} {:>10}",
            "detected_us", "layer", "rule", "suspect", "by", "arrival_us", "latency_us"
        );
        for r in &self.timeline {
            let _ = writeln!(
                s,
                "{:>12} {:<12} {:<18} {:<12} {:>6} {:>12} {:>10}",
                r.detected_at_us,
                r.layer,
                r.rule,
                r.suspect,
                r.detected_by.to_string(),
                r.base_arrival_us,
                r.latency_us.map_or("-".to_string(), |l| l.to_string())
            );
        }
        s
    }

    /// One row per alert that reached the base station.
    pub fn write_csv<W: io::Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        if self.timeline.is_empty() {
            wr.write_record([
                "alert_id",
                "detected_at_us",
                "layer",
                "rule",
                "suspect",
                "cell",
                "detected_by",
                "hop_trail",
                "base_arrival_us",
                "latency_us",
            ])?;
        }
        for r in &self.timeline {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::MacParams;
    use crate::workload::cell_schedules;

    fn th() -> DetectorThresholds {
        DetectorThresholds::from_config(&ScenarioConfig::default().resolve())
    }

    fn stats(pdr: f64, rssi: f64, cs: f64) -> ChannelWindowStats {
        ChannelWindowStats {
            cell: HexCoord::ORIGIN,
            window: 0,
            start: 0,
            end: 1_000_000,
            sent: 10,
            delivered: (pdr * 10.0) as u32,
            pdr,
            mean_idle_rssi_dbm: rssi,
            mean_carrier_sense_us: cs,
        }
    }

    #[test]
    fn clean_channel_is_quiet() {
        assert!(detect_jamming(&stats(1.0, -95.0, 160.0), &th(), 0, NodeId(0)).is_none());
    }

    #[test]
    fn jammed_channel_fires_with_all_values() {
        let a = detect_jamming(&stats(0.2, -75.0, 800.0), &th(), 5, NodeId(1)).unwrap();
        assert_eq!(a.rule, Rule::JammingSuspected);
        assert_eq!(a.layer, Layer::Physical);
        assert!(matches!(a.evidence, Evidence::Channel { trips: 3, .. }));
    }

    #[test]
    fn vote_boundary() {
        let mut t = th();
        t.jamming_vote_k = 2;
        // exactly one indicator
        assert!(detect_jamming(&stats(0.2, -95.0, 100.0), &t, 0, NodeId(0)).is_none());
        assert!(detect_jamming(&stats(0.2, -80.0, 100.0), &t, 0, NodeId(0)).is_some());
        t.jamming_vote_k = 3;
        assert!(detect_jamming(&stats(0.2, -80.0, 100.0), &t, 0, NodeId(0)).is_none());
    }

    #[test]
    fn zero_traffic_pdr_is_one() {
        assert_eq!(ChannelWindowStats::pdr_of(0, 0), 1.0);
        assert_eq!(ChannelWindowStats::pdr_of(10, 8), 0.8);
    }

    fn world() -> (Topology, BTreeMap<HexCoord, CellSchedule>, RouteTable) {
        let topo = Topology::generate(1, 30.0, 4, 3).unwrap();
        let sched = cell_schedules(&topo, &MacParams::default()).unwrap();
        let routes = RouteTable::new(&topo, 75.0);
        (topo, sched, routes)
    }

    #[test]
    fn sensors_route_directly() {
        let (topo, _, routes) = world();
        for cell in topo.cells() {
            for &s in &cell.sensors {
                assert_eq!(routes.expected_route(s, cell.cluster).unwrap(), vec![s, cell.cluster]);
            }
        }
    }

    #[test]
    fn base_station_is_unreachable_on_short_range() {
        let (topo, _, routes) = world();
        let s = topo.nodes_with_role(NodeRole::Sensor).next().unwrap().id;
        assert!(matches!(routes.expected_route(s, topo.base_station()), Err(DetectError::NoRoute { .. })));
    }

    fn delivered(topo: &Topology, sched: &CellSchedule, origin: NodeId, t: SimTime, path: Vec<NodeId>) -> ReceivedPacket {
        let cluster = topo.cell(sched.tdma.cell).unwrap().cluster;
        let mut p = Packet::new(7, origin, cluster, PacketKind::AttackTraffic, 0.0, t);
        p.path = path;
        ReceivedPacket { packet: p, tx_time: t, rx_time: t + 2000 }
    }

    #[test]
    fn one_slot_spoof_one_alert() {
        let (topo, sched, routes) = world();
        let cell = topo.cells().next().unwrap();
        let s = &sched[&cell.coord];
        let a = cell.sensors[0];
        // awake and in another sensor's slot
        let t = (0..).map(|k| k * 1000).find(|&t| s.smac.is_awake(t) && s.tdma.slot_owner_at(t) != a).unwrap();
        let rp = delivered(&topo, s, a, t, vec![a, cell.cluster]);
        let st = stats(1.0, -95.0, 100.0);
        let input = ClusterWindow { cluster: cell.cluster, window: 0, now: 1_000_000, packets: std::slice::from_ref(&rp), stats: &st, schedule: s };
        let out = cluster_pipeline(&input, &routes, &th());
        assert_eq!(out.alerts.len(), 1);
        assert_eq!(out.alerts[0].rule, Rule::SlotViolation);
        assert_eq!(out.alerts[0].suspect, Subject::Node(a));
        assert_eq!(out.evaluations, 4);
        // the same packet twice is deduplicated
        let twice = [rp.clone(), rp.clone()];
        let input = ClusterWindow { packets: &twice, ..input };
        assert_eq!(cluster_pipeline(&input, &routes, &th()).alerts.len(), 1);
    }

    #[test]
    fn detour_fires_route_deviation_only() {
        let (topo, sched, routes) = world();
        let cell = topo.cells().next().unwrap();
        let s = &sched[&cell.coord];
        let (a, relay) = (cell.sensors[0], cell.sensors[1]);
        let t = (0..).map(|k| k * 100).find(|&t| s.can_send(a, t, 1024)).unwrap();
        let rp = delivered(&topo, s, a, t, vec![a, relay, cell.cluster]);
        let (alerts, _) = packet_rules(&rp, s, &routes, 0, 0, cell.cluster);
        assert_eq!(alerts.len(), 1);
        assert_eq!(alerts[0].rule, Rule::RouteDeviation);
        assert_eq!(alerts[0].suspect, Subject::Node(relay));
    }

    #[test]
    fn foreign_origin_is_distinct() {
        let (topo, sched, routes) = world();
        let mut cells = topo.cells();
        let here = cells.next().unwrap();
        let other = cells.next().unwrap();
        let s = &sched[&here.coord];
        let rp = delivered(&topo, s, other.sensors[0], 0, vec![other.sensors[0], here.cluster]);
        let (alerts, _) = packet_rules(&rp, s, &routes, 0, 0, here.cluster);
        assert_eq!(alerts.iter().map(|a| a.rule).collect::<Vec<_>>(), vec![Rule::ForeignOrigin]);
    }

    #[test]
    fn watchdog_fires_once_per_outage() {
        let (topo, _, _) = world();
        let region = topo.regions().next().unwrap();
        let cluster = topo.cell(region.cells[0]).unwrap().cluster;
        let mut ledger = HeartbeatLedger::default();
        let t = th();
        let mut fired = 0;
        for w in 0..6 {
            ledger.observe(cluster, Observation::Missing);
            if watchdog_check(&topo, region.regional, cluster, &ledger, &t, w, 0).unwrap().is_some() {
                fired += 1;
                assert_eq!(w, 1);
            }
        }
        assert_eq!(fired, 1);
    }

    #[test]
    fn illegal_pairs_rejected() {
        let (topo, _, _) = world();
        let sensor = topo.nodes_with_role(NodeRole::Sensor).next().unwrap().id;
        let cluster = topo.nodes_with_role(NodeRole::ClusterNode).next().unwrap().id;
        let ledger = HeartbeatLedger::default();
        assert!(watchdog_check(&topo, sensor, cluster, &ledger, &th(), 0, 0).is_err());
        assert!(watchdog_check(&topo, topo.base_station(), cluster, &ledger, &th(), 0, 0).is_err());
    }

    #[test]
    fn suppression_needs_anomaly_and_silence() {
        let mut ledger = HeartbeatLedger::default();
        let n = NodeId(0);
        assert_eq!(ledger.observe(n, Observation::Heard { alerts: 0, anomaly: true }).suppressed, 1);
        assert_eq!(ledger.observe(n, Observation::Heard { alerts: 1, anomaly: true }).suppressed, 0);
        assert_eq!(ledger.observe(n, Observation::Heard { alerts: 0, anomaly: false }).suppressed, 0);
    }

    #[test]
    fn regional_counts_sum() {
        let (topo, _, _) = world();
        let region = topo.regions().find(|r| r.cells.len() == 3).unwrap();
        let mut ledger = HeartbeatLedger::default();
        let children: Vec<ChildWindow> = region
            .cells
            .iter()
            .map(|&c| {
                let cluster = topo.cell(c).unwrap().cluster;
                let a = Alert::new(Rule::SlotViolation, Subject::Node(NodeId(0)), c, 0, Evidence::Missed { windows: 0 }, 0, cluster);
                let mut b = a.clone();
                b.rule = Rule::SleepViolation;
                ChildWindow { cluster, cell: c, report: Some(vec![a, b]), overheard: stats(1.0, -95.0, 0.0) }
            })
            .collect();
        let out = regional_aggregate(&topo, region.regional, 0, 0, &children, &mut ledger, &th()).unwrap();
        assert_eq!(out.alarm.total(), 6);
        assert!(out.raised.is_empty());
        assert!(out.forwarded.iter().all(|a| a.hop_trail == vec![a.detected_by, region.regional]));
    }
}
