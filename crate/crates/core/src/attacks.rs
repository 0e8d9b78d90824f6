//! Attack scenarios and their ground truth.
//!
//! Every malicious event the injector creates is recorded exactly once in
//! the ground-truth list. Scoring reads only that list and never the
//! detectors' own view of the run.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::AttackError;
use crate::event::SimTime;
use crate::mac::CellSchedule;
use crate::packet::{Packet, PacketId, PacketKind};
use crate::rng;
use crate::topology::{HexCoord, NodeId, NodeRole, Point, Subject, Topology};
use crate::workload::PlannedSend;

/// Rejection-sampling budget for an injection time.
const MAX_TIME_DRAWS: u32 = 100_000;

fn default_spoof_count() -> u32 {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JammingSpec {
    pub cell: HexCoord,
    pub start_us: SimTime,
    pub end_us: SimTime,
    pub power_dbm: f64,
    /// Jammer position in meters; the cell centroid when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpoofSpec {
    /// Sensor whose identity the attacker claims.
    pub victim: NodeId,
    pub start_us: SimTime,
    pub end_us: SimTime,
    #[serde(default = "default_spoof_count")]
    pub count: u32,
    /// Attacker transmit power; the sensor power when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tx_power_dbm: Option<f64>,
    /// Attacker position; the victim's position when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetourSpec {
    /// Sensor whose traffic is diverted.
    pub victim: NodeId,
    /// Compromised sensor that relays the traffic; the nearest other sensor
    /// of the victim's cell when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relay: Option<NodeId>,
    pub start_us: SimTime,
    pub end_us: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompromiseMode {
    /// No reports and no forwarding.
    Silent,
    /// Reports keep flowing but every child alert is dropped.
    FalseData,
}

impl CompromiseMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CompromiseMode::Silent => "silent",
            CompromiseMode::FalseData => "false_data",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompromiseSpec {
    pub node: NodeId,
    pub start_us: SimTime,
    pub end_us: SimTime,
    pub mode: CompromiseMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackSpec {
    Jamming(JammingSpec),
    SlotSpoof(SpoofSpec),
    SleepReplay(SpoofSpec),
    RouteDeviation(DetourSpec),
    NodeCompromise(CompromiseSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AttackKind {
    Jamming,
    SlotSpoof,
    SleepReplay,
    RouteDeviation,
    NodeCompromise,
}

impl AttackKind {
    pub const ALL: [AttackKind; 5] = [
        AttackKind::Jamming,
        AttackKind::SlotSpoof,
        AttackKind::SleepReplay,
        AttackKind::RouteDeviation,
        AttackKind::NodeCompromise,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::Jamming => "jamming",
            AttackKind::SlotSpoof => "slot_spoof",
            AttackKind::SleepReplay => "sleep_replay",
            AttackKind::RouteDeviation => "route_deviation",
            AttackKind::NodeCompromise => "node_compromise",
        }
    }

    /// Packet-level attacks are scored per delivered packet.
    pub fn is_packet_level(self) -> bool {
        matches!(self, AttackKind::SlotSpoof | AttackKind::SleepReplay | AttackKind::RouteDeviation)
    }
}

impl AttackSpec {
    pub fn kind(&self) -> AttackKind {
        match self {
            AttackSpec::Jamming(_) => AttackKind::Jamming,
            AttackSpec::SlotSpoof(_) => AttackKind::SlotSpoof,
            AttackSpec::SleepReplay(_) => AttackKind::SleepReplay,
            AttackSpec::RouteDeviation(_) => AttackKind::RouteDeviation,
            AttackSpec::NodeCompromise(_) => AttackKind::NodeCompromise,
        }
    }

    pub fn interval(&self) -> (SimTime, SimTime) {
        match self {
            AttackSpec::Jamming(s) => (s.start_us, s.end_us),
            AttackSpec::SlotSpoof(s) | AttackSpec::SleepReplay(s) => (s.start_us, s.end_us),
            AttackSpec::RouteDeviation(s) => (s.start_us, s.end_us),
            AttackSpec::NodeCompromise(s) => (s.start_us, s.end_us),
        }
    }
}

/// One malicious event as recorded by the injector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthEvent {
    pub id: usize,
    pub attack: usize,
    pub kind: AttackKind,
    /// Injection instant, or interval start for jamming and compromise.
    pub time: SimTime,
    /// Equal to `time` for packet events.
    pub end: SimTime,
    pub target: Subject,
    pub cell: HexCoord,
    pub packet: Option<PacketId>,
    /// For packet events: whether the packet reached its cluster node.
    /// Always true for interval events.
    pub delivered: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Jammer {
    pub attack: usize,
    pub cell: HexCoord,
    pub position: Point,
    pub power_dbm: f64,
    pub start: SimTime,
    pub end: SimTime,
}

impl Jammer {
    /// Active on `[start, end)`.
    pub fn active_at(&self, t: SimTime) -> bool {
        self.start <= t && t < self.end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Compromise {
    pub attack: usize,
    pub node: NodeId,
    pub mode: CompromiseMode,
    pub start: SimTime,
    pub end: SimTime,
}

impl Compromise {
    pub fn active_at(&self, t: SimTime) -> bool {
        self.start <= t && t < self.end
    }
}

/// A spoofed or replayed packet sent by an external attacker.
#[derive(Debug, Clone, PartialEq)]
pub struct Injection {
    pub time: SimTime,
    pub packet: Packet,
    pub position: Point,
    pub truth: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detour {
    pub attack: usize,
    pub victim: NodeId,
    pub relay: NodeId,
    pub start: SimTime,
    pub end: SimTime,
}

/// Everything the engine needs to replay the attack scenario.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttackPlan {
    pub jammers: Vec<Jammer>,
    pub compromises: Vec<Compromise>,
    pub injections: Vec<Injection>,
    pub detours: Vec<Detour>,
    pub ground_truth: Vec<GroundTruthEvent>,
}

impl AttackPlan {
    pub fn is_empty(&self) -> bool {
        self.jammers.is_empty() && self.compromises.is_empty() && self.injections.is_empty() && self.detours.is_empty()
    }

    /// Compromise in force for `node` at `t`, if any.
    pub fn compromise_of(&self, node: NodeId, t: SimTime) -> Option<CompromiseMode> {
        self.compromises
            .iter()
            .find(|c| c.node == node && c.active_at(t))
            .map(|c| c.mode)
    }

    fn push_truth(&mut self, mut event: GroundTruthEvent) -> usize {
        event.id = self.ground_truth.len();
        self.ground_truth.push(event);
        self.ground_truth.len() - 1
    }
}

fn sensor_cell(topology: &Topology, index: usize, node: NodeId) -> Result<HexCoord, AttackError> {
    match topology.role(node) {
        None => Err(AttackError::UnknownNode { index, node }),
        Some(NodeRole::Sensor) => Ok(topology.cell_of(node).expect("sensors have a cell")),
        Some(_) => Err(AttackError::NotASensor { index, node }),
    }
}

fn to_point(p: [f64; 2]) -> Point {
    Point::new(p[0], p[1])
}

pub fn inject_jamming(index: usize, spec: &JammingSpec, topology: &Topology) -> Result<Jammer, AttackError> {
    if spec.start_us >= spec.end_us {
        return Err(AttackError::EmptyInterval { index, start: spec.start_us, end: spec.end_us });
    }
    if topology.cell(spec.cell).is_none() {
        return Err(AttackError::UnknownCell { index, cell: spec.cell });
    }
    let position = spec
        .position
        .map(to_point)
        .unwrap_or_else(|| spec.cell.center(topology.cell_radius()));
    Ok(Jammer {
        attack: index,
        cell: spec.cell,
        position,
        power_dbm: spec.power_dbm,
        start: spec.start_us,
        end: spec.end_us,
    })
}

/// Draw sorted injection times in `[start, end)` satisfying `accept`.
fn draw_times<R: Rng>(
    index: usize,
    spec: &SpoofSpec,
    rng: &mut R,
    accept: impl Fn(SimTime) -> bool,
) -> Result<Vec<SimTime>, AttackError> {
    let mut times = Vec::with_capacity(spec.count as usize);
    for _ in 0..spec.count {
        let mut found = None;
        for _ in 0..MAX_TIME_DRAWS {
            let t = rng.random_range(spec.start_us..spec.end_us);
            if accept(t) {
                found = Some(t);
                break;
            }
        }
        times.push(found.ok_or(AttackError::NoFeasibleTime { index })?);
    }
    times.sort_unstable();
    Ok(times)
}

fn spoof_packets(
    index: usize,
    kind: AttackKind,
    spec: &SpoofSpec,
    times: Vec<SimTime>,
    topology: &Topology,
    cell: HexCoord,
    default_power: f64,
    next_packet: &mut PacketId,
    plan: &mut AttackPlan,
) {
    let cluster = topology.cell(cell).expect("victim cell exists").cluster;
    let position = spec.position.map(to_point).unwrap_or_else(|| topology.position(spec.victim));
    let power = spec.tx_power_dbm.unwrap_or(default_power);
    for t in times {
        let id = *next_packet;
        *next_packet += 1;
        let truth = plan.push_truth(GroundTruthEvent {
            id: 0,
            attack: index,
            kind,
            time: t,
            end: t,
            target: Subject::Node(spec.victim),
            cell,
            packet: Some(id),
            delivered: false,
        });
        plan.injections.push(Injection {
            time: t,
            packet: Packet::new(id, spec.victim, cluster, PacketKind::AttackTraffic, power, t),
            position,
            truth,
        });
    }
}

/// Spoofed packets claiming `victim`, sent outside the victim's slots while the cell is awake.
pub fn inject_slot_spoof<R: Rng>(
    index: usize,
    spec: &SpoofSpec,
    topology: &Topology,
    schedules: &BTreeMap<HexCoord, CellSchedule>,
    rng: &mut R,
) -> Result<Vec<SimTime>, AttackError> {
    if spec.start_us >= spec.end_us {
        return Err(AttackError::EmptyInterval { index, start: spec.start_us, end: spec.end_us });
    }
    let cell = sensor_cell(topology, index, spec.victim)?;
    let schedule = &schedules[&cell];
    if schedule.tdma.slots_of(spec.victim).count() == schedule.tdma.frame_length as usize {
        return Err(AttackError::NoForeignSlot { index, node: spec.victim });
    }
    draw_times(index, spec, rng, |t| {
        schedule.tdma.slot_owner_at(t) != spec.victim && schedule.smac.is_awake(t)
    })
}

/// Replayed packets claiming `victim`, sent in the victim's own slot while the cell sleeps.
pub fn inject_sleep_replay<R: Rng>(
    index: usize,
    spec: &SpoofSpec,
    topology: &Topology,
    schedules: &BTreeMap<HexCoord, CellSchedule>,
    rng: &mut R,
) -> Result<Vec<SimTime>, AttackError> {
    if spec.start_us >= spec.end_us {
        return Err(AttackError::EmptyInterval { index, start: spec.start_us, end: spec.end_us });
    }
    let cell = sensor_cell(topology, index, spec.victim)?;
    let schedule = &schedules[&cell];
    if schedule.smac.always_awake() {
        return Err(AttackError::NoSleepWindow { index });
    }
    draw_times(index, spec, rng, |t| {
        schedule.tdma.slot_owner_at(t) == spec.victim && !schedule.smac.is_awake(t)
    })
    .or_else(|_| draw_times(index, spec, rng, |t| !schedule.smac.is_awake(t)))
}

/// Resolve the relay of a route-deviation spec. `best_next_hop` is the
/// victim's next hop on its expected route.
pub fn inject_route_deviation(
    index: usize,
    spec: &DetourSpec,
    topology: &Topology,
    best_next_hop: NodeId,
) -> Result<Detour, AttackError> {
    if spec.start_us >= spec.end_us {
        return Err(AttackError::EmptyInterval { index, start: spec.start_us, end: spec.end_us });
    }
    let cell = sensor_cell(topology, index, spec.victim)?;
    let relay = match spec.relay {
        Some(relay) => {
            if relay == best_next_hop {
                return Err(AttackError::NoOpDetour { index, relay });
            }
            sensor_cell(topology, index, relay)?;
            relay
        }
        None => {
            let here = topology.position(spec.victim);
            topology
                .cell(cell)
                .expect("victim cell exists")
                .sensors
                .iter()
                .copied()
                .filter(|&s| s != spec.victim)
                .min_by(|&a, &b| {
                    here.distance(topology.position(a))
                        .total_cmp(&here.distance(topology.position(b)))
                        .then(a.cmp(&b))
                })
                .ok_or(AttackError::NoOpDetour { index, relay: best_next_hop })?
        }
    };
    if relay == spec.victim {
        return Err(AttackError::NoOpDetour { index, relay });
    }
    Ok(Detour {
        attack: index,
        victim: spec.victim,
        relay,
        start: spec.start_us,
        end: spec.end_us,
    })
}

pub fn inject_node_compromise(index: usize, spec: &CompromiseSpec, topology: &Topology) -> Result<Compromise, AttackError> {
    if spec.start_us >= spec.end_us {
        return Err(AttackError::EmptyInterval { index, start: spec.start_us, end: spec.end_us });
    }
    match topology.role(spec.node) {
        None => Err(AttackError::UnknownNode { index, node: spec.node }),
        Some(NodeRole::ClusterNode | NodeRole::RegionalNode) => Ok(Compromise {
            attack: index,
            node: spec.node,
            mode: spec.mode,
            start: spec.start_us,
            end: spec.end_us,
        }),
        Some(role) => Err(AttackError::BadCompromiseTarget { index, node: spec.node, role: role.as_str() }),
    }
}

/// Turn the attack specs into a concrete plan.
///
/// Detoured workload packets are marked in `sends`. Injected packets take
/// ids from `next_packet` upwards.
pub fn plan_attacks(
    specs: &[AttackSpec],
    topology: &Topology,
    schedules: &BTreeMap<HexCoord, CellSchedule>,
    sensor_tx_power_dbm: f64,
    seed: u64,
    mut next_packet: PacketId,
    best_next_hop: impl Fn(NodeId) -> NodeId,
    sends: &mut [PlannedSend],
) -> Result<AttackPlan, AttackError> {
    let mut rng = rng::stream(seed, rng::STREAM_ATTACKS);
    let mut plan = AttackPlan::default();
    for (index, spec) in specs.iter().enumerate() {
        match spec {
            AttackSpec::Jamming(s) => {
                let j = inject_jamming(index, s, topology)?;
                plan.push_truth(GroundTruthEvent {
                    id: 0,
                    attack: index,
                    kind: AttackKind::Jamming,
                    time: j.start,
                    end: j.end,
                    target: Subject::Cell(j.cell),
                    cell: j.cell,
                    packet: None,
                    delivered: true,
                });
                plan.jammers.push(j);
            }
            AttackSpec::SlotSpoof(s) => {
                let times = inject_slot_spoof(index, s, topology, schedules, &mut rng)?;
                let cell = sensor_cell(topology, index, s.victim)?;
                spoof_packets(index, AttackKind::SlotSpoof, s, times, topology, cell, sensor_tx_power_dbm, &mut next_packet, &mut plan);
            }
            AttackSpec::SleepReplay(s) => {
                let times = inject_sleep_replay(index, s, topology, schedules, &mut rng)?;
                let cell = sensor_cell(topology, index, s.victim)?;
                spoof_packets(index, AttackKind::SleepReplay, s, times, topology, cell, sensor_tx_power_dbm, &mut next_packet, &mut plan);
            }
            AttackSpec::RouteDeviation(s) => {
                let d = inject_route_deviation(index, s, topology, best_next_hop(s.victim))?;
                let cell = topology.cell_of(d.victim).expect("victim has a cell");
                for send in sends.iter_mut() {
                    if send.sensor == d.victim && d.start <= send.time && send.time < d.end && send.detour.is_none() {
                        send.detour = Some(d.relay);
                        plan.push_truth(GroundTruthEvent {
                            id: 0,
                            attack: index,
                            kind: AttackKind::RouteDeviation,
                            time: send.time,
                            end: send.time,
                            target: Subject::Node(d.relay),
                            cell,
                            packet: Some(send.packet),
                            delivered: false,
                        });
                    }
                }
                plan.detours.push(d);
            }
            AttackSpec::NodeCompromise(s) => {
                let c = inject_node_compromise(index, s, topology)?;
                let cell = topology
                    .cell_of(c.node)
                    .or_else(|| {
                        let region = topology.node(c.node)?.region?;
                        topology.region(region)?.cells.first().copied()
                    })
                    .expect("monitors map to a cell");
                plan.push_truth(GroundTruthEvent {
                    id: 0,
                    attack: index,
                    kind: AttackKind::NodeCompromise,
                    time: c.start,
                    end: c.end,
                    target: Subject::Node(c.node),
                    cell,
                    packet: None,
                    delivered: true,
                });
                plan.compromises.push(c);
            }
        }
    }
    plan.injections.sort_by_key(|i| (i.time, i.packet.id));
    Ok(plan)
}
