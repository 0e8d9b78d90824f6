//! The discrete-event engine.
//!
//! One [`Engine`] replays one scenario under one architecture. Every random
//! draw comes from a seeded stream and events are ordered by `(time, seq)`,
//! so the [`RunLog`] is a pure function of the scenario and the seed.
//!
//! Radio rules: a hop is decided when its last bit lands, `hop_latency`
//! after it started. Jammer interference is deterministic path loss from
//! every jammer active at the hop's start. Two unicast hops addressed to the
//! same receiver with overlapping airtime both drop as collisions.

use std::collections::{BTreeMap, BTreeSet};
use std::io;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attacks::{plan_attacks, AttackPlan, CompromiseMode, GroundTruthEvent};
use crate::config::ScenarioConfig;
use crate::detection::{
    cluster_pipeline, packet_rules, regional_aggregate, watchdog_check, Alert, AlertKey, ChannelWindowStats, ChildWindow,
    ClusterWindow, DetectorThresholds, HeartbeatLedger, Observation, ReceivedPacket, RouteTable,
};
use crate::energy::{format_uj, EnergyCategory, EnergyMeter};
use crate::error::{ConfigError, SimError};
use crate::event::{EventQueue, SimTime};
use crate::mac::CellSchedule;
use crate::packet::{AlertId, Packet, PacketId, PacketKind};
use crate::radio::{dbm_sum, LinkOutcome};
use crate::rng;
use crate::topology::{HexCoord, NodeId, NodeRole, Point, Topology};
use crate::workload::{cell_schedules, workload, PlannedSend, EMISSION_PHASE};

/// Which monitoring design a run simulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Architecture {
    /// Four-layer hierarchy: cluster, regional and base-station monitors.
    Hod,
    /// Every sensor monitors its neighbours and gossips anomaly signals.
    Flat,
}

impl Architecture {
    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::Hod => "hod",
            Architecture::Flat => "flat",
        }
    }
}

/// Everything fixed before the first event: topology, schedules, routes,
/// the legitimate workload and the attack plan.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub topology: Topology,
    pub schedules: BTreeMap<HexCoord, CellSchedule>,
    pub routes: RouteTable,
    pub sends: Vec<PlannedSend>,
    pub plan: AttackPlan,
    pub thresholds: DetectorThresholds,
}

impl Scenario {
    pub fn build(config: &ScenarioConfig) -> Result<Self, SimError> {
        let cfg = config.clone().resolve();
        cfg.validate()?;
        let topology = Topology::generate(cfg.topology.rings, cfg.topology.cell_radius_m, cfg.topology.sensors_per_cell, cfg.seed)?;
        let schedules = cell_schedules(&topology, &cfg.mac)?;
        let routes = RouteTable::new(&topology, cfg.radio.short_range_m);
        let data_air = cfg.radio.airtime_us(cfg.workload.data_bytes);
        for cell in topology.cells() {
            for &s in &cell.sensors {
                if schedules[&cell.coord].next_tx_opportunity(s, 0, data_air).is_none() {
                    return Err(ConfigError::new(
                        "mac.awake_fraction",
                        format!("sensor {s} in cell {} has no slot that overlaps a wake window by {data_air}us", cell.coord),
                    )
                    .into());
                }
            }
        }
        let mut sends = workload(&topology, &schedules, &cfg.workload, data_air, cfg.seed);
        let first_attack_packet = sends.len() as PacketId;
        let best_next_hop = |v: NodeId| {
            topology
                .cell_of(v)
                .and_then(|c| topology.cell(c))
                .and_then(|c| routes.expected_route(v, c.cluster).ok())
                .and_then(|p| p.get(1).copied())
                .unwrap_or(NodeId(u32::MAX))
        };
        let plan = plan_attacks(
            &cfg.attacks,
            &topology,
            &schedules,
            cfg.radio.sensor_tx_power_dbm,
            cfg.seed,
            first_attack_packet,
            best_next_hop,
            &mut sends,
        )?;
        let thresholds = DetectorThresholds::from_config(&cfg);
        Ok(Self {
            config: cfg,
            topology,
            schedules,
            routes,
            sends,
            plan,
            thresholds,
        })
    }

    pub fn run(&self, arch: Architecture) -> Result<RunLog, SimError> {
        Engine::new(self, arch).run()
    }

    pub fn window_us(&self) -> SimTime {
        self.config.workload.report_interval_us
    }

    /// Alerts may match ground truth up to this long after the event.
    pub fn match_window_us(&self) -> SimTime {
        u64::from((self.config.detect.heartbeat_timeout + 1).max(3)) * self.window_us()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TraceKind {
    Tx,
    Rx,
    Drop,
    Rules,
    Alert,
    Signal,
    Arrival,
    Suppressed,
}

impl TraceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceKind::Tx => "tx",
            TraceKind::Rx => "rx",
            TraceKind::Drop => "drop",
            TraceKind::Rules => "rules",
            TraceKind::Alert => "alert",
            TraceKind::Signal => "signal",
            TraceKind::Arrival => "arrival",
            TraceKind::Suppressed => "suppressed",
        }
    }
}

/// One line of the event trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub time: SimTime,
    pub kind: TraceKind,
    pub src: Option<NodeId>,
    pub dst: Option<NodeId>,
    pub cell: Option<HexCoord>,
    pub outcome: String,
    pub rssi_dbm: Option<f64>,
    pub packet_kind: Option<PacketKind>,
    pub packet: Option<PacketId>,
    /// Alert records carried by this transmission.
    pub alerts: u32,
    pub charge: Option<(NodeId, EnergyCategory, u64)>,
}

impl TraceEntry {
    fn new(time: SimTime, kind: TraceKind) -> Self {
        Self {
            time,
            kind,
            src: None,
            dst: None,
            cell: None,
            outcome: String::new(),
            rssi_dbm: None,
            packet_kind: None,
            packet: None,
            alerts: 0,
            charge: None,
        }
    }
}

/// An alert together with its fate.
#[derive(Debug, Clone, PartialEq)]
pub struct AlertRecord {
    pub alert: Alert,
    /// Dropped by a compromised monitor before leaving it.
    pub suppressed: bool,
    pub base_arrival: Option<SimTime>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeCounters {
    pub sent: [u64; 7],
    pub received: [u64; 7],
    pub alert_records_sent: u64,
    pub rule_evaluations: u64,
}

impl NodeCounters {
    pub fn sent_of(&self, kind: PacketKind) -> u64 {
        self.sent[kind.index()]
    }

    pub fn ids_control_sent(&self) -> u64 {
        PacketKind::ALL
            .iter()
            .filter(|k| k.is_ids_control())
            .map(|k| self.sent[k.index()])
            .sum::<u64>()
            + self.alert_records_sent
    }
}

/// Complete record of one run.
#[derive(Debug, Clone)]
pub struct RunLog {
    pub architecture: Architecture,
    pub scenario_hash: String,
    pub seed: u64,
    pub window_us: SimTime,
    pub windows: u64,
    pub match_window_us: SimTime,
    pub trace: Vec<TraceEntry>,
    pub alerts: Vec<AlertRecord>,
    /// Flat baseline detections, one per sensor and offending packet.
    pub signals: Vec<Alert>,
    pub ground_truth: Option<Vec<GroundTruthEvent>>,
    pub energy: EnergyMeter,
    pub counters: Vec<NodeCounters>,
    pub roles: Vec<NodeRole>,
    pub stats: Vec<ChannelWindowStats>,
}

impl RunLog {
    pub fn role(&self, node: NodeId) -> NodeRole {
        self.roles[node.index()]
    }

    /// Alerts that reached the base station, in arrival order.
    pub fn base_arrivals(&self) -> Vec<crate::detection::BaseArrival> {
        let mut v: Vec<_> = self
            .alerts
            .iter()
            .filter_map(|r| {
                r.base_arrival.map(|arrival| crate::detection::BaseArrival {
                    alert: r.alert.clone(),
                    arrival,
                })
            })
            .collect();
        v.sort_by_key(|a| (a.arrival, a.alert.id));
        v
    }

    pub const TRACE_HEADER: [&'static str; 10] = [
        "time_us",
        "event_kind",
        "src",
        "dst",
        "cell",
        "outcome",
        "rssi_dbm",
        "energy_uj",
        "packet_kind",
        "packet_id",
    ];

    pub fn write_trace_csv<W: io::Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(Self::TRACE_HEADER)?;
        for e in &self.trace {
            let opt = |n: Option<NodeId>| n.map(|n| n.to_string()).unwrap_or_default();
            wr.write_record([
                e.time.to_string(),
                e.kind.as_str().to_string(),
                opt(e.src),
                opt(e.dst),
                e.cell.map(|c| c.to_string()).unwrap_or_default(),
                e.outcome.clone(),
                e.rssi_dbm.map(|r| format!("{r:.3}")).unwrap_or_default(),
                e.charge.map(|(_, _, pj)| format_uj(pj)).unwrap_or_default(),
                e.packet_kind.map(|k| k.as_str().to_string()).unwrap_or_default(),
                e.packet.map(|p| p.to_string()).unwrap_or_default(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Energy per node recomputed from the trace's charges.
    pub fn energy_from_trace(&self) -> EnergyMeter {
        let mut m = EnergyMeter::new(self.roles.len());
        for e in &self.trace {
            if let Some((n, cat, pj)) = e.charge {
                m.charge(n, cat, pj);
            }
        }
        m
    }

    /// IDS control messages counted from the trace: control transmissions
    /// plus the alert records they carry.
    pub fn ids_control_from_trace(&self) -> u64 {
        self.trace
            .iter()
            .filter(|e| e.kind == TraceKind::Tx && e.src.is_some() && e.outcome != "injected")
            .filter(|e| e.packet_kind.is_some_and(PacketKind::is_ids_control))
            .map(|e| 1 + u64::from(e.alerts))
            .sum()
    }

    /// The same count from the per-node counters.
    pub fn ids_control_from_counters(&self) -> u64 {
        self.counters.iter().map(NodeCounters::ids_control_sent).sum()
    }
}

#[derive(Debug, Clone)]
struct Transmission {
    packet: Packet,
    /// `None` for an external attacker.
    sender: Option<NodeId>,
    from: Point,
    cell: Option<HexCoord>,
    /// Addressed receiver of a unicast hop.
    hop_to: Option<NodeId>,
    /// Nodes that also hear the hop: broadcast receivers or overhearers.
    listeners: Vec<NodeId>,
    start: SimTime,
    end: SimTime,
    bytes: u32,
    long_range: bool,
}

#[derive(Debug)]
enum Ev {
    Transmit(Box<Transmission>),
    Arrive(usize),
    WindowClose(u64),
    Sense { cluster: NodeId, cell: HexCoord, window: u64, t0: SimTime, deadline: SimTime },
    RegionalEval(u64),
    BaseEval(u64),
}

pub struct Engine<'a> {
    sc: &'a Scenario,
    arch: Architecture,
    queue: EventQueue<Ev>,
    shadow: ChaCha8Rng,
    backoff: ChaCha8Rng,
    txs: Vec<Transmission>,
    active: Vec<usize>,
    next_packet: PacketId,
    trace: Vec<TraceEntry>,
    energy: EnergyMeter,
    counters: Vec<NodeCounters>,
    alerts: Vec<AlertRecord>,
    signals: Vec<Alert>,
    signal_keys: BTreeSet<(NodeId, AlertKey)>,
    truth: Vec<GroundTruthEvent>,
    truth_of_packet: BTreeMap<PacketId, usize>,
    cluster_rx: BTreeMap<NodeId, Vec<ReceivedPacket>>,
    heard_sensor: BTreeSet<(NodeId, u64)>,
    had_data: BTreeSet<(NodeId, u64)>,
    pdr: BTreeMap<(HexCoord, u64), (u32, u32)>,
    carrier_sense: BTreeMap<(HexCoord, u64), (u64, u32)>,
    stats: BTreeMap<(HexCoord, u64), ChannelWindowStats>,
    reports: BTreeMap<(NodeId, u64), Vec<AlertId>>,
    alarms_heard: BTreeMap<(NodeId, u64), usize>,
    pending: BTreeMap<NodeId, Vec<AlertId>>,
    ledgers: BTreeMap<NodeId, HeartbeatLedger>,
    violations: Vec<String>,
}

fn window_of(t: SimTime, w: SimTime) -> u64 {
    t / w
}

impl<'a> Engine<'a> {
    pub fn new(sc: &'a Scenario, arch: Architecture) -> Self {
        let n = sc.topology.nodes().len();
        let truth = sc.plan.ground_truth.clone();
        let truth_of_packet = truth.iter().filter_map(|g| g.packet.map(|p| (p, g.id))).collect();
        let next_packet = sc.sends.len() as PacketId + sc.plan.injections.len() as PacketId;
        Self {
            sc,
            arch,
            queue: EventQueue::new(),
            shadow: rng::stream(sc.config.seed, rng::STREAM_SHADOWING),
            backoff: rng::stream(sc.config.seed, rng::STREAM_BACKOFF),
            txs: Vec::new(),
            active: Vec::new(),
            next_packet,
            trace: Vec::new(),
            energy: EnergyMeter::new(n),
            counters: vec![NodeCounters::default(); n],
            alerts: Vec::new(),
            signals: Vec::new(),
            signal_keys: BTreeSet::new(),
            truth,
            truth_of_packet,
            cluster_rx: BTreeMap::new(),
            heard_sensor: BTreeSet::new(),
            had_data: BTreeSet::new(),
            pdr: BTreeMap::new(),
            carrier_sense: BTreeMap::new(),
            stats: BTreeMap::new(),
            reports: BTreeMap::new(),
            alarms_heard: BTreeMap::new(),
            pending: BTreeMap::new(),
            ledgers: BTreeMap::new(),
            violations: Vec::new(),
        }
    }

    fn cfg(&self) -> &'a ScenarioConfig {
        &self.sc.config
    }

    fn topo(&self) -> &'a Topology {
        &self.sc.topology
    }

    fn w(&self) -> SimTime {
        self.sc.config.workload.report_interval_us
    }

    fn horizon(&self) -> SimTime {
        self.cfg().horizon_us()
    }

    fn end_time(&self) -> SimTime {
        self.horizon() + self.w()
    }

    fn schedule(&mut self, t: SimTime, ev: Ev) {
        if let Err(e) = self.queue.schedule(t, ev) {
            self.violations.push(e.to_string());
        }
    }

    fn charge(&mut self, entry: &mut TraceEntry, node: NodeId, cat: EnergyCategory, pj: u64) {
        if pj > 0 {
            self.energy.charge(node, cat, pj);
            entry.charge = Some((node, cat, pj));
        }
    }

    fn compromise(&self, node: NodeId, t: SimTime) -> Option<CompromiseMode> {
        self.sc.plan.compromise_of(node, t)
    }

    fn new_packet_id(&mut self) -> PacketId {
        let id = self.next_packet;
        self.next_packet += 1;
        id
    }

    fn cell_sensors(&self, cell: HexCoord) -> &'a [NodeId] {
        &self.topo().cell(cell).expect("known cell").sensors
    }

    /// Interference level at `at` from jammers active at `t`, plus noise.
    fn interference_at(&self, at: Point, t: SimTime) -> (f64, bool) {
        let radio = &self.cfg().radio;
        let mut level = radio.noise_floor_dbm;
        let mut any = false;
        for j in self.sc.plan.jammers.iter().filter(|j| j.active_at(t)) {
            level = dbm_sum(level, radio.mean_rssi(j.power_dbm, j.position.distance(at)));
            any = true;
        }
        (level, any)
    }

    pub fn run(mut self) -> Result<RunLog, SimError> {
        self.seed_events();
        let end = self.end_time();
        let mut last = 0;
        while let Some((t, ev)) = self.queue.pop_until(end) {
            if t < last {
                self.violations.push(format!("clock went backwards from {last} to {t}"));
            }
            last = t;
            match ev {
                Ev::Transmit(tx) => self.on_transmit(t, *tx),
                Ev::Arrive(i) => self.on_arrive(t, i),
                Ev::WindowClose(k) => self.on_window_close(t, k),
                Ev::Sense { cluster, cell, window, t0, deadline } => self.on_sense(t, cluster, cell, window, t0, deadline),
                Ev::RegionalEval(k) => self.on_regional_eval(t, k),
                Ev::BaseEval(k) => self.on_base_eval(t, k),
            }
        }
        self.finish()
    }

    fn seed_events(&mut self) {
        let cfg = self.cfg();
        let sc = self.sc;
        let radio = &cfg.radio;
        let data_air = radio.airtime_us(cfg.workload.data_bytes);
        for send in &sc.sends {
            let mut p = Packet::new(send.packet, send.sensor, send.cluster, PacketKind::SensorData, radio.sensor_tx_power_dbm, send.time);
            p.window = Some(send.window);
            let hop_to = send.detour.unwrap_or(send.cluster);
            let tx = self.sensor_unicast(p, send.sensor, hop_to, send.time, cfg.workload.data_bytes);
            self.schedule(send.time, Ev::Transmit(Box::new(tx)));
        }
        for inj in &sc.plan.injections {
            let cell = self.topo().cell_of(inj.packet.origin);
            let listeners = self.overhearers(cell, None, Some(inj.packet.dst));
            let tx = Transmission {
                packet: inj.packet.clone(),
                sender: None,
                from: inj.position,
                cell,
                hop_to: Some(inj.packet.dst),
                listeners,
                start: inj.time,
                end: inj.time,
                bytes: cfg.workload.data_bytes,
                long_range: false,
            };
            self.schedule(inj.time, Ev::Transmit(Box::new(tx)));
        }
        match self.arch {
            Architecture::Hod => {
                if cfg.workload.windows > 0 {
                    self.schedule(self.w(), Ev::WindowClose(0));
                }
            }
            Architecture::Flat => {
                let ex_air = radio.airtime_us(sc.config.baseline.exchange_bytes);
                let mut exchanges: Vec<(SimTime, NodeId)> = Vec::new();
                if cfg.workload.sensor_traffic {
                    for s in &sc.sends {
                        let sched = &sc.schedules[&s.cell];
                        if let Some(t) = sched.next_tx_opportunity(s.sensor, s.time + data_air, ex_air) {
                            exchanges.push((t, s.sensor));
                        }
                    }
                } else {
                    for k in 0..cfg.workload.windows {
                        let nominal = k * self.w() + (EMISSION_PHASE * self.w() as f64) as u64;
                        for cell in self.topo().cells() {
                            for &s in &cell.sensors {
                                if let Some(t) = sc.schedules[&cell.coord].next_tx_opportunity(s, nominal, ex_air) {
                                    exchanges.push((t, s));
                                }
                            }
                        }
                    }
                }
                exchanges.sort_unstable();
                for (t, s) in exchanges {
                    let id = self.new_packet_id();
                    let tx = self.sensor_broadcast(id, s, PacketKind::NeighborExchange, t, sc.config.baseline.exchange_bytes);
                    self.schedule(t, Ev::Transmit(Box::new(tx)));
                }
            }
        }
    }

    /// Same-cell sensors that overhear a hop in the flat design.
    fn overhearers(&self, cell: Option<HexCoord>, sender: Option<NodeId>, hop_to: Option<NodeId>) -> Vec<NodeId> {
        match (self.arch, cell) {
            (Architecture::Flat, Some(c)) => self
                .cell_sensors(c)
                .iter()
                .copied()
                .filter(|&s| Some(s) != sender && Some(s) != hop_to)
                .collect(),
            _ => Vec::new(),
        }
    }

    fn sensor_unicast(&self, packet: Packet, sender: NodeId, hop_to: NodeId, t: SimTime, bytes: u32) -> Transmission {
        let cell = self.topo().cell_of(sender);
        let listeners = self.overhearers(cell, Some(sender), Some(hop_to));
        Transmission {
            packet,
            sender: Some(sender),
            from: self.topo().position(sender),
            cell,
            hop_to: Some(hop_to),
            listeners,
            start: t,
            end: t,
            bytes,
            long_range: false,
        }
    }

    fn sensor_broadcast(&self, id: PacketId, sender: NodeId, kind: PacketKind, t: SimTime, bytes: u32) -> Transmission {
        let radio = &self.cfg().radio;
        let cell = self.topo().cell_of(sender);
        let mut p = Packet::new(id, sender, sender, kind, radio.sensor_tx_power_dbm, t);
        p.window = Some(window_of(t, self.w()));
        Transmission {
            packet: p,
            sender: Some(sender),
            from: self.topo().position(sender),
            cell,
            hop_to: None,
            listeners: self.overhearers(cell, Some(sender), None),
            start: t,
            end: t,
            bytes,
            long_range: false,
        }
    }

    fn on_transmit(&mut self, t: SimTime, mut tx: Transmission) {
        let radio = &self.cfg().radio;
        let air = radio.airtime_us(tx.bytes);
        tx.start = t;
        tx.end = t + air;
        tx.packet.src = tx.sender.unwrap_or(tx.packet.src);
        let mut e = TraceEntry::new(t, TraceKind::Tx);
        e.src = Some(tx.packet.src);
        e.dst = tx.hop_to;
        e.cell = tx.cell;
        e.packet_kind = Some(tx.packet.kind);
        e.packet = Some(tx.packet.id);
        e.alerts = tx.packet.alerts.len() as u32;
        match tx.sender {
            Some(s) => {
                let distance = match tx.hop_to {
                    Some(r) => tx.from.distance(self.topo().position(r)),
                    None => radio.short_range_m,
                };
                e.outcome = "sent".into();
                let pj = self.cfg().energy.tx_pj(tx.bytes, distance);
                self.charge(&mut e, s, EnergyCategory::Tx, pj);
                let c = &mut self.counters[s.index()];
                c.sent[tx.packet.kind.index()] += 1;
                c.alert_records_sent += tx.packet.alerts.len() as u64;
            }
            None => e.outcome = "injected".into(),
        }
        self.trace.push(e);
        let latency = if tx.long_range { radio.long_range_latency_us } else { radio.hop_latency_us };
        let idx = self.txs.len();
        self.txs.push(tx);
        self.active.push(idx);
        self.schedule(t + latency, Ev::Arrive(idx));
    }

    fn collided(&self, idx: usize, receiver: NodeId) -> bool {
        let me = &self.txs[idx];
        self.active.iter().any(|&j| {
            if j == idx {
                return false;
            }
            let o = &self.txs[j];
            !o.long_range && o.hop_to == Some(receiver) && o.start < me.end && me.start < o.end
        })
    }

    fn on_arrive(&mut self, t: SimTime, idx: usize) {
        let radio = &self.cfg().radio;
        let keep_for = radio.hop_latency_us.max(radio.long_range_latency_us);
        let txs = &self.txs;
        self.active.retain(|&j| txs[j].end + keep_for >= t);
        let tx = self.txs[idx].clone();
        let latency = if tx.long_range { radio.long_range_latency_us } else { radio.hop_latency_us };
        if t != tx.start + latency {
            self.violations.push(format!("packet {} arrived at {t}, sent at {}", tx.packet.id, tx.start));
        }
        let receivers: Vec<(NodeId, bool)> = tx.hop_to.map(|r| (r, true)).into_iter().chain(tx.listeners.iter().map(|&r| (r, false))).collect();
        for (r, addressed) in receivers {
            let at = self.topo().position(r);
            let d = tx.from.distance(at);
            let outcome = if tx.long_range && radio.long_range_always_delivers {
                LinkOutcome::Delivered { rssi_dbm: radio.mean_rssi(tx.packet.tx_power_dbm, d) }
            } else {
                let rssi = radio.rssi_at(tx.packet.tx_power_dbm, d, &mut self.shadow);
                let (interference, jammed) = if tx.long_range { (radio.noise_floor_dbm, false) } else { self.interference_at(at, tx.start) };
                let collided = addressed && !tx.long_range && self.collided(idx, r);
                radio.link_outcome(rssi, interference, jammed, collided)
            };
            let mut e = TraceEntry::new(t, if outcome.is_delivered() { TraceKind::Rx } else { TraceKind::Drop });
            e.src = Some(tx.packet.src);
            e.dst = Some(r);
            e.cell = tx.cell;
            e.rssi_dbm = Some(outcome.rssi_dbm());
            e.packet_kind = Some(tx.packet.kind);
            e.packet = Some(tx.packet.id);
            e.outcome = match outcome {
                LinkOutcome::Delivered { .. } => "delivered".into(),
                LinkOutcome::Dropped { reason, .. } => reason.as_str().into(),
            };
            if outcome.is_delivered() {
                let pj = self.cfg().energy.rx_pj(tx.bytes);
                self.charge(&mut e, r, EnergyCategory::Rx, pj);
                self.counters[r.index()].received[tx.packet.kind.index()] += 1;
            }
            self.trace.push(e);
            if addressed {
                if let Some(cell) = tx.cell {
                    let entry = self.pdr.entry((cell, window_of(t, self.w()))).or_insert((0, 0));
                    entry.0 += 1;
                    entry.1 += u32::from(outcome.is_delivered());
                }
            }
            if outcome.is_delivered() {
                self.on_delivered(t, &tx, r, addressed);
            }
        }
    }

    fn on_delivered(&mut self, t: SimTime, tx: &Transmission, r: NodeId, addressed: bool) {
        let w = self.w();
        match tx.packet.kind {
            PacketKind::SensorData | PacketKind::AttackTraffic if addressed => {
                let mut p = tx.packet.clone();
                p.path.push(r);
                if r == p.dst {
                    if let Some(&g) = self.truth_of_packet.get(&p.id) {
                        self.truth[g].delivered = true;
                    }
                    if p.kind == PacketKind::SensorData {
                        self.heard_sensor.insert((p.origin, window_of(t, w)));
                        self.had_data.insert((r, window_of(t, w)));
                    }
                    if self.arch == Architecture::Hod {
                        let tx_time = t - self.cfg().radio.hop_latency_us;
                        self.cluster_rx.entry(r).or_default().push(ReceivedPacket { packet: p, tx_time, rx_time: t });
                    }
                } else {
                    // a diverting relay forwards inside the origin's own transmit opportunity
                    let cell = self.topo().cell_of(p.origin).expect("sensor origin");
                    let air = self.cfg().radio.airtime_us(tx.bytes);
                    if let Some(at) = self.sc.schedules[&cell].next_tx_opportunity(p.origin, t, air) {
                        let dst = p.dst;
                        let fwd = self.sensor_unicast(p, r, dst, at, tx.bytes);
                        self.schedule(at, Ev::Transmit(Box::new(fwd)));
                    }
                }
            }
            PacketKind::SensorData | PacketKind::AttackTraffic => {
                if self.arch == Architecture::Flat && tx.hop_to == Some(tx.packet.dst) {
                    self.flat_inspect(t, tx, r);
                }
            }
            PacketKind::ClusterReport | PacketKind::Heartbeat => {
                let cluster = tx.packet.origin;
                let window = tx.packet.window.unwrap_or(0);
                self.reports.insert((cluster, window), tx.packet.alerts.clone());
                if let Some(p) = self.pending.get_mut(&cluster) {
                    p.retain(|a| !tx.packet.alerts.contains(a));
                }
            }
            PacketKind::RegionalAlarm => {
                let regional = tx.packet.origin;
                let window = tx.packet.window.unwrap_or(0);
                self.alarms_heard.insert((regional, window), tx.packet.alerts.len());
                for &id in &tx.packet.alerts {
                    let rec = &mut self.alerts[id as usize];
                    if rec.base_arrival.is_none() {
                        rec.base_arrival = Some(t);
                        rec.alert.hop_trail.push(r);
                        let mut e = TraceEntry::new(t, TraceKind::Arrival);
                        e.src = Some(rec.alert.detected_by);
                        e.dst = Some(r);
                        e.cell = Some(rec.alert.cell);
                        e.outcome = rec.alert.rule.as_str().into();
                        self.trace.push(e);
                    }
                }
                if let Some(p) = self.pending.get_mut(&regional) {
                    p.retain(|a| !tx.packet.alerts.contains(a));
                }
            }
            PacketKind::NeighborExchange | PacketKind::AnomalySignal => {}
        }
    }

    /// Flat design: an overhearing sensor applies the packet rules itself.
    fn flat_inspect(&mut self, t: SimTime, tx: &Transmission, sensor: NodeId) {
        let Some(cell) = self.topo().cell_of(sensor) else { return };
        let mut p = tx.packet.clone();
        p.path.push(p.dst);
        let rp = ReceivedPacket {
            packet: p,
            tx_time: tx.start,
            rx_time: t,
        };
        let window = window_of(t, self.w());
        let (found, evals) = packet_rules(&rp, &self.sc.schedules[&cell], &self.sc.routes, window, t, sensor);
        let mut e = TraceEntry::new(t, TraceKind::Rules);
        e.src = Some(sensor);
        e.cell = Some(cell);
        e.outcome = format!("evaluations={evals}");
        let pj = self.cfg().energy.rules_pj(evals);
        self.charge(&mut e, sensor, EnergyCategory::Rules, pj);
        self.counters[sensor.index()].rule_evaluations += evals;
        self.trace.push(e);
        for sig in found {
            if !self.signal_keys.insert((sensor, sig.key())) {
                continue;
            }
            let mut e = TraceEntry::new(t, TraceKind::Signal);
            e.src = Some(sensor);
            e.cell = Some(cell);
            e.outcome = sig.rule.as_str().into();
            e.packet = sig.evidence.packet();
            self.trace.push(e);
            self.signals.push(sig);
            let bytes = self.cfg().baseline.anomaly_bytes;
            let air = self.cfg().radio.airtime_us(bytes);
            if let Some(at) = self.sc.schedules[&cell].next_tx_opportunity(sensor, t, air) {
                let id = self.new_packet_id();
                let b = self.sensor_broadcast(id, sensor, PacketKind::AnomalySignal, at, bytes);
                self.schedule(at, Ev::Transmit(Box::new(b)));
            }
        }
    }

    fn record_alert(&mut self, mut alert: Alert, suppressed: bool) -> AlertId {
        let id = self.alerts.len() as AlertId;
        alert.id = id;
        let mut e = TraceEntry::new(alert.detected_at, if suppressed { TraceKind::Suppressed } else { TraceKind::Alert });
        e.src = Some(alert.detected_by);
        e.cell = Some(alert.cell);
        e.outcome = alert.rule.as_str().into();
        e.packet = alert.evidence.packet();
        self.trace.push(e);
        self.alerts.push(AlertRecord {
            alert,
            suppressed,
            base_arrival: None,
        });
        id
    }

    fn charge_rules(&mut self, t: SimTime, node: NodeId, evals: u64) {
        let mut e = TraceEntry::new(t, TraceKind::Rules);
        e.src = Some(node);
        e.cell = self.topo().cell_of(node);
        e.outcome = format!("evaluations={evals}");
        let pj = self.cfg().energy.rules_pj(evals);
        self.charge(&mut e, node, EnergyCategory::Rules, pj);
        self.counters[node.index()].rule_evaluations += evals;
        self.trace.push(e);
    }

    fn window_stats(&self, cell: HexCoord, k: SimTime) -> ChannelWindowStats {
        let w = self.w();
        let radio = &self.cfg().radio;
        let (sent, delivered) = self.pdr.get(&(cell, k)).copied().unwrap_or((0, 0));
        let cluster_at = cell.center(self.topo().cell_radius());
        let start = k * w;
        let tick = radio.sense_tick_us;
        let mut n = 0u64;
        let mut sum = 0.0;
        let mut t = start;
        while t < start + w {
            sum += self.interference_at(cluster_at, t).0;
            n += 1;
            t += tick;
        }
        let (cs_sum, cs_n) = self.carrier_sense.get(&(cell, k)).copied().unwrap_or((0, 0));
        ChannelWindowStats {
            cell,
            window: k,
            start,
            end: start + w,
            sent,
            delivered,
            pdr: ChannelWindowStats::pdr_of(sent, delivered),
            mean_idle_rssi_dbm: sum / n as f64,
            mean_carrier_sense_us: if cs_n == 0 { 0.0 } else { cs_sum as f64 / f64::from(cs_n) },
        }
    }

    fn on_window_close(&mut self, t: SimTime, k: u64) {
        let sc = self.sc;
        let cfg = &sc.config;
        for cell in sc.topology.cells() {
            let stats = self.window_stats(cell.coord, k);
            self.stats.insert((cell.coord, k), stats.clone());
            let cluster = cell.cluster;
            let mode = self.compromise(cluster, t);
            let buffered = self.cluster_rx.remove(&cluster).unwrap_or_default();
            let (now_packets, later): (Vec<_>, Vec<_>) = buffered.into_iter().partition(|p| p.rx_time < t);
            if !later.is_empty() {
                self.cluster_rx.insert(cluster, later);
            }
            if mode == Some(CompromiseMode::Silent) {
                continue;
            }
            let input = ClusterWindow {
                cluster,
                window: k,
                now: t,
                packets: &now_packets,
                stats: &stats,
                schedule: &sc.schedules[&cell.coord],
            };
            let out = cluster_pipeline(&input, &sc.routes, &sc.thresholds);
            let mut evals = out.evaluations;
            let mut found = out.alerts;
            if cfg.workload.sensor_traffic {
                let ledger = self.ledgers.entry(cluster).or_default();
                for &s in &cell.sensors {
                    let obs = if self.heard_sensor.contains(&(s, k)) {
                        Observation::Heard { alerts: 0, anomaly: false }
                    } else {
                        Observation::Missing
                    };
                    ledger.observe(s, obs);
                    evals += 1;
                    match watchdog_check(&sc.topology, cluster, s, ledger, &sc.thresholds, k, t) {
                        Ok(Some(a)) => found.push(a),
                        Ok(None) => {}
                        Err(e) => self.violations.push(e.to_string()),
                    }
                }
            }
            self.charge_rules(t, cluster, evals);
            let suppress = mode == Some(CompromiseMode::FalseData);
            for a in found {
                let id = self.record_alert(a, suppress);
                if !suppress {
                    self.pending.entry(cluster).or_default().push(id);
                }
            }
            let at = t + cell.index as u64 * cfg.workload.report_spacing_us;
            let backoff = self.backoff.random_range(0..cfg.radio.backoff_window_us.max(1));
            self.schedule(
                at + backoff,
                Ev::Sense {
                    cluster,
                    cell: cell.coord,
                    window: k,
                    t0: at,
                    deadline: at + backoff + cfg.radio.carrier_sense_timeout_us,
                },
            );
        }
        self.schedule(t + self.w() / 2, Ev::RegionalEval(k));
        self.schedule(t + 3 * self.w() / 4, Ev::BaseEval(k));
        if k + 1 < cfg.workload.windows {
            self.schedule(t + self.w(), Ev::WindowClose(k + 1));
        }
    }

    /// Channel level at the cluster from jammers and ongoing hops; the
    /// earliest time a contributing source stops, if any.
    fn channel_busy_until(&self, at: Point, t: SimTime) -> Option<SimTime> {
        let radio = &self.cfg().radio;
        let mut level = radio.noise_floor_dbm;
        let mut next_change: Option<SimTime> = None;
        let mut bump = |end: SimTime| next_change = Some(next_change.map_or(end, |n: SimTime| n.min(end)));
        for j in self.sc.plan.jammers.iter().filter(|j| j.active_at(t)) {
            level = dbm_sum(level, radio.mean_rssi(j.power_dbm, j.position.distance(at)));
            bump(j.end);
        }
        for &i in &self.active {
            let o = &self.txs[i];
            if !o.long_range && o.start <= t && t < o.end {
                level = dbm_sum(level, radio.mean_rssi(o.packet.tx_power_dbm, o.from.distance(at)));
                bump(o.end);
            }
        }
        (level > radio.cca_threshold_dbm).then(|| next_change.unwrap_or(t + radio.sense_tick_us))
    }

    fn on_sense(&mut self, t: SimTime, cluster: NodeId, cell: HexCoord, window: u64, t0: SimTime, deadline: SimTime) {
        if self.compromise(cluster, t) == Some(CompromiseMode::Silent) {
            return;
        }
        let at = self.topo().position(cluster);
        if t < deadline {
            if let Some(until) = self.channel_busy_until(at, t) {
                self.schedule(until.min(deadline), Ev::Sense { cluster, cell, window, t0, deadline });
                return;
            }
        }
        let entry = self.carrier_sense.entry((cell, window_of(t, self.w()))).or_insert((0, 0));
        entry.0 += t - t0;
        entry.1 += 1;

        let cfg = self.cfg();
        if self.compromise(cluster, t) == Some(CompromiseMode::FalseData) {
            for id in self.pending.remove(&cluster).unwrap_or_default() {
                self.alerts[id as usize].suppressed = true;
            }
        }
        let alerts = self.pending.get(&cluster).cloned().unwrap_or_default();
        let regional = self.topo().regional_of_cell(cell).expect("every cell has a regional node");
        let kind = if alerts.is_empty() && !self.had_data.contains(&(cluster, window)) {
            PacketKind::Heartbeat
        } else {
            PacketKind::ClusterReport
        };
        let id = self.new_packet_id();
        let mut p = Packet::new(id, cluster, regional, kind, cfg.radio.monitor_tx_power_dbm, t);
        p.window = Some(window);
        p.alerts = alerts;
        let tx = Transmission {
            packet: p,
            sender: Some(cluster),
            from: at,
            cell: Some(cell),
            hop_to: Some(regional),
            listeners: Vec::new(),
            start: t,
            end: t,
            bytes: cfg.workload.report_bytes,
            long_range: false,
        };
        self.on_transmit(t, tx);
    }

    fn on_regional_eval(&mut self, t: SimTime, k: u64) {
        let sc = self.sc;
        for region in sc.topology.regions() {
            let regional = region.regional;
            let mode = self.compromise(regional, t);
            if mode == Some(CompromiseMode::Silent) {
                continue;
            }
            let children: Vec<ChildWindow> = region
                .cells
                .iter()
                .map(|&c| {
                    let cluster = sc.topology.cell(c).expect("region cell").cluster;
                    let report = self
                        .reports
                        .remove(&(cluster, k))
                        .map(|ids| ids.iter().map(|&i| self.alerts[i as usize].alert.clone()).collect());
                    ChildWindow {
                        cluster,
                        cell: c,
                        report,
                        overheard: self.stats[&(c, k)].clone(),
                    }
                })
                .collect();
            let ledger = self.ledgers.entry(regional).or_default();
            let out = match regional_aggregate(&sc.topology, regional, k, t, &children, ledger, &sc.thresholds) {
                Ok(o) => o,
                Err(e) => {
                    self.violations.push(e.to_string());
                    continue;
                }
            };
            self.charge_rules(t, regional, out.evaluations);
            let suppress = mode == Some(CompromiseMode::FalseData);
            for f in &out.forwarded {
                let rec = &mut self.alerts[f.id as usize];
                if suppress {
                    rec.suppressed = true;
                } else {
                    rec.alert.hop_trail = f.hop_trail.clone();
                    self.pending.entry(regional).or_default().push(f.id);
                }
            }
            for a in out.raised {
                let id = self.record_alert(a, suppress);
                if !suppress {
                    self.pending.entry(regional).or_default().push(id);
                }
            }
            let radio = &sc.config.radio;
            let base = sc.topology.base_station();
            let id = self.new_packet_id();
            let mut p = Packet::new(id, regional, base, PacketKind::RegionalAlarm, radio.long_range_tx_power_dbm, t);
            p.window = Some(k);
            p.alerts = self.pending.get(&regional).cloned().unwrap_or_default();
            let tx = Transmission {
                packet: p,
                sender: Some(regional),
                from: sc.topology.position(regional),
                cell: None,
                hop_to: Some(base),
                listeners: Vec::new(),
                start: t,
                end: t,
                bytes: sc.config.workload.alarm_bytes,
                long_range: true,
            };
            self.on_transmit(t, tx);
        }
    }

    fn on_base_eval(&mut self, t: SimTime, k: u64) {
        let sc = self.sc;
        let base = sc.topology.base_station();
        let regionals: Vec<NodeId> = sc.topology.regions().map(|r| r.regional).collect();
        let mut found = Vec::new();
        {
            let ledger = self.ledgers.entry(base).or_default();
            for &r in &regionals {
                let obs = match self.alarms_heard.get(&(r, k)) {
                    Some(&n) => Observation::Heard { alerts: n, anomaly: false },
                    None => Observation::Missing,
                };
                ledger.observe(r, obs);
                match watchdog_check(&sc.topology, base, r, ledger, &sc.thresholds, k, t) {
                    Ok(Some(a)) => found.push(a),
                    Ok(None) => {}
                    Err(e) => self.violations.push(e.to_string()),
                }
            }
        }
        self.charge_rules(t, base, regionals.len() as u64);
        for a in found {
            let id = self.record_alert(a, false);
            self.alerts[id as usize].base_arrival = Some(t);
        }
    }

    fn finish(mut self) -> Result<RunLog, SimError> {
        let roles: Vec<NodeRole> = self.topo().nodes().iter().map(|n| n.role).collect();
        for rec in &self.alerts {
            let a = &rec.alert;
            if roles[a.detected_by.index()] == NodeRole::Sensor {
                self.violations.push(format!("alert {} detected by sensor {}", a.id, a.detected_by));
            }
            let ranks: Vec<NodeRole> = a.hop_trail.iter().map(|n| roles[n.index()]).collect();
            if !ranks.windows(2).all(|p| p[0] < p[1]) || a.hop_trail.first() != Some(&a.detected_by) {
                self.violations.push(format!("alert {} has a non-ascending hop trail", a.id));
            }
        }
        let stats: Vec<ChannelWindowStats> = std::mem::take(&mut self.stats).into_values().collect();
        let log = RunLog {
            architecture: self.arch,
            scenario_hash: self.sc.config.scenario_hash(),
            seed: self.sc.config.seed,
            window_us: self.w(),
            windows: self.sc.config.workload.windows,
            match_window_us: self.sc.match_window_us(),
            trace: self.trace,
            alerts: self.alerts,
            signals: self.signals,
            ground_truth: Some(self.truth),
            energy: self.energy,
            counters: self.counters,
            roles,
            stats,
        };
        if log.energy_from_trace() != log.energy {
            self.violations.push("energy ledger differs from the trace".into());
        }
        if log.ids_control_from_trace() != log.ids_control_from_counters() {
            self.violations.push("control-message tallies disagree".into());
        }
        match self.violations.first() {
            Some(v) => Err(SimError::Invariant(v.clone())),
            None => Ok(log),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::{AttackSpec, SpoofSpec};
    use crate::detection::Rule;

    fn cfg(rings: u32, spc: u32, windows: u64) -> ScenarioConfig {
        let mut c = ScenarioConfig::default();
        c.topology.rings = rings;
        c.topology.sensors_per_cell = spc;
        c.workload.windows = windows;
        c.resolve()
    }

    #[test]
    fn attack_free_hod_run_is_clean() {
        let sc = Scenario::build(&cfg(1, 4, 5)).unwrap();
        let log = sc.run(Architecture::Hod).unwrap();
        assert!(log.alerts.iter().all(|a| !a.alert.rule.is_deterministic()), "{:?}", log.alerts);
        let data = log.counters.iter().map(|c| c.sent_of(PacketKind::SensorData)).sum::<u64>();
        assert_eq!(data, 7 * 4 * 5);
        let reports: u64 = log.counters.iter().map(|c| c.sent_of(PacketKind::ClusterReport) + c.sent_of(PacketKind::Heartbeat)).sum();
        assert_eq!(reports, 7 * 5);
        let alarms: u64 = log.counters.iter().map(|c| c.sent_of(PacketKind::RegionalAlarm)).sum();
        assert_eq!(alarms, sc.topology.regions().count() as u64 * 5);
    }

    #[test]
    fn empty_workload_sends_only_heartbeats() {
        let mut c = cfg(1, 3, 4);
        c.workload.sensor_traffic = false;
        let log = Scenario::build(&c).unwrap().run(Architecture::Hod).unwrap();
        let kinds: BTreeSet<PacketKind> = log.trace.iter().filter(|e| e.kind == TraceKind::Tx).filter_map(|e| e.packet_kind).collect();
        assert_eq!(kinds, BTreeSet::from([PacketKind::Heartbeat, PacketKind::RegionalAlarm]));
    }

    #[test]
    fn spoofs_ripple_to_base() {
        let mut c = cfg(1, 4, 6);
        let sc0 = Scenario::build(&c).unwrap();
        let victim = sc0.topology.cells().next().unwrap().sensors[0];
        c.attacks.push(AttackSpec::SlotSpoof(SpoofSpec {
            victim,
            start_us: 500_000,
            end_us: 3_000_000,
            count: 5,
            tx_power_dbm: None,
            position: None,
        }));
        let sc = Scenario::build(&c).unwrap();
        let log = sc.run(Architecture::Hod).unwrap();
        let gt = log.ground_truth.as_ref().unwrap();
        let delivered = gt.iter().filter(|g| g.delivered).count();
        let at_base = log
            .alerts
            .iter()
            .filter(|r| r.alert.rule == Rule::SlotViolation && r.base_arrival.is_some())
            .count();
        assert_eq!(at_base, delivered);
        for r in log.alerts.iter().filter(|r| r.base_arrival.is_some() && r.alert.detected_by != sc.topology.base_station()) {
            assert_eq!(r.alert.hop_trail.len(), 3);
        }
    }

    #[test]
    fn sensors_without_an_awake_slot_are_rejected() {
        let mut c = cfg(0, 10, 4);
        c.mac.frame_length = 20;
        c.mac.awake_fraction = 0.3;
        let err = Scenario::build(&c).unwrap_err();
        assert!(matches!(err, SimError::Config(ref e) if e.key == "mac.awake_fraction"), "{err}");
    }

    #[test]
    fn same_seed_same_trace() {
        let sc = Scenario::build(&cfg(1, 3, 4)).unwrap();
        let a = sc.run(Architecture::Flat).unwrap();
        let b = sc.run(Architecture::Flat).unwrap();
        assert_eq!(a.trace, b.trace);
    }
}
