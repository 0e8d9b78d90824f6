//! Legitimate sensor traffic and the per-cell MAC schedules it obeys.
//!
//! Each sensor emits one `SensorData` packet per reporting window. The
//! nominal emission instant sits at `EMISSION_PHASE` of the window, jittered
//! uniformly by the configured fraction, and is then moved forward to the
//! sensor's next legal transmit opportunity (own slot and wake window).

use std::collections::BTreeMap;

use rand::Rng;

use crate::config::{MacParams, WorkloadParams};
use crate::error::MacError;
use crate::event::SimTime;
use crate::mac::{build_tdma, CellSchedule, SmacSchedule};
use crate::packet::PacketId;
use crate::rng;
use crate::topology::{HexCoord, NodeId, Topology};

/// Nominal emission point as a fraction of the window.
pub const EMISSION_PHASE: f64 = 0.6;

/// TDMA and S-MAC schedules for every cell, keyed by coordinate.
pub fn cell_schedules(topology: &Topology, mac: &MacParams) -> Result<BTreeMap<HexCoord, CellSchedule>, MacError> {
    topology
        .cells()
        .map(|cell| {
            let tdma = build_tdma(cell.coord, &cell.sensors, mac.frame_length, mac.slot_duration_us)?;
            let phase = (cell.index as u64 * mac.phase_step_us) % mac.smac_period_us;
            let smac = SmacSchedule::new(mac.smac_period_us, mac.awake_fraction, phase);
            Ok((cell.coord, CellSchedule { tdma, smac }))
        })
        .collect()
}

/// One planned first-hop transmission of a sensor's data packet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedSend {
    pub time: SimTime,
    pub sensor: NodeId,
    pub cluster: NodeId,
    pub cell: HexCoord,
    pub window: u64,
    pub packet: PacketId,
    /// Relay that diverts this packet, set by route-deviation attacks.
    pub detour: Option<NodeId>,
}

/// Plan all sensor data transmissions over the horizon.
///
/// Packet ids are assigned densely from zero in `(time, sensor)` order.
pub fn workload(
    topology: &Topology,
    schedules: &BTreeMap<HexCoord, CellSchedule>,
    params: &WorkloadParams,
    airtime_us: u64,
    seed: u64,
) -> Vec<PlannedSend> {
    if !params.sensor_traffic {
        return Vec::new();
    }
    let mut rng = rng::stream(seed, rng::STREAM_WORKLOAD);
    let w = params.report_interval_us as f64;
    let jitter = params.jitter_fraction * w;
    let mut sends = Vec::new();
    for window in 0..params.windows {
        let start = window * params.report_interval_us;
        for cell in topology.cells() {
            let schedule = &schedules[&cell.coord];
            for &sensor in &cell.sensors {
                let offset = if jitter > 0.0 {
                    EMISSION_PHASE * w + rng.random_range(-jitter..=jitter)
                } else {
                    EMISSION_PHASE * w
                };
                let nominal = start + offset.round() as u64;
                let time = schedule
                    .next_tx_opportunity(sensor, nominal, airtime_us)
                    .expect("validated schedules always offer an opportunity");
                sends.push(PlannedSend {
                    time,
                    sensor,
                    cluster: cell.cluster,
                    cell: cell.coord,
                    window,
                    packet: 0,
                    detour: None,
                });
            }
        }
    }
    sends.sort_by_key(|s| (s.time, s.sensor));
    for (i, s) in sends.iter_mut().enumerate() {
        s.packet = i as PacketId;
    }
    sends
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ScenarioConfig;

    fn setup(rings: u32, spc: u32, windows: u64) -> (Topology, BTreeMap<HexCoord, CellSchedule>, ScenarioConfig) {
        let mut cfg = ScenarioConfig::default();
        cfg.topology.rings = rings;
        cfg.topology.sensors_per_cell = spc;
        cfg.workload.windows = windows;
        let topo = Topology::generate(rings, cfg.topology.cell_radius_m, spc, 1).unwrap();
        let sched = cell_schedules(&topo, &cfg.mac).unwrap();
        (topo, sched, cfg)
    }

    #[test]
    fn one_send_per_sensor_per_window() {
        let (topo, sched, cfg) = setup(0, 4, 10);
        let sends = workload(&topo, &sched, &cfg.workload, 1024, 5);
        assert_eq!(sends.len(), 40);
    }

    #[test]
    fn sends_are_legal_and_inside_their_window() {
        let (topo, sched, cfg) = setup(2, 6, 5);
        let w = cfg.workload.report_interval_us;
        let sends = workload(&topo, &sched, &cfg.workload, 1024, 9);
        for s in &sends {
            assert!(sched[&s.cell].can_send(s.sensor, s.time, 1024), "{s:?}");
            assert_eq!(s.time / w, s.window);
        }
        assert!(sends.windows(2).all(|p| p[0].time <= p[1].time));
        assert!(sends.iter().enumerate().all(|(i, s)| s.packet == i as u64));
    }

    #[test]
    fn deterministic_per_seed() {
        let (topo, sched, cfg) = setup(1, 3, 4);
        let a = workload(&topo, &sched, &cfg.workload, 1024, 2);
        let b = workload(&topo, &sched, &cfg.workload, 1024, 2);
        let c = workload(&topo, &sched, &cfg.workload, 1024, 3);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn traffic_switch_disables_sensors() {
        let (topo, sched, mut cfg) = setup(1, 3, 4);
        cfg.workload.sensor_traffic = false;
        assert!(workload(&topo, &sched, &cfg.workload, 1024, 2).is_empty());
    }
}
