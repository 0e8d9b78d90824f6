//! TDMA frames and S-MAC duty cycles, plus the two MAC-layer violation
//! predicates applied by cluster nodes.
//!
//! Slot and wake intervals are half-open `[start, end)`. Legitimate senders
//! transmit only inside their own slot while awake, so both predicates stay
//! silent on honest traffic.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::MacError;
use crate::event::SimTime;
use crate::packet::Packet;
use crate::topology::{HexCoord, NodeId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TdmaSchedule {
    pub cell: HexCoord,
    pub frame_length: u32,
    pub slot_duration_us: u64,
    slot_owner: Vec<NodeId>,
    members: BTreeSet<NodeId>,
}

/// Round-robin slot assignment in ascending id order.
pub fn build_tdma(
    cell: HexCoord,
    sensors: &[NodeId],
    frame_length: u32,
    slot_duration_us: u64,
) -> Result<TdmaSchedule, MacError> {
    if sensors.is_empty() {
        return Err(MacError::NoSensors);
    }
    if (frame_length as usize) < sensors.len() {
        return Err(MacError::FrameTooShort {
            frame_length,
            sensors: sensors.len(),
        });
    }
    let mut sorted = sensors.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let slot_owner = (0..frame_length as usize).map(|i| sorted[i % sorted.len()]).collect();
    Ok(TdmaSchedule {
        cell,
        frame_length,
        slot_duration_us,
        slot_owner,
        members: sorted.into_iter().collect(),
    })
}

impl TdmaSchedule {
    pub fn frame_us(&self) -> u64 {
        u64::from(self.frame_length) * self.slot_duration_us
    }

    pub fn slot_index_at(&self, t: SimTime) -> usize {
        ((t / self.slot_duration_us) % u64::from(self.frame_length)) as usize
    }

    pub fn slot_owner_at(&self, t: SimTime) -> NodeId {
        self.slot_owner[self.slot_index_at(t)]
    }

    pub fn owner_of_slot(&self, index: usize) -> NodeId {
        self.slot_owner[index]
    }

    pub fn slots_of(&self, node: NodeId) -> impl Iterator<Item = usize> + '_ {
        self.slot_owner
            .iter()
            .enumerate()
            .filter(move |(_, o)| **o == node)
            .map(|(i, _)| i)
    }

    pub fn is_member(&self, node: NodeId) -> bool {
        self.members.contains(&node)
    }

    pub fn members(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.members.iter().copied()
    }

    /// Whether `packet`, transmitted at `t`, used a slot not owned by its
    /// claimed origin.
    pub fn is_slot_violation(&self, packet: &Packet, t: SimTime) -> Result<bool, MacError> {
        if !self.is_member(packet.origin) {
            return Err(MacError::ForeignOrigin(packet.origin));
        }
        Ok(self.slot_owner_at(t) != packet.origin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmacSchedule {
    pub period_us: u64,
    /// Length of the wake window within each period.
    pub awake_us: u64,
    pub phase_offset_us: u64,
}

impl SmacSchedule {
    pub fn new(period_us: u64, awake_fraction: f64, phase_offset_us: u64) -> Self {
        let awake_us = ((awake_fraction * period_us as f64).round() as u64).clamp(1, period_us);
        Self {
            period_us,
            awake_us,
            phase_offset_us: phase_offset_us % period_us,
        }
    }

    pub fn awake_fraction(&self) -> f64 {
        self.awake_us as f64 / self.period_us as f64
    }

    pub fn always_awake(&self) -> bool {
        self.awake_us >= self.period_us
    }

    /// Offset of `t` within its duty cycle.
    pub fn phase_of(&self, t: SimTime) -> u64 {
        (i128::from(t) - i128::from(self.phase_offset_us)).rem_euclid(i128::from(self.period_us)) as u64
    }

    pub fn is_awake(&self, t: SimTime) -> bool {
        self.phase_of(t) < self.awake_us
    }
}

/// Both MAC schedules of one cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellSchedule {
    pub tdma: TdmaSchedule,
    pub smac: SmacSchedule,
}

impl CellSchedule {
    pub fn is_slot_violation(&self, packet: &Packet, t: SimTime) -> Result<bool, MacError> {
        self.tdma.is_slot_violation(packet, t)
    }

    /// Whether `packet` claims an origin that was asleep at `t`.
    pub fn is_sleep_violation(&self, packet: &Packet, t: SimTime) -> Result<bool, MacError> {
        if !self.tdma.is_member(packet.origin) {
            return Err(MacError::ForeignOrigin(packet.origin));
        }
        Ok(!self.smac.is_awake(t))
    }

    /// True when `[t, t + airtime)` lies inside one of `node`'s slots and one wake window.
    pub fn can_send(&self, node: NodeId, t: SimTime, airtime_us: u64) -> bool {
        let slot = self.tdma.slot_duration_us;
        let in_slot = self.tdma.slot_owner_at(t) == node && t % slot + airtime_us <= slot;
        let phase = self.smac.phase_of(t);
        in_slot && phase < self.smac.awake_us && phase + airtime_us <= self.smac.awake_us
    }

    /// Earliest `t >= after` at which `node` may send `airtime_us` of traffic.
    pub fn next_tx_opportunity(&self, node: NodeId, after: SimTime, airtime_us: u64) -> Option<SimTime> {
        let slot = self.tdma.slot_duration_us;
        let frame = self.tdma.frame_us();
        let owned: Vec<usize> = self.tdma.slots_of(node).collect();
        if owned.is_empty() || airtime_us > slot || airtime_us > self.smac.awake_us {
            return None;
        }
        let period = self.smac.period_us;
        let span = lcm(frame, period).saturating_add(frame);
        let limit = after.saturating_add(span);
        let mut frame_start = after / frame * frame;
        while frame_start <= limit {
            for &idx in &owned {
                let s = frame_start + idx as u64 * slot;
                let e = s + slot;
                if e <= after {
                    continue;
                }
                let mut c = s.max(after);
                while c + airtime_us <= e {
                    let phase = self.smac.phase_of(c);
                    if phase < self.smac.awake_us && phase + airtime_us <= self.smac.awake_us {
                        return Some(c);
                    }
                    c += period - phase;
                }
            }
            frame_start += frame;
        }
        None
    }

    /// Aligned text table: slot index, window, owner.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "cell {}  frame {} x {}us  smac period {}us awake {}us phase {}us\n",
            self.tdma.cell,
            self.tdma.frame_length,
            self.tdma.slot_duration_us,
            self.smac.period_us,
            self.smac.awake_us,
            self.smac.phase_offset_us
        );
        out.push_str("slot  start_us    end_us  owner\n");
        for i in 0..self.tdma.frame_length as usize {
            let s = i as u64 * self.tdma.slot_duration_us;
            let _ = writeln!(
                out,
                "{:>4}  {:>8}  {:>8}  {:>5}",
                i,
                s,
                s + self.tdma.slot_duration_us,
                self.tdma.owner_of_slot(i)
            );
        }
        out
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: u64, b: u64) -> u64 {
    (a / gcd(a, b)).saturating_mul(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet::PacketKind;
    use rand::Rng;

    fn ids(v: &[u32]) -> Vec<NodeId> {
        v.iter().map(|&i| NodeId(i)).collect()
    }

    fn packet_from(origin: u32) -> Packet {
        Packet::new(1, NodeId(origin), NodeId(0), PacketKind::SensorData, 0.0, 0)
    }

    #[test]
    fn one_slot_each() {
        let s = build_tdma(HexCoord::ORIGIN, &ids(&[4, 2, 3, 1]), 4, 100).unwrap();
        for i in 1..=4 {
            assert_eq!(s.slots_of(NodeId(i)).count(), 1);
        }
        assert_eq!(s.owner_of_slot(0), NodeId(1));
    }

    #[test]
    fn round_robin_pattern() {
        let s = build_tdma(HexCoord::ORIGIN, &ids(&[7, 5, 6]), 10, 100).unwrap();
        let owners: Vec<u32> = (0..10).map(|i| s.owner_of_slot(i).0).collect();
        assert_eq!(owners, vec![5, 6, 7, 5, 6, 7, 5, 6, 7, 5]);
    }

    #[test]
    fn rejects_short_frame() {
        assert_eq!(
            build_tdma(HexCoord::ORIGIN, &ids(&[1, 2, 3]), 2, 100),
            Err(MacError::FrameTooShort { frame_length: 2, sensors: 3 })
        );
    }

    #[test]
    fn owners_partition_frame() {
        for n in 1..=6u32 {
            for frame in n..=12 {
                let sensors: Vec<NodeId> = (0..n).map(NodeId).collect();
                let s = build_tdma(HexCoord::ORIGIN, &sensors, frame, 10).unwrap();
                let mut covered = vec![0; frame as usize];
                for id in &sensors {
                    let slots: Vec<usize> = s.slots_of(*id).collect();
                    assert!(!slots.is_empty());
                    for i in slots {
                        covered[i] += 1;
                    }
                }
                assert!(covered.iter().all(|&c| c == 1));
            }
        }
    }

    #[test]
    fn slot_owner_periodic() {
        let s = build_tdma(HexCoord::ORIGIN, &ids(&[1, 2, 3]), 5, 1000).unwrap();
        assert_eq!(s.slot_owner_at(0), s.owner_of_slot(0));
        assert_eq!(s.slot_owner_at(s.frame_us()), s.owner_of_slot(0));
        assert_eq!(s.slot_owner_at(999), NodeId(1));
        assert_eq!(s.slot_owner_at(1000), NodeId(2));
    }

    #[test]
    fn slot_owner_matches_timeline_replay() {
        let s = build_tdma(HexCoord::ORIGIN, &ids(&[3, 9, 4, 11]), 7, 250).unwrap();
        // replay: walk slot boundaries and record owners
        let mut timeline = Vec::new();
        let mut idx = 0usize;
        let mut t = 0u64;
        while t < 50_000 {
            timeline.push((t, t + 250, s.owner_of_slot(idx)));
            idx = (idx + 1) % 7;
            t += 250;
        }
        let mut rng = crate::rng::stream(5, 0);
        for _ in 0..10_000 {
            let q = rng.random_range(0..50_000u64);
            let owner = timeline.iter().find(|(a, b, _)| *a <= q && q < *b).unwrap().2;
            assert_eq!(s.slot_owner_at(q), owner);
        }
    }

    #[test]
    fn slot_violation_examples() {
        let s = build_tdma(HexCoord::ORIGIN, &ids(&[1, 2]), 2, 100).unwrap();
        assert_eq!(s.is_slot_violation(&packet_from(1), 50), Ok(false));
        assert_eq!(s.is_slot_violation(&packet_from(1), 150), Ok(true));
        assert_eq!(s.is_slot_violation(&packet_from(9), 50), Err(MacError::ForeignOrigin(NodeId(9))));
    }

    #[test]
    fn awake_examples() {
        let smac = SmacSchedule::new(100_000, 0.5, 30_000);
        assert!(smac.is_awake(30_000));
        assert!(smac.is_awake(79_999));
        assert!(!smac.is_awake(80_000));
        assert!(!smac.is_awake(29_999));
        let always = SmacSchedule::new(100_000, 1.0, 7);
        assert!((0..300_000).step_by(997).all(|t| always.is_awake(t)));
        let plain = SmacSchedule::new(100_000, 0.5, 0);
        for t in (0..400_000).step_by(1000) {
            assert_eq!(plain.is_awake(t), t % 100_000 < 50_000);
        }
    }

    #[test]
    fn sleep_violation_flips_at_boundaries() {
        let tdma = build_tdma(HexCoord::ORIGIN, &ids(&[1]), 1, 100).unwrap();
        let sched = CellSchedule {
            tdma,
            smac: SmacSchedule::new(1_000, 0.3, 200),
        };
        let p = packet_from(1);
        // boundary enumeration over two periods: wake starts at 200, 1200; sleep at 500, 1500
        let mut flips = Vec::new();
        let mut prev = sched.is_sleep_violation(&p, 0).unwrap();
        for t in 1..2_000 {
            let v = sched.is_sleep_violation(&p, t).unwrap();
            if v != prev {
                flips.push(t);
            }
            prev = v;
        }
        assert_eq!(flips, vec![200, 500, 1200, 1500]);
        assert_eq!(
            sched.is_sleep_violation(&packet_from(3), 0),
            Err(MacError::ForeignOrigin(NodeId(3)))
        );
    }

    #[test]
    fn opportunities_are_legal() {
        let tdma = build_tdma(HexCoord::ORIGIN, &ids(&[1, 2, 3, 4]), 10, 5_000).unwrap();
        let sched = CellSchedule {
            tdma,
            smac: SmacSchedule::new(100_000, 0.5, 15_000),
        };
        let mut rng = crate::rng::stream(8, 0);
        for _ in 0..2_000 {
            let node = NodeId(rng.random_range(1..=4));
            let after = rng.random_range(0..1_000_000u64);
            let t = sched.next_tx_opportunity(node, after, 1_024).unwrap();
            assert!(t >= after);
            assert!(sched.can_send(node, t, 1_024));
            let p = packet_from(node.0);
            assert_eq!(sched.is_slot_violation(&p, t), Ok(false));
            assert_eq!(sched.is_sleep_violation(&p, t), Ok(false));
            // nothing earlier works
            if t > after {
                assert!((after..t).step_by(97).all(|u| !sched.can_send(node, u, 1_024)));
            }
        }
    }
}
