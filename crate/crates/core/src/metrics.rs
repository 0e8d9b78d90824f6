//! Scoring of run logs against ground truth and the HOD-versus-flat
//! comparison.
//!
//! HOD detections are the alerts that reached the base station. Flat
//! detections are the sensors' anomaly signals, since that design has no
//! aggregation point. An alert that matches no event and is not a side
//! effect of an injected attack is a false positive.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;

use serde::Serialize;

use crate::attacks::{AttackKind, GroundTruthEvent};
use crate::detection::{is_attack_side_effect, matching_truth, Alert, Rule};
use crate::energy::pj_to_joules;
use crate::engine::{Architecture, RunLog, Scenario};
use crate::error::{MetricsError, SimError};
use crate::event::SimTime;
use crate::packet::PacketKind;
use crate::topology::NodeRole;

/// Detected and total ground-truth events of one attack kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct KindScore {
    pub detected: u32,
    pub total: u32,
}

impl KindScore {
    pub fn rate(&self) -> f64 {
        f64::from(self.detected) / f64::from(self.total)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub architecture: Architecture,
    pub scenario_hash: String,
    pub seed: u64,
    pub windows: u64,
    /// Only kinds with at least one scoreable event appear.
    pub detection: BTreeMap<AttackKind, KindScore>,
    pub false_positives: BTreeMap<Rule, u32>,
    pub latency_mean_us: Option<f64>,
    pub latency_max_us: Option<SimTime>,
    pub energy_j: BTreeMap<NodeRole, f64>,
    pub messages: BTreeMap<NodeRole, u64>,
    pub ids_control_message_count: u64,
    pub mean_sensor_energy_j: f64,
    pub rule_evaluations: BTreeMap<NodeRole, u64>,
    /// Distinct detection rules each role runs, a stand-in for IDS memory.
    pub rules_per_role: BTreeMap<NodeRole, u32>,
}

impl Metrics {
    pub fn detection_rate(&self, kind: AttackKind) -> Option<f64> {
        self.detection.get(&kind).map(KindScore::rate)
    }

    pub fn false_positive_count(&self, rule: Rule) -> u32 {
        self.false_positives.get(&rule).copied().unwrap_or(0)
    }

    pub fn total_false_positives(&self) -> u32 {
        self.false_positives.values().sum()
    }

    /// `(metric, key, value)` rows in a fixed order.
    pub fn rows(&self) -> Vec<(&'static str, String, String)> {
        let mut rows = vec![
            ("architecture", String::new(), self.architecture.as_str().to_string()),
            ("scenario_hash", String::new(), self.scenario_hash.clone()),
            ("seed", String::new(), self.seed.to_string()),
            ("windows", String::new(), self.windows.to_string()),
        ];
        for kind in AttackKind::ALL {
            if let Some(s) = self.detection.get(&kind) {
                rows.push(("detection_rate", kind.as_str().into(), format!("{:.6}", s.rate())));
                rows.push(("detected_events", kind.as_str().into(), s.detected.to_string()));
                rows.push(("ground_truth_events", kind.as_str().into(), s.total.to_string()));
            }
        }
        for rule in Rule::ALL {
            rows.push(("false_positives", rule.as_str().into(), self.false_positive_count(rule).to_string()));
        }
        let opt = |v: Option<String>| v.unwrap_or_default();
        rows.push(("latency_mean_us", String::new(), opt(self.latency_mean_us.map(|l| format!("{l:.1}")))));
        rows.push(("latency_max_us", String::new(), opt(self.latency_max_us.map(|l| l.to_string()))));
        for role in NodeRole::ALL {
            rows.push(("energy_j", role.as_str().into(), format!("{:.9}", self.energy_j[&role])));
        }
        for role in NodeRole::ALL {
            rows.push(("messages", role.as_str().into(), self.messages[&role].to_string()));
        }
        rows.push(("ids_control_message_count", String::new(), self.ids_control_message_count.to_string()));
        rows.push(("mean_sensor_energy_j", String::new(), format!("{:.9}", self.mean_sensor_energy_j)));
        for role in NodeRole::ALL {
            rows.push(("rule_evaluations", role.as_str().into(), self.rule_evaluations[&role].to_string()));
        }
        for role in NodeRole::ALL {
            rows.push(("rules_per_role", role.as_str().into(), self.rules_per_role[&role].to_string()));
        }
        rows
    }

    pub fn write_csv<W: io::Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["metric", "key", "value"])?;
        for (m, k, v) in self.rows() {
            wr.write_record([m, k.as_str(), v.as_str()])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (m, k, v) in self.rows() {
            let _ = writeln!(s, "{:<28} {:<20} {:>16}", m, k, v);
        }
        s
    }
}

/// Rules each role evaluates under an architecture.
pub fn rules_per_role(arch: Architecture) -> BTreeMap<NodeRole, u32> {
    let counts = match arch {
        // cluster: jamming, three MAC rules, route, sensor liveness
        // regional: liveness and suppression; base: liveness
        Architecture::Hod => [0, 6, 2, 1],
        Architecture::Flat => [Rule::DETERMINISTIC.len() as u32, 0, 0, 0],
    };
    NodeRole::ALL.into_iter().zip(counts).collect()
}

/// The alerts an architecture is scored on, with their effective time.
fn detections(log: &RunLog) -> Vec<(&Alert, SimTime)> {
    match log.architecture {
        Architecture::Hod => log
            .alerts
            .iter()
            .filter_map(|r| r.base_arrival.map(|t| (&r.alert, t)))
            .collect(),
        Architecture::Flat => log.signals.iter().map(|a| (a, a.detected_at)).collect(),
    }
}

/// Packet-level events count only when the packet was delivered.
fn scoreable(g: &GroundTruthEvent) -> bool {
    !g.kind.is_packet_level() || g.delivered
}

pub fn score(log: &RunLog) -> Result<Metrics, MetricsError> {
    let truth = log.ground_truth.as_deref().ok_or(MetricsError::MissingGroundTruth)?;
    let found = detections(log);
    let win = log.match_window_us;

    let mut detection: BTreeMap<AttackKind, KindScore> = BTreeMap::new();
    let mut latencies = Vec::new();
    for g in truth.iter().filter(|g| scoreable(g)) {
        let entry = detection.entry(g.kind).or_default();
        entry.total += 1;
        let first = found
            .iter()
            .filter(|(a, _)| matching_truth(a, std::slice::from_ref(g), win).is_some())
            .map(|&(_, t)| t)
            .min();
        if let Some(t) = first {
            entry.detected += 1;
            latencies.push(t.saturating_sub(g.time));
        }
    }

    let mut false_positives = BTreeMap::new();
    for (a, _) in &found {
        let matched = truth.iter().any(|g| matching_truth(a, std::slice::from_ref(g), win).is_some());
        if !matched && !is_attack_side_effect(a, truth, win) {
            *false_positives.entry(a.rule).or_insert(0) += 1;
        }
    }

    let mut energy_pj: BTreeMap<NodeRole, u64> = NodeRole::ALL.into_iter().map(|r| (r, 0)).collect();
    let mut messages: BTreeMap<NodeRole, u64> = NodeRole::ALL.into_iter().map(|r| (r, 0)).collect();
    let mut evals: BTreeMap<NodeRole, u64> = NodeRole::ALL.into_iter().map(|r| (r, 0)).collect();
    for (node, e) in log.energy.iter() {
        let role = log.role(node);
        *energy_pj.get_mut(&role).expect("all roles") += e.total_pj();
        let c = &log.counters[node.index()];
        *messages.get_mut(&role).expect("all roles") += PacketKind::ALL.iter().map(|&k| c.sent_of(k)).sum::<u64>();
        *evals.get_mut(&role).expect("all roles") += c.rule_evaluations;
    }
    let sensors = log.roles.iter().filter(|&&r| r == NodeRole::Sensor).count();
    let mean_sensor_energy_j = if sensors == 0 {
        0.0
    } else {
        pj_to_joules(energy_pj[&NodeRole::Sensor]) / sensors as f64
    };

    Ok(Metrics {
        architecture: log.architecture,
        scenario_hash: log.scenario_hash.clone(),
        seed: log.seed,
        windows: log.windows,
        detection,
        false_positives,
        latency_mean_us: (!latencies.is_empty()).then(|| latencies.iter().sum::<u64>() as f64 / latencies.len() as f64),
        latency_max_us: latencies.iter().copied().max(),
        energy_j: energy_pj.into_iter().map(|(r, pj)| (r, pj_to_joules(pj))).collect(),
        messages,
        ids_control_message_count: log.ids_control_from_trace(),
        mean_sensor_energy_j,
        rule_evaluations: evals,
        rules_per_role: rules_per_role(log.architecture),
    })
}

/// Runs the flat per-sensor IDS on the same scenario and scores it.
pub fn flat_baseline(scenario: &Scenario) -> Result<Metrics, SimError> {
    let log = scenario.run(Architecture::Flat)?;
    Ok(score(&log).expect("engine logs always carry ground truth"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub field: String,
    pub hod: f64,
    pub flat: f64,
    pub delta: f64,
    /// `hod / flat`; empty when `flat` is zero.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub scenario_hash: String,
    pub tolerance: f64,
    pub rows: Vec<ComparisonRow>,
    pub fewer_control_messages: bool,
    pub lower_sensor_energy: bool,
    /// Every attack kind's HOD detection rate is at least the flat rate minus the tolerance.
    pub detection_within_tolerance: bool,
}

impl ComparisonReport {
    pub fn hod_satisfied(&self) -> bool {
        self.fewer_control_messages && self.lower_sensor_energy && self.detection_within_tolerance
    }

    pub fn row(&self, field: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.field == field)
    }

    pub fn write_csv<W: io::Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["field", "hod", "flat", "delta", "ratio"])?;
        for r in &self.rows {
            wr.write_record([
                r.field.clone(),
                format!("{:.9}", r.hod),
                format!("{:.9}", r.flat),
                format!("{:.9}", r.delta),
                r.ratio.map(|x| format!("{x:.6}")).unwrap_or_default(),
            ])?;
        }
        for (name, flag) in self.flags() {
            wr.write_record([name.to_string(), String::new(), String::new(), String::new(), flag.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }

    fn flags(&self) -> [(&'static str, bool); 4] {
        [
            ("fewer_control_messages", self.fewer_control_messages),
            ("lower_sensor_energy", self.lower_sensor_energy),
            ("detection_within_tolerance", self.detection_within_tolerance),
            ("hod_satisfied", self.hod_satisfied()),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<34} {:>16} {:>16} {:>16} {:>10}", "field", "hod", "flat", "delta", "ratio");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<34} {:>16.6} {:>16.6} {:>16.6} {:>10}",
                r.field,
                r.hod,
                r.flat,
                r.delta,
                r.ratio.map_or("-".to_string(), |x| format!("{x:.4}"))
            );
        }
        let _ = writeln!(s, "\ndetection tolerance: {}", self.tolerance);
        for (name, flag) in self.flags() {
            let _ = writeln!(s, "{name:<28} {flag}");
        }
        s
    }
}

pub fn compare(hod: &Metrics, flat: &Metrics, tolerance: f64) -> Result<ComparisonReport, MetricsError> {
    if hod.scenario_hash != flat.scenario_hash {
        return Err(MetricsError::ScenarioMismatch(hod.scenario_hash.clone(), flat.scenario_hash.clone()));
    }
    let mut rows = Vec::new();
    let mut push = |field: String, h: f64, f: f64| {
        rows.push(ComparisonRow {
            field,
            hod: h,
            flat: f,
            delta: h - f,
            ratio: (f != 0.0).then(|| h / f),
        });
    };
    push("ids_control_message_count".into(), hod.ids_control_message_count as f64, flat.ids_control_message_count as f64);
    push("mean_sensor_energy_j".into(), hod.mean_sensor_energy_j, flat.mean_sensor_energy_j);
    for role in NodeRole::ALL {
        push(format!("energy_j.{}", role.as_str()), hod.energy_j[&role], flat.energy_j[&role]);
    }
    for role in NodeRole::ALL {
        push(format!("messages.{}", role.as_str()), hod.messages[&role] as f64, flat.messages[&role] as f64);
    }
    for role in NodeRole::ALL {
        push(format!("rules_per_role.{}", role.as_str()), f64::from(hod.rules_per_role[&role]), f64::from(flat.rules_per_role[&role]));
    }
    let mut within = true;
    for kind in AttackKind::ALL {
        let (h, f) = (hod.detection_rate(kind), flat.detection_rate(kind));
        if h.is_none() && f.is_none() {
            continue;
        }
        let (h, f) = (h.unwrap_or(0.0), f.unwrap_or(0.0));
        within &= h >= f - tolerance;
        push(format!("detection_rate.{}", kind.as_str()), h, f);
    }
    push("false_positives".into(), f64::from(hod.total_false_positives()), f64::from(flat.total_false_positives()));
    Ok(ComparisonReport {
        scenario_hash: hod.scenario_hash.clone(),
        tolerance,
        rows,
        fewer_control_messages: hod.ids_control_message_count < flat.ids_control_message_count,
        lower_sensor_energy: hod.mean_sensor_energy_j < flat.mean_sensor_energy_j,
        detection_within_tolerance: within,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::{AttackSpec, SpoofSpec};
    use crate::config::ScenarioConfig;

    fn cfg(rings: u32, spc: u32, windows: u64) -> ScenarioConfig {
        let mut c = ScenarioConfig::default();
        c.topology.rings = rings;
        c.topology.sensors_per_cell = spc;
        c.workload.windows = windows;
        c
    }

    #[test]
    fn attack_free_run_has_no_rates_and_no_false_positives() {
        let sc = Scenario::build(&cfg(1, 4, 6)).unwrap();
        let m = score(&sc.run(Architecture::Hod).unwrap()).unwrap();
        assert!(m.detection.is_empty());
        assert_eq!(m.total_false_positives(), 0);
        assert_eq!(m.latency_max_us, None);
    }

    #[test]
    fn missing_truth_is_rejected() {
        let sc = Scenario::build(&cfg(0, 3, 3)).unwrap();
        let mut log = sc.run(Architecture::Hod).unwrap();
        log.ground_truth = None;
        assert!(matches!(score(&log), Err(MetricsError::MissingGroundTruth)));
    }

    #[test]
    fn five_spoofs_score_one() {
        let mut c = cfg(1, 4, 8);
        let victim = Scenario::build(&c).unwrap().topology.cells().next().unwrap().sensors[1];
        c.attacks.push(AttackSpec::SlotSpoof(SpoofSpec {
            victim,
            start_us: 1_000_000,
            end_us: 4_000_000,
            count: 5,
            tx_power_dbm: None,
            position: None,
        }));
        let sc = Scenario::build(&c).unwrap();
        let hod = score(&sc.run(Architecture::Hod).unwrap()).unwrap();
        assert_eq!(hod.detection_rate(AttackKind::SlotSpoof), Some(1.0));
        let flat = flat_baseline(&sc).unwrap();
        assert_eq!(flat.detection_rate(AttackKind::SlotSpoof), Some(1.0));
        let cmp = compare(&hod, &flat, 0.05).unwrap();
        assert!(cmp.hod_satisfied(), "{}", cmp.to_text());
    }

    #[test]
    fn compare_rejects_other_scenarios() {
        let a = score(&Scenario::build(&cfg(0, 3, 3)).unwrap().run(Architecture::Hod).unwrap()).unwrap();
        let b = score(&Scenario::build(&cfg(0, 3, 3).with_seed(9)).unwrap().run(Architecture::Flat).unwrap()).unwrap();
        assert!(matches!(compare(&a, &b, 0.0), Err(MetricsError::ScenarioMismatch(..))));
    }

    #[test]
    fn hod_sensors_spend_nothing_on_rules() {
        let sc = Scenario::build(&cfg(1, 5, 4)).unwrap();
        let hod = score(&sc.run(Architecture::Hod).unwrap()).unwrap();
        let flat = flat_baseline(&sc).unwrap();
        assert_eq!(hod.rule_evaluations[&NodeRole::Sensor], 0);
        assert!(flat.rule_evaluations[&NodeRole::Sensor] > 0);
    }

    #[test]
    fn control_tallies_agree() {
        let sc = Scenario::build(&cfg(1, 4, 5)).unwrap();
        for arch in [Architecture::Hod, Architecture::Flat] {
            let log = sc.run(arch).unwrap();
            assert_eq!(log.ids_control_from_trace(), log.ids_control_from_counters());
        }
    }
}
