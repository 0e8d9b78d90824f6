//! Scenario configuration.
//!
//! Configs are TOML with one table per subsystem (`topology`, `radio`,
//! `energy`, `mac`, `workload`, `detect`, `baseline`) and an `[[attacks]]`
//! array. Unknown keys are rejected. Every omitted key takes a documented
//! default, and [`ScenarioConfig::resolve`] makes derived defaults explicit so
//! that the echoed config fully describes the run.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacks::AttackSpec;
use crate::energy::EnergyModel;
use crate::error::ConfigError;
use crate::radio::RadioModel;
use crate::workload::EMISSION_PHASE;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyParams {
    pub rings: u32,
    pub cell_radius_m: f64,
    pub sensors_per_cell: u32,
}

impl Default for TopologyParams {
    fn default() -> Self {
        Self {
            rings: 1,
            cell_radius_m: 30.0,
            sensors_per_cell: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MacParams {
    pub frame_length: u32,
    pub slot_duration_us: u64,
    pub smac_period_us: u64,
    pub awake_fraction: f64,
    /// Cell `i` wakes at `i * phase_step_us` modulo the period.
    pub phase_step_us: u64,
}

impl Default for MacParams {
    fn default() -> Self {
        Self {
            frame_length: 10,
            slot_duration_us: 5_000,
            smac_period_us: 100_000,
            awake_fraction: 0.5,
            phase_step_us: 5_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadParams {
    /// Reporting interval; also the aggregation window of every monitor.
    pub report_interval_us: u64,
    /// Number of reporting windows in the horizon.
    pub windows: u64,
    /// When false only monitor heartbeats are generated.
    pub sensor_traffic: bool,
    /// Sensor emissions are jittered by up to this fraction of the interval.
    pub jitter_fraction: f64,
    /// Gap between consecutive cluster reports; cell `i` reports at
    /// `i * report_spacing_us` after the window closes.
    pub report_spacing_us: u64,
    pub data_bytes: u32,
    pub report_bytes: u32,
    pub alarm_bytes: u32,
}

impl Default for WorkloadParams {
    fn default() -> Self {
        Self {
            report_interval_us: 1_000_000,
            windows: 20,
            sensor_traffic: true,
            jitter_fraction: 0.1,
            report_spacing_us: 12_000,
            data_bytes: 32,
            report_bytes: 48,
            alarm_bytes: 48,
        }
    }
}

impl WorkloadParams {
    pub fn horizon_us(&self) -> u64 {
        self.windows * self.report_interval_us
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectParams {
    pub pdr_min: f64,
    /// Defaults to the noise floor plus 10 dB.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub idle_rssi_max_dbm: Option<f64>,
    /// Defaults to three times the mean idle backoff.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub carrier_sense_max_us: Option<u64>,
    pub jamming_vote_k: u8,
    /// Consecutive windows without a heartbeat (or with suppressed alerts)
    /// before a watchdog fires.
    pub heartbeat_timeout: u32,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self {
            pdr_min: 0.6,
            idle_rssi_max_dbm: None,
            carrier_sense_max_us: None,
            jamming_vote_k: 2,
            heartbeat_timeout: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineParams {
    pub exchange_bytes: u32,
    pub anomaly_bytes: u32,
    /// Allowed shortfall of the hierarchical detection rate versus the flat one.
    pub detection_tolerance: f64,
}

impl Default for BaselineParams {
    fn default() -> Self {
        Self {
            exchange_bytes: 16,
            anomaly_bytes: 32,
            detection_tolerance: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub topology: TopologyParams,
    #[serde(default)]
    pub radio: RadioModel,
    #[serde(default)]
    pub energy: EnergyModel,
    #[serde(default)]
    pub mac: MacParams,
    #[serde(default)]
    pub workload: WorkloadParams,
    #[serde(default)]
    pub detect: DetectParams,
    #[serde(default)]
    pub baseline: BaselineParams,
    #[serde(default)]
    pub attacks: Vec<AttackSpec>,
}

fn range_err(key: &str, msg: impl std::fmt::Display) -> ConfigError {
    ConfigError::new(key, msg.to_string())
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl ScenarioConfig {
    /// Parse, fill defaults and validate.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| {
            let at = e
                .span()
                .map(|s| {
                    let line = text[..s.start.min(text.len())].matches('\n').count() + 1;
                    format!("line {line}")
                })
                .unwrap_or_else(|| "config".to_string());
            ConfigError::new(at, e.message().trim().to_string())
        })?;
        let cfg = cfg.resolve();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new(path.display().to_string(), e.to_string()))?;
        Self::parse(&text)
    }

    /// Replace derived defaults by explicit values.
    pub fn resolve(mut self) -> Self {
        if self.detect.idle_rssi_max_dbm.is_none() {
            self.detect.idle_rssi_max_dbm = Some(self.radio.noise_floor_dbm + 10.0);
        }
        if self.detect.carrier_sense_max_us.is_none() {
            // mean of a uniform backoff is half the window
            self.detect.carrier_sense_max_us = Some(3 * self.radio.backoff_window_us / 2);
        }
        self
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hash binding topology, workload, attacks and seed.
    pub fn scenario_hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = seed;
        c
    }

    pub fn horizon_us(&self) -> u64 {
        self.workload.horizon_us()
    }

    pub fn idle_rssi_max_dbm(&self) -> f64 {
        self.detect
            .idle_rssi_max_dbm
            .unwrap_or(self.radio.noise_floor_dbm + 10.0)
    }

    pub fn carrier_sense_max_us(&self) -> u64 {
        self.detect
            .carrier_sense_max_us
            .unwrap_or(3 * self.radio.backoff_window_us / 2)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.topology;
        if t.rings > 12 {
            return Err(range_err("topology.rings", format!("must be at most 12, got {}", t.rings)));
        }
        if !(t.cell_radius_m > 0.0 && t.cell_radius_m.is_finite()) {
            return Err(range_err("topology.cell_radius_m", format!("must be positive, got {}", t.cell_radius_m)));
        }
        if t.sensors_per_cell == 0 {
            return Err(range_err("topology.sensors_per_cell", "must be at least 1"));
        }

        let r = &self.radio;
        for (key, v) in [
            ("radio.path_loss_exponent", r.path_loss_exponent),
            ("radio.short_range_m", r.short_range_m),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(range_err(key, format!("must be positive, got {v}")));
            }
        }
        if !(r.shadowing_sigma_db >= 0.0 && r.shadowing_sigma_db.is_finite()) {
            return Err(range_err("radio.shadowing_sigma_db", format!("must be non-negative, got {}", r.shadowing_sigma_db)));
        }
        if r.bitrate_bps == 0 {
            return Err(range_err("radio.bitrate_bps", "must be positive"));
        }
        if r.sense_tick_us == 0 {
            return Err(range_err("radio.sense_tick_us", "must be positive"));
        }
        if t.cell_radius_m > r.short_range_m {
            return Err(range_err(
                "topology.cell_radius_m",
                format!("must not exceed radio.short_range_m ({}) so sensors reach their cluster node directly", r.short_range_m),
            ));
        }
        let w = &self.workload;
        let b = &self.baseline;
        let max_bytes = [w.data_bytes, w.report_bytes, w.alarm_bytes, b.exchange_bytes, b.anomaly_bytes]
            .into_iter()
            .max()
            .unwrap_or(0);
        if r.airtime_us(max_bytes) > r.hop_latency_us {
            return Err(range_err(
                "radio.hop_latency_us",
                format!("must cover the longest airtime ({}us)", r.airtime_us(max_bytes)),
            ));
        }

        let m = &self.mac;
        if m.frame_length < t.sensors_per_cell {
            return Err(range_err(
                "mac.frame_length",
                format!("must be at least sensors_per_cell ({}), got {}", t.sensors_per_cell, m.frame_length),
            ));
        }
        if m.slot_duration_us == 0 {
            return Err(range_err("mac.slot_duration_us", "must be positive"));
        }
        if m.smac_period_us == 0 {
            return Err(range_err("mac.smac_period_us", "must be positive"));
        }
        if !(m.awake_fraction > 0.0 && m.awake_fraction <= 1.0) {
            return Err(range_err("mac.awake_fraction", format!("must be in (0, 1], got {}", m.awake_fraction)));
        }
        let sensor_air = r.airtime_us(w.data_bytes.max(b.exchange_bytes).max(b.anomaly_bytes));
        if sensor_air > m.slot_duration_us {
            return Err(range_err("mac.slot_duration_us", format!("must hold a {sensor_air}us transmission")));
        }
        let awake_us = (m.awake_fraction * m.smac_period_us as f64).round() as u64;
        if awake_us < sensor_air {
            return Err(range_err("mac.awake_fraction", format!("wake window must hold a {sensor_air}us transmission")));
        }

        if w.report_interval_us == 0 {
            return Err(range_err("workload.report_interval_us", "must be positive"));
        }
        if w.windows < 3 {
            return Err(range_err("workload.windows", format!("horizon must cover at least 3 windows, got {}", w.windows)));
        }
        if !(0.0..0.4).contains(&w.jitter_fraction) {
            return Err(range_err("workload.jitter_fraction", format!("must be in [0, 0.4), got {}", w.jitter_fraction)));
        }
        let report_air = r.airtime_us(w.report_bytes);
        if w.report_spacing_us < r.carrier_sense_timeout_us + r.backoff_window_us + report_air {
            return Err(range_err(
                "workload.report_spacing_us",
                "must exceed carrier_sense_timeout + backoff_window + report airtime",
            ));
        }
        let cells = u64::from(3 * t.rings * (t.rings + 1) + 1);
        let reports_done = (cells - 1) * w.report_spacing_us + r.carrier_sense_timeout_us + r.backoff_window_us + r.hop_latency_us;
        if reports_done >= w.report_interval_us / 2 {
            return Err(range_err(
                "workload.report_interval_us",
                format!("must exceed twice the report stagger of {cells} cells ({reports_done}us)"),
            ));
        }
        let frame = u64::from(m.frame_length) * m.slot_duration_us;
        let cycle = frame / gcd(frame, m.smac_period_us) * m.smac_period_us;
        let latest = (EMISSION_PHASE + w.jitter_fraction) * w.report_interval_us as f64 + (2 * cycle + r.hop_latency_us) as f64;
        if latest >= w.report_interval_us as f64 {
            return Err(range_err(
                "workload.report_interval_us",
                "must leave room for emission jitter plus two schedule cycles before the window closes",
            ));
        }

        let d = &self.detect;
        if !(0.0..=1.0).contains(&d.pdr_min) {
            return Err(range_err("detect.pdr_min", format!("must be in [0, 1], got {}", d.pdr_min)));
        }
        if !(1..=3).contains(&d.jamming_vote_k) {
            return Err(range_err("detect.jamming_vote_k", format!("must be 1, 2 or 3, got {}", d.jamming_vote_k)));
        }
        if d.heartbeat_timeout == 0 {
            return Err(range_err("detect.heartbeat_timeout", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&b.detection_tolerance) {
            return Err(range_err("baseline.detection_tolerance", "must be in [0, 1]"));
        }

        let horizon = self.horizon_us();
        for (i, a) in self.attacks.iter().enumerate() {
            let (start, end) = a.interval();
            if start >= end {
                return Err(range_err(&format!("attacks[{i}]"), format!("start_us {start} must be before end_us {end}")));
            }
            if end > horizon {
                return Err(range_err(&format!("attacks[{i}].end_us"), format!("must lie within the horizon ({horizon}us)")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::{AttackSpec, CompromiseMode};

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ScenarioConfig::parse("seed = 3\n[topology]\nrings = 2\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.topology.rings, 2);
        assert_eq!(cfg.topology.sensors_per_cell, 6);
        assert_eq!(cfg.radio, RadioModel::default());
        assert_eq!(cfg.detect.idle_rssi_max_dbm, Some(-85.0));
        assert_eq!(cfg.detect.carrier_sense_max_us, Some(480));
        assert!(cfg.attacks.is_empty());
    }

    #[test]
    fn range_error_names_key() {
        let err = ScenarioConfig::parse("[mac]\nawake_fraction = 1.3\n").unwrap_err();
        assert_eq!(err.key, "mac.awake_fraction");
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        let err = ScenarioConfig::parse("seed = 1\n[radio]\nnoise_flor_dbm = -90.0\n").unwrap_err();
        assert_eq!(err.key, "line 3");
        assert!(err.message.contains("noise_flor_dbm"), "{}", err.message);
    }

    #[test]
    fn unknown_attack_key_rejected() {
        let text = "[[attacks]]\nkind = \"jamming\"\ncell = [0, 0]\nstart_us = 0\nend_us = 100\npower_dbm = 1.0\nbogus = 3\n";
        assert!(ScenarioConfig::parse(text).is_err());
    }

    #[test]
    fn frame_shorter_than_cell_rejected() {
        let err = ScenarioConfig::parse("[topology]\nsensors_per_cell = 12\n").unwrap_err();
        assert_eq!(err.key, "mac.frame_length");
    }

    #[test]
    fn horizon_needs_three_windows() {
        let err = ScenarioConfig::parse("[workload]\nwindows = 2\n").unwrap_err();
        assert_eq!(err.key, "workload.windows");
    }

    #[test]
    fn attacks_parse() {
        let text = r#"
seed = 9
[[attacks]]
kind = "node_compromise"
node = 3
start_us = 1000000
end_us = 5000000
mode = "false_data"

[[attacks]]
kind = "slot_spoof"
victim = 2
start_us = 0
end_us = 3000000
"#;
        let cfg = ScenarioConfig::parse(text).unwrap();
        assert_eq!(cfg.attacks.len(), 2);
        assert!(matches!(&cfg.attacks[0], AttackSpec::NodeCompromise(c) if c.mode == CompromiseMode::FalseData));
        assert!(matches!(&cfg.attacks[1], AttackSpec::SlotSpoof(s) if s.count == 5));
    }

    #[test]
    fn hash_depends_on_seed() {
        let a = ScenarioConfig::default().resolve();
        assert_eq!(a.scenario_hash(), a.clone().scenario_hash());
        assert_ne!(a.scenario_hash(), a.with_seed(1).scenario_hash());
    }
}
