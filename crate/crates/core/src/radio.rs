//! Log-distance path loss with optional log-normal shadowing.
//!
//! `rssi(d) = tx_power - reference_loss - 10 n log10(d) + X_sigma`, with `d`
//! clamped to at least one meter. Interference is summed in linear power.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioModel {
    pub path_loss_exponent: f64,
    pub reference_loss_db: f64,
    pub noise_floor_dbm: f64,
    pub rx_sensitivity_dbm: f64,
    pub sinr_threshold_db: f64,
    pub shadowing_sigma_db: f64,
    /// Connectivity radius of the short-range radio, used for best routes.
    pub short_range_m: f64,
    pub sensor_tx_power_dbm: f64,
    /// Cluster and regional nodes on the short-range radio.
    pub monitor_tx_power_dbm: f64,
    pub long_range_tx_power_dbm: f64,
    /// Regional to base links always deliver when set.
    pub long_range_always_delivers: bool,
    pub bitrate_bps: u64,
    pub hop_latency_us: u64,
    pub long_range_latency_us: u64,
    /// Clear-channel threshold for carrier sensing.
    pub cca_threshold_dbm: f64,
    /// Random backoff is uniform in `[0, backoff_window_us)`.
    pub backoff_window_us: u64,
    /// Longest a node waits for an idle channel before sending anyway.
    pub carrier_sense_timeout_us: u64,
    /// Spacing of idle-channel RSSI samples at cluster nodes.
    pub sense_tick_us: u64,
}

impl Default for RadioModel {
    fn default() -> Self {
        Self {
            path_loss_exponent: 2.4,
            reference_loss_db: 40.0,
            noise_floor_dbm: -95.0,
            rx_sensitivity_dbm: -85.0,
            sinr_threshold_db: 6.0,
            shadowing_sigma_db: 2.0,
            short_range_m: 75.0,
            sensor_tx_power_dbm: 0.0,
            monitor_tx_power_dbm: 20.0,
            long_range_tx_power_dbm: 30.0,
            long_range_always_delivers: true,
            bitrate_bps: 250_000,
            hop_latency_us: 2_000,
            long_range_latency_us: 5_000,
            cca_threshold_dbm: -85.0,
            backoff_window_us: 320,
            carrier_sense_timeout_us: 10_000,
            sense_tick_us: 10_000,
        }
    }
}

/// Why a hop failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DropReason {
    OutOfRange,
    Jammed,
    Collision,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::OutOfRange => "out_of_range",
            DropReason::Jammed => "jammed",
            DropReason::Collision => "collision",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LinkOutcome {
    Delivered { rssi_dbm: f64 },
    Dropped { reason: DropReason, rssi_dbm: f64 },
}

impl LinkOutcome {
    pub fn is_delivered(&self) -> bool {
        matches!(self, LinkOutcome::Delivered { .. })
    }

    pub fn rssi_dbm(&self) -> f64 {
        match *self {
            LinkOutcome::Delivered { rssi_dbm } | LinkOutcome::Dropped { rssi_dbm, .. } => rssi_dbm,
        }
    }
}

/// Power sum of two dBm levels.
pub fn dbm_sum(a: f64, b: f64) -> f64 {
    10.0 * (10f64.powf(a / 10.0) + 10f64.powf(b / 10.0)).log10()
}

impl RadioModel {
    /// Deterministic received power, no shadowing.
    pub fn mean_rssi(&self, tx_power_dbm: f64, distance_m: f64) -> f64 {
        let d = distance_m.max(1.0);
        tx_power_dbm - self.reference_loss_db - 10.0 * self.path_loss_exponent * d.log10()
    }

    /// Received power with a shadowing draw from `rng` (no draw when sigma is zero).
    pub fn rssi_at<R: Rng + ?Sized>(&self, tx_power_dbm: f64, distance_m: f64, rng: &mut R) -> f64 {
        let mean = self.mean_rssi(tx_power_dbm, distance_m);
        if self.shadowing_sigma_db > 0.0 {
            let normal = Normal::new(0.0, self.shadowing_sigma_db).expect("sigma validated positive");
            mean + normal.sample(rng)
        } else {
            mean
        }
    }

    /// Distance at which the mean RSSI equals the sensitivity.
    pub fn max_range_m(&self, tx_power_dbm: f64) -> f64 {
        let budget = tx_power_dbm - self.reference_loss_db - self.rx_sensitivity_dbm;
        10f64.powf(budget / (10.0 * self.path_loss_exponent))
    }

    /// Noise plus the given interferer levels, in dBm.
    pub fn interference_dbm(&self, interferers_dbm: impl IntoIterator<Item = f64>) -> f64 {
        interferers_dbm
            .into_iter()
            .fold(self.noise_floor_dbm, dbm_sum)
    }

    /// Decide a single hop given the received power and current interference.
    ///
    /// `jammer_active` distinguishes a jammed hop from one that simply fails
    /// the noise-limited SINR test.
    pub fn link_outcome(
        &self,
        rssi_dbm: f64,
        interference_dbm: f64,
        jammer_active: bool,
        collided: bool,
    ) -> LinkOutcome {
        if rssi_dbm < self.rx_sensitivity_dbm {
            return LinkOutcome::Dropped {
                reason: DropReason::OutOfRange,
                rssi_dbm,
            };
        }
        if collided {
            return LinkOutcome::Dropped {
                reason: DropReason::Collision,
                rssi_dbm,
            };
        }
        if rssi_dbm - interference_dbm < self.sinr_threshold_db {
            let reason = if jammer_active {
                DropReason::Jammed
            } else {
                DropReason::OutOfRange
            };
            return LinkOutcome::Dropped { reason, rssi_dbm };
        }
        LinkOutcome::Delivered { rssi_dbm }
    }

    /// Airtime of a packet of `bytes` bytes.
    pub fn airtime_us(&self, bytes: u32) -> u64 {
        (u64::from(bytes) * 8 * 1_000_000).div_ceil(self.bitrate_bps)
    }
}
