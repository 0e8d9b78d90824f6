//! Discrete-event simulator of a hierarchical intrusion-detection overlay
//! for hexagonally clustered wireless sensor networks.
//!
//! Sensors report to one cluster node per hexagonal cell. Cluster nodes run
//! the detection rules, regional nodes watch triads of cluster nodes, and a
//! trusted base station watches the regional nodes and summarizes the run.

pub mod attacks;
pub mod config;
pub mod detection;
pub mod energy;
pub mod engine;
pub mod error;
pub mod event;
pub mod mac;
pub mod metrics;
pub mod packet;
pub mod radio;
pub mod rng;
pub mod sweep;
pub mod topology;
pub mod workload;
