//! First-order radio energy model with integer picojoule accounting.
//!
//! Transmitting `k` bits over `d` meters costs `k * (elec + amp * d^2)`;
//! receiving costs `k * elec`; each rule evaluation on a monitor costs a
//! fixed amount. Integer accounting keeps ledger sums exact.

use serde::{Deserialize, Serialize};

use crate::topology::NodeId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyModel {
    pub elec_pj_per_bit: u64,
    pub amp_pj_per_bit_m2: u64,
    pub rule_eval_pj: u64,
    /// Idle listening charge per node per window; zero disables idle entries.
    pub idle_pj_per_window: u64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self {
            elec_pj_per_bit: 50_000,
            amp_pj_per_bit_m2: 100,
            rule_eval_pj: 2_000_000,
            idle_pj_per_window: 0,
        }
    }
}

impl EnergyModel {
    pub fn tx_pj(&self, bytes: u32, distance_m: f64) -> u64 {
        let bits = u64::from(bytes) * 8;
        let amp = (self.amp_pj_per_bit_m2 as f64 * bits as f64 * distance_m * distance_m).round() as u64;
        bits * self.elec_pj_per_bit + amp
    }

    pub fn rx_pj(&self, bytes: u32) -> u64 {
        u64::from(bytes) * 8 * self.elec_pj_per_bit
    }

    pub fn rules_pj(&self, evaluations: u64) -> u64 {
        evaluations * self.rule_eval_pj
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EnergyCategory {
    Tx,
    Rx,
    Idle,
    Rules,
}

impl EnergyCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            EnergyCategory::Tx => "tx",
            EnergyCategory::Rx => "rx",
            EnergyCategory::Idle => "idle",
            EnergyCategory::Rules => "rules",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeEnergy {
    pub tx_pj: u64,
    pub rx_pj: u64,
    pub idle_pj: u64,
    pub rules_pj: u64,
}

impl NodeEnergy {
    pub fn total_pj(&self) -> u64 {
        self.tx_pj + self.rx_pj + self.idle_pj + self.rules_pj
    }

    pub fn add(&mut self, category: EnergyCategory, pj: u64) {
        match category {
            EnergyCategory::Tx => self.tx_pj += pj,
            EnergyCategory::Rx => self.rx_pj += pj,
            EnergyCategory::Idle => self.idle_pj += pj,
            EnergyCategory::Rules => self.rules_pj += pj,
        }
    }
}

/// Per-node energy ledger.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EnergyMeter {
    nodes: Vec<NodeEnergy>,
}

impl EnergyMeter {
    pub fn new(node_count: usize) -> Self {
        Self {
            nodes: vec![NodeEnergy::default(); node_count],
        }
    }

    pub fn charge(&mut self, node: NodeId, category: EnergyCategory, pj: u64) {
        self.nodes[node.index()].add(category, pj);
    }

    pub fn node(&self, node: NodeId) -> NodeEnergy {
        self.nodes[node.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &NodeEnergy)> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, e)| (NodeId(i as u32), e))
    }

    pub fn total_pj(&self) -> u64 {
        self.nodes.iter().map(NodeEnergy::total_pj).sum()
    }
}

pub fn pj_to_joules(pj: u64) -> f64 {
    pj as f64 * 1e-12
}

/// `pj` rendered as microjoules with six decimals, exactly.
pub fn format_uj(pj: u64) -> String {
    format!("{}.{:06}", pj / 1_000_000, pj % 1_000_000)
}
