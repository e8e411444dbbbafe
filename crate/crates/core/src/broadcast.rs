//! Centralized timestamp broadcast baseline.

use serde::{Deserialize, Serialize};

use crate::channel::RadioConfig;
use crate::topology::{Position, TopologyError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BroadcastConfig {
    pub timestamp_bits: u32,
    /// Seconds between broadcast rounds.
    pub period: f64,
}

impl Default for BroadcastConfig {
    fn default() -> Self {
        BroadcastConfig {
            timestamp_bits: 180,
            period: 500.0,
        }
    }
}

impl BroadcastConfig {
    /// Receiver on-time needed to take in one timestamp.
    pub fn rx_on(&self, radio: &RadioConfig) -> f64 {
        radio.airtime_s(self.timestamp_bits)
    }
}

/// The node minimizing its maximum distance to every other node. Ties go to
/// the lowest id.
pub fn select_center_node(positions: &[Position]) -> Result<usize, TopologyError> {
    if positions.is_empty() {
        return Err(TopologyError::TooFewNodes { needed: 1, got: 0 });
    }
    let mut best = (0, f64::INFINITY);
    for (i, p) in positions.iter().enumerate() {
        let mut worst = 0.0f64;
        for q in positions {
            let d = p.distance_sq(q);
            if d > worst {
                worst = d;
                if worst >= best.1 {
                    break;
                }
            }
        }
        if worst < best.1 {
            best = (i, worst);
        }
    }
    Ok(best.0)
}

/// What happened to one node in a broadcast round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reception {
    Transmitter,
    /// Decoded the timestamp after the given propagation delay (seconds).
    Decoded {
        prop_delay: f64,
    },
    /// Below sensitivity; the clock is left alone.
    Missed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BroadcastRound {
    pub center: usize,
    pub tx_power_dbm: f64,
    /// False when the required power exceeded the radio maximum and the
    /// center transmitted at maximum instead.
    pub feasible: bool,
    pub receptions: Vec<Reception>,
}

impl BroadcastRound {
    pub fn decoded(&self) -> usize {
        self.receptions
            .iter()
            .filter(|r| matches!(r, Reception::Decoded { .. }))
            .count()
    }

    pub fn max_prop_delay(&self) -> f64 {
        self.receptions
            .iter()
            .filter_map(|r| match r {
                Reception::Decoded { prop_delay } => Some(*prop_delay),
                _ => None,
            })
            .fold(0.0, f64::max)
    }
}
