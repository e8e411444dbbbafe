//! Transmit power selection: nearest-neighbour escalation for pulses and the
//! exact minimum power for a network-wide broadcast.

use super::{dbm_to_watts, ChannelError, EnergyLedger, RadioConfig};
use crate::topology::{nearest_neighbor, Position};

/// Pulse length used for power-control probes.
const PROBE_BITS: u32 = 16;

/// Separations below this are evaluated at this distance; the far-field
/// propagation formulas are meaningless at contact range.
pub const NEAR_FIELD_M: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Escalation {
    pub p_tx_dbm: f64,
    /// Number of ladder rungs probed, including the successful one.
    pub probes: u32,
    /// False when the ladder ran out before the neighbour answered.
    pub reached: bool,
}

/// Walks the ladder `floor, floor + step, ...` up to the radio maximum and
/// returns the first rung at which a receiver `d_m` away hears the probe at
/// or above sensitivity. No ledger charges are made.
pub fn escalate_for_distance(radio: &RadioConfig, d_m: f64) -> Result<Escalation, ChannelError> {
    let loss = radio.pathloss_db(d_m.max(NEAR_FIELD_M))?;
    let needed = radio.sensitivity_dbm + loss;
    let mut rung = 0u32;
    loop {
        let level = radio.tx_power_floor_dbm + rung as f64 * radio.ladder_step_db;
        if level > radio.tx_power_max_dbm {
            return Ok(Escalation {
                p_tx_dbm: radio.tx_power_max_dbm,
                probes: rung,
                reached: false,
            });
        }
        if level >= needed {
            return Ok(Escalation {
                p_tx_dbm: level,
                probes: rung + 1,
                reached: true,
            });
        }
        rung += 1;
    }
}

/// Gradual power increase until the nearest neighbour responds. Each probe
/// pulse and its listen slot are charged to `node` in `ledger`. When the
/// ladder is exhausted the node is left at maximum power.
pub fn power_control_escalate(
    ledger: &mut EnergyLedger,
    node: usize,
    positions: &[Position],
    radio: &RadioConfig,
) -> Result<Escalation, ChannelError> {
    let (_, d) = nearest_neighbor(node, positions).map_err(|_| ChannelError::TooFewNodes)?;
    let esc = escalate_for_distance(radio, d)?;
    charge_probes(ledger, node, &esc, radio);
    Ok(esc)
}

pub(crate) fn charge_probes(ledger: &mut EnergyLedger, node: usize, esc: &Escalation, radio: &RadioConfig) {
    for rung in 0..esc.probes {
        let level =
            (radio.tx_power_floor_dbm + rung as f64 * radio.ladder_step_db).min(radio.tx_power_max_dbm);
        ledger.charge_tx(node, PROBE_BITS, dbm_to_watts(level), radio);
        ledger.charge_rx(node, radio.probe_slot_s, radio);
    }
}

/// Exact (continuous) power at which the farthest node from `center`
/// receives exactly the sensitivity level.
pub fn min_broadcast_power(
    center: usize,
    positions: &[Position],
    radio: &RadioConfig,
) -> Result<f64, ChannelError> {
    if positions.len() < 2 {
        return Err(ChannelError::TooFewNodes);
    }
    let c = positions[center];
    let farthest = positions
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != center)
        .map(|(_, p)| c.distance(p))
        .fold(0.0, f64::max);
    let required = radio.sensitivity_dbm + radio.pathloss_db(farthest.max(NEAR_FIELD_M))?;
    if required > radio.tx_power_max_dbm {
        return Err(ChannelError::BroadcastInfeasible {
            required_dbm: required,
            max_dbm: radio.tx_power_max_dbm,
        });
    }
    Ok(required)
}
