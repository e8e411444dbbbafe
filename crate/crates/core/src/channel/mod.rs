//! Radio channel: propagation, decode decisions, energy accounting and
//! transmit power selection.

mod energy;
mod pathloss;
mod power;

pub use energy::{EnergyLedger, EnergyTotals, NodeEnergy};
pub use pathloss::{
    freespace_pathloss_db, hata_rural_correction_db, hata_rural_pathloss_db, hata_urban_pathloss_db,
    PathlossModel, SPEED_OF_LIGHT,
};
pub(crate) use power::charge_probes;
pub use power::{
    escalate_for_distance, min_broadcast_power, power_control_escalate, Escalation, NEAR_FIELD_M,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("distance must be positive, got {0} m")]
    NonPositiveDistance(f64),
    #[error("frequency {0} MHz is outside the Hata model range 150-1500 MHz (enable hata_clamp to clamp)")]
    HataFrequency(f64),
    #[error("broadcast needs {required_dbm:.2} dBm but the radio maximum is {max_dbm:.2} dBm")]
    BroadcastInfeasible { required_dbm: f64, max_dbm: f64 },
    #[error("at least two nodes are required")]
    TooFewNodes,
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

/// Radio timing, power and propagation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioConfig {
    pub bitrate_bps: f64,
    pub tx_power_max_dbm: f64,
    /// Lowest rung of the power-control ladder.
    pub tx_power_floor_dbm: f64,
    pub ladder_step_db: f64,
    /// Probe pulse plus the listen period for a reply, per ladder rung.
    pub probe_slot_s: f64,
    pub rx_power_w: f64,
    pub tx_circuit_power_w: f64,
    pub lo_warmup_s: f64,
    /// Defaults to `lo_warmup_s * tx_circuit_power_w` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lo_startup_energy_j: Option<f64>,
    pub sensitivity_dbm: f64,
    pub capture_threshold_db: f64,
    /// Any overlap destroys both packets regardless of power.
    pub strict_collisions: bool,
    pub frequency_hz: f64,
    pub antenna_height_m: f64,
    pub pathloss_model: PathlossModel,
    pub pathloss_exponent: f64,
    pub hata_clamp: bool,
}

impl Default for RadioConfig {
    fn default() -> Self {
        RadioConfig {
            bitrate_bps: 4e6,
            tx_power_max_dbm: 30.0,
            tx_power_floor_dbm: -80.0,
            ladder_step_db: 1.0,
            probe_slot_s: 100e-6,
            rx_power_w: 0.05,
            tx_circuit_power_w: 0.05,
            lo_warmup_s: 450e-6,
            lo_startup_energy_j: None,
            sensitivity_dbm: -90.0,
            capture_threshold_db: 10.0,
            strict_collisions: false,
            frequency_hz: 1e9,
            antenna_height_m: 1.0,
            pathloss_model: PathlossModel::HataRural,
            pathloss_exponent: 2.0,
            hata_clamp: false,
        }
    }
}

impl RadioConfig {
    pub fn lo_startup_energy(&self) -> f64 {
        self.lo_startup_energy_j
            .unwrap_or(self.lo_warmup_s * self.tx_circuit_power_w)
    }

    /// On-air time of `bits` at the configured bitrate.
    pub fn airtime_s(&self, bits: u32) -> f64 {
        bits as f64 / self.bitrate_bps
    }

    pub fn pathloss_db(&self, d_m: f64) -> Result<f64, ChannelError> {
        match self.pathloss_model {
            PathlossModel::FreeSpace => freespace_pathloss_db(d_m, self.frequency_hz, self.pathloss_exponent),
            PathlossModel::HataRural => hata_rural_pathloss_db(
                d_m,
                self.frequency_hz,
                self.antenna_height_m,
                self.antenna_height_m,
                self.hata_clamp,
            ),
        }
    }

    pub fn received_dbm(&self, tx_dbm: f64, d_m: f64) -> Result<f64, ChannelError> {
        Ok(tx_dbm - self.pathloss_db(d_m)?)
    }

    pub fn can_decode(&self, rx_dbm: f64, interferers_dbm: &[f64]) -> bool {
        if self.strict_collisions {
            rx_dbm >= self.sensitivity_dbm && interferers_dbm.is_empty()
        } else {
            can_decode(
                rx_dbm,
                self.sensitivity_dbm,
                interferers_dbm,
                self.capture_threshold_db,
            )
        }
    }
}

/// Power sum of several signals given in dBm.
pub fn power_sum_dbm(levels_dbm: &[f64]) -> f64 {
    watts_to_dbm(levels_dbm.iter().map(|&l| dbm_to_watts(l)).sum())
}

/// True when the signal clears sensitivity and, if anything overlaps it, the
/// signal-to-interference ratio clears the capture threshold.
pub fn can_decode(
    rx_dbm: f64,
    sensitivity_dbm: f64,
    interferers_dbm: &[f64],
    capture_threshold_db: f64,
) -> bool {
    if rx_dbm < sensitivity_dbm {
        return false;
    }
    if interferers_dbm.is_empty() {
        return true;
    }
    rx_dbm - power_sum_dbm(interferers_dbm) >= capture_threshold_db
}
