//! Experiment description, loaded from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::broadcast::BroadcastConfig;
use crate::channel::RadioConfig;
use crate::pco::PcoParams;
use crate::topology::MobilityParams;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario field `{field}`: {message}")]
    Invalid { field: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Pco,
    Broadcast,
    Both,
}

impl Protocol {
    pub fn runs_pco(self) -> bool {
        matches!(self, Protocol::Pco | Protocol::Both)
    }

    pub fn runs_broadcast(self) -> bool {
        matches!(self, Protocol::Broadcast | Protocol::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub n_nodes: usize,
    pub area_side_m: f64,
    pub protocol: Protocol,
    pub n_masters: usize,
    pub duration_s: f64,
    pub sample_interval_s: f64,
    pub sync_tolerance_s: f64,
    /// Fractional clock drift magnitude; each node draws its own sign.
    pub drift_magnitude: f64,
    /// Initial clock offsets are uniform in `±initial_offset_s`.
    pub initial_offset_s: f64,
    pub pco: PcoParams,
    pub radio: RadioConfig,
    pub mobility: MobilityParams,
    pub broadcast: BroadcastConfig,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            name: "scenario".to_string(),
            seed: 0,
            n_nodes: 612,
            area_side_m: 1000.0,
            protocol: Protocol::Both,
            n_masters: 1,
            duration_s: 5000.0,
            sample_interval_s: 50.0,
            sync_tolerance_s: 4e-8,
            drift_magnitude: 1e-8,
            initial_offset_s: 50e-6,
            pco: PcoParams::default(),
            radio: RadioConfig::default(),
            mobility: MobilityParams::default(),
            broadcast: BroadcastConfig::default(),
        }
    }
}

fn invalid(field: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

fn positive(field: &str, v: f64) -> Result<(), ScenarioError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be a positive number, got {v}")))
    }
}

fn finite(field: &str, v: f64) -> Result<(), ScenarioError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be finite, got {v}")))
    }
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s.normalized())
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario always serializes")
    }

    /// Makes derived defaults explicit so that a saved scenario reloads to
    /// the same value.
    pub fn normalized(mut self) -> Self {
        self.pco.s0 = Some(self.pco.excitation());
        self.radio.lo_startup_energy_j = Some(self.radio.lo_startup_energy());
        self
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(invalid("name", "must be a non-empty file-name-safe string"));
        }
        if self.n_nodes < 2 {
            return Err(invalid(
                "n_nodes",
                format!("need at least 2 nodes, got {}", self.n_nodes),
            ));
        }
        if self.n_masters >= self.n_nodes {
            return Err(invalid(
                "n_masters",
                format!("must be below n_nodes ({}), got {}", self.n_nodes, self.n_masters),
            ));
        }
        positive("area_side_m", self.area_side_m)?;
        positive("duration_s", self.duration_s)?;
        positive("sample_interval_s", self.sample_interval_s)?;
        positive("sync_tolerance_s", self.sync_tolerance_s)?;
        if !(self.drift_magnitude >= 0.0 && self.drift_magnitude < 1e-3) {
            return Err(invalid(
                "drift_magnitude",
                format!("must be in [0, 1e-3), got {}", self.drift_magnitude),
            ));
        }
        if !(self.initial_offset_s >= 0.0 && self.initial_offset_s.is_finite()) {
            return Err(invalid(
                "initial_offset_s",
                format!("must be >= 0, got {}", self.initial_offset_s),
            ));
        }

        if let Some((field, message)) = self.pco.violations().into_iter().next() {
            return Err(invalid(&format!("pco.{field}"), message));
        }

        let r = &self.radio;
        positive("radio.bitrate_bps", r.bitrate_bps)?;
        finite("radio.tx_power_max_dbm", r.tx_power_max_dbm)?;
        finite("radio.tx_power_floor_dbm", r.tx_power_floor_dbm)?;
        if r.tx_power_floor_dbm > r.tx_power_max_dbm {
            return Err(invalid(
                "radio.tx_power_floor_dbm",
                "must not exceed tx_power_max_dbm",
            ));
        }
        positive("radio.ladder_step_db", r.ladder_step_db)?;
        positive("radio.probe_slot_s", r.probe_slot_s)?;
        positive("radio.rx_power_w", r.rx_power_w)?;
        positive("radio.tx_circuit_power_w", r.tx_circuit_power_w)?;
        if !(r.lo_warmup_s >= 0.0) {
            return Err(invalid("radio.lo_warmup_s", "must be >= 0"));
        }
        if let Some(e) = r.lo_startup_energy_j {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(invalid("radio.lo_startup_energy_j", "must be >= 0"));
            }
        }
        finite("radio.sensitivity_dbm", r.sensitivity_dbm)?;
        if r.sensitivity_dbm >= r.tx_power_max_dbm {
            return Err(invalid("radio.sensitivity_dbm", "must be below tx_power_max_dbm"));
        }
        finite("radio.capture_threshold_db", r.capture_threshold_db)?;
        positive("radio.frequency_hz", r.frequency_hz)?;
        positive("radio.antenna_height_m", r.antenna_height_m)?;
        positive("radio.pathloss_exponent", r.pathloss_exponent)?;
        if let Err(e) = r.pathloss_db(1000.0) {
            return Err(invalid("radio.frequency_hz", e.to_string()));
        }

        let m = &self.mobility;
        if !(m.sigma >= 0.0 && m.sigma.is_finite()) {
            return Err(invalid(
                "mobility.sigma",
                format!("must be >= 0, got {}", m.sigma),
            ));
        }
        positive("mobility.step_dt", m.step_dt)?;
        finite("mobility.k_attract", m.k_attract)?;
        finite("mobility.k_repel", m.k_repel)?;
        if !(m.r0 >= 0.0 && m.r0.is_finite()) {
            return Err(invalid("mobility.r0", "must be >= 0"));
        }

        if self.broadcast.timestamp_bits == 0 {
            return Err(invalid("broadcast.timestamp_bits", "must be >= 1"));
        }
        positive("broadcast.period", self.broadcast.period)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_gets_defaults() {
        let s = Scenario::from_toml_str("name = \"tiny\"\nseed = 7\n").unwrap();
        assert_eq!(s.name, "tiny");
        assert_eq!(s.seed, 7);
        assert_eq!(s.n_nodes, 612);
        assert_eq!(s.n_masters, 1);
        assert_eq!(s.sync_tolerance_s, 4e-8);
        assert_eq!(s.pco.x_th, 3.0);
        assert_eq!(s.radio.bitrate_bps, 4e6);
    }

    #[test]
    fn negative_threshold_names_field() {
        let err = Scenario::from_toml_str("name = \"x\"\n[pco]\nx_th = -1.0\n").unwrap_err();
        match err {
            ScenarioError::Invalid { field, .. } => assert_eq!(field, "pco.x_th"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            Scenario::from_toml_str("name = \"x\"\nbogus = 1\n"),
            Err(ScenarioError::Parse(_))
        ));
        assert!(matches!(
            Scenario::from_toml_str("[radio]\nwat = 1\n"),
            Err(ScenarioError::Parse(_))
        ));
    }

    #[test]
    fn normalization_round_trips() {
        let s = Scenario::from_toml_str("name = \"rt\"\n").unwrap();
        let text = s.to_toml_string();
        let again = Scenario::from_toml_str(&text).unwrap();
        assert_eq!(s, again);
        assert_eq!(text, again.to_toml_string());
    }

    #[test]
    fn masters_must_leave_a_slave() {
        let err = Scenario::from_toml_str("n_nodes = 3\nn_masters = 3\n").unwrap_err();
        assert!(err.to_string().contains("n_masters"));
    }

    #[test]
    fn hata_out_of_range_frequency_rejected() {
        let err = Scenario::from_toml_str("[radio]\nfrequency_hz = 3e9\n").unwrap_err();
        assert!(err.to_string().contains("radio.frequency_hz"));
        assert!(Scenario::from_toml_str("[radio]\nfrequency_hz = 3e9\nhata_clamp = true\n").is_ok());
    }
}
