//! Per-node energy accounting.

use super::RadioConfig;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NodeEnergy {
    pub tx_j: f64,
    pub rx_j: f64,
    pub startup_j: f64,
    pub radio_on: bool,
}

impl NodeEnergy {
    pub fn total(&self) -> f64 {
        self.tx_j + self.rx_j + self.startup_j
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EnergyTotals {
    pub tx_j: f64,
    pub rx_j: f64,
    pub startup_j: f64,
}

impl EnergyTotals {
    pub fn total(&self) -> f64 {
        self.tx_j + self.rx_j + self.startup_j
    }
}

/// Transmit, receive and oscillator start-up energy per node. Accumulators
/// only ever grow; every charge is also added to a running network total so
/// that conservation can be checked against the per-node sums.
#[derive(Debug, Clone)]
pub struct EnergyLedger {
    nodes: Vec<NodeEnergy>,
    charged: EnergyTotals,
    startups: u64,
}

impl EnergyLedger {
    pub fn new(n_nodes: usize) -> Self {
        EnergyLedger {
            nodes: vec![NodeEnergy::default(); n_nodes],
            charged: EnergyTotals::default(),
            startups: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, node: usize) -> &NodeEnergy {
        &self.nodes[node]
    }

    pub fn startups(&self) -> u64 {
        self.startups
    }

    pub fn is_on(&self, node: usize) -> bool {
        self.nodes[node].radio_on
    }

    /// Turns the radio on, charging one oscillator start-up if it was off.
    /// Returns whether a start-up was charged.
    pub fn power_up(&mut self, node: usize, radio: &RadioConfig) -> bool {
        let e = &mut self.nodes[node];
        if e.radio_on {
            return false;
        }
        e.radio_on = true;
        let startup = radio.lo_startup_energy();
        e.startup_j += startup;
        self.charged.startup_j += startup;
        self.startups += 1;
        true
    }

    pub fn power_down(&mut self, node: usize) {
        self.nodes[node].radio_on = false;
    }

    /// Charges a transmission of `bits` at radiated power `p_tx_radiated_w`
    /// on top of the transmit circuit power.
    pub fn charge_tx(&mut self, node: usize, bits: u32, p_tx_radiated_w: f64, radio: &RadioConfig) {
        debug_assert!(bits > 0);
        debug_assert!(p_tx_radiated_w >= 0.0);
        self.power_up(node, radio);
        let e = radio.airtime_s(bits) * (p_tx_radiated_w + radio.tx_circuit_power_w);
        self.nodes[node].tx_j += e;
        self.charged.tx_j += e;
    }

    pub fn charge_rx(&mut self, node: usize, on_time_s: f64, radio: &RadioConfig) {
        debug_assert!(on_time_s >= 0.0);
        self.power_up(node, radio);
        let e = on_time_s * radio.rx_power_w;
        self.nodes[node].rx_j += e;
        self.charged.rx_j += e;
    }

    /// Sum over nodes.
    pub fn totals(&self) -> EnergyTotals {
        self.nodes
            .iter()
            .fold(EnergyTotals::default(), |acc, e| EnergyTotals {
                tx_j: acc.tx_j + e.tx_j,
                rx_j: acc.rx_j + e.rx_j,
                startup_j: acc.startup_j + e.startup_j,
            })
    }

    /// Running sum of every individual charge, in charge order.
    pub fn charged(&self) -> EnergyTotals {
        self.charged
    }
}
