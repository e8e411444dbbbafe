//! Event-driven simulation of both protocols over a shared world.

mod broadcast_leg;
mod pco_leg;

pub use broadcast_leg::run_broadcast;
pub use pco_leg::{round_tts, run_pco, NodeWindow};

use rand::seq::index;
use thiserror::Error;

use crate::channel::{ChannelError, EnergyLedger, EnergyTotals};
use crate::clock::VirtualClock;
use crate::kernel::{KernelError, SimTime};
use crate::metrics::{self, MetricSample, RoundRecord};
use crate::pco::Role;
use crate::rng::{RngStream, StreamId};
use crate::scenario::Scenario;
use crate::topology::{density, place_uniform, step_mobility, MobilityParams, Position, TopologyError};

/// True time of the first synchronization round.
pub const FIRST_ROUND_S: f64 = 1.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// Everything both protocol legs share: initial layout, clocks and roles.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub positions: Vec<Position>,
    pub clocks: Vec<VirtualClock>,
    pub roles: Vec<Role>,
}

impl World {
    /// Draws placement, drift signs, initial offsets and masters from their
    /// own streams. Masters are GPS-disciplined: no drift and no offset.
    pub fn from_scenario(s: &Scenario) -> Self {
        let n = s.n_nodes;
        let positions = place_uniform(n, s.area_side_m, &mut RngStream::new(s.seed, StreamId::Placement));

        let mut sign_rng = RngStream::new(s.seed, StreamId::DriftSign);
        let mut offset_rng = RngStream::new(s.seed, StreamId::ClockOffset);
        let mut clocks: Vec<VirtualClock> = (0..n)
            .map(|_| {
                let drift = s.drift_magnitude * sign_rng.sign();
                let offset = (2.0 * offset_rng.uniform() - 1.0) * s.initial_offset_s;
                VirtualClock::new(drift, offset)
            })
            .collect();

        let mut roles = vec![Role::Slave; n];
        let mut master_rng = RngStream::new(s.seed, StreamId::Masters);
        for m in index::sample(&mut master_rng, n, s.n_masters).into_iter() {
            roles[m] = Role::Master;
            clocks[m] = VirtualClock::ideal();
        }

        World {
            positions,
            clocks,
            roles,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn has_master(&self) -> bool {
        self.roles.contains(&Role::Master)
    }
}

/// Node positions over time. Steps on a fixed grid `k·step_dt` from its own
/// stream, so every leg sees the same trajectory whatever it does between
/// queries.
#[derive(Debug)]
pub struct Trajectory {
    positions: Vec<Position>,
    params: MobilityParams,
    rng: RngStream,
    steps: u64,
}

impl Trajectory {
    pub fn new(initial: Vec<Position>, params: MobilityParams, seed: u64) -> Self {
        Trajectory {
            positions: initial,
            params,
            rng: RngStream::new(seed, StreamId::Mobility),
            steps: 0,
        }
    }

    pub fn at(&mut self, t: SimTime) -> &[Position] {
        if self.params.enabled {
            let t = t.as_secs_f64();
            while (self.steps + 1) as f64 * self.params.step_dt <= t {
                self.positions =
                    step_mobility(&self.positions, &self.params, &mut self.rng, self.params.step_dt);
                self.steps += 1;
            }
        }
        &self.positions
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }
}

/// Round start times `FIRST_ROUND_S + k·period` that leave `tail` seconds
/// before the end of the run.
pub fn round_starts(duration_s: f64, period: f64, tail: f64) -> Vec<SimTime> {
    (0u64..)
        .map(|k| FIRST_ROUND_S + k as f64 * period)
        .take_while(|&t| t + tail <= duration_s)
        .map(SimTime::from_secs_f64)
        .collect()
}

/// Periodic sample instants `k·interval`, `k ≥ 1`, up to the end of the run.
pub fn sample_times(duration_s: f64, interval: f64) -> Vec<SimTime> {
    (1u64..)
        .map(|k| k as f64 * interval)
        .take_while(|&t| t <= duration_s)
        .map(SimTime::from_secs_f64)
        .collect()
}

/// Which clock reading counts as correct when judging sync.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reference {
    /// GPS (true) time.
    TrueTime,
    /// The mean of all clocks.
    FleetMean,
}

pub(crate) struct SampleInput<'a> {
    pub t: SimTime,
    pub clocks: &'a [VirtualClock],
    pub reference: Reference,
    pub tolerance_s: f64,
    pub positions: &'a [Position],
    pub ledger: &'a EnergyLedger,
    pub tts_ms: Option<f64>,
}

pub(crate) fn take_sample(input: SampleInput<'_>) -> MetricSample {
    let errors: Vec<f64> = input.clocks.iter().map(|c| c.error(input.t)).collect();
    let reference = match input.reference {
        Reference::TrueTime => 0.0,
        Reference::FleetMean => metrics::mean(&errors),
    };
    let n = errors.len();
    let synced = errors
        .iter()
        .filter(|e| (*e - reference).abs() <= input.tolerance_s)
        .count();
    let totals = input.ledger.totals();
    let secs = input.t.as_secs_f64();
    let power = if secs > 0.0 { totals.total() / secs } else { 0.0 };
    MetricSample {
        t_s: secs,
        pos: metrics::pos(synced, n).unwrap_or(1.0),
        tts_ms: input.tts_ms,
        clock_var_s2: metrics::clock_variance(&errors, reference),
        density_per_m2: density(input.positions).unwrap_or(f64::NAN),
        energy_tx_j: totals.tx_j,
        energy_rx_j: totals.rx_j,
        energy_startup_j: totals.startup_j,
        // Nothing has been spent yet: report zero rather than infinity.
        sync_eff_per_w: metrics::sync_efficiency(synced, n, power).unwrap_or(0.0),
    }
}

/// Output of one protocol leg.
#[derive(Debug, Clone, PartialEq)]
pub struct LegResult {
    pub protocol: &'static str,
    pub samples: Vec<MetricSample>,
    pub rounds: Vec<RoundRecord>,
    pub energy: EnergyTotals,
    /// Receiver-on time in scheduled sync windows, averaged over nodes.
    pub scheduled_on_s: f64,
    pub duration_s: f64,
    /// Broadcast rounds whose required power exceeded the radio maximum.
    pub infeasible_rounds: usize,
    pub final_positions: Vec<Position>,
    pub final_clocks: Vec<VirtualClock>,
    pub mobility_steps: u64,
    pub events: u64,
}

impl LegResult {
    pub fn duty_cycle(&self) -> f64 {
        self.scheduled_on_s / self.duration_s
    }
}
