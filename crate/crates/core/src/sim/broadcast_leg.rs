//! The centralized timestamp broadcast leg.
//!
//! Every round the current 1-center node sends the GPS time at the minimum
//! power that reaches the farthest node. All other nodes wake on schedule,
//! listen for the timestamp and, if they decode it, set their clock to the
//! timestamp plus the packet airtime. Propagation delay is not compensated.

use crate::broadcast::{select_center_node, BroadcastRound, Reception};
use crate::channel::{
    dbm_to_watts, min_broadcast_power, ChannelError, EnergyLedger, NEAR_FIELD_M, SPEED_OF_LIGHT,
};
use crate::clock::VirtualClock;
use crate::kernel::{Event, EventQueue, SimTime};
use crate::metrics::RoundRecord;
use crate::pco::Role;
use crate::scenario::Scenario;

use super::{
    round_starts, sample_times, take_sample, LegResult, Reference, SampleInput, SimError, Trajectory, World,
};

/// Slack on the decode test so that the farthest node, which receives
/// exactly the sensitivity level, is not lost to rounding.
const SENSITIVITY_SLACK_DB: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Ev {
    Round(usize),
    RoundSample { tts_s: f64 },
    Sample,
}

/// Runs the broadcast baseline over `world` for the scenario's duration.
pub fn run_broadcast(s: &Scenario, world: &World) -> Result<(LegResult, Vec<BroadcastRound>), SimError> {
    let radio = &s.radio;
    let cfg = &s.broadcast;
    let n = world.len();
    let airtime = cfg.rx_on(radio);

    let mut clocks: Vec<VirtualClock> = world.clocks.clone();
    let mut ledger = EnergyLedger::new(n);
    let mut traj = Trajectory::new(world.positions.clone(), s.mobility.clone(), s.seed);
    let rounds_at = round_starts(s.duration_s, cfg.period, 1.0);
    let mut records = Vec::new();
    let mut outcomes = Vec::new();
    let mut samples = Vec::new();
    let mut infeasible = 0usize;

    let mut q: EventQueue<Ev> = EventQueue::new();
    for (k, &r) in rounds_at.iter().enumerate() {
        q.schedule(r, Ev::Round(k))?;
    }
    for t in sample_times(s.duration_s, s.sample_interval_s) {
        q.schedule(t, Ev::Sample)?;
    }

    let end = SimTime::from_secs_f64(s.duration_s);
    q.run_until(end, |q, ev: Event<Ev>| -> Result<(), SimError> {
        let now = ev.fire_at;
        match ev.kind {
            Ev::Round(k) => {
                let positions = traj.at(now).to_vec();
                let center = select_center_node(&positions)?;
                let (p_tx, feasible) = match min_broadcast_power(center, &positions, radio) {
                    Ok(p) => (p, true),
                    Err(ChannelError::BroadcastInfeasible { max_dbm, .. }) => (max_dbm, false),
                    Err(e) => return Err(e.into()),
                };
                if !feasible {
                    infeasible += 1;
                }

                ledger.charge_tx(center, cfg.timestamp_bits, dbm_to_watts(p_tx), radio);
                ledger.power_down(center);
                let stamp = now.as_secs_f64();
                if world.roles[center] == Role::Slave {
                    clocks[center].apply_correction(stamp, now);
                }

                let mut receptions = Vec::with_capacity(n);
                for j in 0..n {
                    if j == center {
                        receptions.push(Reception::Transmitter);
                        continue;
                    }
                    ledger.charge_rx(j, airtime, radio);
                    ledger.power_down(j);
                    let d = positions[center].distance(&positions[j]);
                    let rx = p_tx - radio.pathloss_db(d.max(NEAR_FIELD_M))?;
                    if rx + SENSITIVITY_SLACK_DB >= radio.sensitivity_dbm {
                        let prop_delay = d / SPEED_OF_LIGHT;
                        if world.roles[j] == Role::Slave {
                            let at = now + SimTime::from_secs_f64(airtime + prop_delay);
                            clocks[j].apply_correction(stamp + airtime, at);
                        }
                        receptions.push(Reception::Decoded { prop_delay });
                    } else {
                        receptions.push(Reception::Missed);
                    }
                }
                let outcome = BroadcastRound {
                    center,
                    tx_power_dbm: p_tx,
                    feasible,
                    receptions,
                };
                let missed = outcome.decoded() + 1 < n;
                let tts_s = airtime + outcome.max_prop_delay();
                records.push(RoundRecord {
                    index: k,
                    start_s: stamp,
                    tts_s,
                    flagged: missed,
                });
                outcomes.push(outcome);
                // Sample once every receiver has finished decoding.
                let after = now + SimTime::from_secs_f64(tts_s) + SimTime::from_nanos(1);
                q.schedule(after, Ev::RoundSample { tts_s })?;
            }
            Ev::RoundSample { tts_s } => {
                samples.push(take_sample(SampleInput {
                    t: now,
                    clocks: &clocks,
                    reference: Reference::TrueTime,
                    tolerance_s: s.sync_tolerance_s,
                    positions: traj.at(now),
                    ledger: &ledger,
                    tts_ms: Some(tts_s * 1e3),
                }));
            }
            Ev::Sample => {
                samples.push(take_sample(SampleInput {
                    t: now,
                    clocks: &clocks,
                    reference: Reference::TrueTime,
                    tolerance_s: s.sync_tolerance_s,
                    positions: traj.at(now),
                    ledger: &ledger,
                    tts_ms: None,
                }));
            }
        }
        Ok(())
    })?;

    let result = LegResult {
        protocol: "broadcast",
        samples,
        rounds: records,
        energy: ledger.totals(),
        scheduled_on_s: outcomes.len() as f64 * airtime,
        duration_s: s.duration_s,
        infeasible_rounds: infeasible,
        final_positions: traj.at(end).to_vec(),
        final_clocks: clocks,
        mobility_steps: traj.steps(),
        events: q.processed(),
    };
    Ok((result, outcomes))
}
