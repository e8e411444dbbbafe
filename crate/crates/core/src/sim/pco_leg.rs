//! The pulse-coupled-oscillator leg.
//!
//! Each round starts with a power-control phase (the first round, or every
//! round under mobility), then every node opens a receive window at the
//! same local time and runs its oscillator until the window closes.
//! Converged slaves then step their clock onto the pulse train's `T_d` grid.

use crate::channel::{
    charge_probes, dbm_to_watts, escalate_for_distance, ChannelError, EnergyLedger, RadioConfig,
    NEAR_FIELD_M, SPEED_OF_LIGHT,
};
use crate::clock::VirtualClock;
use crate::kernel::{Event, EventQueue, SimTime};
use crate::metrics::{MetricSample, RoundRecord};
use crate::pco::{grid_correction, master_tick_index, master_tick_time, OscillatorState, PcoParams, Role};
use crate::scenario::Scenario;
use crate::topology::{NeighborIndex, Position};

use super::{
    round_starts, sample_times, take_sample, LegResult, Reference, SampleInput, SimError, Trajectory, World,
};

/// How far ahead of the nominal round start the round bookkeeping runs, so
/// that fast clocks can still open their window on time.
const ROUND_GUARD: SimTime = SimTime::from_millis(10);

/// Pulses this far below sensitivity still count as interference.
const INTERFERENCE_MARGIN_DB: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ev {
    RoundStart(usize),
    WindowOpen(usize),
    WindowClose(usize),
    Fire { node: usize, version: u64 },
    PulseEnd { rx: usize, id: u64 },
    Sample,
}

#[derive(Debug, Clone, Copy)]
struct Link {
    to: usize,
    rx_dbm: f64,
    delay: SimTime,
}

#[derive(Debug, Clone, Copy)]
struct Incoming {
    id: u64,
    start: SimTime,
    end: SimTime,
    rx_dbm: f64,
}

/// Per-node outcome of one window.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NodeWindow {
    pub fires: u32,
    /// Pulses emitted up to the (final) transition to converged.
    pub converged_after: Option<u32>,
    pub last_gap: Option<f64>,
    pub decoded: u32,
    /// Clock step applied at window close, if any.
    pub correction: Option<f64>,
}

#[derive(Debug)]
struct Node {
    clock: VirtualClock,
    osc: OscillatorState,
    p_tx_dbm: f64,
    probes: u32,
    open: bool,
    opened_at: SimTime,
    open_local: f64,
    next_tick: u64,
    version: u64,
    tx: [(SimTime, SimTime); 2],
    decoded_starts: Vec<f64>,
    converged_at: Option<SimTime>,
    window: NodeWindow,
}

struct PcoSim<'a> {
    s: &'a Scenario,
    p: &'a PcoParams,
    radio: &'a RadioConfig,
    nodes: Vec<Node>,
    ledger: EnergyLedger,
    traj: Trajectory,
    links: Vec<Vec<Link>>,
    incoming: Vec<Vec<Incoming>>,
    next_pulse_id: u64,
    pulse_len: SimTime,
    rounds_at: Vec<SimTime>,
    round: Option<usize>,
    round_listen_s: f64,
    closed: usize,
    records: Vec<RoundRecord>,
    details: Vec<Vec<NodeWindow>>,
    samples: Vec<MetricSample>,
    windows_opened: u64,
    reference: Reference,
}

/// Runs the PCO protocol over `world` for the scenario's duration.
pub fn run_pco(s: &Scenario, world: &World) -> Result<(LegResult, Vec<Vec<NodeWindow>>), SimError> {
    let p = &s.pco;
    let radio = &s.radio;
    let n = world.len();
    let pc_max = ((radio.tx_power_max_dbm - radio.tx_power_floor_dbm) / radio.ladder_step_db).floor() + 1.0;
    let tail = ROUND_GUARD.as_secs_f64() + pc_max * radio.probe_slot_s + p.window + 0.1;

    let nodes = (0..n)
        .map(|i| Node {
            clock: world.clocks[i],
            osc: OscillatorState::new(world.roles[i], 0.0, 0.0),
            p_tx_dbm: radio.tx_power_max_dbm,
            probes: 0,
            open: false,
            opened_at: SimTime::ZERO,
            open_local: 0.0,
            next_tick: 0,
            version: 0,
            tx: [(SimTime::ZERO, SimTime::ZERO); 2],
            decoded_starts: Vec::new(),
            converged_at: None,
            window: NodeWindow::default(),
        })
        .collect();

    let mut sim = PcoSim {
        s,
        p,
        radio,
        nodes,
        ledger: EnergyLedger::new(n),
        traj: Trajectory::new(world.positions.clone(), s.mobility.clone(), s.seed),
        links: vec![Vec::new(); n],
        incoming: vec![Vec::new(); n],
        next_pulse_id: 0,
        pulse_len: SimTime::from_secs_f64(radio.airtime_s(p.pulse_bits)),
        rounds_at: round_starts(s.duration_s, p.resync_period, tail),
        round: None,
        round_listen_s: 0.0,
        closed: 0,
        records: Vec::new(),
        details: Vec::new(),
        samples: Vec::new(),
        windows_opened: 0,
        reference: if world.has_master() {
            Reference::TrueTime
        } else {
            Reference::FleetMean
        },
    };

    let mut q: EventQueue<Ev> = EventQueue::new();
    for (k, &r) in sim.rounds_at.iter().enumerate() {
        q.schedule(r.saturating_sub(ROUND_GUARD), Ev::RoundStart(k))?;
    }
    for t in sample_times(s.duration_s, s.sample_interval_s) {
        q.schedule(t, Ev::Sample)?;
    }
    let end = SimTime::from_secs_f64(s.duration_s);
    q.run_until(end, |q, ev| sim.handle(q, ev))?;

    let final_positions = sim.traj.at(end).to_vec();
    let result = LegResult {
        protocol: "pco",
        samples: sim.samples,
        rounds: sim.records,
        energy: sim.ledger.totals(),
        scheduled_on_s: sim.windows_opened as f64 * p.window / n as f64,
        duration_s: s.duration_s,
        infeasible_rounds: 0,
        final_positions,
        final_clocks: sim.nodes.iter().map(|nd| nd.clock).collect(),
        mobility_steps: sim.traj.steps(),
        events: q.processed(),
    };
    Ok((result, sim.details))
}

impl PcoSim<'_> {
    fn handle(&mut self, q: &mut EventQueue<Ev>, ev: Event<Ev>) -> Result<(), SimError> {
        let now = ev.fire_at;
        match ev.kind {
            Ev::RoundStart(k) => self.round_start(q, now, k),
            Ev::WindowOpen(i) => self.window_open(q, now, i),
            Ev::WindowClose(i) => self.window_close(now, i),
            Ev::Fire { node, version } => {
                if self.nodes[node].open && self.nodes[node].version == version {
                    self.natural_fire(q, now, node)?;
                }
                Ok(())
            }
            Ev::PulseEnd { rx, id } => self.pulse_end(q, now, rx, id),
            Ev::Sample => {
                self.sample(now, None);
                Ok(())
            }
        }
    }

    fn sample(&mut self, now: SimTime, tts_ms: Option<f64>) {
        let clocks: Vec<VirtualClock> = self.nodes.iter().map(|nd| nd.clock).collect();
        let positions = self.traj.at(now);
        self.samples.push(take_sample(SampleInput {
            t: now,
            clocks: &clocks,
            reference: self.reference,
            tolerance_s: self.s.sync_tolerance_s,
            positions,
            ledger: &self.ledger,
            tts_ms,
        }));
    }

    fn round_start(&mut self, q: &mut EventQueue<Ev>, now: SimTime, k: usize) -> Result<(), SimError> {
        let start = self.rounds_at[k];
        let positions = self.traj.at(start).to_vec();
        let radio = self.radio;
        let mut listen = 0.0;
        if k == 0 || self.s.mobility.enabled {
            let index = NeighborIndex::build(&positions);
            for i in 0..self.nodes.len() {
                let (_, d) = index.nearest(i).ok_or(ChannelError::TooFewNodes)?;
                let esc = escalate_for_distance(radio, d)?;
                charge_probes(&mut self.ledger, i, &esc, radio);
                self.nodes[i].p_tx_dbm = esc.p_tx_dbm;
                self.nodes[i].probes = esc.probes;
            }
            let max_probes = self.nodes.iter().map(|nd| nd.probes).max().unwrap_or(0);
            listen = max_probes as f64 * radio.probe_slot_s;
            // Everyone listens until the slowest escalation finishes.
            for i in 0..self.nodes.len() {
                let extra = listen - self.nodes[i].probes as f64 * radio.probe_slot_s;
                self.ledger.charge_rx(i, extra.max(0.0), radio);
            }
            self.build_links(&positions)?;
        }
        self.round = Some(k);
        self.round_listen_s = listen;
        self.closed = 0;
        self.details.push(vec![NodeWindow::default(); self.nodes.len()]);
        let open_local = start.as_secs_f64() + listen;
        for i in 0..self.nodes.len() {
            let at = self.nodes[i].clock.true_time_at(open_local);
            self.nodes[i].open_local = open_local;
            q.schedule(at.max(now), Ev::WindowOpen(i))?;
        }
        Ok(())
    }

    fn build_links(&mut self, positions: &[Position]) -> Result<(), SimError> {
        let radio = self.radio;
        let floor = radio.sensitivity_dbm - INTERFERENCE_MARGIN_DB;
        for i in 0..positions.len() {
            let mut out = Vec::new();
            for j in 0..positions.len() {
                if i == j {
                    continue;
                }
                let d = positions[i].distance(&positions[j]);
                let rx = self.nodes[i].p_tx_dbm - radio.pathloss_db(d.max(NEAR_FIELD_M))?;
                if rx >= floor {
                    out.push(Link {
                        to: j,
                        rx_dbm: rx,
                        delay: SimTime::from_secs_f64(d / SPEED_OF_LIGHT),
                    });
                }
            }
            self.links[i] = out;
        }
        Ok(())
    }

    fn window_open(&mut self, q: &mut EventQueue<Ev>, now: SimTime, i: usize) -> Result<(), SimError> {
        self.ledger.power_up(i, self.radio);
        self.windows_opened += 1;
        let p = self.p;
        let node = &mut self.nodes[i];
        let local = node.clock.local_time(now);
        node.osc = OscillatorState::resume(node.osc.role, p, local);
        node.open = true;
        node.opened_at = now;
        node.decoded_starts.clear();
        node.converged_at = None;
        node.window = NodeWindow::default();
        let close_local = node.open_local + p.window;
        q.schedule(node.clock.true_time_at(close_local).max(now), Ev::WindowClose(i))?;
        if node.osc.role == Role::Master {
            node.next_tick = master_tick_index(p, local);
            self.schedule_tick(q, now, i)
        } else {
            self.schedule_natural(q, now, i)
        }
    }

    fn schedule_tick(&mut self, q: &mut EventQueue<Ev>, now: SimTime, i: usize) -> Result<(), SimError> {
        let node = &mut self.nodes[i];
        node.version += 1;
        let at = node.clock.true_time_at(master_tick_time(self.p, node.next_tick));
        q.schedule(
            at.max(now),
            Ev::Fire {
                node: i,
                version: node.version,
            },
        )?;
        Ok(())
    }

    fn schedule_natural(&mut self, q: &mut EventQueue<Ev>, now: SimTime, i: usize) -> Result<(), SimError> {
        let node = &mut self.nodes[i];
        node.version += 1;
        if let Some(dt) = node.osc.time_to_threshold(self.p) {
            let at = node.clock.true_time_at(node.osc.anchor + dt);
            q.schedule(
                at.max(now),
                Ev::Fire {
                    node: i,
                    version: node.version,
                },
            )?;
        }
        Ok(())
    }

    fn natural_fire(&mut self, q: &mut EventQueue<Ev>, now: SimTime, i: usize) -> Result<(), SimError> {
        let p = self.p;
        let node = &mut self.nodes[i];
        let local = node.clock.local_time(now);
        if node.osc.role == Role::Master {
            node.osc.fire(p, master_tick_time(p, node.next_tick));
            node.next_tick += 1;
            self.after_fire(now, i);
            self.emit(q, now, i)?;
            self.schedule_tick(q, now, i)
        } else {
            node.osc.advance_to(p, local);
            node.osc.fire(p, local);
            self.after_fire(now, i);
            self.emit(q, now, i)?;
            self.schedule_natural(q, now, i)
        }
    }

    fn after_fire(&mut self, now: SimTime, i: usize) {
        let node = &mut self.nodes[i];
        node.window.fires += 1;
        node.window.last_gap = node.osc.last_gap;
        if node.osc.converged {
            if node.converged_at.is_none() {
                node.converged_at = Some(now);
                node.window.converged_after = Some(node.window.fires);
            }
        } else {
            node.converged_at = None;
            node.window.converged_after = None;
        }
    }

    fn emit(&mut self, q: &mut EventQueue<Ev>, now: SimTime, i: usize) -> Result<(), SimError> {
        let radio = self.radio;
        let node = &mut self.nodes[i];
        self.ledger
            .charge_tx(i, self.p.pulse_bits, dbm_to_watts(node.p_tx_dbm), radio);
        node.tx = [node.tx[1], (now, now + self.pulse_len)];
        let id = self.next_pulse_id;
        self.next_pulse_id += 1;
        for link in &self.links[i] {
            let start = now + link.delay;
            let end = start + self.pulse_len;
            self.incoming[link.to].push(Incoming {
                id,
                start,
                end,
                rx_dbm: link.rx_dbm,
            });
            q.schedule(end, Ev::PulseEnd { rx: link.to, id })?;
        }
        Ok(())
    }

    fn pulse_end(&mut self, q: &mut EventQueue<Ev>, now: SimTime, j: usize, id: u64) -> Result<(), SimError> {
        let Some(pos) = self.incoming[j].iter().position(|e| e.id == id) else {
            return Ok(());
        };
        let pulse = self.incoming[j][pos];
        let decoded = self.decodable(j, &pulse);
        let len = self.pulse_len;
        self.incoming[j].retain(|e| e.end + len > now);
        if !decoded {
            return Ok(());
        }

        let p = self.p;
        let airtime = len.as_secs_f64();
        let node = &mut self.nodes[j];
        let local = node.clock.local_time(now);
        let start_est = local - airtime;
        node.decoded_starts.push(start_est);
        node.window.decoded += 1;
        if node.osc.role == Role::Master || node.osc.in_refractory(local) {
            return Ok(());
        }
        if node.osc.on_pulse_decoded(p, local) {
            // The firing is timed at the start of the pulse that caused it,
            // so relaying a pulse adds no airtime to the network's phase.
            node.osc.fire(p, start_est);
            node.osc.refractory_until = node.osc.refractory_until.max(local + p.refractory);
            self.after_fire(now, j);
            self.emit(q, now, j)?;
        }
        self.schedule_natural(q, now, j)
    }

    fn decodable(&self, j: usize, pulse: &Incoming) -> bool {
        let node = &self.nodes[j];
        if !node.open || node.opened_at > pulse.start {
            return false;
        }
        if node.tx.iter().any(|&(s, e)| s < pulse.end && e > pulse.start) {
            return false;
        }
        let interferers: Vec<f64> = self.incoming[j]
            .iter()
            .filter(|e| e.id != pulse.id && e.start < pulse.end && e.end > pulse.start)
            .map(|e| e.rx_dbm)
            .collect();
        self.radio.can_decode(pulse.rx_dbm, &interferers)
    }

    fn window_close(&mut self, now: SimTime, i: usize) -> Result<(), SimError> {
        let p = self.p;
        let radio = self.radio;
        self.ledger.charge_rx(i, p.window, radio);
        self.ledger.power_down(i);
        let node = &mut self.nodes[i];
        node.open = false;
        node.version += 1;
        if node.osc.role == Role::Slave && node.osc.converged {
            if let Some(last) = node.osc.last_pulse {
                let near: Vec<f64> = node
                    .decoded_starts
                    .iter()
                    .copied()
                    .filter(|e| (e - last).abs() <= 0.5 * p.t_d)
                    .collect();
                let epoch = if near.is_empty() {
                    last
                } else {
                    near.iter().sum::<f64>() / near.len() as f64
                };
                let local = node.clock.local_time(now);
                let delta = grid_correction(p, epoch);
                node.clock.apply_correction(local + delta, now);
                node.window.correction = Some(delta);
            }
        }
        if let Some(d) = self.details.last_mut() {
            d[i] = self.nodes[i].window;
        }
        self.closed += 1;
        if self.closed == self.nodes.len() {
            self.finish_round(now);
        }
        Ok(())
    }

    fn finish_round(&mut self, now: SimTime) {
        let Some(k) = self.round.take() else { return };
        let start = self.rounds_at[k];
        let slaves = self.nodes.iter().filter(|nd| nd.osc.role == Role::Slave);
        let (tts_s, flagged) = round_tts(
            start,
            self.round_listen_s + self.p.window,
            slaves.map(|nd| nd.converged_at),
            self.p.t_d,
        );
        let record = RoundRecord {
            index: k,
            start_s: start.as_secs_f64(),
            tts_s,
            flagged,
        };
        self.records.push(record);
        self.sample(now, Some(record.tts_ms()));
    }
}

/// Time from `start` until the last converging slave converged. The round
/// is flagged when some slave never converged; if none did, the full
/// listening span is reported. A round without slaves reports one `T_d`.
pub fn round_tts(
    start: SimTime,
    listen_span_s: f64,
    slave_converged_at: impl Iterator<Item = Option<SimTime>>,
    t_d: f64,
) -> (f64, bool) {
    let mut last: Option<SimTime> = None;
    let mut slaves = 0usize;
    let mut unconverged = 0usize;
    for c in slave_converged_at {
        slaves += 1;
        match c {
            None => unconverged += 1,
            Some(t) => last = Some(last.map_or(t, |l| l.max(t))),
        }
    }
    match last {
        _ if slaves == 0 => (t_d, false),
        None => (listen_span_s, true),
        Some(t) => (t.saturating_sub(start).as_secs_f64(), unconverged > 0),
    }
}
