//! Pulse-coupled oscillator state machine.
//!
//! Each node runs a leaky integrate-and-fire oscillator on its own local
//! clock: `dx/dt = s0 - gamma·x`, firing and resetting when `x` reaches
//! `x_th`. Coupling is by counting: every decoded neighbour pulse adds a
//! fixed `epsilon`. Master (GPS) nodes ignore input and fire on the `T_d`
//! grid of their clock. All times taken by this module are node-local
//! seconds; the simulator maps them to true time.

use serde::{Deserialize, Serialize};

use crate::kernel::SimTime;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcoParams {
    /// Excitation rate. When absent it is chosen so the free-running period
    /// equals `t_d`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s0: Option<f64>,
    pub gamma: f64,
    pub x_th: f64,
    pub epsilon: f64,
    pub t_d: f64,
    pub refractory: f64,
    pub window: f64,
    pub resync_period: f64,
    pub phase_tol: f64,
    pub k_confirm: u32,
    pub pulse_bits: u32,
}

impl Default for PcoParams {
    fn default() -> Self {
        PcoParams {
            s0: None,
            gamma: 0.0,
            x_th: 3.0,
            epsilon: 1.0,
            t_d: 100e-6,
            refractory: 10e-6,
            window: 5e-3,
            resync_period: 500.0,
            phase_tol: 0.02,
            k_confirm: 3,
            pulse_bits: 16,
        }
    }
}

impl PcoParams {
    pub fn excitation(&self) -> f64 {
        if let Some(s0) = self.s0 {
            return s0;
        }
        if self.gamma > 0.0 {
            self.gamma * self.x_th / (1.0 - (-self.gamma * self.t_d).exp())
        } else {
            self.x_th / self.t_d
        }
    }

    /// Receiver-on fraction of the resync schedule.
    pub fn duty_cycle(&self) -> f64 {
        self.window / self.resync_period
    }

    /// Invariant violations as `(field, message)` pairs.
    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut v = Vec::new();
        if !(self.x_th > 0.0) {
            v.push(("x_th", format!("must be > 0, got {}", self.x_th)));
        }
        if !(self.epsilon > 0.0) {
            v.push(("epsilon", format!("must be > 0, got {}", self.epsilon)));
        }
        if !(self.gamma >= 0.0) {
            v.push(("gamma", format!("must be >= 0, got {}", self.gamma)));
        }
        if let Some(s0) = self.s0 {
            if !(s0 >= 0.0) {
                v.push(("s0", format!("must be >= 0, got {s0}")));
            }
        }
        if !(self.refractory > 0.0 && self.refractory < self.t_d && self.t_d < self.window) {
            v.push((
                "refractory",
                format!(
                    "need 0 < refractory < t_d < window, got {} / {} / {}",
                    self.refractory, self.t_d, self.window
                ),
            ));
        }
        if !(self.resync_period > self.window) {
            v.push((
                "resync_period",
                format!("must exceed window, got {}", self.resync_period),
            ));
        }
        if !(self.phase_tol > 0.0) {
            v.push(("phase_tol", format!("must be > 0, got {}", self.phase_tol)));
        }
        if self.k_confirm == 0 {
            v.push(("k_confirm", "must be >= 1".to_string()));
        }
        if self.pulse_bits == 0 {
            v.push(("pulse_bits", "must be >= 1".to_string()));
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Master,
    Slave,
}

/// One emitted pulse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pulse {
    pub origin: usize,
    pub t_start: SimTime,
    pub duration: f64,
    pub tx_power_dbm: f64,
}

impl Pulse {
    pub fn new(
        origin: usize,
        t_start: SimTime,
        params: &PcoParams,
        bitrate_bps: f64,
        tx_power_dbm: f64,
    ) -> Self {
        Pulse {
            origin,
            t_start,
            duration: params.pulse_bits as f64 / bitrate_bps,
            tx_power_dbm,
        }
    }
}

/// What a firing measured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Firing {
    pub t: f64,
    pub gap: Option<f64>,
    pub phi: Option<f64>,
    /// The firing was forced by a decoded pulse rather than free-running.
    pub triggered: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OscillatorState {
    pub x: f64,
    /// Local time at which `x` was last brought up to date.
    pub anchor: f64,
    /// Local time of the most recent pulse (t_{p-1} for the next firing).
    pub last_pulse: Option<f64>,
    /// Most recent inter-pulse gap.
    pub last_gap: Option<f64>,
    /// The gap before `last_gap`.
    pub prev_gap: Option<f64>,
    pub phi: f64,
    pub refractory_until: f64,
    pub role: Role,
    pub confirm_count: u32,
    pub converged: bool,
    /// Set when a decoded pulse pushed `x` to threshold; cleared by `fire`.
    pub kicked: bool,
}

/// `x` after free-running for `dt` from `x0` (no clamping).
fn free_run(x0: f64, s0: f64, gamma: f64, dt: f64) -> f64 {
    if gamma > 0.0 {
        let eq = s0 / gamma;
        eq + (x0 - eq) * (-gamma * dt).exp()
    } else {
        x0 + s0 * dt
    }
}

impl OscillatorState {
    pub fn new(role: Role, x: f64, now: f64) -> Self {
        OscillatorState {
            x,
            anchor: now,
            last_pulse: None,
            last_gap: None,
            prev_gap: None,
            phi: 0.0,
            refractory_until: f64::NEG_INFINITY,
            role,
            confirm_count: 0,
            converged: false,
            kicked: false,
        }
    }

    /// Fresh state for a window opening at local time `now`, in phase with
    /// the node's own `T_d` grid: the oscillator is treated as having kept
    /// running while the radio was off, so it last fired on the grid point
    /// before `now` (and may still be refractory). Convergence bookkeeping
    /// starts over.
    pub fn resume(role: Role, params: &PcoParams, now: f64) -> Self {
        // Snap to the grid within 1 ns so float residue cannot push a grid
        // point to the end of the previous period.
        let k = ((now + 1e-9) / params.t_d).floor();
        let phase = (now - k * params.t_d).max(0.0);
        let x = match role {
            Role::Master => 0.0,
            Role::Slave => free_run(0.0, params.excitation(), params.gamma, phase).clamp(0.0, params.x_th),
        };
        let mut state = Self::new(role, x, now);
        state.refractory_until = now - phase + params.refractory;
        state
    }

    /// State variable advanced by `dt` along the closed-form solution of
    /// `dx/dt = s0 - gamma·x`, clamped to `[0, x_th]`. Masters do not
    /// integrate.
    pub fn integrate(&self, params: &PcoParams, dt: f64) -> OscillatorState {
        let mut next = self.clone();
        next.anchor = self.anchor + dt.max(0.0);
        if self.role == Role::Slave {
            next.x = free_run(self.x, params.excitation(), params.gamma, dt.max(0.0)).clamp(0.0, params.x_th);
        }
        next
    }

    /// Brings `x` up to local time `t`.
    pub fn advance_to(&mut self, params: &PcoParams, t: f64) {
        if t > self.anchor {
            *self = self.integrate(params, t - self.anchor);
        }
    }

    /// Local time from the anchor until `x` reaches threshold without input,
    /// or `None` if it never will.
    pub fn time_to_threshold(&self, params: &PcoParams) -> Option<f64> {
        if self.role == Role::Master {
            return None;
        }
        if self.x >= params.x_th {
            return Some(0.0);
        }
        let s0 = params.excitation();
        if params.gamma > 0.0 {
            let eq = s0 / params.gamma;
            if eq <= params.x_th {
                return None;
            }
            Some(((eq - self.x) / (eq - params.x_th)).ln() / params.gamma)
        } else if s0 > 0.0 {
            Some((params.x_th - self.x) / s0)
        } else {
            None
        }
    }

    pub fn in_refractory(&self, t: f64) -> bool {
        t < self.refractory_until
    }

    /// Counts one decoded neighbour pulse at local time `t`. Masters and
    /// refractory slaves are unaffected. Returns true when the increment
    /// pushes `x` to threshold, in which case the caller must `fire` at `t`.
    pub fn on_pulse_decoded(&mut self, params: &PcoParams, t: f64) -> bool {
        if self.role == Role::Master || self.in_refractory(t) {
            return false;
        }
        self.advance_to(params, t);
        self.x = (self.x + params.epsilon).min(params.x_th);
        self.kicked = self.x >= params.x_th;
        self.kicked
    }

    /// Emits a pulse at local time `t`: resets `x`, starts the refractory
    /// period, and measures the gap and phase `(t_p - t_{p-1}) / T_d`.
    pub fn fire(&mut self, params: &PcoParams, t: f64) -> Firing {
        let triggered = std::mem::take(&mut self.kicked);
        self.x = 0.0;
        self.anchor = t;
        self.refractory_until = t + params.refractory;
        let gap = self.last_pulse.map(|prev| t - prev);
        if let Some(g) = gap {
            self.phi = g / params.t_d;
            if let Some(last) = self.last_gap {
                if (g - last).abs() <= params.phase_tol * params.t_d {
                    self.confirm_count += 1;
                } else {
                    self.confirm_count = 0;
                }
            }
            self.prev_gap = self.last_gap;
            self.last_gap = Some(g);
        }
        self.last_pulse = Some(t);
        self.detect_convergence(params);
        Firing {
            t,
            gap,
            phi: gap.map(|g| g / params.t_d),
            triggered,
        }
    }

    /// Local convergence: the last `k_confirm` consecutive firings each had
    /// a gap within `phase_tol·T_d` of the gap before it.
    pub fn detect_convergence(&mut self, params: &PcoParams) -> bool {
        self.converged = self.confirm_count >= params.k_confirm;
        self.converged
    }
}

/// Index of the first master tick on the local `T_d` grid at or after
/// `after`; tick `k` fires at local time `k·T_d`.
pub fn master_tick_index(params: &PcoParams, after: f64) -> u64 {
    let k = (after / params.t_d).ceil().max(0.0) as u64;
    if (k as f64) * params.t_d < after {
        k + 1
    } else {
        k
    }
}

pub fn master_tick_time(params: &PcoParams, k: u64) -> f64 {
    k as f64 * params.t_d
}

/// Local-clock step that maps a synchronous pulse observed at local time
/// `epoch_local` onto the nearest multiple of `T_d`.
pub fn grid_correction(params: &PcoParams, epoch_local: f64) -> f64 {
    (epoch_local / params.t_d).round() * params.t_d - epoch_local
}

#[cfg(test)]
mod tests {
    use super::*;

    const TD: f64 = 100e-6;

    fn params() -> PcoParams {
        PcoParams::default()
    }

    fn slave(x: f64) -> OscillatorState {
        OscillatorState::new(Role::Slave, x, 0.0)
    }

    /// Fourth-order Runge-Kutta on dx/dt = s0 - gamma x, independent of the
    /// closed form used by `integrate`.
    fn rk4(x0: f64, s0: f64, gamma: f64, t: f64, steps: usize) -> f64 {
        let f = |x: f64| s0 - gamma * x;
        let h = t / steps as f64;
        let mut x = x0;
        for _ in 0..steps {
            let k1 = f(x);
            let k2 = f(x + 0.5 * h * k1);
            let k3 = f(x + 0.5 * h * k2);
            let k4 = f(x + h * k3);
            x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        x
    }

    #[test]
    fn no_drive_stays_at_rest() {
        let p = PcoParams {
            s0: Some(0.0),
            gamma: 0.0,
            ..params()
        };
        assert_eq!(slave(0.0).integrate(&p, 123.0).x, 0.0);
    }

    #[test]
    fn linear_ramp_without_leak() {
        let p = PcoParams {
            s0: Some(1.0),
            gamma: 0.0,
            x_th: 3.0,
            ..params()
        };
        assert_eq!(slave(0.0).integrate(&p, 2.0).x, 2.0);
    }

    #[test]
    fn leaky_integration_matches_independent_solutions() {
        let p = PcoParams {
            s0: Some(1.0),
            gamma: 0.5,
            x_th: 3.0,
            ..params()
        };
        for t in [0.1, 1.0, 4.0, 10.0] {
            let closed = (1.0 / 0.5) * (1.0 - (-0.5f64 * t).exp());
            let numeric = rk4(0.0, 1.0, 0.5, t, 10_000);
            let x = slave(0.0).integrate(&p, t).x;
            assert!((x - closed).abs() < 1e-12);
            assert!((x - numeric).abs() < 1e-9);
        }
        // the equilibrium s0/gamma = 2 is approached but never exceeded
        let far = slave(0.0).integrate(&p, 200.0).x;
        assert!((far - 2.0).abs() < 1e-12 && far <= 2.0);
    }

    #[test]
    fn integration_is_clamped_to_threshold() {
        let p = params();
        let s = slave(2.5).integrate(&p, 1.0);
        assert_eq!(s.x, p.x_th);
    }

    #[test]
    fn default_excitation_gives_period_td() {
        let p = params();
        assert!((p.excitation() - 3.0 / TD).abs() < 1e-6);
        assert!((slave(0.0).time_to_threshold(&p).unwrap() - TD).abs() < 1e-15);
        let leaky = PcoParams {
            gamma: 2000.0,
            ..params()
        };
        let t = slave(0.0).time_to_threshold(&leaky).unwrap();
        assert!((t - TD).abs() < 1e-12, "{t}");
    }

    #[test]
    fn master_ignores_pulses() {
        let p = params();
        let mut m = OscillatorState::new(Role::Master, 0.0, 0.0);
        let before = m.clone();
        assert!(!m.on_pulse_decoded(&p, 50e-6));
        assert_eq!(m, before);
    }

    #[test]
    fn refractory_slave_ignores_pulses() {
        let p = params();
        let mut s = slave(0.0);
        s.fire(&p, 1e-3);
        let before = s.clone();
        assert!(!s.on_pulse_decoded(&p, 1e-3 + 5e-6));
        assert_eq!(s, before);
    }

    #[test]
    fn third_unit_kick_fires_from_rest() {
        let p = PcoParams {
            s0: Some(0.0),
            ..params()
        };
        let mut s = slave(0.0);
        assert!(!s.on_pulse_decoded(&p, 1e-3));
        assert!(!s.on_pulse_decoded(&p, 2e-3));
        assert!(s.on_pulse_decoded(&p, 3e-3));
        assert_eq!(s.x, 3.0);
        let f = s.fire(&p, 3e-3);
        assert!(f.triggered);
        assert_eq!(s.x, 0.0);
    }

    #[test]
    fn kick_from_two_fires() {
        let p = params();
        let mut s = OscillatorState::new(Role::Slave, 2.0, 0.0);
        assert!(s.on_pulse_decoded(&p, 0.0));
    }

    #[test]
    fn phase_is_gap_over_td() {
        let p = params();
        for (gap, phi) in [(TD, 1.0), (0.5 * TD, 0.5), (120e-6, 1.2)] {
            let mut s = slave(0.0);
            s.fire(&p, 10.0);
            let f = s.fire(&p, 10.0 + gap);
            assert!((f.phi.unwrap() - phi).abs() < 1e-9, "{gap} -> {:?}", f.phi);
            assert!((s.phi - phi).abs() < 1e-9);
        }
    }

    #[test]
    fn first_firing_has_no_phase() {
        let p = params();
        let mut s = slave(3.0);
        let f = s.fire(&p, 1.0);
        assert_eq!(f.gap, None);
        assert_eq!(s.refractory_until, 1.0 + p.refractory);
    }

    fn fire_gaps(gaps_us: &[f64]) -> OscillatorState {
        let p = params();
        let mut s = slave(0.0);
        let mut t = 1.0;
        s.fire(&p, t);
        for g in gaps_us {
            t += g * 1e-6;
            s.fire(&p, t);
        }
        s
    }

    #[test]
    fn constant_gaps_converge() {
        let mut s = fire_gaps(&[100.0, 100.0, 100.0, 100.0]);
        assert!(s.detect_convergence(&params()));
        assert!(s.confirm_count >= 3);
    }

    #[test]
    fn alternating_gaps_do_not_converge() {
        let mut s = fire_gaps(&[100.0, 80.0, 100.0, 80.0]);
        assert!(!s.detect_convergence(&params()));
    }

    #[test]
    fn free_running_isolated_node_converges_locally() {
        let p = params();
        let mut s = OscillatorState::resume(Role::Slave, &p, 0.0);
        let mut t = 0.0;
        for _ in 0..6 {
            t += s.time_to_threshold(&p).unwrap();
            s.advance_to(&p, t);
            s.fire(&p, t);
        }
        assert!(s.converged);
        assert!((s.phi - 1.0).abs() < 1e-9);
    }

    #[test]
    fn master_fifty_ticks_per_window() {
        let p = params();
        let open = 1000.0;
        let first = master_tick_index(&p, open);
        let last = master_tick_index(&p, open + p.window);
        // ticks in [open, open + window)
        assert_eq!(last - first, 50);
        assert!((master_tick_time(&p, first) - open).abs() < 1e-9);
    }

    #[test]
    fn master_tick_true_gap_under_drift() {
        let p = params();
        let clock = crate::clock::VirtualClock::new(1e-8, 0.0);
        let a = master_tick_time(&p, 10_000);
        let b = master_tick_time(&p, 10_001);
        let true_gap = clock.true_span(b - a);
        assert!((true_gap - TD / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn duty_cycle_is_ten_to_minus_five() {
        assert!((params().duty_cycle() - 1e-5).abs() < 1e-20);
    }

    #[test]
    fn grid_correction_snaps_to_nearest_multiple() {
        let p = params();
        let d = grid_correction(&p, 500.0 + 5e-6);
        assert!((d + 5e-6).abs() < 1e-10);
        let d = grid_correction(&p, 500.0 - 3e-6);
        assert!((d - 3e-6).abs() < 1e-10);
    }

    #[test]
    fn resume_puts_oscillator_on_local_grid() {
        let p = params();
        let s = OscillatorState::resume(Role::Slave, &p, 10.0 + 30e-6);
        let t = s.time_to_threshold(&p).unwrap();
        assert!((t - 70e-6).abs() < 1e-9, "{t}");
    }

    #[test]
    fn resume_on_grid_point_is_refractory() {
        let p = params();
        let mut s = OscillatorState::resume(Role::Slave, &p, 0.25);
        assert!(s.in_refractory(0.25 + 4e-6));
        assert!(!s.on_pulse_decoded(&p, 0.25 + 4e-6));
        let late = OscillatorState::resume(Role::Slave, &p, 0.25 + 20e-6);
        assert!(!late.in_refractory(0.25 + 20e-6));
    }

    #[test]
    fn default_params_are_valid() {
        assert!(params().violations().is_empty());
        let bad = PcoParams {
            x_th: -1.0,
            ..params()
        };
        assert_eq!(bad.violations()[0].0, "x_th");
    }
}
