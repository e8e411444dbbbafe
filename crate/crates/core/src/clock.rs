//! Drifting per-node local clocks.

use crate::kernel::SimTime;

/// Local clock that runs at `1 + drift_rate` seconds per true second and can
/// be stepped (phase-corrected) but never slewed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VirtualClock {
    pub drift_rate: f64,
    /// Local reading at `epoch`, in seconds.
    pub offset: f64,
    pub epoch: SimTime,
}

fn signed_secs(t: SimTime, since: SimTime) -> f64 {
    (t.as_nanos() as i128 - since.as_nanos() as i128) as f64 / 1e9
}

impl VirtualClock {
    /// A clock reading `initial_offset` at true time zero.
    pub fn new(drift_rate: f64, initial_offset: f64) -> Self {
        VirtualClock {
            drift_rate,
            offset: initial_offset,
            epoch: SimTime::ZERO,
        }
    }

    /// Drift-free clock that reads true time.
    pub fn ideal() -> Self {
        Self::new(0.0, 0.0)
    }

    /// `offset + (1 + drift_rate) * (t_true - epoch)`, in seconds.
    pub fn local_time(&self, t_true: SimTime) -> f64 {
        self.offset + (1.0 + self.drift_rate) * signed_secs(t_true, self.epoch)
    }

    /// Local minus true time, in seconds.
    pub fn error(&self, t_true: SimTime) -> f64 {
        // Grouped so that the large absolute times cancel before rounding.
        (self.offset - self.epoch.as_secs_f64()) + self.drift_rate * signed_secs(t_true, self.epoch)
    }

    /// Converts a local elapsed span into the true span it takes.
    pub fn true_span(&self, local_secs: f64) -> f64 {
        local_secs / (1.0 + self.drift_rate)
    }

    /// True instant at which the clock will read `local`, rounded to the
    /// nearest nanosecond (saturating at zero).
    pub fn true_time_at(&self, local: f64) -> SimTime {
        let elapsed = (local - self.offset) / (1.0 + self.drift_rate);
        let ns = self.epoch.as_nanos() as f64 + elapsed * 1e9;
        if ns <= 0.0 {
            SimTime::ZERO
        } else {
            SimTime::from_nanos(ns.round() as u64)
        }
    }

    /// Steps the clock so that it reads `reference` at `t_true`. The drift
    /// rate is left alone.
    pub fn apply_correction(&mut self, reference: f64, t_true: SimTime) {
        self.offset = reference;
        self.epoch = t_true;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const T500: SimTime = SimTime::from_nanos(500_000_000_000);

    #[test]
    fn identity_clock_tracks_true_time() {
        let c = VirtualClock::ideal();
        for s in [0.0, 1e-6, 3.25, 4321.0] {
            let t = SimTime::from_secs_f64(s);
            assert_eq!(c.local_time(t), t.as_secs_f64());
            assert_eq!(c.error(t), 0.0);
        }
    }

    #[test]
    fn positive_drift_leads_by_five_micros_after_500s() {
        let c = VirtualClock::new(1e-8, 0.0);
        let lead = c.local_time(T500) - 500.0;
        assert!((lead - 5e-6).abs() < 1e-12, "lead = {lead}");
        assert!((c.error(T500) - 5e-6).abs() < 1e-15);
    }

    #[test]
    fn negative_drift_lags_by_five_micros_after_500s() {
        let c = VirtualClock::new(-1e-8, 0.0);
        assert!((c.error(T500) + 5e-6).abs() < 1e-15);
    }

    #[test]
    fn correcting_to_current_reading_is_a_fixpoint() {
        let mut c = VirtualClock::new(1e-8, 0.25);
        let t = SimTime::from_secs_f64(123.0);
        let before = c.local_time(t);
        let later = SimTime::from_secs_f64(600.0);
        let expected_later = c.local_time(later);
        c.apply_correction(before, t);
        assert_eq!(c.local_time(t), before);
        assert!((c.local_time(later) - expected_later).abs() < 1e-9);
    }

    #[test]
    fn correction_zeroes_error_then_regrows_at_drift() {
        let mut c = VirtualClock::new(1e-8, 0.0);
        assert!((c.error(T500) - 5e-6).abs() < 1e-15);
        c.apply_correction(T500.as_secs_f64(), T500);
        assert_eq!(c.error(T500), 0.0);
        let t = SimTime::from_secs_f64(600.0);
        assert!((c.error(t) - 1e-6).abs() < 1e-15);
        assert_eq!(c.drift_rate, 1e-8);
    }

    #[test]
    fn last_correction_wins() {
        let mut c = VirtualClock::new(0.0, 0.0);
        let t = SimTime::from_secs_f64(10.0);
        c.apply_correction(11.0, t);
        c.apply_correction(9.5, t);
        assert_eq!(c.local_time(t), 9.5);
    }

    #[test]
    fn true_time_at_inverts_local_time() {
        let c = VirtualClock::new(-1e-8, 3e-5);
        for s in [0.5, 17.0, 4999.9] {
            let t = c.true_time_at(s);
            assert!((c.local_time(t) - s).abs() < 1e-9);
        }
    }
}
