//! Discrete-event scheduling core.
//!
//! Simulation time is kept as integer nanoseconds so that ordering and
//! tie-breaking are exact and runs are reproducible bit for bit.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::ops::{Add, Sub};

use thiserror::Error;

const NANOS_PER_SEC: f64 = 1e9;

/// An instant (or span) of true simulation time, in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_nanos(ns: u64) -> Self {
        SimTime(ns)
    }

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us * 1_000)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000_000)
    }

    /// Rounds to the nearest nanosecond. Negative or non-finite input saturates.
    pub fn from_secs_f64(secs: f64) -> Self {
        if !secs.is_finite() {
            return if secs > 0.0 { SimTime::MAX } else { SimTime::ZERO };
        }
        if secs <= 0.0 {
            return SimTime::ZERO;
        }
        let ns = (secs * NANOS_PER_SEC).round();
        if ns >= u64::MAX as f64 {
            SimTime::MAX
        } else {
            SimTime(ns as u64)
        }
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / NANOS_PER_SEC
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }

    pub fn checked_sub(self, other: SimTime) -> Option<SimTime> {
        self.0.checked_sub(other.0).map(SimTime)
    }
}

impl Add for SimTime {
    type Output = SimTime;

    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_add(rhs.0))
    }
}

impl Sub for SimTime {
    type Output = SimTime;

    /// Panics on underflow in debug builds; use `checked_sub` when unsure.
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:09}s", self.0 / 1_000_000_000, self.0 % 1_000_000_000)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KernelError {
    #[error("event scheduled in the past: fire_at {fire_at} < now {now}")]
    ScheduledInPast { fire_at: SimTime, now: SimTime },
    #[error("run_until target {target} is before current time {now}")]
    RunBackwards { target: SimTime, now: SimTime },
}

/// A scheduled event. `seq` is the creation ordinal and breaks ties between
/// events with equal `fire_at`.
#[derive(Debug, Clone)]
pub struct Event<K> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub kind: K,
}

impl<K> PartialEq for Event<K> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}

impl<K> Eq for Event<K> {}

impl<K> PartialOrd for Event<K> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<K> Ord for Event<K> {
    // BinaryHeap is a max-heap; invert so the earliest (fire_at, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .fire_at
            .cmp(&self.fire_at)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Priority queue of pending events plus the current simulation time.
#[derive(Debug)]
pub struct EventQueue<K> {
    heap: BinaryHeap<Event<K>>,
    now: SimTime,
    next_seq: u64,
    processed: u64,
}

impl<K> Default for EventQueue<K> {
    fn default() -> Self {
        Self::new()
    }
}

impl<K> EventQueue<K> {
    pub fn new() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            now: SimTime::ZERO,
            next_seq: 0,
            processed: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Total events dispatched over the queue's lifetime.
    pub fn processed(&self) -> u64 {
        self.processed
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|e| e.fire_at)
    }

    /// Enqueues `kind` at `fire_at`. Scheduling before the current time is a
    /// protocol bug and is rejected.
    pub fn schedule(&mut self, fire_at: SimTime, kind: K) -> Result<u64, KernelError> {
        if fire_at < self.now {
            return Err(KernelError::ScheduledInPast {
                fire_at,
                now: self.now,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Event { fire_at, seq, kind });
        Ok(seq)
    }

    /// Pops the next event if it is due at or before `t_end`, advancing time.
    pub fn pop_due(&mut self, t_end: SimTime) -> Option<Event<K>> {
        match self.heap.peek() {
            Some(e) if e.fire_at <= t_end => {}
            _ => return None,
        }
        let event = self.heap.pop()?;
        debug_assert!(event.fire_at >= self.now);
        self.now = event.fire_at;
        self.processed += 1;
        Some(event)
    }

    /// Processes every event with `fire_at <= t_end` in (fire_at, seq) order,
    /// including events scheduled by the handler itself, then sets the clock
    /// to `t_end`. Returns the number of events processed.
    pub fn run_until<E, F>(&mut self, t_end: SimTime, mut handler: F) -> Result<usize, E>
    where
        F: FnMut(&mut Self, Event<K>) -> Result<(), E>,
        E: From<KernelError>,
    {
        if t_end < self.now {
            return Err(KernelError::RunBackwards {
                target: t_end,
                now: self.now,
            }
            .into());
        }
        let mut count = 0;
        while let Some(event) = self.pop_due(t_end) {
            handler(self, event)?;
            count += 1;
        }
        self.now = t_end;
        Ok(count)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn drain(q: &mut EventQueue<&'static str>, t_end: SimTime) -> Vec<&'static str> {
        let mut seen = Vec::new();
        q.run_until::<KernelError, _>(t_end, |_, e| {
            seen.push(e.kind);
            Ok(())
        })
        .unwrap();
        seen
    }

    #[test]
    fn schedule_at_now_runs_before_later_events() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_millis(5), "later").unwrap();
        q.schedule(SimTime::ZERO, "now").unwrap();
        assert_eq!(drain(&mut q, SimTime::from_millis(10)), vec!["now", "later"]);
    }

    #[test]
    fn equal_times_process_in_seq_order() {
        let mut q = EventQueue::new();
        let t = SimTime::from_micros(7);
        for label in ["a", "b", "c", "d"] {
            q.schedule(t, label).unwrap();
        }
        assert_eq!(drain(&mut q, t), vec!["a", "b", "c", "d"]);
    }

    #[test]
    fn scheduling_in_the_past_is_rejected() {
        let mut q: EventQueue<()> = EventQueue::new();
        q.run_until::<KernelError, _>(SimTime::from_secs_f64(1.0), |_, _| Ok(()))
            .unwrap();
        let err = q.schedule(SimTime::from_nanos(999_999_999), ()).unwrap_err();
        assert_eq!(
            err,
            KernelError::ScheduledInPast {
                fire_at: SimTime::from_nanos(999_999_999),
                now: SimTime::from_secs_f64(1.0),
            }
        );
    }

    #[test]
    fn empty_run_advances_time() {
        let mut q: EventQueue<()> = EventQueue::new();
        let n = q
            .run_until::<KernelError, _>(SimTime::from_secs_f64(10.0), |_, _| Ok(()))
            .unwrap();
        assert_eq!(n, 0);
        assert_eq!(q.now(), SimTime::from_secs_f64(10.0));
    }

    #[test]
    fn run_until_stops_at_boundary() {
        let mut q = EventQueue::new();
        for s in [1.0, 2.0, 3.0] {
            q.schedule(SimTime::from_secs_f64(s), s).unwrap();
        }
        let n = q
            .run_until::<KernelError, _>(SimTime::from_secs_f64(2.5), |_, _| Ok(()))
            .unwrap();
        assert_eq!(n, 2);
        assert_eq!(q.len(), 1);
        assert_eq!(q.now(), SimTime::from_secs_f64(2.5));
    }

    #[test]
    fn follow_on_events_inside_horizon_are_processed() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_secs_f64(1.0), 0u32).unwrap();
        let mut seen = Vec::new();
        let n = q
            .run_until::<KernelError, _>(SimTime::from_secs_f64(5.0), |q, e| {
                seen.push((e.fire_at, e.kind));
                if e.kind < 3 {
                    q.schedule(e.fire_at + SimTime::from_secs_f64(1.0), e.kind + 1)?;
                }
                Ok(())
            })
            .unwrap();
        assert_eq!(n, 4);
        assert!(seen.windows(2).all(|w| w[0].0 <= w[1].0));
    }

    #[test]
    fn four_microsecond_pulse_is_representable() {
        let pulse = SimTime::from_secs_f64(16.0 / 4e6);
        assert_eq!(pulse.as_nanos(), 4_000);
    }

    #[test]
    fn run_backwards_is_an_error() {
        let mut q: EventQueue<()> = EventQueue::new();
        q.run_until::<KernelError, _>(SimTime::from_millis(2), |_, _| Ok(()))
            .unwrap();
        let err = q
            .run_until::<KernelError, _>(SimTime::from_millis(1), |_, _| Ok(()))
            .unwrap_err();
        assert!(matches!(err, KernelError::RunBackwards { .. }));
    }
}
