//! Discrete-event simulator comparing pulse-coupled-oscillator time
//! synchronization with centralized timestamp broadcast in a wireless sensor
//! network.

// Range checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod broadcast;
pub mod channel;
pub mod clock;
pub mod kernel;
pub mod metrics;
pub mod pco;
pub mod rng;
pub mod runner;
pub mod scenario;
pub mod sim;
pub mod topology;
