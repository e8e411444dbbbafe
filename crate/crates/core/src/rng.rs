//! Seeded, purpose-labelled random streams.
//!
//! Each stream is a ChaCha12 generator keyed by the scenario seed with the
//! stream label selecting an independent ChaCha stream, so draws from one
//! purpose never perturb another (the mobility trajectory is the same no
//! matter which protocol runs on top of it).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamId {
    Placement,
    DriftSign,
    ClockOffset,
    Masters,
    Mobility,
    Protocol,
}

impl StreamId {
    fn label(self) -> u64 {
        match self {
            StreamId::Placement => 1,
            StreamId::DriftSign => 2,
            StreamId::ClockOffset => 3,
            StreamId::Masters => 4,
            StreamId::Mobility => 5,
            StreamId::Protocol => 6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: StreamId,
    rng: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: StreamId) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        let mut rng = ChaCha12Rng::from_seed(key);
        rng.set_stream(stream_id.label());
        RngStream { seed, stream_id, rng }
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn sign(&mut self) -> f64 {
        if self.rng.random::<bool>() {
            1.0
        } else {
            -1.0
        }
    }
}

impl rand::RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
