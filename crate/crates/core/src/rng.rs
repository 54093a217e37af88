//! Reproducible random streams.
//!
//! Every consumer of randomness draws from its own ChaCha8 stream whose seed is
//! a hash of `(master seed, agent, episode, purpose)`. Streams never share
//! state, so the order in which agents are scheduled cannot change results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type StreamRng = ChaCha8Rng;

/// Agent slot used for streams that belong to the environment, not an agent.
pub const WORLD_SLOT: u32 = u32::MAX;

/// What a stream is used for. Each purpose gets an independent stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Purpose {
    Layout,
    Spawn,
    Dynamics,
    Act,
    Train,
    Init,
    Mitigation,
    Eval,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Layout => 0x4c41_594f,
            Purpose::Spawn => 0x5350_574e,
            Purpose::Dynamics => 0x4459_4e41,
            Purpose::Act => 0x4143_5421,
            Purpose::Train => 0x5452_4e21,
            Purpose::Init => 0x494e_4954,
            Purpose::Mitigation => 0x4d49_5447,
            Purpose::Eval => 0x4556_414c,
        }
    }
}

/// Identifies one stream. Serialized into checkpoints so a replay can rebuild it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamId {
    pub master_seed: u64,
    pub agent: u32,
    pub episode: u64,
    pub purpose: Purpose,
}

impl StreamId {
    pub fn new(master_seed: u64, agent: u32, episode: u64, purpose: Purpose) -> Self {
        Self { master_seed, agent, episode, purpose }
    }

    pub fn seed(&self) -> u64 {
        let mut h = splitmix64(self.master_seed ^ 0x9e37_79b9_7f4a_7c15);
        h = splitmix64(h ^ u64::from(self.agent));
        h = splitmix64(h ^ self.episode);
        splitmix64(h ^ self.purpose.tag())
    }

    pub fn rng(&self) -> StreamRng {
        ChaCha8Rng::seed_from_u64(self.seed())
    }
}

/// Shorthand for `StreamId::new(..).rng()`.
pub fn stream(master_seed: u64, agent: u32, episode: u64, purpose: Purpose) -> StreamRng {
    StreamId::new(master_seed, agent, episode, purpose).rng()
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
