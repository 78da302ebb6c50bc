//! Counter-based, stream-splittable random streams.
//!
//! Every stream is a ChaCha8 keystream keyed by `(master_seed,
//! replication_index)` with the ChaCha stream word set to a [`StreamId`].
//! Distinct keys or stream ids never share keystream blocks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SimSeed {
    pub master_seed: u64,
    pub replication_index: u64,
}

/// Sub-stream selector within one replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum StreamId {
    PathIncrements = 1,
    ObservationNoise = 2,
    InitialState = 3,
    Metropolis = 4,
    ErgodicAverage = 5,
}

const KEY_TAG: &[u8; 16] = b"qla-core/stream\0";

impl SimSeed {
    pub fn new(master_seed: u64, replication_index: u64) -> Self {
        Self {
            master_seed,
            replication_index,
        }
    }

    pub fn stream(&self, id: StreamId) -> ChaCha8Rng {
        self.stream_raw(id as u64)
    }

    /// Stream with an arbitrary id; ids below 16 are reserved for [`StreamId`].
    pub fn stream_raw(&self, id: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.master_seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.replication_index.to_le_bytes());
        key[16..].copy_from_slice(KEY_TAG);
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(id);
        rng
    }
}
