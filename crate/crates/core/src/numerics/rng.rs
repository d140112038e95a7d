//! Path-keyed random streams.
//!
//! Every consumer of randomness derives its own [`RngStream`] from the
//! experiment's master seed plus a path of integers such as
//! `[round, client, purpose]`. The path is hashed into a ChaCha key, so a
//! stream never depends on how many draws any other stream has made. This is
//! what lets clients train in parallel and still reproduce the sequential run
//! bit for bit.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Purpose tags appended to stream paths. The numeric values are part of the
/// reproducibility contract: changing one changes every downstream draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Data = 1,
    Noise = 2,
    Partition = 3,
    Init = 4,
    Select = 5,
    Shuffle = 6,
    Augment = 7,
    MixWeight = 8,
    Peer = 9,
    Test = 10,
    /// Root of one client's local training in one round.
    Local = 11,
}

impl From<Purpose> for u64 {
    fn from(p: Purpose) -> u64 {
        p as u64
    }
}

/// A deterministic random stream identified by `(master_seed, path)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    path: Vec<u64>,
    rng: ChaCha8Rng,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive_key(master_seed: u64, path: &[u64]) -> [u8; 32] {
    // Four independent lanes, each absorbing the length-prefixed path.
    let mut key = [0u8; 32];
    for (lane, chunk) in key.chunks_exact_mut(8).enumerate() {
        let mut h = splitmix64(master_seed ^ splitmix64(lane as u64 + 1));
        h = splitmix64(h ^ path.len() as u64);
        for &step in path {
            h = splitmix64(h ^ splitmix64(step));
        }
        chunk.copy_from_slice(&h.to_le_bytes());
    }
    key
}

impl RngStream {
    pub fn new(master_seed: u64, path: &[u64]) -> Self {
        let rng = ChaCha8Rng::from_seed(derive_key(master_seed, path));
        Self {
            master_seed,
            path: path.to_vec(),
            rng,
        }
    }

    /// Root stream for a seed (empty path).
    pub fn root(master_seed: u64) -> Self {
        Self::new(master_seed, &[])
    }

    /// Child stream whose path is this stream's path plus `step`.
    ///
    /// The child depends only on the path, not on how far this stream has
    /// been advanced.
    pub fn derive(&self, step: impl Into<u64>) -> Self {
        let mut path = self.path.clone();
        path.push(step.into());
        Self::new(self.master_seed, &path)
    }

    /// Child stream with several path steps appended at once.
    pub fn derive_path(&self, steps: &[u64]) -> Self {
        let mut path = self.path.clone();
        path.extend_from_slice(steps);
        Self::new(self.master_seed, &path)
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn path(&self) -> &[u64] {
        &self.path
    }
}

impl RngCore for RngStream {
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
