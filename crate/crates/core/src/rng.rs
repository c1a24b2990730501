//! Counter-based random streams.
//!
//! A [`StreamKey`] names one experiment-level stream; sample `i` of that
//! stream draws from ChaCha8 keyed by `(master, stream)` with stream
//! position `i`, so results never depend on how samples are spread over
//! worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Number of consecutive samples that share one ChaCha stream in the
/// time-major batch samplers.
pub const BATCH: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub master: u64,
    pub stream: u64,
}

impl StreamKey {
    pub fn new(master: u64, stream: u64) -> Self {
        StreamKey { master, stream }
    }

    /// Stream for a named experiment and its integer parameters.
    pub fn derive(master: u64, label: &str, params: &[u64]) -> Self {
        StreamKey { master, stream: hash_label(0, label, params) }
    }

    /// Independent sub-stream.
    pub fn child(&self, label: &str) -> Self {
        StreamKey { master: self.master, stream: hash_label(self.stream, label, &[]) }
    }

    /// Generator for sample `index`.
    pub fn rng(&self, index: u64) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&self.master.to_le_bytes());
        seed[8..16].copy_from_slice(&self.stream.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(index);
        rng
    }

    /// Generator shared by the samples `batch * BATCH .. (batch + 1) * BATCH`.
    pub fn batch_rng(&self, batch: u64) -> ChaCha8Rng {
        self.child("batch").rng(batch)
    }
}

fn hash_label(parent: u64, label: &str, params: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(parent.to_le_bytes());
    h.update(label.as_bytes());
    for p in params {
        h.update(p.to_le_bytes());
    }
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("digest has 32 bytes"))
}
