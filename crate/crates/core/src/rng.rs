//! Labeled, reproducible random streams.
//!
//! Every consumer of randomness asks for a stream by label. A stream is a
//! ChaCha8 generator keyed by the experiment seed with the ChaCha stream id set
//! from a hash of the label, so adding a new consumer never shifts the draws
//! seen by an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A named random stream derived from a 64-bit seed.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RngStream {
    seed: u64,
    label: String,
}

impl RngStream {
    pub fn new(seed: u64, label: impl Into<String>) -> Self {
        Self {
            seed,
            label: label.into(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// A stream nested under this one, e.g. `hmc` -> `hmc/chain`.
    pub fn child(&self, label: &str) -> Self {
        Self::new(self.seed, format!("{}/{}", self.label, label))
    }

    /// The `index`-th indexed substream, used for per-item or per-chain draws.
    pub fn substream(&self, index: u64) -> Self {
        Self::new(self.seed, format!("{}#{}", self.label, index))
    }

    /// Fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(fnv1a(self.label.as_bytes()));
        rng
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
