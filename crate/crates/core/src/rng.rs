//! Counter-based random streams.
//!
//! Every sample block draws from its own ChaCha8 stream, addressed by the
//! run seed and a stream index. Results therefore depend only on the seed and
//! the block layout, never on how blocks are spread across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Address of an independent random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Sub-stream `index` of this stream. Distinct `(stream, index)` pairs
    /// map to distinct ChaCha stream ids as long as `index < 2^32`.
    pub fn substream(self, index: u64) -> Self {
        Self { seed: self.seed, stream: self.stream.wrapping_mul(1 << 32).wrapping_add(index) }
    }

    pub fn rng(self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}
