//! Named random substreams derived from one run seed.
//!
//! Each consumer (initialization, shuffling, generation, fold assignment) draws
//! from its own ChaCha stream keyed by `(seed, name)` and indexed by a counter
//! such as the bag or epoch number, so results never depend on call order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub const INIT: &str = "init";
pub const SHUFFLE: &str = "shuffle";
pub const GENERATOR: &str = "generator";
pub const SIGNATURE: &str = "signature";
pub const FOLDS: &str = "folds";

fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn substream(seed: u64, name: &str, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(name));
    rng.set_stream(index);
    rng
}
