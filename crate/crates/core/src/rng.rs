//! Seeded random streams.
//!
//! Every random decision in a run derives from one 64-bit seed. Components
//! draw from independent ChaCha streams so that, for example, changing the
//! number of augmentation draws never perturbs weight initialization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Augment = 3,
    Data = 4,
    Subset = 5,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// Generator keyed by an arbitrary tuple, e.g. `(seed, epoch, index)`.
pub fn keyed(seed: u64, which: Stream, key: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix(seed ^ 0x5eed_0f_f10e);
    for &k in key {
        h = splitmix(h ^ k);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(h);
    rng.set_stream(which as u64);
    rng
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
