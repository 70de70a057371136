use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The crate's only randomness source. Identical seeds give identical streams.
pub type Rng64 = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng64 {
    ChaCha8Rng::seed_from_u64(seed)
}
