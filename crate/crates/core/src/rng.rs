use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Seeded generator shared by every randomized stage.
pub(crate) fn seeded(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}
