//! Counter-style random streams.
//!
//! Every consumer derives its generator from `(seed, domain, index)`, so results
//! never depend on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DOMAIN_SIMULATE: u64 = 0x5349_4d55;
pub const DOMAIN_BOOTSTRAP: u64 = 0x424f_4f54;
pub const DOMAIN_INIT: u64 = 0x494e_4954;
pub const DOMAIN_SHUFFLE: u64 = 0x5348_5546;

/// Generator for item `index` of the stream family identified by `(seed, domain)`.
pub fn stream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let key = seed ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}
