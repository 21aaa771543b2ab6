use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keep independent noise sources decorrelated.
pub(crate) mod tag {
    pub const CELL_STIFFNESS: u64 = 0x01;
    pub const CELL_ACOUSTIC: u64 = 0x02;
    pub const PALPATION: u64 = 0x03;
    pub const FRAME: u64 = 0x04;
    pub const LASER: u64 = 0x05;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator keyed by `(seed, tag, index)`.
///
/// Keying by index rather than drawing from one sequential stream means a
/// resumed run reproduces exactly the draws of an uninterrupted one.
pub(crate) fn stream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let key = splitmix64(splitmix64(seed ^ splitmix64(tag)) ^ index);
    ChaCha8Rng::seed_from_u64(key)
}
