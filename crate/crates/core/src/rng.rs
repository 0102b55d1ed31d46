use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent ChaCha8 stream for `(seed, domain, index)`. Every random
/// quantity in the crate is drawn from one of these so results do not depend
/// on generation order or thread count.
pub(crate) fn stream(seed: u64, domain: u8, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((domain as u64) << 56) | (index & 0x00ff_ffff_ffff_ffff));
    rng
}

pub(crate) mod domain {
    pub const GAUSSIAN: u8 = 1;
    pub const SPARSE: u8 = 2;
    pub const SINGLE_PIXEL: u8 = 3;
    pub const SRFT_ROWS: u8 = 4;
    pub const SRFT_PHASES: u8 = 5;
    pub const PLANTED: u8 = 6;
    pub const SCENE: u8 = 7;
    pub const NOISE: u8 = 8;
}
