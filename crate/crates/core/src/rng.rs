//! Keyed random streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha8 stream whose key
//! is derived from `(seed, index, tag)`. ChaCha is a counter-based generator,
//! so streams are reproducible bit-for-bit on every platform and two streams
//! with different keys never share state. Tags separate the roles a single
//! `(seed, index)` pair plays (task sampling, observation noise, model init...).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Stream roles.
pub mod tag {
    pub const TASK: u64 = 0x7461_736b;
    pub const LATENT: u64 = 0x6c61_7465;
    pub const NOISE_FIELD: u64 = 0x6e66_6c64;
    pub const OBS_NOISE: u64 = 0x6f62_736e;
    pub const MODEL_INIT: u64 = 0x696e_6974;
    pub const TRAIN_BATCH: u64 = 0x6261_7463;
    pub const INIT_DESIGN: u64 = 0x6465_7369;
    pub const ACQUISITION: u64 = 0x6163_7175;
    pub const THOMPSON: u64 = 0x7473_616d;
    pub const RANDOM_POLICY: u64 = 0x726e_6470;
    pub const POOL: u64 = 0x706f_6f6c;
    pub const WARM_START: u64 = 0x7761_726d;
    pub const TEASER: u64 = 0x7465_6173;
    pub const EPIG_TARGETS: u64 = 0x6570_6967;
    pub const SOBOL: u64 = 0x736f_626c;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a key triple into a single 64-bit seed.
pub fn derive_seed(seed: u64, index: u64, tag: u64) -> u64 {
    let a = splitmix64(seed ^ 0x5851_f42d_4c95_7f2d);
    let b = splitmix64(a ^ index.rotate_left(17));
    splitmix64(b ^ tag.rotate_left(41))
}

/// Opens the stream for `(seed, index, tag)`.
pub fn stream(seed: u64, index: u64, tag: u64) -> Stream {
    let mut key = [0u8; 32];
    let mut state = derive_seed(seed, index, tag);
    for chunk in key.chunks_exact_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
