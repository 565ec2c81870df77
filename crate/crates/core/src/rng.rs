//! Seed partitioning.
//!
//! Every random stream in a run is derived from one base seed and a component
//! name: `derive_seed(base, "stage1/graph0")`. The derivation is FNV-1a over the
//! name bytes followed by a splitmix64 finalizer mixed with the base seed, so it
//! is stable across platforms and compiler versions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, component: &str) -> u64 {
    splitmix64(fnv1a(component.as_bytes()) ^ splitmix64(base))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn component_rng(base: u64, component: &str) -> Rng {
    rng_from_seed(derive_seed(base, component))
}
