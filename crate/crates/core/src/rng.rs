//! Reproducible random streams.
//!
//! Every replica owns one ChaCha12 stream (`rand_chacha::ChaCha12Rng`). The
//! key is derived from the experiment seed with `SeedableRng::seed_from_u64`
//! and the 64-bit stream word is set to the replica index, so replicas are
//! independent, can run in any order or in parallel, and replay bit-for-bit.
//! Normal variates use `rand_distr::StandardNormal` (ziggurat).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

pub type Stream = ChaCha12Rng;

pub const RNG_ALGORITHM: &str =
    "ChaCha12Rng: key = seed_from_u64(seed), stream = replica index; normals via ziggurat";

pub fn replica_stream(seed: u64, replica: u64) -> Stream {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(replica);
    rng
}

#[inline]
pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn fill_normal<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}
