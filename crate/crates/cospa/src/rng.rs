//! All randomness flows from one master seed through named substreams, so
//! each pipeline stage is deterministic regardless of what ran before it.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a, stable across platforms and builds.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Independent stream for (stage, index) under the master seed.
pub fn substream(master_seed: u64, stage: &str, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    let mut tag = stage.as_bytes().to_vec();
    tag.extend_from_slice(&index.to_le_bytes());
    rng.set_stream(fnv1a(&tag));
    rng
}

/// Standard normal via Box-Muller; depends only on the rng stream.
pub fn normal(rng: &mut impl rand::Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
