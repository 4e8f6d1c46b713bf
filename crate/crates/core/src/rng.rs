//! Seeded randomness. Every generator in this crate takes an explicit RNG or
//! seed; there is no hidden global state, so results are reproducible from
//! the seeds alone.



/// The RNG used throughout the crate. ChaCha8 is deterministic across
/// platforms and fast enough for training noise.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Build an RNG from a 64-bit seed.
pub fn from_seed(seed: u64) -> Rng {
    use rand_core::SeedableRng;
    Rng::seed_from_u64(seed)
}

/// Derive an independent stream seed from a master seed and a salt
/// (splitmix64 finalizer). Used to give each utterance, speaker or bootstrap
/// replicate its own reproducible stream.
pub fn derive_seed(master: u64, salt: u64) -> u64 {
    let mut z = master
        .wrapping_add(salt.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform sample in [0, 1) with 53 bits of precision.
pub fn uniform(rng: &mut impl rand_core::Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform sample in [lo, hi).
pub fn uniform_in(rng: &mut impl rand_core::Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * uniform(rng)
}

/// Standard normal sample via Box-Muller. Consumes exactly two words per
/// call, which keeps streams reproducible regardless of call sites.
pub fn normal(rng: &mut impl rand_core::Rng) -> f64 {
    let u1 = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    let u2 = uniform(rng);
    // Guard against ln(0).
    let r = crate::fmath::sqrt(-2.0 * crate::fmath::ln(1.0 - u1));
    r * crate::fmath::cos(2.0 * core::f64::consts::PI * u2)
}

/// Uniform integer in [0, n). Rejection-free (modulo bias is negligible for
/// the n used here, but use Lemire-style widening to avoid it anyway).
pub fn below(rng: &mut impl rand_core::Rng, n: usize) -> usize {
    debug_assert!(n > 0);
    ((rng.next_u64() as u128 * n as u128) >> 64) as usize
}

/// In-place Fisher-Yates shuffle.
pub fn shuffle<T>(rng: &mut impl rand_core::Rng, slice: &mut [T]) {
    for i in (1..slice.len()).rev() {
        let j = below(rng, i + 1);
        slice.swap(i, j);
    }
}
