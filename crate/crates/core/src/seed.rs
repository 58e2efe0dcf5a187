//! Deterministic seed derivation.
//!
//! Every randomized stage of the pipeline (weight init, dropout masks, blur
//! trajectories, batch sampling) draws from its own stream seeded by
//! `derive(base, salt)`. Parallel and serial runs therefore agree, and a run
//! resumed at iteration `i` sees exactly the streams the uninterrupted run
//! saw.

/// Mix a base seed with a salt (splitmix64 finalizer).
pub fn derive(base: u64, salt: u64) -> u64 {
    let mut z = base.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(salt.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Two-level derivation, e.g. `(run seed, iteration, block)`.
pub fn derive2(base: u64, salt_a: u64, salt_b: u64) -> u64 {
    derive(derive(base, salt_a), salt_b)
}
