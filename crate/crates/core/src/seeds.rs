//! Deterministic derivation of independent RNG seeds.

/// Mixes `base` and `stream` into a new seed with the splitmix64 finalizer.
///
/// Distinct streams of one base give unrelated seeds, so nested uses
/// (`derive_seed(derive_seed(s, a), b)`) stay reproducible.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
