//! Seeded random substreams.
//!
//! Every random quantity in the crate is drawn from a ChaCha stream addressed
//! by `(seed, stream)`. Callers pick the stream index (row, feature, fold
//! assignment, ...) so results never depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type Rng = ChaCha12Rng;

/// Stream tags reserved by the library. Row- and feature-indexed streams use
/// the raw index, so tags live in the upper half of the `u64` range.
pub(crate) const TAG_CV_FOLDS: u64 = 1 << 63;
pub(crate) const TAG_GIBBS: u64 = (1 << 63) + 1;

/// Independent generator for `(seed, stream)`.
pub fn substream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derive a child seed from a parent seed and a label (splitmix64 finalizer).
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    let mut z = seed ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
