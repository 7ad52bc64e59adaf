//! Seed derivation for reproducible, order-independent RNG streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream whose seed is
//! derived from (master seed, stream tag, index) with a SplitMix64 chain.
//! Per-task and per-run streams therefore do not depend on generation order,
//! which is what makes parallel generation bitwise-equal to sequential.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

/// Stream tags; keep values stable, they are part of the reproducibility
/// contract baked into checkpoints and result files.
pub mod stream {
    pub const TASK: u64 = 1;
    pub const OUTLIER_PLACEMENT: u64 = 2;
    pub const INIT: u64 = 3;
    pub const TRAIN_TASKS: u64 = 4;
    pub const TEST_TASKS: u64 = 5;
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let a = splitmix64(master ^ 0xA076_1D64_78BD_642F);
    let b = splitmix64(a ^ stream);
    splitmix64(b ^ index)
}

pub fn rng_for(master: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream, index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_across_streams_and_indices() {
        let a = derive_seed(42, stream::TASK, 0);
        let b = derive_seed(42, stream::TASK, 1);
        let c = derive_seed(42, stream::OUTLIER_PLACEMENT, 0);
        let d = derive_seed(43, stream::TASK, 0);
        assert!(a != b && a != c && a != d && b != c);
    }

    #[test]
    fn derivation_is_stable() {
        // Frozen values: changing these silently would break every stored
        // checkpoint and result file.
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(derive_seed(0, 1, 2), derive_seed(0, 1, 2));
    }
}
