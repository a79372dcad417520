//! Uncertainty-attributed point-cloud registration feeding a risk-adaptive
//! contouring MPC with control-barrier-function safety constraints.
//!
//! The pipeline, module by module:
//!
//! - [`cloud`]: synthetic shapes, perturbation injection, normals, k-d tree.
//! - [`registration`]: point-to-plane ICP solved by robust-kernel IRLS.
//! - [`pko`]: kernel-scale selection by Jensen-Shannon matching, plus the
//!   concept-gated parameter update.
//! - [`attribution`]: registration features, one-vs-rest Laplace GP
//!   classifier, concept activation vectors and the OOD reject rule.
//! - [`risk`]: collapse a concept report into a bounded risk and inflate the
//!   controller's safety parameters.
//! - [`control`]: planar 3-link contouring MPC with barrier constraints,
//!   Gauss-Newton SQP over a dense QP.
//! - [`sim`]: closed-loop harness with an occluded dynamic obstacle.
//!
//! [`bench`] runs the registration benchmark and builds the labeled
//! dataset; [`config`] holds the single configuration tree that drives
//! every command.

pub mod attribution;
pub mod bench;
pub mod cloud;
pub mod config;
pub mod control;
pub mod error;
pub mod io;
pub mod pko;
pub mod registration;
pub mod risk;
pub mod sim;

pub use error::{Error, Result};

/// Deterministic RNG used by every seeded generator in the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}

/// Mixes a base seed with cell coordinates (splitmix64 finalizer per part)
/// so that independent cells draw from unrelated streams.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut h = base;
    for &p in parts {
        h = h.wrapping_add(p.wrapping_add(0x9e37_79b9_7f4a_7c15));
        h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 31;
    }
    h
}
