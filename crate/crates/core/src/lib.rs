//! Decentralized multi-quadrotor navigation: rigid-body simulator,
//! minimum-snap reference planner, barrier-certificate safety filter,
//! simulated time-of-flight sensing, a compact attention policy with a
//! recurrent critic, a two-stage PPO trainer, and the evaluation harness.

pub mod checkpoint;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod harness;
pub mod policy;
pub mod rl;
pub mod safety;
pub mod scenario;
pub mod sensing;
pub mod sim;
pub mod trajectory;

pub use dynamics::{ControlInput, QuadrotorParams, QuadrotorState};
pub use error::{Error, Result};
pub use geometry::{Cylinder, Room};
pub use safety::{ConstraintSet, SafeControlResult, SafetyParams};
pub use trajectory::{GoalState, PiecewisePolynomial, Waypoint};

/// Deterministic random stream used everywhere in the crate.
pub type SimRng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SimRng {
    use rand::SeedableRng;
    SimRng::seed_from_u64(seed)
}

/// Derives an independent child seed from a parent seed and a stream index.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the combined input
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
