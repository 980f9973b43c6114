//! Named random sub-streams derived from a single root seed.
//!
//! Every consumer of randomness (task generation, rollouts, policy
//! initialisation) asks for its own stream by name and index, so any
//! component can be replayed in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream used for synthetic task generation.
pub const TASK_STREAM: &str = "task";
/// Stream used for held-out evaluation tasks.
pub const EVAL_STREAM: &str = "eval";
/// Stream used for episode rollouts.
pub const ROLLOUT_STREAM: &str = "rollout";
/// Stream used for initial policy parameters.
pub const POLICY_INIT_STREAM: &str = "policy-init";
/// Stream used for prompt sampling during training.
pub const BATCH_STREAM: &str = "batch";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Derives a child seed from `root`, a stream name and a path of indices.
pub fn derive(root: u64, stream: &str, path: &[u64]) -> u64 {
    let mut h = splitmix64(root ^ fnv1a(stream.as_bytes()));
    for &p in path {
        h = splitmix64(h ^ splitmix64(p));
    }
    h
}

/// A ChaCha generator for the given sub-stream.
pub fn stream_rng(root: u64, stream: &str, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(root, stream, path))
}
