use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PolicyInput, MAX_FRAMES_PER_SELECTION};
use crate::env::Action;

/// Uniform exploration baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomPolicy {
    /// Probability of selecting while selections remain.
    pub select_prob: f64,
}

impl Default for RandomPolicy {
    fn default() -> Self {
        Self { select_prob: 0.5 }
    }
}

impl RandomPolicy {
    pub fn act(&self, input: &PolicyInput, rng: &mut ChaCha8Rng) -> Action {
        let n = input.observation.len();
        if input.selections_remaining > 0 && n > 0 && rng.gen_bool(self.select_prob) {
            let size = rng.gen_range(1..=n.min(MAX_FRAMES_PER_SELECTION));
            let frames = sample(rng, n, size).into_iter().map(|i| input.observation[i].0);
            Action::select(frames)
        } else {
            Action::answer(rng.gen_range(0..input.option_count))
        }
    }
}
