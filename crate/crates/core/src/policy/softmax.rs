//! Learnable softmax selection policy.
//!
//! Each context frame gets a score `w_r · (signal, rank, 1, contrast) / temperature`,
//! where `w_r` is the first-round weight block before any selection and the
//! later-round block afterwards.
//! A selection is drawn by picking frames one at a time from a softmax over
//! the remaining frames plus a "stop" option scored 0 (stop is unavailable
//! before the first pick, and forced after [`MAX_FRAMES_PER_SELECTION`]).
//! The probability of a selection set sums over every order in which its
//! frames could have been picked, so log-probabilities are exact.
//!
//! Whether to answer instead of selecting is a Bernoulli draw with logit
//! `(ANSWER_GAIN * (max_signal - threshold) + count_bias * selections_used) / temperature`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use itertools::Itertools;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PolicyError, PolicyInput, MAX_FRAMES_PER_SELECTION};
use crate::env::Action;
use crate::format::FORMAT_HEADER;
use crate::timeline::FrameIndex;

pub const FEATURE_COUNT: usize = 4;
pub const PARAM_COUNT: usize = 2 * FEATURE_COUNT + 2;
/// Scale of the max-signal term in the answer logit.
pub const ANSWER_GAIN: f64 = 10.0;

pub const W_SIGNAL: usize = 0;
pub const W_RANK: usize = 1;
pub const W_BIAS: usize = 2;
pub const W_CONTRAST: usize = 3;
/// Offset of the later-round frame weights.
pub const LATER_ROUND: usize = FEATURE_COUNT;
pub const W_ANSWER_THRESHOLD: usize = 2 * FEATURE_COUNT;
pub const W_ANSWER_COUNT: usize = 2 * FEATURE_COUNT + 1;

const PARAM_NAMES: [&str; PARAM_COUNT] = [
    "w_signal",
    "w_rank",
    "w_bias",
    "w_contrast",
    "w_signal_later",
    "w_rank_later",
    "w_bias_later",
    "w_contrast_later",
    "w_answer_threshold",
    "w_answer_count",
];

pub type Grad = [f64; PARAM_COUNT];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub weights: [f64; PARAM_COUNT],
    pub temperature: f64,
}

impl Default for PolicyParams {
    fn default() -> Self {
        let mut weights = [0.0; PARAM_COUNT];
        weights[W_ANSWER_THRESHOLD] = 1.0;
        Self { weights, temperature: 1.0 }
    }
}

/// Per-frame features: signal, normalized signal rank, constant 1, and the
/// later neighbour's signal minus the earlier neighbour's.
pub fn frame_features(observation: &[(FrameIndex, f64)]) -> Vec<[f64; FEATURE_COUNT]> {
    let n = observation.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        observation[a].1.total_cmp(&observation[b].1).then(observation[a].0.cmp(&observation[b].0))
    });
    let mut rank = vec![1.0; n];
    if n > 1 {
        for (r, &i) in order.iter().enumerate() {
            rank[i] = r as f64 / (n - 1) as f64;
        }
    }
    (0..n)
        .map(|i| {
            let s = observation[i].1;
            let prev = if i > 0 { observation[i - 1].1 } else { s };
            let next = if i + 1 < n { observation[i + 1].1 } else { s };
            [s, rank[i], 1.0, next - prev]
        })
        .collect()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^z)
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl PolicyParams {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(PolicyError::InvalidTemperature(self.temperature));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(PolicyError::NonFiniteWeights);
        }
        Ok(())
    }

    /// Start of the frame-weight block used at this point of the episode.
    fn block(input: &PolicyInput) -> usize {
        if input.selections_used == 0 {
            0
        } else {
            LATER_ROUND
        }
    }

    fn frame_scores(&self, features: &[[f64; FEATURE_COUNT]], block: usize) -> Vec<f64> {
        let w = &self.weights[block..block + FEATURE_COUNT];
        features
            .iter()
            .map(|f| f.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() / self.temperature)
            .collect()
    }

    fn answer_logit(&self, input: &PolicyInput) -> (f64, Grad) {
        let max_signal = input.observation.iter().map(|o| o.1).fold(f64::NEG_INFINITY, f64::max);
        let used = input.selections_used as f64;
        let t = self.temperature;
        let z = (ANSWER_GAIN * (max_signal - self.weights[W_ANSWER_THRESHOLD]) + self.weights[W_ANSWER_COUNT] * used) / t;
        let mut dz = [0.0; PARAM_COUNT];
        dz[W_ANSWER_THRESHOLD] = -ANSWER_GAIN / t;
        dz[W_ANSWER_COUNT] = used / t;
        (z, dz)
    }

    /// Probability of answering now rather than selecting.
    pub fn answer_probability(&self, input: &PolicyInput) -> f64 {
        if input.selections_remaining == 0 {
            1.0
        } else {
            sigmoid(self.answer_logit(input).0)
        }
    }

    /// Samples an action.
    pub fn act(&self, input: &PolicyInput, rng: &mut ChaCha8Rng) -> Result<Action, PolicyError> {
        if input.observation.is_empty() {
            return Err(PolicyError::EmptyObservation);
        }
        self.validate()?;
        let answer = Action::answer(input.proposed_answer);
        if input.selections_remaining == 0 || rng.gen::<f64>() < self.answer_probability(input) {
            return Ok(answer);
        }

        let n = input.observation.len();
        let scores = self.frame_scores(&frame_features(&input.observation), Self::block(input));
        let mut taken = vec![false; n];
        let mut picked = 0usize;
        while picked < MAX_FRAMES_PER_SELECTION.min(n) {
            let stop_allowed = picked > 0;
            let cands = (0..n).filter(|&i| !taken[i]).map(|i| scores[i]);
            let lse = log_sum_exp(cands.chain(stop_allowed.then_some(0.0)));
            let mut u: f64 = rng.gen();
            let mut choice = None;
            for i in (0..n).filter(|&i| !taken[i]) {
                u -= (scores[i] - lse).exp();
                if u < 0.0 {
                    choice = Some(i);
                    break;
                }
            }
            match choice {
                Some(i) => {
                    taken[i] = true;
                    picked += 1;
                }
                // Remaining mass is the stop option, or rounding when stop is not allowed.
                None if stop_allowed => break,
                None => {
                    let best = (0..n).max_by(|&a, &b| scores[a].total_cmp(&scores[b])).expect("non-empty");
                    taken[best] = true;
                    picked += 1;
                }
            }
        }
        Ok(Action::select((0..n).filter(|&i| taken[i]).map(|i| input.observation[i].0)))
    }

    /// Exact log-probability of `action`; `-inf` for actions the policy never takes.
    pub fn action_logprob(&self, input: &PolicyInput, action: &Action) -> Result<f64, PolicyError> {
        self.action_logprob_grad(input, action).map(|(lp, _)| lp)
    }

    /// Log-probability of `action` and its gradient with respect to the weights.
    pub fn action_logprob_grad(&self, input: &PolicyInput, action: &Action) -> Result<(f64, Grad), PolicyError> {
        if input.observation.is_empty() {
            return Err(PolicyError::EmptyObservation);
        }
        self.validate()?;
        let impossible = Ok((f64::NEG_INFINITY, [0.0; PARAM_COUNT]));
        match action {
            Action::TextStep => impossible,
            Action::Answer { choice } => {
                if *choice != input.proposed_answer {
                    return impossible;
                }
                if input.selections_remaining == 0 {
                    return Ok((0.0, [0.0; PARAM_COUNT]));
                }
                let (z, dz) = self.answer_logit(input);
                let coef = 1.0 - sigmoid(z);
                Ok((-softplus(-z), dz.map(|d| coef * d)))
            }
            Action::SelectFrames { frames } => {
                if input.selections_remaining == 0 {
                    return impossible;
                }
                let Some(positions) = self.positions(input, frames) else {
                    return impossible;
                };
                let (z, dz) = self.answer_logit(input);
                let coef = -sigmoid(z);
                let (set_lp, set_grad) = self.selection_logprob_grad(input, &positions);
                let mut grad = dz.map(|d| coef * d);
                for (g, s) in grad.iter_mut().zip(set_grad) {
                    *g += s;
                }
                Ok((-softplus(z) + set_lp, grad))
            }
        }
    }

    fn positions(&self, input: &PolicyInput, frames: &BTreeSet<FrameIndex>) -> Option<Vec<usize>> {
        if frames.is_empty() || frames.len() > MAX_FRAMES_PER_SELECTION {
            return None;
        }
        frames
            .iter()
            .map(|f| input.observation.binary_search_by_key(f, |o| o.0).ok())
            .collect()
    }

    /// Log-probability of drawing exactly this set, given that a selection is made.
    fn selection_logprob_grad(&self, input: &PolicyInput, positions: &[usize]) -> (f64, Grad) {
        let n = input.observation.len();
        let features = frame_features(&input.observation);
        let block = Self::block(input);
        let scores = self.frame_scores(&features, block);
        let k = positions.len();
        let with_stop_stage = k < MAX_FRAMES_PER_SELECTION && k < n;
        let t = self.temperature;

        let mut order_lps = Vec::new();
        let mut order_grads = Vec::new();
        for order in positions.iter().copied().permutations(k) {
            let mut taken = vec![false; n];
            let mut lp = 0.0;
            let mut grad = [0.0; FEATURE_COUNT];
            let stages = k + usize::from(with_stop_stage);
            for stage in 0..stages {
                let stop_allowed = stage > 0;
                let cands = (0..n).filter(|&i| !taken[i]).map(|i| scores[i]);
                let lse = log_sum_exp(cands.chain(stop_allowed.then_some(0.0)));
                let mut expected = [0.0; FEATURE_COUNT];
                for i in (0..n).filter(|&i| !taken[i]) {
                    let p = (scores[i] - lse).exp();
                    for (e, f) in expected.iter_mut().zip(&features[i]) {
                        *e += p * f;
                    }
                }
                let picked_features = if stage < k {
                    let i = order[stage];
                    lp += scores[i] - lse;
                    taken[i] = true;
                    features[i]
                } else {
                    lp += -lse;
                    [0.0; FEATURE_COUNT]
                };
                for j in 0..FEATURE_COUNT {
                    grad[j] += (picked_features[j] - expected[j]) / t;
                }
            }
            order_lps.push(lp);
            order_grads.push(grad);
        }
        let total = log_sum_exp(order_lps.iter().copied());
        let mut grad = [0.0; PARAM_COUNT];
        for (lp, g) in order_lps.iter().zip(&order_grads) {
            let w = (lp - total).exp();
            for j in 0..FEATURE_COUNT {
                grad[block + j] += w * g[j];
            }
        }
        (total, grad)
    }

    /// Text checkpoint: versioned header, then one `name=value` per line.
    pub fn to_checkpoint_string(&self) -> String {
        let mut out = format!("{FORMAT_HEADER}\nkind=policy-checkpoint\ntemperature={}\n", self.temperature);
        for (name, w) in PARAM_NAMES.iter().zip(&self.weights) {
            let _ = writeln!(out, "{name}={w}");
        }
        out
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self, PolicyError> {
        let bad = |m: String| PolicyError::Checkpoint(m);
        let mut lines = text.lines();
        if lines.next() != Some(FORMAT_HEADER) {
            return Err(bad(format!("missing `{FORMAT_HEADER}` header")));
        }
        let mut temperature = None;
        let mut weights = [None; PARAM_COUNT];
        let mut kind_ok = false;
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let (key, value) = line.split_once('=').ok_or_else(|| bad(format!("expected key=value, got `{line}`")))?;
            if key == "kind" {
                kind_ok = value == "policy-checkpoint";
                continue;
            }
            let v: f64 = value.parse().map_err(|_| bad(format!("`{key}` is not a number: `{value}`")))?;
            match PARAM_NAMES.iter().position(|n| *n == key) {
                Some(i) => weights[i] = Some(v),
                None if key == "temperature" => temperature = Some(v),
                None => return Err(bad(format!("unknown field `{key}`"))),
            }
        }
        if !kind_ok {
            return Err(bad("not a policy checkpoint".into()));
        }
        let mut out = [0.0; PARAM_COUNT];
        for (i, w) in weights.iter().enumerate() {
            out[i] = w.ok_or_else(|| bad(format!("missing `{}`", PARAM_NAMES[i])))?;
        }
        let params = Self {
            weights: out,
            temperature: temperature.ok_or_else(|| bad("missing `temperature`".into()))?,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_checkpoint_string())
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let text = std::fs::read_to_string(path).map_err(|e| PolicyError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_checkpoint_str(&text)
    }
}
