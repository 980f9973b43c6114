//! Simulation lab for evidence-aware frame selection on long videos.
//!
//! A video is a list of per-frame relevance signals. An agent sees a sparse
//! uniform sample of frames, may ask twice for a localized re-sample around
//! frames it selects, and then answers a multiple-choice question. Episodes
//! are scored with a composite reward and a softmax selection policy is
//! trained with group-normalised policy gradients.

pub mod config;
pub mod env;
pub mod format;
pub mod planner;
pub mod policy;
pub mod reward;
pub mod rollout;
pub mod run;
pub mod seeds;
pub mod synth;
pub mod timeline;
pub mod trainer;
