//! Intent-conditioned reward generalization: a synthetic manipulation world,
//! feature-based linear rewards learned with maximum-entropy IRL, LM-driven
//! intent estimation and object alignment, and the evaluation harness.

pub mod align;
pub mod eval;
pub mod features;
pub mod intent;
pub mod lm;
pub mod reward;
pub mod world;
