//! Interactive prediction and planning over discrete trajectory candidates.
//!
//! The pipeline: sample K candidate trajectories per agent (straights, arcs,
//! Euler spirals), score joint outcomes with an energy made of agent-specific,
//! pairwise-safety, and goal terms, infer other agents' candidate marginals
//! conditioned on each ego candidate via loopy belief propagation, and pick
//! the ego candidate minimizing the expected cost. A non-interactive baseline
//! drops the ego conditioning. The `learning` module holds the training and
//! distillation losses, and `simworld` is a closed-loop 2D simulator with a
//! dense lane-merge scenario where the interactive planner outperforms the
//! non-interactive one.

pub mod cli;
pub mod energy;
pub mod error;
pub mod geometry;
pub mod inference;
pub mod learning;
pub mod planner;
pub mod simworld;
pub mod trajectory;

pub use error::{Error, Result};
