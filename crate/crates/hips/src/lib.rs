//! Hierarchical imitation planning with search.
//!
//! The library learns to solve small combinatorial puzzles purely from
//! demonstration trajectories, in five stages:
//!
//! 1. [`envs`] — deterministic puzzle environments and dataset generation.
//! 2. [`segmentation`] — a detector network segments expert trajectories
//!    into subgoals via policy-gradient training, jointly with a
//!    goal-conditioned low-level policy.
//! 3. [`vqvae`] — a discrete-latent generative model over subgoal pairs,
//!    with a subgoal-conditioned prior over the codebook.
//! 4. [`auxmodels`] — a learned low-level dynamics model and a
//!    distance-to-goal heuristic.
//! 5. [`search`] — subgoal-level best-first search (GBFS / A* / PHS* /
//!    LevinTS) and MCTS, expanding nodes with the generative model and
//!    verifying reachability with the low-level policy.
//!
//! The [`pipeline`] module wires the stages together behind a plain-text
//! config and persists every intermediate artifact; [`diffcore`] is the
//! minimal neural substrate shared by all learned components.

pub mod auxmodels;
pub mod diffcore;
pub mod envs;
pub mod segmentation;
pub mod vqvae;
pub mod error;

pub use error::{Error, Result};
