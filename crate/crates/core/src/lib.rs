//! Optimization of RNA sequences for secondary-structure stability.
//!
//! The objective is the negated minimum free energy of a sequence's
//! pseudoknot-free secondary structure under a simple pair-additive energy
//! model (see [`fitness`]). Three optimizers search the flip-action space:
//!
//! - [`dqn`]: epsilon-greedy deep Q-learning with prioritized replay,
//! - [`ppo`]: clipped-surrogate actor-critic with a KL early stop and a
//!   "try again" data-collection loop,
//! - [`greedy`]: buffered hill climbing in the style of directed evolution.
//!
//! All three run against the environment in [`env`] and report the same
//! [`metrics::RunMetrics`], with fitness evaluations as the shared budget
//! currency.

pub mod dqn;
pub mod env;
pub mod fitness;
pub mod greedy;
pub mod metrics;
pub mod neural;
pub mod ppo;
pub mod replay;
pub mod seq;

pub use seq::{Base, FlipAction, RnaSequence};
