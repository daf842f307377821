//! Simulation and analysis of doubly stochastic pairwise consensus.
//!
//! Agents hold opinions on an interval, in a box `[a, b]^D`, or on the unit
//! circle. At each step a uniformly chosen pair resamples uniformly on the
//! interval, segment, or shorter arc spanned by the pair. The crate runs
//! seeded trajectories, detects convergence events, evaluates closed-form
//! bounds on their expected times, and fits empirical scaling laws.

pub mod analysis;
pub mod bounds;
pub mod cli;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod markov;
pub mod observables;
pub mod stopping;

pub use error::{Error, Result};
