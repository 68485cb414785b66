//! Computing, learning, and evaluating coordinated team strategies in
//! adversarial extensive-form games.
//!
//! The crate is organized around a small pipeline:
//!
//! 1. [`game`] / [`text`] — immutable game trees with information states,
//!    built programmatically or parsed from the `efgdesc v1` text format.
//! 2. [`games`] — benchmark families (coordination, grid patrolling).
//! 3. [`plans`] / [`strategy`] / [`values`] — reduced plans, the strategy
//!    forms built from them, and expected values / realization checks.
//! 4. [`refinement`] — team merging and recall-restoring state splits that
//!    turn a team's coordination problem into a two-player zero-sum game.
//! 5. [`solver`] — best responses, fictitious play, and matrix-game solvers
//!    for optimal coordinated strategies.
//! 6. [`sampling`] / [`sims`] — trajectory generation from learned play and
//!    a signal-conditioned imitation trainer that compresses coordinated
//!    strategies into compact sampled form.
//! 7. [`eval`] — exploitability, divergence-to-optimum, reward estimates,
//!    and occupancy heatmaps.
//!
//! Determinism is a contract throughout: all iteration runs over dense ids
//! or ordered maps, and every stochastic component takes an explicit seed.

pub mod eval;
pub mod game;
pub mod games;
pub mod refinement;
pub mod plans;
pub mod rng;
pub mod sampling;
pub mod sims;
pub mod solver;
pub mod strategy;
pub mod testgen;
pub mod text;
pub mod values;

pub use game::{Game, GameBuilder, GameError, Node};
pub use strategy::{
    BehavioralStrategy, CoordinatedStrategy, NormalFormStrategy, ReducedPlan, Strategy,
    StrategyRef,
};
