//! Planner and trainer core for grid-world non-prehensile multi-object
//! rearrangement.
//!
//! A scene is an `M x M` grid holding movable objects (each with an initial
//! and a target pose) plus immovable obstacles. The engine moves one object
//! per step along a *path primitive*: a directional sweep until collision, or
//! an A* route to the object's own target. Planning which object moves next,
//! and along which primitive, is done by a Monte Carlo tree search guided by
//! a small policy-value network, which in turn is trained by behavior cloning
//! from a scripted expert and improved with clipped-surrogate policy
//! gradients.
//!
//! The crate is `no_std` + `alloc` compatible (disable the default `std`
//! feature); file formats, the CLI, and parallel suite execution live in the
//! companion `rearrange-cli` crate. Everything here is deterministic: every
//! source of randomness is an explicit [`rng::Rng`] stream.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod bench;
pub mod gridworld;
pub mod imitation;
pub mod mcts;
mod math;
pub mod pathfind;
pub mod policy;
pub mod ppo;
pub mod rng;

pub use gridworld::{Pose, Scenario, StepOutcome, WorldState};
pub use pathfind::{Path, PrimitiveAction, PrimitiveKind};
pub use policy::{NetConfig, PolicyParams};
pub use rng::Rng;
