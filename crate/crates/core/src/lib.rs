//! Cache guessing-game toolkit.
//!
//! A small cache simulator wrapped in an episodic guessing game, learners
//! that discover attack sequences in it, detectors that try to catch them,
//! and analysis tools that replay, verify and classify what was found.

pub mod agents;
pub mod analysis;
pub mod cache;
pub mod detect;
pub mod env;
pub mod error;
pub mod presets;

pub use error::{Error, Result};
