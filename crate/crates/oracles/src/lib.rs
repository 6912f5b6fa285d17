//! Reference implementations that the engine's results are checked against.
//! Each one reaches the answer by a different route than the engine does.

pub mod backtrack;
pub mod stats;
