//! Procedural partially observable gridworld: occupancy maps, egocentric
//! ray-cast observations, discrete displacement actions with collision
//! cancellation, respawn, and mid-run map mutation.
//!
//! Maps are immutable after generation and stepping is pure, so any number
//! of read-only simulations may share one map.

pub mod env;
pub mod map;
pub mod render;

pub use env::{apply_action, respawn, Action, Pose, Simulator};
pub use map::{Cell, MapSpec, Mutation, OccupancyMap, TextureOverrides};
pub use render::{ray_hits, render, touched_cells, Observation, SimParams};
