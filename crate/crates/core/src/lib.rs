//! Curiosity-driven exploration of procedural gridworlds.
//!
//! An agent equipped with a learned recurrent world model explores partially
//! observable gridworlds rendered as egocentric ray-cast images. The model is
//! trained on replayed experience, the agent rewards itself with the model's
//! information gain, and the exploration policy is trained entirely inside
//! imagined rollouts. Progress is measured as coverage of the visitable cells.

pub mod autodiff;
pub mod cli;
pub mod error;
pub mod explorer;
pub mod metrics;
pub mod sim;
pub mod trainer;
pub mod world_model;

pub use error::{Error, Result};
