//! Lifelong training: episode collection alternating with replay-buffer
//! training phases, plus the run-directory artifact layout.

pub mod baseline;
pub mod buffer;
pub mod config;
pub mod run;

pub use baseline::CountNoveltyAgent;
pub use buffer::{Episode, EpisodeBuffer, StepRecord};
pub use config::{AgentKind, MapSource, RunConfig, ScheduledMutation, TrainConfig};
pub use run::{run_experiment, EpisodeStats, PhaseStats, RunArtifacts, Trainer};
