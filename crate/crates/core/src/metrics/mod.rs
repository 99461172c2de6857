//! Coverage accounting, heatmaps, cross-run comparison, and the stale-model
//! probe. Trackers have a single writer (the training loop); report
//! generation runs offline over completed run directories.

pub mod compare;
pub mod coverage;
pub mod heatmap;
pub mod probe;

pub use compare::{compare_runs, load_run, write_comparison, Comparison, RunSummary};
pub use coverage::CoverageTracker;
pub use heatmap::{pgm_string, ppm_string, write_heatmaps};
pub use probe::{staleness_probe, ProbeConfig, ProbeReport};
