//! Stale-model probe: after a map mutation, the decoder keeps predicting
//! the appearance it was trained on, so reconstruction error on viewpoints
//! whose rays touch the changed cells rises above untouched control views.

use crate::error::{Error, Result};
use crate::sim::{render, touched_cells, OccupancyMap, SimParams};
use crate::world_model::WorldModel;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::Serialize;
use std::collections::BTreeSet;
use std::path::Path;

#[derive(Debug, Clone, Copy)]
pub struct ProbeConfig {
    /// Upper bound on the number of poses evaluated per class.
    pub max_poses_per_class: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { max_poses_per_class: 150, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbePose {
    pub col: usize,
    pub row: usize,
    pub heading: usize,
    pub affected: bool,
    pub error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub poses: Vec<ProbePose>,
    pub affected_mean: f64,
    pub control_mean: f64,
    /// affected_mean / control_mean; > 1 means change-affected views
    /// reconstruct worse.
    pub ratio: f64,
    pub changed: Vec<(usize, usize)>,
}

impl ProbeReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("col,row,heading,affected,error\n");
        for p in &self.poses {
            out.push_str(&format!(
                "{},{},{},{},{:.9}\n",
                p.col, p.row, p.heading, u8::from(p.affected), p.error
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Decoder reconstruction error of one view, from a cold-start filtered
/// state. Deterministic given the rng seed.
fn reconstruction_error(
    wm: &WorldModel,
    map: &OccupancyMap,
    col: usize,
    row: usize,
    heading: usize,
    params: &SimParams,
    seed: u64,
) -> Result<f64> {
    let obs = render(map, col, row, heading, params);
    let input = obs.to_input(params);
    let mut rng = StdRng::seed_from_u64(seed);
    let init = wm.initial_state(1, &mut rng);
    let zero_action = crate::autodiff::Tensor::zeros(1, 3);
    let (state, _, _) = wm.posterior_step(&init, &zero_action, &input, &mut rng)?;
    let mean = wm.decode(&state)?;
    let n = input.numel().min(mean.numel());
    let mse = input.data()[..n]
        .iter()
        .zip(&mean.data()[..n])
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n as f64;
    Ok(mse)
}

/// Evaluate decoder error on change-affected viewpoints of `map_after`
/// against untouched control viewpoints. A pose is affected when any of its
/// rays, cast on either map, passes through or hits a changed cell.
pub fn staleness_probe(
    wm: &WorldModel,
    map_before: &OccupancyMap,
    map_after: &OccupancyMap,
    changed: &BTreeSet<(usize, usize)>,
    params: &SimParams,
    cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    if changed.is_empty() {
        return Err(Error::Metrics("staleness probe needs a non-empty changed-cell set".into()));
    }
    let mut affected = Vec::new();
    let mut control = Vec::new();
    for (col, row) in map_after.visitable_cells() {
        for heading in 0..params.headings {
            let touched_after = touched_cells(map_after, col, row, heading, params);
            let is_affected = if touched_after.iter().any(|c| changed.contains(c)) {
                true
            } else {
                touched_cells(map_before, col, row, heading, params)
                    .iter()
                    .any(|c| changed.contains(c))
            };
            if is_affected {
                affected.push((col, row, heading));
            } else {
                control.push((col, row, heading));
            }
        }
    }
    if affected.is_empty() || control.is_empty() {
        return Err(Error::Metrics(format!(
            "degenerate probe split: {} affected, {} control poses",
            affected.len(),
            control.len()
        )));
    }
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    affected.shuffle(&mut rng);
    control.shuffle(&mut rng);
    affected.truncate(cfg.max_poses_per_class);
    control.truncate(cfg.max_poses_per_class);

    let mut poses = Vec::new();
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for (class, list) in [(true, &affected), (false, &control)] {
        for (i, &(col, row, heading)) in list.iter().enumerate() {
            let err = reconstruction_error(
                wm,
                map_after,
                col,
                row,
                heading,
                params,
                cfg.seed ^ (i as u64).wrapping_mul(0x9E37_79B9),
            )?;
            sums[usize::from(class)] += err;
            counts[usize::from(class)] += 1;
            poses.push(ProbePose { col, row, heading, affected: class, error: err });
        }
    }
    let affected_mean = sums[1] / counts[1] as f64;
    let control_mean = sums[0] / counts[0] as f64;
    Ok(ProbeReport {
        poses,
        affected_mean,
        control_mean,
        ratio: affected_mean / control_mean.max(1e-12),
        changed: changed.iter().copied().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{MapSpec, Mutation};
    use crate::world_model::WmConfig;

    fn small_wm(params: &SimParams) -> WorldModel {
        let cfg = WmConfig {
            obs_dim: params.obs_dim(),
            embed_dim: 12,
            hidden_dim: 16,
            hidden_layers: 1,
            gru_dim: 8,
            latent_groups: 2,
            latent_classes: 4,
            ..WmConfig::default()
        };
        WorldModel::new(cfg, &mut StdRng::seed_from_u64(1))
    }

    #[test]
    fn empty_changed_set_is_rejected() {
        let params = SimParams { obs_width: 8, obs_height: 8, ..SimParams::default() };
        let map = OccupancyMap::generate(5, &MapSpec { width: 9, height: 9, rooms: 1, door_width: 1 }).unwrap();
        let wm = small_wm(&params);
        let err = staleness_probe(&wm, &map, &map, &BTreeSet::new(), &params, &ProbeConfig::default());
        assert!(err.is_err());
    }

    #[test]
    fn probe_is_deterministic_and_splits_poses() {
        let params = SimParams { obs_width: 8, obs_height: 8, ..SimParams::default() };
        let map = OccupancyMap::generate(5, &MapSpec { width: 11, height: 11, rooms: 1, door_width: 1 }).unwrap();
        let cell = map
            .visitable_cells()
            .find(|&c| c != map.start() && map.mutate(&Mutation::AddObstacle { cell: c }).is_ok())
            .unwrap();
        let (after, changed) = map.mutate(&Mutation::AddObstacle { cell }).unwrap();
        let wm = small_wm(&params);
        let cfg = ProbeConfig { max_poses_per_class: 40, seed: 3 };
        let a = staleness_probe(&wm, &map, &after, &changed, &params, &cfg).unwrap();
        let b = staleness_probe(&wm, &map, &after, &changed, &params, &cfg).unwrap();
        assert_eq!(a.poses.len(), b.poses.len());
        assert_eq!(a.ratio, b.ratio);
        assert!(a.poses.iter().any(|p| p.affected));
        assert!(a.poses.iter().any(|p| !p.affected));
        assert!(a.affected_mean > 0.0 && a.control_mean > 0.0);
    }
}
