//! Episodic replay storage with uniform sequence sampling.
//!
//! Observations are kept in their quantized u8 form and dequantized when a
//! batch is assembled. Sampled windows never cross an episode boundary; the
//! action preceding a window's first observation comes from inside the same
//! episode, or is the zero vector at an episode start, matching how the
//! agent filters online.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::sim::{Action, Observation, SimParams};
use crate::world_model::WmBatch;
use rand::rngs::StdRng;
use rand::Rng;
use std::collections::VecDeque;

#[derive(Debug, Clone)]
pub struct StepRecord {
    /// Observation at decision time.
    pub obs: Observation,
    /// Action taken after seeing `obs`.
    pub action: Action,
    /// Cell occupied after the action resolved.
    pub cell: (usize, usize),
}

#[derive(Debug, Clone, Default)]
pub struct Episode {
    pub steps: Vec<StepRecord>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

pub struct EpisodeBuffer {
    episodes: VecDeque<Episode>,
    /// None = unbounded. Eviction drops whole episodes, oldest first.
    capacity_steps: Option<usize>,
    total_steps: usize,
}

impl EpisodeBuffer {
    pub fn new(capacity_steps: Option<usize>) -> Self {
        EpisodeBuffer { episodes: VecDeque::new(), capacity_steps, total_steps: 0 }
    }

    pub fn push_episode(&mut self, episode: Episode) {
        if episode.is_empty() {
            return;
        }
        self.total_steps += episode.len();
        self.episodes.push_back(episode);
        if let Some(cap) = self.capacity_steps {
            while self.total_steps > cap && self.episodes.len() > 1 {
                let dropped = self.episodes.pop_front().expect("nonempty");
                self.total_steps -= dropped.len();
            }
        }
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn num_episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn episodes(&self) -> impl Iterator<Item = &Episode> {
        self.episodes.iter()
    }

    /// Number of valid (episode, offset) windows of the given length.
    pub fn num_windows(&self, seq_len: usize) -> usize {
        self.episodes
            .iter()
            .map(|e| e.len().saturating_sub(seq_len - 1))
            .sum()
    }

    /// Sample a training batch uniformly over all valid windows.
    pub fn sample_batch(
        &self,
        batch_size: usize,
        seq_len: usize,
        params: &SimParams,
        rng: &mut StdRng,
    ) -> Result<WmBatch> {
        if seq_len == 0 || batch_size == 0 {
            return Err(Error::Config("batch and sequence length must be positive".into()));
        }
        let windows = self.num_windows(seq_len);
        if windows == 0 {
            return Err(Error::Config(format!(
                "replay buffer holds no window of length {seq_len}"
            )));
        }
        let obs_dim = params.obs_dim();
        let mut obs = vec![Vec::with_capacity(batch_size * obs_dim); seq_len];
        let mut acts = vec![Tensor::zeros(batch_size, Action::COUNT); seq_len];
        for b in 0..batch_size {
            let mut pick = rng.random_range(0..windows);
            let (episode, offset) = self
                .episodes
                .iter()
                .find_map(|e| {
                    let here = e.len().saturating_sub(seq_len - 1);
                    if pick < here {
                        Some((e, pick))
                    } else {
                        pick -= here;
                        None
                    }
                })
                .expect("pick is within the window count");
            for t in 0..seq_len {
                let record = &episode.steps[offset + t];
                obs[t].extend(record.obs.to_input(params).data());
                if offset + t > 0 {
                    let prev = episode.steps[offset + t - 1].action;
                    acts[t].set(b, prev.index(), 1.0);
                }
                // offset + t == 0: episode start, previous action is zero.
            }
        }
        let obs = obs
            .into_iter()
            .map(|data| Tensor::from_vec(batch_size, obs_dim, data))
            .collect::<Result<Vec<_>>>()?;
        Ok(WmBatch { obs, prev_actions: acts })
    }
}
