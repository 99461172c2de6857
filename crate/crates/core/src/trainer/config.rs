//! Run configuration: everything an experiment needs, serializable so a
//! run directory's config snapshot reproduces the run bit for bit.

use crate::error::{Error, Result};
use crate::explorer::PolicyConfig;
use crate::sim::{MapSpec, Mutation, SimParams};
use crate::world_model::WmConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    /// World model plus actor-critic trained in imagination.
    Curiosity,
    /// Uniform random actions, no training.
    Random,
    /// Count-based novelty surrogate baseline: a model-free actor-critic on
    /// real episodes, rewarded by 1/sqrt(visit count) of the true cell.
    CountNovelty,
}

impl AgentKind {
    pub fn label(&self) -> &'static str {
        match self {
            AgentKind::Curiosity => "curiosity",
            AgentKind::Random => "random",
            AgentKind::CountNovelty => "count_novelty",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum MapSource {
    Generate { spec: MapSpec, map_seed: u64 },
    File { path: String },
}

impl Default for MapSource {
    fn default() -> Self {
        MapSource::Generate { spec: MapSpec::default(), map_seed: 1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScheduledMutation {
    /// Applied immediately before this episode index runs.
    pub episode: usize,
    pub mutation: Mutation,
}

/// Batch sizes and optimizer knobs for the training phase.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub seq_len: usize,
    pub wm_lr: f64,
    /// Number of posterior states used as imagination start points.
    pub imagination_batch: usize,
    /// Replay capacity in steps; None keeps everything.
    pub buffer_capacity_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            seq_len: 16,
            wm_lr: 3e-4,
            imagination_batch: 48,
            buffer_capacity_steps: None,
        }
    }
}

fn default_steps() -> usize {
    500
}

fn default_updates() -> usize {
    100
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub agent: AgentKind,
    pub episodes: usize,
    /// Environment steps per episode (N).
    #[serde(default = "default_steps")]
    pub steps_per_episode: usize,
    /// Training iterations per episode (K).
    #[serde(default = "default_updates")]
    pub updates_per_episode: usize,
    #[serde(default)]
    pub map: MapSource,
    #[serde(default)]
    pub sim: SimParams,
    /// World-model sizes; `obs_dim` is derived from `sim` at build time.
    #[serde(default)]
    pub wm: WmConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub mutations: Vec<ScheduledMutation>,
    /// Checkpoint every this many episodes; 0 = final checkpoint only.
    #[serde(default)]
    pub checkpoint_interval: usize,
    /// Run the stale-model probe automatically when a mutation applies.
    #[serde(default = "default_true")]
    pub probe_on_mutation: bool,
    /// Keep the latent state across the respawn boundary instead of
    /// resetting it (default: reset).
    #[serde(default)]
    pub carry_latent: bool,
}

impl RunConfig {
    pub fn new(seed: u64, agent: AgentKind, episodes: usize) -> Self {
        RunConfig {
            seed,
            agent,
            episodes,
            steps_per_episode: default_steps(),
            updates_per_episode: default_updates(),
            map: MapSource::default(),
            sim: SimParams::default(),
            wm: WmConfig::default(),
            policy: PolicyConfig::default(),
            train: TrainConfig::default(),
            mutations: Vec::new(),
            checkpoint_interval: 0,
            probe_on_mutation: true,
            carry_latent: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps_per_episode == 0 {
            return Err(Error::Config("steps_per_episode must be positive".into()));
        }
        if self.train.batch_size == 0 || self.train.seq_len == 0 {
            return Err(Error::Config("batch_size and seq_len must be positive".into()));
        }
        if self.train.seq_len > self.steps_per_episode {
            return Err(Error::Config(format!(
                "seq_len {} exceeds episode length {}",
                self.train.seq_len, self.steps_per_episode
            )));
        }
        if self.policy.horizon == 0 {
            return Err(Error::Config("imagination horizon must be positive".into()));
        }
        for m in &self.mutations {
            if m.episode >= self.episodes {
                return Err(Error::Config(format!(
                    "mutation scheduled at episode {} but the run has {}",
                    m.episode, self.episodes
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Every upstream-reported hyperparameter with its reference value and
    /// the value this run uses. Written next to the config snapshot.
    pub fn hyperparameter_table(&self) -> Vec<(&'static str, String, String)> {
        let adam = crate::autodiff::AdamConfig::with_lr(self.train.wm_lr);
        vec![
            ("batch_size", "50".into(), self.train.batch_size.to_string()),
            ("batch_sequence_length", "50".into(), self.train.seq_len.to_string()),
            ("discrete_latent_state_dimension", "32".into(), self.wm.latent_groups.to_string()),
            ("discrete_latent_classes", "32".into(), self.wm.latent_classes.to_string()),
            ("gru_cell_dimension", "200".into(), self.wm.gru_dim.to_string()),
            ("kl_free_nats", "1".into(), self.wm.free_nats.to_string()),
            ("kl_balancing", "0.8".into(), self.wm.kl_balance.to_string()),
            ("world_model_adam_lr", "3e-4".into(), format!("{:e}", self.train.wm_lr)),
            ("slow_critic_update_interval", "100".into(), self.policy.slow_critic_interval.to_string()),
            ("imagination_horizon", "15".into(), self.policy.horizon.to_string()),
            ("gamma", "0.99".into(), self.policy.gamma.to_string()),
            ("lambda", "0.95".into(), self.policy.lambda.to_string()),
            ("actor_critic_adam_lr", "8e-5".into(), format!("{:e}", self.policy.actor_critic_lr)),
            ("actor_entropy_loss_scale", "1e-4".into(), format!("{:e}", self.policy.entropy_scale)),
            ("mlp_number_of_layers", "4".into(), self.wm.hidden_layers.to_string()),
            ("mlp_number_of_units", "400".into(), self.wm.hidden_dim.to_string()),
            ("adam_epsilon", "1e-5".into(), format!("{:e}", adam.eps)),
            ("weight_decay", "1e-6".into(), format!("{:e}", adam.weight_decay)),
            ("gradient_clipping", "100".into(), format!("{}", adam.clip_norm)),
            ("episode_length_n", "500".into(), self.steps_per_episode.to_string()),
            ("train_iterations_k", "100".into(), self.updates_per_episode.to_string()),
        ]
    }

    pub fn hyperparameter_csv(&self) -> String {
        let mut out = String::from("name,reference,this_run\n");
        for (name, reference, ours) in self.hyperparameter_table() {
            out.push_str(&format!("{name},{reference},{ours}\n"));
        }
        out
    }
}
