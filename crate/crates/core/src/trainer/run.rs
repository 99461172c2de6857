//! The lifelong loop: alternate N environment steps with K training
//! iterations over the growing replay buffer, respawning between episodes
//! and applying scheduled map mutations. Collection and training never
//! overlap; the loop is single-threaded and deterministic per seed.

use crate::autodiff::adam::{Adam, AdamConfig};
use crate::autodiff::checkpoint;
use crate::autodiff::Tensor;
use crate::error::Result;
use crate::explorer::Explorer;
use crate::metrics::{self, CoverageTracker, ProbeConfig};
use crate::sim::{Action, OccupancyMap, Simulator};
use crate::trainer::baseline::CountNoveltyAgent;
use crate::trainer::buffer::{Episode, EpisodeBuffer, StepRecord};
use crate::trainer::config::{AgentKind, MapSource, RunConfig};
use crate::world_model::{LatentState, WorldModel};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy)]
pub struct EpisodeStats {
    pub steps: usize,
    pub collisions: usize,
    pub coverage: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PhaseStats {
    pub wm_updates: usize,
    pub policy_updates: usize,
    pub mean_wm_loss: f64,
    pub mean_kl: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunArtifacts {
    pub final_coverage: f64,
    pub visited: usize,
    pub visitable: usize,
    pub total_steps: u64,
    pub episodes: usize,
}

enum AgentRuntime {
    Curiosity { wm: WorldModel, adam: Adam, explorer: Explorer },
    Random,
    CountNovelty { agent: CountNoveltyAgent, pending: PendingEpisode },
}

#[derive(Default)]
struct PendingEpisode {
    observations: Vec<Tensor>,
    actions: Vec<Action>,
    rewards: Vec<f64>,
}

struct Output {
    dir: PathBuf,
    coverage: std::io::BufWriter<std::fs::File>,
    wm_diag: std::io::BufWriter<std::fs::File>,
    policy_diag: std::io::BufWriter<std::fs::File>,
}

impl Output {
    fn create(dir: &Path, config: &RunConfig, map: &OccupancyMap) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.json"), config.to_json()?)?;
        std::fs::write(dir.join("hyperparameters.csv"), config.hyperparameter_csv())?;
        map.save_ascii(&dir.join("map.txt"))?;
        let open = |name: &str, header: &str| -> Result<std::io::BufWriter<std::fs::File>> {
            let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join(name))?);
            w.write_all(header.as_bytes())?;
            Ok(w)
        };
        Ok(Output {
            dir: dir.to_path_buf(),
            coverage: open("coverage.csv", "step,visited,coverage\n")?,
            wm_diag: open("wm_diag.csv", "update,loss,kl,recon_nll\n")?,
            policy_diag: open(
                "policy_diag.csv",
                "update,actor_loss,critic_loss,mean_intrinsic_reward,policy_entropy\n",
            )?,
        })
    }
}

/// Which half of the collect/train alternation is active. Environment steps
/// happen only while collecting, parameter updates only while training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Idle,
    Collecting,
    Training,
}

pub struct Trainer {
    pub config: RunConfig,
    map: OccupancyMap,
    sim: Simulator,
    buffer: EpisodeBuffer,
    tracker: CoverageTracker,
    agent: AgentRuntime,
    rng: StdRng,
    global_step: u64,
    episode_index: usize,
    wm_updates: u64,
    policy_updates: u64,
    output: Option<Output>,
    carried_latent: Option<LatentState>,
    phase: Phase,
}

impl Trainer {
    pub fn new(config: RunConfig, out_dir: Option<&Path>) -> Result<Self> {
        config.validate()?;
        let map = match &config.map {
            MapSource::Generate { spec, map_seed } => OccupancyMap::generate(*map_seed, spec)?,
            MapSource::File { path } => OccupancyMap::load_ascii(Path::new(path))?,
        };
        let mut rng = StdRng::seed_from_u64(config.seed);
        let sim = Simulator::new(map.clone(), config.sim);
        let tracker = CoverageTracker::new(&map);
        let obs_dim = config.sim.obs_dim();
        let agent = match config.agent {
            AgentKind::Curiosity => {
                let mut wm_cfg = config.wm.clone();
                wm_cfg.obs_dim = obs_dim;
                let wm = WorldModel::new(wm_cfg.clone(), &mut rng);
                let adam = Adam::new(AdamConfig::with_lr(config.train.wm_lr), &wm.store);
                let explorer = Explorer::new(wm_cfg.state_dim(), config.policy.clone(), &mut rng);
                AgentRuntime::Curiosity { wm, adam, explorer }
            }
            AgentKind::Random => AgentRuntime::Random,
            AgentKind::CountNovelty => AgentRuntime::CountNovelty {
                agent: CountNoveltyAgent::new(obs_dim, &mut rng),
                pending: PendingEpisode::default(),
            },
        };
        let output = match out_dir {
            Some(dir) => Some(Output::create(dir, &config, &map)?),
            None => None,
        };
        Ok(Trainer {
            buffer: EpisodeBuffer::new(config.train.buffer_capacity_steps),
            config,
            map,
            sim,
            tracker,
            agent,
            rng,
            global_step: 0,
            episode_index: 0,
            wm_updates: 0,
            policy_updates: 0,
            output,
            carried_latent: None,
            phase: Phase::Idle,
        })
    }

    pub fn tracker(&self) -> &CoverageTracker {
        &self.tracker
    }

    pub fn map(&self) -> &OccupancyMap {
        &self.map
    }

    pub fn buffer(&self) -> &EpisodeBuffer {
        &self.buffer
    }

    pub fn global_step(&self) -> u64 {
        self.global_step
    }

    pub fn wm_update_count(&self) -> u64 {
        self.wm_updates
    }

    pub fn policy_update_count(&self) -> u64 {
        self.policy_updates
    }

    pub fn world_model(&self) -> Option<&WorldModel> {
        match &self.agent {
            AgentRuntime::Curiosity { wm, .. } => Some(wm),
            _ => None,
        }
    }

    pub fn explorer(&self) -> Option<&Explorer> {
        match &self.agent {
            AgentRuntime::Curiosity { explorer, .. } => Some(explorer),
            _ => None,
        }
    }

    fn one_hot_action(action: Action) -> Tensor {
        let mut t = Tensor::zeros(1, Action::COUNT);
        t.set(0, action.index(), 1.0);
        t
    }

    fn log_coverage_row(&mut self) -> Result<()> {
        if let Some(out) = &mut self.output {
            writeln!(
                out.coverage,
                "{},{},{:.6}",
                self.global_step,
                self.tracker.visited_count(),
                self.tracker.coverage()
            )?;
        }
        Ok(())
    }

    /// Collect one episode of environment interaction: respawn, act N times
    /// from the filtered latent state (or the baseline's policy), store the
    /// trajectory, and track coverage.
    pub fn run_episode(&mut self) -> Result<EpisodeStats> {
        assert_eq!(self.phase, Phase::Idle, "episodes cannot overlap training");
        self.phase = Phase::Collecting;
        let result = self.run_episode_inner();
        self.phase = Phase::Idle;
        result
    }

    fn run_episode_inner(&mut self) -> Result<EpisodeStats> {
        let n = self.config.steps_per_episode;
        let params = *self.sim.params();
        let mut prev_obs = self.sim.reset();
        let pose = self.sim.pose();
        self.tracker.update(pose.col, pose.row, self.global_step)?;

        // Latent state for the curiosity agent: reset at respawn unless the
        // run is configured to carry it across episodes.
        let mut latent = match &self.agent {
            AgentRuntime::Curiosity { wm, .. } => {
                let init = if self.config.carry_latent {
                    self.carried_latent.take().unwrap_or_else(|| wm.initial_state(1, &mut self.rng))
                } else {
                    wm.initial_state(1, &mut self.rng)
                };
                let zero = Tensor::zeros(1, Action::COUNT);
                let (state, _, _) = wm.posterior_step(&init, &zero, &prev_obs.to_input(&params), &mut self.rng)?;
                Some(state)
            }
            _ => None,
        };

        let mut records = Vec::with_capacity(n);
        let mut collisions = 0usize;
        for _ in 0..n {
            let action = match &mut self.agent {
                AgentRuntime::Curiosity { explorer, .. } => {
                    let feature = latent.as_ref().expect("curiosity keeps a latent").feature();
                    explorer.act(&feature, &mut self.rng)?
                }
                AgentRuntime::Random => Action::from_index(self.rng.random_range(0..Action::COUNT)),
                AgentRuntime::CountNovelty { agent, pending } => {
                    let input = prev_obs.to_input(&params);
                    let action = agent.act(&input, &mut self.rng)?;
                    pending.observations.push(input);
                    pending.actions.push(action);
                    action
                }
            };
            let obs = self.sim.step(action);
            let pose = self.sim.pose();
            collisions += usize::from(obs.collision);
            self.global_step += 1;
            self.tracker.update(pose.col, pose.row, self.global_step)?;
            self.log_coverage_row()?;
            records.push(StepRecord { obs: prev_obs, action, cell: (pose.col, pose.row) });

            match &mut self.agent {
                AgentRuntime::Curiosity { wm, .. } => {
                    let one_hot = Self::one_hot_action(action);
                    let (state, _, _) = wm.posterior_step(
                        latent.as_ref().expect("curiosity keeps a latent"),
                        &one_hot,
                        &obs.to_input(&params),
                        &mut self.rng,
                    )?;
                    latent = Some(state);
                }
                AgentRuntime::CountNovelty { agent, pending } => {
                    pending.rewards.push(agent.observe_cell((pose.col, pose.row)));
                }
                AgentRuntime::Random => {}
            }
            prev_obs = obs;
        }
        if self.config.carry_latent {
            self.carried_latent = latent;
        }
        self.buffer.push_episode(Episode { steps: records });
        self.episode_index += 1;
        Ok(EpisodeStats { steps: n, collisions, coverage: self.tracker.coverage() })
    }

    /// Run K training iterations on the replay buffer: world-model step,
    /// reward-head regression on the batch's real-step KL values, then an
    /// imagined rollout and a policy update.
    pub fn train_phase(&mut self) -> Result<PhaseStats> {
        assert_eq!(self.phase, Phase::Idle, "training cannot overlap collection");
        self.phase = Phase::Training;
        let result = self.train_phase_inner();
        self.phase = Phase::Idle;
        result
    }

    fn train_phase_inner(&mut self) -> Result<PhaseStats> {
        let k = self.config.updates_per_episode;
        let mut stats = PhaseStats::default();
        match &mut self.agent {
            AgentRuntime::Random => {}
            AgentRuntime::CountNovelty { agent, pending } => {
                let pending = std::mem::take(pending);
                if !pending.actions.is_empty() {
                    agent.train_on_episode(&pending.observations, &pending.actions, &pending.rewards)?;
                    stats.policy_updates = 1;
                    self.policy_updates += 1;
                }
            }
            AgentRuntime::Curiosity { wm, adam, explorer } => {
                let seq_len = self.config.train.seq_len;
                let batch_size = self.config.train.batch_size;
                if self.buffer.num_windows(seq_len) == 0 {
                    eprintln!(
                        "warning: skipping train phase, replay buffer has no window of length {seq_len}"
                    );
                    return Ok(stats);
                }
                let params = *self.sim.params();
                let mut loss_sum = 0.0;
                let mut kl_sum = 0.0;
                for _ in 0..k {
                    let batch = self.buffer.sample_batch(batch_size, seq_len, &params, &mut self.rng)?;
                    let out = wm.train_step(adam, &batch, &mut self.rng)?;
                    self.wm_updates += 1;
                    stats.wm_updates += 1;
                    loss_sum += out.loss;
                    if let Some(output) = &mut self.output {
                        writeln!(
                            output.wm_diag,
                            "{},{:.6},{:.6},{:.6}",
                            self.wm_updates, out.loss, out.kl, out.recon_nll
                        )?;
                    }

                    // The batch's raw KL values are the intrinsic rewards of
                    // its real transitions: regression targets for the
                    // imagination reward head after normalization.
                    let raw: Vec<f64> = out.step_kls.iter().flatten().copied().collect();
                    kl_sum += raw.iter().sum::<f64>() / raw.len() as f64;
                    explorer.normalizer.observe(&raw);
                    let targets: Vec<f64> = raw.iter().map(|r| explorer.normalizer.normalize(*r)).collect();
                    let features: Vec<Tensor> = out.states.iter().map(LatentState::feature).collect();
                    let feature_refs: Vec<&Tensor> = features.iter().collect();
                    let stacked = Tensor::vstack(&feature_refs)?;
                    explorer.update_reward_head(&stacked, &targets)?;

                    // Imagination starts: a subsample of the batch's
                    // posterior states, detached by construction. All
                    // window positions participate: rollouts seeded from
                    // shallow-context states are noisier, and that noise
                    // demonstrably keeps the policy from settling into a
                    // fixed tour too early.
                    let total = out.states.len() * batch_size;
                    let take = self.config.train.imagination_batch.min(total).max(1);
                    let mut indices: Vec<usize> = (0..total).collect();
                    indices.shuffle(&mut self.rng);
                    indices.truncate(take);
                    let rows: Vec<LatentState> = indices
                        .iter()
                        .map(|&i| out.states[i / batch_size].row(i % batch_size))
                        .collect();
                    let row_refs: Vec<&LatentState> = rows.iter().collect();
                    let starts = LatentState::stack(&row_refs)?;
                    let traj = explorer.imagine(wm, &starts, self.config.policy.horizon, &mut self.rng)?;
                    let losses = explorer.policy_update(&traj)?;
                    self.policy_updates += 1;
                    stats.policy_updates += 1;
                    if let Some(output) = &mut self.output {
                        let batch_mean_kl = raw.iter().sum::<f64>() / raw.len() as f64;
                        writeln!(
                            output.policy_diag,
                            "{},{:.6},{:.6},{:.6},{:.6}",
                            self.policy_updates,
                            losses.actor_loss,
                            losses.critic_loss,
                            batch_mean_kl,
                            losses.entropy
                        )?;
                    }
                }
                if stats.wm_updates > 0 {
                    stats.mean_wm_loss = loss_sum / stats.wm_updates as f64;
                    stats.mean_kl = kl_sum / stats.wm_updates as f64;
                }
            }
        }
        Ok(stats)
    }

    fn save_checkpoint(&self, name: &str) -> Result<()> {
        let (Some(output), AgentRuntime::Curiosity { wm, explorer, .. }) = (&self.output, &self.agent) else {
            return Ok(());
        };
        checkpoint::save(
            &output.dir.join(name),
            &[
                ("wm", &wm.store),
                ("actor", &explorer.actor_store),
                ("critic", &explorer.critic_store),
                ("slow_critic", &explorer.slow_critic_store),
                ("reward", &explorer.reward_store),
            ],
        )
    }

    /// Apply every mutation scheduled for the upcoming episode. For the
    /// curiosity agent this checkpoints the stale model and probes it
    /// against the changed map before any retraining sees the new layout.
    fn apply_scheduled_mutations(&mut self) -> Result<()> {
        let due: Vec<_> = self
            .config
            .mutations
            .iter()
            .filter(|m| m.episode == self.episode_index)
            .cloned()
            .collect();
        for scheduled in due {
            let (new_map, changed) = self.map.mutate(&scheduled.mutation)?;
            if let Some(output) = &self.output {
                self.map
                    .save_ascii(&output.dir.join(format!("map_before_ep{}.txt", self.episode_index)))?;
                new_map.save_ascii(&output.dir.join(format!("map_after_ep{}.txt", self.episode_index)))?;
            }
            self.save_checkpoint(&format!("checkpoint_premutation_ep{}.json", self.episode_index))?;
            if self.config.probe_on_mutation && !changed.is_empty() {
                if let (Some(output), AgentRuntime::Curiosity { wm, .. }) = (&self.output, &self.agent) {
                    let probe_cfg = ProbeConfig { seed: self.config.seed, ..ProbeConfig::default() };
                    let report =
                        metrics::staleness_probe(wm, &self.map, &new_map, &changed, self.sim.params(), &probe_cfg)?;
                    report.write_csv(&output.dir.join(format!("probe_ep{}.csv", self.episode_index)))?;
                    report.write_csv(&output.dir.join("probe.csv"))?;
                    std::fs::write(
                        output.dir.join(format!("probe_ep{}_summary.json", self.episode_index)),
                        serde_json::to_string_pretty(&serde_json::json!({
                            "affected_mean": report.affected_mean,
                            "control_mean": report.control_mean,
                            "ratio": report.ratio,
                            "changed": report.changed,
                        }))?,
                    )?;
                }
            }
            self.tracker.extend_visitable(&new_map);
            self.sim.set_map(new_map.clone());
            self.map = new_map;
        }
        Ok(())
    }

    /// Run the configured number of episodes, alternating collection and
    /// training, and write all artifacts. A training failure checkpoints
    /// the current parameters before aborting.
    pub fn run(&mut self) -> Result<RunArtifacts> {
        for _ in 0..self.config.episodes {
            self.apply_scheduled_mutations()?;
            self.run_episode()?;
            if let Err(e) = self.train_phase() {
                self.save_checkpoint("checkpoint_abort.json")?;
                self.flush()?;
                return Err(e);
            }
            if self.config.checkpoint_interval > 0 && self.episode_index % self.config.checkpoint_interval == 0 {
                self.save_checkpoint(&format!("checkpoint_ep{}.json", self.episode_index))?;
            }
        }
        self.finalize()
    }

    fn flush(&mut self) -> Result<()> {
        if let Some(out) = &mut self.output {
            out.coverage.flush()?;
            out.wm_diag.flush()?;
            out.policy_diag.flush()?;
        }
        Ok(())
    }

    fn finalize(&mut self) -> Result<RunArtifacts> {
        let artifacts = RunArtifacts {
            final_coverage: self.tracker.coverage(),
            visited: self.tracker.visited_count(),
            visitable: self.tracker.visitable_count(),
            total_steps: self.global_step,
            episodes: self.episode_index,
        };
        self.save_checkpoint("checkpoint.json")?;
        self.flush()?;
        if let Some(out) = &self.output {
            metrics::write_heatmaps(&self.tracker, &self.map, &out.dir)?;
            std::fs::write(out.dir.join("summary.json"), serde_json::to_string_pretty(&artifacts)?)?;
        }
        Ok(artifacts)
    }
}

/// Build and run one experiment into a fresh output directory.
pub fn run_experiment(config: &RunConfig, out_dir: &Path) -> Result<RunArtifacts> {
    let mut trainer = Trainer::new(config.clone(), Some(out_dir))?;
    trainer.run()
}
