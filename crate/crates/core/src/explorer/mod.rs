//! Curiosity reward and the actor-critic trained inside imagination.
//!
//! The intrinsic reward of a real transition is the KL divergence between
//! the posterior and the dynamics prior, summed over latent groups: large
//! when the model is surprised by what it saw. Imagined rollouts have no
//! observations, so a lightweight reward head is regressed on the real-step
//! KL values and queried at imagined states instead.
//!
//! Policy gradients are REINFORCE-style over the discrete actions with a
//! slow-critic baseline: imagined states enter the actor and critic losses
//! as data, not as differentiable functions of the world model.

use crate::autodiff::adam::{Adam, AdamConfig};
use crate::autodiff::nn::{self, Activation, Binding, Mlp, ParamStore};
use crate::autodiff::tape::{Tape, Var};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::sim::Action;
use crate::world_model::{LatentState, WorldModel};
use rand::rngs::StdRng;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PolicyConfig {
    pub hidden_dim: usize,
    pub hidden_layers: usize,
    /// Imagination rollout length.
    pub horizon: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub entropy_scale: f64,
    pub actor_critic_lr: f64,
    pub reward_head_lr: f64,
    pub slow_critic_interval: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            hidden_dim: 128,
            hidden_layers: 2,
            horizon: 15,
            gamma: 0.99,
            lambda: 0.95,
            entropy_scale: 1e-4,
            actor_critic_lr: 8e-5,
            reward_head_lr: 3e-4,
            slow_critic_interval: 100,
        }
    }
}

/// KL(posterior || prior) per batch row, summed over the latent groups.
/// Stable log-softmax route; always non-negative up to rounding.
pub fn intrinsic_reward(posterior_logits: &Tensor, prior_logits: &Tensor, classes: usize) -> Result<Vec<f64>> {
    if posterior_logits.shape() != prior_logits.shape() {
        return Err(Error::ShapeMismatch {
            op: "intrinsic_reward",
            detail: format!("{:?} vs {:?}", posterior_logits.shape(), prior_logits.shape()),
        });
    }
    if classes == 0 || posterior_logits.cols() % classes != 0 {
        return Err(Error::ShapeMismatch {
            op: "intrinsic_reward",
            detail: format!("{} cols not divisible by {classes} classes", posterior_logits.cols()),
        });
    }
    let log_softmax = |chunk: &[f64], out: &mut Vec<f64>| {
        let max = chunk.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = chunk.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
        out.clear();
        out.extend(chunk.iter().map(|&x| x - log_sum));
    };
    let mut rewards = Vec::with_capacity(posterior_logits.rows());
    let (mut lq, mut lp) = (Vec::new(), Vec::new());
    for r in 0..posterior_logits.rows() {
        let mut total = 0.0;
        for (qc, pc) in posterior_logits
            .row_slice(r)
            .chunks_exact(classes)
            .zip(prior_logits.row_slice(r).chunks_exact(classes))
        {
            log_softmax(qc, &mut lq);
            log_softmax(pc, &mut lp);
            for (q, p) in lq.iter().zip(&lp) {
                total += q.exp() * (q - p);
            }
        }
        rewards.push(total);
    }
    Ok(rewards)
}

/// Backward recursion G_t = r_t + gamma * ((1-lambda) * v_{t+1} + lambda * G_{t+1}),
/// with G_H = bootstrap. `values[t]` holds v(s_{t+1}).
pub fn lambda_returns(rewards: &[f64], values: &[f64], bootstrap: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    assert_eq!(rewards.len(), values.len(), "rewards and values must align");
    let mut returns = vec![0.0; rewards.len()];
    let mut next = bootstrap;
    for t in (0..rewards.len()).rev() {
        next = rewards[t] + gamma * ((1.0 - lambda) * values[t] + lambda * next);
        returns[t] = next;
    }
    returns
}

/// Running standard deviation of the intrinsic reward, clipped to >= 1,
/// used to keep the reward scale stable while the model improves.
#[derive(Debug, Clone)]
pub struct RewardNormalizer {
    decay: f64,
    mean: f64,
    mean_sq: f64,
    initialized: bool,
}

impl Default for RewardNormalizer {
    fn default() -> Self {
        RewardNormalizer { decay: 0.99, mean: 0.0, mean_sq: 0.0, initialized: false }
    }
}

impl RewardNormalizer {
    pub fn observe(&mut self, rewards: &[f64]) {
        if rewards.is_empty() {
            return;
        }
        let m = rewards.iter().sum::<f64>() / rewards.len() as f64;
        let sq = rewards.iter().map(|r| r * r).sum::<f64>() / rewards.len() as f64;
        if self.initialized {
            self.mean = self.decay * self.mean + (1.0 - self.decay) * m;
            self.mean_sq = self.decay * self.mean_sq + (1.0 - self.decay) * sq;
        } else {
            self.mean = m;
            self.mean_sq = sq;
            self.initialized = true;
        }
    }

    /// Divisor: running std clipped from below at 1.
    pub fn denom(&self) -> f64 {
        (self.mean_sq - self.mean * self.mean).max(0.0).sqrt().max(1.0)
    }

    pub fn normalize(&self, reward: f64) -> f64 {
        reward / self.denom()
    }
}

/// One imagined rollout batch: states s_0..s_H as [B, state_dim] rows,
/// actions/rewards/returns for t = 0..H-1, slow-critic values for s_0..s_H.
/// Rewards are non-negative by construction (softplus head, KL targets).
#[derive(Debug, Clone)]
pub struct ImaginedTrajectory {
    pub states: Vec<Tensor>,
    pub actions: Vec<Vec<usize>>,
    pub rewards: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
    pub returns: Vec<Vec<f64>>,
}

impl ImaginedTrajectory {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn batch(&self) -> usize {
        self.states.first().map(Tensor::rows).unwrap_or(0)
    }

    pub fn mean_reward(&self) -> f64 {
        let n: usize = self.rewards.iter().map(Vec::len).sum();
        if n == 0 {
            return 0.0;
        }
        self.rewards.iter().flatten().sum::<f64>() / n as f64
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PolicyLosses {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
}

pub struct Explorer {
    pub cfg: PolicyConfig,
    pub actor_store: ParamStore,
    pub critic_store: ParamStore,
    pub slow_critic_store: ParamStore,
    pub reward_store: ParamStore,
    actor: Mlp,
    critic: Mlp,
    reward_head: Mlp,
    adam_actor: Adam,
    adam_critic: Adam,
    adam_reward: Adam,
    updates: u64,
    pub normalizer: RewardNormalizer,
}

impl Explorer {
    pub fn new(state_dim: usize, cfg: PolicyConfig, rng: &mut StdRng) -> Self {
        let mut actor_store = ParamStore::new();
        let actor = Mlp::new(
            &mut actor_store,
            "actor",
            state_dim,
            cfg.hidden_dim,
            cfg.hidden_layers,
            Action::COUNT,
            Activation::Elu,
            rng,
        );
        let mut critic_store = ParamStore::new();
        let critic = Mlp::new(
            &mut critic_store,
            "critic",
            state_dim,
            cfg.hidden_dim,
            cfg.hidden_layers,
            1,
            Activation::Elu,
            rng,
        );
        let slow_critic_store = critic_store.clone();
        let mut reward_store = ParamStore::new();
        let reward_head = Mlp::new(
            &mut reward_store,
            "reward",
            state_dim,
            cfg.hidden_dim,
            cfg.hidden_layers,
            1,
            Activation::Elu,
            rng,
        );
        let adam_actor = Adam::new(AdamConfig::with_lr(cfg.actor_critic_lr), &actor_store);
        let adam_critic = Adam::new(AdamConfig::with_lr(cfg.actor_critic_lr), &critic_store);
        let adam_reward = Adam::new(AdamConfig::with_lr(cfg.reward_head_lr), &reward_store);
        Explorer {
            cfg,
            actor_store,
            critic_store,
            slow_critic_store,
            reward_store,
            actor,
            critic,
            reward_head,
            adam_actor,
            adam_critic,
            adam_reward,
            updates: 0,
            normalizer: RewardNormalizer::default(),
        }
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Actor logits for a state batch already on a tape.
    pub fn actor_logits(&self, tape: &mut Tape, actor_bind: &Binding, state: Var) -> Result<Var> {
        self.actor.forward(tape, actor_bind, state)
    }

    pub fn bind_actor(&self, tape: &mut Tape) -> Binding {
        Binding::bind(tape, &self.actor_store, false)
    }

    /// Sample one action from the actor for a single state row.
    pub fn act(&self, state: &Tensor, rng: &mut StdRng) -> Result<Action> {
        let mut tape = Tape::new();
        let bind = self.bind_actor(&mut tape);
        let s = tape.leaf(state, false);
        let logits = self.actor.forward(&mut tape, &bind, s)?;
        let probs = tape.softmax(logits, Action::COUNT)?;
        Ok(Action::from_index(sample_row(tape.value(probs), rng)))
    }

    /// Roll the dynamics forward under the actor for `horizon` steps from
    /// detached start states, scoring each arrival with the reward head and
    /// bootstrapping returns from the slow critic.
    pub fn imagine(
        &self,
        wm: &WorldModel,
        start: &LatentState,
        horizon: usize,
        rng: &mut StdRng,
    ) -> Result<ImaginedTrajectory> {
        if horizon < 1 {
            return Err(Error::Config("imagination horizon must be at least 1".into()));
        }
        let batch = start.batch();
        let mut tape = Tape::new();
        let wm_bind = Binding::bind(&mut tape, &wm.store, false);
        let actor_bind = Binding::bind(&mut tape, &self.actor_store, false);
        let slow_bind = Binding::bind(&mut tape, &self.slow_critic_store, false);
        let reward_bind = Binding::bind(&mut tape, &self.reward_store, false);

        let mut h = tape.leaf(&start.h, false);
        let mut z = tape.leaf(&start.z, false);
        let mut states = Vec::with_capacity(horizon + 1);
        let mut actions = Vec::with_capacity(horizon);
        let mut rewards = Vec::with_capacity(horizon);
        let mut values = Vec::with_capacity(horizon + 1);

        let mut s = tape.concat_cols(h, z)?;
        states.push(tape.value_tensor(s));
        for _t in 0..horizon {
            let v = self.critic.forward(&mut tape, &slow_bind, s)?;
            values.push(tape.value(v).to_vec());

            let logits = self.actor.forward(&mut tape, &actor_bind, s)?;
            let probs = tape.softmax(logits, Action::COUNT)?;
            let mut one_hot = Tensor::zeros(batch, Action::COUNT);
            let mut picked = Vec::with_capacity(batch);
            for r in 0..batch {
                let base = r * Action::COUNT;
                let pick = sample_row(&tape.value(probs)[base..base + Action::COUNT], rng);
                one_hot.set(r, pick, 1.0);
                picked.push(pick);
            }
            actions.push(picked);

            let action_var = tape.leaf(&one_hot, false);
            let step = wm.img_step_graph(&mut tape, &wm_bind, h, z, action_var, rng)?;
            h = step.h;
            z = step.z;
            s = tape.concat_cols(h, z)?;
            states.push(tape.value_tensor(s));

            let r_raw = self.reward_head.forward(&mut tape, &reward_bind, s)?;
            let r = tape.softplus(r_raw)?;
            rewards.push(tape.value(r).to_vec());
        }
        let v_last = self.critic.forward(&mut tape, &slow_bind, s)?;
        values.push(tape.value(v_last).to_vec());

        // Lambda returns per batch row; values[t+1] is v(s_{t+1}).
        let mut returns = vec![vec![0.0; batch]; horizon];
        for b in 0..batch {
            let rew: Vec<f64> = rewards.iter().map(|r| r[b]).collect();
            let val: Vec<f64> = values[1..].iter().map(|v| v[b]).collect();
            let g = lambda_returns(&rew, &val, values[horizon][b], self.cfg.gamma, self.cfg.lambda);
            for t in 0..horizon {
                returns[t][b] = g[t];
            }
        }
        Ok(ImaginedTrajectory { states, actions, rewards, values, returns })
    }

    /// REINFORCE actor update with entropy regularization plus critic
    /// regression to the lambda returns. States enter as data.
    pub fn policy_update(&mut self, traj: &ImaginedTrajectory) -> Result<PolicyLosses> {
        let horizon = traj.horizon();
        let batch = traj.batch();
        if horizon == 0 || batch == 0 {
            return Err(Error::Config("empty trajectory".into()));
        }
        let n = horizon * batch;
        let state_refs: Vec<&Tensor> = traj.states[..horizon].iter().collect();
        let states = Tensor::vstack(&state_refs)?;
        let mut one_hot = Tensor::zeros(n, Action::COUNT);
        let mut advantage = Tensor::zeros(n, 1);
        let mut target = Tensor::zeros(n, 1);
        for t in 0..horizon {
            for b in 0..batch {
                let row = t * batch + b;
                one_hot.set(row, traj.actions[t][b], 1.0);
                advantage.set(row, 0, traj.returns[t][b] - traj.values[t][b]);
                target.set(row, 0, traj.returns[t][b]);
            }
        }

        let mut tape = Tape::new();
        let actor_bind = Binding::bind(&mut tape, &self.actor_store, true);
        let critic_bind = Binding::bind(&mut tape, &self.critic_store, true);
        let s = tape.leaf(&states, false);
        let oh = tape.leaf(&one_hot, false);
        let adv = tape.leaf(&advantage, false);
        let tgt = tape.leaf(&target, false);

        let logits = self.actor.forward(&mut tape, &actor_bind, s)?;
        let logp = nn::categorical_log_prob(&mut tape, logits, oh, Action::COUNT)?;
        let weighted = tape.mul(logp, adv)?;
        let pg = tape.mean_all(weighted)?;
        let ent = nn::categorical_entropy(&mut tape, logits, Action::COUNT)?;
        let ent_mean = tape.mean_all(ent)?;
        let neg_pg = tape.neg(pg)?;
        let ent_term = tape.scale(ent_mean, -self.cfg.entropy_scale)?;
        let actor_loss = tape.add(neg_pg, ent_term)?;

        let v = self.critic.forward(&mut tape, &critic_bind, s)?;
        let diff = tape.sub(v, tgt)?;
        let sq = tape.mul(diff, diff)?;
        let critic_loss = tape.mean_all(sq)?;

        let total = tape.add(actor_loss, critic_loss)?;
        let losses = PolicyLosses {
            actor_loss: tape.value(actor_loss)[0],
            critic_loss: tape.value(critic_loss)[0],
            entropy: tape.value(ent_mean)[0],
        };
        if !losses.actor_loss.is_finite() || !losses.critic_loss.is_finite() {
            return Err(Error::NonFinite { op: "policy_update" });
        }
        tape.backward(total)?;
        let actor_grads = actor_bind.grads(&tape, &self.actor_store);
        let critic_grads = critic_bind.grads(&tape, &self.critic_store);
        self.adam_actor.step(&mut self.actor_store, actor_grads)?;
        self.adam_critic.step(&mut self.critic_store, critic_grads)?;

        self.updates += 1;
        if self.updates % self.cfg.slow_critic_interval == 0 {
            self.sync_slow_critic();
        }
        Ok(losses)
    }

    /// Regress the reward head on (state, normalized KL) pairs.
    pub fn update_reward_head(&mut self, states: &Tensor, targets: &[f64]) -> Result<f64> {
        assert_eq!(states.rows(), targets.len(), "one target per state row");
        let target = Tensor::from_vec(targets.len(), 1, targets.to_vec())?;
        let mut tape = Tape::new();
        let bind = Binding::bind(&mut tape, &self.reward_store, true);
        let s = tape.leaf(states, false);
        let t = tape.leaf(&target, false);
        let raw = self.reward_head.forward(&mut tape, &bind, s)?;
        let pred = tape.softplus(raw)?;
        let diff = tape.sub(pred, t)?;
        let sq = tape.mul(diff, diff)?;
        let loss = tape.mean_all(sq)?;
        let loss_value = tape.value(loss)[0];
        tape.backward(loss)?;
        let grads = bind.grads(&tape, &self.reward_store);
        self.adam_reward.step(&mut self.reward_store, grads)?;
        Ok(loss_value)
    }

    /// Predicted imagination reward at given states (diagnostics, probes).
    pub fn predict_reward(&self, states: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bind = Binding::bind(&mut tape, &self.reward_store, false);
        let s = tape.leaf(states, false);
        let raw = self.reward_head.forward(&mut tape, &bind, s)?;
        let r = tape.softplus(raw)?;
        Ok(tape.value(r).to_vec())
    }

    pub fn sync_slow_critic(&mut self) {
        self.slow_critic_store.copy_from(&self.critic_store);
    }

    /// Action probabilities at a single state (tests, diagnostics).
    pub fn action_probs(&self, state: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bind = self.bind_actor(&mut tape);
        let s = tape.leaf(state, false);
        let logits = self.actor.forward(&mut tape, &bind, s)?;
        let probs = tape.softmax(logits, Action::COUNT)?;
        Ok(tape.value(probs).to_vec())
    }
}

fn sample_row(probs: &[f64], rng: &mut StdRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}
