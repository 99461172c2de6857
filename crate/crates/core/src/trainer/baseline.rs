//! Count-based novelty baseline.
//!
//! A surrogate for count-driven exploration methods, not a reimplementation
//! of any of them: a model-free actor-critic over raw observations, trained
//! on each finished episode with REINFORCE and lambda returns, rewarded by
//! 1/sqrt(N) of the true cell's lifetime visit count N. It shares the
//! curiosity agent's observation interface but cheats by reading the true
//! cell for its reward, which only makes the baseline stronger.

use crate::autodiff::adam::{Adam, AdamConfig};
use crate::autodiff::nn::{self, Activation, Binding, Mlp, ParamStore};
use crate::autodiff::tape::Tape;
use crate::autodiff::Tensor;
use crate::error::Result;
use crate::explorer::lambda_returns;
use crate::sim::Action;
use rand::rngs::StdRng;
use rand::Rng;
use std::collections::HashMap;

pub struct CountNoveltyAgent {
    actor_store: ParamStore,
    critic_store: ParamStore,
    actor: Mlp,
    critic: Mlp,
    adam_actor: Adam,
    adam_critic: Adam,
    visit_counts: HashMap<(usize, usize), u64>,
    gamma: f64,
    lambda: f64,
    entropy_scale: f64,
}

impl CountNoveltyAgent {
    pub fn new(obs_dim: usize, rng: &mut StdRng) -> Self {
        let mut actor_store = ParamStore::new();
        let actor = Mlp::new(&mut actor_store, "actor", obs_dim, 64, 2, Action::COUNT, Activation::Elu, rng);
        let mut critic_store = ParamStore::new();
        let critic = Mlp::new(&mut critic_store, "critic", obs_dim, 64, 2, 1, Activation::Elu, rng);
        let adam_actor = Adam::new(AdamConfig::with_lr(3e-4), &actor_store);
        let adam_critic = Adam::new(AdamConfig::with_lr(3e-4), &critic_store);
        CountNoveltyAgent {
            actor_store,
            critic_store,
            actor,
            critic,
            adam_actor,
            adam_critic,
            visit_counts: HashMap::new(),
            gamma: 0.99,
            lambda: 0.95,
            // On-policy training on a nonstationary count reward collapses
            // without a healthy entropy floor.
            entropy_scale: 3e-3,
        }
    }

    pub fn act(&self, obs_input: &Tensor, rng: &mut StdRng) -> Result<Action> {
        let mut tape = Tape::new();
        let bind = Binding::bind(&mut tape, &self.actor_store, false);
        let o = tape.leaf(obs_input, false);
        let logits = self.actor.forward(&mut tape, &bind, o)?;
        let probs = tape.softmax(logits, Action::COUNT)?;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in tape.value(probs).iter().enumerate() {
            acc += p;
            if u < acc {
                return Ok(Action::from_index(i));
            }
        }
        Ok(Action::TurnRight)
    }

    /// Count the arrival cell and return the novelty reward 1/sqrt(N).
    pub fn observe_cell(&mut self, cell: (usize, usize)) -> f64 {
        let n = self.visit_counts.entry(cell).or_insert(0);
        *n += 1;
        1.0 / (*n as f64).sqrt()
    }

    /// One REINFORCE + critic-regression update over a finished episode.
    pub fn train_on_episode(&mut self, observations: &[Tensor], actions: &[Action], rewards: &[f64]) -> Result<()> {
        let n = actions.len();
        if n == 0 {
            return Ok(());
        }
        assert_eq!(observations.len(), n, "one observation per decision");
        assert_eq!(rewards.len(), n, "one reward per action");
        let obs_refs: Vec<&Tensor> = observations.iter().collect();
        let stacked = Tensor::vstack(&obs_refs)?;

        // Values from the current critic; episode ends are time-outs, so
        // the tail bootstraps from the final state's own value.
        let values = {
            let mut tape = Tape::new();
            let bind = Binding::bind(&mut tape, &self.critic_store, false);
            let o = tape.leaf(&stacked, false);
            let v = self.critic.forward(&mut tape, &bind, o)?;
            tape.value(v).to_vec()
        };
        let next_values: Vec<f64> = (0..n).map(|t| values.get(t + 1).copied().unwrap_or(values[n - 1])).collect();
        let returns = lambda_returns(rewards, &next_values, values[n - 1], self.gamma, self.lambda);

        let mut one_hot = Tensor::zeros(n, Action::COUNT);
        let mut advantage = Tensor::zeros(n, 1);
        let mut target = Tensor::zeros(n, 1);
        for t in 0..n {
            one_hot.set(t, actions[t].index(), 1.0);
            advantage.set(t, 0, returns[t] - values[t]);
            target.set(t, 0, returns[t]);
        }

        let mut tape = Tape::new();
        let actor_bind = Binding::bind(&mut tape, &self.actor_store, true);
        let critic_bind = Binding::bind(&mut tape, &self.critic_store, true);
        let o = tape.leaf(&stacked, false);
        let oh = tape.leaf(&one_hot, false);
        let adv = tape.leaf(&advantage, false);
        let tgt = tape.leaf(&target, false);

        let logits = self.actor.forward(&mut tape, &actor_bind, o)?;
        let logp = nn::categorical_log_prob(&mut tape, logits, oh, Action::COUNT)?;
        let weighted = tape.mul(logp, adv)?;
        let pg = tape.mean_all(weighted)?;
        let ent = nn::categorical_entropy(&mut tape, logits, Action::COUNT)?;
        let ent_mean = tape.mean_all(ent)?;
        let neg_pg = tape.neg(pg)?;
        let ent_term = tape.scale(ent_mean, -self.entropy_scale)?;
        let actor_loss = tape.add(neg_pg, ent_term)?;

        let v = self.critic.forward(&mut tape, &critic_bind, o)?;
        let diff = tape.sub(v, tgt)?;
        let sq = tape.mul(diff, diff)?;
        let critic_loss = tape.mean_all(sq)?;

        let total = tape.add(actor_loss, critic_loss)?;
        tape.backward(total)?;
        let actor_grads = actor_bind.grads(&tape, &self.actor_store);
        let critic_grads = critic_bind.grads(&tape, &self.critic_store);
        self.adam_actor.step(&mut self.actor_store, actor_grads)?;
        self.adam_critic.step(&mut self.critic_store, critic_grads)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn novelty_reward_decays_with_visits() {
        let mut agent = CountNoveltyAgent::new(12, &mut StdRng::seed_from_u64(1));
        let first = agent.observe_cell((2, 3));
        let second = agent.observe_cell((2, 3));
        let third = agent.observe_cell((2, 3));
        assert_eq!(first, 1.0);
        assert!((second - 1.0 / 2.0f64.sqrt()).abs() < 1e-15);
        assert!((third - 1.0 / 3.0f64.sqrt()).abs() < 1e-15);
        assert_eq!(agent.observe_cell((9, 9)), 1.0);
    }

    #[test]
    fn training_shifts_policy_toward_rewarded_action() {
        let mut rng = StdRng::seed_from_u64(2);
        let mut agent = CountNoveltyAgent::new(4, &mut rng);
        let obs = Tensor::row(vec![0.5, 0.1, 0.9, 0.3]);
        // Hand-built episodes: TurnLeft always pays, others never.
        for _ in 0..300 {
            let observations = vec![obs.clone(); 3];
            let actions = [Action::Forward, Action::TurnLeft, Action::TurnRight];
            let rewards: Vec<f64> = actions
                .iter()
                .map(|a| if matches!(a, Action::TurnLeft) { 1.0 } else { 0.0 })
                .collect();
            agent.train_on_episode(&observations, &actions, &rewards).unwrap();
        }
        let mut counts = [0usize; 3];
        for _ in 0..300 {
            counts[agent.act(&obs, &mut rng).unwrap().index()] += 1;
        }
        assert!(
            counts[Action::TurnLeft.index()] > 150,
            "picked {counts:?}, expected a strong TurnLeft bias"
        );
    }
}
