//! Deterministic actor-critic with target networks and Gaussian exploration.

use ndarray::Array2;
use rismeta_core::Rng;
use serde::{Deserialize, Serialize};

use crate::neural::{hcat, Activation, Adam, AdamConfig, Head, Mlp, MlpCheckpoint, Parameterized};
use crate::sac::ActorCriticBatch;
use crate::{AgentError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DdpgConfig {
    pub hidden: Vec<usize>,
    /// Hidden-layer nonlinearity of every network.
    pub activation: Activation,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    /// Standard deviation of the Gaussian exploration noise on (−1, 1) actions.
    pub exploration_std: f64,
    pub reward_scale: f64,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            activation: Activation::Relu,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            gamma: 0.99,
            tau: 0.005,
            batch_size: 256,
            exploration_std: 0.1,
            reward_scale: 1.0,
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.gamma)
            && (0.0..=1.0).contains(&self.tau)
            && self.batch_size > 0
            && self.exploration_std >= 0.0
            && [self.actor_lr, self.critic_lr, self.reward_scale].iter().all(|v| v.is_finite() && *v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(AgentError::Config(format!("invalid DDPG settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DdpgLosses {
    pub critic: f64,
    pub actor: f64,
}

#[derive(Debug, Clone)]
pub struct Ddpg {
    config: DdpgConfig,
    input_dim: usize,
    action_dim: usize,
    actor: Mlp,
    critic: Mlp,
    actor_target: Mlp,
    critic_target: Mlp,
    actor_opt: Adam,
    critic_opt: Adam,
    updates: u64,
}

impl Ddpg {
    pub fn new(input_dim: usize, action_dim: usize, config: DdpgConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut a_sizes = vec![input_dim];
        a_sizes.extend(&config.hidden);
        a_sizes.push(action_dim);
        let mut q_sizes = vec![input_dim + action_dim];
        q_sizes.extend(&config.hidden);
        q_sizes.push(1);
        let actor = Mlp::new(&a_sizes, config.activation, Head::Linear, rng)?;
        let critic = Mlp::with_last_bound(&q_sizes, config.activation, Head::Linear, None, rng)?;
        Ok(Self {
            actor_opt: Adam::new(&actor, AdamConfig::with_lr(config.actor_lr)),
            critic_opt: Adam::new(&critic, AdamConfig::with_lr(config.critic_lr)),
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            config,
            input_dim,
            action_dim,
            updates: 0,
        })
    }

    pub fn config(&self) -> &DdpgConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// `tanh(actor(s))`.
    pub fn act(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.actor.predict_one(input)?.into_iter().map(f64::tanh).collect())
    }

    /// Policy action plus `N(0, σ²)` noise, clipped to [−1, 1]. With σ = 0
    /// the rng is not consumed.
    pub fn act_explore(&self, input: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        let sigma = self.config.exploration_std;
        let mut a = self.act(input)?;
        if sigma > 0.0 {
            for v in &mut a {
                *v = (*v + sigma * rng.normal()).clamp(-1.0, 1.0);
            }
        }
        Ok(a)
    }

    pub fn critic_targets(&self, batch: &ActorCriticBatch) -> Result<Vec<f64>> {
        let a_next = self.actor_target.predict(&batch.s_next)?.mapv(f64::tanh);
        let q = self.critic_target.predict(&hcat(&[&batch.s_next, &a_next]))?;
        Ok((0..batch.len())
            .map(|i| self.config.reward_scale * batch.r[i] + self.config.gamma * batch.continuation[i] * q[[i, 0]])
            .collect())
    }

    pub fn update(&mut self, batch: &ActorCriticBatch) -> Result<DdpgLosses> {
        let n = batch.len();
        let ok = n > 0
            && batch.s.dim() == (n, self.input_dim)
            && batch.s_next.dim() == (n, self.input_dim)
            && batch.a.dim() == (n, self.action_dim)
            && batch.continuation.len() == n;
        if !ok {
            return Err(AgentError::Shape("DDPG batch does not match the networks".into()));
        }
        let nf = n as f64;
        let y = Array2::from_shape_vec((n, 1), self.critic_targets(batch)?).expect("column");
        let pred = self.critic.forward(&hcat(&[&batch.s, &batch.a]))?;
        let diff = &pred - &y;
        let critic_loss = diff.mapv(|d| d * d).sum() / nf;
        self.critic.backward(&(diff * (2.0 / nf)))?;
        self.critic_opt.step(&mut self.critic);

        // actor: maximize Q(s, tanh(actor(s)))
        let raw = self.actor.forward(&batch.s)?;
        let a = raw.mapv(f64::tanh);
        let q = self.critic.forward(&hcat(&[&batch.s, &a]))?;
        let dx = self.critic.backward(&Array2::from_elem((n, 1), -1.0 / nf))?;
        self.critic.zero_grad();
        let g = Array2::from_shape_fn((n, self.action_dim), |(i, k)| {
            let ak = a[[i, k]];
            dx[[i, self.input_dim + k]] * (1.0 - ak * ak)
        });
        self.actor.backward(&g)?;
        self.actor_opt.step(&mut self.actor);

        self.actor.soft_update_into(&mut self.actor_target, self.config.tau);
        self.critic.soft_update_into(&mut self.critic_target, self.config.tau);
        self.updates += 1;
        Ok(DdpgLosses {
            critic: critic_loss,
            actor: -q.sum() / nf,
        })
    }

    pub fn checksum(&self) -> u64 {
        [&self.actor, &self.critic, &self.actor_target, &self.critic_target]
            .iter()
            .fold(0, |h: u64, n| h.rotate_left(7) ^ n.checksum())
    }

    pub fn to_checkpoint(&self) -> DdpgCheckpoint {
        DdpgCheckpoint {
            config: self.config.clone(),
            input_dim: self.input_dim,
            action_dim: self.action_dim,
            actor: self.actor.to_checkpoint(),
            critic: self.critic.to_checkpoint(),
            actor_target: self.actor_target.to_checkpoint(),
            critic_target: self.critic_target.to_checkpoint(),
            updates: self.updates,
        }
    }

    pub fn from_checkpoint(ck: &DdpgCheckpoint) -> Result<Self> {
        ck.config.validate()?;
        let actor = Mlp::from_checkpoint(&ck.actor)?;
        let critic = Mlp::from_checkpoint(&ck.critic)?;
        let actor_target = Mlp::from_checkpoint(&ck.actor_target)?;
        let critic_target = Mlp::from_checkpoint(&ck.critic_target)?;
        let actors_ok = [&actor, &actor_target]
            .iter()
            .all(|a| a.input_dim() == ck.input_dim && a.output_dim() == ck.action_dim);
        let critics_ok = [&critic, &critic_target]
            .iter()
            .all(|q| q.input_dim() == ck.input_dim + ck.action_dim && q.output_dim() == 1);
        if !actors_ok || !critics_ok {
            return Err(AgentError::Checkpoint("DDPG networks do not match their dimensions".into()));
        }
        Ok(Self {
            actor_opt: Adam::new(&actor, AdamConfig::with_lr(ck.config.actor_lr)),
            critic_opt: Adam::new(&critic, AdamConfig::with_lr(ck.config.critic_lr)),
            actor,
            critic,
            actor_target,
            critic_target,
            config: ck.config.clone(),
            input_dim: ck.input_dim,
            action_dim: ck.action_dim,
            updates: ck.updates,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdpgCheckpoint {
    pub config: DdpgConfig,
    pub input_dim: usize,
    pub action_dim: usize,
    pub actor: MlpCheckpoint,
    pub critic: MlpCheckpoint,
    pub actor_target: MlpCheckpoint,
    pub critic_target: MlpCheckpoint,
    pub updates: u64,
}

/// `ddpg_update` as a free function.
pub fn ddpg_update(agent: &mut Ddpg, batch: &ActorCriticBatch) -> Result<DdpgLosses> {
    agent.update(batch)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DdpgConfig {
        DdpgConfig {
            hidden: vec![16, 16],
            ..DdpgConfig::default()
        }
    }

    #[test]
    fn zero_discount_target_is_reward() {
        let mut rng = Rng::new(1);
        let agent = Ddpg::new(2, 1, DdpgConfig { gamma: 0.0, ..small() }, &mut rng).unwrap();
        let b = ActorCriticBatch {
            s: Array2::from_elem((3, 2), 0.5),
            a: Array2::zeros((3, 1)),
            r: vec![1.0, -2.0, 0.25],
            s_next: Array2::from_elem((3, 2), 0.1),
            continuation: vec![1.0; 3],
        };
        assert_eq!(agent.critic_targets(&b).unwrap(), b.r);
    }

    #[test]
    fn zero_noise_is_deterministic() {
        let mut rng = Rng::new(2);
        let agent = Ddpg::new(2, 3, DdpgConfig { exploration_std: 0.0, ..small() }, &mut rng).unwrap();
        let mut r1 = Rng::new(5);
        let mut r2 = Rng::new(6);
        let x = [0.3, -0.4];
        assert_eq!(agent.act_explore(&x, &mut r1).unwrap(), agent.act_explore(&x, &mut r2).unwrap());
        assert_eq!(agent.act_explore(&x, &mut r1).unwrap(), agent.act(&x).unwrap());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut rng = Rng::new(3);
        let agent = Ddpg::new(2, 3, small(), &mut rng).unwrap();
        let text = serde_json::to_string(&agent.to_checkpoint()).unwrap();
        let back = Ddpg::from_checkpoint(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(agent.checksum(), back.checksum());
    }
}
