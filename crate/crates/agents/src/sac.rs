//! Soft actor-critic with twin critics, Polyak-averaged targets and an
//! automatically tuned entropy temperature.
//!
//! Inputs to every network are `[s, cond]`, where `cond` is an optional
//! conditioning vector (the task encoding for the meta-agent, empty for
//! plain SAC). Actions live in (−1, 1).

use ndarray::Array2;
use rismeta_core::Rng;
use serde::{Deserialize, Serialize};

use crate::neural::{
    hcat, split_gaussian, squashed_gaussian, squashed_gaussian_backward, Activation, Adam, AdamConfig, Head, Mlp,
    MlpCheckpoint, Parameterized, Scalar, SquashedSample,
};
use crate::{AgentError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    /// Hidden-layer nonlinearity of every network.
    pub activation: Activation,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub init_alpha: f64,
    /// `None` means `−action_dim`.
    pub target_entropy: Option<f64>,
    /// Multiplies rewards before they enter the critic targets.
    pub reward_scale: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            activation: Activation::Relu,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            alpha_lr: 3e-4,
            gamma: 0.99,
            tau: 0.005,
            batch_size: 256,
            init_alpha: 0.1,
            target_entropy: None,
            reward_scale: 1.0,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.gamma)
            && (0.0..=1.0).contains(&self.tau)
            && self.batch_size > 0
            && self.init_alpha > 0.0
            && [self.actor_lr, self.critic_lr, self.alpha_lr, self.reward_scale].iter().all(|v| v.is_finite() && *v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(AgentError::Config(format!("invalid SAC settings {self:?}")))
        }
    }
}

/// A minibatch. `s` and `s_next` already include the conditioning columns.
/// `continuation` is `1` where the critic target bootstraps, `0` at true
/// terminals.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCriticBatch {
    pub s: Array2<f64>,
    pub a: Array2<f64>,
    pub r: Vec<f64>,
    pub s_next: Array2<f64>,
    pub continuation: Vec<f64>,
}

impl ActorCriticBatch {
    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SacLosses {
    pub q1: f64,
    pub q2: f64,
    pub policy: f64,
    pub alpha: f64,
    /// Mean `−log π` of the fresh policy samples.
    pub entropy: f64,
    pub alpha_value: f64,
}

#[derive(Debug, Clone)]
pub struct Sac {
    config: SacConfig,
    input_dim: usize,
    action_dim: usize,
    actor: Mlp,
    q1: Mlp,
    q2: Mlp,
    q1_target: Mlp,
    q2_target: Mlp,
    log_alpha: Scalar,
    actor_opt: Adam,
    q1_opt: Adam,
    q2_opt: Adam,
    alpha_opt: Adam,
    updates: u64,
}

fn column(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((v.len(), 1), v.to_vec()).expect("column")
}

fn sample_rows(out: &Array2<f64>, rng: &mut Rng) -> Vec<SquashedSample> {
    out.rows()
        .into_iter()
        .map(|row| {
            let (mean, log_std) = split_gaussian(row.as_slice().unwrap());
            let eps: Vec<f64> = (0..mean.len()).map(|_| rng.normal()).collect();
            squashed_gaussian(mean, log_std, &eps)
        })
        .collect()
}

fn actions_of(samples: &[SquashedSample], dim: usize) -> Array2<f64> {
    let mut a = Array2::zeros((samples.len(), dim));
    for (i, s) in samples.iter().enumerate() {
        for (j, &v) in s.action.iter().enumerate() {
            a[[i, j]] = v;
        }
    }
    a
}

impl Sac {
    /// `input_dim` counts observation plus conditioning columns.
    pub fn new(input_dim: usize, action_dim: usize, config: SacConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut a_sizes = vec![input_dim];
        a_sizes.extend(&config.hidden);
        a_sizes.push(2 * action_dim);
        let mut q_sizes = vec![input_dim + action_dim];
        q_sizes.extend(&config.hidden);
        q_sizes.push(1);
        let actor = Mlp::new(&a_sizes, config.activation, Head::Gaussian, rng)?;
        let q1 = Mlp::with_last_bound(&q_sizes, config.activation, Head::Linear, None, rng)?;
        let q2 = Mlp::with_last_bound(&q_sizes, config.activation, Head::Linear, None, rng)?;
        let log_alpha = Scalar::new(config.init_alpha.ln());
        Ok(Self {
            actor_opt: Adam::new(&actor, AdamConfig::with_lr(config.actor_lr)),
            q1_opt: Adam::new(&q1, AdamConfig::with_lr(config.critic_lr)),
            q2_opt: Adam::new(&q2, AdamConfig::with_lr(config.critic_lr)),
            alpha_opt: Adam::new(&log_alpha, AdamConfig::with_lr(config.alpha_lr)),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            actor,
            q1,
            q2,
            log_alpha,
            config,
            input_dim,
            action_dim,
            updates: 0,
        })
    }

    pub fn config(&self) -> &SacConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.get().exp()
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn target_entropy(&self) -> f64 {
        self.config.target_entropy.unwrap_or(-(self.action_dim as f64))
    }

    /// Deterministic action `tanh(mean)`.
    pub fn act_mean(&self, input: &[f64]) -> Result<Vec<f64>> {
        let out = self.actor.predict_one(input)?;
        let (mean, _) = split_gaussian(&out);
        Ok(mean.iter().map(|m| m.tanh()).collect())
    }

    /// Stochastic action from the policy.
    pub fn act_sample(&self, input: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        let out = self.actor.predict_one(input)?;
        let (mean, log_std) = split_gaussian(&out);
        Ok(crate::neural::gaussian_head_sample(mean, log_std, rng).action)
    }

    /// Critic targets `r·scale + γ·c·(min Q̄(s', a') − α log π(a'|s'))`.
    pub fn critic_targets(&self, batch: &ActorCriticBatch, rng: &mut Rng) -> Result<Vec<f64>> {
        let next = sample_rows(&self.actor.predict(&batch.s_next)?, rng);
        let a_next = actions_of(&next, self.action_dim);
        let x = hcat(&[&batch.s_next, &a_next]);
        let t1 = self.q1_target.predict(&x)?;
        let t2 = self.q2_target.predict(&x)?;
        let alpha = self.alpha();
        Ok((0..batch.len())
            .map(|i| {
                let v = t1[[i, 0]].min(t2[[i, 0]]) - alpha * next[i].log_prob;
                self.config.reward_scale * batch.r[i] + self.config.gamma * batch.continuation[i] * v
            })
            .collect())
    }

    fn check(&self, batch: &ActorCriticBatch) -> Result<()> {
        let n = batch.len();
        let ok = n > 0
            && batch.s.dim() == (n, self.input_dim)
            && batch.s_next.dim() == (n, self.input_dim)
            && batch.a.dim() == (n, self.action_dim)
            && batch.continuation.len() == n;
        if ok {
            Ok(())
        } else {
            Err(AgentError::Shape("SAC batch does not match the networks".into()))
        }
    }

    /// One gradient step on both critics, the actor and the temperature,
    /// followed by a Polyak update of the target critics.
    pub fn update(&mut self, batch: &ActorCriticBatch, rng: &mut Rng) -> Result<SacLosses> {
        self.check(batch)?;
        let n = batch.len() as f64;
        let y = column(&self.critic_targets(batch, rng)?);

        let sa = hcat(&[&batch.s, &batch.a]);
        let mut losses = SacLosses::default();
        for (q, opt, slot) in [
            (&mut self.q1, &mut self.q1_opt, &mut losses.q1),
            (&mut self.q2, &mut self.q2_opt, &mut losses.q2),
        ] {
            let pred = q.forward(&sa)?;
            let diff = &pred - &y;
            *slot = diff.mapv(|d| d * d).sum() / n;
            q.backward(&(diff * (2.0 / n)))?;
            opt.step(q);
        }

        // policy: minimize E[α log π(a|s) − min Q(s, a)]
        let alpha = self.alpha();
        let out = self.actor.forward(&batch.s)?;
        let samples = sample_rows(&out, rng);
        let a_new = actions_of(&samples, self.action_dim);
        let x = hcat(&[&batch.s, &a_new]);
        let v1 = self.q1.forward(&x)?;
        let v2 = self.q2.forward(&x)?;
        let pick1: Vec<bool> = (0..samples.len()).map(|i| v1[[i, 0]] <= v2[[i, 0]]).collect();
        let g1 = Array2::from_shape_fn((samples.len(), 1), |(i, _)| if pick1[i] { -1.0 / n } else { 0.0 });
        let g2 = Array2::from_shape_fn((samples.len(), 1), |(i, _)| if pick1[i] { 0.0 } else { -1.0 / n });
        let dx = self.q1.backward(&g1)? + self.q2.backward(&g2)?;
        self.q1.zero_grad();
        self.q2.zero_grad();
        let ad = self.action_dim;
        let mut g_out = Array2::zeros(out.raw_dim());
        let mut policy_loss = 0.0;
        let mut logp_mean = 0.0;
        for (i, smp) in samples.iter().enumerate() {
            let q_min = v1[[i, 0]].min(v2[[i, 0]]);
            policy_loss += (alpha * smp.log_prob - q_min) / n;
            logp_mean += smp.log_prob / n;
            let d_action: Vec<f64> = (0..ad).map(|k| dx[[i, self.input_dim + k]]).collect();
            let (dm, dl) = squashed_gaussian_backward(smp, alpha / n, &d_action);
            for k in 0..ad {
                g_out[[i, k]] = dm[k];
                g_out[[i, ad + k]] = dl[k];
            }
        }
        self.actor.backward(&g_out)?;
        self.actor_opt.step(&mut self.actor);

        // temperature: minimize −log α · (log π + H̄)
        let h_target = self.target_entropy();
        self.log_alpha.add_grad(-(logp_mean + h_target));
        losses.alpha = -self.log_alpha.get() * (logp_mean + h_target);
        self.alpha_opt.step(&mut self.log_alpha);

        self.q1.soft_update_into(&mut self.q1_target, self.config.tau);
        self.q2.soft_update_into(&mut self.q2_target, self.config.tau);
        self.updates += 1;

        losses.policy = policy_loss;
        losses.entropy = -logp_mean;
        losses.alpha_value = self.alpha();
        Ok(losses)
    }

    pub fn to_checkpoint(&self) -> SacCheckpoint {
        SacCheckpoint {
            config: self.config.clone(),
            input_dim: self.input_dim,
            action_dim: self.action_dim,
            actor: self.actor.to_checkpoint(),
            q1: self.q1.to_checkpoint(),
            q2: self.q2.to_checkpoint(),
            q1_target: self.q1_target.to_checkpoint(),
            q2_target: self.q2_target.to_checkpoint(),
            log_alpha: self.log_alpha.get(),
            updates: self.updates,
        }
    }

    /// Restores networks and temperature; optimizer moments start fresh.
    pub fn from_checkpoint(ck: &SacCheckpoint) -> Result<Self> {
        ck.config.validate()?;
        let actor = Mlp::from_checkpoint(&ck.actor)?;
        let q1 = Mlp::from_checkpoint(&ck.q1)?;
        let q2 = Mlp::from_checkpoint(&ck.q2)?;
        let q1_target = Mlp::from_checkpoint(&ck.q1_target)?;
        let q2_target = Mlp::from_checkpoint(&ck.q2_target)?;
        if actor.input_dim() != ck.input_dim
            || actor.output_dim() != 2 * ck.action_dim
            || [&q1, &q2, &q1_target, &q2_target]
                .iter()
                .any(|q| q.input_dim() != ck.input_dim + ck.action_dim || q.output_dim() != 1)
        {
            return Err(AgentError::Checkpoint("SAC networks do not match their dimensions".into()));
        }
        let log_alpha = Scalar::new(ck.log_alpha);
        Ok(Self {
            actor_opt: Adam::new(&actor, AdamConfig::with_lr(ck.config.actor_lr)),
            q1_opt: Adam::new(&q1, AdamConfig::with_lr(ck.config.critic_lr)),
            q2_opt: Adam::new(&q2, AdamConfig::with_lr(ck.config.critic_lr)),
            alpha_opt: Adam::new(&log_alpha, AdamConfig::with_lr(ck.config.alpha_lr)),
            actor,
            q1,
            q2,
            q1_target,
            q2_target,
            log_alpha,
            config: ck.config.clone(),
            input_dim: ck.input_dim,
            action_dim: ck.action_dim,
            updates: ck.updates,
        })
    }

    /// Digest over every network and the temperature.
    pub fn checksum(&self) -> u64 {
        [&self.actor, &self.q1, &self.q2, &self.q1_target, &self.q2_target]
            .iter()
            .fold(self.log_alpha.get().to_bits(), |h, n| h.rotate_left(7) ^ n.checksum())
    }

    #[cfg(test)]
    pub(crate) fn copy_online_to_targets_with_tau(&mut self, tau: f64) {
        self.q1.soft_update_into(&mut self.q1_target, tau);
        self.q2.soft_update_into(&mut self.q2_target, tau);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SacCheckpoint {
    pub config: SacConfig,
    pub input_dim: usize,
    pub action_dim: usize,
    pub actor: MlpCheckpoint,
    pub q1: MlpCheckpoint,
    pub q2: MlpCheckpoint,
    pub q1_target: MlpCheckpoint,
    pub q2_target: MlpCheckpoint,
    pub log_alpha: f64,
    pub updates: u64,
}

/// `sac_update` as a free function.
pub fn sac_update(agent: &mut Sac, batch: &ActorCriticBatch, rng: &mut Rng) -> Result<SacLosses> {
    agent.update(batch, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SacConfig {
        SacConfig {
            hidden: vec![16, 16],
            batch_size: 8,
            ..SacConfig::default()
        }
    }

    fn batch(rng: &mut Rng, n: usize, input: usize, act: usize) -> ActorCriticBatch {
        ActorCriticBatch {
            s: Array2::from_shape_fn((n, input), |_| rng.normal()),
            a: Array2::from_shape_fn((n, act), |_| rng.uniform_range(-1.0, 1.0)),
            r: (0..n).map(|_| rng.normal()).collect(),
            s_next: Array2::from_shape_fn((n, input), |_| rng.normal()),
            continuation: vec![1.0; n],
        }
    }

    #[test]
    fn zero_discount_target_is_reward() {
        let mut rng = Rng::new(1);
        let sac = Sac::new(3, 2, SacConfig { gamma: 0.0, ..small() }, &mut rng).unwrap();
        let b = batch(&mut rng, 5, 3, 2);
        assert_eq!(sac.critic_targets(&b, &mut rng).unwrap(), b.r);
    }

    #[test]
    fn polyak_one_copies() {
        let mut rng = Rng::new(2);
        let mut sac = Sac::new(3, 2, small(), &mut rng).unwrap();
        let b = batch(&mut rng, 8, 3, 2);
        sac.update(&b, &mut rng).unwrap();
        assert_ne!(sac.q1.flat_params(), sac.q1_target.flat_params());
        sac.copy_online_to_targets_with_tau(1.0);
        assert_eq!(sac.q1.flat_params(), sac.q1_target.flat_params());
        assert_eq!(sac.q2.flat_params(), sac.q2_target.flat_params());
    }

    #[test]
    fn alpha_stays_positive_and_losses_finite() {
        let mut rng = Rng::new(3);
        let mut sac = Sac::new(3, 2, SacConfig { alpha_lr: 0.1, ..small() }, &mut rng).unwrap();
        for _ in 0..50 {
            let b = batch(&mut rng, 8, 3, 2);
            let l = sac.update(&b, &mut rng).unwrap();
            assert!(l.q1.is_finite() && l.policy.is_finite());
            assert!(sac.alpha() > 0.0);
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut rng = Rng::new(4);
        let sac = Sac::new(3, 2, small(), &mut rng).unwrap();
        let text = serde_json::to_string(&sac.to_checkpoint()).unwrap();
        let back = Sac::from_checkpoint(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(sac.checksum(), back.checksum());
        let x = [0.1, -0.2, 0.3];
        assert_eq!(sac.act_mean(&x).unwrap(), back.act_mean(&x).unwrap());
    }
}
