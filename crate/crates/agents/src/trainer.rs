//! Shared rollout plumbing and the DDPG training loop.

use std::collections::VecDeque;

use rismeta_core::env::EnvOptions;
use rismeta_core::{ActionVector, Env, Observation, Rng, SystemConfig, Task, Transition};
use serde::{Deserialize, Serialize};

use crate::buffer::ReplayBuffer;
use crate::ddpg::{Ddpg, DdpgConfig};
use crate::neural::stack_rows;
use crate::sac::ActorCriticBatch;
use crate::scaling::ActionScaler;
use crate::{AgentError, Result};

/// One row of the per-epoch training log. Fields that do not apply to a
/// learner are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean per-step reward collected during this epoch's rollouts.
    pub train_return: f64,
    /// Mean per-step reward of the deterministic policy on the training tasks.
    pub eval_return: f64,
    pub elbo: Option<f64>,
    pub decoder: Option<f64>,
    pub kl_z: Option<f64>,
    pub kl_y: Option<f64>,
    pub critic_loss: Option<f64>,
    pub policy_loss: Option<f64>,
    pub alpha: Option<f64>,
}

pub(crate) fn ensure_finite(values: &[(&str, f64)], epoch: usize) -> Result<()> {
    for &(what, v) in values {
        if !v.is_finite() {
            return Err(AgentError::Diverged {
                what: what.to_string(),
                epoch,
                detail: format!("{what} = {v}"),
            });
        }
    }
    Ok(())
}

/// One environment per task, observations scaled by path loss. Each env
/// evolves with its task's own correlation coefficient.
pub fn make_envs(system: &SystemConfig, tasks: &[Task], episode_len: usize) -> Result<Vec<Env>> {
    let options = EnvOptions {
        episode_len,
        scale_observations: true,
    };
    tasks
        .iter()
        .map(|t| Ok(Env::new(system.clone().with_rho(t.rho), t.clone(), options.clone())?))
        .collect()
}

/// The most recent transitions of an ongoing evaluation episode.
#[derive(Debug, Clone)]
pub struct RollingContext {
    cap: usize,
    items: VecDeque<Transition>,
}

impl RollingContext {
    pub fn new(cap: usize) -> Self {
        Self {
            cap: cap.max(1),
            items: VecDeque::with_capacity(cap),
        }
    }

    pub fn push(&mut self, tr: Transition) {
        if self.items.len() == self.cap {
            self.items.pop_front();
        }
        self.items.push_back(tr);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn as_refs(&self) -> Vec<&Transition> {
        self.items.iter().collect()
    }
}

/// A transition as stored by the learners: the action is the policy's
/// normalized output in (−1, 1), not the physical action.
pub fn make_transition(task_id: u64, t: u64, s: Observation, raw: Vec<f64>, r: f64, s_next: Observation, done: bool) -> Transition {
    Transition {
        task_id,
        t,
        s,
        a: ActionVector(raw),
        r,
        s_next,
        done,
        annotation: None,
    }
}

/// Runs one episode of `steps` decisions with a deterministic policy that
/// sees the current observation and the episode's recent transitions.
/// Returns the mean per-step reward.
pub fn run_episode(
    env: &mut Env,
    scaler: &ActionScaler,
    context_len: usize,
    mut policy: impl FnMut(&Observation, &RollingContext) -> Result<Vec<f64>>,
) -> Result<f64> {
    let mut obs = env.reset();
    let mut ctx = RollingContext::new(context_len);
    let mut total = 0.0;
    let mut steps = 0usize;
    loop {
        let raw = policy(&obs, &ctx)?;
        let step = env.step(&scaler.to_physical(&raw))?;
        total += step.reward;
        steps += 1;
        ctx.push(make_transition(env.task().id, step.info.t, obs, raw, step.reward, step.obs.clone(), step.done));
        obs = step.obs;
        if step.done {
            break;
        }
    }
    Ok(total / steps as f64)
}

/// Batch of `[s, cond]` rows for an actor-critic update. `cond(slot)` gives
/// the conditioning vector used for both `s` and `s'` of that transition.
pub(crate) fn actor_critic_batch(
    buf: &ReplayBuffer,
    slots: &[usize],
    cond: impl Fn(&Transition) -> Vec<f64>,
) -> Result<ActorCriticBatch> {
    let trs: Vec<&Transition> = slots.iter().map(|&s| buf.get(s).expect("sampled slot")).collect();
    let first = trs.first().ok_or(AgentError::EmptyBuffer)?;
    let c_dim = cond(first).len();
    let obs_dim = first.s.0.len();
    let act_dim = first.a.0.len();
    let mut s = Vec::with_capacity(trs.len());
    let mut s_next = Vec::with_capacity(trs.len());
    for tr in &trs {
        let c = cond(tr);
        let mut row = tr.s.0.clone();
        row.extend_from_slice(&c);
        s.push(row);
        let mut row = tr.s_next.0.clone();
        row.extend_from_slice(&c);
        s_next.push(row);
    }
    let a: Vec<&[f64]> = trs.iter().map(|t| t.a.0.as_slice()).collect();
    Ok(ActorCriticBatch {
        s: stack_rows(&s, obs_dim + c_dim)?,
        a: stack_rows(&a, act_dim)?,
        r: trs.iter().map(|t| t.r).collect(),
        s_next: stack_rows(&s_next, obs_dim + c_dim)?,
        // episodes end on a time limit, never in a terminal state
        continuation: vec![1.0; trs.len()],
    })
}

pub(crate) fn uniform_action(dim: usize, rng: &mut Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.uniform_range(-1.0, 1.0)).collect()
}

/// Arithmetic mean, 0 for an empty slice.
pub(crate) fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DdpgTrainConfig {
    pub ddpg: DdpgConfig,
    pub epochs: usize,
    pub episodes_per_task: usize,
    pub episode_len: usize,
    pub updates_per_epoch: usize,
    pub buffer_capacity: usize,
    /// Epochs at the start that act uniformly at random.
    pub warmup_epochs: usize,
    /// Steps of the per-epoch deterministic evaluation episode (0 = skip).
    pub eval_len: usize,
    pub seed: u64,
}

impl Default for DdpgTrainConfig {
    fn default() -> Self {
        Self {
            ddpg: DdpgConfig::default(),
            epochs: 50,
            episodes_per_task: 1,
            episode_len: 100,
            updates_per_epoch: 400,
            buffer_capacity: 100_000,
            warmup_epochs: 1,
            eval_len: 100,
            seed: 0,
        }
    }
}

/// Deterministic evaluation of a DDPG actor on fresh copies of `envs`.
pub fn evaluate_ddpg(agent: &Ddpg, envs: &[Env], scaler: &ActionScaler, steps: usize) -> Result<f64> {
    let mut returns = Vec::with_capacity(envs.len());
    for env in envs {
        let mut env = with_episode_len(env, steps)?;
        returns.push(run_episode(&mut env, scaler, 1, |obs, _| agent.act(&obs.0))?);
    }
    Ok(mean(&returns))
}

/// A copy of `env` that starts at its current channel and runs `steps`-long
/// episodes on a rewound evolution stream.
pub(crate) fn with_episode_len(env: &Env, steps: usize) -> Result<Env> {
    let options = EnvOptions {
        episode_len: steps,
        scale_observations: env.options().scale_observations,
    };
    let mut task = env.task().clone();
    task.initial = env.state().clone();
    Ok(Env::new(env.config().clone(), task, options)?)
}

/// Trains DDPG on `tasks`. Returns the agent and one metrics row per epoch.
pub fn train_ddpg(tasks: &[Task], system: &SystemConfig, config: &DdpgTrainConfig) -> Result<(Ddpg, Vec<EpochMetrics>)> {
    if tasks.is_empty() || config.episode_len == 0 {
        return Err(AgentError::Config("training needs at least one task and a positive episode length".into()));
    }
    let root = Rng::new(config.seed);
    let mut init_rng = root.derive(1);
    let mut act_rng = root.derive(2);
    let mut sample_rng = root.derive(3);
    let scaler = ActionScaler::new(system);
    let mut envs = make_envs(system, tasks, config.episode_len)?;
    let obs_dim = envs[0].observation_dim();
    let mut agent = Ddpg::new(obs_dim, scaler.dim, config.ddpg.clone(), &mut init_rng)?;
    let mut buf = ReplayBuffer::new(config.buffer_capacity)?;
    let mut metrics = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut collected = Vec::new();
        for env in &mut envs {
            for _ in 0..config.episodes_per_task {
                let mut obs = env.reset();
                loop {
                    let raw = if epoch < config.warmup_epochs {
                        uniform_action(scaler.dim, &mut act_rng)
                    } else {
                        agent.act_explore(&obs.0, &mut act_rng)?
                    };
                    let step = env.step(&scaler.to_physical(&raw))?;
                    collected.push(step.reward);
                    let id = env.task().id;
                    buf.add(make_transition(id, step.info.t, obs, raw, step.reward, step.obs.clone(), step.done));
                    obs = step.obs;
                    if step.done {
                        break;
                    }
                }
            }
        }
        let mut critic_sum = 0.0;
        let mut actor_sum = 0.0;
        for _ in 0..config.updates_per_epoch {
            let slots = buf.sample_slots(config.ddpg.batch_size, &mut sample_rng)?;
            let batch = actor_critic_batch(&buf, &slots, |_| Vec::new())?;
            let l = agent.update(&batch)?;
            ensure_finite(&[("critic loss", l.critic), ("actor loss", l.actor)], epoch)?;
            critic_sum += l.critic;
            actor_sum += l.actor;
        }
        let u = config.updates_per_epoch.max(1) as f64;
        let eval_return = if config.eval_len > 0 {
            evaluate_ddpg(&agent, &envs, &scaler, config.eval_len)?
        } else {
            0.0
        };
        metrics.push(EpochMetrics {
            epoch,
            train_return: mean(&collected),
            eval_return,
            critic_loss: Some(critic_sum / u),
            policy_loss: Some(actor_sum / u),
            ..EpochMetrics::default()
        });
    }
    Ok((agent, metrics))
}
