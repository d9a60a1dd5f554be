//! One-state, one-step continuous bandit with reward `−(a − 0.5)²`.
//!
//! The optimum is `a* = 0.5`; it is the smallest problem on which an
//! actor-critic learner has to get its critic targets, policy gradient and
//! (for SAC) temperature right to converge.

use ndarray::Array2;
use rismeta_core::{ActionVector, Observation, Rng, Transition};
use serde::{Deserialize, Serialize};

use crate::buffer::ReplayBuffer;
use crate::ddpg::{Ddpg, DdpgConfig};
use crate::sac::{ActorCriticBatch, Sac, SacConfig};
use crate::neural::Activation;
use crate::Result;

pub const OPTIMUM: f64 = 0.5;
const STATE: [f64; 1] = [1.0];
const WARMUP: usize = 128;

pub fn bandit_reward(a: f64) -> f64 {
    -(a - OPTIMUM) * (a - OPTIMUM)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditRun {
    pub updates: usize,
    /// Deterministic action after training.
    pub final_action: f64,
    /// Deterministic action every 500 updates.
    pub trace: Vec<f64>,
}

pub fn sac_bandit_config() -> SacConfig {
    SacConfig {
        hidden: vec![32, 32],
        activation: Activation::Tanh,
        actor_lr: 1e-3,
        critic_lr: 1e-3,
        alpha_lr: 1e-3,
        gamma: 0.0,
        batch_size: 64,
        ..SacConfig::default()
    }
}

pub fn ddpg_bandit_config() -> DdpgConfig {
    DdpgConfig {
        hidden: vec![32, 32],
        activation: Activation::Tanh,
        actor_lr: 1e-3,
        critic_lr: 1e-3,
        gamma: 0.0,
        batch_size: 64,
        ..DdpgConfig::default()
    }
}

fn record(buf: &mut ReplayBuffer, t: u64, a: f64) {
    buf.add(Transition {
        task_id: 0,
        t,
        s: Observation(STATE.to_vec()),
        a: ActionVector(vec![a]),
        r: bandit_reward(a),
        s_next: Observation(STATE.to_vec()),
        done: true,
        annotation: None,
    });
}

fn batch(buf: &ReplayBuffer, size: usize, rng: &mut Rng) -> Result<ActorCriticBatch> {
    let rows = buf.sample(size, rng)?;
    Ok(ActorCriticBatch {
        s: Array2::from_elem((rows.len(), 1), STATE[0]),
        a: Array2::from_shape_fn((rows.len(), 1), |(i, _)| rows[i].a.0[0]),
        r: rows.iter().map(|t| t.r).collect(),
        s_next: Array2::from_elem((rows.len(), 1), STATE[0]),
        continuation: vec![0.0; rows.len()],
    })
}

/// Trains SAC for `updates` gradient steps, one environment sample per step.
pub fn train_sac_bandit(seed: u64, updates: usize, config: SacConfig) -> Result<BanditRun> {
    let mut rng = Rng::new(seed);
    let mut agent = Sac::new(1, 1, config, &mut rng.derive(1))?;
    let mut buf = ReplayBuffer::new(10_000)?;
    for t in 0..WARMUP {
        record(&mut buf, t as u64, rng.uniform_range(-1.0, 1.0));
    }
    let mut trace = Vec::new();
    for step in 0..updates {
        let a = agent.act_sample(&STATE, &mut rng)?[0];
        record(&mut buf, (WARMUP + step) as u64, a);
        let b = batch(&buf, agent.config().batch_size, &mut rng)?;
        agent.update(&b, &mut rng)?;
        if (step + 1) % 500 == 0 {
            trace.push(agent.act_mean(&STATE)?[0]);
        }
    }
    Ok(BanditRun {
        updates,
        final_action: agent.act_mean(&STATE)?[0],
        trace,
    })
}

/// Trains DDPG for `updates` gradient steps, one environment sample per step.
pub fn train_ddpg_bandit(seed: u64, updates: usize, config: DdpgConfig) -> Result<BanditRun> {
    let mut rng = Rng::new(seed);
    let mut agent = Ddpg::new(1, 1, config, &mut rng.derive(1))?;
    let mut buf = ReplayBuffer::new(10_000)?;
    for t in 0..WARMUP {
        record(&mut buf, t as u64, rng.uniform_range(-1.0, 1.0));
    }
    let mut trace = Vec::new();
    for step in 0..updates {
        let a = agent.act_explore(&STATE, &mut rng)?[0];
        record(&mut buf, (WARMUP + step) as u64, a);
        let b = batch(&buf, agent.config().batch_size, &mut rng)?;
        agent.update(&b)?;
        if (step + 1) % 500 == 0 {
            trace.push(agent.act(&STATE)?[0]);
        }
    }
    Ok(BanditRun {
        updates,
        final_action: agent.act(&STATE)?[0],
        trace,
    })
}
