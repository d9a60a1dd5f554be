//! The beamforming / phase-shift design problem as a per-timestep MDP.
//!
//! State: real and imaginary parts of `vec(H1)` and `vec(H2)` (column-major),
//! length `2(NM + KN)`. Action: `[Re vec(W), Im vec(W), Re φ, Im φ]`, length
//! `2(MK + N)`. Reward: the sum rate of the decoded, projected design on the
//! channel the agent observed; the channel advances one AR(1) step afterwards.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::channel::{ChannelModel, ChannelState, SystemConfig};
use crate::link::{self, Beamformer, LinkReport, PhaseShift};
use crate::numerics::{CMatrix, Rng};
use crate::{Error, Result};

/// Stream-id namespace of training tasks.
pub const TRAIN_NAMESPACE: u64 = 1 << 62;
/// Stream-id namespace of held-out evaluation trajectories.
pub const EVAL_NAMESPACE: u64 = 2 << 62;
const NAMESPACE_MASK: u64 = 3 << 62;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionVector(pub Vec<f64>);

pub fn observation_dim(config: &SystemConfig) -> usize {
    let (m, n, k) = (config.m_antennas, config.n_ris, config.k_users);
    2 * (n * m + k * n)
}

pub fn action_dim(config: &SystemConfig) -> usize {
    let (m, n, k) = (config.m_antennas, config.n_ris, config.k_users);
    2 * (m * k + n)
}

fn push_re_im(out: &mut Vec<f64>, entries: &[Complex64], scale: impl Fn(usize) -> f64) {
    out.extend(entries.iter().enumerate().map(|(i, z)| z.re * scale(i)));
    out.extend(entries.iter().enumerate().map(|(i, z)| z.im * scale(i)));
}

/// Flattens a channel state into `[Re vec(H1), Im vec(H1), Re vec(H2), Im vec(H2)]`.
pub fn encode_state(state: &ChannelState) -> Observation {
    let mut out = Vec::with_capacity(2 * (state.h1.as_slice().len() + state.h2.as_slice().len()));
    push_re_im(&mut out, &state.h1.vec_column_major(), |_| 1.0);
    push_re_im(&mut out, &state.h2.vec_column_major(), |_| 1.0);
    Observation(out)
}

/// Like [`encode_state`] but with path loss removed: `H1` divided by its
/// amplitude gain and each row of `H2` by its user's gain.
pub fn encode_state_scaled(state: &ChannelState, model: &ChannelModel) -> Observation {
    let mut out = Vec::with_capacity(2 * (state.h1.as_slice().len() + state.h2.as_slice().len()));
    let a1 = 1.0 / model.h1_amplitude();
    push_re_im(&mut out, &state.h1.vec_column_major(), |_| a1);
    let k = state.h2.rows();
    let amps = model.h2_amplitude();
    // column-major: entry i belongs to row i % K
    push_re_im(&mut out, &state.h2.vec_column_major(), |i| 1.0 / amps[i % k]);
    Observation(out)
}

/// Inverse of [`encode_state`] for the given dimensions.
pub fn decode_state(obs: &Observation, config: &SystemConfig) -> Result<ChannelState> {
    let (m, n, k) = (config.m_antennas, config.n_ris, config.k_users);
    if obs.0.len() != observation_dim(config) {
        return Err(Error::Shape(format!(
            "observation of length {} for dimension {}",
            obs.0.len(),
            observation_dim(config)
        )));
    }
    let (h1_part, h2_part) = obs.0.split_at(2 * n * m);
    let complex = |part: &[f64]| -> Vec<Complex64> {
        let half = part.len() / 2;
        (0..half).map(|i| Complex64::new(part[i], part[half + i])).collect()
    };
    Ok(ChannelState {
        h1: CMatrix::from_column_major(n, m, &complex(h1_part))?,
        h2: CMatrix::from_column_major(k, n, &complex(h2_part))?,
        t: 0,
    })
}

/// Splits an action into a power-feasible beamformer and unit-modulus phases.
pub fn decode_action(a: &ActionVector, config: &SystemConfig) -> Result<(Beamformer, PhaseShift)> {
    let (m, n, k) = (config.m_antennas, config.n_ris, config.k_users);
    if a.0.len() != action_dim(config) {
        return Err(Error::Shape(format!(
            "action of length {} for dimension {}",
            a.0.len(),
            action_dim(config)
        )));
    }
    if a.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("action"));
    }
    let mk = m * k;
    let w_entries: Vec<Complex64> = (0..mk).map(|i| Complex64::new(a.0[i], a.0[mk + i])).collect();
    let w_raw = CMatrix::from_column_major(m, k, &w_entries)?;
    let base = 2 * mk;
    let phi_raw: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(a.0[base + i], a.0[base + n + i]))
        .collect();
    Ok((
        link::project_power(w_raw, config.p_max),
        link::project_unit_modulus(&phi_raw),
    ))
}

/// Packs a design into the action layout; inverse of [`decode_action`] on
/// feasible designs.
pub fn encode_action(w: &Beamformer, phase: &PhaseShift) -> ActionVector {
    let mut out = Vec::with_capacity(2 * (w.w.as_slice().len() + phase.len()));
    push_re_im(&mut out, &w.w.vec_column_major(), |_| 1.0);
    push_re_im(&mut out, &phase.phasors(), |_| 1.0);
    ActionVector(out)
}

/// Sum rate of `(w, phase)` on `state`.
pub fn reward(state: &ChannelState, w: &Beamformer, phase: &PhaseShift, noise: f64) -> Result<f64> {
    Ok(link::evaluate(state, w, phase, noise)?.sum_rate)
}

/// One CSI trajectory source: an initial channel plus its own evolution stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: u64,
    pub seed: u64,
    /// Stream id; the top two bits name the namespace (training / evaluation).
    pub stream: u64,
    pub rho: f64,
    pub initial: ChannelState,
}

impl Task {
    pub fn new(model: &ChannelModel, seed: u64, stream: u64, id: u64) -> Self {
        let mut rng = Rng::with_stream(seed, stream);
        Self {
            id,
            seed,
            stream,
            rho: model.config().rho,
            initial: model.draw_state(&mut rng),
        }
    }

    pub fn namespace(&self) -> u64 {
        self.stream & NAMESPACE_MASK
    }

    /// Stream that drives the AR innovations of this task.
    pub fn evolution_rng(&self) -> Rng {
        Rng::with_stream(self.seed, self.stream).derive(1)
    }
}

/// `count` training tasks with independent streams; ids are `0..count`.
pub fn make_task_batch(master_seed: u64, count: usize, config: &SystemConfig) -> Result<Vec<Task>> {
    make_task_batch_in(TRAIN_NAMESPACE, master_seed, count, config)
}

/// Tasks in an explicit stream namespace (see [`TRAIN_NAMESPACE`], [`EVAL_NAMESPACE`]).
pub fn make_task_batch_in(namespace: u64, master_seed: u64, count: usize, config: &SystemConfig) -> Result<Vec<Task>> {
    let model = ChannelModel::new(config.clone())?;
    Ok((0..count as u64)
        .map(|id| Task::new(&model, master_seed, namespace | id, id))
        .collect())
}

/// Optional annotation attached to a transition by a task-inference encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskAnnotation {
    /// Component index, 1-based.
    pub y: usize,
    pub z: Vec<f64>,
    pub encoder_version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub task_id: u64,
    pub t: u64,
    pub s: Observation,
    pub a: ActionVector,
    pub r: f64,
    pub s_next: Observation,
    pub done: bool,
    pub annotation: Option<TaskAnnotation>,
}

/// Constraint check of one decoded design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintAudit {
    pub tx_power: f64,
    pub p_max: f64,
    /// `max_n ||φ_n| − 1|`
    pub max_modulus_error: f64,
}

impl ConstraintAudit {
    pub fn of(w: &Beamformer, phase: &PhaseShift, p_max: f64) -> Self {
        let max_modulus_error = phase
            .phasors()
            .iter()
            .map(|z| (z.norm() - 1.0).abs())
            .fold(0.0, f64::max);
        Self {
            tx_power: w.tx_power(),
            p_max,
            max_modulus_error,
        }
    }

    pub fn ok(&self) -> bool {
        self.tx_power <= self.p_max + 1e-9 && self.max_modulus_error <= 1e-12
    }
}

#[derive(Debug, Clone)]
pub struct StepInfo {
    pub report: LinkReport,
    pub audit: ConstraintAudit,
    /// Channel the action was scored on.
    pub t: u64,
}

#[derive(Debug, Clone)]
pub struct Step {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvOptions {
    pub episode_len: usize,
    /// Divide observed CSI by its path-loss amplitude.
    pub scale_observations: bool,
}

impl Default for EnvOptions {
    fn default() -> Self {
        Self {
            episode_len: 100,
            scale_observations: false,
        }
    }
}

/// Single-owner environment following one task's trajectory.
#[derive(Debug, Clone)]
pub struct Env {
    model: ChannelModel,
    options: EnvOptions,
    task: Task,
    state: ChannelState,
    rng: Rng,
    step_in_episode: usize,
    in_episode: bool,
}

impl Env {
    pub fn new(config: SystemConfig, task: Task, options: EnvOptions) -> Result<Self> {
        let model = ChannelModel::new(config)?;
        let cfg = model.config();
        if task.initial.h1.shape() != (cfg.n_ris, cfg.m_antennas) || task.initial.h2.shape() != (cfg.k_users, cfg.n_ris) {
            return Err(Error::Shape("task channel does not match configuration".into()));
        }
        if options.episode_len == 0 {
            return Err(Error::Config("episode_len must be positive".into()));
        }
        let rng = task.evolution_rng();
        let state = task.initial.clone();
        Ok(Self {
            model,
            options,
            task,
            state,
            rng,
            step_in_episode: 0,
            in_episode: false,
        })
    }

    pub fn config(&self) -> &SystemConfig {
        self.model.config()
    }

    pub fn model(&self) -> &ChannelModel {
        &self.model
    }

    pub fn task(&self) -> &Task {
        &self.task
    }

    pub fn options(&self) -> &EnvOptions {
        &self.options
    }

    pub fn state(&self) -> &ChannelState {
        &self.state
    }

    pub fn observation_dim(&self) -> usize {
        observation_dim(self.config())
    }

    pub fn action_dim(&self) -> usize {
        action_dim(self.config())
    }

    pub fn observe(&self) -> Observation {
        if self.options.scale_observations {
            encode_state_scaled(&self.state, &self.model)
        } else {
            encode_state(&self.state)
        }
    }

    /// Starts a new episode. The channel keeps evolving from where the
    /// previous episode left it.
    pub fn reset(&mut self) -> Observation {
        self.step_in_episode = 0;
        self.in_episode = true;
        self.observe()
    }

    /// Rewinds to the task's initial channel and evolution stream, then resets.
    pub fn restart(&mut self) -> Observation {
        self.state = self.task.initial.clone();
        self.rng = self.task.evolution_rng();
        self.reset()
    }

    /// Scores `a` on the current channel, then advances the channel.
    pub fn step(&mut self, a: &ActionVector) -> Result<Step> {
        if !self.in_episode {
            return Err(Error::EpisodeDone);
        }
        let cfg = self.model.config();
        let (w, phase) = decode_action(a, cfg)?;
        let audit = ConstraintAudit::of(&w, &phase, cfg.p_max);
        let report = link::evaluate(&self.state, &w, &phase, self.model.noise_power())?;
        let t = self.state.t;
        self.state = self.model.ar_step(&self.state, &mut self.rng)?;
        self.step_in_episode += 1;
        let done = self.step_in_episode >= self.options.episode_len;
        if done {
            self.in_episode = false;
        }
        Ok(Step {
            obs: self.observe(),
            reward: report.sum_rate,
            done,
            info: StepInfo { report, audit, t },
        })
    }
}

/// Welford running mean / variance for per-feature standardization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunningStandardizer {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningStandardizer {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn update(&mut self, obs: &Observation) {
        self.count += 1;
        let n = self.count as f64;
        for ((mu, m2), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(&obs.0) {
            let d = x - *mu;
            *mu += d / n;
            *m2 += d * (x - *mu);
        }
    }

    pub fn apply(&self, obs: &Observation) -> Observation {
        if self.count < 2 {
            return obs.clone();
        }
        let n = (self.count - 1) as f64;
        Observation(
            obs.0
                .iter()
                .zip(&self.mean)
                .zip(&self.m2)
                .map(|((&x, &mu), &m2)| (x - mu) / ((m2 / n).sqrt() + 1e-8))
                .collect(),
        )
    }
}

/// Streams per-step records as CSV: `task_id,t,reward,tx_power,sinr_1..K`.
pub struct EpisodeLog<W: Write> {
    out: W,
}

impl<W: Write> EpisodeLog<W> {
    pub fn new(mut out: W, k_users: usize) -> Result<Self> {
        let mut header = String::from("task_id,t,reward,tx_power");
        for k in 1..=k_users {
            header.push_str(&format!(",sinr_{k}"));
        }
        writeln!(out, "{header}")?;
        Ok(Self { out })
    }

    pub fn record(&mut self, task_id: u64, step: &Step) -> Result<()> {
        write!(
            self.out,
            "{},{},{},{}",
            task_id, step.info.t, step.reward, step.info.report.tx_power
        )?;
        for s in &step.info.report.sinr {
            write!(self.out, ",{s}")?;
        }
        writeln!(self.out)?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
