//! The task-inference meta-agent: a SAC policy conditioned on task
//! encodings `z` inferred from recent transitions, plus a task map that
//! snaps unseen encodings onto ones stored during training.
//!
//! One training epoch:
//! 1. rollout: every task collects episodes, acting on `[s, z]` with `z`
//!    inferred from that task's most recent buffered transitions;
//! 2. representation: ELBO steps on contexts and targets sampled per task;
//! 3. relabel: buffered transitions get a fresh `(y, z)` from the updated
//!    encoder, computed on the window of transitions preceding each one;
//! 4. policy: SAC updates on relabeled transitions.
//!
//! After the last epoch each task's mean evaluation-mode encoding is stored
//! in the task map.

use ndarray::Array2;
use rismeta_core::env::TaskAnnotation;
use rismeta_core::{ActionVector, Observation, Rng, SystemConfig, Task, Transition};
use serde::{Deserialize, Serialize};

use crate::buffer::ReplayBuffer;
use crate::decoder::{DecoderCheckpoint, DecoderConfig, DecoderNets};
use crate::elbo::{draw_eps, elbo_loss, ElboTask, ElboTerms};
use crate::encoder::{transition_row, EncoderCheckpoint, EncoderConfig, EncoderNets, InferMode, TaskEncoding};
use crate::neural::{Adam, AdamConfig, Parameterized};
use crate::sac::{Sac, SacCheckpoint, SacConfig, SacLosses};
use crate::scaling::ActionScaler;
use crate::trainer::{
    actor_critic_batch, ensure_finite, make_envs, make_transition, mean, run_episode, uniform_action, with_episode_len,
    EpochMetrics, RollingContext,
};
use crate::{AgentError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMapEntry {
    pub label: u64,
    pub z: Vec<f64>,
}

/// Stored task encodings with nearest-neighbour lookup.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TaskMap {
    entries: Vec<TaskMapEntry>,
}

impl TaskMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[TaskMapEntry] {
        &self.entries
    }

    pub fn store(&mut self, label: u64, z: Vec<f64>) -> Result<()> {
        if z.iter().any(|v| !v.is_finite()) {
            return Err(AgentError::Shape("task encoding is not finite".into()));
        }
        if let Some(first) = self.entries.first() {
            if first.z.len() != z.len() {
                return Err(AgentError::Shape(format!(
                    "encoding of length {} in a map of length {}",
                    z.len(),
                    first.z.len()
                )));
            }
        }
        self.entries.push(TaskMapEntry { label, z });
        Ok(())
    }

    /// Index and Euclidean distance of the nearest entry; the earliest
    /// inserted entry wins ties.
    pub fn nearest(&self, query: &[f64]) -> Result<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, e) in self.entries.iter().enumerate() {
            if e.z.len() != query.len() {
                return Err(AgentError::Shape(format!("query of length {} for entries of length {}", query.len(), e.z.len())));
            }
            let d2: f64 = e.z.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
            if best.map_or(true, |(_, b)| d2 < b) {
                best = Some((i, d2));
            }
        }
        best.map(|(i, d2)| (i, d2.sqrt())).ok_or(AgentError::EmptyTaskMap)
    }

    pub fn lookup(&self, query: &[f64]) -> Result<&TaskMapEntry> {
        Ok(&self.entries[self.nearest(query)?.0])
    }

    /// Mean of the stored encodings.
    pub fn centroid(&self) -> Option<Vec<f64>> {
        let first = self.entries.first()?;
        let mut c = vec![0.0; first.z.len()];
        for e in &self.entries {
            for (acc, v) in c.iter_mut().zip(&e.z) {
                *acc += v;
            }
        }
        let n = self.entries.len() as f64;
        Some(c.into_iter().map(|v| v / n).collect())
    }
}

pub fn task_map_store(map: &mut TaskMap, label: u64, z: Vec<f64>) -> Result<()> {
    map.store(label, z)
}

pub fn task_map_lookup<'a>(map: &'a TaskMap, query: &[f64]) -> Result<&'a [f64]> {
    Ok(&map.lookup(query)?.z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FarmConfig {
    /// `J`
    pub components: usize,
    /// `L`
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub embed_dim: usize,
    pub decoder_hidden: Vec<usize>,
    /// Transitions per context window.
    pub context_len: usize,
    /// Shorter contexts fall back to the task map's centroid at test time.
    pub min_context: usize,
    pub alpha_kl: f64,
    pub beta_kl: f64,
    /// Shared encoder / decoder learning rate.
    pub repr_lr: f64,
    pub sac: SacConfig,
    pub epochs: usize,
    pub episodes_per_task: usize,
    pub episode_len: usize,
    pub elbo_steps: usize,
    /// Tasks per ELBO step.
    pub elbo_tasks: usize,
    /// Decoder targets per task per ELBO step.
    pub elbo_batch: usize,
    pub sac_steps: usize,
    pub buffer_capacity: usize,
    /// Relabel only the most recent transitions; `None` = whole buffer.
    pub relabel_window: Option<usize>,
    pub warmup_epochs: usize,
    pub eval_len: usize,
    pub use_task_map: bool,
    /// Snap to the nearest stored encoding only within this distance;
    /// `None` always snaps.
    pub map_radius: Option<f64>,
    pub seed: u64,
}

impl Default for FarmConfig {
    fn default() -> Self {
        Self {
            components: 8,
            latent_dim: 8,
            encoder_hidden: vec![256],
            embed_dim: 64,
            decoder_hidden: vec![256, 256],
            context_len: 32,
            min_context: 1,
            alpha_kl: 0.1,
            beta_kl: 0.1,
            repr_lr: 3e-4,
            sac: SacConfig::default(),
            epochs: 50,
            episodes_per_task: 1,
            episode_len: 100,
            elbo_steps: 50,
            elbo_tasks: 8,
            elbo_batch: 32,
            sac_steps: 400,
            buffer_capacity: 100_000,
            relabel_window: None,
            warmup_epochs: 1,
            eval_len: 100,
            use_task_map: true,
            map_radius: None,
            seed: 0,
        }
    }
}

impl FarmConfig {
    /// Single component, empty latent: plain SAC on `s` through the same
    /// code path.
    pub fn plain_sac(mut self) -> Self {
        self.components = 1;
        self.latent_dim = 0;
        self.elbo_steps = 0;
        self.use_task_map = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.sac.validate()?;
        let ok = self.components >= 1
            && self.embed_dim >= 1
            && self.context_len >= 1
            && self.episode_len >= 1
            && self.buffer_capacity >= 1
            && self.elbo_tasks >= 1
            && self.elbo_batch >= 1
            && self.alpha_kl >= 0.0
            && self.beta_kl >= 0.0
            && self.repr_lr > 0.0
            && self.map_radius.map_or(true, |r| r >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(AgentError::Config(format!("invalid meta-agent settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct FarmAgent {
    config: FarmConfig,
    system: SystemConfig,
    scaler: ActionScaler,
    encoder: EncoderNets,
    decoder: DecoderNets,
    sac: Sac,
    task_map: TaskMap,
    encoder_version: u64,
}

impl FarmAgent {
    pub fn new(system: &SystemConfig, config: FarmConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        system.validate()?;
        let scaler = ActionScaler::new(system);
        let obs_dim = rismeta_core::env::observation_dim(system);
        let encoder = EncoderNets::new(
            EncoderConfig {
                obs_dim,
                action_dim: scaler.dim,
                components: config.components,
                latent_dim: config.latent_dim,
                hidden: config.encoder_hidden.clone(),
                embed_dim: config.embed_dim,
            },
            rng,
        )?;
        let decoder = DecoderNets::new(
            DecoderConfig {
                obs_dim,
                action_dim: scaler.dim,
                latent_dim: config.latent_dim,
                hidden: config.decoder_hidden.clone(),
            },
            rng,
        )?;
        let sac = Sac::new(obs_dim + config.latent_dim, scaler.dim, config.sac.clone(), rng)?;
        Ok(Self {
            config,
            system: system.clone(),
            scaler,
            encoder,
            decoder,
            sac,
            task_map: TaskMap::new(),
            encoder_version: 0,
        })
    }

    pub fn config(&self) -> &FarmConfig {
        &self.config
    }

    pub fn system(&self) -> &SystemConfig {
        &self.system
    }

    pub fn scaler(&self) -> &ActionScaler {
        &self.scaler
    }

    pub fn encoder(&self) -> &EncoderNets {
        &self.encoder
    }

    pub fn sac(&self) -> &Sac {
        &self.sac
    }

    pub fn task_map(&self) -> &TaskMap {
        &self.task_map
    }

    pub fn encoder_version(&self) -> u64 {
        self.encoder_version
    }

    pub fn set_use_task_map(&mut self, on: bool) {
        self.config.use_task_map = on;
    }

    /// `[s, z]`.
    pub fn conditioning_input(&self, s: &Observation, z: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(s.0.len() + z.len());
        x.extend_from_slice(&s.0);
        x.extend_from_slice(z);
        x
    }

    fn prior_z(&self) -> Vec<f64> {
        vec![0.0; self.config.latent_dim]
    }

    /// The encoding the deterministic policy conditions on for `context`:
    /// evaluation-mode inference, then the task map when enabled. Contexts
    /// shorter than `min_context` use the map centroid.
    pub fn test_time_encoding(&self, context: &[&Transition]) -> Result<Vec<f64>> {
        if context.len() < self.config.min_context || context.is_empty() {
            return Ok(self.task_map.centroid().unwrap_or_else(|| self.prior_z()));
        }
        // eval mode never draws from the rng
        let (enc, _) = self.encoder.infer(context, InferMode::Eval, &mut Rng::new(0))?;
        if self.config.use_task_map && !self.task_map.is_empty() {
            let (i, d) = self.task_map.nearest(&enc.z)?;
            if self.config.map_radius.map_or(true, |r| d <= r) {
                return Ok(self.task_map.entries()[i].z.clone());
            }
        }
        Ok(enc.z)
    }

    /// Policy output in (−1, 1) for observation `s` given recent transitions.
    pub fn act_raw(&self, context: &[&Transition], s: &Observation) -> Result<Vec<f64>> {
        let z = self.test_time_encoding(context)?;
        self.sac.act_mean(&self.conditioning_input(s, &z))
    }

    /// Zero-shot action: no parameter is written.
    pub fn act(&self, context: &[&Transition], s: &Observation) -> Result<ActionVector> {
        Ok(self.scaler.to_physical(&self.act_raw(context, s)?))
    }

    /// Digest of every trainable parameter.
    pub fn checksum(&self) -> u64 {
        self.encoder.checksum().rotate_left(21) ^ self.decoder.checksum().rotate_left(42) ^ self.sac.checksum()
    }

    /// Mean evaluation-mode encoding over consecutive `context_len` windows
    /// of `transitions` (oldest first).
    pub fn mean_encoding(&self, transitions: &[&Transition]) -> Result<Vec<f64>> {
        if transitions.is_empty() {
            return Err(AgentError::EmptyContext);
        }
        let mut acc = vec![0.0; self.config.latent_dim];
        let mut count = 0.0;
        for window in transitions.chunks(self.config.context_len) {
            let (enc, _) = self.encoder.infer(window, InferMode::Eval, &mut Rng::new(0))?;
            for (a, v) in acc.iter_mut().zip(&enc.z) {
                *a += v;
            }
            count += 1.0;
        }
        Ok(acc.into_iter().map(|v| v / count).collect())
    }

    pub fn to_checkpoint(&self) -> FarmCheckpoint {
        FarmCheckpoint {
            config: self.config.clone(),
            system: self.system.clone(),
            encoder: self.encoder.to_checkpoint(),
            decoder: self.decoder.to_checkpoint(),
            sac: self.sac.to_checkpoint(),
            task_map: self.task_map.clone(),
            encoder_version: self.encoder_version,
        }
    }

    pub fn from_checkpoint(ck: &FarmCheckpoint) -> Result<Self> {
        ck.config.validate()?;
        ck.system.validate()?;
        let scaler = ActionScaler::new(&ck.system);
        let obs_dim = rismeta_core::env::observation_dim(&ck.system);
        let encoder = EncoderNets::from_checkpoint(&ck.encoder)?;
        let decoder = DecoderNets::from_checkpoint(&ck.decoder)?;
        let sac = Sac::from_checkpoint(&ck.sac)?;
        let l = ck.config.latent_dim;
        let ec = encoder.config();
        let consistent = ec.obs_dim == obs_dim
            && ec.action_dim == scaler.dim
            && ec.latent_dim == l
            && ec.components == ck.config.components
            && decoder.config().latent_dim == l
            && decoder.config().obs_dim == obs_dim
            && sac.input_dim() == obs_dim + l
            && sac.action_dim() == scaler.dim
            && ck.task_map.entries().iter().all(|e| e.z.len() == l && e.z.iter().all(|v| v.is_finite()));
        if !consistent {
            return Err(AgentError::Checkpoint("meta-agent parts disagree on dimensions".into()));
        }
        Ok(Self {
            config: ck.config.clone(),
            system: ck.system.clone(),
            scaler,
            encoder,
            decoder,
            sac,
            task_map: ck.task_map.clone(),
            encoder_version: ck.encoder_version,
        })
    }

    /// Deterministic zero-shot evaluation on copies of `envs`.
    pub fn evaluate(&self, envs: &[rismeta_core::Env], steps: usize) -> Result<f64> {
        let mut returns = Vec::with_capacity(envs.len());
        for env in envs {
            let mut env = with_episode_len(env, steps)?;
            let r = run_episode(&mut env, &self.scaler, self.config.context_len, |obs, ctx: &RollingContext| {
                self.act_raw(&ctx.as_refs(), obs)
            })?;
            returns.push(r);
        }
        Ok(mean(&returns))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FarmCheckpoint {
    pub config: FarmConfig,
    pub system: SystemConfig,
    pub encoder: EncoderCheckpoint,
    pub decoder: DecoderCheckpoint,
    pub sac: SacCheckpoint,
    pub task_map: TaskMap,
    pub encoder_version: u64,
}

/// `farm_act` as a free function.
pub fn farm_act(agent: &FarmAgent, context: &[&Transition], s: &Observation) -> Result<ActionVector> {
    agent.act(context, s)
}

/// Training-time state that is not part of the agent.
struct Trainer {
    agent: FarmAgent,
    enc_opt: Adam,
    dec_opt: Adam,
    buf: ReplayBuffer,
    /// Slots whose annotation matches the current encoder version.
    fresh: Vec<usize>,
}

impl Trainer {
    /// `(y, z)` for acting in task `task_id` right now: the encoder applied
    /// to the task's most recent buffered transitions, or the prior mean
    /// before any exist.
    fn rollout_encoding(&self, task_id: u64, rng: &mut Rng) -> Result<TaskEncoding> {
        let l = self.agent.config.latent_dim;
        if l == 0 && self.agent.config.components == 1 {
            return Ok(TaskEncoding { y: 1, z: Vec::new() });
        }
        match self.buf.context_sample(task_id, self.agent.config.context_len) {
            Ok(ctx) if !ctx.is_empty() => Ok(self.agent.encoder.infer(&ctx, InferMode::Train, rng)?.0),
            _ => Ok(TaskEncoding { y: 1, z: vec![0.0; l] }),
        }
    }

    fn rollout(&mut self, envs: &mut [rismeta_core::Env], epoch: usize, rng: &mut Rng) -> Result<f64> {
        let cfg = self.agent.config.clone();
        let mut rewards = Vec::new();
        for env in envs.iter_mut() {
            let task_id = env.task().id;
            for _ in 0..cfg.episodes_per_task {
                let mut obs = env.reset();
                loop {
                    let enc = self.rollout_encoding(task_id, rng)?;
                    let raw = if epoch < cfg.warmup_epochs {
                        uniform_action(self.agent.scaler.dim, rng)
                    } else {
                        let x = self.agent.conditioning_input(&obs, &enc.z);
                        self.agent.sac.act_sample(&x, rng)?
                    };
                    let step = env.step(&self.agent.scaler.to_physical(&raw))?;
                    rewards.push(step.reward);
                    let mut tr = make_transition(task_id, step.info.t, obs, raw, step.reward, step.obs.clone(), step.done);
                    tr.annotation = Some(TaskAnnotation {
                        y: enc.y,
                        z: enc.z,
                        encoder_version: self.agent.encoder_version,
                    });
                    self.buf.add(tr);
                    obs = step.obs;
                    if step.done {
                        break;
                    }
                }
            }
        }
        Ok(mean(&rewards))
    }

    fn representation(&mut self, epoch: usize, rng: &mut Rng) -> Result<Option<ElboTerms>> {
        let cfg = self.agent.config.clone();
        if cfg.elbo_steps == 0 {
            return Ok(None);
        }
        let tasks: Vec<u64> = self.buf.task_ids().collect();
        let mut acc = ElboTerms::default();
        for _ in 0..cfg.elbo_steps {
            let mut batch = Vec::with_capacity(cfg.elbo_tasks);
            for _ in 0..cfg.elbo_tasks {
                let task = tasks[rng.below(tasks.len())];
                let slots = self.buf.task_slots(task)?;
                // a random run of consecutive transitions as the context
                let len = cfg.context_len.min(slots.len());
                let start = rng.below(slots.len() - len + 1);
                let context: Vec<&Transition> = (start..start + len).map(|i| self.buf.get(slots[i]).unwrap()).collect();
                let targets: Vec<&Transition> = self
                    .buf
                    .sample_task_slots(task, cfg.elbo_batch, rng)?
                    .into_iter()
                    .map(|s| self.buf.get(s).unwrap())
                    .collect();
                batch.push(ElboTask { context, targets });
            }
            let eps = draw_eps(rng, batch.len(), cfg.components, cfg.latent_dim);
            let terms = elbo_loss(&mut self.agent.encoder, &mut self.agent.decoder, &batch, cfg.alpha_kl, cfg.beta_kl, &eps)?;
            ensure_finite(&[("elbo", terms.elbo), ("decoder loss", terms.decoder)], epoch)?;
            self.enc_opt.step(&mut self.agent.encoder);
            self.dec_opt.step(&mut self.agent.decoder);
            let n = cfg.elbo_steps as f64;
            acc.elbo += terms.elbo / n;
            acc.decoder += terms.decoder / n;
            acc.kl_z += terms.kl_z / n;
            acc.kl_y += terms.kl_y / n;
        }
        self.agent.encoder_version += 1;
        Ok(Some(acc))
    }

    /// Re-annotates buffered transitions with the current encoder. Each
    /// transition's context is the `context_len` transitions of its task that
    /// precede it (itself, for a task's very first transition).
    fn relabel(&mut self, rng: &mut Rng) -> Result<()> {
        let cfg = &self.agent.config;
        let version = self.agent.encoder_version;
        let in_scope: Option<std::collections::BTreeSet<usize>> = cfg.relabel_window.map(|w| {
            let all: Vec<usize> = self.buf.chronological_slots().collect();
            all[all.len().saturating_sub(w)..].iter().copied().collect()
        });
        let trivial = cfg.latent_dim == 0 && cfg.components == 1;
        let width = self.agent.encoder.config().transition_width();
        let c = cfg.context_len;
        let tasks: Vec<u64> = self.buf.task_ids().collect();
        for task in tasks {
            let slots: Vec<usize> = self.buf.task_slots(task)?.iter().copied().collect();
            let encodings: Vec<TaskEncoding> = if trivial {
                vec![TaskEncoding { y: 1, z: Vec::new() }; slots.len()]
            } else {
                let mut rows = Vec::with_capacity(slots.len() * width);
                for &s in &slots {
                    transition_row(self.buf.get(s).unwrap(), &mut rows);
                }
                let rows = Array2::from_shape_vec((slots.len(), width), rows).expect("sized above");
                let emb = self.agent.encoder.embed_rows(&rows)?;
                // prefix sums turn every sliding-window mean into O(1) work
                let e = emb.ncols();
                let mut prefix = Array2::<f64>::zeros((slots.len() + 1, e));
                for i in 0..slots.len() {
                    let next = &prefix.row(i) + &emb.row(i);
                    prefix.row_mut(i + 1).assign(&next);
                }
                let mut pooled = Array2::zeros((slots.len(), e));
                for k in 0..slots.len() {
                    let (lo, hi) = if k == 0 { (0, 1) } else { (k.saturating_sub(c), k) };
                    let m = (&prefix.row(hi) - &prefix.row(lo)) / (hi - lo) as f64;
                    pooled.row_mut(k).assign(&m);
                }
                self.agent
                    .encoder
                    .head_from_pooled(&pooled)?
                    .iter()
                    .map(|o| o.encoding(InferMode::Train, rng))
                    .collect()
            };
            for (&slot, enc) in slots.iter().zip(encodings) {
                if in_scope.as_ref().map_or(true, |s| s.contains(&slot)) {
                    let tr = self.buf.get_mut(slot).unwrap();
                    tr.annotation = Some(TaskAnnotation {
                        y: enc.y,
                        z: enc.z,
                        encoder_version: version,
                    });
                }
            }
        }
        self.fresh = self
            .buf
            .chronological_slots()
            .filter(|&s| {
                self.buf.get(s).unwrap().annotation.as_ref().map(|a| a.encoder_version) == Some(version)
            })
            .collect();
        Ok(())
    }

    fn policy(&mut self, epoch: usize, rng: &mut Rng) -> Result<Option<SacLosses>> {
        let cfg = self.agent.config.clone();
        if cfg.sac_steps == 0 || self.fresh.is_empty() {
            return Ok(None);
        }
        let mut acc = SacLosses::default();
        let n = cfg.sac_steps as f64;
        for _ in 0..cfg.sac_steps {
            let slots: Vec<usize> = (0..cfg.sac.batch_size).map(|_| self.fresh[rng.below(self.fresh.len())]).collect();
            let batch = actor_critic_batch(&self.buf, &slots, |tr| {
                tr.annotation.as_ref().map(|a| a.z.clone()).unwrap_or_default()
            })?;
            let l = self.agent.sac.update(&batch, rng)?;
            ensure_finite(&[("critic loss", l.q1), ("critic loss", l.q2), ("policy loss", l.policy)], epoch)?;
            acc.q1 += l.q1 / n;
            acc.q2 += l.q2 / n;
            acc.policy += l.policy / n;
            acc.alpha_value = l.alpha_value;
            acc.entropy += l.entropy / n;
        }
        Ok(Some(acc))
    }

    fn populate_task_map(&mut self) -> Result<()> {
        let mut map = TaskMap::new();
        let tasks: Vec<u64> = self.buf.task_ids().collect();
        for task in tasks {
            let trs: Vec<&Transition> = self.buf.task_slots(task)?.iter().map(|&s| self.buf.get(s).unwrap()).collect();
            map.store(task, self.agent.mean_encoding(&trs)?)?;
        }
        self.agent.task_map = map;
        Ok(())
    }
}

/// Observer hook called after each epoch.
pub type EpochHook<'a> = &'a mut dyn FnMut(&EpochMetrics);

/// Trains the meta-agent on `tasks` (each env evolves with its task's `ρ`).
pub fn farm_train(
    tasks: &[Task],
    system: &SystemConfig,
    config: &FarmConfig,
    mut hook: Option<EpochHook>,
) -> Result<(FarmAgent, Vec<EpochMetrics>)> {
    if tasks.is_empty() {
        return Err(AgentError::Config("training needs at least one task".into()));
    }
    let root = Rng::new(config.seed);
    let mut init_rng = root.derive(1);
    let mut rollout_rng = root.derive(2);
    let mut repr_rng = root.derive(3);
    let mut relabel_rng = root.derive(4);
    let mut policy_rng = root.derive(5);
    let agent = FarmAgent::new(system, config.clone(), &mut init_rng)?;
    let mut envs = make_envs(system, tasks, config.episode_len)?;
    let mut trainer = Trainer {
        enc_opt: Adam::new(&agent.encoder, AdamConfig::with_lr(config.repr_lr)),
        dec_opt: Adam::new(&agent.decoder, AdamConfig::with_lr(config.repr_lr)),
        buf: ReplayBuffer::new(config.buffer_capacity)?,
        fresh: Vec::new(),
        agent,
    };
    let mut metrics = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let train_return = trainer.rollout(&mut envs, epoch, &mut rollout_rng)?;
        let repr = trainer.representation(epoch, &mut repr_rng)?;
        trainer.relabel(&mut relabel_rng)?;
        let pol = trainer.policy(epoch, &mut policy_rng)?;
        let eval_return = if config.eval_len > 0 {
            // evaluate without the map: it is only populated at the end
            let mut probe = trainer.agent.clone();
            probe.config.use_task_map = false;
            probe.evaluate(&envs, config.eval_len)?
        } else {
            0.0
        };
        let row = EpochMetrics {
            epoch,
            train_return,
            eval_return,
            elbo: repr.map(|r| r.elbo),
            decoder: repr.map(|r| r.decoder),
            kl_z: repr.map(|r| r.kl_z),
            kl_y: repr.map(|r| r.kl_y),
            critic_loss: pol.map(|p| 0.5 * (p.q1 + p.q2)),
            policy_loss: pol.map(|p| p.policy),
            alpha: pol.map(|p| p.alpha_value),
        };
        if let Some(h) = hook.as_mut() {
            h(&row);
        }
        metrics.push(row);
    }
    trainer.populate_task_map()?;
    Ok((trainer.agent, metrics))
}

/// Euclidean distance between two encodings.
pub fn encoding_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean pairwise distances between evaluation-mode encodings of contexts
/// from the same task (`intra`) and from different tasks (`inter`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    pub intra: f64,
    pub inter: f64,
    /// `encodings[task][context]`
    pub encodings: Vec<Vec<Vec<f64>>>,
}

/// Encodes `contexts` fresh windows per environment. Each window is
/// `context_len` steps of the stochastic policy on a copy of the env,
/// conditioned on the encoding of the window collected so far.
pub fn encoder_separation(agent: &FarmAgent, envs: &[rismeta_core::Env], contexts: usize, rng: &mut Rng) -> Result<Separation> {
    let len = agent.config.context_len;
    let mut encodings = Vec::with_capacity(envs.len());
    for env in envs {
        let mut per_task = Vec::with_capacity(contexts);
        for _ in 0..contexts {
            let mut env = with_episode_len(env, len)?;
            let mut ctx = RollingContext::new(len);
            let mut obs = env.reset();
            loop {
                let z = agent.test_time_encoding(&ctx.as_refs())?;
                let raw = agent.sac.act_sample(&agent.conditioning_input(&obs, &z), rng)?;
                let step = env.step(&agent.scaler.to_physical(&raw))?;
                ctx.push(make_transition(env.task().id, step.info.t, obs, raw, step.reward, step.obs.clone(), step.done));
                obs = step.obs;
                if step.done {
                    break;
                }
            }
            let (enc, _) = agent.encoder.infer(&ctx.as_refs(), InferMode::Eval, rng)?;
            per_task.push(enc.z);
        }
        encodings.push(per_task);
    }
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0usize, 0.0, 0usize);
    for (a, ta) in encodings.iter().enumerate() {
        for (b, tb) in encodings.iter().enumerate().skip(a) {
            for (i, za) in ta.iter().enumerate() {
                for (j, zb) in tb.iter().enumerate() {
                    if a == b && j <= i {
                        continue;
                    }
                    let d = encoding_distance(za, zb);
                    if a == b {
                        intra += d;
                        n_intra += 1;
                    } else {
                        inter += d;
                        n_inter += 1;
                    }
                }
            }
        }
    }
    Ok(Separation {
        intra: intra / n_intra.max(1) as f64,
        inter: inter / n_inter.max(1) as f64,
        encodings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rismeta_core::env::make_task_batch;

    fn tiny() -> FarmConfig {
        FarmConfig {
            components: 2,
            latent_dim: 2,
            encoder_hidden: vec![16],
            embed_dim: 8,
            decoder_hidden: vec![16],
            context_len: 4,
            sac: SacConfig {
                hidden: vec![16],
                batch_size: 8,
                ..SacConfig::default()
            },
            epochs: 2,
            episode_len: 6,
            elbo_steps: 2,
            elbo_tasks: 2,
            elbo_batch: 4,
            sac_steps: 2,
            eval_len: 3,
            ..FarmConfig::default()
        }
    }

    fn trainer(cfg: FarmConfig) -> (Trainer, Vec<rismeta_core::Env>) {
        let system = SystemConfig::desk(3);
        let tasks = make_task_batch(3, 2, &system).unwrap();
        let agent = FarmAgent::new(&system, cfg.clone(), &mut Rng::new(1)).unwrap();
        let envs = make_envs(&system, &tasks, cfg.episode_len).unwrap();
        let t = Trainer {
            enc_opt: Adam::new(&agent.encoder, AdamConfig::with_lr(cfg.repr_lr)),
            dec_opt: Adam::new(&agent.decoder, AdamConfig::with_lr(cfg.repr_lr)),
            buf: ReplayBuffer::new(cfg.buffer_capacity).unwrap(),
            fresh: Vec::new(),
            agent,
        };
        (t, envs)
    }

    #[test]
    fn relabel_stamps_current_version_on_every_fresh_slot() {
        let (mut t, mut envs) = trainer(tiny());
        let mut rng = Rng::new(9);
        for epoch in 0..3 {
            t.rollout(&mut envs, epoch, &mut rng).unwrap();
            t.representation(epoch, &mut rng).unwrap();
            t.relabel(&mut rng).unwrap();
            let v = t.agent.encoder_version;
            assert_eq!(v, epoch as u64 + 1);
            assert_eq!(t.fresh.len(), t.buf.len());
            for &s in &t.fresh {
                let a = t.buf.get(s).unwrap().annotation.as_ref().unwrap();
                assert_eq!(a.encoder_version, v);
                assert_eq!(a.z.len(), 2);
                assert!((1..=2).contains(&a.y));
            }
        }
    }

    #[test]
    fn relabel_window_limits_fresh_slots() {
        let (mut t, mut envs) = trainer(FarmConfig {
            relabel_window: Some(5),
            ..tiny()
        });
        let mut rng = Rng::new(9);
        for epoch in 0..2 {
            t.rollout(&mut envs, epoch, &mut rng).unwrap();
            t.representation(epoch, &mut rng).unwrap();
            t.relabel(&mut rng).unwrap();
        }
        let newest: Vec<usize> = t.buf.chronological_slots().collect();
        assert_eq!(t.fresh, newest[newest.len() - 5..].to_vec());
        // the rest keep an older stamp
        let stale = t.buf.get(newest[0]).unwrap().annotation.as_ref().unwrap().encoder_version;
        assert!(stale < t.agent.encoder_version);
    }

    #[test]
    fn non_finite_loss_aborts_with_epoch() {
        let system = SystemConfig::desk(3);
        let tasks = make_task_batch(3, 2, &system).unwrap();
        let mut cfg = tiny();
        cfg.sac.reward_scale = 1e300;
        cfg.warmup_epochs = 0;
        match farm_train(&tasks, &system, &cfg, None) {
            Err(AgentError::Diverged { epoch, .. }) => assert_eq!(epoch, 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn task_map_ties_go_to_the_earlier_entry() {
        let mut map = TaskMap::new();
        map.store(1, vec![1.0, 0.0]).unwrap();
        map.store(2, vec![-1.0, 0.0]).unwrap();
        assert_eq!(map.lookup(&[0.0, 0.0]).unwrap().label, 1);
    }
}
