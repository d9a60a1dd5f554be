//! Training the learned methods and loading their checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rismeta_agents::ddpg::DdpgCheckpoint;
use rismeta_agents::farm::{farm_train, FarmCheckpoint};
use rismeta_agents::trainer::{train_ddpg, EpochMetrics};
use rismeta_agents::{Ddpg, FarmAgent};
use rismeta_core::env::{make_task_batch_in, TRAIN_NAMESPACE};
use rismeta_core::Task;
use serde::{Deserialize, Serialize};

use crate::spec::{ExperimentSpec, Method};
use crate::{HarnessError, Result};

#[derive(Debug, Clone)]
pub enum Learner {
    Ddpg(Ddpg),
    Farm(FarmAgent),
}

/// Trained agents keyed by method and sweep value.
#[derive(Debug, Clone, Default)]
pub struct Policies {
    agents: BTreeMap<(Method, u64), Learner>,
}

impl Policies {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, method: Method, value: f64, learner: Learner) {
        self.agents.insert((method, value.to_bits()), learner);
    }

    /// The agent `method` evaluates at `value`.
    pub fn get(&self, method: Method, value: f64) -> Option<&Learner> {
        self.agents.get(&(method.trained_as()?, value.to_bits()))
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    /// Reads every checkpoint the spec's learned methods need from `dir`.
    pub fn load(spec: &ExperimentSpec, dir: &Path) -> Result<Self> {
        let mut out = Self::new();
        for method in spec.learned_methods() {
            for &value in &spec.values {
                let path = checkpoint_path(dir, spec, method, value);
                let text = fs::read_to_string(&path).map_err(|_| HarnessError::MissingCheckpoint {
                    method: method.name().into(),
                    path: path.clone(),
                })?;
                let learner = match method {
                    Method::Ddpg => Learner::Ddpg(Ddpg::from_checkpoint(&serde_json::from_str::<DdpgCheckpoint>(&text)?)?),
                    _ => Learner::Farm(FarmAgent::from_checkpoint(&serde_json::from_str::<FarmCheckpoint>(&text)?)?),
                };
                out.insert(method, value, learner);
            }
        }
        Ok(out)
    }
}

pub fn checkpoint_path(dir: &Path, spec: &ExperimentSpec, method: Method, value: f64) -> PathBuf {
    dir.join(format!("{}_{}_{}.json", method.name(), spec.sweep.name(), value))
}

/// Training tasks for sweep value `value`; their streams live in the
/// training namespace, evaluation trajectories in a disjoint one.
pub fn training_tasks(spec: &ExperimentSpec, value: f64) -> Result<Vec<Task>> {
    let system = spec.system_at(value)?;
    Ok(make_task_batch_in(TRAIN_NAMESPACE, spec.master_seed, spec.training.train_tasks, &system)?)
}

/// Fails if any training task shares a stream with an evaluation task.
pub fn check_disjoint(train: &[Task], eval: &[Task]) -> Result<()> {
    for t in train {
        if eval.iter().any(|e| e.seed == t.seed && e.stream == t.stream) || t.namespace() != TRAIN_NAMESPACE {
            return Err(HarnessError::SeedOverlap);
        }
    }
    Ok(())
}

/// One row of `metrics_<method>.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub sweep_value: f64,
    pub epoch: usize,
    pub train_return: f64,
    pub eval_return: f64,
    pub elbo: Option<f64>,
    pub decoder: Option<f64>,
    pub kl_z: Option<f64>,
    pub kl_y: Option<f64>,
    pub critic_loss: Option<f64>,
    pub policy_loss: Option<f64>,
    pub alpha: Option<f64>,
}

impl MetricsRow {
    fn new(value: f64, m: &EpochMetrics) -> Self {
        Self {
            sweep_value: value,
            epoch: m.epoch,
            train_return: m.train_return,
            eval_return: m.eval_return,
            elbo: m.elbo,
            decoder: m.decoder,
            kl_z: m.kl_z,
            kl_y: m.kl_y,
            critic_loss: m.critic_loss,
            policy_loss: m.policy_loss,
            alpha: m.alpha,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOutput {
    pub policies: Policies,
    pub metrics: BTreeMap<Method, Vec<MetricsRow>>,
}

/// Trains every learned method of `spec` at every sweep value. Progress
/// lines go to `log`.
pub fn train_agents(spec: &ExperimentSpec, log: &mut dyn FnMut(&str)) -> Result<TrainOutput> {
    spec.validate()?;
    let mut out = TrainOutput::default();
    for method in spec.learned_methods() {
        for &value in &spec.values {
            let system = spec.system_at(value)?;
            let tasks = training_tasks(spec, value)?;
            let mut rows = Vec::new();
            let learner = match method {
                Method::Ddpg => {
                    let mut cfg = spec.training.ddpg.clone();
                    cfg.seed = spec.master_seed;
                    let (agent, m) = train_ddpg(&tasks, &system, &cfg)?;
                    rows.extend(m.iter().map(|r| MetricsRow::new(value, r)));
                    Learner::Ddpg(agent)
                }
                _ => {
                    let mut cfg = spec.training.farm.clone();
                    cfg.seed = spec.master_seed;
                    if method == Method::Sac {
                        cfg = cfg.plain_sac();
                    }
                    let mut hook = |r: &EpochMetrics| rows.push(MetricsRow::new(value, r));
                    let (agent, _) = farm_train(&tasks, &system, &cfg, Some(&mut hook))?;
                    Learner::Farm(agent)
                }
            };
            if let Some(last) = rows.last() {
                log(&format!(
                    "{} {}={} epochs={} last eval return {:.4}",
                    method.name(),
                    spec.sweep.name(),
                    value,
                    rows.len(),
                    last.eval_return
                ));
            }
            out.metrics.entry(method).or_default().extend(rows);
            out.policies.insert(method, value, learner);
        }
    }
    Ok(out)
}

/// Writes checkpoints and per-method metrics CSVs into `dir`.
pub fn write_training(spec: &ExperimentSpec, out: &TrainOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (&(method, bits), learner) in &out.policies.agents {
        let path = checkpoint_path(dir, spec, method, f64::from_bits(bits));
        let text = match learner {
            Learner::Ddpg(a) => serde_json::to_string(&a.to_checkpoint())?,
            Learner::Farm(a) => serde_json::to_string(&a.to_checkpoint())?,
        };
        fs::write(&path, text)?;
        written.push(path);
    }
    for (method, rows) in &out.metrics {
        let path = dir.join(format!("metrics_{}.csv", method.name()));
        fs::write(&path, metrics_csv(rows)?)?;
        written.push(path);
    }
    Ok(written)
}

pub fn metrics_csv(rows: &[MetricsRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
