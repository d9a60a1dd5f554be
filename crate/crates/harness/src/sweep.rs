//! Evaluation sweeps over held-out AR trajectories.

use std::time::Instant;

use rayon::prelude::*;
use rismeta_agents::trainer::{make_transition, RollingContext};
use rismeta_agents::ActionScaler;
use rismeta_core::baselines::{sfp_policy, zfr_policy};
use rismeta_core::env::{encode_action, make_task_batch_in, EnvOptions, EVAL_NAMESPACE};
use rismeta_core::{ActionVector, Env, Rng, SystemConfig, Task};
use serde::{Deserialize, Serialize};

use crate::spec::{ExperimentSpec, Method};
use crate::train::{Learner, Policies};
use crate::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: Method,
    pub sweep_value: f64,
    /// bits/s/Hz
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    /// Wall-clock per decision; machine dependent, kept out of result CSVs.
    pub ms_per_decision: f64,
}

/// Outcome of one evaluation trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Realization {
    pub mean_rate: f64,
    pub decisions: usize,
    pub violations: usize,
    pub seconds: f64,
}

/// Held-out trajectories for sweep value `value`, one per realization.
pub fn evaluation_tasks(spec: &ExperimentSpec, value: f64) -> Result<Vec<Task>> {
    let system = spec.system_at(value)?;
    Ok(make_task_batch_in(EVAL_NAMESPACE, spec.master_seed, spec.realizations, &system)?)
}

/// A method ready to act on one sweep cell.
enum Actor<'a> {
    Zfr,
    Sfp,
    Ddpg(&'a rismeta_agents::Ddpg),
    Farm(std::borrow::Cow<'a, rismeta_agents::FarmAgent>),
}

impl<'a> Actor<'a> {
    fn new(method: Method, value: f64, policies: &'a Policies) -> Result<Self> {
        let missing = || HarnessError::MissingPolicy {
            method: method.name().into(),
            value,
        };
        Ok(match method {
            Method::Zfr => Actor::Zfr,
            Method::Sfp => Actor::Sfp,
            _ => match (policies.get(method, value).ok_or_else(missing)?, method) {
                (Learner::Ddpg(a), Method::Ddpg) => Actor::Ddpg(a),
                (Learner::Farm(a), Method::FarmNomap) => {
                    let mut a = a.clone();
                    a.set_use_task_map(false);
                    Actor::Farm(std::borrow::Cow::Owned(a))
                }
                (Learner::Farm(a), Method::Farm | Method::Sac) => Actor::Farm(std::borrow::Cow::Borrowed(a)),
                _ => return Err(missing()),
            },
        })
    }

    fn context_len(&self) -> usize {
        match self {
            Actor::Farm(a) => a.config().context_len,
            _ => 1,
        }
    }
}

/// Runs one trajectory of `episode_len` decisions. Learned methods see the
/// path-loss normalized observation; classical ones solve on the raw CSI.
fn run_realization(
    actor: &Actor,
    system: &SystemConfig,
    task: &Task,
    spec: &ExperimentSpec,
    index: usize,
) -> Result<Realization> {
    let options = EnvOptions {
        episode_len: spec.episode_len,
        scale_observations: true,
    };
    let mut env = Env::new(system.clone(), task.clone(), options)?;
    let scaler = ActionScaler::new(system);
    let mut rng = Rng::with_stream(spec.master_seed, EVAL_NAMESPACE | index as u64).derive(0x5a_f0);
    let mut ctx = RollingContext::new(actor.context_len());
    let mut obs = env.reset();
    let (mut total, mut decisions, mut violations, mut seconds) = (0.0, 0usize, 0usize, 0.0);
    loop {
        let clock = Instant::now();
        let (action, raw): (ActionVector, Option<Vec<f64>>) = match actor {
            Actor::Zfr => {
                let (w, phi) = zfr_policy(env.state(), &mut rng, system)?;
                (encode_action(&w, &phi), None)
            }
            Actor::Sfp => {
                let out = sfp_policy(env.state(), &spec.sfp, system)?;
                (encode_action(&out.w, &out.phase), None)
            }
            Actor::Ddpg(a) => {
                let raw = a.act(&obs.0)?;
                (scaler.to_physical(&raw), None)
            }
            Actor::Farm(a) => {
                let raw = a.act_raw(&ctx.as_refs(), &obs)?;
                (scaler.to_physical(&raw), Some(raw))
            }
        };
        seconds += clock.elapsed().as_secs_f64();
        let step = env.step(&action)?;
        total += step.reward;
        decisions += 1;
        if !step.info.audit.ok() {
            violations += 1;
        }
        if let Some(raw) = raw {
            ctx.push(make_transition(task.id, step.info.t, obs, raw, step.reward, step.obs.clone(), step.done));
        }
        obs = step.obs;
        if step.done {
            break;
        }
    }
    Ok(Realization {
        mean_rate: total / decisions as f64,
        decisions,
        violations,
        seconds,
    })
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Evaluates one (method, sweep value) cell. Realizations run in parallel;
/// the reduction follows realization order.
pub fn run_cell(spec: &ExperimentSpec, method: Method, value: f64, policies: &Policies) -> Result<(ResultRow, Vec<Realization>)> {
    let system = spec.system_at(value)?;
    let tasks = evaluation_tasks(spec, value)?;
    let actor = Actor::new(method, value, policies)?;
    let runs = tasks
        .par_iter()
        .enumerate()
        .map(|(i, task)| run_realization(&actor, &system, task, spec, i))
        .collect::<Result<Vec<_>>>()?;
    let violations: usize = runs.iter().map(|r| r.violations).sum();
    if violations > 0 {
        return Err(HarnessError::ConstraintViolation {
            method: method.name().into(),
            count: violations,
        });
    }
    let rates: Vec<f64> = runs.iter().map(|r| r.mean_rate).collect();
    let (mean, std) = mean_std(&rates);
    let decisions: usize = runs.iter().map(|r| r.decisions).sum();
    let seconds: f64 = runs.iter().map(|r| r.seconds).sum();
    Ok((
        ResultRow {
            method,
            sweep_value: value,
            mean,
            std,
            n: runs.len(),
            ms_per_decision: 1e3 * seconds / decisions as f64,
        },
        runs,
    ))
}

/// Every (sweep value, method) cell of `spec`, values outermost.
pub fn run_sweep(spec: &ExperimentSpec, policies: &Policies) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let mut rows = Vec::with_capacity(spec.values.len() * spec.methods.len());
    for &value in &spec.values {
        for &method in &spec.methods {
            rows.push(run_cell(spec, method, value, policies)?.0);
        }
    }
    Ok(rows)
}
