//! Evidence lower bound of the task-inference model and its gradients.
//!
//! For one task with context `c` and decoder targets `τ`:
//!
//! ```text
//! ELBO = Σ_j q(y=j|c) · [−D(τ; z_j) − α_KL · KL(q(z|c,y=j) ‖ N(0, I))]
//!        − β_KL · KL(q(y|c) ‖ Uniform(J))
//! ```
//!
//! where `z_j = μ_j + exp(½ logvar_j) ⊙ ε_j` and `D` is the batch-mean
//! decoder squared error. Over several tasks the ELBO is averaged.

use ndarray::Array2;
use rismeta_core::{Rng, Transition};

use crate::decoder::{DecoderNets, DecoderPass};
use crate::encoder::{ContextBatch, EncoderGrad, EncoderNets, EncoderOutput};
use crate::neural::stack_rows;
use crate::{AgentError, Result};

/// `KL(N(μ, diag e^{lv}) ‖ N(0, I))`.
pub fn kl_diag_standard(mean: &[f64], logvar: &[f64]) -> f64 {
    mean.iter()
        .zip(logvar)
        .map(|(&m, &lv)| 0.5 * (m * m + lv.exp() - lv - 1.0))
        .sum()
}

/// `KL(q ‖ Uniform)` over `q.len()` categories.
pub fn kl_categorical_uniform(q: &[f64]) -> f64 {
    let j = q.len() as f64;
    q.iter().filter(|&&p| p > 0.0).map(|&p| p * (p * j).ln()).sum()
}

/// One task's contribution: a context for the encoder and transitions the
/// decoder must explain.
#[derive(Debug, Clone)]
pub struct ElboTask<'a> {
    pub context: Vec<&'a Transition>,
    pub targets: Vec<&'a Transition>,
}

/// Task-averaged terms. `decoder` and `kl_z` are posterior-weighted.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ElboTerms {
    pub elbo: f64,
    pub decoder: f64,
    pub kl_z: f64,
    pub kl_y: f64,
}

/// Standard-normal noise for every (task, component, latent dim).
pub fn draw_eps(rng: &mut Rng, tasks: usize, components: usize, latent: usize) -> Vec<Vec<Vec<f64>>> {
    (0..tasks)
        .map(|_| (0..components).map(|_| (0..latent).map(|_| rng.normal()).collect()).collect())
        .collect()
}

struct Stacked {
    s: Array2<f64>,
    a: Array2<f64>,
    z: Array2<f64>,
    s_next: Array2<f64>,
    r: Vec<f64>,
    /// (task, component, first row, row count)
    blocks: Vec<(usize, usize, usize, usize)>,
}

fn sample_z(out: &EncoderOutput, j: usize, eps: &[f64]) -> Vec<f64> {
    out.means[j]
        .iter()
        .zip(&out.logvars[j])
        .zip(eps)
        .map(|((&m, &lv), &e)| m + (0.5 * lv).exp() * e)
        .collect()
}

fn stack(tasks: &[ElboTask], outs: &[EncoderOutput], eps: &[Vec<Vec<f64>>], obs: usize, act: usize) -> Result<Stacked> {
    let mut s = Vec::new();
    let mut a = Vec::new();
    let mut z = Vec::new();
    let mut s_next = Vec::new();
    let mut r = Vec::new();
    let mut blocks = Vec::new();
    let mut row = 0;
    for (i, task) in tasks.iter().enumerate() {
        if task.targets.is_empty() {
            return Err(AgentError::EmptyContext);
        }
        for j in 0..outs[i].probs.len() {
            let zj = sample_z(&outs[i], j, &eps[i][j]);
            for tr in &task.targets {
                s.push(tr.s.0.as_slice());
                a.push(tr.a.0.as_slice());
                s_next.push(tr.s_next.0.as_slice());
                r.push(tr.r);
                z.push(zj.clone());
            }
            blocks.push((i, j, row, task.targets.len()));
            row += task.targets.len();
        }
    }
    let latent = outs.first().map_or(0, |o| o.means.first().map_or(0, |m| m.len()));
    Ok(Stacked {
        s: stack_rows(&s, obs)?,
        a: stack_rows(&a, act)?,
        z: stack_rows(&z, latent)?,
        s_next: stack_rows(&s_next, obs)?,
        r,
        blocks,
    })
}

fn check_eps(tasks: &[ElboTask], eps: &[Vec<Vec<f64>>], components: usize, latent: usize) -> Result<()> {
    let ok = eps.len() == tasks.len()
        && eps.iter().all(|e| e.len() == components && e.iter().all(|v| v.len() == latent));
    if ok {
        Ok(())
    } else {
        Err(AgentError::Shape("noise does not match tasks × J × L".into()))
    }
}

fn terms(outs: &[EncoderOutput], pass: &DecoderPass, st: &Stacked, alpha_kl: f64, beta_kl: f64) -> (ElboTerms, Vec<Vec<f64>>) {
    let t = outs.len() as f64;
    let mut d = vec![vec![0.0; outs[0].probs.len()]; outs.len()];
    for &(i, j, start, len) in &st.blocks {
        d[i][j] = pass.row_loss[start..start + len].iter().sum::<f64>() / len as f64;
    }
    let mut acc = ElboTerms::default();
    for (i, out) in outs.iter().enumerate() {
        let kl_y = kl_categorical_uniform(&out.probs);
        let mut dec = 0.0;
        let mut kl_z = 0.0;
        for (j, &q) in out.probs.iter().enumerate() {
            dec += q * d[i][j];
            kl_z += q * kl_diag_standard(&out.means[j], &out.logvars[j]);
        }
        acc.elbo += (-dec - alpha_kl * kl_z - beta_kl * kl_y) / t;
        acc.decoder += dec / t;
        acc.kl_z += kl_z / t;
        acc.kl_y += kl_y / t;
    }
    (acc, d)
}

/// Value of the ELBO without touching gradients.
pub fn elbo_value(
    enc: &EncoderNets,
    dec: &DecoderNets,
    tasks: &[ElboTask],
    alpha_kl: f64,
    beta_kl: f64,
    eps: &[Vec<Vec<f64>>],
) -> Result<ElboTerms> {
    let cfg = enc.config();
    check_eps(tasks, eps, cfg.components, cfg.latent_dim)?;
    let contexts: Vec<Vec<&Transition>> = tasks.iter().map(|t| t.context.clone()).collect();
    let outs = enc.posterior(&ContextBatch::new(&contexts, cfg.transition_width())?)?;
    let st = stack(tasks, &outs, eps, cfg.obs_dim, cfg.action_dim)?;
    let pass = dec.evaluate(&st.s, &st.a, &st.z, &st.s_next, &st.r)?;
    Ok(terms(&outs, &pass, &st, alpha_kl, beta_kl).0)
}

/// Computes the ELBO and accumulates the gradients of `−ELBO` into the
/// encoder and decoder parameters (ascending the ELBO = descending this).
pub fn elbo_loss(
    enc: &mut EncoderNets,
    dec: &mut DecoderNets,
    tasks: &[ElboTask],
    alpha_kl: f64,
    beta_kl: f64,
    eps: &[Vec<Vec<f64>>],
) -> Result<ElboTerms> {
    let (components, latent, width, obs, act) = {
        let c = enc.config();
        (c.components, c.latent_dim, c.transition_width(), c.obs_dim, c.action_dim)
    };
    check_eps(tasks, eps, components, latent)?;
    let contexts: Vec<Vec<&Transition>> = tasks.iter().map(|t| t.context.clone()).collect();
    let outs = enc.forward(&ContextBatch::new(&contexts, width)?)?;
    let st = stack(tasks, &outs, eps, obs, act)?;
    let pass = dec.forward(&st.s, &st.a, &st.z, &st.s_next, &st.r)?;
    let (value, d) = terms(&outs, &pass, &st, alpha_kl, beta_kl);
    let t = tasks.len() as f64;

    // decoder rows of block (i, j) carry weight q_ij / (T · B_i)
    let mut weights = vec![0.0; st.r.len()];
    for &(i, j, start, len) in &st.blocks {
        let w = outs[i].probs[j] / (t * len as f64);
        weights[start..start + len].iter_mut().for_each(|x| *x = w);
    }
    let gz_rows = dec.backward(&pass, &st.s_next, &st.r, &weights)?;

    let mut grads: Vec<EncoderGrad> = outs
        .iter()
        .map(|_| EncoderGrad {
            logits: vec![0.0; components],
            means: vec![vec![0.0; latent]; components],
            logvars: vec![vec![0.0; latent]; components],
        })
        .collect();
    for &(i, j, start, len) in &st.blocks {
        let out = &outs[i];
        let q = out.probs[j];
        let g = &mut grads[i];
        for l in 0..latent {
            let gz: f64 = (start..start + len).map(|r| gz_rows[[r, l]]).sum();
            let mu = out.means[j][l];
            let lv = out.logvars[j][l];
            let kl_w = alpha_kl * q / t;
            g.means[j][l] = gz + kl_w * mu;
            let d_lv = gz * 0.5 * (0.5 * lv).exp() * eps[i][j][l] + kl_w * 0.5 * (lv.exp() - 1.0);
            g.logvars[j][l] = if out.logvar_active[j][l] { d_lv } else { 0.0 };
        }
    }
    for (i, out) in outs.iter().enumerate() {
        let jf = components as f64;
        // d(−ELBO)/dq_j, then through the softmax
        let dq: Vec<f64> = (0..components)
            .map(|j| {
                let q = out.probs[j];
                let kl = kl_diag_standard(&out.means[j], &out.logvars[j]);
                let ent = if q > 0.0 { (q * jf).ln() + 1.0 } else { 0.0 };
                (d[i][j] + alpha_kl * kl + beta_kl * ent) / t
            })
            .collect();
        let dot: f64 = out.probs.iter().zip(&dq).map(|(q, g)| q * g).sum();
        for j in 0..components {
            grads[i].logits[j] = out.probs[j] * (dq[j] - dot);
        }
    }
    enc.backward(&grads)?;
    Ok(value)
}
