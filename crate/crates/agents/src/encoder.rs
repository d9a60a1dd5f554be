//! Task-inference encoder `q(y | c)`, `q(z | c, y)`.
//!
//! Every transition of a context is embedded by a shared trunk; the
//! embeddings are mean-pooled (so the context is treated as a set) and a
//! linear head produces `J` component logits plus a diagonal Gaussian
//! (mean, log-variance) of dimension `L` per component.

use ndarray::{Array2, Axis};
use rismeta_core::{Rng, Transition};
use serde::{Deserialize, Serialize};

use crate::neural::{Activation, Head, Mlp, MlpCheckpoint, ParamTensor, Parameterized};
use crate::{AgentError, Result};

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub obs_dim: usize,
    pub action_dim: usize,
    /// `J`
    pub components: usize,
    /// `L`
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
}

impl EncoderConfig {
    /// Width of one transition row `[s, a, r, s']`.
    pub fn transition_width(&self) -> usize {
        2 * self.obs_dim + self.action_dim + 1
    }

    fn head_width(&self) -> usize {
        self.components * (1 + 2 * self.latent_dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferMode {
    /// Sample `y` from the categorical and `z` by reparameterization.
    Train,
    /// `y = argmax`, `z` = that component's mean.
    Eval,
}

/// `y` is 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEncoding {
    pub y: usize,
    pub z: Vec<f64>,
}

/// Posterior parameters for one context.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    /// `J × L`
    pub means: Vec<Vec<f64>>,
    /// `J × L`, clamped to `[LOGVAR_MIN, LOGVAR_MAX]`
    pub logvars: Vec<Vec<f64>>,
    /// Whether each raw log-variance was inside the clamp range.
    pub logvar_active: Vec<Vec<bool>>,
}

impl EncoderOutput {
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (j, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = j;
            }
        }
        best
    }

    /// Picks `(y, z)` according to `mode`. `rng` is untouched in eval mode.
    pub fn encoding(&self, mode: InferMode, rng: &mut Rng) -> TaskEncoding {
        match mode {
            InferMode::Eval => {
                let j = self.argmax();
                TaskEncoding {
                    y: j + 1,
                    z: self.means[j].clone(),
                }
            }
            InferMode::Train => {
                let u = rng.uniform();
                let mut acc = 0.0;
                let mut j = self.probs.len() - 1;
                for (i, &p) in self.probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        j = i;
                        break;
                    }
                }
                let z = self.means[j]
                    .iter()
                    .zip(&self.logvars[j])
                    .map(|(&m, &lv)| m + (0.5 * lv).exp() * rng.normal())
                    .collect();
                TaskEncoding { y: j + 1, z }
            }
        }
    }
}

/// Upstream gradients for one context's posterior parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrad {
    pub logits: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub logvars: Vec<Vec<f64>>,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// One `[s, a, r, s']` row.
pub fn transition_row(tr: &Transition, out: &mut Vec<f64>) {
    out.extend_from_slice(&tr.s.0);
    out.extend_from_slice(&tr.a.0);
    out.push(tr.r);
    out.extend_from_slice(&tr.s_next.0);
}

/// Several contexts stacked row-wise; `segments[i] = (start, len)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextBatch {
    pub rows: Array2<f64>,
    pub segments: Vec<(usize, usize)>,
}

impl ContextBatch {
    pub fn new(contexts: &[Vec<&Transition>], width: usize) -> Result<Self> {
        let total: usize = contexts.iter().map(|c| c.len()).sum();
        let mut data = Vec::with_capacity(total * width);
        let mut segments = Vec::with_capacity(contexts.len());
        let mut start = 0;
        for c in contexts {
            if c.is_empty() {
                return Err(AgentError::EmptyContext);
            }
            for tr in c {
                let before = data.len();
                transition_row(tr, &mut data);
                if data.len() - before != width {
                    return Err(AgentError::Shape(format!(
                        "transition row of width {} for encoder width {width}",
                        data.len() - before
                    )));
                }
            }
            segments.push((start, c.len()));
            start += c.len();
        }
        let rows = Array2::from_shape_vec((total, width), data).expect("sized above");
        Ok(Self { rows, segments })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderNets {
    config: EncoderConfig,
    embed: Mlp,
    head: Mlp,
    /// segments of the last recorded forward
    segments: Option<Vec<(usize, usize)>>,
}

impl EncoderNets {
    pub fn new(config: EncoderConfig, rng: &mut Rng) -> Result<Self> {
        if config.components == 0 || config.embed_dim == 0 {
            return Err(AgentError::Config("encoder needs J ≥ 1 and a positive embedding width".into()));
        }
        let mut sizes = vec![config.transition_width()];
        sizes.extend(&config.hidden);
        sizes.push(config.embed_dim);
        let embed = Mlp::with_last_bound(&sizes, Activation::Relu, Head::Linear, None, rng)?;
        let head = Mlp::new(&[config.embed_dim, config.head_width()], Activation::Relu, Head::Linear, rng)?;
        Ok(Self {
            config,
            embed,
            head,
            segments: None,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    fn split_head(&self, row: &[f64]) -> EncoderOutput {
        let (j_count, l) = (self.config.components, self.config.latent_dim);
        let logits = row[..j_count].to_vec();
        let probs = softmax(&logits);
        let mut means = Vec::with_capacity(j_count);
        let mut logvars = Vec::with_capacity(j_count);
        let mut active = Vec::with_capacity(j_count);
        for j in 0..j_count {
            let base = j_count + j * 2 * l;
            means.push(row[base..base + l].to_vec());
            let raw = &row[base + l..base + 2 * l];
            logvars.push(raw.iter().map(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX)).collect());
            active.push(raw.iter().map(|v| (LOGVAR_MIN..=LOGVAR_MAX).contains(v)).collect());
        }
        EncoderOutput {
            logits,
            probs,
            means,
            logvars,
            logvar_active: active,
        }
    }

    fn pool(emb: &Array2<f64>, segments: &[(usize, usize)]) -> Array2<f64> {
        let mut pooled = Array2::zeros((segments.len(), emb.ncols()));
        for (i, &(start, len)) in segments.iter().enumerate() {
            let mean = emb.slice(ndarray::s![start..start + len, ..]).mean_axis(Axis(0)).expect("non-empty");
            pooled.row_mut(i).assign(&mean);
        }
        pooled
    }

    /// Per-transition embeddings (rows of `[s, a, r, s']`), no tape.
    pub fn embed_rows(&self, rows: &Array2<f64>) -> Result<Array2<f64>> {
        self.embed.predict(rows)
    }

    /// Posterior parameters from already pooled embeddings, no tape.
    pub fn head_from_pooled(&self, pooled: &Array2<f64>) -> Result<Vec<EncoderOutput>> {
        let out = self.head.predict(pooled)?;
        Ok(out.rows().into_iter().map(|r| self.split_head(r.as_slice().unwrap())).collect())
    }

    /// Posterior parameters for each context, no tape.
    pub fn posterior(&self, batch: &ContextBatch) -> Result<Vec<EncoderOutput>> {
        let emb = self.embed.predict(&batch.rows)?;
        self.head_from_pooled(&Self::pool(&emb, &batch.segments))
    }

    /// Posterior parameters with tapes recorded for [`EncoderNets::backward`].
    pub fn forward(&mut self, batch: &ContextBatch) -> Result<Vec<EncoderOutput>> {
        let emb = self.embed.forward(&batch.rows)?;
        let pooled = Self::pool(&emb, &batch.segments);
        let out = self.head.forward(&pooled)?;
        self.segments = Some(batch.segments.clone());
        Ok(out.rows().into_iter().map(|r| self.split_head(r.as_slice().unwrap())).collect())
    }

    /// Accumulates parameter gradients for the last [`EncoderNets::forward`].
    /// Gradients on clamped log-variances are dropped by the caller's mask.
    pub fn backward(&mut self, grads: &[EncoderGrad]) -> Result<()> {
        let segments = self.segments.take().ok_or(AgentError::NoTape)?;
        if grads.len() != segments.len() {
            return Err(AgentError::Shape(format!("{} gradients for {} contexts", grads.len(), segments.len())));
        }
        let (j_count, l) = (self.config.components, self.config.latent_dim);
        let mut g_head = Array2::zeros((segments.len(), self.config.head_width()));
        for (i, g) in grads.iter().enumerate() {
            let mut row = g_head.row_mut(i);
            for j in 0..j_count {
                row[j] = g.logits[j];
                let base = j_count + j * 2 * l;
                for d in 0..l {
                    row[base + d] = g.means[j][d];
                    row[base + l + d] = g.logvars[j][d];
                }
            }
        }
        let g_pooled = self.head.backward(&g_head)?;
        let total: usize = segments.iter().map(|s| s.1).sum();
        let mut g_emb = Array2::zeros((total, self.config.embed_dim));
        for (i, &(start, len)) in segments.iter().enumerate() {
            let share = &g_pooled.row(i) / len as f64;
            for r in start..start + len {
                g_emb.row_mut(r).assign(&share);
            }
        }
        self.embed.backward(&g_emb)?;
        Ok(())
    }

    /// Samples or selects `(y, z)` for one context.
    pub fn infer(&self, context: &[&Transition], mode: InferMode, rng: &mut Rng) -> Result<(TaskEncoding, EncoderOutput)> {
        if context.is_empty() {
            return Err(AgentError::EmptyContext);
        }
        let batch = ContextBatch::new(&[context.to_vec()], self.config.transition_width())?;
        let out = self.posterior(&batch)?.remove(0);
        Ok((out.encoding(mode, rng), out))
    }

    pub fn to_checkpoint(&self) -> EncoderCheckpoint {
        EncoderCheckpoint {
            config: self.config.clone(),
            embed: self.embed.to_checkpoint(),
            head: self.head.to_checkpoint(),
        }
    }

    pub fn from_checkpoint(ck: &EncoderCheckpoint) -> Result<Self> {
        let embed = Mlp::from_checkpoint(&ck.embed)?;
        let head = Mlp::from_checkpoint(&ck.head)?;
        if embed.input_dim() != ck.config.transition_width()
            || embed.output_dim() != ck.config.embed_dim
            || head.input_dim() != ck.config.embed_dim
            || head.output_dim() != ck.config.head_width()
        {
            return Err(AgentError::Checkpoint("encoder networks do not match their config".into()));
        }
        Ok(Self {
            config: ck.config.clone(),
            embed,
            head,
            segments: None,
        })
    }
}

impl Parameterized for EncoderNets {
    fn params(&self) -> Vec<&ParamTensor> {
        let mut p = self.embed.params();
        p.extend(self.head.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut p = self.embed.params_mut();
        p.extend(self.head.params_mut());
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderCheckpoint {
    pub config: EncoderConfig,
    pub embed: MlpCheckpoint,
    pub head: MlpCheckpoint,
}

/// `encoder_infer` as a free function.
pub fn encoder_infer(
    enc: &EncoderNets,
    context: &[&Transition],
    mode: InferMode,
    rng: &mut Rng,
) -> Result<(TaskEncoding, EncoderOutput)> {
    enc.infer(context, mode, rng)
}
