//! Decoder `p(s', r | s, a, z)`: two deterministic mean predictors trained
//! with squared error.

use ndarray::{Array2, Axis};
use rismeta_core::Rng;
use serde::{Deserialize, Serialize};

use crate::neural::{hcat, Activation, Head, Mlp, MlpCheckpoint, ParamTensor, Parameterized};
use crate::{AgentError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
}

impl DecoderConfig {
    pub fn input_width(&self) -> usize {
        self.obs_dim + self.action_dim + self.latent_dim
    }
}

/// Predictions and per-row squared errors of one decoder pass.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderPass {
    pub state_pred: Array2<f64>,
    pub reward_pred: Array2<f64>,
    /// `½‖ŝ − s'‖² + ½(r̂ − r)²` per row
    pub row_loss: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderNets {
    config: DecoderConfig,
    state: Mlp,
    reward: Mlp,
}

impl DecoderNets {
    pub fn new(config: DecoderConfig, rng: &mut Rng) -> Result<Self> {
        let mut sizes = vec![config.input_width()];
        sizes.extend(&config.hidden);
        let mut s_sizes = sizes.clone();
        s_sizes.push(config.obs_dim);
        let mut r_sizes = sizes;
        r_sizes.push(1);
        Ok(Self {
            state: Mlp::with_last_bound(&s_sizes, Activation::Relu, Head::Linear, None, rng)?,
            reward: Mlp::with_last_bound(&r_sizes, Activation::Relu, Head::Linear, None, rng)?,
            config,
        })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    fn check(&self, s: &Array2<f64>, a: &Array2<f64>, z: &Array2<f64>, s_next: &Array2<f64>, r: &[f64]) -> Result<()> {
        let n = s.nrows();
        let c = &self.config;
        let ok = s.ncols() == c.obs_dim
            && a.dim() == (n, c.action_dim)
            && z.dim() == (n, c.latent_dim)
            && s_next.dim() == (n, c.obs_dim)
            && r.len() == n;
        if ok {
            Ok(())
        } else {
            Err(AgentError::Shape("decoder batch does not match its config".into()))
        }
    }

    fn losses(state_pred: &Array2<f64>, reward_pred: &Array2<f64>, s_next: &Array2<f64>, r: &[f64]) -> Vec<f64> {
        (0..s_next.nrows())
            .map(|i| {
                let ds: f64 = state_pred
                    .row(i)
                    .iter()
                    .zip(s_next.row(i))
                    .map(|(p, t)| (p - t) * (p - t))
                    .sum();
                let dr = reward_pred[[i, 0]] - r[i];
                0.5 * ds + 0.5 * dr * dr
            })
            .collect()
    }

    /// Evaluates without recording tapes.
    pub fn evaluate(
        &self,
        s: &Array2<f64>,
        a: &Array2<f64>,
        z: &Array2<f64>,
        s_next: &Array2<f64>,
        r: &[f64],
    ) -> Result<DecoderPass> {
        self.check(s, a, z, s_next, r)?;
        let x = hcat(&[s, a, z]);
        let state_pred = self.state.predict(&x)?;
        let reward_pred = self.reward.predict(&x)?;
        let row_loss = Self::losses(&state_pred, &reward_pred, s_next, r);
        Ok(DecoderPass {
            state_pred,
            reward_pred,
            row_loss,
        })
    }

    /// Evaluates with tapes recorded for [`DecoderNets::backward`].
    pub fn forward(
        &mut self,
        s: &Array2<f64>,
        a: &Array2<f64>,
        z: &Array2<f64>,
        s_next: &Array2<f64>,
        r: &[f64],
    ) -> Result<DecoderPass> {
        self.check(s, a, z, s_next, r)?;
        let x = hcat(&[s, a, z]);
        let state_pred = self.state.forward(&x)?;
        let reward_pred = self.reward.forward(&x)?;
        let row_loss = Self::losses(&state_pred, &reward_pred, s_next, r);
        Ok(DecoderPass {
            state_pred,
            reward_pred,
            row_loss,
        })
    }

    /// Backpropagates `Σ_i weight_i · row_loss_i` through the last forward.
    /// Returns the gradient with respect to the `z` block of each row.
    pub fn backward(&mut self, pass: &DecoderPass, s_next: &Array2<f64>, r: &[f64], weights: &[f64]) -> Result<Array2<f64>> {
        let w = Array2::from_shape_vec((weights.len(), 1), weights.to_vec()).expect("column");
        let g_state = (&pass.state_pred - s_next) * &w;
        let r_col = Array2::from_shape_vec((r.len(), 1), r.to_vec()).expect("column");
        let g_reward = (&pass.reward_pred - &r_col) * &w;
        let gx = self.state.backward(&g_state)? + self.reward.backward(&g_reward)?;
        let start = self.config.obs_dim + self.config.action_dim;
        Ok(gx.slice(ndarray::s![.., start..]).to_owned())
    }

    pub fn to_checkpoint(&self) -> DecoderCheckpoint {
        DecoderCheckpoint {
            config: self.config.clone(),
            state: self.state.to_checkpoint(),
            reward: self.reward.to_checkpoint(),
        }
    }

    pub fn from_checkpoint(ck: &DecoderCheckpoint) -> Result<Self> {
        let state = Mlp::from_checkpoint(&ck.state)?;
        let reward = Mlp::from_checkpoint(&ck.reward)?;
        let w = ck.config.input_width();
        if state.input_dim() != w || reward.input_dim() != w || state.output_dim() != ck.config.obs_dim || reward.output_dim() != 1 {
            return Err(AgentError::Checkpoint("decoder networks do not match their config".into()));
        }
        Ok(Self {
            config: ck.config.clone(),
            state,
            reward,
        })
    }
}

impl Parameterized for DecoderNets {
    fn params(&self) -> Vec<&ParamTensor> {
        let mut p = self.state.params();
        p.extend(self.reward.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut p = self.state.params_mut();
        p.extend(self.reward.params_mut());
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderCheckpoint {
    pub config: DecoderConfig,
    pub state: MlpCheckpoint,
    pub reward: MlpCheckpoint,
}

/// Batch mean of `½‖ŝ' − s'‖² + ½(r̂ − r)²` given predictions.
pub fn squared_error_loss(state_pred: &Array2<f64>, reward_pred: &[f64], s_next: &Array2<f64>, r: &[f64]) -> f64 {
    let n = s_next.nrows();
    if n == 0 {
        return 0.0;
    }
    let ds = (state_pred - s_next).mapv(|v| v * v).sum_axis(Axis(1));
    let total: f64 = ds
        .iter()
        .zip(reward_pred.iter().zip(r))
        .map(|(d, (p, t))| 0.5 * d + 0.5 * (p - t) * (p - t))
        .sum();
    total / n as f64
}

/// Decoder loss of `dec` on a batch, averaged over rows.
pub fn decoder_loss(
    dec: &DecoderNets,
    s: &Array2<f64>,
    a: &Array2<f64>,
    s_next: &Array2<f64>,
    r: &[f64],
    z: &Array2<f64>,
) -> Result<f64> {
    let pass = dec.evaluate(s, a, z, s_next, r)?;
    Ok(pass.row_loss.iter().sum::<f64>() / s.nrows().max(1) as f64)
}
