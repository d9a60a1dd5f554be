//! Dense networks with hand-written reverse mode, Adam, and the squashed
//! Gaussian policy head.
//!
//! Batches are `Array2<f64>` with one sample per row. A [`Mlp::forward`]
//! call records the activations needed by the next [`Mlp::backward`];
//! [`Mlp::predict`] evaluates without recording and never touches
//! parameters or gradients.

use ndarray::{Array1, Array2, Axis};
use rismeta_core::Rng;
use serde::{Deserialize, Serialize};

use crate::{AgentError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `x`.
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

/// How the final (linear) layer's output is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Linear,
    /// First half mean, second half log standard deviation.
    Gaussian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
}

impl ParamTensor {
    pub fn new(value: Array2<f64>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Anything that owns an ordered list of trainable tensors.
pub trait Parameterized {
    fn params(&self) -> Vec<&ParamTensor>;
    fn params_mut(&mut self) -> Vec<&mut ParamTensor>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// All values in declaration order, each tensor row-major.
    fn flat_params(&self) -> Vec<f64> {
        self.params().iter().flat_map(|p| p.value.iter().copied()).collect()
    }

    fn flat_grads(&self) -> Vec<f64> {
        self.params().iter().flat_map(|p| p.grad.iter().copied()).collect()
    }

    fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(AgentError::Shape(format!(
                "{} values for {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for p in self.params_mut() {
            let n = p.value.len();
            for (dst, &src) in p.value.iter_mut().zip(&flat[offset..offset + n]) {
                *dst = src;
            }
            offset += n;
        }
        Ok(())
    }

    /// Order-sensitive digest of the parameter bits.
    fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.params().iter().flat_map(|p| p.value.iter()) {
            h ^= v.to_bits();
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    /// in × out
    w: ParamTensor,
    /// 1 × out
    b: ParamTensor,
}

#[derive(Debug, Clone, PartialEq, Default)]
struct Tape {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    head: Head,
    layers: Vec<Dense>,
    tape: Option<Tape>,
}

fn uniform_matrix(rng: &mut Rng, rows: usize, cols: usize, bound: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.uniform_range(-bound, bound))
}

impl Mlp {
    /// Fully connected net with layer widths `sizes` (input first). Hidden
    /// layers use `activation`; the last layer is affine. Weights start
    /// uniform in `±1/sqrt(fan_in)`, the last layer in `±3e-3`.
    pub fn new(sizes: &[usize], activation: Activation, head: Head, rng: &mut Rng) -> Result<Self> {
        Self::with_last_bound(sizes, activation, head, Some(3e-3), rng)
    }

    /// As [`Mlp::new`]; `last_bound = None` gives the last layer the same
    /// fan-in scaled init as the others.
    pub fn with_last_bound(
        sizes: &[usize],
        activation: Activation,
        head: Head,
        last_bound: Option<f64>,
        rng: &mut Rng,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(AgentError::Shape(format!("layer sizes {sizes:?}")));
        }
        let out = *sizes.last().unwrap();
        if head == Head::Gaussian && out % 2 != 0 {
            return Err(AgentError::Shape(format!("gaussian head needs an even output width, got {out}")));
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, pair)| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let bound = match last_bound {
                    Some(b) if i == last => b,
                    _ => 1.0 / (fan_in as f64).sqrt(),
                };
                Dense {
                    w: ParamTensor::new(uniform_matrix(rng, fan_in, fan_out, bound)),
                    b: ParamTensor::new(uniform_matrix(rng, 1, fan_out, bound)),
                }
            })
            .collect();
        Ok(Self {
            sizes: sizes.to_vec(),
            activation,
            head,
            layers,
            tape: None,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn head(&self) -> Head {
        self.head
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(AgentError::Shape(format!(
                "input width {} for a net expecting {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn run(&self, x: &Array2<f64>, mut tape: Option<&mut Tape>) -> Array2<f64> {
        let mut h = x.clone();
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = h.dot(&layer.w.value) + &layer.b.value;
            let next = if i + 1 < n {
                z.mapv(|v| self.activation.apply(v))
            } else {
                z.clone()
            };
            if let Some(t) = tape.as_deref_mut() {
                t.inputs.push(h);
                t.pre.push(z);
            }
            h = next;
        }
        h
    }

    /// Evaluates a batch and records the tape for [`Mlp::backward`].
    pub fn forward(&mut self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut tape = Tape::default();
        let out = self.run(x, Some(&mut tape));
        self.tape = Some(tape);
        Ok(out)
    }

    /// Evaluates a batch without recording anything.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        Ok(self.run(x, None))
    }

    pub fn predict_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let batch = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("one row");
        Ok(self.predict(&batch)?.row(0).to_vec())
    }

    /// Backpropagates `grad_out` (d loss / d output) through the last
    /// recorded forward pass. Parameter gradients are accumulated; the
    /// gradient with respect to the input batch is returned.
    pub fn backward(&mut self, grad_out: &Array2<f64>) -> Result<Array2<f64>> {
        let tape = self.tape.take().ok_or(AgentError::NoTape)?;
        let batch = tape.inputs[0].nrows();
        if grad_out.dim() != (batch, self.output_dim()) {
            return Err(AgentError::Shape(format!(
                "upstream gradient {:?} for output ({batch}, {})",
                grad_out.dim(),
                self.output_dim()
            )));
        }
        let n = self.layers.len();
        let mut g = grad_out.clone();
        for i in (0..n).rev() {
            if i + 1 < n {
                let act = self.activation;
                g.zip_mut_with(&tape.pre[i], |gv, &z| *gv *= act.derivative(z));
            }
            let layer = &mut self.layers[i];
            layer.w.grad += &tape.inputs[i].t().dot(&g);
            layer.b.grad += &g.sum_axis(Axis(0)).insert_axis(Axis(0));
            g = g.dot(&layer.w.value.t());
        }
        Ok(g)
    }

    /// Drops any recorded forward pass.
    pub fn clear_tape(&mut self) {
        self.tape = None;
    }

    /// `target ← τ·self + (1 − τ)·target`.
    pub fn soft_update_into(&self, target: &mut Mlp, tau: f64) {
        for (dst, src) in target.params_mut().into_iter().zip(self.params()) {
            dst.value.zip_mut_with(&src.value, |d, &s| *d = tau * s + (1.0 - tau) * *d);
        }
    }

    pub fn to_checkpoint(&self) -> MlpCheckpoint {
        MlpCheckpoint {
            sizes: self.sizes.clone(),
            activation: self.activation,
            head: self.head,
            params: self.flat_params(),
        }
    }

    pub fn from_checkpoint(ck: &MlpCheckpoint) -> Result<Self> {
        if ck.sizes.len() < 2 {
            return Err(AgentError::Checkpoint(format!("layer sizes {:?}", ck.sizes)));
        }
        let expected: Option<usize> = ck
            .sizes
            .windows(2)
            .try_fold(0usize, |acc, w| w[0].checked_mul(w[1])?.checked_add(w[1])?.checked_add(acc));
        if expected != Some(ck.params.len()) {
            return Err(AgentError::Checkpoint(format!(
                "{} parameters for layer sizes {:?}",
                ck.params.len(),
                ck.sizes
            )));
        }
        if ck.params.iter().any(|v| !v.is_finite()) {
            return Err(AgentError::Checkpoint("non-finite parameter".into()));
        }
        if ck.head == Head::Gaussian && ck.sizes.last().unwrap() % 2 != 0 {
            return Err(AgentError::Checkpoint("gaussian head with odd output width".into()));
        }
        let layers = ck
            .sizes
            .windows(2)
            .map(|w| Dense {
                w: ParamTensor::new(Array2::zeros((w[0], w[1]))),
                b: ParamTensor::new(Array2::zeros((1, w[1]))),
            })
            .collect();
        let mut net = Self {
            sizes: ck.sizes.clone(),
            activation: ck.activation,
            head: ck.head,
            layers,
            tape: None,
        };
        net.set_flat_params(&ck.params)?;
        Ok(net)
    }
}

impl Parameterized for Mlp {
    fn params(&self) -> Vec<&ParamTensor> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.w, &mut l.b]).collect()
    }
}

/// Serialized network: layer widths plus parameters in layer order, each
/// layer's `in × out` weights row-major followed by its biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpCheckpoint {
    pub sizes: Vec<usize>,
    pub activation: Activation,
    pub head: Head,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new<P: Parameterized + ?Sized>(params: &P, config: AdamConfig) -> Self {
        let shapes: Vec<_> = params.params().iter().map(|p| p.value.raw_dim()).collect();
        Self {
            config,
            step: 0,
            m: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            v: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step<P: Parameterized + ?Sized>(&mut self, params: &mut P) {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, m), v) in params.params_mut().into_iter().zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(&mut p.value)
                .and(&mut p.grad)
                .and(m)
                .and(v)
                .for_each(|w, g, m, v| {
                    *m = beta1 * *m + (1.0 - beta1) * *g;
                    *v = beta2 * *v + (1.0 - beta2) * *g * *g;
                    let mh = *m / c1;
                    let vh = *v / c2;
                    *w -= lr * mh / (vh.sqrt() + eps);
                    *g = 0.0;
                });
        }
    }
}

/// A single scalar parameter (e.g. a log-temperature) with its own gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Scalar(pub ParamTensor);

impl Scalar {
    pub fn new(v: f64) -> Self {
        Self(ParamTensor::new(Array2::from_elem((1, 1), v)))
    }

    pub fn get(&self) -> f64 {
        self.0.value[[0, 0]]
    }

    pub fn add_grad(&mut self, g: f64) {
        self.0.grad[[0, 0]] += g;
    }
}

impl Parameterized for Scalar {
    fn params(&self) -> Vec<&ParamTensor> {
        vec![&self.0]
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        vec![&mut self.0]
    }
}

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// `log(1 − tanh²(u))` without cancellation.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    let x = -2.0 * u;
    let softplus = if x > 0.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() };
    2.0 * (std::f64::consts::LN_2 - u - softplus)
}

/// One reparameterized draw from the tanh-squashed diagonal Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct SquashedSample {
    /// `tanh(u)`, every component in (−1, 1)
    pub action: Vec<f64>,
    /// pre-squash `u = mean + std·ε`
    pub u: Vec<f64>,
    pub eps: Vec<f64>,
    /// Clamped log standard deviations that were used.
    pub log_std: Vec<f64>,
    /// Whether each raw log-std was inside the clamp range.
    pub log_std_active: Vec<bool>,
    pub log_prob: f64,
}

/// `a = tanh(mean + exp(log_std)·ε)` with the change-of-variables log
/// density. `log_std` is clamped to `[-20, 2]`.
pub fn squashed_gaussian(mean: &[f64], log_std: &[f64], eps: &[f64]) -> SquashedSample {
    let mut action = Vec::with_capacity(mean.len());
    let mut u = Vec::with_capacity(mean.len());
    let mut used = Vec::with_capacity(mean.len());
    let mut active = Vec::with_capacity(mean.len());
    let mut log_prob = 0.0;
    for ((&mu, &ls_raw), &e) in mean.iter().zip(log_std).zip(eps) {
        let ls = ls_raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
        let ui = mu + ls.exp() * e;
        log_prob += -0.5 * e * e - ls - HALF_LN_2PI - log_one_minus_tanh_sq(ui);
        action.push(ui.tanh());
        u.push(ui);
        used.push(ls);
        active.push((LOG_STD_MIN..=LOG_STD_MAX).contains(&ls_raw));
    }
    SquashedSample {
        action,
        u,
        eps: eps.to_vec(),
        log_std: used,
        log_std_active: active,
        log_prob,
    }
}

/// Draws ε ~ N(0, I) from `rng` and samples the squashed Gaussian.
pub fn gaussian_head_sample(mean: &[f64], log_std: &[f64], rng: &mut Rng) -> SquashedSample {
    let eps: Vec<f64> = (0..mean.len()).map(|_| rng.normal()).collect();
    squashed_gaussian(mean, log_std, &eps)
}

/// Gradients with respect to the raw (mean, log_std) inputs, given upstream
/// `d_log_prob` (scalar) and `d_action` (per component), with ε held fixed.
pub fn squashed_gaussian_backward(sample: &SquashedSample, d_log_prob: f64, d_action: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = sample.action.len();
    let mut d_mean = Vec::with_capacity(n);
    let mut d_log_std = Vec::with_capacity(n);
    for i in 0..n {
        let a = sample.action[i];
        let sigma_eps = sample.log_std[i].exp() * sample.eps[i];
        let da_du = 1.0 - a * a;
        // d log_prob / du = 2 tanh(u)
        let d_u = d_log_prob * 2.0 * a + d_action[i] * da_du;
        d_mean.push(d_u);
        let d_ls = -d_log_prob + d_u * sigma_eps;
        d_log_std.push(if sample.log_std_active[i] { d_ls } else { 0.0 });
    }
    (d_mean, d_log_std)
}

/// Splits a gaussian-head output row into (mean, log_std).
pub fn split_gaussian(row: &[f64]) -> (&[f64], &[f64]) {
    row.split_at(row.len() / 2)
}

/// Row-stacks equally long vectors into a batch.
pub fn stack_rows<R: AsRef<[f64]>>(rows: &[R], width: usize) -> Result<Array2<f64>> {
    let mut data = Vec::with_capacity(rows.len() * width);
    for r in rows {
        let r = r.as_ref();
        if r.len() != width {
            return Err(AgentError::Shape(format!("row of width {} in a batch of width {width}", r.len())));
        }
        data.extend_from_slice(r);
    }
    Ok(Array2::from_shape_vec((rows.len(), width), data).expect("sized above"))
}

/// Concatenates batches column-wise.
pub fn hcat(parts: &[&Array2<f64>]) -> Array2<f64> {
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(1), &views).expect("equal row counts")
}

pub fn row_vector(v: &[f64]) -> Array1<f64> {
    Array1::from_vec(v.to_vec())
}
