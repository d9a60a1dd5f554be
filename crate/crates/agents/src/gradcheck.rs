//! Central finite-difference checks of the hand-written backward passes.
//!
//! Each check reports the worst relative error per parameter tensor (or
//! input), where the relative error of one coordinate is
//! `|analytic − numeric| / max(|analytic|, |numeric|, 1e-6)`.

use ndarray::Array2;
use rismeta_core::{ActionVector, Observation, Rng, Transition};
use serde::{Deserialize, Serialize};

use crate::decoder::{DecoderConfig, DecoderNets};
use crate::elbo::{draw_eps, elbo_loss, elbo_value, ElboTask};
use crate::encoder::{EncoderConfig, EncoderNets};
use crate::neural::{squashed_gaussian, squashed_gaussian_backward, Activation, Head, Mlp, Parameterized};
use crate::Result;

const STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    /// `(tensor label, worst relative error, coordinates checked)`
    pub tensors: Vec<(String, f64, usize)>,
}

impl GradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.1).fold(0.0, f64::max)
    }

    pub fn coordinates(&self) -> usize {
        self.tensors.iter().map(|t| t.2).sum()
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares `analytic` (gradient of `loss` w.r.t. the flat parameters of
/// `net`) against central differences, grouped per tensor.
fn check_flat<P: Parameterized>(net: &mut P, prefix: &str, analytic: &[f64], mut loss: impl FnMut(&P) -> f64) -> Result<GradCheck> {
    let sizes: Vec<usize> = net.params().iter().map(|p| p.value.len()).collect();
    let base = net.flat_params();
    let mut tensors = Vec::with_capacity(sizes.len());
    let mut offset = 0;
    for (k, n) in sizes.into_iter().enumerate() {
        let mut worst: f64 = 0.0;
        for i in offset..offset + n {
            let mut p = base.clone();
            p[i] += STEP;
            net.set_flat_params(&p)?;
            let up = loss(net);
            p[i] -= 2.0 * STEP;
            net.set_flat_params(&p)?;
            let down = loss(net);
            worst = worst.max(rel_error(analytic[i], (up - down) / (2.0 * STEP)));
        }
        let kind = if k % 2 == 0 { "weight" } else { "bias" };
        tensors.push((format!("{prefix} layer {} {kind}", k / 2), worst, n));
        offset += n;
    }
    net.set_flat_params(&base)?;
    Ok(GradCheck { tensors })
}

/// Every weight, bias and the input of a 5-7-6-3 network under a random
/// linear loss.
pub fn mlp_gradcheck(activation: Activation, seed: u64) -> Result<GradCheck> {
    let mut rng = Rng::new(seed);
    let mut net = Mlp::new(&[5, 7, 6, 3], activation, Head::Linear, &mut rng)?;
    // the default last-layer init is tiny; scale it up to O(1)
    let sizes: Vec<usize> = net.params().iter().map(|p| p.value.len()).collect();
    let last_w = sizes.len() - 2;
    let start: usize = sizes[..last_w].iter().sum();
    let mut p = net.flat_params();
    p[start..start + sizes[last_w]].iter_mut().for_each(|v| *v *= 300.0);
    net.set_flat_params(&p)?;

    let x = Array2::from_shape_fn((4, 5), |_| rng.normal());
    let weights = Array2::from_shape_fn((4, 3), |_| rng.normal());
    let loss = |n: &Mlp, x: &Array2<f64>| (n.predict(x).expect("shapes fixed above") * &weights).sum();
    net.zero_grad();
    net.forward(&x)?;
    let dx = net.backward(&weights)?;
    let analytic = net.flat_grads();
    let mut report = check_flat(&mut net, &format!("{activation:?}"), &analytic, |n| loss(n, &x))?;
    let mut worst: f64 = 0.0;
    for r in 0..x.nrows() {
        for c in 0..x.ncols() {
            let mut xp = x.clone();
            xp[[r, c]] += STEP;
            let up = loss(&net, &xp);
            xp[[r, c]] -= 2.0 * STEP;
            let down = loss(&net, &xp);
            worst = worst.max(rel_error(dx[[r, c]], (up - down) / (2.0 * STEP)));
        }
    }
    report.tensors.push((format!("{activation:?} input"), worst, x.len()));
    Ok(report)
}

/// Squashed Gaussian head: `α·log π + ⟨d, a⟩` w.r.t. mean and log-std.
pub fn gaussian_head_gradcheck(seed: u64) -> GradCheck {
    let mut rng = Rng::new(seed);
    let mean: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
    let log_std: Vec<f64> = (0..4).map(|_| rng.uniform_range(-1.5, 1.0)).collect();
    let eps: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
    let d_action: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
    let alpha = 0.37;
    let objective = |m: &[f64], l: &[f64]| {
        let s = squashed_gaussian(m, l, &eps);
        alpha * s.log_prob + s.action.iter().zip(&d_action).map(|(a, d)| a * d).sum::<f64>()
    };
    let s = squashed_gaussian(&mean, &log_std, &eps);
    let (dm, dl) = squashed_gaussian_backward(&s, alpha, &d_action);
    let (mut wm, mut wl): (f64, f64) = (0.0, 0.0);
    for i in 0..4 {
        let mut up = mean.clone();
        up[i] += STEP;
        let mut dn = mean.clone();
        dn[i] -= STEP;
        wm = wm.max(rel_error(dm[i], (objective(&up, &log_std) - objective(&dn, &log_std)) / (2.0 * STEP)));
        let mut up = log_std.clone();
        up[i] += STEP;
        let mut dn = log_std.clone();
        dn[i] -= STEP;
        wl = wl.max(rel_error(dl[i], (objective(&mean, &up) - objective(&mean, &dn)) / (2.0 * STEP)));
    }
    GradCheck {
        tensors: vec![("gaussian head mean".into(), wm, 4), ("gaussian head log_std".into(), wl, 4)],
    }
}

fn random_transition(rng: &mut Rng, obs: usize, act: usize, task_id: u64, t: u64) -> Transition {
    Transition {
        task_id,
        t,
        s: Observation((0..obs).map(|_| rng.normal()).collect()),
        a: ActionVector((0..act).map(|_| rng.uniform_range(-1.0, 1.0)).collect()),
        r: rng.normal(),
        s_next: Observation((0..obs).map(|_| rng.normal()).collect()),
        done: false,
        annotation: None,
    }
}

/// Full negative ELBO w.r.t. every encoder and decoder parameter on a tiny
/// instance (3 components, latent 2, obs 3, action 2, two tasks).
pub fn elbo_gradcheck(seed: u64) -> Result<GradCheck> {
    let mut rng = Rng::new(seed);
    let mut enc = EncoderNets::new(
        EncoderConfig {
            obs_dim: 3,
            action_dim: 2,
            components: 3,
            latent_dim: 2,
            hidden: vec![6],
            embed_dim: 5,
        },
        &mut rng,
    )?;
    let mut dec = DecoderNets::new(
        DecoderConfig {
            obs_dim: 3,
            action_dim: 2,
            latent_dim: 2,
            hidden: vec![6],
        },
        &mut rng,
    )?;
    // widen the head init so posterior terms are not all near zero
    let p: Vec<f64> = enc.flat_params().into_iter().map(|v| 3.0 * v).collect();
    enc.set_flat_params(&p)?;
    let data: Vec<Transition> = (0..10).map(|t| random_transition(&mut rng, 3, 2, t % 2, t)).collect();
    let tasks = [
        ElboTask {
            context: data[0..4].iter().collect(),
            targets: data[4..7].iter().collect(),
        },
        ElboTask {
            context: data[5..8].iter().collect(),
            targets: data[7..10].iter().collect(),
        },
    ];
    let eps = draw_eps(&mut rng, 2, 3, 2);
    let (a, b) = (0.3, 0.2);
    enc.zero_grad();
    dec.zero_grad();
    elbo_loss(&mut enc, &mut dec, &tasks, a, b, &eps)?;
    let neg = |e: &EncoderNets, d: &DecoderNets| -elbo_value(e, d, &tasks, a, b, &eps).expect("shapes fixed above").elbo;
    let g_enc = enc.flat_grads();
    let g_dec = dec.flat_grads();
    let mut report = {
        let dec = &dec;
        check_flat(&mut enc, "encoder", &g_enc, |e| neg(e, dec))?
    };
    let enc = &enc;
    report.tensors.extend(check_flat(&mut dec, "decoder", &g_dec, |d| neg(enc, d))?.tensors);
    Ok(report)
}
