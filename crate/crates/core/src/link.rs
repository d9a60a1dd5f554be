//! Link-level evaluation of a beamformer / RIS phase design on one channel
//! realization, and projections onto the feasible set (total transmit power
//! at most `p_max`, unit-modulus reflection coefficients).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{wrap_angle, ChannelState};
use crate::numerics::CMatrix;
use crate::{Error, Result};

/// RIS phase angles, each kept in `[0, 2π)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseShift {
    theta: Vec<f64>,
}

impl PhaseShift {
    pub fn new(theta: Vec<f64>) -> Self {
        Self {
            theta: theta.into_iter().map(wrap_angle).collect(),
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self { theta: vec![0.0; n] }
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn set(&mut self, n: usize, theta: f64) {
        self.theta[n] = wrap_angle(theta);
    }

    /// Diagonal of Φ: `e^{jθ_n}`.
    pub fn phasors(&self) -> Vec<Complex64> {
        self.theta.iter().map(|&t| Complex64::from_polar(1.0, t)).collect()
    }
}

/// Transmit beamformer `W` (M×K, column `k` serves user `k`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Beamformer {
    pub w: CMatrix,
}

impl Beamformer {
    /// `tr(WᴴW)`, the total transmit power.
    pub fn tx_power(&self) -> f64 {
        self.w.frobenius_sq()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkReport {
    pub sinr: Vec<f64>,
    /// bits/s/Hz per user
    pub rate: Vec<f64>,
    pub sum_rate: f64,
    /// watts
    pub tx_power: f64,
}

/// `H_eff` (K×M) with row `k` equal to `h_{2,k} · diag(e^{jθ}) · H1`.
pub fn effective_channel(state: &ChannelState, phase: &PhaseShift) -> Result<CMatrix> {
    let (n, m) = state.h1.shape();
    let (k, n2) = state.h2.shape();
    if n != n2 || phase.len() != n {
        return Err(Error::Shape(format!(
            "H1 {:?}, H2 {:?}, {} phases",
            state.h1.shape(),
            state.h2.shape(),
            phase.len()
        )));
    }
    let phasors = phase.phasors();
    let mut out = CMatrix::zeros(k, m);
    for user in 0..k {
        let h2_row = state.h2.row(user);
        let out_row = out.row_mut(user);
        for (elem, (&g, &p)) in h2_row.iter().zip(&phasors).enumerate() {
            let coeff = g * p;
            for (o, &h) in out_row.iter_mut().zip(state.h1.row(elem)) {
                *o += coeff * h;
            }
        }
    }
    Ok(out)
}

/// Per-user (desired, interference) received powers `|h_k w_k|²` and
/// `Σ_{i≠k} |h_k w_i|²`.
pub fn signal_interference(h_eff: &CMatrix, w: &Beamformer) -> Result<Vec<(f64, f64)>> {
    let (k, m) = h_eff.shape();
    if w.w.rows() != m || w.w.cols() != k {
        return Err(Error::Shape(format!(
            "H_eff {:?} with W {:?}",
            h_eff.shape(),
            w.w.shape()
        )));
    }
    Ok((0..k)
        .map(|user| {
            let h = h_eff.row(user);
            let mut desired = 0.0;
            let mut interference = 0.0;
            for stream in 0..k {
                let g: Complex64 = (0..m).map(|a| h[a] * w.w[(a, stream)]).sum();
                if stream == user {
                    desired = g.norm_sqr();
                } else {
                    interference += g.norm_sqr();
                }
            }
            (desired, interference)
        })
        .collect())
}

/// SINR of every user for noise power `noise` (watts, shared by all users).
pub fn sinr_per_user(h_eff: &CMatrix, w: &Beamformer, noise: f64) -> Result<Vec<f64>> {
    if !(noise >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise power {noise}")));
    }
    Ok(signal_interference(h_eff, w)?
        .into_iter()
        .map(|(s, i)| s / (i + noise))
        .collect())
}

/// Per-user rates `log2(1 + SINR)` and their sum.
pub fn rates(sinr: &[f64]) -> Result<(Vec<f64>, f64)> {
    if let Some(bad) = sinr.iter().find(|s| !(**s >= 0.0)) {
        return Err(Error::InvalidArgument(format!("SINR {bad} is negative or NaN")));
    }
    let r: Vec<f64> = sinr.iter().map(|s| s.ln_1p() / std::f64::consts::LN_2).collect();
    let sum = r.iter().sum();
    Ok((r, sum))
}

/// Scales `w_raw` down onto `tr(WᴴW) ≤ p_max` when it is infeasible;
/// feasible inputs are returned unchanged.
pub fn project_power(w_raw: CMatrix, p_max: f64) -> Beamformer {
    let power = w_raw.frobenius_sq();
    if power <= p_max {
        return Beamformer { w: w_raw };
    }
    let mut w = w_raw.scale((p_max / power).sqrt());
    // rounding can leave the trace a hair above p_max
    while w.frobenius_sq() > p_max {
        w = w.scale(1.0 - 1e-15);
    }
    Beamformer { w }
}

/// Scales `w_raw` so that `tr(WᴴW) = p_max`; a zero matrix stays zero.
pub fn normalize_power(w_raw: CMatrix, p_max: f64) -> Beamformer {
    let power = w_raw.frobenius_sq();
    if power == 0.0 {
        return Beamformer { w: w_raw };
    }
    let w = w_raw.scale((p_max / power).sqrt());
    project_power(w, p_max)
}

/// Phase of each entry; exact zeros map to θ = 0.
pub fn project_unit_modulus(phi_raw: &[Complex64]) -> PhaseShift {
    PhaseShift::new(
        phi_raw
            .iter()
            .map(|z| if z.norm_sqr() == 0.0 { 0.0 } else { z.arg() })
            .collect(),
    )
}

/// Full link report for design `(w, phase)` on `state`.
pub fn evaluate(state: &ChannelState, w: &Beamformer, phase: &PhaseShift, noise: f64) -> Result<LinkReport> {
    let h_eff = effective_channel(state, phase)?;
    let sinr = sinr_per_user(&h_eff, w, noise)?;
    let (rate, sum_rate) = rates(&sinr)?;
    Ok(LinkReport {
        sinr,
        rate,
        sum_rate,
        tx_power: w.tx_power(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{draw_cn, matmul, Rng};
    use std::f64::consts::TAU;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_state(seed: u64, m: usize, n: usize, k: usize) -> ChannelState {
        let mut rng = Rng::new(seed);
        ChannelState {
            h1: draw_cn(&mut rng, n, m),
            h2: draw_cn(&mut rng, k, n),
            t: 0,
        }
    }

    #[test]
    fn effective_channel_identity_case() {
        let n = 3;
        let state = ChannelState {
            h1: CMatrix::identity(n),
            h2: CMatrix::from_fn(1, n, |_, _| c(1.0, 0.0)),
            t: 0,
        };
        let h = effective_channel(&state, &PhaseShift::zeros(n)).unwrap();
        assert!(h.as_slice().iter().all(|z| (z - c(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn effective_channel_single_element_modulus() {
        let state = random_state(4, 3, 1, 2);
        let base = effective_channel(&state, &PhaseShift::zeros(1)).unwrap();
        for theta in [0.3, 1.7, 4.0] {
            let h = effective_channel(&state, &PhaseShift::new(vec![theta])).unwrap();
            for (a, b) in h.as_slice().iter().zip(base.as_slice()) {
                assert!((a.norm() - b.norm()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn effective_channel_matches_triple_product() {
        let state = random_state(5, 4, 6, 3);
        let mut rng = Rng::new(6);
        let phase = PhaseShift::new((0..6).map(|_| rng.uniform_range(0.0, TAU)).collect());
        let phi = CMatrix::diag(&phase.phasors());
        let oracle = matmul(&matmul(&state.h2, &phi).unwrap(), &state.h1).unwrap();
        let h = effective_channel(&state, &phase).unwrap();
        for (a, b) in h.as_slice().iter().zip(oracle.as_slice()) {
            assert!((a - b).norm() <= 1e-12);
        }
        let bad = PhaseShift::zeros(5);
        assert!(effective_channel(&state, &bad).is_err());
    }

    #[test]
    fn sinr_single_user_and_identity() {
        let h = CMatrix::from_row_major(1, 2, vec![c(1.0, 1.0), c(0.0, 2.0)]).unwrap();
        let w = Beamformer {
            w: CMatrix::column(vec![c(0.5, 0.0), c(0.0, -1.0)]),
        };
        let g = c(1.0, 1.0) * 0.5 + c(0.0, 2.0) * c(0.0, -1.0);
        let s = sinr_per_user(&h, &w, 0.2).unwrap();
        assert!((s[0] - g.norm_sqr() / 0.2).abs() < 1e-12);

        // H_eff · W = I, σ² = 0.1
        let s = sinr_per_user(&CMatrix::identity(2), &Beamformer { w: CMatrix::identity(2) }, 0.1).unwrap();
        assert!(s.iter().all(|&x| (x - 10.0).abs() < 1e-12));
        let (r, sum) = rates(&s).unwrap();
        assert!((r[0] - 3.4594).abs() < 5e-5);
        assert!((sum - 6.9189).abs() < 5e-5);
    }

    #[test]
    fn sinr_is_scale_invariant_without_noise() {
        let state = random_state(8, 4, 5, 3);
        let h = effective_channel(&state, &PhaseShift::zeros(5)).unwrap();
        let w = Beamformer {
            w: draw_cn(&mut Rng::new(9), 4, 3),
        };
        let a = sinr_per_user(&h, &w, 1e-300).unwrap();
        let b = sinr_per_user(&h, &Beamformer { w: w.w.scale(3.0_f64.sqrt()) }, 1e-300).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x / y - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn signal_interference_split_is_exhaustive() {
        let state = random_state(10, 4, 6, 3);
        let h = effective_channel(&state, &PhaseShift::zeros(6)).unwrap();
        let w = Beamformer {
            w: draw_cn(&mut Rng::new(11), 4, 3),
        };
        let hw = matmul(&h, &w.w).unwrap();
        for (k, (s, i)) in signal_interference(&h, &w).unwrap().into_iter().enumerate() {
            let row: f64 = hw.row(k).iter().map(|z| z.norm_sqr()).sum();
            assert!((s + i - row).abs() <= 1e-10 * row);
        }
    }

    #[test]
    fn rate_cases() {
        let (r, sum) = rates(&[1.0, 3.0]).unwrap();
        assert_eq!(r, vec![1.0, 2.0]);
        assert_eq!(sum, 3.0);
        assert_eq!(rates(&[0.0]).unwrap().0, vec![0.0]);
        assert!(rates(&[-0.1]).is_err());
        assert!(rates(&[f64::NAN]).is_err());
    }

    #[test]
    fn power_projection_cases() {
        // trace 5 <= 10: unchanged
        let w = CMatrix::diag(&[c(2.0, 0.0), c(0.0, 1.0)]);
        assert_eq!(project_power(w.clone(), 10.0).w, w);

        let w = CMatrix::identity(2).scale(2.0);
        let p = project_power(w, 2.0);
        for (a, b) in p.w.as_slice().iter().zip(CMatrix::identity(2).as_slice()) {
            assert!((a - b).norm() < 1e-12);
        }
        assert!(p.tx_power() <= 2.0 + 1e-9);

        let n = normalize_power(CMatrix::identity(2), 8.0);
        assert!((n.tx_power() - 8.0).abs() < 1e-9);
        assert_eq!(normalize_power(CMatrix::zeros(2, 2), 8.0).tx_power(), 0.0);
    }

    #[test]
    fn unit_modulus_projection_cases() {
        let p = project_unit_modulus(&[c(3.0, 4.0), c(1.0, 0.0), c(0.0, 0.0)]);
        assert!((p.theta()[0] - 0.9273).abs() < 1e-4);
        let z = p.phasors()[0];
        assert!((z - c(0.6, 0.8)).norm() < 1e-12);
        assert_eq!(p.theta()[1], 0.0);
        assert_eq!(p.theta()[2], 0.0);
        // negative angles wrap into [0, 2π)
        let q = project_unit_modulus(&[c(0.0, -1.0)]);
        assert!((q.theta()[0] - 1.5 * std::f64::consts::PI).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use crate::numerics::Rng;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(128))]

            #[test]
            fn rates_monotone(a in 0.0f64..1e6, b in 0.0f64..1e6) {
                let (ra, _) = rates(&[a]).unwrap();
                let (rb, _) = rates(&[b]).unwrap();
                if a <= b { prop_assert!(ra[0] <= rb[0]); } else { prop_assert!(ra[0] >= rb[0]); }
            }

            #[test]
            fn projections_idempotent(seed in any::<u64>(), p_max in 0.01f64..100.0, gain in 0.01f64..100.0) {
                let mut rng = Rng::new(seed);
                let w = draw_cn(&mut rng, 3, 2).scale(gain);
                let once = project_power(w, p_max);
                prop_assert!(once.tx_power() <= p_max + 1e-9);
                let twice = project_power(once.w.clone(), p_max);
                prop_assert_eq!(&once, &twice);

                let phases = project_unit_modulus(&draw_cn(&mut rng, 5, 1).as_slice().to_vec());
                for z in phases.phasors() {
                    prop_assert!((z.norm() - 1.0).abs() <= 1e-12);
                }
                let again = project_unit_modulus(&phases.phasors());
                for (a, b) in again.theta().iter().zip(phases.theta()) {
                    let d = (a - b).abs();
                    prop_assert!(d < 1e-12 || (d - TAU).abs() < 1e-12);
                }
            }
        }
    }
}
