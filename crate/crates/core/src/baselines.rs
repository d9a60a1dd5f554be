//! Classical benchmark designs.
//!
//! Both benchmarks use full-power zero-forcing at the BS. `zfr_policy` pairs
//! it with uniformly random RIS phases; `sfp_policy` optimizes the phases by
//! deterministic element-wise coordinate ascent on the ZF sum rate (a
//! 64-point grid per element followed by a golden-section refinement around
//! the best grid point).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{LN_2, TAU};

use crate::channel::{ChannelState, SystemConfig};
use crate::link::{self, effective_channel, Beamformer, PhaseShift};
use crate::numerics::{hermitian, matmul, solve_hermitian_system, CMatrix, Rng};
use crate::{Error, Result};

/// `G = H Hᴴ` for a K×M effective channel, with a shape check.
fn gram(h_eff: &CMatrix) -> Result<CMatrix> {
    let (k, m) = h_eff.shape();
    if k > m {
        return Err(Error::Shape(format!("zero-forcing needs K <= M, got K = {k}, M = {m}")));
    }
    matmul(h_eff, &hermitian(h_eff))
}

/// Full-power zero-forcing: `W ∝ Hᴴ(HHᴴ)⁻¹` scaled to `tr(WᴴW) = p_max`.
pub fn zf_beamformer(h_eff: &CMatrix, p_max: f64) -> Result<Beamformer> {
    let g = gram(h_eff)?;
    let inv = solve_hermitian_system(&g, &CMatrix::identity(h_eff.rows()))?;
    let w0 = matmul(&hermitian(h_eff), &inv.x)?;
    Ok(link::normalize_power(w0, p_max))
}

/// Sum rate of full-power ZF without forming `W`: every user sees
/// `SINR = p_max / (σ² · tr((HHᴴ)⁻¹))`.
pub fn zf_sum_rate(h_eff: &CMatrix, p_max: f64, noise: f64) -> Result<f64> {
    let k = h_eff.rows();
    let g = gram(h_eff)?;
    let inv = solve_hermitian_system(&g, &CMatrix::identity(k))?;
    let tr = inv.x.trace().re;
    if !(tr > 0.0) {
        return Err(Error::Singular);
    }
    let sinr = p_max / (noise * tr);
    Ok(k as f64 * sinr.ln_1p() / LN_2)
}

/// Uniformly random phases in `[0, 2π)`.
pub fn random_phases(n: usize, rng: &mut Rng) -> PhaseShift {
    PhaseShift::new((0..n).map(|_| rng.uniform_range(0.0, TAU)).collect())
}

/// ZF + random RIS phases.
pub fn zfr_policy(state: &ChannelState, rng: &mut Rng, config: &SystemConfig) -> Result<(Beamformer, PhaseShift)> {
    if config.n_ris == 0 {
        return Err(Error::Config("n_ris must be at least 1".into()));
    }
    let phase = random_phases(config.n_ris, rng);
    let h_eff = effective_channel(state, &phase)?;
    Ok((zf_beamformer(&h_eff, config.p_max)?, phase))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SfpSettings {
    pub max_iters: usize,
    /// Stop when a full sweep improves the sum rate by less than this fraction.
    pub tol: f64,
    /// Random re-initializations allowed when ZF fails at the start point.
    pub restarts: usize,
    /// Grid points per element search.
    pub grid: usize,
    /// Seeds the restart initializations.
    pub seed: u64,
}

impl Default for SfpSettings {
    fn default() -> Self {
        Self {
            max_iters: 20,
            tol: 1e-4,
            restarts: 3,
            grid: 64,
            seed: 0,
        }
    }
}

impl SfpSettings {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || self.grid == 0 || !(self.tol > 0.0) {
            return Err(Error::Config("SFP needs max_iters >= 1, grid >= 1 and tol > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SfpOutcome {
    pub w: Beamformer,
    pub phase: PhaseShift,
    /// Sum rate at the start point and after every sweep; non-decreasing.
    pub trace: Vec<f64>,
}

/// Effective channel as a sum of per-element rank-one terms, for cheap
/// single-element phase updates.
struct ElementTerms {
    terms: Vec<CMatrix>,
}

impl ElementTerms {
    fn new(state: &ChannelState) -> Self {
        let (k, n) = state.h2.shape();
        let m = state.h1.cols();
        let terms = (0..n)
            .map(|e| CMatrix::from_fn(k, m, |u, a| state.h2[(u, e)] * state.h1[(e, a)]))
            .collect();
        Self { terms }
    }

    fn combine(&self, phase: &PhaseShift) -> CMatrix {
        let (k, m) = self.terms[0].shape();
        let mut h = CMatrix::zeros(k, m);
        for (term, p) in self.terms.iter().zip(phase.phasors()) {
            for (o, &t) in h.as_mut_slice().iter_mut().zip(term.as_slice()) {
                *o += p * t;
            }
        }
        h
    }
}

struct Objective<'a> {
    terms: &'a ElementTerms,
    p_max: f64,
    noise: f64,
    scratch: CMatrix,
}

impl Objective<'_> {
    /// Sum rate with element `e` set to `theta`, given `rest` = H_eff without element `e`.
    fn with_element(&mut self, rest: &CMatrix, e: usize, theta: f64) -> f64 {
        let p = Complex64::from_polar(1.0, theta);
        for ((o, &r), &t) in self
            .scratch
            .as_mut_slice()
            .iter_mut()
            .zip(rest.as_slice())
            .zip(self.terms.terms[e].as_slice())
        {
            *o = r + p * t;
        }
        zf_sum_rate(&self.scratch, self.p_max, self.noise).unwrap_or(f64::NEG_INFINITY)
    }
}

const GOLDEN: f64 = 0.618_033_988_749_894_8;
const GOLDEN_STEPS: usize = 24;

/// ZF with coordinate-ascent RIS phases. Deterministic for a given
/// `(state, settings)`.
pub fn sfp_policy(state: &ChannelState, settings: &SfpSettings, config: &SystemConfig) -> Result<SfpOutcome> {
    settings.validate()?;
    let n = state.h1.rows();
    if n == 0 || n != config.n_ris {
        return Err(Error::Shape(format!("state has {n} RIS elements, config {}", config.n_ris)));
    }
    let noise = config.noise_power();
    let terms = ElementTerms::new(state);

    let mut init_rng = Rng::with_stream(settings.seed, 0x5F9);
    let mut phase = PhaseShift::zeros(n);
    let mut attempts = 0;
    let start = loop {
        match zf_sum_rate(&terms.combine(&phase), config.p_max, noise) {
            Ok(r) => break r,
            Err(e) => {
                if attempts >= settings.restarts {
                    return Err(e);
                }
                attempts += 1;
                phase = random_phases(n, &mut init_rng);
            }
        }
    };

    let mut objective = Objective {
        terms: &terms,
        p_max: config.p_max,
        noise,
        scratch: CMatrix::zeros(state.h2.rows(), state.h1.cols()),
    };
    let step = TAU / settings.grid as f64;
    let mut current = start;
    let mut trace = vec![start];
    let mut h_eff = terms.combine(&phase);

    for _ in 0..settings.max_iters {
        let before = current;
        for e in 0..n {
            let old = Complex64::from_polar(1.0, phase.theta()[e]);
            let rest = CMatrix::from_row_major(
                h_eff.rows(),
                h_eff.cols(),
                h_eff
                    .as_slice()
                    .iter()
                    .zip(terms.terms[e].as_slice())
                    .map(|(&h, &t)| h - old * t)
                    .collect(),
            )
            .expect("same shape");

            let mut best_theta = phase.theta()[e];
            let mut best = current;
            let mut grid_best = (f64::NEG_INFINITY, 0.0);
            for g in 0..settings.grid {
                let theta = g as f64 * step;
                let v = objective.with_element(&rest, e, theta);
                if v > grid_best.0 {
                    grid_best = (v, theta);
                }
            }
            if grid_best.0 > best {
                best = grid_best.0;
                best_theta = grid_best.1;
            }

            // golden-section refinement on [g* − step, g* + step]
            let (mut lo, mut hi) = (grid_best.1 - step, grid_best.1 + step);
            let mut x1 = hi - GOLDEN * (hi - lo);
            let mut x2 = lo + GOLDEN * (hi - lo);
            let mut f1 = objective.with_element(&rest, e, x1);
            let mut f2 = objective.with_element(&rest, e, x2);
            for _ in 0..GOLDEN_STEPS {
                if f1 < f2 {
                    lo = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = lo + GOLDEN * (hi - lo);
                    f2 = objective.with_element(&rest, e, x2);
                } else {
                    hi = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = hi - GOLDEN * (hi - lo);
                    f1 = objective.with_element(&rest, e, x1);
                }
            }
            let (gv, gx) = if f1 > f2 { (f1, x1) } else { (f2, x2) };
            if gv > best {
                best = gv;
                best_theta = gx;
            }

            if best > current {
                current = best;
                phase.set(e, best_theta);
                let p = Complex64::from_polar(1.0, phase.theta()[e]);
                for ((o, &r), &t) in h_eff.as_mut_slice().iter_mut().zip(rest.as_slice()).zip(terms.terms[e].as_slice()) {
                    *o = r + p * t;
                }
            }
        }
        trace.push(current);
        if (current - before) <= settings.tol * before.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }

    let h_eff = effective_channel(state, &phase)?;
    let w = zf_beamformer(&h_eff, config.p_max)?;
    Ok(SfpOutcome { w, phase, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelModel;
    use crate::link::{evaluate, signal_interference};
    use crate::numerics::draw_cn;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn offdiag_ratio(h: &CMatrix, w: &Beamformer) -> f64 {
        let hw = matmul(h, &w.w).unwrap();
        let (mut off, mut diag) = (0.0, 0.0);
        for i in 0..hw.rows() {
            for j in 0..hw.cols() {
                if i == j {
                    diag += hw[(i, j)].norm_sqr();
                } else {
                    off += hw[(i, j)].norm_sqr();
                }
            }
        }
        (off / diag).sqrt()
    }

    #[test]
    fn zf_identity() {
        let w = zf_beamformer(&CMatrix::identity(2), 2.0).unwrap();
        for (a, b) in w.w.as_slice().iter().zip(CMatrix::identity(2).as_slice()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn zf_diagonal_channel() {
        let h = CMatrix::diag(&[c(1.0, 0.0), c(2.0, 0.0)]);
        let w = zf_beamformer(&h, 3.7).unwrap();
        let hw = matmul(&h, &w.w).unwrap();
        assert!(hw[(0, 1)].norm() <= 1e-12 && hw[(1, 0)].norm() <= 1e-12);
        assert!((w.tx_power() - 3.7).abs() < 1e-9);
    }

    #[test]
    fn zf_nulls_interference_on_random_channels() {
        for seed in 0..100 {
            let h = draw_cn(&mut Rng::new(seed), 2, 4);
            let w = zf_beamformer(&h, 10.0).unwrap();
            assert!(offdiag_ratio(&h, &w) <= 1e-10, "seed {seed}");
            assert!((w.tx_power() - 10.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn zf_rejects_rank_deficient_and_wide() {
        let row = [c(1.0, 0.0), c(0.5, -0.2), c(0.0, 1.0)];
        let h = CMatrix::from_row_major(2, 3, row.iter().chain(row.iter()).copied().collect()).unwrap();
        assert!(matches!(zf_beamformer(&h, 1.0), Err(Error::Singular)));
        assert!(matches!(zf_beamformer(&CMatrix::zeros(3, 2), 1.0), Err(Error::Shape(_))));
    }

    #[test]
    fn zf_closed_form_matches_link_evaluation() {
        let cfg = SystemConfig::desk(3);
        let model = ChannelModel::new(cfg.clone()).unwrap();
        let mut rng = Rng::new(5);
        for _ in 0..20 {
            let s = model.draw_state(&mut rng);
            let (w, phase) = zfr_policy(&s, &mut rng, &cfg).unwrap();
            let h = effective_channel(&s, &phase).unwrap();
            let report = evaluate(&s, &w, &phase, model.noise_power()).unwrap();
            let closed = zf_sum_rate(&h, cfg.p_max, model.noise_power()).unwrap();
            assert!((report.sum_rate - closed).abs() <= 1e-9 * closed.max(1e-12));
            // interference is negligible, so SINR reduces to the diagonal terms
            for (k, (sig, intf)) in signal_interference(&h, &w).unwrap().into_iter().enumerate() {
                assert!(intf <= 1e-20 * sig);
                assert!((report.sinr[k] - sig / model.noise_power()).abs() <= 1e-9 * report.sinr[k]);
            }
        }
    }

    #[test]
    fn zfr_is_seeded() {
        let cfg = SystemConfig::desk(3);
        let model = ChannelModel::new(cfg.clone()).unwrap();
        let s = model.draw_state(&mut Rng::new(1));
        let a = zfr_policy(&s, &mut Rng::new(2), &cfg).unwrap().1;
        let b = zfr_policy(&s, &mut Rng::new(2), &cfg).unwrap().1;
        assert_eq!(a, b);
    }

    #[test]
    fn sfp_two_elements_single_user_aligns_phases() {
        // K = 1, N = 2: |h|² = ‖a‖² + ‖b‖² + 2 Re(e^{j(θ1−θ2)} Σ a conj(b)),
        // maximized at θ1 − θ2 = −arg(Σ a conj(b)).
        let mut cfg = SystemConfig::desk(2).with_dims(3, 2, 1);
        cfg.n_x = 2;
        for seed in 0..10 {
            let mut rng = Rng::new(40 + seed);
            let state = ChannelState {
                h1: draw_cn(&mut rng, 2, 3),
                h2: draw_cn(&mut rng, 1, 2),
                t: 0,
            };
            let a: Vec<Complex64> = state.h1.row(0).iter().map(|&x| x * state.h2[(0, 0)]).collect();
            let b: Vec<Complex64> = state.h1.row(1).iter().map(|&x| x * state.h2[(0, 1)]).collect();
            let cross: Complex64 = a.iter().zip(&b).map(|(x, y)| x * y.conj()).sum();
            let out = sfp_policy(&state, &SfpSettings::default(), &cfg).unwrap();
            let diff = out.phase.theta()[0] - out.phase.theta()[1] + cross.arg();
            let wrapped = diff.rem_euclid(TAU);
            let err = wrapped.min(TAU - wrapped);
            assert!(err <= TAU / 64.0, "seed {seed}: {err}");
        }
    }

    #[test]
    fn single_element_single_user_rate_is_phase_free() {
        let mut cfg = SystemConfig::desk(2).with_dims(3, 1, 1);
        cfg.n_x = 1;
        let mut rng = Rng::new(8);
        let state = ChannelState {
            h1: draw_cn(&mut rng, 1, 3),
            h2: draw_cn(&mut rng, 1, 1),
            t: 0,
        };
        let noise = cfg.noise_power();
        let norm2 = state.h2[(0, 0)].norm_sqr() * state.h1.frobenius_sq();
        let want = (1.0 + cfg.p_max * norm2 / noise).log2();
        for theta in [0.0, 1.0, 3.0] {
            let h = effective_channel(&state, &PhaseShift::new(vec![theta])).unwrap();
            assert!((zf_sum_rate(&h, cfg.p_max, noise).unwrap() - want).abs() < 1e-9 * want);
        }
        let out = sfp_policy(&state, &SfpSettings::default(), &cfg).unwrap();
        assert!((out.trace.last().unwrap() - want).abs() < 1e-9 * want);
    }

    #[test]
    fn sfp_trace_monotone_and_beats_zfr() {
        let cfg = SystemConfig::desk(4).with_n_ris(16);
        let model = ChannelModel::new(cfg.clone()).unwrap();
        let settings = SfpSettings::default();
        for seed in 0..100 {
            let mut rng = Rng::new(1000 + seed);
            let s = model.draw_state(&mut rng);
            let out = sfp_policy(&s, &settings, &cfg).unwrap();
            assert!(out.trace.windows(2).all(|w| w[1] >= w[0]), "seed {seed}");
            let sfp = evaluate(&s, &out.w, &out.phase, model.noise_power()).unwrap().sum_rate;
            assert!((sfp - out.trace.last().unwrap()).abs() <= 1e-9 * sfp);
            let (w, p) = zfr_policy(&s, &mut rng, &cfg).unwrap();
            let zfr = evaluate(&s, &w, &p, model.noise_power()).unwrap().sum_rate;
            assert!(sfp >= zfr, "seed {seed}: {sfp} < {zfr}");
        }
    }

    #[test]
    fn sfp_prefix_property() {
        let cfg = SystemConfig::desk(4);
        let model = ChannelModel::new(cfg.clone()).unwrap();
        let s = model.draw_state(&mut Rng::new(3));
        let full = sfp_policy(&s, &SfpSettings { max_iters: 6, tol: 1e-12, ..Default::default() }, &cfg).unwrap();
        for iters in 1..=6 {
            let part = sfp_policy(&s, &SfpSettings { max_iters: iters, tol: 1e-12, ..Default::default() }, &cfg).unwrap();
            assert_eq!(part.trace[..], full.trace[..part.trace.len()]);
        }
        let again = sfp_policy(&s, &SfpSettings { max_iters: 6, tol: 1e-12, ..Default::default() }, &cfg).unwrap();
        assert_eq!(again.phase, full.phase);
    }

    #[test]
    fn sfp_rejects_bad_settings() {
        let cfg = SystemConfig::desk(4);
        let model = ChannelModel::new(cfg.clone()).unwrap();
        let s = model.draw_state(&mut Rng::new(3));
        assert!(sfp_policy(&s, &SfpSettings { max_iters: 0, ..Default::default() }, &cfg).is_err());
        assert!(sfp_policy(&s, &SfpSettings { tol: 0.0, ..Default::default() }, &cfg).is_err());
    }
}
