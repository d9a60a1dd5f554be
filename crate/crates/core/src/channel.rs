//! Channel generation: path loss, array steering vectors, the Rician BS→RIS
//! channel `H1` (N×M), the Rayleigh RIS→user channel `H2` (K×N), and their
//! AR(1) evolution over coherence intervals.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, TAU};

use crate::numerics::{draw_cn, hermitian, matmul, CMatrix, Rng};
use crate::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Stream namespace used to draw scenario geometry (angles).
const SCENARIO_STREAM: u64 = 0x5CE4_A510 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathlossMode {
    /// `22·log10(d) + 28 + log10(f_GHz)`, the formula exactly as printed.
    PaperLiteral,
    /// 3GPP TR 36.873 UMi form `22·log10(d) + 28 + 20·log10(f_GHz)`.
    Tr36873,
}

/// Physical and geometric parameters of one scenario.
///
/// Units: watts, dBm/Hz, Hz, dB, meters, radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub m_antennas: usize,
    pub n_ris: usize,
    /// Elements per RIS row; `n_ris / n_x` rows.
    pub n_x: usize,
    pub k_users: usize,
    pub p_max: f64,
    pub noise_density: f64,
    pub bandwidth: f64,
    pub fc: f64,
    pub rician_k_db: f64,
    pub rho: f64,
    pub d_bs_ris: f64,
    pub d_ris_user: Vec<f64>,
    pub z_r: f64,
    pub d_a: f64,
    pub d_c: f64,
    pub phi_a: f64,
    pub psi_a: f64,
    pub phi_d: f64,
    pub pathloss_mode: PathlossMode,
}

/// Elements per row for a near-square `n`-element planar array: the
/// smallest divisor of `n` that is at least `√n`.
pub fn near_square_row_len(n: usize) -> usize {
    (1..=n.max(1))
        .find(|&d| n % d == 0 && d * d >= n)
        .unwrap_or(1)
}

impl SystemConfig {
    /// Default parameter table (M = 8, N = 32, K = 4, 10 W, ρ = 0.95,
    /// −174 dBm/Hz, 5 GHz, Rician factor 3 dB) with angles drawn from
    /// `scenario_seed`.
    pub fn table1(scenario_seed: u64) -> Self {
        let fc = 5e9;
        let half_wave = SPEED_OF_LIGHT / fc / 2.0;
        let mut rng = Rng::with_stream(scenario_seed, SCENARIO_STREAM);
        let phi_a = rng.uniform_range(0.0, TAU);
        let psi_a = rng.uniform_range(-FRAC_PI_2, FRAC_PI_2);
        let phi_d = rng.uniform_range(0.0, TAU);
        Self {
            m_antennas: 8,
            n_ris: 32,
            n_x: 8,
            k_users: 4,
            p_max: 10.0,
            noise_density: -174.0,
            bandwidth: 10e6,
            fc,
            rician_k_db: 3.0,
            rho: 0.95,
            d_bs_ris: 50.0,
            d_ris_user: vec![20.0; 4],
            z_r: 10.0,
            d_a: half_wave,
            d_c: half_wave,
            phi_a,
            psi_a,
            phi_d,
            pathloss_mode: PathlossMode::Tr36873,
        }
    }

    /// Small configuration for learning experiments: M = 4, N = 8, K = 2.
    pub fn desk(scenario_seed: u64) -> Self {
        Self::table1(scenario_seed).with_dims(4, 8, 2)
    }

    /// Same scenario with new array sizes; users keep the first user's
    /// distance and the RIS gets a near-square layout.
    pub fn with_dims(mut self, m: usize, n: usize, k: usize) -> Self {
        let d = self.d_ris_user.first().copied().unwrap_or(20.0);
        self.m_antennas = m;
        self.k_users = k;
        self.d_ris_user = vec![d; k];
        self.with_n_ris(n)
    }

    pub fn with_n_ris(mut self, n: usize) -> Self {
        self.n_ris = n;
        self.n_x = near_square_row_len(n);
        self
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.fc
    }

    pub fn n_y(&self) -> usize {
        self.n_ris / self.n_x.max(1)
    }

    /// Noise power per user in watts: density integrated over the bandwidth.
    pub fn noise_power(&self) -> f64 {
        let dbm = self.noise_density + 10.0 * self.bandwidth.log10();
        10f64.powf((dbm - 30.0) / 10.0)
    }

    /// Rician factor as a linear power ratio.
    pub fn rician_factor(&self) -> f64 {
        10f64.powf(self.rician_k_db / 10.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.m_antennas == 0 || self.n_ris == 0 || self.k_users == 0 {
            return bad("m_antennas, n_ris and k_users must be at least 1".into());
        }
        if self.k_users > self.m_antennas {
            return bad(format!(
                "k_users = {} exceeds m_antennas = {}; zero-forcing needs K <= M",
                self.k_users, self.m_antennas
            ));
        }
        if self.n_x == 0 || self.n_ris % self.n_x != 0 {
            return bad(format!("n_x = {} does not divide n_ris = {}", self.n_x, self.n_ris));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad(format!("rho = {} outside (0, 1)", self.rho));
        }
        if !(self.p_max > 0.0 && self.p_max.is_finite()) {
            return bad(format!("p_max = {} must be positive", self.p_max));
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) || !(self.fc > 0.0 && self.fc.is_finite()) {
            return bad("bandwidth and fc must be positive".into());
        }
        if !self.noise_density.is_finite() || !self.rician_k_db.is_finite() {
            return bad("noise_density and rician_k_db must be finite".into());
        }
        if self.d_ris_user.len() != self.k_users {
            return bad(format!(
                "d_ris_user has {} entries for {} users",
                self.d_ris_user.len(),
                self.k_users
            ));
        }
        let distances = [self.d_bs_ris, self.z_r, self.d_a, self.d_c]
            .into_iter()
            .chain(self.d_ris_user.iter().copied());
        for d in distances {
            if !(d > 0.0 && d.is_finite()) {
                return bad(format!("distance {d} must be positive"));
            }
        }
        for (name, v) in [("phi_a", self.phi_a), ("phi_d", self.phi_d)] {
            if !(0.0..TAU).contains(&v) {
                return bad(format!("{name} = {v} outside [0, 2pi)"));
            }
        }
        if !(-FRAC_PI_2..FRAC_PI_2).contains(&self.psi_a) {
            return bad(format!("psi_a = {} outside [-pi/2, pi/2)", self.psi_a));
        }
        Ok(())
    }

    /// Parses and validates a JSON document; unknown fields are rejected.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Channel matrices at one coherence interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelState {
    /// BS→RIS, N×M.
    pub h1: CMatrix,
    /// RIS→users, K×N.
    pub h2: CMatrix,
    pub t: u64,
}

/// BS uniform linear array response, M×1.
pub fn steering_bs(config: &SystemConfig) -> CMatrix {
    let k = TAU * config.d_a * config.phi_d.sin() / config.wavelength();
    CMatrix::column(
        (0..config.m_antennas)
            .map(|m| Complex64::from_polar(1.0, k * m as f64))
            .collect(),
    )
}

/// RIS uniform planar array response, N×1. Element `n` (0-based) sits at
/// row `n / n_x`, column `n % n_x`.
pub fn steering_ris(config: &SystemConfig) -> CMatrix {
    let scale = TAU * config.d_c / config.wavelength();
    let row_phase = config.phi_a.sin() * config.psi_a.sin();
    let col_phase = config.phi_a.sin() * config.psi_a.cos();
    CMatrix::column(
        (0..config.n_ris)
            .map(|n| {
                let i1 = (n / config.n_x) as f64;
                let i2 = (n % config.n_x) as f64;
                Complex64::from_polar(1.0, scale * (i1 * row_phase + i2 * col_phase))
            })
            .collect(),
    )
}

/// BS→RIS path loss in dB (`d` in meters, `fc` in Hz).
pub fn pathloss_bs_ris_db(d: f64, fc: f64, mode: PathlossMode) -> f64 {
    let f_ghz = (fc / 1e9).log10();
    let base = 22.0 * d.log10() + 28.0;
    match mode {
        PathlossMode::Tr36873 => base + 20.0 * f_ghz,
        PathlossMode::PaperLiteral => base + f_ghz,
    }
}

/// RIS→user path loss in dB for a RIS mounted at height `z_r`.
pub fn pathloss_ris_user_db(d: f64, fc: f64, z_r: f64) -> f64 {
    36.7 * d.log10() + 22.7 + 26.0 * (fc / 1e9).log10() - 0.3 * (z_r - 1.5)
}

/// Rank-one line-of-sight component `a_RIS · a_BSᴴ`, N×M.
pub fn los_component(config: &SystemConfig) -> CMatrix {
    matmul(&steering_ris(config), &hermitian(&steering_bs(config))).expect("column times row")
}

/// Converts a loss in dB into an amplitude gain.
pub fn amplitude_gain(loss_db: f64) -> f64 {
    10f64.powf(-loss_db / 20.0)
}

/// Precomputed, scenario-constant quantities. Draws and AR steps through
/// this type are identical to the free functions but skip the setup work.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    config: SystemConfig,
    /// `A1 · sqrt(K_f / (K_f + 1)) · L`, the deterministic part of `H1`.
    h1_mean: CMatrix,
    h1_amplitude: f64,
    nlos_weight: f64,
    h2_amplitude: Vec<f64>,
    noise_power: f64,
}

impl ChannelModel {
    pub fn new(config: SystemConfig) -> Result<Self> {
        config.validate()?;
        let kf = config.rician_factor();
        let a1 = amplitude_gain(pathloss_bs_ris_db(config.d_bs_ris, config.fc, config.pathloss_mode));
        let los_weight = (kf / (kf + 1.0)).sqrt();
        let nlos_weight = (1.0 / (kf + 1.0)).sqrt();
        let h1_mean = los_component(&config).scale(a1 * los_weight);
        let h2_amplitude = config
            .d_ris_user
            .iter()
            .map(|&d| amplitude_gain(pathloss_ris_user_db(d, config.fc, config.z_r)))
            .collect();
        let noise_power = config.noise_power();
        Ok(Self {
            config,
            h1_mean,
            h1_amplitude: a1,
            nlos_weight,
            h2_amplitude,
            noise_power,
        })
    }

    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    pub fn noise_power(&self) -> f64 {
        self.noise_power
    }

    /// Path-loss amplitude of `H1`.
    pub fn h1_amplitude(&self) -> f64 {
        self.h1_amplitude
    }

    /// Per-user path-loss amplitude of the rows of `H2`.
    pub fn h2_amplitude(&self) -> &[f64] {
        &self.h2_amplitude
    }

    pub fn h1_mean(&self) -> &CMatrix {
        &self.h1_mean
    }

    pub fn draw_h1(&self, rng: &mut Rng) -> CMatrix {
        let g = draw_cn(rng, self.config.n_ris, self.config.m_antennas);
        self.h1_mean
            .axpby(1.0, &g, self.h1_amplitude * self.nlos_weight)
            .expect("same shape")
    }

    pub fn draw_h2(&self, rng: &mut Rng) -> CMatrix {
        let mut g = draw_cn(rng, self.config.k_users, self.config.n_ris);
        for (k, &amp) in self.h2_amplitude.iter().enumerate() {
            for z in g.row_mut(k) {
                *z *= amp;
            }
        }
        g
    }

    pub fn draw_state(&self, rng: &mut Rng) -> ChannelState {
        let h1 = self.draw_h1(rng);
        let h2 = self.draw_h2(rng);
        ChannelState { h1, h2, t: 0 }
    }

    /// One AR(1) step, `H ← ρH + sqrt(1−ρ²)Ĥ`, with `Ĥ` a fresh draw.
    ///
    /// The recursion acts on the zero-mean scattered part; the fixed
    /// line-of-sight mean of `H1` is carried through unchanged, so the
    /// process is stationary with the same law as a fresh draw.
    pub fn ar_step(&self, state: &ChannelState, rng: &mut Rng) -> Result<ChannelState> {
        let (n, m, k) = (self.config.n_ris, self.config.m_antennas, self.config.k_users);
        if state.h1.shape() != (n, m) || state.h2.shape() != (k, n) {
            return Err(Error::Shape(format!(
                "state has H1 {:?}, H2 {:?}; config wants ({n}, {m}), ({k}, {n})",
                state.h1.shape(),
                state.h2.shape()
            )));
        }
        let rho = self.config.rho;
        let innov = (1.0 - rho * rho).sqrt();
        let fresh_h1 = self.draw_h1(rng);
        let fresh_h2 = self.draw_h2(rng);
        let mean_shift = 1.0 - rho - innov;
        let mut h1 = state.h1.axpby(rho, &fresh_h1, innov)?;
        for (z, &mu) in h1.as_mut_slice().iter_mut().zip(self.h1_mean.as_slice()) {
            *z += mu * mean_shift;
        }
        let h2 = state.h2.axpby(rho, &fresh_h2, innov)?;
        Ok(ChannelState { h1, h2, t: state.t + 1 })
    }
}

pub fn draw_h1(config: &SystemConfig, rng: &mut Rng) -> Result<CMatrix> {
    Ok(ChannelModel::new(config.clone())?.draw_h1(rng))
}

pub fn draw_h2(config: &SystemConfig, rng: &mut Rng) -> Result<CMatrix> {
    Ok(ChannelModel::new(config.clone())?.draw_h2(rng))
}

pub fn ar_step(state: &ChannelState, config: &SystemConfig, rng: &mut Rng) -> Result<ChannelState> {
    ChannelModel::new(config.clone())?.ar_step(state, rng)
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let w = theta.rem_euclid(TAU);
    // rem_euclid can round up to exactly 2π for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}
