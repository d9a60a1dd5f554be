//! Experiment descriptions and their presets.

use std::path::PathBuf;

use rismeta_agents::trainer::DdpgTrainConfig;
use rismeta_agents::{DdpgConfig, FarmConfig, SacConfig};
use rismeta_core::baselines::SfpSettings;
use rismeta_core::SystemConfig;
use serde::{Deserialize, Serialize};

use crate::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ZFR")]
    Zfr,
    #[serde(rename = "SFP")]
    Sfp,
    #[serde(rename = "DDPG")]
    Ddpg,
    #[serde(rename = "SAC")]
    Sac,
    #[serde(rename = "FARM")]
    Farm,
    #[serde(rename = "FARM_nomap")]
    FarmNomap,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::Zfr, Method::Sfp, Method::Ddpg, Method::Sac, Method::Farm, Method::FarmNomap];

    pub fn name(self) -> &'static str {
        match self {
            Method::Zfr => "ZFR",
            Method::Sfp => "SFP",
            Method::Ddpg => "DDPG",
            Method::Sac => "SAC",
            Method::Farm => "FARM",
            Method::FarmNomap => "FARM_nomap",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn is_learned(self) -> bool {
        !matches!(self, Method::Zfr | Method::Sfp)
    }

    /// The trained agent this method evaluates; the map-free variant shares
    /// the meta-agent's checkpoint.
    pub fn trained_as(self) -> Option<Method> {
        match self {
            Method::Zfr | Method::Sfp => None,
            Method::FarmNomap => Some(Method::Farm),
            m => Some(m),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    NRis,
    Rho,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::NRis => "n_ris",
            SweepVariable::Rho => "rho",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// M = 4, K = 2 learning sweep over ρ.
    Desk,
    /// Full-size classical sweep over N.
    Table1,
}

/// Training budgets for the learned methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSpec {
    pub train_tasks: usize,
    pub farm: FarmConfig,
    pub ddpg: DdpgTrainConfig,
}

impl Default for TrainingSpec {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainingSpec {
    /// Budgets that fit the desk configuration on a single CPU core.
    ///
    /// The channel evolves independently of the actions, so the per-step sum
    /// rate is the whole objective and γ = 0 is exact.
    pub fn desk() -> Self {
        let sac = SacConfig {
            hidden: vec![128, 128],
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            alpha_lr: 1e-3,
            gamma: 0.0,
            batch_size: 128,
            reward_scale: 10.0,
            ..SacConfig::default()
        };
        Self {
            train_tasks: 8,
            farm: FarmConfig {
                encoder_hidden: vec![64],
                embed_dim: 32,
                decoder_hidden: vec![64],
                sac,
                epochs: 30,
                elbo_steps: 20,
                sac_steps: 200,
                eval_len: 20,
                ..FarmConfig::default()
            },
            ddpg: DdpgTrainConfig {
                ddpg: DdpgConfig {
                    hidden: vec![128, 128],
                    actor_lr: 1e-3,
                    critic_lr: 1e-3,
                    gamma: 0.0,
                    batch_size: 128,
                    reward_scale: 10.0,
                    ..DdpgConfig::default()
                },
                epochs: 30,
                updates_per_epoch: 200,
                eval_len: 20,
                ..DdpgTrainConfig::default()
            },
        }
    }

    /// Same budgets with every epoch count replaced by `epochs`.
    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.farm.epochs = epochs;
        self.ddpg.epochs = epochs;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub system: SystemConfig,
    pub sweep: SweepVariable,
    pub values: Vec<f64>,
    pub methods: Vec<Method>,
    pub realizations: usize,
    pub master_seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Decisions per evaluation trajectory.
    #[serde(default = "default_episode_len")]
    pub episode_len: usize,
    #[serde(default)]
    pub sfp: SfpSettings,
    #[serde(default)]
    pub training: TrainingSpec,
    /// Train learned methods in memory instead of loading checkpoints.
    #[serde(default)]
    pub train_inline: bool,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

fn default_episode_len() -> usize {
    100
}

impl ExperimentSpec {
    pub fn preset(preset: Preset, master_seed: u64) -> Self {
        match preset {
            Preset::Desk => Self {
                name: "desk_rho".into(),
                system: SystemConfig::desk(master_seed),
                sweep: SweepVariable::Rho,
                values: vec![0.8, 0.9, 0.99],
                methods: Method::ALL.to_vec(),
                realizations: 20,
                master_seed,
                output: default_output(),
                episode_len: 100,
                sfp: SfpSettings::default(),
                training: TrainingSpec::desk(),
                train_inline: false,
            },
            Preset::Table1 => Self {
                name: "table1_n_ris".into(),
                system: SystemConfig::table1(master_seed),
                sweep: SweepVariable::NRis,
                values: vec![16.0, 32.0, 64.0],
                methods: vec![Method::Zfr, Method::Sfp],
                realizations: 100,
                master_seed,
                output: default_output(),
                episode_len: 1,
                sfp: SfpSettings::default(),
                training: TrainingSpec::desk(),
                train_inline: false,
            },
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HarnessError::Spec(msg));
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return bad(format!("name {:?} must be non-empty [A-Za-z0-9_-]", self.name));
        }
        if self.values.is_empty() {
            return bad("sweep values are empty".into());
        }
        if self.values.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("sweep values must be strictly increasing".into());
        }
        if self.methods.is_empty() {
            return bad("no methods requested".into());
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return bad("methods repeat".into());
        }
        if self.realizations == 0 {
            return bad("realizations must be at least 1".into());
        }
        if self.episode_len == 0 {
            return bad("episode_len must be at least 1".into());
        }
        if self.training.train_tasks == 0 {
            return bad("training.train_tasks must be at least 1".into());
        }
        self.sfp.validate()?;
        self.training.farm.validate()?;
        self.training.ddpg.ddpg.validate()?;
        for &v in &self.values {
            self.system_at(v)?.validate()?;
        }
        Ok(())
    }

    /// The base system with the sweep variable set to `value`.
    pub fn system_at(&self, value: f64) -> Result<SystemConfig> {
        match self.sweep {
            SweepVariable::Rho => Ok(self.system.clone().with_rho(value)),
            SweepVariable::NRis => {
                if !(value >= 1.0 && value.fract() == 0.0 && value <= 1e6) {
                    return Err(HarnessError::Spec(format!("n_ris = {value} is not a positive integer")));
                }
                Ok(self.system.clone().with_n_ris(value as usize))
            }
        }
    }

    pub fn learned_methods(&self) -> Vec<Method> {
        let mut m: Vec<Method> = self.methods.iter().filter_map(|m| m.trained_as()).collect();
        m.sort();
        m.dedup();
        m
    }
}
