//! Mapping between policy outputs in (−1, 1) and physical actions.

use rismeta_core::env::action_dim;
use rismeta_core::{ActionVector, SystemConfig};
use serde::{Deserialize, Serialize};

/// The beamformer block is scaled by `sqrt(p_max / (2MK))`, so a policy
/// output saturated at ±1 in every component spends exactly `p_max`. The
/// phase block is passed through; the environment projects it onto the
/// unit circle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionScaler {
    pub dim: usize,
    pub w_len: usize,
    pub w_scale: f64,
}

impl ActionScaler {
    pub fn new(config: &SystemConfig) -> Self {
        let mk = config.m_antennas * config.k_users;
        Self {
            dim: action_dim(config),
            w_len: 2 * mk,
            w_scale: (config.p_max / (2 * mk) as f64).sqrt(),
        }
    }

    pub fn to_physical(&self, raw: &[f64]) -> ActionVector {
        ActionVector(
            raw.iter()
                .enumerate()
                .map(|(i, &v)| if i < self.w_len { v * self.w_scale } else { v })
                .collect(),
        )
    }
}
