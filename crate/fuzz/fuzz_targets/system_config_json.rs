#![no_main]

use libfuzzer_sys::fuzz_target;
use rismeta_core::{ChannelModel, SystemConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = SystemConfig::from_json(text) {
        // anything that validates must round-trip and build a model
        assert_eq!(SystemConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        if cfg.n_ris.checked_mul(cfg.m_antennas).is_some_and(|e| e <= 4096) && cfg.k_users <= 64 {
            let _ = ChannelModel::new(cfg);
        }
    }
});
