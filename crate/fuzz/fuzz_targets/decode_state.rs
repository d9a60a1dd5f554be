#![no_main]

use libfuzzer_sys::fuzz_target;
use rismeta_core::env::{decode_state, encode_state};
use rismeta_core::{Observation, SystemConfig};

fuzz_target!(|data: &[u8]| {
    let cfg = SystemConfig::desk(0);
    let obs = Observation(
        data.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    );
    if let Ok(state) = decode_state(&obs, &cfg) {
        let back = encode_state(&state);
        assert!(back.0.iter().zip(&obs.0).all(|(a, b)| a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan())));
    }
});
