#![no_main]

use libfuzzer_sys::fuzz_target;
use rismeta_core::env::{decode_action, encode_action};
use rismeta_core::{ActionVector, SystemConfig};

fuzz_target!(|data: &[u8]| {
    let cfg = SystemConfig::desk(0);
    let a = ActionVector(
        data.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    );
    if let Ok((w, phase)) = decode_action(&a, &cfg) {
        assert!(w.tx_power() <= cfg.p_max + 1e-9);
        assert!(phase.phasors().iter().all(|z| (z.norm() - 1.0).abs() <= 1e-12));
        // a decoded design is a fixed point of the codec
        let (w2, _) = decode_action(&encode_action(&w, &phase), &cfg).unwrap();
        assert!((w2.tx_power() - w.tx_power()).abs() <= 1e-9 * cfg.p_max);
    }
});
