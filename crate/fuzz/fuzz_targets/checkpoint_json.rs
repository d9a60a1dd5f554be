#![no_main]

use libfuzzer_sys::fuzz_target;
use rismeta_agents::ddpg::DdpgCheckpoint;
use rismeta_agents::farm::FarmCheckpoint;
use rismeta_agents::{Ddpg, FarmAgent};

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = serde_json::from_slice::<FarmCheckpoint>(data) {
        let _ = FarmAgent::from_checkpoint(&ck);
    }
    if let Ok(ck) = serde_json::from_slice::<DdpgCheckpoint>(data) {
        let _ = Ddpg::from_checkpoint(&ck);
    }
});
