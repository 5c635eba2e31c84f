//! Shared fixtures for the benchmarks.

use tbrfi_core::config::RunConfig;
use tbrfi_core::photonics::simulate_tagstream;
use tbrfi_core::{CoincidenceConfig, TimeTag};

/// Alice and Bob tag streams for `seconds` of the first desk preset.
pub fn desk_tags(seconds: f64) -> (Vec<TimeTag>, Vec<TimeTag>, CoincidenceConfig) {
    let cfg = RunConfig::preset("paper_scenario_i").expect("preset exists");
    let (a, b) =
        simulate_tagstream(seconds, &cfg.source, &cfg.channel, &cfg.coincidence.layout, 1).expect("preset simulates");
    (a, b, cfg.coincidence)
}
