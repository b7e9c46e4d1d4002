//! Shared fixtures for the criterion benchmarks under `benches/`.

use bwsl_core::data::{synth_market, MarketPanel, SynthConfig};
use bwsl_core::features::build_windows;
use bwsl_core::policy::{PolicyConfig, PolicyInput, PolicyParams};
use bwsl_core::rng::{stream, Stream};

/// Default-sized synthetic market.
pub fn market(seed: u64) -> MarketPanel {
    synth_market(&SynthConfig { seed, ..Default::default() }).expect("default synth config is valid")
}

/// Freshly initialized parameters.
pub fn params(config: PolicyConfig, seed: u64) -> PolicyParams {
    PolicyParams::init(config, &mut stream(seed, Stream::Init)).expect("valid policy config")
}

/// Policy input of every eligible stock at decision month `t`.
pub fn input_at(panel: &MarketPanel, t: usize, window: usize) -> PolicyInput {
    PolicyInput::from_windows(&build_windows(panel, t, window).expect("window fits the panel"))
}
