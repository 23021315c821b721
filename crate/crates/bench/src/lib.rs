//! Shared fixtures for the benchmarks.

use fbpt_core::{steady_state_branches, FeedbackConfig, FilterState, ModeState, SystemParams};

/// Reference parameters with `K = 6000`, `τ = 0.02` (so `F = 120`).
pub fn reference_setup() -> (SystemParams, FeedbackConfig) {
    let params = SystemParams::reference();
    let fb = FeedbackConfig::proportional(6000.0, 0.02).expect("valid gains");
    (params, fb)
}

/// The upper stable branch at `F = 120` with its stationary filter value.
pub fn stable_branch_state() -> (ModeState, FilterState) {
    let (params, fb) = reference_setup();
    let branches = steady_state_branches(&params, fb.combined()).expect("valid parameters");
    branches[1].steady_state(&params, fb.tau)
}
