//! Shared fixtures for the benchmarks.

use ppk_core::{ModelParams, PpkSystem};

/// Inside the instability tongue, near the discontinuous line at kappa/U = 3.
pub fn critical_params() -> ModelParams {
    ModelParams::in_kappa_units(2.0, 1.0, 1.0 / 3.0).expect("valid parameters")
}

pub fn system(dim: usize) -> PpkSystem {
    PpkSystem::with_dim(&critical_params(), dim).expect("steady state")
}
