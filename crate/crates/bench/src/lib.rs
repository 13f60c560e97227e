//! Fixtures shared by the benchmarks.

use edtn_core::sim::bundled;
use edtn_core::{Bundle, Scenario};

/// `len` default-sized bundles, ids from 1.
pub fn queue(len: u64) -> Vec<Bundle> {
    (1..=len).map(|i| Bundle::new(i, 1600, 0.0)).collect()
}

pub fn scenario(name: &str) -> Scenario {
    Scenario::from_json(bundled::get(name).expect("unknown bundled scenario"))
        .expect("bundled scenario parses")
}
