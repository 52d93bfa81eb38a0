//! Bundled environments.
//!
//! `t1` is hand-built so that at `eps = 0.5` the valid support holds half the
//! posterior mass and the expert vicinity a quarter of it. `r1` and `r2` are
//! outputs of [`random_env`] with the fixed seeds below; tests check that the
//! files match the generator.

use crate::env::{random_env, EnvSpec, RandomEnvConfig};
use crate::error::Result;

pub const T1: &str = include_str!("../envs/t1.json");
pub const R1: &str = include_str!("../envs/r1.json");
pub const R2: &str = include_str!("../envs/r2.json");

pub const R1_SEED: u64 = 1;
pub const R1_CONFIG: RandomEnvConfig = RandomEnvConfig {
    candidates: 10,
    bags: 5,
    flow_len: 2,
    captions: 3,
    sigma: 0.5,
};

pub const R2_SEED: u64 = 2;
pub const R2_CONFIG: RandomEnvConfig = RandomEnvConfig {
    candidates: 7,
    bags: 3,
    flow_len: 3,
    captions: 2,
    sigma: 0.5,
};

/// Regenerates a randomized bundled env by name.
pub fn generate(name: &str) -> Option<Result<EnvSpec>> {
    match name {
        "r1" => Some(random_env(R1_SEED, R1_CONFIG)),
        "r2" => Some(random_env(R2_SEED, R2_CONFIG)),
        _ => None,
    }
}

/// Text of a bundled env by name.
pub fn source(name: &str) -> Option<&'static str> {
    match name {
        "t1" => Some(T1),
        "r1" => Some(R1),
        "r2" => Some(R2),
        _ => None,
    }
}

/// All bundled envs, parsed.
pub fn bundled() -> Result<Vec<(&'static str, EnvSpec)>> {
    ["t1", "r1", "r2"]
        .into_iter()
        .map(|n| EnvSpec::from_json(source(n).unwrap()).map(|e| (n, e)))
        .collect()
}
