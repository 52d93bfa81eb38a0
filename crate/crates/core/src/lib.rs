//! Perceptual flows with vicinal geometric shaping, at tabular scale.
//!
//! The crate models a reasoning trace as a planning state followed by
//! region/caption states, rewards it with a contrastive caption term, an
//! answer-likelihood term and an exponential penalty for leaving the
//! neighbourhood of an expert region set, and trains tabular policies with a
//! sub-trajectory balance objective. Small synthetic environments are fully
//! enumerable, so every distribution the theory talks about can be computed
//! exactly and compared against its closed form.
//!
//! ```
//! use flowshape::env::EnvSpec;
//! use flowshape::theory::{lambda_star, sweep_cell};
//!
//! let env = EnvSpec::from_json(flowshape::envs::T1).unwrap();
//! let cell = sweep_cell(&env, 3f64.ln(), 0.5).unwrap();
//! assert!((cell.s_v - 0.5).abs() < 1e-12);
//! assert!((cell.s_b - 0.25).abs() < 1e-12);
//! assert!((lambda_star(cell.s_v, cell.s_b).unwrap().value() - 3f64.ln()).abs() < 1e-12);
//! assert!((cell.exact_tv - 1.0 / 3.0).abs() < 1e-12);
//! ```

pub mod batch;
pub mod curation;
pub mod env;
pub mod envs;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod grammar;
pub mod policy;
pub mod reward;
pub mod subtb;
pub mod theory;
pub mod tolerances;
pub mod trainer;

pub use error::{Error, Result};

// The guide's snippets run as doctests so the book cannot drift from the API.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/flows.md")]
    mod flows {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/environments.md")]
    mod environments {}
    #[doc = include_str!("../../../book/src/reward.md")]
    mod reward {}
    #[doc = include_str!("../../../book/src/subtb.md")]
    mod subtb {}
    #[doc = include_str!("../../../book/src/theory.md")]
    mod theory {}
    #[doc = include_str!("../../../book/src/batching.md")]
    mod batching {}
    #[doc = include_str!("../../../book/src/curation.md")]
    mod curation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
