//! Closed-form TV bounds for vicinal shaping and their brute-force checks.
//!
//! With `s_V` the posterior mass of the valid support, `q = s_B / s_V` the
//! fraction of it inside the expert vicinity and
//! `Z_lambda = q s_V + e^{-lambda} (1 - q s_V)`,
//!
//! ```text
//! D(lambda) = ( q |s_V - Z| + (1 - q) |e^{-lambda} s_V - Z| + e^{-lambda} (1 - s_V) ) / (2 Z)
//! ```
//!
//! bounds `TV(P_lambda, P_V)`, and is attained when the vicinity nests inside
//! the valid support. The calibrated intensity
//! `lambda* = ln((1 - s_B) / (s_V - s_B))` makes `Z = s_V` and minimizes it.

use serde::{Deserialize, Serialize};

use crate::env::{posterior, support_masses_from, valid_posterior, EnvSpec, FlowDistribution};
use crate::error::{Error, Result};
use crate::geometry::{check_lambda, check_unit};
use crate::reward::{tilt, RewardConfig};
use crate::trainer::tv_distance;

fn check_sv(s_v: f64) -> Result<()> {
    if !(s_v > 0.0 && s_v <= 1.0) {
        return Err(Error::OutOfRange {
            name: "s_v",
            value: s_v,
            expected: "(0, 1]",
        });
    }
    Ok(())
}

pub fn tv_bound_thm1(s_v: f64, q: f64, lambda: f64) -> Result<f64> {
    check_sv(s_v)?;
    check_unit("q", q)?;
    check_lambda(lambda)?;
    let w = (-lambda).exp();
    let z = q * s_v + w * (1.0 - q * s_v);
    Ok((q * (s_v - z).abs() + (1.0 - q) * (w * s_v - z).abs() + w * (1.0 - s_v)) / (2.0 * z))
}

/// `TV(P_lambda, P_V)` by enumeration.
pub fn exact_tv_tilted_vs_valid(env: &EnvSpec, cfg: &RewardConfig) -> Result<f64> {
    let post = posterior(env)?;
    exact_tv_from(env, cfg, &post, &valid_posterior(env, &post)?)
}

fn exact_tv_from(env: &EnvSpec, cfg: &RewardConfig, post: &FlowDistribution, valid: &FlowDistribution) -> Result<f64> {
    let (tilted, _) = tilt(env, cfg, post)?;
    Ok(tv_distance(&tilted, valid))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaStar {
    Finite(f64),
    /// `s_V = s_B`: the bound decreases all the way to the hard-verifier limit.
    Infinite,
}

impl LambdaStar {
    pub fn value(self) -> f64 {
        match self {
            Self::Finite(v) => v,
            Self::Infinite => f64::INFINITY,
        }
    }
}

pub fn lambda_star(s_v: f64, s_b: f64) -> Result<LambdaStar> {
    check_sv(s_v)?;
    if !(0.0..=s_v).contains(&s_b) {
        return Err(Error::OutOfRange {
            name: "s_b",
            value: s_b,
            expected: "[0, s_v]",
        });
    }
    if s_b == s_v {
        return Ok(LambdaStar::Infinite);
    }
    Ok(LambdaStar::Finite(((1.0 - s_b) / (s_v - s_b)).ln()))
}

/// `(1 - q)(1 - s_V) / (1 - q s_V)`; zero when `q = s_V = 1`.
pub fn calibrated_bound(s_v: f64, q: f64) -> Result<f64> {
    check_sv(s_v)?;
    check_unit("q", q)?;
    let den = 1.0 - q * s_v;
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok((1.0 - q) * (1.0 - s_v) / den)
}

/// `d/dq` of [`calibrated_bound`]: `-(1 - s_V)^2 / (1 - q s_V)^2`.
pub fn bound_derivative_q(s_v: f64, q: f64) -> Result<f64> {
    if !(s_v > 0.0 && s_v < 1.0) {
        return Err(Error::OutOfRange {
            name: "s_v",
            value: s_v,
            expected: "(0, 1)",
        });
    }
    check_unit("q", q)?;
    let r = (1.0 - s_v) / (1.0 - q * s_v);
    Ok(-r * r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularityParams {
    pub kappa: f64,
    pub d_eff: f64,
    pub sigma: f64,
}

/// Whether `q >= kappa (eps / sigma)^d_eff`.
pub fn regularity_check(q: f64, params: &RegularityParams, eps: f64) -> Result<bool> {
    if !(params.kappa >= 1.0) || !(params.d_eff > 0.0) || !(params.sigma > 0.0 && params.sigma <= 1.0) {
        return Err(Error::OutOfRange {
            name: "regularity params",
            value: params.kappa,
            expected: "kappa >= 1, d_eff > 0, sigma in (0, 1]",
        });
    }
    if !(0.0..=params.sigma).contains(&eps) {
        return Err(Error::OutOfRange {
            name: "eps",
            value: eps,
            expected: "[0, sigma]",
        });
    }
    Ok(q >= params.kappa * (eps / params.sigma).powf(params.d_eff))
}

/// One `(lambda, eps)` cell of a calibration sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub lambda: f64,
    pub eps: f64,
    pub s_v: f64,
    pub s_b: f64,
    pub q: f64,
    pub z_lambda: f64,
    pub bound: f64,
    pub exact_tv: f64,
    /// The vicinity nests inside the valid support, so the bound is attained.
    pub calibrated: bool,
}

impl BoundReport {
    pub const CSV_HEADER: &'static str = "lambda,eps,s_v,s_b,q,z_lambda,bound,exact_tv,calibrated";
}

/// Posterior and valid posterior of an env, computed once per sweep.
pub struct SweepContext<'a> {
    env: &'a EnvSpec,
    post: FlowDistribution,
    valid: FlowDistribution,
}

impl<'a> SweepContext<'a> {
    pub fn new(env: &'a EnvSpec) -> Result<Self> {
        let post = posterior(env)?;
        let valid = valid_posterior(env, &post)?;
        Ok(Self { env, post, valid })
    }

    pub fn cell(&self, lambda: f64, eps: f64) -> Result<BoundReport> {
        let cfg = RewardConfig::new(lambda, eps)?;
        let st = support_masses_from(self.env, &self.post, eps)?;
        let w = (-lambda).exp();
        Ok(BoundReport {
            lambda,
            eps,
            s_v: st.s_v,
            s_b: st.s_b,
            q: st.q,
            z_lambda: st.s_b + w * (1.0 - st.s_b),
            bound: tv_bound_thm1(st.s_v, st.q.min(1.0), lambda)?,
            exact_tv: exact_tv_from(self.env, &cfg, &self.post, &self.valid)?,
            calibrated: st.nested,
        })
    }
}

pub fn sweep_cell(env: &EnvSpec, lambda: f64, eps: f64) -> Result<BoundReport> {
    SweepContext::new(env)?.cell(lambda, eps)
}

/// One report per cell in lambda-major, eps-minor order.
pub fn calibration_sweep(env: &EnvSpec, lambda_grid: &[f64], eps_grid: &[f64]) -> Result<Vec<BoundReport>> {
    if lambda_grid.is_empty() || eps_grid.is_empty() {
        return Err(Error::EmptySet("sweep grid"));
    }
    let ctx = SweepContext::new(env)?;
    lambda_grid
        .iter()
        .flat_map(|&l| eps_grid.iter().map(move |&e| (l, e)))
        .map(|(l, e)| ctx.cell(l, e))
        .collect()
}

/// `n` points spaced evenly in log space over `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

pub fn lin_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}
