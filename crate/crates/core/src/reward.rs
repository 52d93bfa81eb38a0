//! Multi-dimensional flow reward with vicinal shaping.
//!
//! For a prefix `z_{0:k}` closed by the terminal marker,
//!
//! ```text
//! R_lambda = prod_i P(c_i | r_i) / (1/|C|)  *  p(Y | z_{0:k}, X)  *  omega_lambda
//! ```
//!
//! All arithmetic is carried in log space.

use serde::{Deserialize, Serialize};

use crate::env::{
    enumerate_prior, in_expert_vicinity, marginal_answer_likelihood, posterior_from_prior, EnvSpec,
    FlowDistribution, Step,
};
use crate::error::{Error, Result};
use crate::geometry::{check_lambda, check_unit};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub lambda: f64,
    pub eps: f64,
}

impl RewardConfig {
    pub fn new(lambda: f64, eps: f64) -> Result<Self> {
        check_lambda(lambda)?;
        check_unit("eps", eps)?;
        Ok(Self { lambda, eps })
    }
}

/// Reward components in log space. `degenerate` marks a caption with zero
/// likelihood under its region, which makes the reward zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub log_contrastive: f64,
    pub log_efficacy: f64,
    pub log_shaping: f64,
    pub log_total: f64,
    pub degenerate: bool,
}

impl RewardBreakdown {
    pub fn contrastive(&self) -> f64 {
        self.log_contrastive.exp()
    }
    pub fn efficacy(&self) -> f64 {
        self.log_efficacy.exp()
    }
    pub fn shaping(&self) -> f64 {
        self.log_shaping.exp()
    }
    pub fn total(&self) -> f64 {
        self.log_total.exp()
    }
}

fn check_path(env: &EnvSpec, prefix: &[Step]) -> Result<()> {
    if prefix.len() > env.flow_len() {
        return Err(Error::PrefixOutOfRange {
            k: prefix.len(),
            len: env.flow_len(),
        });
    }
    for s in prefix {
        if s.roi >= env.candidates().len() || s.caption >= env.num_captions() {
            return Err(Error::ForeignFlow(format!("step {s:?} outside the env")));
        }
    }
    Ok(())
}

/// `log(|C|^k prod_i P(c_i | r_i))`; `-inf` if some caption is impossible.
pub fn log_contrastive_term(env: &EnvSpec, prefix: &[Step]) -> Result<f64> {
    check_path(env, prefix)?;
    let log_c = (env.num_captions() as f64).ln();
    Ok(prefix
        .iter()
        .map(|s| log_c + env.caption_prob(s.roi, s.caption).ln())
        .sum())
}

pub fn contrastive_term(env: &EnvSpec, prefix: &[Step]) -> Result<f64> {
    log_contrastive_term(env, prefix).map(f64::exp)
}

/// Answer likelihood given a prefix: the mean of `P(Y | bag)` over bags that
/// contain every box of the prefix. Under the uniform bag prior this is the
/// prior predictive, so it is the table value for a complete flow and
/// `P(Y | X)` for the bare planning state.
pub fn efficacy_term(env: &EnvSpec, prefix: &[Step]) -> Result<f64> {
    check_path(env, prefix)?;
    let bags = env.bags_consistent_with(prefix);
    if bags.is_empty() {
        return Err(Error::UnknownBag);
    }
    let total: f64 = bags.iter().map(|&b| env.answer_likelihood(b)).sum();
    Ok(total / bags.len() as f64)
}

/// `log p(Y | prefix) - log P(Y | X)`, with the marginal from enumeration.
pub fn information_gain(env: &EnvSpec, prefix: &[Step]) -> Result<f64> {
    let marginal = marginal_answer_likelihood(env)?;
    Ok(efficacy_term(env, prefix)?.ln() - marginal.ln())
}

pub fn log_shaping_term(env: &EnvSpec, cfg: &RewardConfig, prefix: &[Step]) -> Result<f64> {
    check_lambda(cfg.lambda)?;
    check_unit("eps", cfg.eps)?;
    Ok(if in_expert_vicinity(env, prefix, cfg.eps) {
        0.0
    } else {
        -cfg.lambda
    })
}

pub fn shaped_reward(env: &EnvSpec, cfg: &RewardConfig, prefix: &[Step]) -> Result<RewardBreakdown> {
    let log_contrastive = log_contrastive_term(env, prefix)?;
    let log_efficacy = efficacy_term(env, prefix)?.ln();
    let log_shaping = log_shaping_term(env, cfg, prefix)?;
    Ok(RewardBreakdown {
        log_contrastive,
        log_efficacy,
        log_shaping,
        log_total: log_contrastive + log_efficacy + log_shaping,
        degenerate: log_contrastive == f64::NEG_INFINITY,
    })
}

/// `P_lambda(Z) = P(Z | X, Y) omega_lambda(Z) / Z_lambda`, together with the
/// enumerated `Z_lambda`.
pub fn tilted_posterior(env: &EnvSpec, cfg: &RewardConfig) -> Result<(FlowDistribution, f64)> {
    let prior = enumerate_prior(env)?;
    let post = posterior_from_prior(env, &prior)?;
    tilt(env, cfg, &post)
}

pub fn tilt(env: &EnvSpec, cfg: &RewardConfig, post: &FlowDistribution) -> Result<(FlowDistribution, f64)> {
    check_lambda(cfg.lambda)?;
    check_unit("eps", cfg.eps)?;
    let off = (-cfg.lambda).exp();
    post.reweight(|z| if in_expert_vicinity(env, z, cfg.eps) { 1.0 } else { off })
}

/// `Z_lambda = s_B + e^{-lambda} (1 - s_B)`.
pub fn partition_closed_form(s_b: f64, lambda: f64) -> Result<f64> {
    check_unit("s_b", s_b)?;
    check_lambda(lambda)?;
    Ok(s_b + (-lambda).exp() * (1.0 - s_b))
}

/// Both sides of `E_q[log p+/p-] = KL(q || p-) - KL(q || p+)`.
pub fn contrastive_kl_identity(q: &[f64], p_plus: &[f64], p_minus: &[f64]) -> Result<(f64, f64)> {
    if q.len() != p_plus.len() || q.len() != p_minus.len() || q.is_empty() {
        return Err(Error::Distribution("distributions must share a non-empty support".into()));
    }
    for (name, d) in [("q", q), ("p_plus", p_plus), ("p_minus", p_minus)] {
        if d.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::Distribution(format!("{name} has entries outside [0, 1]")));
        }
    }
    let mut lhs = 0.0;
    let mut kl_minus = 0.0;
    let mut kl_plus = 0.0;
    for ((&qc, &pp), &pm) in q.iter().zip(p_plus).zip(p_minus) {
        if qc == 0.0 {
            continue;
        }
        if pp == 0.0 || pm == 0.0 {
            return Err(Error::Distribution("q puts mass where p_plus or p_minus is zero".into()));
        }
        lhs += qc * (pp.ln() - pm.ln());
        kl_minus += qc * (qc.ln() - pm.ln());
        kl_plus += qc * (qc.ln() - pp.ln());
    }
    Ok((lhs, kl_minus - kl_plus))
}
