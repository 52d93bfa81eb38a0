//! Plain gradient descent on the SubTB loss for tabular policies.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::{posterior, valid_posterior, EnvSpec, FlowDistribution, Step};
use crate::error::{Error, Result};
use crate::policy::{FlowTrie, TabularPolicy};
use crate::reward::{tilt, RewardConfig};
use crate::subtb::{optimal_policy_from_reward, weighted_loss_gradient, RewardTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Every complete flow weighted by its current policy probability.
    Exact,
    /// `L` on-policy ancestral samples per step.
    Sampled,
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Self::Exact),
            "sampled" => Ok(Self::Sampled),
            _ => Err(Error::OutOfRange {
                name: "mode",
                value: f64::NAN,
                expected: "exact or sampled",
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub step_size: f64,
    pub steps: usize,
    pub group_size: usize,
    pub seed: u64,
    pub mode: TrainMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            step_size: 0.1,
            steps: 2000,
            group_size: 16,
            seed: 0,
            mode: TrainMode::Exact,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::OutOfRange {
                name: "step_size",
                value: self.step_size,
                expected: "> 0",
            });
        }
        if self.steps == 0 || self.group_size == 0 {
            return Err(Error::OutOfRange {
                name: "steps/group_size",
                value: 0.0,
                expected: ">= 1",
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub tv_tilted: f64,
    pub tv_valid: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: TabularPolicy,
    pub history: Vec<StepMetrics>,
}

/// Training stopped on a non-finite loss or gradient.
#[derive(Debug, Clone)]
pub struct Divergence {
    pub step: usize,
    pub last_good: TrainOutcome,
    pub cause: Option<Error>,
}

impl std::fmt::Display for Divergence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "training diverged at step {}", self.step)?;
        if let Some(c) = &self.cause {
            write!(f, ": {c}")?;
        }
        Ok(())
    }
}

impl std::error::Error for Divergence {}

/// `0.5 * sum |p - q|` after aligning by flow identity.
pub fn tv_distance(p: &FlowDistribution, q: &FlowDistribution) -> f64 {
    // ordered map keeps the summation order reproducible
    let mut joint: BTreeMap<&[Step], (f64, f64)> = BTreeMap::new();
    for (z, a) in p.iter() {
        joint.entry(z).or_default().0 += a;
    }
    for (z, b) in q.iter() {
        joint.entry(z).or_default().1 += b;
    }
    let total: f64 = joint.values().map(|(a, b)| (a - b).abs()).sum();
    (0.5 * total).min(1.0)
}

/// Targets shared by every step of a run.
pub struct Targets {
    pub tilted: FlowDistribution,
    pub valid: FlowDistribution,
}

impl Targets {
    pub fn new(env: &EnvSpec, cfg: &RewardConfig) -> Result<Self> {
        let post = posterior(env)?;
        Ok(Self {
            tilted: tilt(env, cfg, &post)?.0,
            valid: valid_posterior(env, &post)?,
        })
    }
}

/// Trainer state for one `(env, reward config)` pair.
pub struct Trainer {
    pub rewards: RewardTable,
    pub targets: Targets,
    complete: Vec<Vec<Step>>,
}

impl Trainer {
    pub fn new(env: &EnvSpec, cfg: &RewardConfig) -> Result<Self> {
        let trie = Arc::new(FlowTrie::build(env));
        let complete = trie.complete_nodes().map(|i| trie.node(i).path.clone()).collect();
        Ok(Self {
            rewards: RewardTable::new(env, cfg, trie)?,
            targets: Targets::new(env, cfg)?,
            complete,
        })
    }

    pub fn initial_policy(&self) -> TabularPolicy {
        TabularPolicy::uniform_on(self.rewards.trie().clone())
    }

    pub fn optimal_policy(&self) -> Result<TabularPolicy> {
        optimal_policy_from_reward(&self.rewards)
    }

    fn metrics(&self, step: usize, policy: &TabularPolicy, loss: f64, grad: &[f64]) -> StepMetrics {
        let d = policy.complete_distribution();
        StepMetrics {
            step,
            loss,
            grad_norm: grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
            tv_tilted: tv_distance(&d, &self.targets.tilted),
            tv_valid: tv_distance(&d, &self.targets.valid),
        }
    }

    /// Loss and gradient at `policy` for the given mode; in sampled mode the
    /// group is drawn with `seed`.
    pub fn loss_and_gradient(&self, policy: &TabularPolicy, mode: TrainMode, l: usize, seed: u64) -> Result<(f64, Vec<f64>)> {
        match mode {
            TrainMode::Exact => {
                let weights = policy.complete_distribution().probs;
                weighted_loss_gradient(policy, &self.rewards, &self.complete, &weights)
            }
            TrainMode::Sampled => {
                let flows = policy.sample_flows(l, seed);
                let w = vec![1.0 / l as f64; l];
                weighted_loss_gradient(policy, &self.rewards, &flows, &w)
            }
        }
    }

    /// Runs `tcfg.steps` descent steps from `init`. Metrics for step `t` are
    /// measured before the `t`-th update; a final row records the result.
    pub fn run(&self, init: TabularPolicy, tcfg: &TrainConfig) -> Result<std::result::Result<TrainOutcome, Divergence>> {
        tcfg.validate()?;
        let mut policy = init;
        let mut history = Vec::with_capacity(tcfg.steps + 1);
        for step in 0..=tcfg.steps {
            let seed = tcfg.seed.wrapping_add(step as u64);
            let res = self.loss_and_gradient(&policy, tcfg.mode, tcfg.group_size, seed);
            let (loss, grad) = match res {
                Ok((l, g)) if l.is_finite() && g.iter().all(|x| x.is_finite()) => (l, g),
                other => {
                    return Ok(Err(Divergence {
                        step,
                        last_good: TrainOutcome { policy, history },
                        cause: other.err(),
                    }))
                }
            };
            history.push(self.metrics(step, &policy, loss, &grad));
            if step == tcfg.steps {
                break;
            }
            for (l, g) in policy.logits_mut().iter_mut().zip(&grad) {
                *l -= tcfg.step_size * g;
            }
        }
        Ok(Ok(TrainOutcome { policy, history }))
    }
}

/// Trains from the uniform policy.
pub fn train(env: &EnvSpec, cfg: &RewardConfig, tcfg: &TrainConfig) -> Result<std::result::Result<TrainOutcome, Divergence>> {
    let trainer = Trainer::new(env, cfg)?;
    trainer.run(trainer.initial_policy(), tcfg)
}

/// Running minimum, used to smooth TV curves before monotonicity checks.
pub fn min_so_far(xs: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut m = f64::INFINITY;
    xs.into_iter()
        .map(|x| {
            m = m.min(x);
            m
        })
        .collect()
}

/// Probability of each flow as a map, for reporting.
pub fn as_map(d: &FlowDistribution) -> HashMap<Vec<Step>, f64> {
    d.iter().map(|(z, p)| (z.to_vec(), p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{random_env, RandomEnvConfig};

    fn env() -> EnvSpec {
        random_env(
            21,
            RandomEnvConfig {
                candidates: 5,
                bags: 3,
                flow_len: 2,
                captions: 2,
                sigma: 0.6,
            },
        )
        .unwrap()
    }

    fn dist(probs: &[f64]) -> FlowDistribution {
        FlowDistribution {
            support: (0..probs.len()).map(|i| vec![Step { roi: i, caption: 0 }]).collect(),
            probs: probs.to_vec(),
        }
    }

    #[test]
    fn tv_examples() {
        let p = dist(&[0.7, 0.3]);
        assert_eq!(tv_distance(&p, &p), 0.0);
        assert!((tv_distance(&p, &dist(&[0.5, 0.5])) - 0.2).abs() < 1e-15);
        let disjoint = FlowDistribution {
            support: vec![vec![Step { roi: 9, caption: 0 }]],
            probs: vec![1.0],
        };
        assert_eq!(tv_distance(&p, &disjoint), 1.0);
    }

    #[test]
    fn optimum_is_stationary() {
        let e = env();
        let cfg = RewardConfig::new(4.5, 0.5).unwrap();
        let t = Trainer::new(&e, &cfg).unwrap();
        let out = t
            .run(t.optimal_policy().unwrap(), &TrainConfig { steps: 20, ..Default::default() })
            .unwrap()
            .unwrap();
        assert!(out.history.iter().all(|m| m.loss <= 1e-18 && m.tv_tilted < 1e-12));
    }

    #[test]
    fn training_is_deterministic() {
        let e = env();
        let cfg = RewardConfig::new(1.0, 0.5).unwrap();
        for mode in [TrainMode::Exact, TrainMode::Sampled] {
            let tcfg = TrainConfig {
                steps: 30,
                mode,
                seed: 5,
                ..Default::default()
            };
            let a = train(&e, &cfg, &tcfg).unwrap().unwrap();
            let b = train(&e, &cfg, &tcfg).unwrap().unwrap();
            assert_eq!(a.history, b.history);
            assert_eq!(a.policy, b.policy);
        }
    }

    #[test]
    fn exact_training_reduces_loss() {
        let e = env();
        let cfg = RewardConfig::new(1.0, 0.5).unwrap();
        let out = train(&e, &cfg, &TrainConfig { steps: 300, ..Default::default() }).unwrap().unwrap();
        let first = out.history.first().unwrap();
        let last = out.history.last().unwrap();
        assert!(last.loss < first.loss);
        assert!(last.tv_tilted < first.tv_tilted);
    }

    #[test]
    fn divergence_keeps_last_good_policy() {
        let e = env();
        let cfg = RewardConfig::new(1.0, 0.5).unwrap();
        let out = train(
            &e,
            &cfg,
            &TrainConfig {
                step_size: 1e6,
                steps: 50,
                ..Default::default()
            },
        )
        .unwrap();
        if let Err(d) = out {
            assert!(d.step > 0);
            assert_eq!(d.last_good.history.len(), d.step);
        }
    }

    #[test]
    fn bad_config_rejected() {
        let e = env();
        let cfg = RewardConfig::new(1.0, 0.5).unwrap();
        assert!(train(&e, &cfg, &TrainConfig { step_size: 0.0, ..Default::default() }).is_err());
        assert!(train(&e, &cfg, &TrainConfig { steps: 0, ..Default::default() }).is_err());
    }
}
