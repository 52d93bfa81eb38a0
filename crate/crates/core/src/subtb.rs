//! Sub-trajectory balance residuals, the squared-residual loss and its exact
//! gradient for tabular policies.
//!
//! For a flow `z_0 .. z_n` and `0 <= i <= j <= n`,
//!
//! ```text
//! D_ij = log R(z_{0:i}T) + sum_{k=i+1..j} log p(z_k | z_{0:k-1}) + log p(T | z_{0:j})
//!      - log R(z_{0:j}T) - log p(T | z_{0:i})
//! ```
//!
//! Writing `H_k = log R(z_{0:k}T) - log p(T | z_{0:k}) - sum_{t<=k} log p(z_t | z_{0:t-1})`
//! gives `D_ij = H_i - H_j`, which is how the loss and gradient are evaluated.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::{EnvSpec, Step};
use crate::error::{Error, Result};
use crate::flow::sub_trajectory_pairs;
use crate::policy::{FlowTrie, TabularPolicy};
use crate::reward::{shaped_reward, RewardConfig};

/// `log R_lambda(prefix T)` for every trie node.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTable {
    trie: Arc<FlowTrie>,
    log_reward: Vec<f64>,
}

impl RewardTable {
    pub fn new(env: &EnvSpec, cfg: &RewardConfig, trie: Arc<FlowTrie>) -> Result<Self> {
        let log_reward = trie
            .nodes()
            .iter()
            .map(|n| shaped_reward(env, cfg, &n.path).map(|r| r.log_total))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { trie, log_reward })
    }

    pub fn trie(&self) -> &Arc<FlowTrie> {
        &self.trie
    }

    pub fn log_reward(&self, node: usize) -> f64 {
        self.log_reward[node]
    }

    fn check(&self, policy: &TabularPolicy) -> Result<()> {
        if !Arc::ptr_eq(&self.trie, policy.trie()) && *self.trie != **policy.trie() {
            return Err(Error::ForeignFlow("policy and reward table use different tries".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubTbResidual {
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

/// `F(z) = R_lambda(z T) / p(T | z)`, returned in log space.
pub fn log_flow_function(policy: &TabularPolicy, rewards: &RewardTable, prefix: &[Step]) -> Result<f64> {
    rewards.check(policy)?;
    let node = *policy.trie().walk(prefix)?.last().unwrap();
    let lt = policy.log_terminate(node);
    if lt == f64::NEG_INFINITY {
        return Err(Error::ZeroTermination { depth: prefix.len() });
    }
    Ok(rewards.log_reward(node) - lt)
}

/// Per-position quantities of one flow: node ids, `log p(T | z_{0:k})`,
/// `log p(z_k | z_{0:k-1})` (index 0 unused) and `log R`.
struct Walk {
    nodes: Vec<usize>,
    actions: Vec<usize>,
    log_term: Vec<f64>,
    log_step: Vec<f64>,
    log_r: Vec<f64>,
}

fn walk(policy: &TabularPolicy, rewards: &RewardTable, path: &[Step]) -> Result<Walk> {
    let trie = policy.trie();
    let nodes = trie.walk(path)?;
    let mut actions = vec![usize::MAX];
    let mut log_step = vec![0.0];
    for (t, &s) in path.iter().enumerate() {
        let (a, _) = trie.child(nodes[t], s).expect("walked");
        actions.push(a);
        log_step.push(policy.log_transition(nodes[t], a));
    }
    let log_term = nodes.iter().map(|&n| policy.log_terminate(n)).collect();
    let log_r = nodes.iter().map(|&n| rewards.log_reward(n)).collect();
    Ok(Walk {
        nodes,
        actions,
        log_term,
        log_step,
        log_r,
    })
}

fn residual_from(w: &Walk, i: usize, j: usize) -> Result<f64> {
    let parts = [w.log_r[i], w.log_term[j], w.log_r[j], w.log_term[i]];
    let steps = &w.log_step[i + 1..=j];
    if parts.iter().chain(steps).any(|v| !v.is_finite()) {
        let reason = if w.log_r[i].is_finite() && w.log_r[j].is_finite() {
            "non-positive probability"
        } else {
            "non-positive reward"
        };
        return Err(Error::Residual { i, j, reason });
    }
    let forward = w.log_r[i] + steps.iter().sum::<f64>() + w.log_term[j];
    let backward = w.log_r[j] + w.log_term[i];
    Ok(forward - backward)
}

pub fn residual(
    policy: &TabularPolicy,
    rewards: &RewardTable,
    path: &[Step],
    i: usize,
    j: usize,
) -> Result<SubTbResidual> {
    rewards.check(policy)?;
    if i > j || j > path.len() {
        return Err(Error::Residual {
            i,
            j,
            reason: "indices must satisfy 0 <= i <= j <= K",
        });
    }
    let w = walk(policy, rewards, path)?;
    Ok(SubTbResidual {
        i,
        j,
        value: residual_from(&w, i, j)?,
    })
}

/// `H_k` for every prefix of the walk.
fn potentials(w: &Walk) -> Result<Vec<f64>> {
    let mut h = Vec::with_capacity(w.nodes.len());
    let mut acc = 0.0;
    for k in 0..w.nodes.len() {
        if k > 0 {
            acc += w.log_step[k];
        }
        let v = w.log_r[k] - w.log_term[k] - acc;
        if !v.is_finite() {
            // report through the direct formula for a precise reason
            residual_from(w, 0, k)?;
            residual_from(w, k, k)?;
            return Err(Error::Residual {
                i: 0,
                j: k,
                reason: "non-finite potential",
            });
        }
        h.push(v);
    }
    Ok(h)
}

fn flow_loss(h: &[f64]) -> f64 {
    let mut loss = 0.0;
    for i in 0..h.len() {
        for j in i..h.len() {
            let d = h[i] - h[j];
            loss += d * d;
        }
    }
    loss
}

/// `sum_{i <= j} D_ij^2` for a single flow.
pub fn flow_subtb_loss(policy: &TabularPolicy, rewards: &RewardTable, path: &[Step]) -> Result<f64> {
    rewards.check(policy)?;
    let w = walk(policy, rewards, path)?;
    Ok(flow_loss(&potentials(&w)?))
}

/// Same sum computed pair by pair from the defining formula.
pub fn flow_subtb_loss_direct(policy: &TabularPolicy, rewards: &RewardTable, path: &[Step]) -> Result<f64> {
    rewards.check(policy)?;
    let w = walk(policy, rewards, path)?;
    sub_trajectory_pairs(path.len())
        .into_iter()
        .map(|(i, j)| residual_from(&w, i, j).map(|d| d * d))
        .sum()
}

/// Mean of the per-flow loss over a sampled group.
pub fn subtb_loss(policy: &TabularPolicy, rewards: &RewardTable, flows: &[Vec<Step>]) -> Result<f64> {
    let w = uniform_weights(flows.len())?;
    weighted_subtb_loss(policy, rewards, flows, &w)
}

fn uniform_weights(n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::OutOfRange {
            name: "group size",
            value: 0.0,
            expected: ">= 1",
        });
    }
    Ok(vec![1.0 / n as f64; n])
}

pub fn weighted_subtb_loss(
    policy: &TabularPolicy,
    rewards: &RewardTable,
    flows: &[Vec<Step>],
    weights: &[f64],
) -> Result<f64> {
    rewards.check(policy)?;
    let mut total = 0.0;
    for (z, &wt) in flows.iter().zip(weights) {
        if wt == 0.0 {
            continue;
        }
        total += wt * flow_loss(&potentials(&walk(policy, rewards, z)?)?);
    }
    Ok(total)
}

/// Exact gradient of [`subtb_loss`] with respect to the flat logits.
pub fn loss_gradient(policy: &TabularPolicy, rewards: &RewardTable, flows: &[Vec<Step>]) -> Result<Vec<f64>> {
    let w = uniform_weights(flows.len())?;
    weighted_loss_gradient(policy, rewards, flows, &w).map(|(_, g)| g)
}

/// Loss and gradient for fixed per-flow weights.
pub fn weighted_loss_gradient(
    policy: &TabularPolicy,
    rewards: &RewardTable,
    flows: &[Vec<Step>],
    weights: &[f64],
) -> Result<(f64, Vec<f64>)> {
    rewards.check(policy)?;
    let trie = policy.trie();
    let mut grad = vec![0.0; policy.num_params()];
    let mut loss = 0.0;
    for (z, &wt) in flows.iter().zip(weights) {
        if wt == 0.0 {
            continue;
        }
        let w = walk(policy, rewards, z)?;
        let h = potentials(&w)?;
        loss += wt * flow_loss(&h);
        let n = h.len();
        // dL/dH_t = 2 (sum_{j >= t} D_tj - sum_{i <= t} D_it)
        let g: Vec<f64> = (0..n)
            .map(|t| {
                let out: f64 = (t..n).map(|j| h[t] - h[j]).sum();
                let inc: f64 = (0..=t).map(|i| h[i] - h[t]).sum();
                2.0 * wt * (out - inc)
            })
            .collect();
        // H_t carries -log p(T | z_{0:t}) and -log p(z_s | .) for all s <= t
        let mut tail = 0.0;
        for t in (0..n).rev() {
            let node = trie.node(w.nodes[t]);
            if node.has_params() {
                let term = node.num_actions() - 1;
                add_log_softmax_grad(policy, w.nodes[t], term, -g[t], &mut grad);
            }
            tail += g[t];
            if t > 0 {
                add_log_softmax_grad(policy, w.nodes[t - 1], w.actions[t], -tail, &mut grad);
            }
        }
    }
    Ok((loss, grad))
}

/// `grad += coef * d log softmax(logits)_a / d logits = coef (e_a - pi)`.
fn add_log_softmax_grad(policy: &TabularPolicy, node: usize, a: usize, coef: f64, grad: &mut [f64]) {
    let offset = policy.trie().node(node).offset;
    for (b, p) in policy.probs(node).into_iter().enumerate() {
        let ind = if a == b { 1.0 } else { 0.0 };
        grad[offset + b] += coef * (ind - p);
    }
}

/// Policy whose terminated-flow distribution is proportional to `R_lambda`,
/// built by backward induction over subtree reward masses.
pub fn optimal_policy_from_reward(rewards: &RewardTable) -> Result<TabularPolicy> {
    let trie = rewards.trie().clone();
    let mut log_mass = vec![f64::NEG_INFINITY; trie.len()];
    // children have larger pre-order ids than their parent
    for id in (0..trie.len()).rev() {
        let node = trie.node(id);
        let mut terms: Vec<f64> = node.children.iter().map(|&(_, c)| log_mass[c]).collect();
        terms.push(rewards.log_reward(id));
        let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return Err(Error::ZeroNodeMass { depth: node.depth() });
        }
        log_mass[id] = m + terms.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    }
    let mut logits = vec![0.0; trie.num_params()];
    for (id, node) in trie.nodes().iter().enumerate() {
        if !node.has_params() {
            continue;
        }
        for (a, &(_, c)) in node.children.iter().enumerate() {
            logits[node.offset + a] = log_mass[c] - log_mass[id];
        }
        logits[node.offset + node.children.len()] = rewards.log_reward(id) - log_mass[id];
    }
    TabularPolicy::with_logits(trie, logits)
}
