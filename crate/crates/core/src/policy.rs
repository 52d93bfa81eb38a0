//! Tabular flow policies over the prefix trie of an environment.
//!
//! Every prefix that can still be extended toward some bag is a decision node
//! whose actions are its admissible next states followed by the terminal
//! marker. Depth-`K` nodes (and any node with no admissible extension) have no
//! parameters and terminate with probability one. Because each prefix has a
//! unique parent, backward transitions are identically one and never stored.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::{EnvSpec, FlowDistribution, Step};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub path: Vec<Step>,
    pub parent: Option<usize>,
    /// `(step, child node)` in action order.
    pub children: Vec<(Step, usize)>,
    /// Index of the first logit of this node; the terminal logit is last.
    pub offset: usize,
}

impl Node {
    pub fn depth(&self) -> usize {
        self.path.len()
    }

    pub fn has_params(&self) -> bool {
        !self.children.is_empty()
    }

    /// Number of actions including the terminal marker, or 0 without params.
    pub fn num_actions(&self) -> usize {
        if self.has_params() {
            self.children.len() + 1
        } else {
            0
        }
    }
}

/// Prefix trie shared by a policy and its reward table. Node 0 is the bare
/// planning state; nodes are numbered in depth-first pre-order.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrie {
    nodes: Vec<Node>,
    num_params: usize,
    flow_len: usize,
}

impl FlowTrie {
    pub fn build(env: &EnvSpec) -> Self {
        let mut trie = Self {
            nodes: Vec::new(),
            num_params: 0,
            flow_len: env.flow_len(),
        };
        trie.grow(env, Vec::new(), None);
        trie
    }

    fn grow(&mut self, env: &EnvSpec, path: Vec<Step>, parent: Option<usize>) -> usize {
        let id = self.nodes.len();
        let steps = if path.len() < env.flow_len() {
            admissible_steps(env, &path)
        } else {
            Vec::new()
        };
        self.nodes.push(Node {
            path: path.clone(),
            parent,
            children: Vec::with_capacity(steps.len()),
            offset: self.num_params,
        });
        if !steps.is_empty() {
            self.num_params += steps.len() + 1;
        }
        for step in steps {
            let mut child_path = path.clone();
            child_path.push(step);
            let child = self.grow(env, child_path, Some(id));
            self.nodes[id].children.push((step, child));
        }
        id
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.num_params
    }

    pub fn flow_len(&self) -> usize {
        self.flow_len
    }

    pub fn child(&self, id: usize, step: Step) -> Option<(usize, usize)> {
        self.nodes[id]
            .children
            .iter()
            .enumerate()
            .find(|(_, (s, _))| *s == step)
            .map(|(a, &(_, c))| (a, c))
    }

    /// Node ids along a path, starting at the root.
    pub fn walk(&self, path: &[Step]) -> Result<Vec<usize>> {
        let mut ids = Vec::with_capacity(path.len() + 1);
        let mut cur = 0;
        ids.push(cur);
        for &s in path {
            cur = self.child(cur, s).ok_or(Error::UnknownPath)?.1;
            ids.push(cur);
        }
        Ok(ids)
    }

    /// Ids of complete (depth-`K`) nodes in pre-order.
    pub fn complete_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].depth() == self.flow_len)
    }
}

/// Next states that keep the prefix inside some bag, in ascending box then
/// caption order. Captions with zero likelihood are unreachable and skipped.
fn admissible_steps(env: &EnvSpec, path: &[Step]) -> Vec<Step> {
    let bags = env.bags_consistent_with(path);
    let mut rois: Vec<usize> = bags
        .iter()
        .flat_map(|&b| env.bags()[b].iter().copied())
        .filter(|r| !path.iter().any(|s| s.roi == *r))
        .collect();
    rois.sort_unstable();
    rois.dedup();
    rois.into_iter()
        .flat_map(|roi| {
            (0..env.num_captions())
                .filter(move |&c| env.caption_prob(roi, c) > 0.0)
                .map(move |caption| Step { roi, caption })
        })
        .collect()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Softmax policy with one flat logit vector aligned to the trie.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    trie: Arc<FlowTrie>,
    logits: Vec<f64>,
}

impl TabularPolicy {
    /// All logits zero.
    pub fn uniform(env: &EnvSpec) -> Self {
        Self::uniform_on(Arc::new(FlowTrie::build(env)))
    }

    pub fn uniform_on(trie: Arc<FlowTrie>) -> Self {
        let logits = vec![0.0; trie.num_params()];
        Self { trie, logits }
    }

    pub fn with_logits(trie: Arc<FlowTrie>, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != trie.num_params() {
            return Err(Error::InvalidEnv(format!(
                "{} logits for {} parameters",
                logits.len(),
                trie.num_params()
            )));
        }
        Ok(Self { trie, logits })
    }

    pub fn trie(&self) -> &Arc<FlowTrie> {
        &self.trie
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn num_params(&self) -> usize {
        self.logits.len()
    }

    /// Log-probabilities of a node's actions (children then terminal). Empty
    /// for parameter-free nodes, which terminate surely.
    pub fn log_probs(&self, node: usize) -> Vec<f64> {
        let n = self.trie.node(node);
        let k = n.num_actions();
        let logits = &self.logits[n.offset..n.offset + k];
        let z = log_sum_exp(logits);
        logits.iter().map(|l| l - z).collect()
    }

    pub fn probs(&self, node: usize) -> Vec<f64> {
        self.log_probs(node).into_iter().map(f64::exp).collect()
    }

    pub fn log_terminate(&self, node: usize) -> f64 {
        if self.trie.node(node).has_params() {
            *self.log_probs(node).last().unwrap()
        } else {
            0.0
        }
    }

    /// Log-probability of the transition taken by action `a` at `node`.
    pub fn log_transition(&self, node: usize, a: usize) -> f64 {
        self.log_probs(node)[a]
    }

    /// Log-probability of sampling exactly `path` followed by the terminal.
    pub fn log_prob_terminated(&self, path: &[Step]) -> Result<f64> {
        let ids = self.trie.walk(path)?;
        let mut lp = 0.0;
        for (t, &s) in path.iter().enumerate() {
            let (a, _) = self.trie.child(ids[t], s).expect("walked");
            lp += self.log_transition(ids[t], a);
        }
        Ok(lp + self.log_terminate(*ids.last().unwrap()))
    }

    /// Exact distribution over every terminated path, early stops included.
    pub fn terminated_distribution(&self) -> FlowDistribution {
        let mut support = Vec::new();
        let mut probs = Vec::new();
        self.descend(0, 0.0, &mut |node, lp| {
            let p = (lp + self.log_terminate(node)).exp();
            support.push(self.trie.node(node).path.clone());
            probs.push(p);
        });
        FlowDistribution { support, probs }
    }

    /// Distribution over complete (length-`K`) flows, conditioned on reaching
    /// depth `K`. This is the fixed-length view compared against the targets.
    pub fn complete_distribution(&self) -> FlowDistribution {
        let mut support = Vec::new();
        let mut logp = Vec::new();
        let k = self.trie.flow_len();
        self.descend(0, 0.0, &mut |node, lp| {
            if self.trie.node(node).depth() == k {
                support.push(self.trie.node(node).path.clone());
                logp.push(lp);
            }
        });
        let z = log_sum_exp(&logp);
        FlowDistribution {
            support,
            probs: logp.into_iter().map(|l| (l - z).exp()).collect(),
        }
    }

    /// Calls `visit(node, log reach probability)` in pre-order.
    fn descend(&self, node: usize, lp: f64, visit: &mut impl FnMut(usize, f64)) {
        visit(node, lp);
        let n = self.trie.node(node);
        if !n.has_params() {
            return;
        }
        let lps = self.log_probs(node);
        for (a, &(_, child)) in n.children.iter().enumerate() {
            self.descend(child, lp + lps[a], visit);
        }
    }

    /// `L` independent ancestral samples.
    pub fn sample_flows(&self, l: usize, seed: u64) -> Vec<Vec<Step>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..l).map(|_| self.sample_one(&mut rng)).collect()
    }

    pub fn sample_one(&self, rng: &mut impl Rng) -> Vec<Step> {
        let mut node = 0;
        loop {
            let n = self.trie.node(node);
            if !n.has_params() {
                return n.path.clone();
            }
            let probs = self.probs(node);
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut choice = probs.len() - 1;
            for (a, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    choice = a;
                    break;
                }
            }
            if choice == n.children.len() {
                return n.path.clone();
            }
            node = n.children[choice].1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::tests::tiny_env;
    use crate::env::{enumerate_prior, random_env, RandomEnvConfig};

    const A: [f64; 4] = [0.0, 0.0, 0.2, 0.2];
    const B: [f64; 4] = [0.5, 0.5, 0.9, 0.9];
    const C: [f64; 4] = [0.0, 0.6, 0.3, 0.9];

    pub(crate) fn small_env(seed: u64) -> EnvSpec {
        random_env(
            seed,
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

    #[test]
    fn trie_leaves_match_enumeration() {
        for seed in 0..4 {
            let env = small_env(seed);
            let trie = FlowTrie::build(&env);
            let prior = enumerate_prior(&env).unwrap();
            let leaves: Vec<&Vec<Step>> = trie.complete_nodes().map(|i| &trie.node(i).path).collect();
            assert_eq!(leaves.len(), prior.len());
            for z in &prior.support {
                assert!(trie.walk(z).is_ok());
            }
            for (i, n) in trie.nodes().iter().enumerate() {
                if let Some(p) = n.parent {
                    assert!(trie.node(p).children.iter().any(|&(_, c)| c == i));
                    assert_eq!(trie.node(p).depth() + 1, n.depth());
                }
            }
        }
    }

    #[test]
    fn zero_captions_are_pruned() {
        let env = tiny_env(vec![A], vec![vec![0]], 2, vec![vec![1.0, 0.0]], vec![1.0], vec![A], vec![A], 0.1);
        let trie = FlowTrie::build(&env);
        assert_eq!(trie.len(), 2);
        assert_eq!(trie.num_params(), 2);
    }

    #[test]
    fn distributions_normalize() {
        let env = small_env(1);
        let mut pol = TabularPolicy::uniform(&env);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for l in pol.logits_mut() {
            *l = rng.gen_range(-2.0..2.0);
        }
        assert!((pol.terminated_distribution().total() - 1.0).abs() < 1e-12);
        assert!((pol.complete_distribution().total() - 1.0).abs() < 1e-12);
        let d = pol.terminated_distribution();
        for (z, p) in d.iter() {
            assert!((pol.log_prob_terminated(z).unwrap().exp() - p).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_policy_on_symmetric_env_is_uniform() {
        let env = tiny_env(
            vec![A, B, C],
            vec![vec![0], vec![1], vec![2]],
            2,
            vec![vec![0.5, 0.5]; 3],
            vec![1.0; 3],
            vec![A],
            vec![A],
            0.5,
        );
        let pol = TabularPolicy::uniform(&env);
        let d = pol.complete_distribution();
        assert_eq!(d.len(), 6);
        assert!(d.probs.iter().all(|p| (p - 1.0 / 6.0).abs() < 1e-15));
    }

    #[test]
    fn deterministic_policy_repeats() {
        let env = tiny_env(vec![A], vec![vec![0]], 1, vec![vec![1.0]], vec![1.0], vec![A], vec![A], 0.1);
        let mut pol = TabularPolicy::uniform(&env);
        // root: [child, terminal]
        pol.logits_mut()[1] = -1e9;
        let s = pol.sample_flows(5, 9);
        assert!(s.iter().all(|z| z == &s[0] && z.len() == 1));
    }

    #[test]
    fn sampling_is_reproducible() {
        let env = small_env(2);
        let pol = TabularPolicy::uniform(&env);
        assert_eq!(pol.sample_flows(50, 7), pol.sample_flows(50, 7));
        assert_ne!(pol.sample_flows(50, 7), pol.sample_flows(50, 8));
    }

    #[test]
    fn empirical_frequencies_match() {
        // three complete flows plus the bare stop
        let env = tiny_env(vec![A, B, C], vec![vec![0], vec![1], vec![2]], 1, vec![vec![1.0]; 3], vec![1.0; 3], vec![A], vec![A], 0.1);
        let mut pol = TabularPolicy::uniform(&env);
        pol.logits_mut().copy_from_slice(&[0.3, -0.2, 0.5, 0.1]);
        let exact = pol.terminated_distribution();
        assert_eq!(exact.len(), 4);
        let n = 100_000;
        let samples = pol.sample_flows(n, 42);
        for (z, p) in exact.iter() {
            let count = samples.iter().filter(|s| s.as_slice() == z).count() as f64;
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((count - n as f64 * p).abs() <= 3.0 * sd, "{z:?}: {count} vs {}", n as f64 * p);
        }
    }
}
