//! Fully enumerable synthetic worlds.
//!
//! An [`EnvSpec`] describes a finite universe of candidate boxes, the
//! admissible RoI bags (each of cardinality `K`), a caption space with a
//! per-region likelihood table, and the likelihood of the fixed answer `Y`
//! given each bag. The prior over terminated flows is uniform over bags and
//! over orderings within a bag, with captions drawn independently from each
//! region's row:
//!
//! ```text
//! P(Z | X) = (1/M) (1/K!) prod_i P(c_i | r_i)
//! ```
//!
//! The posterior multiplies in `P(Y | bag)` and renormalizes. Everything is
//! computed by brute-force enumeration in `(bag, permutation, captions)`
//! lexicographic order.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{PerceptualFlow, PerceptualState, PlanningState, GRID};
use crate::geometry::{chamfer_iou_distance, check_unit, RoiBox, RoiSet};
use crate::tolerances;

pub const ENVSPEC_VERSION: u32 = 1;

/// One perceptual state in environment coordinates: a candidate box index and
/// a caption index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Step {
    pub roi: usize,
    pub caption: usize,
}

/// On-disk form of an environment. Validated into [`EnvSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvFile {
    pub envspec_version: u32,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub input_id: String,
    pub caption_space: Vec<String>,
    pub candidates: Vec<RoiBox>,
    pub bags: Vec<Vec<usize>>,
    pub golden: RoiSet,
    pub expert: RoiSet,
    pub sigma: f64,
    pub caption_likelihood: Vec<Vec<f64>>,
    pub answer_likelihood: Vec<f64>,
    pub planning_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EnvFile", into = "EnvFile")]
pub struct EnvSpec {
    file: EnvFile,
    planning: PlanningState,
    flow_len: usize,
    bag_index: HashMap<Vec<usize>, usize>,
}

impl TryFrom<EnvFile> for EnvSpec {
    type Error = Error;

    fn try_from(file: EnvFile) -> Result<Self> {
        EnvSpec::new(file)
    }
}

impl From<EnvSpec> for EnvFile {
    fn from(env: EnvSpec) -> Self {
        env.file
    }
}

impl EnvSpec {
    pub fn new(file: EnvFile) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidEnv(msg));
        if file.envspec_version != ENVSPEC_VERSION {
            return bad(format!(
                "envspec_version {} (expected {ENVSPEC_VERSION})",
                file.envspec_version
            ));
        }
        let planning = PlanningState::new(file.planning_text.clone())
            .map_err(|_| Error::InvalidEnv("planning_text is blank".into()))?;
        if file.caption_space.is_empty() {
            return bad("caption_space is empty".into());
        }
        if file.candidates.is_empty() {
            return bad("candidates is empty".into());
        }
        for (i, a) in file.candidates.iter().enumerate() {
            if file.candidates[..i].contains(a) {
                return bad(format!("candidate {i} duplicates an earlier box"));
            }
        }
        if file.bags.is_empty() {
            return bad("bags is empty".into());
        }
        let flow_len = file.bags[0].len();
        if flow_len == 0 {
            return bad("bags must be non-empty".into());
        }
        let mut bag_index = HashMap::new();
        for (b, bag) in file.bags.iter().enumerate() {
            if bag.len() != flow_len {
                return bad(format!(
                    "bag {b} has cardinality {} (expected {flow_len})",
                    bag.len()
                ));
            }
            if let Some(&r) = bag.iter().find(|&&r| r >= file.candidates.len()) {
                return bad(format!("bag {b} references unknown candidate {r}"));
            }
            let mut key = bag.clone();
            key.sort_unstable();
            if key.windows(2).any(|w| w[0] == w[1]) {
                return bad(format!("bag {b} repeats a candidate"));
            }
            if bag_index.insert(key, b).is_some() {
                return bad(format!("bag {b} duplicates an earlier bag"));
            }
        }
        if check_unit("sigma", file.sigma).is_err() {
            return bad(format!("sigma {} outside [0, 1]", file.sigma));
        }
        if file.caption_likelihood.len() != file.candidates.len() {
            return bad(format!(
                "caption_likelihood has {} rows for {} candidates",
                file.caption_likelihood.len(),
                file.candidates.len()
            ));
        }
        for (r, row) in file.caption_likelihood.iter().enumerate() {
            if row.len() != file.caption_space.len() {
                return bad(format!(
                    "caption_likelihood row {r} has {} entries for {} captions",
                    row.len(),
                    file.caption_space.len()
                ));
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return bad(format!("caption_likelihood row {r} has entries outside [0, 1]"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > tolerances::NORMALIZATION {
                return bad(format!("caption_likelihood row {r} sums to {sum}"));
            }
        }
        if file.answer_likelihood.len() != file.bags.len() {
            return bad(format!(
                "answer_likelihood has {} entries for {} bags",
                file.answer_likelihood.len(),
                file.bags.len()
            ));
        }
        if file.answer_likelihood.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
            return bad("answer_likelihood entries must lie in (0, 1]".into());
        }
        Ok(Self {
            file,
            planning,
            flow_len,
            bag_index,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidEnv(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.file).expect("env serializes")
    }

    pub fn file(&self) -> &EnvFile {
        &self.file
    }

    pub fn planning(&self) -> &PlanningState {
        &self.planning
    }

    /// Fixed flow length `K`.
    pub fn flow_len(&self) -> usize {
        self.flow_len
    }

    pub fn num_bags(&self) -> usize {
        self.file.bags.len()
    }

    pub fn num_captions(&self) -> usize {
        self.file.caption_space.len()
    }

    pub fn candidates(&self) -> &[RoiBox] {
        &self.file.candidates
    }

    pub fn bags(&self) -> &[Vec<usize>] {
        &self.file.bags
    }

    pub fn golden(&self) -> &[RoiBox] {
        self.file.golden.boxes()
    }

    pub fn expert(&self) -> &[RoiBox] {
        self.file.expert.boxes()
    }

    pub fn sigma(&self) -> f64 {
        self.file.sigma
    }

    pub fn caption_prob(&self, roi: usize, caption: usize) -> f64 {
        self.file.caption_likelihood[roi][caption]
    }

    pub fn answer_likelihood(&self, bag: usize) -> f64 {
        self.file.answer_likelihood[bag]
    }

    /// Bag whose members are exactly the boxes of a complete path.
    pub fn bag_of(&self, path: &[Step]) -> Option<usize> {
        let mut key: Vec<usize> = path.iter().map(|s| s.roi).collect();
        key.sort_unstable();
        self.bag_index.get(&key).copied()
    }

    /// Bags that contain every (distinct) box of the prefix.
    pub fn bags_consistent_with(&self, prefix: &[Step]) -> Vec<usize> {
        let rois: Vec<usize> = prefix.iter().map(|s| s.roi).collect();
        if (1..rois.len()).any(|i| rois[..i].contains(&rois[i])) {
            return Vec::new();
        }
        self.file
            .bags
            .iter()
            .enumerate()
            .filter(|(_, bag)| rois.iter().all(|r| bag.contains(r)))
            .map(|(b, _)| b)
            .collect()
    }

    pub fn rois_of(&self, path: &[Step]) -> Vec<RoiBox> {
        path.iter().map(|s| self.file.candidates[s.roi]).collect()
    }

    /// Renders a path as a text-level flow.
    pub fn render(&self, path: &[Step], terminated: bool) -> PerceptualFlow {
        let states = path
            .iter()
            .map(|s| PerceptualState {
                roi: self.file.candidates[s.roi],
                caption: self.file.caption_space[s.caption].clone(),
            })
            .collect();
        PerceptualFlow::new(self.planning.clone(), states, terminated)
    }

    /// Maps a text-level flow back onto candidate and caption indices.
    pub fn locate(&self, flow: &PerceptualFlow) -> Result<Vec<Step>> {
        if flow.planning != self.planning {
            return Err(Error::ForeignFlow("planning state differs".into()));
        }
        flow.states
            .iter()
            .map(|s| {
                let roi = self
                    .file
                    .candidates
                    .iter()
                    .position(|b| *b == s.roi)
                    .ok_or_else(|| Error::ForeignFlow(format!("box {:?} not a candidate", s.roi.coords())))?;
                let caption = self
                    .file
                    .caption_space
                    .iter()
                    .position(|c| *c == s.caption)
                    .ok_or_else(|| Error::ForeignFlow(format!("caption {:?} not in caption space", s.caption)))?;
                Ok(Step { roi, caption })
            })
            .collect()
    }

    /// `M * K! * |C|^K`, the size of the enumerated prior support.
    pub fn support_size(&self) -> u128 {
        let k = self.flow_len as u128;
        let fact: u128 = (1..=k).product();
        (self.num_bags() as u128)
            .saturating_mul(fact)
            .saturating_mul((self.num_captions() as u128).saturating_pow(k as u32))
    }
}

/// Probability distribution over complete or prefix paths.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowDistribution {
    pub support: Vec<Vec<Step>>,
    pub probs: Vec<f64>,
}

impl FlowDistribution {
    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[Step], f64)> {
        self.support
            .iter()
            .map(Vec::as_slice)
            .zip(self.probs.iter().copied())
    }

    pub fn to_map(&self) -> HashMap<&[Step], f64> {
        let mut map = HashMap::with_capacity(self.len());
        for (path, p) in self.iter() {
            *map.entry(path).or_insert(0.0) += p;
        }
        map
    }

    /// Mass of the paths selected by `pred`.
    pub fn mass_where(&self, mut pred: impl FnMut(&[Step]) -> bool) -> f64 {
        self.iter().filter(|(z, _)| pred(z)).map(|(_, p)| p).sum()
    }

    /// Reweights by `weight(path)` and renormalizes, returning the normalizer.
    pub fn reweight(&self, mut weight: impl FnMut(&[Step]) -> f64) -> Result<(Self, f64)> {
        let raw: Vec<f64> = self.iter().map(|(z, p)| p * weight(z)).collect();
        let total: f64 = raw.iter().sum();
        if !(total > 0.0) {
            return Err(Error::ZeroPosterior);
        }
        Ok((
            Self {
                support: self.support.clone(),
                probs: raw.into_iter().map(|p| p / total).collect(),
            },
            total,
        ))
    }
}

/// Enumerates the prior over terminated flows, refusing supports above
/// [`tolerances::ENUMERATION_CAP`].
pub fn enumerate_prior(env: &EnvSpec) -> Result<FlowDistribution> {
    enumerate_prior_capped(env, tolerances::ENUMERATION_CAP)
}

pub fn enumerate_prior_capped(env: &EnvSpec, cap: usize) -> Result<FlowDistribution> {
    let size = env.support_size();
    if size > cap as u128 {
        return Err(Error::EnumerationTooLarge { size, cap });
    }
    let k = env.flow_len();
    let n_cap = env.num_captions();
    let base = 1.0 / (env.num_bags() as f64 * (1..=k).map(|i| i as f64).product::<f64>());
    let mut support = Vec::with_capacity(size as usize);
    let mut probs = Vec::with_capacity(size as usize);
    for bag in env.bags() {
        for order in permutations(k) {
            let rois: Vec<usize> = order.iter().map(|&i| bag[i]).collect();
            let mut caps = vec![0usize; k];
            loop {
                let path: Vec<Step> = rois
                    .iter()
                    .zip(&caps)
                    .map(|(&roi, &caption)| Step { roi, caption })
                    .collect();
                let p = path
                    .iter()
                    .fold(base, |acc, s| acc * env.caption_prob(s.roi, s.caption));
                support.push(path);
                probs.push(p);
                if !odometer(&mut caps, n_cap) {
                    break;
                }
            }
        }
    }
    Ok(FlowDistribution { support, probs })
}

/// All permutations of `0..k` in lexicographic order.
fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut cur: Vec<usize> = (0..k).collect();
    let mut out = vec![cur.clone()];
    // next lexicographic permutation
    loop {
        let Some(i) = (1..k).rev().find(|&i| cur[i - 1] < cur[i]) else {
            return out;
        };
        let j = (i..k).rev().find(|&j| cur[j] > cur[i - 1]).unwrap();
        cur.swap(i - 1, j);
        cur[i..].reverse();
        out.push(cur.clone());
    }
}

/// Advances a base-`radix` counter (last digit fastest). False on wrap.
fn odometer(digits: &mut [usize], radix: usize) -> bool {
    for d in digits.iter_mut().rev() {
        *d += 1;
        if *d < radix {
            return true;
        }
        *d = 0;
    }
    false
}

/// `P(Z | X, Y)`: the prior times `P(Y | bag)`, renormalized.
pub fn posterior(env: &EnvSpec) -> Result<FlowDistribution> {
    let prior = enumerate_prior(env)?;
    posterior_from_prior(env, &prior)
}

pub fn posterior_from_prior(env: &EnvSpec, prior: &FlowDistribution) -> Result<FlowDistribution> {
    prior
        .reweight(|z| env.answer_likelihood(env.bag_of(z).expect("enumerated path has a bag")))
        .map(|(d, _)| d)
}

/// `P(Y | X) = sum_Z P(Z | X) P(Y | Z, X)`, by enumeration.
pub fn marginal_answer_likelihood(env: &EnvSpec) -> Result<f64> {
    let prior = enumerate_prior(env)?;
    Ok(prior
        .iter()
        .map(|(z, p)| p * env.answer_likelihood(env.bag_of(z).expect("enumerated path has a bag")))
        .sum())
}

/// Posterior masses of the valid support and of the expert vicinity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportStats {
    pub s_v: f64,
    pub s_b: f64,
    pub q: f64,
    /// Whether every flow in the eps-vicinity of the expert set is also in the
    /// valid support.
    pub nested: bool,
}

pub fn in_valid_support(env: &EnvSpec, path: &[Step]) -> bool {
    chamfer_iou_distance(&env.rois_of(path), env.golden()).expect("non-empty sets") <= env.sigma()
}

pub fn in_expert_vicinity(env: &EnvSpec, path: &[Step], eps: f64) -> bool {
    if path.is_empty() {
        return true;
    }
    chamfer_iou_distance(&env.rois_of(path), env.expert()).expect("non-empty sets") <= eps
}

pub fn support_masses(env: &EnvSpec, eps: f64) -> Result<SupportStats> {
    let post = posterior(env)?;
    support_masses_from(env, &post, eps)
}

pub fn support_masses_from(env: &EnvSpec, post: &FlowDistribution, eps: f64) -> Result<SupportStats> {
    check_unit("eps", eps)?;
    let mut s_v = 0.0;
    let mut s_b = 0.0;
    let mut nested = true;
    for (z, p) in post.iter() {
        let valid = in_valid_support(env, z);
        let near = in_expert_vicinity(env, z, eps);
        if valid {
            s_v += p;
        }
        if near {
            s_b += p;
            if !valid && p > 0.0 {
                nested = false;
            }
        }
    }
    if s_v <= 0.0 {
        return Err(Error::EmptyValidSupport);
    }
    // sums of many terms can overshoot one by an ulp or two
    let (s_v, s_b) = (s_v.min(1.0), s_b.min(1.0));
    Ok(SupportStats {
        s_v,
        s_b,
        q: s_b / s_v,
        nested,
    })
}

/// `P_V(Z) = P(Z | X, Y) 1{Z in S_V} / s_V`.
pub fn valid_posterior(env: &EnvSpec, post: &FlowDistribution) -> Result<FlowDistribution> {
    post.reweight(|z| if in_valid_support(env, z) { 1.0 } else { 0.0 })
        .map(|(d, _)| d)
        .map_err(|_| Error::EmptyValidSupport)
}

/// Shape of a randomly generated environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomEnvConfig {
    pub candidates: usize,
    pub bags: usize,
    pub flow_len: usize,
    pub captions: usize,
    pub sigma: f64,
}

/// Deterministic random environment with all boxes on the relative grid. The
/// golden set is a jittered copy of bag 0 and the expert set a tighter crop of
/// it, so small vicinities nest inside the valid support.
pub fn random_env(seed: u64, cfg: RandomEnvConfig) -> Result<EnvSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = GRID as f64;
    let grid_box = |x1: i64, y1: i64, x2: i64, y2: i64| {
        RoiBox::new(x1 as f64 / g, y1 as f64 / g, x2 as f64 / g, y2 as f64 / g)
    };

    let mut candidates: Vec<RoiBox> = Vec::with_capacity(cfg.candidates);
    let mut rel: Vec<[i64; 4]> = Vec::with_capacity(cfg.candidates);
    while candidates.len() < cfg.candidates {
        let w = rng.gen_range(100..=400);
        let h = rng.gen_range(100..=400);
        let x1 = rng.gen_range(0..=(1000 - w));
        let y1 = rng.gen_range(0..=(1000 - h));
        let b = grid_box(x1, y1, x1 + w, y1 + h)?;
        if !candidates.contains(&b) {
            candidates.push(b);
            rel.push([x1, y1, x1 + w, y1 + h]);
        }
    }

    let mut bags: Vec<Vec<usize>> = Vec::with_capacity(cfg.bags);
    let mut attempts = 0;
    while bags.len() < cfg.bags {
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::InvalidEnv("could not draw distinct bags".into()));
        }
        let mut bag: Vec<usize> = Vec::with_capacity(cfg.flow_len);
        while bag.len() < cfg.flow_len {
            let r = rng.gen_range(0..cfg.candidates);
            if !bag.contains(&r) {
                bag.push(r);
            }
        }
        bag.sort_unstable();
        if !bags.contains(&bag) {
            bags.push(bag);
        }
    }

    let jitter = |rng: &mut ChaCha8Rng, [x1, y1, x2, y2]: [i64; 4], amount: i64, shrink: i64| {
        let d = |rng: &mut ChaCha8Rng| rng.gen_range(-amount..=amount);
        let nx1 = (x1 + shrink + d(rng)).clamp(0, 999);
        let ny1 = (y1 + shrink + d(rng)).clamp(0, 999);
        let nx2 = (x2 - shrink + d(rng)).clamp(nx1 + 1, 1000);
        let ny2 = (y2 - shrink + d(rng)).clamp(ny1 + 1, 1000);
        grid_box(nx1, ny1, nx2, ny2)
    };
    let golden = bags[0]
        .iter()
        .map(|&r| jitter(&mut rng, rel[r], 15, 0))
        .collect::<Result<Vec<_>>>()?;
    let expert = bags[0]
        .iter()
        .map(|&r| jitter(&mut rng, rel[r], 10, 20))
        .collect::<Result<Vec<_>>>()?;

    let caption_likelihood = (0..cfg.candidates)
        .map(|_| {
            let w: Vec<f64> = (0..cfg.captions).map(|_| rng.gen_range(0.05..1.0)).collect();
            normalized(w)
        })
        .collect();
    let answer_likelihood = (0..cfg.bags).map(|_| rng.gen_range(0.05..1.0)).collect();

    EnvSpec::new(EnvFile {
        envspec_version: ENVSPEC_VERSION,
        input_id: format!("random-{seed}"),
        caption_space: (0..cfg.captions).map(|c| format!("caption {c}")).collect(),
        candidates,
        bags,
        golden: RoiSet::new(golden)?,
        expert: RoiSet::new(expert)?,
        sigma: cfg.sigma,
        caption_likelihood,
        answer_likelihood,
        planning_text: "locate the evidence needed to answer the question".into(),
    })
}

/// Normalizes weights so they sum to one within a couple of ulps; the last
/// entry absorbs the rounding remainder.
fn normalized(w: Vec<f64>) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    let mut p: Vec<f64> = w.iter().map(|x| x / total).collect();
    let head: f64 = p[..p.len() - 1].iter().sum();
    let last = p.len() - 1;
    p[last] = 1.0 - head;
    p
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn bx(c: [f64; 4]) -> RoiBox {
        RoiBox::try_from(c).unwrap()
    }

    /// Builds a small env; `bags` index into `candidates`.
    pub(crate) fn tiny_env(
        candidates: Vec<[f64; 4]>,
        bags: Vec<Vec<usize>>,
        captions: usize,
        rows: Vec<Vec<f64>>,
        answers: Vec<f64>,
        golden: Vec<[f64; 4]>,
        expert: Vec<[f64; 4]>,
        sigma: f64,
    ) -> EnvSpec {
        EnvSpec::new(EnvFile {
            envspec_version: 1,
            input_id: String::new(),
            caption_space: (0..captions).map(|c| format!("c{c}")).collect(),
            candidates: candidates.into_iter().map(bx).collect(),
            bags,
            golden: RoiSet::new(golden.into_iter().map(bx).collect()).unwrap(),
            expert: RoiSet::new(expert.into_iter().map(bx).collect()).unwrap(),
            sigma,
            caption_likelihood: rows,
            answer_likelihood: answers,
            planning_text: "plan".into(),
        })
        .unwrap()
    }

    const A: [f64; 4] = [0.0, 0.0, 0.2, 0.2];
    const B: [f64; 4] = [0.5, 0.5, 0.9, 0.9];
    const C: [f64; 4] = [0.0, 0.6, 0.3, 0.9];
    const D: [f64; 4] = [0.6, 0.0, 0.9, 0.3];

    #[test]
    fn single_bag_single_state() {
        let env = tiny_env(vec![A], vec![vec![0]], 2, vec![vec![0.7, 0.3]], vec![1.0], vec![A], vec![A], 0.1);
        let prior = enumerate_prior(&env).unwrap();
        assert_eq!(prior.len(), 2);
        assert!((prior.probs[0] - 0.7).abs() < 1e-15);
        assert!((prior.probs[1] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn two_bags_two_states_one_caption() {
        let env = tiny_env(
            vec![A, B, C, D],
            vec![vec![0, 1], vec![2, 3]],
            1,
            vec![vec![1.0]; 4],
            vec![0.5, 0.5],
            vec![A, B],
            vec![A, B],
            0.1,
        );
        let prior = enumerate_prior(&env).unwrap();
        assert_eq!(prior.len(), 4);
        assert!(prior.probs.iter().all(|&p| (p - 0.25).abs() < 1e-15));
        assert_eq!(env.support_size(), 4);
    }

    #[test]
    fn support_size_matches_formula() {
        let env = random_env(
            3,
            RandomEnvConfig {
                candidates: 7,
                bags: 3,
                flow_len: 3,
                captions: 3,
                sigma: 0.5,
            },
        )
        .unwrap();
        let prior = enumerate_prior(&env).unwrap();
        assert_eq!(prior.len() as u128, env.support_size());
        assert_eq!(prior.len(), 3 * 6 * 27);
        assert!((prior.total() - 1.0).abs() < tolerances::NORMALIZATION);
    }

    #[test]
    fn enumeration_cap_refuses() {
        let env = random_env(
            1,
            RandomEnvConfig {
                candidates: 6,
                bags: 2,
                flow_len: 3,
                captions: 4,
                sigma: 0.5,
            },
        )
        .unwrap();
        match enumerate_prior_capped(&env, 100) {
            Err(Error::EnumerationTooLarge { size, cap }) => {
                assert_eq!(size, 2 * 6 * 64);
                assert_eq!(cap, 100);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn posterior_bag_masses() {
        let env = tiny_env(
            vec![A, B],
            vec![vec![0], vec![1]],
            2,
            vec![vec![0.5, 0.5]; 2],
            vec![0.9, 0.1],
            vec![A],
            vec![A],
            0.1,
        );
        let post = posterior(&env).unwrap();
        let bag0 = post.mass_where(|z| env.bag_of(z) == Some(0));
        assert!((bag0 - 0.9).abs() < 1e-15);
        assert!((post.total() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_answer_likelihood_keeps_prior() {
        let env = tiny_env(
            vec![A, B, C],
            vec![vec![0, 1], vec![1, 2]],
            2,
            vec![vec![0.6, 0.4], vec![0.1, 0.9], vec![0.5, 0.5]],
            vec![0.3, 0.3],
            vec![A, B],
            vec![A, B],
            0.1,
        );
        let prior = enumerate_prior(&env).unwrap();
        let post = posterior(&env).unwrap();
        for (a, b) in prior.probs.iter().zip(&post.probs) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn support_mass_examples() {
        let env = tiny_env(
            vec![A, B, C],
            vec![vec![0], vec![1], vec![2]],
            1,
            vec![vec![1.0]; 3],
            vec![0.2, 0.3, 0.5],
            vec![A],
            vec![A],
            0.0,
        );
        // E = G and eps = sigma: identical membership sets
        let st = support_masses(&env, 0.0).unwrap();
        assert_eq!(st.s_b, st.s_v);
        assert_eq!(st.q, 1.0);
        assert!((st.s_v - 0.2).abs() < 1e-15);
        assert!(st.nested);

        // eps = 0 with E matching exactly one bag
        let env2 = tiny_env(
            vec![A, B, C],
            vec![vec![0], vec![1], vec![2]],
            1,
            vec![vec![1.0]; 3],
            vec![0.2, 0.3, 0.5],
            vec![A],
            vec![B],
            1.0,
        );
        let st = support_masses(&env2, 0.0).unwrap();
        assert!((st.s_b - 0.3).abs() < 1e-15);
        assert_eq!(st.s_v, 1.0);

        // no bag close enough
        let env3 = tiny_env(
            vec![A, B],
            vec![vec![0], vec![1]],
            1,
            vec![vec![1.0]; 2],
            vec![0.5, 0.5],
            vec![A],
            vec![[0.2, 0.2, 0.4, 0.4]],
            0.0,
        );
        let st = support_masses(&env3, 0.5).unwrap();
        assert_eq!(st.s_b, 0.0);
        assert_eq!(st.q, 0.0);
    }

    #[test]
    fn empty_valid_support_is_an_error() {
        let env = tiny_env(
            vec![A],
            vec![vec![0]],
            1,
            vec![vec![1.0]],
            vec![1.0],
            vec![B],
            vec![A],
            0.5,
        );
        assert_eq!(support_masses(&env, 0.1), Err(Error::EmptyValidSupport));
    }

    #[test]
    fn validation_errors() {
        let mut file = tiny_env(vec![A, B], vec![vec![0], vec![1]], 1, vec![vec![1.0]; 2], vec![0.5, 0.5], vec![A], vec![A], 0.1)
            .file()
            .clone();
        let ok = file.clone();
        file.caption_likelihood[0] = vec![0.9];
        assert!(EnvSpec::new(file.clone()).is_err());
        file = ok.clone();
        file.answer_likelihood[1] = 0.0;
        assert!(EnvSpec::new(file.clone()).is_err());
        file = ok.clone();
        file.bags[1] = vec![0, 1];
        assert!(EnvSpec::new(file.clone()).is_err());
        file = ok.clone();
        file.bags[1] = vec![5];
        assert!(EnvSpec::new(file.clone()).is_err());
        file = ok.clone();
        file.envspec_version = 2;
        assert!(EnvSpec::new(file.clone()).is_err());
        file = ok.clone();
        file.bags[1] = vec![0];
        assert!(EnvSpec::new(file).is_err());
        assert!(EnvSpec::from_json("{\"envspec_version\": 1}").is_err());
        assert!(EnvSpec::new(ok).is_ok());
    }

    #[test]
    fn json_round_trip() {
        let env = random_env(
            11,
            RandomEnvConfig {
                candidates: 6,
                bags: 3,
                flow_len: 2,
                captions: 2,
                sigma: 0.5,
            },
        )
        .unwrap();
        let back = EnvSpec::from_json(&env.to_json()).unwrap();
        assert_eq!(back, env);
    }

    #[test]
    fn permutations_are_lexicographic() {
        let p = permutations(3);
        assert_eq!(p.len(), 6);
        assert_eq!(p[0], vec![0, 1, 2]);
        assert_eq!(p[5], vec![2, 1, 0]);
        let mut sorted = p.clone();
        sorted.sort();
        assert_eq!(p, sorted);
        assert_eq!(permutations(1), vec![vec![0]]);
    }

    #[test]
    fn posterior_over_prior_is_constant_per_bag() {
        for seed in 0..5 {
            let env = random_env(
                seed,
                RandomEnvConfig {
                    candidates: 6,
                    bags: 3,
                    flow_len: 2,
                    captions: 3,
                    sigma: 0.5,
                },
            )
            .unwrap();
            let prior = enumerate_prior(&env).unwrap();
            let post = posterior(&env).unwrap();
            let mut ratio: HashMap<usize, f64> = HashMap::new();
            for ((z, p), q) in prior.iter().zip(&post.probs) {
                let r = q / p;
                let b = env.bag_of(z).unwrap();
                let first = *ratio.entry(b).or_insert(r);
                assert!((first - r).abs() <= 1e-12 * first);
            }
        }
    }

    #[test]
    fn s_b_monotone_in_eps() {
        let env = random_env(
            5,
            RandomEnvConfig {
                candidates: 6,
                bags: 4,
                flow_len: 2,
                captions: 2,
                sigma: 0.6,
            },
        )
        .unwrap();
        let post = posterior(&env).unwrap();
        let mut last = 0.0;
        for i in 0..=20 {
            let st = support_masses_from(&env, &post, i as f64 / 20.0).unwrap();
            assert!(st.s_b >= last);
            last = st.s_b;
        }
    }

    #[test]
    fn locate_inverts_render() {
        let env = random_env(
            2,
            RandomEnvConfig {
                candidates: 5,
                bags: 2,
                flow_len: 2,
                captions: 2,
                sigma: 0.5,
            },
        )
        .unwrap();
        let prior = enumerate_prior(&env).unwrap();
        for z in &prior.support {
            let flow = env.render(z, true);
            assert_eq!(&env.locate(&flow).unwrap(), z);
        }
    }
}
