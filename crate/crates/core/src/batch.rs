//! Shared-prefix batch planning for teacher-forced probe scoring.
//!
//! Scoring `log p(T | z_{0:i})` or `log p(Y | z_{0:i})` for every `i` naively
//! costs one forward pass per prefix. A [`BatchPlan`] instead lays out the
//! flow once, appends one probe per cut point, and uses position ids and an
//! attention mask so each probe sees only its own prefix and its own earlier
//! tokens. Probes are laid out in increasing `i`.

use serde::{Deserialize, Serialize};

use crate::flow::{relative_coords, PerceptualFlow, GRID};

pub type Token = u32;

/// Toy tokenizer: bytes map to `0..256`, relative coordinates to
/// `256..=1256`, and structural markers to the ids below. Every state ends in
/// a distinct closing marker, so the encoding is injective.
pub mod tokens {
    use super::Token;
    pub const COORD_BASE: Token = 256;
    pub const PLAN_OPEN: Token = COORD_BASE + super::GRID + 1;
    pub const PLAN_CLOSE: Token = PLAN_OPEN + 1;
    pub const BOX: Token = PLAN_OPEN + 2;
    pub const CAPTION: Token = PLAN_OPEN + 3;
    pub const STATE_CLOSE: Token = PLAN_OPEN + 4;
    pub const TERMINAL: Token = PLAN_OPEN + 5;
    pub const VOCAB: Token = PLAN_OPEN + 6;
}

/// Token segments for `z_0, z_1, ..., z_K`.
pub fn tokenize_flow(flow: &PerceptualFlow) -> Vec<Vec<Token>> {
    let mut segs = Vec::with_capacity(flow.len() + 1);
    let mut plan = vec![tokens::PLAN_OPEN];
    plan.extend(flow.planning.text().bytes().map(Token::from));
    plan.push(tokens::PLAN_CLOSE);
    segs.push(plan);
    for s in &flow.states {
        let mut seg = vec![tokens::BOX];
        seg.extend(relative_coords(&s.roi).iter().map(|&c| tokens::COORD_BASE + c as Token));
        seg.push(tokens::CAPTION);
        seg.extend(s.caption.bytes().map(Token::from));
        seg.push(tokens::STATE_CLOSE);
        segs.push(seg);
    }
    segs
}

/// Bytes of a label as tokens.
pub fn tokenize_text(text: &str) -> Vec<Token> {
    text.bytes().map(Token::from).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeSpan {
    pub probe: usize,
    /// Number of prefix tokens the probe attends to (`z_{0:i}`).
    pub cut: usize,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub tokens: Vec<Token>,
    pub position_ids: Vec<usize>,
    /// Row-major `n x n`; `mask[q * n + k]` means query `q` sees key `k`.
    pub mask: Vec<bool>,
    pub probes: Vec<ProbeSpan>,
    /// Length of the shared flow segment at the front.
    pub shared_len: usize,
}

impl BatchPlan {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn visible(&self, q: usize, k: usize) -> bool {
        self.mask[q * self.len() + k]
    }

    pub fn dump(&self) -> PlanDump {
        PlanDump {
            tokens: self.tokens.clone(),
            position_ids: self.position_ids.clone(),
            mask: self.mask.iter().map(|&b| if b { '1' } else { '0' }).collect(),
            probe_spans: self.probes.clone(),
        }
    }
}

/// JSON form of a plan with the mask as a row-major bit string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanDump {
    pub tokens: Vec<Token>,
    pub position_ids: Vec<usize>,
    pub mask: String,
    pub probe_spans: Vec<ProbeSpan>,
}

/// Lays out the segments once, followed by `probe` tokens for every cut
/// point `i = 0..=K`.
pub fn plan_probes(segments: &[Vec<Token>], probe: &[Token]) -> BatchPlan {
    let order: Vec<usize> = (0..segments.len()).collect();
    plan_probes_in_order(segments, probe, &order)
}

/// As [`plan_probes`] with the probes laid out in `order` (a permutation of
/// `0..=K`). `probes[j]` describes the `j`-th probe in layout order.
pub fn plan_probes_in_order(segments: &[Vec<Token>], probe: &[Token], order: &[usize]) -> BatchPlan {
    let shared: Vec<Token> = segments.concat();
    let shared_len = shared.len();
    let mut cuts = Vec::with_capacity(segments.len());
    let mut acc = 0;
    for seg in segments {
        acc += seg.len();
        cuts.push(acc);
    }
    let total = shared_len + cuts.len() * probe.len();
    let mut tokens = shared;
    let mut position_ids: Vec<usize> = (0..shared_len).collect();
    let mut probes = Vec::with_capacity(cuts.len());
    for &i in order {
        let cut = cuts[i];
        probes.push(ProbeSpan {
            probe: i,
            cut,
            start: tokens.len(),
            len: probe.len(),
        });
        tokens.extend_from_slice(probe);
        position_ids.extend(cut..cut + probe.len());
    }
    let mut mask = vec![false; total * total];
    for q in 0..shared_len {
        for k in 0..=q {
            mask[q * total + k] = true;
        }
    }
    for p in &probes {
        for t in 0..p.len {
            let q = p.start + t;
            for k in 0..p.cut {
                mask[q * total + k] = true;
            }
            for k in p.start..=q {
                mask[q * total + k] = true;
            }
        }
    }
    BatchPlan {
        tokens,
        position_ids,
        mask,
        probes,
        shared_len,
    }
}

/// One terminal-marker probe per prefix `z_{0:i}`.
pub fn plan_terminal_probes(flow: &PerceptualFlow) -> BatchPlan {
    plan_probes(&tokenize_flow(flow), &[tokens::TERMINAL])
}

/// One copy of the label tokens per prefix `z_{0:i}`.
pub fn plan_efficacy_probes(flow: &PerceptualFlow, y: &[Token]) -> BatchPlan {
    plan_probes(&tokenize_flow(flow), y)
}

/// Deterministic stand-in for a teacher-forced model: a token's score is a
/// hash of its id, its position and the multiset of visible `(token,
/// position)` pairs, mapped to `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScorer {
    pub seed: u64,
}

fn mix(mut x: u64) -> u64 {
    // splitmix64 finalizer
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

impl MockScorer {
    pub fn score(&self, token: Token, position: usize, visible: &[(Token, usize)]) -> f64 {
        let mut ctx = visible.to_vec();
        ctx.sort_unstable();
        let mut h = mix(self.seed);
        h = mix(h ^ token as u64);
        h = mix(h ^ position as u64);
        for (t, p) in ctx {
            h = mix(h ^ ((t as u64) << 32 | p as u64));
        }
        (h >> 11) as f64 / (1u64 << 53) as f64
    }
}

/// Sum of token scores for each probe id, under the plan's mask and
/// positions.
pub fn execute_plan(plan: &BatchPlan, scorer: &MockScorer) -> Vec<f64> {
    let mut out = vec![0.0; plan.probes.len()];
    for p in &plan.probes {
        out[p.probe] = {
            let mut total = 0.0;
            for q in p.start..p.start + p.len {
                let visible: Vec<(Token, usize)> = (0..plan.len())
                    .filter(|&k| plan.visible(q, k))
                    .map(|k| (plan.tokens[k], plan.position_ids[k]))
                    .collect();
                total += scorer.score(plan.tokens[q], plan.position_ids[q], &visible);
            }
            total
        };
    }
    out
}

/// The unbatched oracle: each probe scored on its own causal sequence.
pub fn naive_reference(segments: &[Vec<Token>], probe: &[Token], scorer: &MockScorer) -> Vec<f64> {
    (1..=segments.len())
        .map(|i| {
            let mut seq: Vec<Token> = segments[..i].concat();
            let cut = seq.len();
            seq.extend_from_slice(probe);
            let mut total = 0.0;
            for q in cut..seq.len() {
                let visible: Vec<(Token, usize)> = (0..=q).map(|k| (seq[k], k)).collect();
                total += scorer.score(seq[q], q, &visible);
            }
            total
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCounts {
    pub planned: usize,
    pub naive: usize,
    pub planned_prefix: usize,
    pub naive_prefix: usize,
}

pub fn token_counts(segments: &[Vec<Token>], probe_len: usize) -> TokenCounts {
    let planned_prefix: usize = segments.iter().map(Vec::len).sum();
    let mut naive_prefix = 0;
    let mut acc = 0;
    for seg in segments {
        acc += seg.len();
        naive_prefix += acc;
    }
    let probes = segments.len() * probe_len;
    TokenCounts {
        planned: planned_prefix + probes,
        naive: naive_prefix + probes,
        planned_prefix,
        naive_prefix,
    }
}
