//! Difficulty-aware curation of training samples from verifier pass counts.
//!
//! `k_pass` is the number of sampled attempts needed before the verifier
//! first accepts an answer, or [`KPass::Failed`] when the budget runs out.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BUDGET: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KPass {
    Passed(u32),
    Failed,
}

impl KPass {
    pub fn passed(k: u32) -> Result<Self> {
        if k == 0 {
            return Err(Error::OutOfRange {
                name: "k_pass",
                value: 0.0,
                expected: ">= 1",
            });
        }
        Ok(Self::Passed(k))
    }

    fn is(self, k: u32) -> bool {
        self == Self::Passed(k)
    }
}

impl std::str::FromStr for KPass {
    type Err = Error;

    /// Accepts a positive integer or `failed`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("failed") {
            return Ok(Self::Failed);
        }
        let k: u32 = s.parse().map_err(|_| Error::OutOfRange {
            name: "k_pass",
            value: f64::NAN,
            expected: "positive integer or \"failed\"",
        })?;
        Self::passed(k)
    }
}

impl std::fmt::Display for KPass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Passed(k) => write!(f, "{k}"),
            Self::Failed => f.write_str("failed"),
        }
    }
}

/// Pass counts without and with the privileged evidence, under budget `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationRecord {
    pub k_pass_without: KPass,
    pub k_pass_with: KPass,
    pub budget: u32,
}

impl VerificationRecord {
    pub fn new(k_pass_without: KPass, k_pass_with: KPass) -> Self {
        Self {
            k_pass_without,
            k_pass_with,
            budget: DEFAULT_BUDGET,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    RejectTrivial,
    RejectUnverified,
    AcceptRft,
    AcceptColdStart,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::RejectTrivial => "reject_trivial",
            Self::RejectUnverified => "reject_unverified",
            Self::AcceptRft => "accept_rft",
            Self::AcceptColdStart => "accept_cold_start",
        }
    }
}

/// Applies the decision rows in order; the first matching row wins.
pub fn classify_sample(rec: &VerificationRecord) -> Decision {
    let n = rec.budget;
    if rec.k_pass_without.is(1) {
        return Decision::RejectTrivial;
    }
    if !rec.k_pass_with.is(1) {
        return Decision::RejectUnverified;
    }
    match rec.k_pass_without {
        KPass::Passed(k) if k <= n => Decision::AcceptRft,
        _ => Decision::AcceptColdStart,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn rec(without: KPass, with: KPass) -> Decision {
        classify_sample(&VerificationRecord::new(without, with))
    }

    #[test]
    fn table_rows() {
        use KPass::*;
        assert_eq!(rec(Passed(1), Passed(1)), Decision::RejectTrivial);
        assert_eq!(rec(Passed(1), Failed), Decision::RejectTrivial);
        assert_eq!(rec(Passed(5), Passed(3)), Decision::RejectUnverified);
        assert_eq!(rec(Failed, Failed), Decision::RejectUnverified);
        assert_eq!(rec(Passed(5), Passed(1)), Decision::AcceptRft);
        assert_eq!(rec(Passed(16), Passed(1)), Decision::AcceptRft);
        assert_eq!(rec(Passed(17), Passed(1)), Decision::AcceptColdStart);
        assert_eq!(rec(Failed, Passed(1)), Decision::AcceptColdStart);
    }

    #[test]
    fn lattice_is_covered() {
        let mut values: Vec<KPass> = (1..=20).map(KPass::Passed).collect();
        values.push(KPass::Failed);
        let mut counts = HashMap::new();
        for &a in &values {
            for &b in &values {
                *counts.entry(rec(a, b)).or_insert(0) += 1;
            }
        }
        assert_eq!(counts.values().sum::<usize>(), 21 * 21);
        assert_eq!(counts[&Decision::RejectTrivial], 21);
        assert_eq!(counts[&Decision::AcceptRft], 15);
        assert_eq!(counts[&Decision::AcceptColdStart], 5);
        assert_eq!(counts[&Decision::RejectUnverified], 20 * 20);
    }

    #[test]
    fn parse_k_pass() {
        assert_eq!("7".parse::<KPass>().unwrap(), KPass::Passed(7));
        assert_eq!(" FAILED ".parse::<KPass>().unwrap(), KPass::Failed);
        assert!("0".parse::<KPass>().is_err());
        assert!("-3".parse::<KPass>().is_err());
        assert!("x".parse::<KPass>().is_err());
        assert_eq!(KPass::Failed.to_string(), "failed");
    }
}
