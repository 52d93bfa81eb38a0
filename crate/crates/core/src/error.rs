use thiserror::Error;

use crate::grammar::ParseError;

/// Errors raised by the library. Parse errors from the flow grammar carry
/// their own byte offset and are wrapped here when they cross module lines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid box [{x1}, {y1}, {x2}, {y2}]: {reason}")]
    InvalidBox {
        x1: f64,
        y1: f64,
        x2: f64,
        y2: f64,
        reason: &'static str,
    },

    #[error("{0} requires a non-empty RoI set")]
    EmptySet(&'static str),

    #[error("parameter {name} = {value} out of range: {expected}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("planning text is blank")]
    BlankPlanning,

    #[error("prefix length {k} exceeds flow length {len}")]
    PrefixOutOfRange { k: usize, len: usize },

    #[error("invalid environment: {0}")]
    InvalidEnv(String),

    #[error("enumeration of {size} flows exceeds the cap of {cap}")]
    EnumerationTooLarge { size: u128, cap: usize },

    #[error("posterior has zero total mass")]
    ZeroPosterior,

    #[error("empty valid support (s_v = 0)")]
    EmptyValidSupport,

    #[error("prefix does not extend toward any admissible bag")]
    UnknownBag,

    #[error("distributions disagree: {0}")]
    Distribution(String),

    #[error("sub-trajectory ({i}, {j}): {reason}")]
    Residual {
        i: usize,
        j: usize,
        reason: &'static str,
    },

    #[error("termination probability is zero at depth {depth}")]
    ZeroTermination { depth: usize },

    #[error("zero total reward mass below a policy node at depth {depth}")]
    ZeroNodeMass { depth: usize },

    #[error("path is not a node of the policy trie")]
    UnknownPath,

    #[error("flow does not belong to the environment: {0}")]
    ForeignFlow(String),

    #[error(transparent)]
    Parse(#[from] ParseError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
