//! Numerical tolerances shared by tests, the acceptance harness and the CLI
//! checks. Every threshold used to pass or fail a check lives here.

/// Closed forms that should agree with enumeration up to rounding.
pub const EXACT: f64 = 1e-12;

/// Constant log-ratio between shaped rewards and the tilted posterior.
pub const PROPORTIONALITY: f64 = 1e-10;

/// Probability vectors must sum to one within this slack.
pub const NORMALIZATION: f64 = 1e-12;

/// SubTB loss at the proportional policy.
pub const OPTIMAL_LOSS: f64 = 1e-18;

/// Gradient norm at the proportional policy.
pub const OPTIMAL_GRAD_NORM: f64 = 1e-12;

/// Central finite-difference step for gradient checks.
pub const FD_STEP: f64 = 1e-6;

/// Per-component relative error between analytic and finite-difference gradients.
pub const FD_REL_ERR: f64 = 1e-5;

/// Analytic derivative of the calibrated bound against finite differences.
pub const DERIVATIVE_FD: f64 = 1e-8;

/// Trainer must bring TV(policy, tilted posterior) below this.
pub const TRAIN_TV_TILTED: f64 = 0.02;

/// Slack over the calibrated bound allowed for a trained policy.
pub const TRAIN_TV_VALID_SLACK: f64 = 0.03;

/// Numerical stand-in for an infinite shaping intensity (e^-40 ~ 4e-18).
pub const LAMBDA_INFINITY: f64 = 40.0;

/// Stand-in for the lambda -> 0 limit.
pub const LAMBDA_ZERO: f64 = 1e-8;

/// Bound at `LAMBDA_ZERO` versus 1 - s_v.
pub const LIMIT_ZERO: f64 = 1e-6;

/// Default enumeration cap on terminated flows.
pub const ENUMERATION_CAP: usize = 200_000;
