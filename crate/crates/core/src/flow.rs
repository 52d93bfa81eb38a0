//! Perceptual flows: a planning state followed by RoI/caption states and an
//! optional terminal marker.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RoiBox;

/// Relative coordinates run over `0..=GRID`.
pub const GRID: u32 = 1000;

/// Text of the analyze block; never blank.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PlanningState(String);

impl PlanningState {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Err(Error::BlankPlanning);
        }
        Ok(Self(trimmed.to_string()))
    }

    pub fn text(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for PlanningState {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        PlanningState::new(s)
    }
}

impl From<PlanningState> for String {
    fn from(p: PlanningState) -> Self {
        p.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptualState {
    pub roi: RoiBox,
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptualFlow {
    pub planning: PlanningState,
    pub states: Vec<PerceptualState>,
    pub terminated: bool,
    /// Everything after the closing localize tag, kept verbatim. It is not
    /// part of the trajectory.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub suffix: String,
}

impl PerceptualFlow {
    pub fn new(planning: PlanningState, states: Vec<PerceptualState>, terminated: bool) -> Self {
        Self {
            planning,
            states,
            terminated,
            suffix: String::new(),
        }
    }

    /// Number of perceptual states `K`.
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn prefix(&self, k: usize) -> Result<FlowPrefix<'_>> {
        if k > self.len() {
            return Err(Error::PrefixOutOfRange { k, len: self.len() });
        }
        Ok(FlowPrefix { flow: self, k })
    }

    pub fn rois(&self) -> Vec<RoiBox> {
        self.states.iter().map(|s| s.roi).collect()
    }
}

/// View onto the first `k` perceptual states of a flow, sharing its planning
/// state.
#[derive(Debug, Clone, Copy)]
pub struct FlowPrefix<'a> {
    flow: &'a PerceptualFlow,
    k: usize,
}

impl<'a> FlowPrefix<'a> {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn flow(&self) -> &'a PerceptualFlow {
        self.flow
    }

    pub fn planning(&self) -> &'a PlanningState {
        &self.flow.planning
    }

    pub fn states(&self) -> &'a [PerceptualState] {
        &self.flow.states[..self.k]
    }

    pub fn rois(&self) -> Vec<RoiBox> {
        self.states().iter().map(|s| s.roi).collect()
    }
}

/// Error from [`normalize_roi`]; the offending relative coordinates are kept.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{reason} in [{}, {}, {}, {}]", .coords[0], .coords[1], .coords[2], .coords[3])]
pub struct CoordError {
    pub coords: [i64; 4],
    pub reason: &'static str,
}

/// Maps relative integer coordinates on the `0..=1000` grid to a normalized box.
pub fn normalize_roi(rel: [i64; 4]) -> std::result::Result<RoiBox, CoordError> {
    let err = |reason| CoordError {
        coords: rel,
        reason,
    };
    if rel.iter().any(|&v| v < 0 || v > GRID as i64) {
        return Err(err("coordinate outside 0..=1000"));
    }
    let [x1, y1, x2, y2] = rel;
    if x1 >= x2 {
        return Err(err("x1 >= x2"));
    }
    if y1 >= y2 {
        return Err(err("y1 >= y2"));
    }
    let g = GRID as f64;
    Ok(RoiBox::new(x1 as f64 / g, y1 as f64 / g, x2 as f64 / g, y2 as f64 / g)
        .expect("grid coordinates form a valid box"))
}

/// Inverse of [`normalize_roi`] with round-half-up.
pub fn relative_coords(b: &RoiBox) -> [i64; 4] {
    b.coords()
        .map(|v| ((v * GRID as f64) + 0.5).floor() as i64)
}

/// All sub-trajectory index pairs `0 <= i <= j <= k_len` in lexicographic order.
pub fn sub_trajectory_pairs(k_len: usize) -> Vec<(usize, usize)> {
    (0..=k_len)
        .flat_map(|i| (i..=k_len).map(move |j| (i, j)))
        .collect()
}
