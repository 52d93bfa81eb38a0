//! Axis-aligned boxes in normalized image coordinates and the set-level
//! Chamfer-IoU metrics built on top of them.
//!
//! A [`RoiSet`] is a multiset: duplicate boxes each contribute a term to the
//! directed average. Distances between sets are only defined for non-empty
//! sets, so the empty prefix (the bare planning state) never reaches
//! [`chamfer_iou_distance`]; [`shaping_weight`] handles it by convention.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalized box `[x1, y1, x2, y2]` with `0 <= x1 < x2 <= 1` and
/// `0 <= y1 < y2 <= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct RoiBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl RoiBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let bad = |reason| Error::InvalidBox {
            x1,
            y1,
            x2,
            y2,
            reason,
        };
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(bad("non-finite coordinate"));
        }
        if x1 < 0.0 || y1 < 0.0 || x2 > 1.0 || y2 > 1.0 {
            return Err(bad("coordinate outside [0, 1]"));
        }
        if x1 >= x2 {
            return Err(bad("x1 >= x2"));
        }
        if y1 >= y2 {
            return Err(bad("y1 >= y2"));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    pub fn intersection_area(&self, other: &RoiBox) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        w * h
    }
}

impl TryFrom<[f64; 4]> for RoiBox {
    type Error = Error;

    fn try_from(c: [f64; 4]) -> Result<Self> {
        RoiBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<RoiBox> for [f64; 4] {
    fn from(b: RoiBox) -> Self {
        b.coords()
    }
}

/// Non-empty multiset of boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<RoiBox>", into = "Vec<RoiBox>")]
pub struct RoiSet(Vec<RoiBox>);

impl RoiSet {
    pub fn new(boxes: Vec<RoiBox>) -> Result<Self> {
        if boxes.is_empty() {
            return Err(Error::EmptySet("RoiSet"));
        }
        Ok(Self(boxes))
    }

    pub fn boxes(&self) -> &[RoiBox] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<RoiBox>> for RoiSet {
    type Error = Error;

    fn try_from(boxes: Vec<RoiBox>) -> Result<Self> {
        RoiSet::new(boxes)
    }
}

impl From<RoiSet> for Vec<RoiBox> {
    fn from(s: RoiSet) -> Self {
        s.0
    }
}

/// Intersection over union of two boxes.
pub fn iou(a: &RoiBox, b: &RoiBox) -> f64 {
    let inter = a.intersection_area(b);
    inter / (a.area() + b.area() - inter)
}

/// `(1/|A|) * sum_{a in A} max_{b in B} IoU(a, b)`.
pub fn directed_chamfer_iou(a: &[RoiBox], b: &[RoiBox]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySet("directed_chamfer_iou"));
    }
    let total: f64 = a
        .iter()
        .map(|x| b.iter().map(|y| iou(x, y)).fold(0.0, f64::max))
        .sum();
    Ok(total / a.len() as f64)
}

/// Symmetrized Chamfer-IoU distance `1 - (IoU_{A->B} + IoU_{B->A}) / 2`.
pub fn chamfer_iou_distance(a: &[RoiBox], b: &[RoiBox]) -> Result<f64> {
    let ab = directed_chamfer_iou(a, b)?;
    let ba = directed_chamfer_iou(b, a)?;
    Ok(1.0 - 0.5 * (ab + ba))
}

/// Membership in the closed eps-ball around `reference`.
pub fn in_vicinity(prefix_rois: &[RoiBox], reference: &[RoiBox], eps: f64) -> Result<bool> {
    check_unit("eps", eps)?;
    Ok(chamfer_iou_distance(prefix_rois, reference)? <= eps)
}

/// Log of the vicinal shaping weight: `0` inside the ball (or for the bare
/// planning state), `-lambda` outside.
pub fn log_shaping_weight(
    prefix_rois: &[RoiBox],
    reference: &[RoiBox],
    eps: f64,
    lambda: f64,
) -> Result<f64> {
    check_lambda(lambda)?;
    if prefix_rois.is_empty() {
        return Ok(0.0);
    }
    Ok(if in_vicinity(prefix_rois, reference, eps)? {
        0.0
    } else {
        -lambda
    })
}

/// Vicinal shaping weight `exp(-lambda * 1{prefix outside B_eps(reference)})`.
pub fn shaping_weight(
    prefix_rois: &[RoiBox],
    reference: &[RoiBox],
    eps: f64,
    lambda: f64,
) -> Result<f64> {
    log_shaping_weight(prefix_rois, reference, eps, lambda).map(f64::exp)
}

pub(crate) fn check_unit(name: &'static str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::OutOfRange {
            name,
            value: v,
            expected: "[0, 1]",
        });
    }
    Ok(())
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || lambda.is_nan() {
        return Err(Error::OutOfRange {
            name: "lambda",
            value: lambda,
            expected: ">= 0",
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(c: [f64; 4]) -> RoiBox {
        RoiBox::try_from(c).unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = bx([0.0, 0.0, 0.5, 0.5]);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&bx([0.0, 0.0, 0.4, 0.4]), &bx([0.5, 0.5, 1.0, 1.0])), 0.0);
        let c = bx([0.25, 0.25, 0.75, 0.75]);
        // inter 0.0625, union 0.25 + 0.25 - 0.0625 = 0.4375
        assert!((iou(&a, &c) - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_boxes_rejected() {
        assert!(RoiBox::new(0.3, 0.1, 0.3, 0.5).is_err());
        assert!(RoiBox::new(0.1, 0.5, 0.3, 0.2).is_err());
        assert!(RoiBox::new(-0.1, 0.0, 0.3, 0.2).is_err());
        assert!(RoiBox::new(0.0, 0.0, 1.1, 0.2).is_err());
        assert!(RoiBox::new(0.0, 0.0, f64::NAN, 0.2).is_err());
        assert!(RoiSet::new(vec![]).is_err());
    }

    #[test]
    fn chamfer_examples() {
        let a1 = bx([0.0, 0.0, 0.2, 0.2]);
        let a2 = bx([0.5, 0.5, 0.9, 0.9]);
        assert_eq!(directed_chamfer_iou(&[a1], &[a1]).unwrap(), 1.0);
        assert_eq!(directed_chamfer_iou(&[a1, a2], &[a1]).unwrap(), 0.5);
        assert_eq!(directed_chamfer_iou(&[a1], &[a1, a2]).unwrap(), 1.0);
        assert_eq!(chamfer_iou_distance(&[a1, a2], &[a1, a2]).unwrap(), 0.0);
        assert_eq!(chamfer_iou_distance(&[a1, a2], &[a1]).unwrap(), 0.25);
        assert_eq!(chamfer_iou_distance(&[a1], &[a2]).unwrap(), 1.0);
        assert!(directed_chamfer_iou(&[], &[a1]).is_err());
        assert!(chamfer_iou_distance(&[a1], &[]).is_err());
    }

    #[test]
    fn duplicates_count_in_the_mean() {
        let a1 = bx([0.0, 0.0, 0.2, 0.2]);
        let a2 = bx([0.5, 0.5, 0.9, 0.9]);
        let d = directed_chamfer_iou(&[a1, a1, a2], &[a1]).unwrap();
        assert!((d - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn vicinity_boundary_is_inclusive() {
        let a1 = bx([0.0, 0.0, 0.2, 0.2]);
        let a2 = bx([0.5, 0.5, 0.9, 0.9]);
        let e = [a1];
        assert!(in_vicinity(&e, &e, 0.0).unwrap());
        assert!(!in_vicinity(&[a1, a2], &e, 0.2).unwrap());
        assert!(in_vicinity(&[a1, a2], &e, 0.25).unwrap());
        assert!(in_vicinity(&e, &e, 1.5).is_err());
    }

    #[test]
    fn shaping_weight_values() {
        let a1 = bx([0.0, 0.0, 0.2, 0.2]);
        let a2 = bx([0.5, 0.5, 0.9, 0.9]);
        assert_eq!(shaping_weight(&[], &[a1], 0.0, 4.5).unwrap(), 1.0);
        assert_eq!(shaping_weight(&[a1], &[a1], 0.1, 4.5).unwrap(), 1.0);
        let w = shaping_weight(&[a2], &[a1], 0.1, 4.5).unwrap();
        assert!((w - 0.011108996538242306).abs() < 1e-15);
        assert!(shaping_weight(&[a2], &[a1], 0.1, -1.0).is_err());
    }

    fn arb_box() -> impl Strategy<Value = RoiBox> {
        (0u32..999, 0u32..999, 1u32..1000, 1u32..1000).prop_map(|(x, y, w, h)| {
            let x2 = (x + w).min(1000).max(x + 1);
            let y2 = (y + h).min(1000).max(y + 1);
            RoiBox::new(
                x as f64 / 1000.0,
                y as f64 / 1000.0,
                x2 as f64 / 1000.0,
                y2 as f64 / 1000.0,
            )
            .unwrap()
        })
    }

    proptest! {
        #[test]
        fn iou_symmetric_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(iou(&a, &a), 1.0);
        }

        #[test]
        fn chamfer_symmetric_and_zero_on_self(
            a in prop::collection::vec(arb_box(), 1..5),
            b in prop::collection::vec(arb_box(), 1..5),
        ) {
            let d = chamfer_iou_distance(&a, &b).unwrap();
            prop_assert_eq!(d, chamfer_iou_distance(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert_eq!(chamfer_iou_distance(&a, &a).unwrap(), 0.0);
        }

        #[test]
        fn vicinity_nests(
            a in prop::collection::vec(arb_box(), 1..4),
            e in prop::collection::vec(arb_box(), 1..4),
            e1 in 0.0f64..=1.0, e2 in 0.0f64..=1.0,
        ) {
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            if in_vicinity(&a, &e, lo).unwrap() {
                prop_assert!(in_vicinity(&a, &e, hi).unwrap());
            }
        }

        #[test]
        fn shaping_weight_two_valued(
            a in prop::collection::vec(arb_box(), 1..4),
            e in prop::collection::vec(arb_box(), 1..4),
            eps in 0.0f64..=1.0, lambda in 0.0f64..20.0,
        ) {
            let w = shaping_weight(&a, &e, eps, lambda).unwrap();
            prop_assert!(w == 1.0 || w == (-lambda).exp());
        }
    }
}
