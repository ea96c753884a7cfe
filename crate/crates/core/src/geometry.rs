//! Axis-aligned boxes in normalized image coordinates, IoU, and
//! proposal-to-ground-truth matching.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("degenerate box ({x1}, {y1}, {x2}, {y2}): corners must satisfy 0 <= x1 < x2 <= 1 and 0 <= y1 < y2 <= 1")]
    DegenerateBox { x1: f64, y1: f64, x2: f64, y2: f64 },
}

/// Axis-aligned box in normalized coordinates. Invariants are enforced at
/// construction: `0 <= x1 < x2 <= 1` and `0 <= y1 < y2 <= 1`, so a `BBox`
/// value always has positive area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBBox<S>")]
pub struct BBox<S: Scalar> {
    x1: S,
    y1: S,
    x2: S,
    y2: S,
}

/// Unvalidated mirror of [`BBox`]; deserialization funnels through
/// [`BBox::new`] so files cannot smuggle in degenerate boxes.
#[derive(Debug, Deserialize)]
struct RawBBox<S> {
    x1: S,
    y1: S,
    x2: S,
    y2: S,
}

impl<S: Scalar> TryFrom<RawBBox<S>> for BBox<S> {
    type Error = GeometryError;

    fn try_from(raw: RawBBox<S>) -> Result<Self, GeometryError> {
        BBox::new(raw.x1, raw.y1, raw.x2, raw.y2)
    }
}

impl<S: Scalar> BBox<S> {
    pub fn new(x1: S, y1: S, x2: S, y2: S) -> Result<Self, GeometryError> {
        let zero = S::zero();
        let one = S::one();
        // NaN fails every comparison and is rejected with the rest.
        let ok = x1 >= zero && y1 >= zero && x1 < x2 && y1 < y2 && x2 <= one && y2 <= one;
        if !ok {
            return Err(GeometryError::DegenerateBox {
                x1: x1.to_f64_lossy(),
                y1: y1.to_f64_lossy(),
                x2: x2.to_f64_lossy(),
                y2: y2.to_f64_lossy(),
            });
        }
        Ok(BBox { x1, y1, x2, y2 })
    }

    #[inline]
    pub fn x1(&self) -> S {
        self.x1
    }

    #[inline]
    pub fn y1(&self) -> S {
        self.y1
    }

    #[inline]
    pub fn x2(&self) -> S {
        self.x2
    }

    #[inline]
    pub fn y2(&self) -> S {
        self.y2
    }

    #[inline]
    pub fn width(&self) -> S {
        self.x2 - self.x1
    }

    #[inline]
    pub fn height(&self) -> S {
        self.y2 - self.y1
    }

    #[inline]
    pub fn area(&self) -> S {
        self.width() * self.height()
    }

    /// Intersection-over-union with `other`. Always in `[0, 1]`; exactly 0
    /// for disjoint boxes and exactly 1 for identical ones.
    pub fn iou(&self, other: &BBox<S>) -> S {
        let zero = S::zero();
        let iw = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(zero);
        let ih = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(zero);
        let inter = iw * ih;
        if inter == zero {
            return zero;
        }
        // Union is positive: both areas are positive by construction.
        inter / (self.area() + other.area() - inter)
    }
}

/// One proposal matched to its best ground-truth box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match<S: Scalar> {
    pub proposal: usize,
    pub gt: usize,
    pub iou: S,
}

/// Result of [`match_proposals`]: every proposal index appears exactly once,
/// either in `matched` or in `unmatched`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchPartition<S: Scalar> {
    pub matched: Vec<Match<S>>,
    pub unmatched: Vec<usize>,
}

impl<S: Scalar> MatchPartition<S> {
    /// Best-IoU ground truth for `proposal`, if the proposal matched.
    pub fn match_for(&self, proposal: usize) -> Option<&Match<S>> {
        self.matched.iter().find(|m| m.proposal == proposal)
    }
}

/// Partitions proposals by their best-IoU ground-truth box. A proposal is
/// matched when its best IoU is `>= threshold` (an IoU exactly at the
/// threshold counts as matched); IoU ties break toward the lowest ground
/// truth index. With no ground truth every proposal is unmatched.
pub fn match_proposals<S: Scalar>(
    proposals: &[BBox<S>],
    gts: &[BBox<S>],
    threshold: S,
) -> MatchPartition<S> {
    assert!(
        threshold > S::zero() && threshold < S::one(),
        "IoU threshold must lie strictly inside (0, 1)"
    );
    let mut out = MatchPartition {
        matched: Vec::new(),
        unmatched: Vec::new(),
    };
    for (p_idx, p) in proposals.iter().enumerate() {
        let mut best: Option<(usize, S)> = None;
        for (g_idx, g) in gts.iter().enumerate() {
            let v = p.iou(g);
            // Strict '>' keeps the earliest ground truth on ties.
            if best.map_or(true, |(_, b)| v > b) {
                best = Some((g_idx, v));
            }
        }
        match best {
            Some((g_idx, v)) if v >= threshold => out.matched.push(Match {
                proposal: p_idx,
                gt: g_idx,
                iou: v,
            }),
            _ => out.unmatched.push(p_idx),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    fn bb(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox<f64> {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    /// Counts grid cells (n x n, cell centers) inside `[lo, hi]` on one axis.
    fn axis_cells(lo: f64, hi: f64, n: usize) -> u64 {
        (0..n)
            .filter(|i| {
                let c = (*i as f64 + 0.5) / n as f64;
                c >= lo && c <= hi
            })
            .count() as u64
    }

    /// Rasterization oracle: counts cell centers inside each box and the
    /// overlap region; IoU is the cell-count ratio.
    fn grid_iou(a: &BBox<f64>, b: &BBox<f64>, n: usize) -> f64 {
        let ca = axis_cells(a.x1(), a.x2(), n) * axis_cells(a.y1(), a.y2(), n);
        let cb = axis_cells(b.x1(), b.x2(), n) * axis_cells(b.y1(), b.y2(), n);
        let ix1 = a.x1().max(b.x1());
        let ix2 = a.x2().min(b.x2());
        let iy1 = a.y1().max(b.y1());
        let iy2 = a.y2().min(b.y2());
        let ci = if ix1 < ix2 && iy1 < iy2 {
            axis_cells(ix1, ix2, n) * axis_cells(iy1, iy2, n)
        } else {
            0
        };
        let union = ca + cb - ci;
        if union == 0 {
            return 0.0;
        }
        ci as f64 / union as f64
    }

    fn random_box(rng: &mut impl Rng) -> BBox<f64> {
        loop {
            let x1: f64 = rng.random_range(0.0..0.9);
            let y1: f64 = rng.random_range(0.0..0.9);
            let x2: f64 = rng.random_range(x1 + 0.02..1.0);
            let y2: f64 = rng.random_range(y1 + 0.02..1.0);
            if let Ok(b) = BBox::new(x1, y1, x2, y2) {
                return b;
            }
        }
    }

    #[test]
    fn rejects_degenerate_boxes() {
        assert!(BBox::new(0.5, 0.0, 0.5, 1.0).is_err()); // zero width
        assert!(BBox::new(0.6, 0.0, 0.4, 1.0).is_err()); // inverted
        assert!(BBox::new(-0.1, 0.0, 0.5, 1.0).is_err()); // out of range
        assert!(BBox::new(0.0, 0.0, 0.5, 1.1).is_err());
        assert!(BBox::new(f64::NAN, 0.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn iou_identical_is_one() {
        let a = bb(0.1, 0.2, 0.6, 0.8);
        assert_eq!(a.iou(&a), 1.0);
    }

    #[test]
    fn iou_disjoint_is_zero() {
        let a = bb(0.0, 0.0, 0.2, 0.2);
        let b = bb(0.5, 0.5, 0.9, 0.9);
        assert_eq!(a.iou(&b), 0.0);
        // Touching edges share no area.
        let c = bb(0.2, 0.0, 0.4, 0.2);
        assert_eq!(a.iou(&c), 0.0);
    }

    #[test]
    fn iou_quarter_overlap_hand_value() {
        // Intersection: 0.25 x 0.25 = 0.0625. Union: 0.25 + 0.25 - 0.0625
        // = 0.4375. IoU = 1/7.
        let a = bb(0.0, 0.0, 0.5, 0.5);
        let b = bb(0.25, 0.25, 0.75, 0.75);
        assert!((a.iou(&b) - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn iou_containment() {
        // Inner area 0.04, outer 0.64; IoU = 0.04 / 0.64 = 0.0625.
        let outer = bb(0.1, 0.1, 0.9, 0.9);
        let inner = bb(0.4, 0.4, 0.6, 0.6);
        assert!((outer.iou(&inner) - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn iou_agrees_with_grid_oracle() {
        let mut rng = seed::rng(0x9e0);
        for _ in 0..200 {
            let a = random_box(&mut rng);
            let b = random_box(&mut rng);
            let fast = a.iou(&b);
            // Sides can be as thin as 0.02, so the grid must resolve them
            // to a few hundred cells for the count ratio to be trustworthy.
            let grid = grid_iou(&a, &b, 20_000);
            assert!(
                (fast - grid).abs() < 1e-3,
                "analytic {fast} vs grid {grid} for {a:?} {b:?}"
            );
        }
    }

    #[test]
    fn matching_at_exact_threshold_counts_as_matched() {
        // Two 0.375-area boxes overlapping by 0.25: IoU = 0.25 / 0.5 = 0.5
        // exactly (all quantities dyadic).
        let gt = bb(0.0, 0.0, 0.75, 0.5);
        let p = bb(0.25, 0.0, 1.0, 0.5);
        assert_eq!(gt.iou(&p), 0.5);
        let part = match_proposals(&[p], &[gt], 0.5);
        assert_eq!(part.matched.len(), 1);
        assert_eq!(part.matched[0].gt, 0);
        assert!(part.unmatched.is_empty());
    }

    #[test]
    fn matching_tie_breaks_toward_lowest_gt_index() {
        let g0 = bb(0.0, 0.0, 0.4, 0.4);
        let g1 = bb(0.0, 0.0, 0.4, 0.4);
        let p = bb(0.0, 0.0, 0.4, 0.4);
        let part = match_proposals(&[p], &[g0, g1], 0.5);
        assert_eq!(part.matched[0].gt, 0);
    }

    #[test]
    fn matching_with_no_gt_leaves_all_unmatched() {
        let p = bb(0.0, 0.0, 0.4, 0.4);
        let part = match_proposals(&[p, p], &[], 0.5);
        assert!(part.matched.is_empty());
        assert_eq!(part.unmatched, vec![0, 1]);
    }

    #[test]
    fn matching_splits_by_threshold() {
        let gt = bb(0.0, 0.0, 0.5, 0.5);
        let close = bb(0.0, 0.0, 0.5, 0.45); // IoU 0.9
        let far = bb(0.4, 0.4, 0.9, 0.9); // IoU ~0.021
        let part = match_proposals(&[close, far], &[gt], 0.5);
        assert_eq!(part.matched.len(), 1);
        assert_eq!(part.matched[0].proposal, 0);
        assert_eq!(part.unmatched, vec![1]);
    }

    #[test]
    fn serde_rejects_degenerate_box() {
        let good: Result<BBox<f64>, _> =
            serde_json::from_str(r#"{"x1":0.1,"y1":0.1,"x2":0.5,"y2":0.5}"#);
        assert!(good.is_ok());
        let bad: Result<BBox<f64>, _> =
            serde_json::from_str(r#"{"x1":0.5,"y1":0.1,"x2":0.1,"y2":0.5}"#);
        assert!(bad.is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_box() -> impl Strategy<Value = BBox<f64>> {
            (0.0..0.9f64, 0.0..0.9f64, 0.01..1.0f64, 0.01..1.0f64).prop_map(|(x1, y1, wf, hf)| {
                let x2 = x1 + (1.0 - x1) * wf.max(0.01);
                let y2 = y1 + (1.0 - y1) * hf.max(0.01);
                BBox::new(x1, y1, x2.min(1.0), y2.min(1.0)).unwrap()
            })
        }

        proptest! {
            #[test]
            fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
                let ab = a.iou(&b);
                let ba = b.iou(&a);
                prop_assert_eq!(ab, ba);
                prop_assert!((0.0..=1.0).contains(&ab));
            }

            #[test]
            fn partition_is_complete_and_disjoint(
                ps in proptest::collection::vec(arb_box(), 0..12),
                gs in proptest::collection::vec(arb_box(), 0..6),
            ) {
                let part = match_proposals(&ps, &gs, 0.5);
                let mut seen: Vec<usize> = part.matched.iter().map(|m| m.proposal)
                    .chain(part.unmatched.iter().copied()).collect();
                seen.sort_unstable();
                let all: Vec<usize> = (0..ps.len()).collect();
                prop_assert_eq!(seen, all);
                for m in &part.matched {
                    prop_assert!(m.iou >= 0.5);
                }
            }
        }
    }
}
