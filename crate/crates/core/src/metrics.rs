//! Detection-quality metrics: per-class AP and mAP at IoU 0.5, Wilderness
//! Impact at a known-recall operating point, Unknown Recall, and A-OSE.
//!
//! Wilderness Impact follows the open-set lineage: `WI = P_K / P_{K∪U} − 1`,
//! where `P_K` is known-class precision with detections that land on
//! unknown-truth objects removed from consideration (the closed world), and
//! `P_{K∪U}` counts those detections as false positives (the wilderness).
//! Both are taken at the confidence prefix where known-class recall first
//! reaches the operating point. A-OSE — never formally defined in the text
//! that names it — is the count of known-labeled detections, at that same
//! operating prefix, whose best overlap (IoU ≥ threshold) is with an
//! unknown-truth object.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::geometry::BBox;
use crate::scalar::Scalar;

/// Class label carried by a detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Known(u32),
    Unknown,
}

/// One emitted detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection<S: Scalar> {
    pub scene_id: u64,
    pub label: Label,
    pub bbox: BBox<S>,
    /// Finite, in [0, 1].
    pub confidence: S,
}

/// A ground-truth object visible to the evaluator. Known-class annotations
/// carry `known = true`; hidden unknown-truth objects carry `known = false`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalGt<S: Scalar> {
    pub scene_id: u64,
    pub class_id: u32,
    pub bbox: BBox<S>,
    pub known: bool,
}

/// Precision/recall pairs accumulated in confidence order for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve<S> {
    /// `(precision, recall)` after each detection, in sweep order.
    pub points: Vec<(S, S)>,
    pub n_gt: usize,
    /// True when the class has zero ground truths, making recall undefined
    /// (AP is then reported as 0).
    pub undefined_recall: bool,
}

/// AP integration rule over the PR curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApInterpolation {
    /// Area under the running-max precision envelope (all-point).
    AllPoint,
    /// Mean of envelope precision at recalls {0, 0.1, …, 1.0}.
    ElevenPoint,
}

/// Deterministic evaluation order: confidence descending, then scene id
/// ascending, then original position.
fn sort_for_sweep<S: Scalar>(detections: &[&Detection<S>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .confidence
            .partial_cmp(&detections[a].confidence)
            .expect("confidence is finite")
            .then(detections[a].scene_id.cmp(&detections[b].scene_id))
            .then(a.cmp(&b))
    });
    order
}

/// PR curve for one known class: greedy one-to-one matching in confidence
/// order; a detection is a true positive iff its best-IoU unclaimed
/// ground truth of the class reaches `iou_thresh` (IoU ties break toward
/// the lower ground-truth index). Duplicates on a claimed GT are false
/// positives.
pub fn pr_curve<S: Scalar>(
    detections: &[Detection<S>],
    gts: &[EvalGt<S>],
    class_id: u32,
    iou_thresh: S,
) -> PrCurve<S> {
    let class_dets: Vec<&Detection<S>> = detections
        .iter()
        .filter(|d| d.label == Label::Known(class_id))
        .collect();
    let class_gts: Vec<(usize, &EvalGt<S>)> = gts
        .iter()
        .enumerate()
        .filter(|(_, g)| g.known && g.class_id == class_id)
        .collect();
    let n_gt = class_gts.len();
    if n_gt == 0 {
        return PrCurve {
            points: Vec::new(),
            n_gt: 0,
            undefined_recall: true,
        };
    }

    let order = sort_for_sweep(&class_dets);
    let mut claimed: BTreeSet<usize> = BTreeSet::new();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut points = Vec::with_capacity(order.len());
    for &i in &order {
        let det = class_dets[i];
        let mut best: Option<(usize, S)> = None;
        for &(gi, g) in &class_gts {
            if g.scene_id != det.scene_id || claimed.contains(&gi) {
                continue;
            }
            let v = det.bbox.iou(&g.bbox);
            if best.map_or(true, |(_, bv)| v > bv) {
                best = Some((gi, v));
            }
        }
        match best {
            Some((gi, v)) if v >= iou_thresh => {
                claimed.insert(gi);
                tp += 1;
            }
            _ => fp += 1,
        }
        let precision = S::from_f64_lossy(tp as f64 / (tp + fp) as f64);
        let recall = S::from_f64_lossy(tp as f64 / n_gt as f64);
        points.push((precision, recall));
    }
    PrCurve {
        points,
        n_gt,
        undefined_recall: false,
    }
}

/// Area under the precision envelope of a PR curve.
pub fn average_precision<S: Scalar>(curve: &PrCurve<S>, interp: ApInterpolation) -> S {
    if curve.points.is_empty() {
        return S::zero();
    }
    // Envelope: precision at recall r is the max precision at recall >= r.
    // Sweeping the curve backwards with a running max realizes it.
    let mut env: Vec<(S, S)> = curve.points.clone();
    let mut running = S::zero();
    for pt in env.iter_mut().rev() {
        running = running.max(pt.0);
        pt.0 = running;
    }
    match interp {
        ApInterpolation::AllPoint => {
            let mut ap = S::zero();
            let mut prev_recall = S::zero();
            for &(p, r) in &env {
                if r > prev_recall {
                    ap += (r - prev_recall) * p;
                    prev_recall = r;
                }
            }
            ap
        }
        ApInterpolation::ElevenPoint => {
            let mut total = S::zero();
            for tenth in 0..=10u32 {
                let r0 = S::from_f64_lossy(tenth as f64 / 10.0);
                let best = env
                    .iter()
                    .filter(|&&(_, r)| r >= r0)
                    .map(|&(p, _)| p)
                    .fold(S::zero(), S::max);
                total += best;
            }
            total / S::from_f64_lossy(11.0)
        }
    }
}

/// Unweighted mean AP over the classes in `class_ids` that have at least
/// one ground truth. `None` when no class qualifies.
pub fn mean_ap<S: Scalar>(
    detections: &[Detection<S>],
    gts: &[EvalGt<S>],
    class_ids: &BTreeSet<u32>,
    iou_thresh: S,
    interp: ApInterpolation,
) -> Option<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for &cid in class_ids {
        let curve = pr_curve(detections, gts, cid, iou_thresh);
        if curve.undefined_recall {
            continue;
        }
        total += average_precision(&curve, interp).to_f64_lossy();
        n += 1;
    }
    (n > 0).then(|| total / n as f64)
}

/// Wilderness Impact at an operating point, with its diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WiReport {
    pub wi: f64,
    /// Known-class precision in the closed world (unknown hits removed).
    pub p_k: f64,
    /// Precision with unknown hits counted as false positives.
    pub p_ku: f64,
    /// Confidence of the last detection inside the operating prefix.
    pub threshold: f64,
    pub target_recall: f64,
    pub achieved_recall: f64,
    /// False when the target recall was unreachable and the metric was
    /// computed at the maximum achievable recall instead.
    pub reachable: bool,
}

/// Open-set errors at the same operating prefix as a [`WiReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenSetCounts {
    /// Known-labeled detections whose best overlap is an unknown object.
    pub a_ose: u64,
    pub prefix_len: usize,
}

struct SweepState {
    /// Per detection in sweep order: true positive flag and unknown-hit flag.
    tp: Vec<bool>,
    unknown_hit: Vec<bool>,
    confidences: Vec<f64>,
    n_known_gt: usize,
}

/// Shared sweep for WI and A-OSE: classifies every known-labeled detection
/// (in global confidence order) as TP/FP via per-class greedy matching, and
/// marks detections whose best truth overlap is an unknown object.
fn known_detection_sweep<S: Scalar>(
    detections: &[Detection<S>],
    gts: &[EvalGt<S>],
    iou_thresh: S,
) -> SweepState {
    let known_dets: Vec<&Detection<S>> = detections
        .iter()
        .filter(|d| matches!(d.label, Label::Known(_)))
        .collect();
    let order = sort_for_sweep(&known_dets);
    let n_known_gt = gts.iter().filter(|g| g.known).count();

    let mut claimed: BTreeSet<usize> = BTreeSet::new();
    let mut tp = Vec::with_capacity(order.len());
    let mut unknown_hit = Vec::with_capacity(order.len());
    let mut confidences = Vec::with_capacity(order.len());
    for &i in &order {
        let det = known_dets[i];
        let Label::Known(class_id) = det.label else {
            unreachable!("filtered to known labels");
        };
        // Greedy one-to-one claim among same-class unclaimed GTs.
        let mut best: Option<(usize, S)> = None;
        for (gi, g) in gts.iter().enumerate() {
            if !g.known
                || g.class_id != class_id
                || g.scene_id != det.scene_id
                || claimed.contains(&gi)
            {
                continue;
            }
            let v = det.bbox.iou(&g.bbox);
            if best.map_or(true, |(_, bv)| v > bv) {
                best = Some((gi, v));
            }
        }
        let is_tp = match best {
            Some((gi, v)) if v >= iou_thresh => {
                claimed.insert(gi);
                true
            }
            _ => false,
        };
        // Best overlap across ALL truth objects; known wins IoU ties.
        let mut best_iou = S::zero();
        let mut best_is_unknown = false;
        for g in gts.iter().filter(|g| g.scene_id == det.scene_id) {
            let v = det.bbox.iou(&g.bbox);
            if v > best_iou || (v == best_iou && best_is_unknown && g.known) {
                best_iou = v;
                best_is_unknown = !g.known;
            }
        }
        tp.push(is_tp);
        unknown_hit.push(best_is_unknown && best_iou >= iou_thresh);
        confidences.push(det.confidence.to_f64_lossy());
    }
    SweepState {
        tp,
        unknown_hit,
        confidences,
        n_known_gt,
    }
}

/// `WI = P_K / P_{K∪U} − 1` at the smallest confidence prefix whose
/// known-class recall reaches `recall_point`, plus A-OSE at that prefix.
/// Returns `None` when there are no known ground truths at all.
pub fn wilderness_impact<S: Scalar>(
    detections: &[Detection<S>],
    gts: &[EvalGt<S>],
    recall_point: f64,
    iou_thresh: S,
) -> Option<(WiReport, OpenSetCounts)> {
    assert!(
        recall_point > 0.0 && recall_point <= 1.0,
        "recall_point must lie in (0, 1]"
    );
    let sweep = known_detection_sweep(detections, gts, iou_thresh);
    if sweep.n_known_gt == 0 {
        return None;
    }

    // Operating prefix: first index where recall >= recall_point.
    let mut tp_cum = 0usize;
    let mut prefix_len = sweep.tp.len();
    let mut reachable = false;
    for (i, &is_tp) in sweep.tp.iter().enumerate() {
        if is_tp {
            tp_cum += 1;
        }
        if tp_cum as f64 / sweep.n_known_gt as f64 >= recall_point {
            prefix_len = i + 1;
            reachable = true;
            break;
        }
    }

    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fp_unknown = 0usize;
    let mut a_ose = 0u64;
    for i in 0..prefix_len {
        if sweep.tp[i] {
            tp += 1;
        } else {
            fp += 1;
            if sweep.unknown_hit[i] {
                fp_unknown += 1;
            }
        }
        if sweep.unknown_hit[i] {
            a_ose += 1;
        }
    }
    let achieved_recall = tp as f64 / sweep.n_known_gt as f64;
    // Empty prefix (no detections at all): both precisions are vacuous.
    let (p_k, p_ku) = if tp + fp == 0 {
        (0.0, 0.0)
    } else {
        let p_ku = tp as f64 / (tp + fp) as f64;
        let closed_world = tp + fp - fp_unknown;
        let p_k = if closed_world == 0 {
            0.0
        } else {
            tp as f64 / closed_world as f64
        };
        (p_k, p_ku)
    };
    let wi = if p_ku == 0.0 { 0.0 } else { p_k / p_ku - 1.0 };
    let threshold = if prefix_len == 0 {
        1.0
    } else {
        sweep.confidences[prefix_len - 1]
    };
    Some((
        WiReport {
            wi,
            p_k,
            p_ku,
            threshold,
            target_recall: recall_point,
            achieved_recall,
            reachable,
        },
        OpenSetCounts { a_ose, prefix_len },
    ))
}

/// Fraction of unknown-truth objects covered (IoU ≥ threshold) by at least
/// one detection labeled unknown. `None` when there are no unknown objects.
pub fn u_recall<S: Scalar>(
    detections: &[Detection<S>],
    gts: &[EvalGt<S>],
    iou_thresh: S,
) -> Option<f64> {
    let unknown_objects: Vec<&EvalGt<S>> = gts.iter().filter(|g| !g.known).collect();
    if unknown_objects.is_empty() {
        return None;
    }
    let unknown_dets: Vec<&Detection<S>> = detections
        .iter()
        .filter(|d| d.label == Label::Unknown)
        .collect();
    let covered = unknown_objects
        .iter()
        .filter(|g| {
            unknown_dets
                .iter()
                .any(|d| d.scene_id == g.scene_id && d.bbox.iou(&g.bbox) >= iou_thresh)
        })
        .count();
    Some(covered as f64 / unknown_objects.len() as f64)
}

/// Everything a task evaluation produces for one selector arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// AP per known class with at least one ground truth.
    pub per_class_ap: BTreeMap<u32, f64>,
    /// Absent when there are no previously-known classes (first task).
    pub map_previous: Option<f64>,
    pub map_current: Option<f64>,
    pub map_both: Option<f64>,
    /// Absent when the task has no unknown objects (final task).
    pub wi: Option<WiReport>,
    pub u_recall: Option<f64>,
    pub a_ose: Option<u64>,
}

/// Metric configuration shared by every evaluation call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub iou_threshold: f64,
    pub wi_recall_point: f64,
    pub ap_interpolation: ApInterpolation,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            iou_threshold: 0.5,
            wi_recall_point: 0.8,
            ap_interpolation: ApInterpolation::AllPoint,
        }
    }
}

/// Assembles the full report for one detection set. `previous` and
/// `current` are the known-class splits (disjoint); unknown-truth ground
/// truths in `gts` drive WI / U-Recall / A-OSE, which are absent when no
/// unknown object exists.
pub fn evaluate<S: Scalar>(
    detections: &[Detection<S>],
    gts: &[EvalGt<S>],
    previous: &BTreeSet<u32>,
    current: &BTreeSet<u32>,
    cfg: &MetricConfig,
) -> EvalReport {
    let iou = S::from_f64_lossy(cfg.iou_threshold);
    let mut per_class_ap = BTreeMap::new();
    for &cid in previous.iter().chain(current.iter()) {
        let curve = pr_curve(detections, gts, cid, iou);
        if !curve.undefined_recall {
            per_class_ap.insert(
                cid,
                average_precision(&curve, cfg.ap_interpolation).to_f64_lossy(),
            );
        }
    }
    let both: BTreeSet<u32> = previous.union(current).copied().collect();
    let have_unknowns = gts.iter().any(|g| !g.known);
    let wi_ose = if have_unknowns {
        wilderness_impact(detections, gts, cfg.wi_recall_point, iou)
    } else {
        None
    };
    let (wi, a_ose) = match wi_ose {
        Some((w, o)) => (Some(w), Some(o.a_ose)),
        None => (None, None),
    };
    EvalReport {
        per_class_ap,
        map_previous: mean_ap(detections, gts, previous, iou, cfg.ap_interpolation),
        map_current: mean_ap(detections, gts, current, iou, cfg.ap_interpolation),
        map_both: mean_ap(detections, gts, &both, iou, cfg.ap_interpolation),
        wi,
        u_recall: u_recall(detections, gts, iou),
        a_ose,
    }
}
