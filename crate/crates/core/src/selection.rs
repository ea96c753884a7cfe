//! Unknown pseudo-label selectors.
//!
//! Two competing strategies pick "unknown" proposals from a scene's
//! unmatched pool: the baseline takes the k highest-objectness proposals
//! (biased toward known-class appearance), while the PLU strategy keeps
//! every proposal the trained predictor calls foreground — a data-dependent
//! count rather than a fixed budget.

use crate::geometry::MatchPartition;
use crate::predictor::{Predictor, PredictorError};
use crate::scalar::Scalar;
use crate::world::{Scene, Truth};

/// Proposals of one scene pseudo-labeled "unknown", with the ranking score
/// each selector used (objectness or FG probability).
#[derive(Debug, Clone, PartialEq)]
pub struct UnknownSelection<S> {
    pub scene_id: u64,
    /// Proposal indices, strictly increasing; always a subset of the
    /// scene's unmatched pool.
    pub chosen: Vec<usize>,
    /// Parallel to `chosen`.
    pub scores: Vec<S>,
}

impl<S> UnknownSelection<S> {
    pub fn len(&self) -> usize {
        self.chosen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chosen.is_empty()
    }
}

/// Baseline: the `min(k, |unmatched|)` unmatched proposals with the highest
/// objectness, ties broken toward the lower index. Scores are objectness.
pub fn topk_select<S: Scalar>(
    scene: &Scene<S>,
    partition: &MatchPartition<S>,
    k: usize,
) -> UnknownSelection<S> {
    let mut ranked: Vec<usize> = partition.unmatched.clone();
    ranked.sort_by(|a, b| {
        scene.proposals[*b]
            .objectness
            .partial_cmp(&scene.proposals[*a].objectness)
            .expect("objectness is finite")
            .then(a.cmp(b))
    });
    ranked.truncate(k);
    ranked.sort_unstable();
    let scores = ranked
        .iter()
        .map(|&i| scene.proposals[i].objectness)
        .collect();
    UnknownSelection {
        scene_id: scene.scene_id,
        chosen: ranked,
        scores,
    }
}

/// PLU: every unmatched proposal whose predicted foreground probability
/// strictly exceeds `fg_threshold`. Scores are the FG probabilities.
pub fn plu_select<S: Scalar>(
    scene: &Scene<S>,
    partition: &MatchPartition<S>,
    predictor: &Predictor<S>,
    fg_threshold: S,
) -> Result<UnknownSelection<S>, PredictorError> {
    let mut chosen = Vec::new();
    let mut scores = Vec::new();
    for &idx in &partition.unmatched {
        let p = predictor.fg_prob(&scene.proposals[idx].feature)?;
        if p > fg_threshold {
            chosen.push(idx);
            scores.push(p);
        }
    }
    Ok(UnknownSelection {
        scene_id: scene.scene_id,
        chosen,
        scores,
    })
}

/// Hidden-truth upper bound: every unmatched proposal whose truth tag is
/// foreground, score 1. Only evaluation and audits may call this.
pub fn oracle_select<S: Scalar>(
    scene: &Scene<S>,
    partition: &MatchPartition<S>,
) -> UnknownSelection<S> {
    let chosen: Vec<usize> = partition
        .unmatched
        .iter()
        .copied()
        .filter(|&i| matches!(scene.proposals[i].truth, Truth::Foreground { .. }))
        .collect();
    let scores = vec![S::one(); chosen.len()];
    UnknownSelection {
        scene_id: scene.scene_id,
        chosen,
        scores,
    }
}
