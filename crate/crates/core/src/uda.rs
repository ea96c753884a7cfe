//! Proposal-level unsupervised domain adaptation.
//!
//! Unmatched proposals are split into a labeled source domain (ground-truth
//! foreground anchors plus lowest-objectness background picks) and an
//! unlabeled target domain. The predictor self-trains on the target via
//! confidence-thresholded pseudo-labels from a weak view applied to a strong
//! view, alongside supervised loss on the source:
//!
//! `L_uda = L_T + lambda * L_S`

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{match_proposals, MatchPartition};
use crate::head::{ClassHead, HeadSample};
use crate::predictor::{
    sgd_step, softmax2, strong_augment, weak_augment, BatchItem, Gradients, OptimState, Predictor,
    PredictorError, FG,
};
use crate::scalar::{sc, Scalar};
use crate::seed;
use crate::world::Scene;

#[derive(Debug, Error)]
pub enum UdaError {
    #[error("invalid PLU config: {0}")]
    InvalidConfig(String),
    #[error("empty domain batch: both source and target are empty")]
    EmptyBatch,
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: u64, detail: String },
}

/// Normalization of the target-branch loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetNorm {
    /// Mean over pseudo-labeled (unmasked) targets; 0 when none qualify.
    Unmasked,
    /// Sum over pseudo-labeled targets divided by the full target count.
    All,
}

/// PLU hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PluConfig<S> {
    /// Pseudo-label confidence threshold; a label is kept only when the
    /// weak-view max softmax strictly exceeds it.
    pub epsilon: S,
    /// Weight of the source loss in `L_uda`.
    pub lambda: S,
    /// Background picks per foreground anchor: `n_bg = round(bg_per_fg * n_fg)`.
    pub bg_per_fg: S,
    /// Scenes (domain-batch units) accumulated per optimizer step.
    pub batch_size: usize,
    /// Source+target samples consumed before training stops.
    pub train_samples: usize,
    pub lr: S,
    pub momentum: S,
    /// Step size for the class head. The head is a single linear-softmax
    /// layer — a convex problem — so it tolerates a much larger step than
    /// the detector MLP sharing these batches.
    pub head_lr: S,
    pub sigma_weak: S,
    pub sigma_strong: S,
    pub p_drop: S,
    pub target_norm: TargetNorm,
}

impl<S: Scalar> PluConfig<S> {
    pub fn validate(&self) -> Result<(), UdaError> {
        let half = sc::<S>(0.5);
        if !(self.epsilon > half && self.epsilon < S::one()) {
            return Err(UdaError::InvalidConfig(format!(
                "epsilon {} must lie in (0.5, 1)",
                self.epsilon
            )));
        }
        if self.lambda < S::zero() {
            return Err(UdaError::InvalidConfig("lambda must be >= 0".into()));
        }
        if self.bg_per_fg <= S::zero() {
            return Err(UdaError::InvalidConfig("bg_per_fg must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(UdaError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.lr <= S::zero() || self.momentum < S::zero() || self.momentum >= S::one() {
            return Err(UdaError::InvalidConfig(
                "need lr > 0 and momentum in [0, 1)".into(),
            ));
        }
        if self.head_lr <= S::zero() {
            return Err(UdaError::InvalidConfig("head_lr must be > 0".into()));
        }
        let pd = self.p_drop.to_f64_lossy();
        if !(0.0..1.0).contains(&pd) {
            return Err(UdaError::InvalidConfig("p_drop must lie in [0, 1)".into()));
        }
        if self.sigma_weak < S::zero() || self.sigma_strong < S::zero() {
            return Err(UdaError::InvalidConfig("sigmas must be >= 0".into()));
        }
        Ok(())
    }
}

/// Labeled source-domain sample with provenance back into its scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSample<S> {
    pub feature: Vec<S>,
    /// 0 = background, 1 = foreground.
    pub label: u8,
    /// Annotated class for foreground anchors, `None` for background picks.
    pub class_id: Option<u32>,
    pub scene_id: u64,
    pub proposal: usize,
}

/// Unlabeled target-domain sample with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSample<S> {
    pub feature: Vec<S>,
    pub scene_id: u64,
    pub proposal: usize,
}

/// Source and target domains formed from one scene (or merged from several).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DomainBatch<S> {
    pub source: Vec<SourceSample<S>>,
    pub target: Vec<TargetSample<S>>,
}

impl<S> DomainBatch<S> {
    pub fn is_empty(&self) -> bool {
        self.source.is_empty() && self.target.is_empty()
    }

    /// Total source+target sample count.
    pub fn len(&self) -> usize {
        self.source.len() + self.target.len()
    }

    pub fn merge(batches: impl IntoIterator<Item = DomainBatch<S>>) -> DomainBatch<S> {
        let mut out = DomainBatch {
            source: Vec::new(),
            target: Vec::new(),
        };
        for b in batches {
            out.source.extend(b.source);
            out.target.extend(b.target);
        }
        out
    }
}

/// Forms the two domains for one scene.
///
/// Source foreground: for each annotated ground truth, the feature of the
/// proposal with the highest IoU against it (ties toward the lowest
/// proposal index), labeled 1. Source background: the
/// `round(bg_per_fg * n_fg)` unmatched proposals with the lowest objectness
/// (ties toward the lowest index), labeled 0. Target: a uniform
/// without-replacement sample of the remaining unmatched proposals, sized
/// `min(|source|, remaining)`. Proposals picked as foreground anchors are
/// excluded from the background and target pools, so the source and target
/// index sets are disjoint.
///
/// A scene without annotations yields an empty batch; callers skip it.
pub fn form_domains<S: Scalar>(
    scene: &Scene<S>,
    partition: &MatchPartition<S>,
    cfg: &PluConfig<S>,
    domain_seed: u64,
) -> DomainBatch<S> {
    let n_fg = scene.gt.len();
    if n_fg == 0 {
        return DomainBatch::default();
    }
    let mut source = Vec::with_capacity(n_fg * 2);
    let mut anchor_indices: Vec<usize> = Vec::with_capacity(n_fg);
    for g in &scene.gt {
        let mut best: Option<(usize, S)> = None;
        for (idx, p) in scene.proposals.iter().enumerate() {
            let v = p.bbox.iou(&g.bbox);
            if best.map_or(true, |(_, b)| v > b) {
                best = Some((idx, v));
            }
        }
        let (idx, _) = best.expect("scene has at least one proposal");
        anchor_indices.push(idx);
        source.push(SourceSample {
            feature: scene.proposals[idx].feature.clone(),
            label: 1,
            class_id: Some(g.class_id),
            scene_id: scene.scene_id,
            proposal: idx,
        });
    }

    // Unmatched pool minus foreground anchors (anchors can be unmatched when
    // no proposal reaches the IoU threshold for a ground truth).
    let mut pool: Vec<usize> = partition
        .unmatched
        .iter()
        .copied()
        .filter(|i| !anchor_indices.contains(i))
        .collect();

    let n_bg = (cfg.bg_per_fg.to_f64_lossy() * n_fg as f64).round() as usize;
    pool.sort_by(|a, b| {
        scene.proposals[*a]
            .objectness
            .partial_cmp(&scene.proposals[*b].objectness)
            .expect("objectness is finite")
            .then(a.cmp(b))
    });
    let n_bg = n_bg.min(pool.len());
    for &idx in &pool[..n_bg] {
        source.push(SourceSample {
            feature: scene.proposals[idx].feature.clone(),
            label: 0,
            class_id: None,
            scene_id: scene.scene_id,
            proposal: idx,
        });
    }

    let mut remaining: Vec<usize> = pool[n_bg..].to_vec();
    remaining.sort_unstable();
    let n_target = source.len().min(remaining.len());
    let mut rng = seed::rng(seed::mix(domain_seed, 0xd0a1));
    let chosen = rand::seq::index::sample(&mut rng, remaining.len(), n_target);
    let mut chosen: Vec<usize> = chosen.into_iter().map(|i| remaining[i]).collect();
    chosen.sort_unstable();
    let target = chosen
        .into_iter()
        .map(|idx| TargetSample {
            feature: scene.proposals[idx].feature.clone(),
            scene_id: scene.scene_id,
            proposal: idx,
        })
        .collect();

    DomainBatch { source, target }
}

/// Pseudo-label from weak-view logits: the argmax class when the max
/// softmax probability strictly exceeds `epsilon`, otherwise none.
pub fn pseudo_label<S: Scalar>(weak_logits: &[S; 2], epsilon: S) -> Option<u8> {
    let p = softmax2(weak_logits);
    let (label, conf) = if p[FG] > p[1 - FG] {
        (1u8, p[FG])
    } else {
        (0u8, p[1 - FG])
    };
    (conf > epsilon).then_some(label)
}

/// Loss diagnostics for one batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PluStats {
    pub n_source: usize,
    pub n_target: usize,
    /// Targets that received a pseudo-label.
    pub n_pseudo: usize,
    pub n_fg_pseudo: usize,
    /// `n_pseudo / n_target` (0 when there are no targets).
    pub mask_rate: f64,
    /// Fraction of pseudo-labels that are foreground (0 when none).
    pub fg_pseudo_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PluLosses<S> {
    pub l_t: S,
    pub l_s: S,
    pub l_uda: S,
    pub stats: PluStats,
}

fn losses_impl<S: Scalar>(
    predictor: &Predictor<S>,
    batch: &DomainBatch<S>,
    cfg: &PluConfig<S>,
    loss_seed: u64,
) -> Result<(PluLosses<S>, Gradients<S>), UdaError> {
    if batch.is_empty() {
        return Err(UdaError::EmptyBatch);
    }

    // Target branch: weak view -> pseudo-label (constant, no gradient),
    // strong view -> cross-entropy. Masked targets are absent outright.
    let mut strong_items: Vec<BatchItem<S>> = Vec::new();
    let mut n_pseudo = 0usize;
    let mut n_fg_pseudo = 0usize;
    for t in &batch.target {
        let weak = weak_augment(
            &t.feature,
            cfg.sigma_weak.to_f64_lossy(),
            seed::mix4(loss_seed, t.scene_id, t.proposal as u64, 0),
        );
        let logits = predictor.logits(&weak)?;
        if let Some(label) = pseudo_label(&logits, cfg.epsilon) {
            let strong = strong_augment(
                &t.feature,
                cfg.sigma_strong.to_f64_lossy(),
                cfg.p_drop.to_f64_lossy(),
                seed::mix4(loss_seed, t.scene_id, t.proposal as u64, 1),
            );
            strong_items.push(BatchItem {
                x: strong,
                label,
                weight: S::one(),
            });
            n_pseudo += 1;
            if label == 1 {
                n_fg_pseudo += 1;
            }
        }
    }
    let (mut l_t, mut g_t) = if strong_items.is_empty() {
        (S::zero(), Gradients::zeros_like(predictor))
    } else {
        predictor.backward(&strong_items)?
    };
    if cfg.target_norm == TargetNorm::All && !batch.target.is_empty() {
        let scale = sc::<S>(n_pseudo as f64 / batch.target.len() as f64);
        l_t *= scale;
        g_t.scale(scale);
    }

    // Source branch: plain supervised cross-entropy.
    let (l_s, g_s) = if batch.source.is_empty() {
        (S::zero(), Gradients::zeros_like(predictor))
    } else {
        let items: Vec<BatchItem<S>> = batch
            .source
            .iter()
            .map(|s| BatchItem {
                x: s.feature.clone(),
                label: s.label,
                weight: S::one(),
            })
            .collect();
        predictor.backward(&items)?
    };

    let l_uda = l_t + cfg.lambda * l_s;
    let mut grads = g_t;
    grads.add_scaled(&g_s, cfg.lambda);

    let n_target = batch.target.len();
    let stats = PluStats {
        n_source: batch.source.len(),
        n_target,
        n_pseudo,
        n_fg_pseudo,
        mask_rate: if n_target == 0 {
            0.0
        } else {
            n_pseudo as f64 / n_target as f64
        },
        fg_pseudo_fraction: if n_pseudo == 0 {
            0.0
        } else {
            n_fg_pseudo as f64 / n_pseudo as f64
        },
    };
    Ok((
        PluLosses {
            l_t,
            l_s,
            l_uda,
            stats,
        },
        grads,
    ))
}

/// Computes `(L_T, L_S, L_uda)` and stats for a batch. Deterministic per
/// seed; the same seed reproduces the same augmented views.
pub fn plu_losses<S: Scalar>(
    predictor: &Predictor<S>,
    batch: &DomainBatch<S>,
    cfg: &PluConfig<S>,
    loss_seed: u64,
) -> Result<PluLosses<S>, UdaError> {
    losses_impl(predictor, batch, cfg, loss_seed).map(|(l, _)| l)
}

/// Like [`plu_losses`] but also returns the exact gradient of `L_uda`.
pub fn plu_losses_and_grads<S: Scalar>(
    predictor: &Predictor<S>,
    batch: &DomainBatch<S>,
    cfg: &PluConfig<S>,
    loss_seed: u64,
) -> Result<(PluLosses<S>, Gradients<S>), UdaError> {
    losses_impl(predictor, batch, cfg, loss_seed)
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainStep {
    pub step: u64,
    pub l_t: f64,
    pub l_s: f64,
    pub l_uda: f64,
    pub mask_rate: f64,
    pub fg_pseudo_fraction: f64,
}

/// Outcome of a training run: per-step records, the number of samples
/// consumed, and an audit of annotation reads by class id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub steps: Vec<TrainStep>,
    pub samples_consumed: usize,
    pub label_reads: BTreeMap<u32, u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Uda,
    SourceOnly,
}

fn train_loop<S: Scalar>(
    predictor: &mut Predictor<S>,
    opt: &mut OptimState<S>,
    mut head: Option<&mut ClassHead<S>>,
    scenes: &[&Scene<S>],
    cfg: &PluConfig<S>,
    iou_threshold: S,
    train_seed: u64,
    mode: Mode,
    sample_budget: usize,
) -> Result<TrainingLog, UdaError> {
    cfg.validate()?;
    // Fine-tuning minimizes the plain source loss: with targets dropped and
    // lambda forced to 1, L_uda degenerates to exactly L_S.
    let cfg = match mode {
        Mode::Uda => cfg.clone(),
        Mode::SourceOnly => PluConfig {
            lambda: S::one(),
            ..cfg.clone()
        },
    };
    let mut log = TrainingLog::default();
    if sample_budget == 0 || scenes.is_empty() {
        return Ok(log);
    }
    let mut pending: Vec<DomainBatch<S>> = Vec::new();
    let mut step: u64 = 0;
    'epochs: for epoch in 0u64.. {
        let mut order: Vec<usize> = (0..scenes.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut seed::rng(seed::mix3(train_seed, 0xe90c, epoch)));
        let mut usable_in_epoch = 0usize;
        for idx in order {
            let scene = scenes[idx];
            let boxes: Vec<_> = scene.proposals.iter().map(|p| p.bbox).collect();
            let gt_boxes: Vec<_> = scene.gt.iter().map(|g| g.bbox).collect();
            let partition = match_proposals(&boxes, &gt_boxes, iou_threshold);
            let mut db = form_domains(
                scene,
                &partition,
                &cfg,
                seed::mix4(train_seed, 0xf04d, scene.scene_id, epoch),
            );
            if db.is_empty() {
                continue;
            }
            for g in &scene.gt {
                *log.label_reads.entry(g.class_id).or_insert(0) += 1;
            }
            if mode == Mode::SourceOnly {
                db.target.clear();
            }
            usable_in_epoch += 1;
            pending.push(db);
            if pending.len() < cfg.batch_size {
                continue;
            }
            let merged = DomainBatch::merge(pending.drain(..));
            let n_consumed = merged.len();
            let loss_seed = seed::mix3(train_seed, 0xa912, epoch);
            let (losses, grads) = losses_impl(predictor, &merged, &cfg, loss_seed)?;
            if !losses.l_uda.is_finite() {
                return Err(UdaError::Diverged {
                    step,
                    detail: format!("loss became {}", losses.l_uda),
                });
            }
            sgd_step(predictor, &grads, opt).map_err(|e| UdaError::Diverged {
                step,
                detail: e.to_string(),
            })?;
            if let Some(h) = head.as_deref_mut() {
                // The class head trains on the identical labeled stream: one
                // softmax-CE step per optimizer step, foreground anchors
                // labeled with their annotated class, background picks with
                // the background row.
                let head_batch: Vec<HeadSample<S>> = merged
                    .source
                    .iter()
                    .map(|s| HeadSample {
                        feature: s.feature.clone(),
                        class_id: s.class_id,
                    })
                    .collect();
                h.train_batch(&head_batch, cfg.head_lr, cfg.momentum);
            }
            log.steps.push(TrainStep {
                step,
                l_t: losses.l_t.to_f64_lossy(),
                l_s: losses.l_s.to_f64_lossy(),
                l_uda: losses.l_uda.to_f64_lossy(),
                mask_rate: losses.stats.mask_rate,
                fg_pseudo_fraction: losses.stats.fg_pseudo_fraction,
            });
            step += 1;
            log.samples_consumed += n_consumed;
            if log.samples_consumed >= sample_budget {
                break 'epochs;
            }
        }
        if usable_in_epoch == 0 && pending.is_empty() {
            // Nothing trainable (e.g. every scene lacks annotations).
            break;
        }
    }
    Ok(log)
}

/// Self-training loop. Visits scenes in a seeded shuffled order (reshuffled
/// every epoch), accumulates `batch_size` per-scene domain batches per
/// optimizer step on `L_uda`, and stops once `cfg.train_samples`
/// source+target samples have been consumed. Scenes without annotations are
/// skipped. A non-finite loss or gradient aborts with the failing step.
/// When a class head is supplied it receives one supervised step per
/// optimizer step on the same source samples.
pub fn train_plu<S: Scalar>(
    predictor: &mut Predictor<S>,
    opt: &mut OptimState<S>,
    head: Option<&mut ClassHead<S>>,
    scenes: &[&Scene<S>],
    cfg: &PluConfig<S>,
    iou_threshold: S,
    train_seed: u64,
) -> Result<TrainingLog, UdaError> {
    train_loop(
        predictor,
        opt,
        head,
        scenes,
        cfg,
        iou_threshold,
        train_seed,
        Mode::Uda,
        cfg.train_samples,
    )
}

/// Source-only training (`L_S` alone, unscaled by lambda; the target branch
/// is disabled). Used by the fine-tuning stage.
pub fn train_source_only<S: Scalar>(
    predictor: &mut Predictor<S>,
    opt: &mut OptimState<S>,
    head: Option<&mut ClassHead<S>>,
    scenes: &[&Scene<S>],
    cfg: &PluConfig<S>,
    iou_threshold: S,
    sample_budget: usize,
    train_seed: u64,
) -> Result<TrainingLog, UdaError> {
    train_loop(
        predictor,
        opt,
        head,
        scenes,
        cfg,
        iou_threshold,
        train_seed,
        Mode::SourceOnly,
        sample_budget,
    )
}
