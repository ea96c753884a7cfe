//! Incremental open-world protocol: task splits, the 3-stage per-task
//! training procedure, fine-tuning on a balanced known-class subset, and
//! side-by-side evaluation of the two unknown selectors.
//!
//! Stage 1 of the procedure (backbone pretraining) is a documented no-op in
//! this laboratory: proposal features come from the generator, so there is
//! no backbone to pretrain. The note is recorded in every task report to
//! keep the three-stage structure visible in artifacts.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{match_proposals, MatchPartition};
use crate::head::ClassHead;
use crate::metrics::{evaluate, Detection, EvalGt, EvalReport, Label, MetricConfig};
use crate::predictor::{OptimState, Predictor, PredictorError};
use crate::scalar::Scalar;
use crate::seed;
use crate::selection::{plu_select, topk_select, UnknownSelection};
use crate::uda::{train_plu, train_source_only, PluConfig, TrainingLog, UdaError};
use crate::world::{generate_scene, ClassSpec, Scene, SceneParams};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("invalid protocol config: {0}")]
    InvalidConfig(String),
    #[error("task {got} run out of order; expected task {expected}")]
    OutOfOrder { got: u32, expected: u32 },
    #[error("label hygiene violation: {0}")]
    Hygiene(String),
    #[error("scene {0} referenced by task split but missing from dataset")]
    MissingScene(u64),
    #[error(transparent)]
    Uda(#[from] UdaError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
}

/// One stage of the incremental protocol: which classes are annotated, which
/// remain unknown, and which scenes belong to its train/test pools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSplit {
    /// 1-based.
    pub task_id: u32,
    /// K^t: every class annotated at this task, in introduction order.
    pub known: Vec<u32>,
    /// Classes first annotated at this task.
    pub introduced: Vec<u32>,
    /// U^t: world classes not in K^t (later tasks' classes plus
    /// never-annotated ones).
    pub unknown: Vec<u32>,
    pub train_scenes: Vec<u64>,
    pub test_scenes: Vec<u64>,
    /// Mean count of unknown-truth objects per test scene; the default
    /// top-k budget.
    pub mean_test_unknowns: f64,
}

/// Class-mix weights for generated train scenes. Groups that are empty at a
/// given task (no previous classes at task 1) drop out and the rest
/// renormalize.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainMix {
    pub current: f64,
    pub previous: f64,
    pub unknown: f64,
}

impl Default for TrainMix {
    fn default() -> Self {
        TrainMix {
            current: 0.6,
            previous: 0.1,
            unknown: 0.3,
        }
    }
}

/// Class-mix weights for generated test scenes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestMix {
    pub known: f64,
    pub unknown: f64,
}

impl Default for TestMix {
    fn default() -> Self {
        TestMix {
            known: 0.6,
            unknown: 0.4,
        }
    }
}

/// Shape of the incremental protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub n_tasks: u32,
    pub classes_per_task: u32,
    pub train_scenes_per_task: u32,
    pub test_scenes_per_task: u32,
    pub train_mix: TrainMix,
    pub test_mix: TestMix,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            n_tasks: 4,
            classes_per_task: 5,
            train_scenes_per_task: 200,
            test_scenes_per_task: 50,
            train_mix: TrainMix::default(),
            test_mix: TestMix::default(),
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self, n_annotatable: usize) -> Result<(), ProtocolError> {
        if self.n_tasks == 0 || self.classes_per_task == 0 {
            return Err(ProtocolError::InvalidConfig(
                "need at least one task and one class per task".into(),
            ));
        }
        let need = self.n_tasks as usize * self.classes_per_task as usize;
        if need > n_annotatable {
            return Err(ProtocolError::InvalidConfig(format!(
                "{} tasks x {} classes needs {need} annotatable classes, world has {n_annotatable}",
                self.n_tasks, self.classes_per_task
            )));
        }
        if self.train_scenes_per_task == 0 || self.test_scenes_per_task == 0 {
            return Err(ProtocolError::InvalidConfig(
                "train and test scene counts must be >= 1".into(),
            ));
        }
        let m = &self.train_mix;
        let t = &self.test_mix;
        let nonneg =
            m.current >= 0.0 && m.previous >= 0.0 && m.unknown >= 0.0 && t.known >= 0.0 && t.unknown >= 0.0;
        if !nonneg || m.current + m.previous + m.unknown <= 0.0 || t.known + t.unknown <= 0.0 {
            return Err(ProtocolError::InvalidConfig(
                "mix weights must be non-negative with a positive sum".into(),
            ));
        }
        Ok(())
    }
}

fn group_weights(ids: &[u32], total: f64) -> Vec<(u32, f64)> {
    if ids.is_empty() || total <= 0.0 {
        return Vec::new();
    }
    let w = total / ids.len() as f64;
    ids.iter().map(|&c| (c, w)).collect()
}

/// Partitions the annotatable classes into tasks and generates every task's
/// train and test scenes. Train scenes weight object classes toward the
/// task's newly-introduced set; test scenes mix knowns and unknowns evenly
/// enough for every metric to have support. Scene ids are consecutive and
/// globally unique; everything is a pure function of `(world, cfg, seed)`.
pub fn make_tasks<S: Scalar>(
    world: &[ClassSpec<S>],
    cfg: &ProtocolConfig,
    scene_params: &SceneParams<S>,
    dataset_seed: u64,
) -> Result<(Vec<TaskSplit>, Vec<Scene<S>>), ProtocolError> {
    let annotatable: Vec<u32> = world.iter().filter(|c| c.known).map(|c| c.class_id).collect();
    cfg.validate(annotatable.len())?;
    let all_ids: Vec<u32> = world.iter().map(|c| c.class_id).collect();

    // Deterministic class order: seeded shuffle of the annotatable pool.
    let mut order = annotatable.clone();
    use rand::seq::SliceRandom;
    order.shuffle(&mut seed::rng(seed::mix(dataset_seed, 0x7a51)));

    let mut tasks = Vec::with_capacity(cfg.n_tasks as usize);
    let mut scenes = Vec::new();
    let mut next_scene_id: u64 = 0;
    let mut known_so_far: Vec<u32> = Vec::new();
    for t in 1..=cfg.n_tasks {
        let lo = (t - 1) as usize * cfg.classes_per_task as usize;
        let hi = t as usize * cfg.classes_per_task as usize;
        let introduced: Vec<u32> = order[lo..hi].to_vec();
        let previous = known_so_far.clone();
        known_so_far.extend_from_slice(&introduced);
        let known = known_so_far.clone();
        let known_set: BTreeSet<u32> = known.iter().copied().collect();
        let unknown: Vec<u32> = all_ids
            .iter()
            .copied()
            .filter(|c| !known_set.contains(c))
            .collect();

        let mut train_weights = group_weights(&introduced, cfg.train_mix.current);
        train_weights.extend(group_weights(&previous, cfg.train_mix.previous));
        train_weights.extend(group_weights(&unknown, cfg.train_mix.unknown));
        let mut test_weights = group_weights(&known, cfg.test_mix.known);
        test_weights.extend(group_weights(&unknown, cfg.test_mix.unknown));

        let mut gen = |weights: &[(u32, f64)], count: u32, ids: &mut Vec<u64>| {
            for _ in 0..count {
                let sid = next_scene_id;
                next_scene_id += 1;
                scenes.push(generate_scene(
                    world,
                    &known_set,
                    weights,
                    scene_params,
                    sid,
                    seed::mix3(dataset_seed, 0x5cee, sid),
                ));
                ids.push(sid);
            }
        };
        let mut train_scenes = Vec::new();
        let mut test_scenes = Vec::new();
        gen(&train_weights, cfg.train_scenes_per_task, &mut train_scenes);
        gen(&test_weights, cfg.test_scenes_per_task, &mut test_scenes);

        let unknown_set: BTreeSet<u32> = unknown.iter().copied().collect();
        let total_unknown: usize = test_scenes
            .iter()
            .map(|&sid| {
                scenes[sid as usize]
                    .truth_objects
                    .iter()
                    .filter(|o| unknown_set.contains(&o.class_id))
                    .count()
            })
            .sum();
        let mean_test_unknowns = total_unknown as f64 / test_scenes.len() as f64;

        tasks.push(TaskSplit {
            task_id: t,
            known,
            introduced,
            unknown,
            train_scenes,
            test_scenes,
            mean_test_unknowns,
        });
    }
    Ok((tasks, scenes))
}

/// Per-task run parameters beyond the PLU hyperparameters themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRunConfig<S> {
    pub plu: PluConfig<S>,
    pub iou_threshold: S,
    /// Inference-time FG threshold for the PLU selector.
    pub fg_threshold: S,
    /// Fraction of train scenes used by the fine-tuning stage.
    pub finetune_fraction: f64,
    /// Source-sample budget for the fine-tuning stage.
    pub finetune_samples: usize,
    pub enable_finetune: bool,
    /// Overrides the dataset-derived top-k budget when set.
    pub k_override: Option<usize>,
    pub metrics: MetricConfig,
}

/// What one selector arm produced on the test pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmOutput {
    pub report: EvalReport,
    /// (scene_id, proposal_index, score) triples, for the selections dump.
    pub selections: Vec<(u64, usize, f64)>,
}

/// Everything `run_task` appends to the run state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task_id: u32,
    pub k_used: usize,
    pub topk: ArmOutput,
    pub plu: ArmOutput,
    pub train_log: TrainingLog,
    pub finetune_log: TrainingLog,
    pub stage_notes: Vec<String>,
}

/// Mutable protocol state threaded through the tasks.
#[derive(Debug, Clone)]
pub struct RunState<S: Scalar> {
    pub predictor: Predictor<S>,
    /// Known-class softmax head; rows appear as tasks introduce classes.
    pub head: ClassHead<S>,
    pub reports: Vec<TaskReport>,
    /// Cumulative annotation reads by class id, for the hygiene audit.
    pub label_reads: BTreeMap<u32, u64>,
    pub run_seed: u64,
}

impl<S: Scalar> RunState<S> {
    pub fn new(predictor: Predictor<S>, run_seed: u64) -> Self {
        let head = ClassHead::new(predictor.input_dim());
        RunState {
            predictor,
            head,
            reports: Vec::new(),
            label_reads: BTreeMap::new(),
            run_seed,
        }
    }
}

fn scenes_for<'a, S: Scalar>(
    ids: &[u64],
    scene_map: &BTreeMap<u64, &'a Scene<S>>,
) -> Result<Vec<&'a Scene<S>>, ProtocolError> {
    ids.iter()
        .map(|sid| {
            scene_map
                .get(sid)
                .copied()
                .ok_or(ProtocolError::MissingScene(*sid))
        })
        .collect()
}

/// Checks that no annotation outside K^t is visible in the given scenes.
fn hygiene_check<S: Scalar>(
    scenes: &[&Scene<S>],
    known: &BTreeSet<u32>,
    context: &str,
) -> Result<(), ProtocolError> {
    for scene in scenes {
        for g in &scene.gt {
            if !known.contains(&g.class_id) {
                return Err(ProtocolError::Hygiene(format!(
                    "{context}: scene {} exposes annotation for class {} outside the known set",
                    scene.scene_id, g.class_id
                )));
            }
        }
    }
    Ok(())
}

/// Balanced fine-tuning subset: round-robin over the known classes, each
/// turn taking the next not-yet-chosen train scene containing that class,
/// until `ceil(fraction * n)` scenes are gathered (or supply runs out).
fn balanced_subset<'a, S: Scalar>(
    train: &[&'a Scene<S>],
    known: &[u32],
    fraction: f64,
) -> Vec<&'a Scene<S>> {
    let want = ((fraction * train.len() as f64).ceil() as usize).min(train.len());
    if want == 0 || known.is_empty() {
        return Vec::new();
    }
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, scene) in train.iter().enumerate() {
        let classes: BTreeSet<u32> = scene.gt.iter().map(|g| g.class_id).collect();
        for c in classes {
            by_class.entry(c).or_default().push(i);
        }
    }
    let mut chosen: Vec<usize> = Vec::with_capacity(want);
    let mut used = vec![false; train.len()];
    let mut cursors: BTreeMap<u32, usize> = known.iter().map(|&c| (c, 0)).collect();
    while chosen.len() < want {
        let mut progressed = false;
        for &c in known {
            if chosen.len() >= want {
                break;
            }
            let Some(pool) = by_class.get(&c) else { continue };
            let cur = cursors.get_mut(&c).expect("cursor for every known class");
            while *cur < pool.len() && used[pool[*cur]] {
                *cur += 1;
            }
            if *cur < pool.len() {
                used[pool[*cur]] = true;
                chosen.push(pool[*cur]);
                *cur += 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    chosen.sort_unstable();
    chosen.into_iter().map(|i| train[i]).collect()
}

/// Which confidence source the detection emitter uses for the known-class
/// component.
enum FgComponent<'a, S: Scalar> {
    Objectness,
    Predictor(&'a Predictor<S>),
}

/// Emits the detection set for one scene: proposals chosen by the selector
/// become "unknown" detections scored by the selector; every other proposal
/// is classified by the learned head — suppressed outright when the
/// background row wins, otherwise a known-class detection with confidence
/// `head probability * fg_component`.
fn emit_detections<S: Scalar>(
    scene: &Scene<S>,
    selection: &UnknownSelection<S>,
    head: &ClassHead<S>,
    fg: &FgComponent<S>,
    out: &mut Vec<Detection<S>>,
) -> Result<(), ProtocolError> {
    let chosen: BTreeSet<usize> = selection.chosen.iter().copied().collect();
    for (idx, p) in scene.proposals.iter().enumerate() {
        if let Some(pos) = selection.chosen.iter().position(|&c| c == idx) {
            out.push(Detection {
                scene_id: scene.scene_id,
                label: Label::Unknown,
                bbox: p.bbox,
                confidence: clamp01(selection.scores[pos]),
            });
            continue;
        }
        debug_assert!(!chosen.contains(&idx));
        let Some((class_id, prob)) = head.predict(&p.feature) else {
            continue;
        };
        let component = match fg {
            FgComponent::Objectness => p.objectness,
            FgComponent::Predictor(pred) => pred.fg_prob(&p.feature)?,
        };
        out.push(Detection {
            scene_id: scene.scene_id,
            label: Label::Known(class_id),
            bbox: p.bbox,
            confidence: clamp01(prob * component),
        });
    }
    Ok(())
}

fn clamp01<S: Scalar>(v: S) -> S {
    v.max(S::zero()).min(S::one())
}

/// Builds the evaluator's ground-truth view of a test pool: visible
/// annotations as known entries, hidden unknown-class objects (anything
/// outside K^t) as unknown entries.
fn eval_gts<S: Scalar>(scenes: &[&Scene<S>], known: &BTreeSet<u32>) -> Vec<EvalGt<S>> {
    let mut out = Vec::new();
    for scene in scenes {
        for g in &scene.gt {
            out.push(EvalGt {
                scene_id: scene.scene_id,
                class_id: g.class_id,
                bbox: g.bbox,
                known: true,
            });
        }
        for o in &scene.truth_objects {
            if !known.contains(&o.class_id) {
                out.push(EvalGt {
                    scene_id: scene.scene_id,
                    class_id: o.class_id,
                    bbox: o.bbox,
                    known: false,
                });
            }
        }
    }
    out
}

/// Runs one task: hygiene check, stage 1 (documented no-op), stage 2
/// (PLU self-training), stage 3 (balanced fine-tuning), then side-by-side
/// evaluation of the top-k and PLU selectors on the task's test pool.
///
/// Stage 2 sees only the annotations of the classes introduced at this
/// task (each task brings its own label set; earlier classes appear in the
/// scenes but unlabeled, like any other unmatched object). Stage 3 then
/// fine-tunes on a small split balanced across every known class, which is
/// what counters the head's forgetting of earlier tasks.
pub fn run_task<S: Scalar>(
    state: &mut RunState<S>,
    task: &TaskSplit,
    scene_map: &BTreeMap<u64, &Scene<S>>,
    cfg: &TaskRunConfig<S>,
) -> Result<(), ProtocolError> {
    let expected = state.reports.len() as u32 + 1;
    if task.task_id != expected {
        return Err(ProtocolError::OutOfOrder {
            got: task.task_id,
            expected,
        });
    }
    let known_set: BTreeSet<u32> = task.known.iter().copied().collect();
    let introduced: BTreeSet<u32> = task.introduced.iter().copied().collect();
    let train = scenes_for(&task.train_scenes, scene_map)?;
    let test = scenes_for(&task.test_scenes, scene_map)?;
    hygiene_check(&train, &known_set, "train")?;
    hygiene_check(&test, &known_set, "test")?;
    state.head.ensure_classes(&task.introduced);

    let mut notes = vec![
        "stage 1: backbone pretraining skipped — proposal features are generator-given".to_string(),
    ];

    // Stage 2: PLU self-training on this task's own label set.
    let stage2_views: Vec<Scene<S>> = train
        .iter()
        .map(|s| {
            let mut v = (*s).clone();
            v.gt.retain(|g| introduced.contains(&g.class_id));
            v
        })
        .collect();
    let stage2_refs: Vec<&Scene<S>> = stage2_views.iter().collect();
    let mut opt = OptimState::new(cfg.plu.lr, cfg.plu.momentum, &state.predictor);
    let train_log = train_plu(
        &mut state.predictor,
        &mut opt,
        Some(&mut state.head),
        &stage2_refs,
        &cfg.plu,
        cfg.iou_threshold,
        seed::mix3(state.run_seed, 0x7a40, task.task_id as u64),
    )?;
    notes.push(format!(
        "stage 2: self-training consumed {} samples over {} steps ({} introduced classes labeled)",
        train_log.samples_consumed,
        train_log.steps.len(),
        introduced.len()
    ));
    for (c, n) in &train_log.label_reads {
        *state.label_reads.entry(*c).or_insert(0) += n;
    }

    // Stage 3: fine-tuning on a balanced known-class subset with the full
    // K^t label view.
    let finetune_log = if cfg.enable_finetune && cfg.finetune_fraction > 0.0 {
        let subset = balanced_subset(&train, &task.known, cfg.finetune_fraction);
        let mut ft_opt = OptimState::new(cfg.plu.lr, cfg.plu.momentum, &state.predictor);
        let log = train_source_only(
            &mut state.predictor,
            &mut ft_opt,
            Some(&mut state.head),
            &subset,
            &cfg.plu,
            cfg.iou_threshold,
            cfg.finetune_samples,
            seed::mix3(state.run_seed, 0xf17e, task.task_id as u64),
        )?;
        notes.push(format!(
            "stage 3: fine-tuned on {} balanced scenes, {} samples",
            subset.len(),
            log.samples_consumed
        ));
        for (c, n) in &log.label_reads {
            *state.label_reads.entry(*c).or_insert(0) += n;
        }
        log
    } else {
        notes.push("stage 3: fine-tuning disabled".to_string());
        TrainingLog::default()
    };

    // Evaluation: both arms see identical scenes and partitions.
    let k_used = cfg
        .k_override
        .unwrap_or_else(|| task.mean_test_unknowns.round() as usize);
    let previous: BTreeSet<u32> = task
        .known
        .iter()
        .copied()
        .filter(|c| !task.introduced.contains(c))
        .collect();
    let current: BTreeSet<u32> = task.introduced.iter().copied().collect();
    let gts = eval_gts(&test, &known_set);

    let head = &state.head;
    let arm = |fg: FgComponent<S>,
                   select: &mut dyn FnMut(
        &Scene<S>,
        &MatchPartition<S>,
    )
        -> Result<UnknownSelection<S>, ProtocolError>|
     -> Result<ArmOutput, ProtocolError> {
        let mut dets = Vec::new();
        let mut selections = Vec::new();
        for scene in &test {
            let boxes: Vec<_> = scene.proposals.iter().map(|p| p.bbox).collect();
            let gt_boxes: Vec<_> = scene.gt.iter().map(|g| g.bbox).collect();
            let partition = match_proposals(&boxes, &gt_boxes, cfg.iou_threshold);
            let sel = select(scene, &partition)?;
            for (&idx, &score) in sel.chosen.iter().zip(&sel.scores) {
                selections.push((scene.scene_id, idx, score.to_f64_lossy()));
            }
            emit_detections(scene, &sel, head, &fg, &mut dets)?;
        }
        let report = evaluate(&dets, &gts, &previous, &current, &cfg.metrics);
        Ok(ArmOutput { report, selections })
    };

    let topk = arm(FgComponent::Objectness, &mut |scene, part| {
        Ok(topk_select(scene, part, k_used))
    })?;
    let predictor = state.predictor.clone();
    let plu = arm(FgComponent::Predictor(&predictor), &mut |scene, part| {
        plu_select(scene, part, &predictor, cfg.fg_threshold).map_err(ProtocolError::from)
    })?;

    state.reports.push(TaskReport {
        task_id: task.task_id,
        k_used,
        topk,
        plu,
        train_log,
        finetune_log,
        stage_notes: notes,
    });
    Ok(())
}
