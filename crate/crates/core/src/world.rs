//! Seeded synthetic proposal world: class prototypes on the unit sphere,
//! scenes of jittered proposal copies plus background clutter, and an
//! objectness oracle deliberately biased toward known-class appearance.

use std::collections::BTreeSet;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;
use crate::scalar::{sc, Scalar};
use crate::seed;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid world config: {0}")]
    InvalidConfig(String),
}

/// One class of the world. `known` marks membership in the pool of classes
/// that the protocol will eventually annotate; the rest are never
/// annotated and exist only as unknown objects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec<S> {
    pub class_id: u32,
    pub prototype: Vec<S>,
    /// Standard deviation of per-proposal feature noise around the prototype.
    pub spread: S,
    /// Distance to the nearest known prototype (0 for known classes).
    pub shift: S,
    pub known: bool,
}

/// Hidden provenance of a proposal. Written by the generator and read only
/// by evaluation and audits; the training path never touches it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Truth {
    Background,
    Foreground { class_id: u32 },
}

/// A region proposal: box, feature vector, oracle objectness, and hidden
/// provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal<S: Scalar> {
    pub bbox: BBox<S>,
    pub feature: Vec<S>,
    pub objectness: S,
    pub truth: Truth,
}

/// Annotated ground-truth box (known classes only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtAnn<S: Scalar> {
    pub class_id: u32,
    pub bbox: BBox<S>,
}

/// Hidden record of an object actually placed in the scene, regardless of
/// annotation status. Evaluation-only, like [`Truth`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthObject<S: Scalar> {
    pub class_id: u32,
    pub bbox: BBox<S>,
}

/// One scene: annotations (`gt`) cover only classes known at generation
/// time; `truth_objects` records every placed object for the evaluator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene<S: Scalar> {
    pub scene_id: u64,
    pub gt: Vec<GtAnn<S>>,
    pub proposals: Vec<Proposal<S>>,
    pub truth_objects: Vec<TruthObject<S>>,
}

/// World-level generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig<S> {
    pub n_known: usize,
    pub n_unknown: usize,
    /// Feature dimension.
    pub d: usize,
    /// Unknown prototypes sit at a distance drawn uniformly from
    /// `[shift_min, shift_max]` from their nearest known prototype.
    pub shift_min: S,
    pub shift_max: S,
    pub spread: S,
}

/// Scene-level generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneParams<S> {
    pub objects_min: usize,
    pub objects_max: usize,
    pub copies_min: usize,
    pub copies_max: usize,
    pub n_bg: usize,
    /// Corner jitter magnitude as a fraction of box side length.
    pub jitter: S,
    /// Background feature scale: features are `Normal(0, sigma_bg^2 I)`.
    pub sigma_bg: S,
    /// Objectness oracle noise sigma.
    pub noise: S,
}

/// Side-length range for placed object boxes.
const OBJ_SIDE: (f64, f64) = (0.08, 0.30);
/// Side-length range for background clutter boxes.
const BG_SIDE: (f64, f64) = (0.05, 0.40);

fn unit_sphere_vec<S: Scalar>(rng: &mut impl Rng, d: usize) -> Vec<S> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| sc::<S>(x / norm)).collect();
        }
    }
}

fn distance<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter()
        .zip(b)
        .map(|(x, y)| (*x - *y) * (*x - *y))
        .fold(S::zero(), |acc, v| acc + v)
        .sqrt()
}

/// Generates the class roster: `n_known` prototypes uniform on the unit
/// d-sphere, then `n_unknown` prototypes each placed so that its nearest
/// known prototype lies at a distance drawn uniformly from the shift range.
/// The recorded `shift` always equals the true nearest-known distance.
pub fn generate_world<S: Scalar>(
    cfg: &WorldConfig<S>,
    world_seed: u64,
) -> Result<Vec<ClassSpec<S>>, WorldError> {
    if cfg.n_known == 0 {
        return Err(WorldError::InvalidConfig(
            "need at least one known class".into(),
        ));
    }
    if cfg.d < 2 {
        return Err(WorldError::InvalidConfig(
            "feature dimension must be at least 2".into(),
        ));
    }
    if cfg.shift_min > cfg.shift_max || cfg.shift_min < S::zero() {
        return Err(WorldError::InvalidConfig(format!(
            "shift range [{}, {}] is not a non-negative interval",
            cfg.shift_min, cfg.shift_max
        )));
    }
    let mut rng = seed::rng(seed::mix(world_seed, 0x7081));
    let mut classes: Vec<ClassSpec<S>> = Vec::with_capacity(cfg.n_known + cfg.n_unknown);
    for class_id in 0..cfg.n_known {
        classes.push(ClassSpec {
            class_id: class_id as u32,
            prototype: unit_sphere_vec(&mut rng, cfg.d),
            spread: cfg.spread,
            shift: S::zero(),
            known: true,
        });
    }
    let known_protos: Vec<Vec<S>> = classes.iter().map(|c| c.prototype.clone()).collect();
    for u in 0..cfg.n_unknown {
        let span = (cfg.shift_max - cfg.shift_min).to_f64_lossy();
        let s = cfg.shift_min.to_f64_lossy() + rng.random::<f64>() * span;
        // Rejection sampling keeps the anchor the *nearest* known prototype,
        // so the sampled shift is the recorded one. The fallback (extremely
        // unlikely in d >= 8) records the actual nearest distance instead.
        let mut placed: Option<(Vec<S>, S)> = None;
        for _ in 0..64 {
            let anchor = rng.random_range(0..known_protos.len());
            let dir = unit_sphere_vec::<S>(&mut rng, cfg.d);
            let proto: Vec<S> = known_protos[anchor]
                .iter()
                .zip(&dir)
                .map(|(a, u)| *a + sc::<S>(s) * *u)
                .collect();
            let nearest = known_protos
                .iter()
                .map(|k| distance(&proto, k))
                .fold(S::infinity(), |a, b| a.min(b));
            if (nearest.to_f64_lossy() - s).abs() <= 1e-9 {
                placed = Some((proto, sc::<S>(s)));
                break;
            }
        }
        let (prototype, shift) = placed.unwrap_or_else(|| {
            let anchor = rng.random_range(0..known_protos.len());
            let dir = unit_sphere_vec::<S>(&mut rng, cfg.d);
            let proto: Vec<S> = known_protos[anchor]
                .iter()
                .zip(&dir)
                .map(|(a, u)| *a + sc::<S>(s) * *u)
                .collect();
            let nearest = known_protos
                .iter()
                .map(|k| distance(&proto, k))
                .fold(S::infinity(), |a, b| a.min(b));
            (proto, nearest)
        });
        classes.push(ClassSpec {
            class_id: (cfg.n_known + u) as u32,
            prototype,
            spread: cfg.spread,
            shift,
            known: false,
        });
    }
    Ok(classes)
}

fn cosine<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut dot = S::zero();
    let mut na = S::zero();
    let mut nb = S::zero();
    for (x, y) in a.iter().zip(b) {
        dot += *x * *y;
        na += *x * *x;
        nb += *y * *y;
    }
    let denom = na.sqrt() * nb.sqrt();
    if denom == S::zero() {
        // Zero-norm input: similarity defined as 0.
        return S::zero();
    }
    dot / denom
}

/// The biased objectness oracle: highest cosine similarity between the
/// feature and any *known* prototype, plus `Normal(0, noise^2)`, squashed
/// affinely from `[-1 - 3*noise, 1 + 3*noise]` onto `[0, 1]` and clamped.
/// This mimics a detector trained on known classes only: known-looking
/// content scores high no matter what it actually is.
pub fn biased_objectness<S: Scalar>(
    feature: &[S],
    known_prototypes: &[&[S]],
    noise: S,
    obj_seed: u64,
) -> S {
    // Empty prototype list behaves like zero similarity.
    let max_cos = if known_prototypes.is_empty() {
        S::zero()
    } else {
        known_prototypes
            .iter()
            .map(|p| cosine(feature, p))
            .fold(S::neg_infinity(), |a, b| a.max(b))
    };
    let eta = if noise > S::zero() {
        sc::<S>(noise.to_f64_lossy() * seed::rng(obj_seed).sample::<f64, _>(StandardNormal))
    } else {
        S::zero()
    };
    let three = sc::<S>(3.0);
    let lo = -(S::one() + three * noise);
    let hi = S::one() + three * noise;
    let v = (max_cos + eta - lo) / (hi - lo);
    v.max(S::zero()).min(S::one())
}

fn random_box<S: Scalar>(rng: &mut impl Rng, side: (f64, f64)) -> BBox<S> {
    let w = rng.random_range(side.0..side.1);
    let h = rng.random_range(side.0..side.1);
    let x1 = rng.random_range(0.0..(1.0 - w));
    let y1 = rng.random_range(0.0..(1.0 - h));
    BBox::new(sc(x1), sc(y1), sc(x1 + w), sc(y1 + h)).expect("sampled box is valid")
}

fn jittered_copy<S: Scalar>(rng: &mut impl Rng, b: &BBox<S>, jitter: f64) -> BBox<S> {
    let w = b.width().to_f64_lossy();
    let h = b.height().to_f64_lossy();
    let mut j = |side: f64| {
        if jitter == 0.0 {
            0.0
        } else {
            rng.random_range(-jitter..jitter) * side
        }
    };
    let x1 = (b.x1().to_f64_lossy() + j(w)).clamp(0.0, 1.0);
    let x2 = (b.x2().to_f64_lossy() + j(w)).clamp(0.0, 1.0);
    let y1 = (b.y1().to_f64_lossy() + j(h)).clamp(0.0, 1.0);
    let y2 = (b.y2().to_f64_lossy() + j(h)).clamp(0.0, 1.0);
    // Jitter below 0.5 of a side cannot invert or collapse the box.
    BBox::new(sc(x1), sc(y1), sc(x2), sc(y2)).expect("jittered box is valid")
}

fn gaussian_feature<S: Scalar>(rng: &mut impl Rng, center: Option<&[S]>, sigma: f64, d: usize) -> Vec<S> {
    (0..d)
        .map(|i| {
            let base = center.map_or(0.0, |c| c[i].to_f64_lossy());
            sc::<S>(base + sigma * rng.sample::<f64, _>(StandardNormal))
        })
        .collect()
}

/// Generates one scene.
///
/// Object classes are drawn from `class_weights` (weights need not be
/// normalized). Each object contributes 2-4 jittered proposal copies with
/// features around its class prototype; `n_bg` background proposals carry
/// `Normal(0, sigma_bg^2 I)` features. Annotations (`gt`) are emitted only
/// for classes in `known_ids`; everything else stays hidden in
/// `truth_objects` and provenance tags. Objectness is the biased oracle
/// scored against the prototypes of `known_ids`.
pub fn generate_scene<S: Scalar>(
    world: &[ClassSpec<S>],
    known_ids: &BTreeSet<u32>,
    class_weights: &[(u32, f64)],
    params: &SceneParams<S>,
    scene_id: u64,
    scene_seed: u64,
) -> Scene<S> {
    assert!(
        params.objects_min >= 1 && params.objects_min <= params.objects_max,
        "object count range must be a non-empty positive interval"
    );
    assert!(
        params.copies_min >= 1 && params.copies_min <= params.copies_max,
        "copy count range must be a non-empty positive interval"
    );
    let total_weight: f64 = class_weights.iter().map(|(_, w)| w.max(0.0)).sum();
    assert!(total_weight > 0.0, "class weights must have positive mass");

    let mut rng = seed::rng(seed::mix(scene_seed, 0x5ce9));
    let known_protos: Vec<&[S]> = world
        .iter()
        .filter(|c| known_ids.contains(&c.class_id))
        .map(|c| c.prototype.as_slice())
        .collect();
    let d = world.first().map_or(0, |c| c.prototype.len());

    let pick_class = |rng: &mut rand_chacha::ChaCha8Rng| -> u32 {
        let mut t = rng.random::<f64>() * total_weight;
        for (cid, w) in class_weights {
            let w = w.max(0.0);
            if t < w {
                return *cid;
            }
            t -= w;
        }
        class_weights.last().expect("non-empty weights").0
    };

    let n_objects = rng.random_range(params.objects_min..=params.objects_max);
    let mut gt = Vec::new();
    let mut truth_objects = Vec::new();
    let mut proposals = Vec::new();
    for _ in 0..n_objects {
        let class_id = pick_class(&mut rng);
        let spec = world
            .iter()
            .find(|c| c.class_id == class_id)
            .expect("class weight refers to a world class");
        let bbox = random_box::<S>(&mut rng, OBJ_SIDE);
        truth_objects.push(TruthObject { class_id, bbox });
        if known_ids.contains(&class_id) {
            gt.push(GtAnn { class_id, bbox });
        }
        let copies = rng.random_range(params.copies_min..=params.copies_max);
        for _ in 0..copies {
            let cb = jittered_copy(&mut rng, &bbox, params.jitter.to_f64_lossy());
            let feature = gaussian_feature(
                &mut rng,
                Some(&spec.prototype),
                spec.spread.to_f64_lossy(),
                d,
            );
            proposals.push(Proposal {
                bbox: cb,
                feature,
                objectness: S::zero(),
                truth: Truth::Foreground { class_id },
            });
        }
    }
    for _ in 0..params.n_bg {
        let bbox = random_box::<S>(&mut rng, BG_SIDE);
        let feature = gaussian_feature(&mut rng, None, params.sigma_bg.to_f64_lossy(), d);
        proposals.push(Proposal {
            bbox,
            feature,
            objectness: S::zero(),
            truth: Truth::Background,
        });
    }
    for (idx, p) in proposals.iter_mut().enumerate() {
        p.objectness = biased_objectness(
            &p.feature,
            &known_protos,
            params.noise,
            seed::mix3(scene_seed, 0x0b1e, idx as u64),
        );
    }
    Scene {
        scene_id,
        gt,
        proposals,
        truth_objects,
    }
}
