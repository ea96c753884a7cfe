//! Binary foreground/background predictor: a small MLP
//! (`d -> h1 -> h2 -> 2`, ReLU) with hand-derived gradients, SGD with
//! momentum, feature-space augmentations, and exact checkpointing.
//!
//! Logit index 1 is foreground, index 0 background, everywhere.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{sc, Scalar};
use crate::seed;

/// Index of the foreground logit.
pub const FG: usize = 1;
/// Index of the background logit.
pub const BG: usize = 0;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("input has {got} features, predictor expects {expect}")]
    DimensionMismatch { got: usize, expect: usize },
    #[error("empty batch: loss over zero samples is undefined")]
    EmptyBatch,
    #[error("non-finite {what} encountered{context}")]
    NonFinite { what: &'static str, context: String },
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("checkpoint version {got} unsupported (expected {expect})")]
    Version { got: u32, expect: u32 },
    #[error("checkpoint layer shapes do not form a d -> h1 -> h2 -> 2 stack")]
    BadShape,
}

/// One dense layer; weights are row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear<S> {
    pub fan_in: usize,
    pub fan_out: usize,
    pub w: Vec<S>,
    pub b: Vec<S>,
}

impl<S: Scalar> Linear<S> {
    fn apply(&self, x: &[S], out: &mut Vec<S>) {
        out.clear();
        for o in 0..self.fan_out {
            let row = &self.w[o * self.fan_in..(o + 1) * self.fan_in];
            let mut acc = self.b[o];
            for (wi, xi) in row.iter().zip(x) {
                acc += *wi * *xi;
            }
            out.push(acc);
        }
    }
}

/// The FG/BG classifier. Three linear layers with ReLU after the first two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictor<S> {
    layers: Vec<Linear<S>>,
}

/// Per-sample activations cached by the forward pass for backprop.
struct Cache<S> {
    a1: Vec<S>,
    a2: Vec<S>,
    logits: [S; 2],
}

/// One training sample: feature, binary label (0 = BG, 1 = FG), and a
/// non-negative weight. Zero-weight samples are skipped outright so a
/// masked sample is bit-for-bit absent from loss and gradients.
#[derive(Debug, Clone)]
pub struct BatchItem<S> {
    pub x: Vec<S>,
    pub label: u8,
    pub weight: S,
}

/// Gradient (or velocity) buffers mirroring [`Predictor`]'s parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradients<S> {
    pub layers: Vec<LayerGrad<S>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGrad<S> {
    pub dw: Vec<S>,
    pub db: Vec<S>,
}

impl<S: Scalar> Gradients<S> {
    pub fn zeros_like(p: &Predictor<S>) -> Self {
        Gradients {
            layers: p
                .layers
                .iter()
                .map(|l| LayerGrad {
                    dw: vec![S::zero(); l.w.len()],
                    db: vec![S::zero(); l.b.len()],
                })
                .collect(),
        }
    }

    pub fn scale(&mut self, k: S) {
        for l in &mut self.layers {
            for v in l.dw.iter_mut().chain(l.db.iter_mut()) {
                *v *= k;
            }
        }
    }

    /// `self += k * other`. Shapes must match.
    pub fn add_scaled(&mut self, other: &Gradients<S>, k: S) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.dw.iter_mut().zip(&b.dw) {
                *x += k * *y;
            }
            for (x, y) in a.db.iter_mut().zip(&b.db) {
                *x += k * *y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.dw.iter().chain(l.db.iter()).all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> S {
        let mut m = S::zero();
        for l in &self.layers {
            for v in l.dw.iter().chain(l.db.iter()) {
                m = m.max(v.abs());
            }
        }
        m
    }
}

/// Numerically stable two-way softmax.
pub fn softmax2<S: Scalar>(logits: &[S; 2]) -> [S; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let z = e0 + e1;
    [e0 / z, e1 / z]
}

/// Cross-entropy of a single sample from raw logits:
/// `logsumexp(logits) - logits[label]`.
fn ce_from_logits<S: Scalar>(logits: &[S; 2], label: u8) -> S {
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    lse - logits[if label == 0 { 0 } else { 1 }]
}

impl<S: Scalar> Predictor<S> {
    /// Xavier-uniform initialization: weights from
    /// `Uniform(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`, biases zero.
    /// Deterministic per seed; draws are f64 regardless of `S`.
    pub fn init(d: usize, h1: usize, h2: usize, master_seed: u64) -> Self {
        assert!(d >= 1 && h1 >= 1 && h2 >= 1, "layer widths must be positive");
        let mut rng = seed::rng(seed::mix(master_seed, 0x11f0));
        let mut make = |fan_in: usize, fan_out: usize| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = (0..fan_in * fan_out)
                .map(|_| sc::<S>(rng.random_range(-a..a)))
                .collect();
            Linear {
                fan_in,
                fan_out,
                w,
                b: vec![S::zero(); fan_out],
            }
        };
        Predictor {
            layers: vec![make(d, h1), make(h1, h2), make(h2, 2)],
        }
    }

    /// All-zero parameters; the classifier is exactly uninformative
    /// (softmax 0.5/0.5 for every input).
    pub fn zeros(d: usize, h1: usize, h2: usize) -> Self {
        let make = |fan_in: usize, fan_out: usize| Linear {
            fan_in,
            fan_out,
            w: vec![S::zero(); fan_in * fan_out],
            b: vec![S::zero(); fan_out],
        };
        Predictor {
            layers: vec![make(d, h1), make(h1, h2), make(h2, 2)],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn hidden_dims(&self) -> (usize, usize) {
        (self.layers[0].fan_out, self.layers[1].fan_out)
    }

    pub fn layers(&self) -> &[Linear<S>] {
        &self.layers
    }

    /// Mutable parameter access for parameter-space probes
    /// (finite-difference checks); training goes through [`sgd_step`].
    pub fn layers_mut(&mut self) -> &mut [Linear<S>] {
        &mut self.layers
    }

    fn forward_cached(&self, x: &[S]) -> Result<Cache<S>, PredictorError> {
        if x.len() != self.input_dim() {
            return Err(PredictorError::DimensionMismatch {
                got: x.len(),
                expect: self.input_dim(),
            });
        }
        let mut a1 = Vec::new();
        self.layers[0].apply(x, &mut a1);
        for v in &mut a1 {
            *v = v.max(S::zero());
        }
        let mut a2 = Vec::new();
        self.layers[1].apply(&a1, &mut a2);
        for v in &mut a2 {
            *v = v.max(S::zero());
        }
        let mut out = Vec::new();
        self.layers[2].apply(&a2, &mut out);
        Ok(Cache {
            a1,
            a2,
            logits: [out[0], out[1]],
        })
    }

    /// Raw `[bg, fg]` logits. Pure: no randomness, no state.
    pub fn logits(&self, x: &[S]) -> Result<[S; 2], PredictorError> {
        Ok(self.forward_cached(x)?.logits)
    }

    /// Foreground probability `softmax(logits)[FG]`.
    pub fn fg_prob(&self, x: &[S]) -> Result<S, PredictorError> {
        Ok(softmax2(&self.logits(x)?)[FG])
    }

    /// Weighted-mean cross-entropy over the batch and its exact gradient:
    ///
    /// `loss = sum_i w_i * CE(softmax(f(x_i)), y_i) / max(sum_i w_i, 1)`
    ///
    /// Zero-weight samples are skipped entirely, so masking a sample leaves
    /// loss and gradients bit-identical to removing it. An all-masked batch
    /// yields loss 0 and zero gradients; an empty batch is an error.
    pub fn backward(&self, batch: &[BatchItem<S>]) -> Result<(S, Gradients<S>), PredictorError> {
        if batch.is_empty() {
            return Err(PredictorError::EmptyBatch);
        }
        let mut grads = Gradients::zeros_like(self);
        let mut loss = S::zero();
        let mut weight_sum = S::zero();
        let l1 = &self.layers[0];
        let l2 = &self.layers[1];
        let l3 = &self.layers[2];
        for item in batch {
            if item.weight == S::zero() {
                continue;
            }
            let cache = self.forward_cached(&item.x)?;
            weight_sum += item.weight;
            loss += item.weight * ce_from_logits(&cache.logits, item.label);

            // dL/dlogits for one sample: (softmax - onehot) * w.
            let p = softmax2(&cache.logits);
            let mut d3 = [p[0] * item.weight, p[1] * item.weight];
            d3[if item.label == 0 { 0 } else { 1 }] -= item.weight;

            // Layer 3.
            {
                let g = &mut grads.layers[2];
                for o in 0..2 {
                    for i in 0..l3.fan_in {
                        g.dw[o * l3.fan_in + i] += d3[o] * cache.a2[i];
                    }
                    g.db[o] += d3[o];
                }
            }
            // Backprop into hidden 2 (ReLU mask: derivative 0 at exactly 0).
            let mut d2 = vec![S::zero(); l3.fan_in];
            for (i, d2i) in d2.iter_mut().enumerate() {
                if cache.a2[i] > S::zero() {
                    *d2i = d3[0] * l3.w[i] + d3[1] * l3.w[l3.fan_in + i];
                }
            }
            {
                let g = &mut grads.layers[1];
                for o in 0..l2.fan_out {
                    if d2[o] == S::zero() {
                        continue;
                    }
                    for i in 0..l2.fan_in {
                        g.dw[o * l2.fan_in + i] += d2[o] * cache.a1[i];
                    }
                    g.db[o] += d2[o];
                }
            }
            // Backprop into hidden 1.
            let mut d1 = vec![S::zero(); l2.fan_in];
            for (i, d1i) in d1.iter_mut().enumerate() {
                if cache.a1[i] > S::zero() {
                    let mut acc = S::zero();
                    for o in 0..l2.fan_out {
                        acc += d2[o] * l2.w[o * l2.fan_in + i];
                    }
                    *d1i = acc;
                }
            }
            {
                let g = &mut grads.layers[0];
                for o in 0..l1.fan_out {
                    if d1[o] == S::zero() {
                        continue;
                    }
                    for i in 0..l1.fan_in {
                        g.dw[o * l1.fan_in + i] += d1[o] * item.x[i];
                    }
                    g.db[o] += d1[o];
                }
            }
        }
        let denom = weight_sum.max(S::one());
        let inv = S::one() / denom;
        grads.scale(inv);
        Ok((loss * inv, grads))
    }
}

/// SGD-with-momentum state: `v <- mu * v + g`, `p <- p - lr * v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimState<S> {
    pub lr: S,
    pub momentum: S,
    pub velocity: Gradients<S>,
}

impl<S: Scalar> OptimState<S> {
    pub fn new(lr: S, momentum: S, p: &Predictor<S>) -> Self {
        OptimState {
            lr,
            momentum,
            velocity: Gradients::zeros_like(p),
        }
    }
}

/// One optimizer step. Rejects non-finite gradients before touching the
/// parameters, so a diverged step cannot corrupt the model silently.
pub fn sgd_step<S: Scalar>(
    p: &mut Predictor<S>,
    grads: &Gradients<S>,
    opt: &mut OptimState<S>,
) -> Result<(), PredictorError> {
    if !grads.is_finite() {
        return Err(PredictorError::NonFinite {
            what: "gradient",
            context: String::new(),
        });
    }
    for ((layer, g), v) in p
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut opt.velocity.layers)
    {
        for ((w, dw), vw) in layer.w.iter_mut().zip(&g.dw).zip(&mut v.dw) {
            *vw = opt.momentum * *vw + *dw;
            *w -= opt.lr * *vw;
        }
        for ((b, db), vb) in layer.b.iter_mut().zip(&g.db).zip(&mut v.db) {
            *vb = opt.momentum * *vb + *db;
            *b -= opt.lr * *vb;
        }
    }
    Ok(())
}

/// Weak view: `x + Normal(0, sigma^2 I)`. Deterministic per seed.
pub fn weak_augment<S: Scalar>(x: &[S], sigma: f64, aug_seed: u64) -> Vec<S> {
    let mut rng = seed::rng(aug_seed);
    x.iter()
        .map(|v| *v + sc::<S>(sigma * rand_distr::StandardNormal.sample_f64(&mut rng)))
        .collect()
}

/// Strong view: additive noise, then each coordinate dropped (zeroed) with
/// probability `p_drop` and survivors rescaled by `1 / (1 - p_drop)`, which
/// keeps the view mean-preserving. Deterministic per seed.
pub fn strong_augment<S: Scalar>(x: &[S], sigma: f64, p_drop: f64, aug_seed: u64) -> Vec<S> {
    assert!((0.0..1.0).contains(&p_drop), "p_drop must lie in [0, 1)");
    let mut rng = seed::rng(aug_seed);
    let keep_scale = sc::<S>(1.0 / (1.0 - p_drop));
    x.iter()
        .map(|v| {
            let noisy = *v + sc::<S>(sigma * rand_distr::StandardNormal.sample_f64(&mut rng));
            let drop: f64 = rng.random();
            if drop < p_drop {
                S::zero()
            } else {
                noisy * keep_scale
            }
        })
        .collect()
}

/// Small extension so normal draws are always f64 regardless of `S`.
trait SampleF64 {
    fn sample_f64(&self, rng: &mut impl Rng) -> f64;
}

impl SampleF64 for rand_distr::StandardNormal {
    fn sample_f64(&self, rng: &mut impl Rng) -> f64 {
        rng.sample::<f64, _>(*self)
    }
}

/// Versioned checkpoint: predictor parameters plus optimizer state.
/// JSON with full float round-trip precision, so save/load is exact.
#[derive(Debug, Serialize, Deserialize)]
#[serde(bound(
    serialize = "S: Serialize",
    deserialize = "S: serde::de::DeserializeOwned"
))]
pub struct Checkpoint<S> {
    pub version: u32,
    pub predictor: Predictor<S>,
    pub optim: OptimState<S>,
}

pub fn save_checkpoint<S: Scalar + Serialize>(
    p: &Predictor<S>,
    opt: &OptimState<S>,
    path: &Path,
) -> Result<(), PredictorError> {
    let ckpt = Checkpoint {
        version: CHECKPOINT_VERSION,
        predictor: p.clone(),
        optim: opt.clone(),
    };
    let text = serde_json::to_string(&ckpt)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_checkpoint<S: Scalar + serde::de::DeserializeOwned>(
    path: &Path,
) -> Result<(Predictor<S>, OptimState<S>), PredictorError> {
    let text = std::fs::read_to_string(path)?;
    let ckpt: Checkpoint<S> = serde_json::from_str(&text)?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(PredictorError::Version {
            got: ckpt.version,
            expect: CHECKPOINT_VERSION,
        });
    }
    let dims_ok = ckpt.predictor.layers.len() == 3
        && ckpt.predictor.layers[2].fan_out == 2
        && ckpt.predictor.layers[0].fan_out == ckpt.predictor.layers[1].fan_in
        && ckpt.predictor.layers[1].fan_out == ckpt.predictor.layers[2].fan_in
        && ckpt
            .predictor
            .layers
            .iter()
            .all(|l| l.w.len() == l.fan_in * l.fan_out && l.b.len() == l.fan_out);
    if !dims_ok {
        return Err(PredictorError::BadShape);
    }
    Ok((ckpt.predictor, ckpt.optim))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    fn items(raw: &[(Vec<f64>, u8, f64)]) -> Vec<BatchItem<f64>> {
        raw.iter()
            .map(|(x, l, w)| BatchItem {
                x: x.clone(),
                label: *l,
                weight: *w,
            })
            .collect()
    }

    #[test]
    fn forward_hand_oracle_all_ones() {
        // 2 -> 2 -> 2 -> 2 stack of all-one weights, zero biases, positive
        // input so no ReLU clipping. x = (0.3, 0.2): layer1 -> (0.5, 0.5),
        // layer2 -> (1.0, 1.0), logits -> (2.0, 2.0).
        let mut p = Predictor::<f64>::zeros(2, 2, 2);
        for l in &mut p.layers {
            for w in &mut l.w {
                *w = 1.0;
            }
        }
        let out = p.logits(&[0.3, 0.2]).unwrap();
        assert!((out[0] - 2.0).abs() < 1e-12);
        assert!((out[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let p = Predictor::<f64>::init(4, 8, 8, 0);
        assert!(matches!(
            p.logits(&[0.0; 3]),
            Err(PredictorError::DimensionMismatch { got: 3, expect: 4 })
        ));
    }

    #[test]
    fn init_is_xavier_uniform_and_deterministic() {
        let p = Predictor::<f64>::init(100, 100, 8, 9);
        let q = Predictor::<f64>::init(100, 100, 8, 9);
        assert_eq!(p, q);
        let r = Predictor::<f64>::init(100, 100, 8, 10);
        assert_ne!(p, r);

        // First layer: 10,000 entries from Uniform(-a, a), a = sqrt(6/200).
        let a = (6.0 / 200.0f64).sqrt();
        let w = &p.layers()[0].w;
        assert_eq!(w.len(), 10_000);
        assert!(w.iter().all(|v| v.abs() < a));
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!(p.layers().iter().all(|l| l.b.iter().all(|b| *b == 0.0)));
    }

    #[test]
    fn zero_network_gives_ln2_loss_and_half_probs() {
        let p = Predictor::<f64>::zeros(4, 8, 8);
        assert_eq!(p.fg_prob(&[0.5, -0.5, 1.0, 2.0]).unwrap(), 0.5);
        let batch = items(&[
            (vec![0.1, 0.2, 0.3, 0.4], 1, 1.0),
            (vec![-1.0, 0.0, 2.0, 0.5], 0, 1.0),
        ]);
        let (loss, _) = p.backward(&batch).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn empty_batch_is_an_error_but_all_masked_is_zero() {
        let p = Predictor::<f64>::init(3, 4, 4, 1);
        assert!(matches!(p.backward(&[]), Err(PredictorError::EmptyBatch)));

        let batch = items(&[(vec![0.4, 0.2, -0.3], 1, 0.0), (vec![1.0, 0.0, 0.0], 0, 0.0)]);
        let (loss, grads) = p.backward(&batch).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grads.max_abs(), 0.0);
    }

    #[test]
    fn masked_sample_is_bitwise_absent() {
        let p = Predictor::<f64>::init(3, 6, 5, 2);
        let kept = items(&[
            (vec![0.4, 0.2, -0.3], 1, 1.0),
            (vec![-0.2, 0.9, 0.1], 0, 2.0),
        ]);
        let mut with_masked = kept.clone();
        with_masked.insert(
            1,
            BatchItem {
                x: vec![5.0, -7.0, 3.0],
                label: 1,
                weight: 0.0,
            },
        );
        let (l1, g1) = p.backward(&kept).unwrap();
        let (l2, g2) = p.backward(&with_masked).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(g1, g2);
    }

    /// Central finite differences on every parameter; the analytic gradient
    /// must track them tightly.
    fn assert_gradient_matches(d: usize, h1: usize, h2: usize, n: usize, trial: u64) -> f64 {
        let p = Predictor::<f64>::init(d, h1, h2, seed::mix(0x67ad, trial));
        let mut rng = seed::rng(seed::mix(0xba7c, trial));
        let batch: Vec<BatchItem<f64>> = (0..n)
            .map(|_| BatchItem {
                x: (0..d).map(|_| rng.random_range(-1.5..1.5)).collect(),
                label: u8::from(rng.random::<f64>() < 0.5),
                weight: rng.random_range(0.25..2.0),
            })
            .collect();
        let (_, analytic) = p.backward(&batch).unwrap();

        let eps = 1e-5;
        let mut max_rel: f64 = 0.0;
        for layer in 0..3 {
            for kind in 0..2 {
                let len = if kind == 0 {
                    p.layers()[layer].w.len()
                } else {
                    p.layers()[layer].b.len()
                };
                for idx in 0..len {
                    let mut plus = p.clone();
                    let mut minus = p.clone();
                    if kind == 0 {
                        plus.layers[layer].w[idx] += eps;
                        minus.layers[layer].w[idx] -= eps;
                    } else {
                        plus.layers[layer].b[idx] += eps;
                        minus.layers[layer].b[idx] -= eps;
                    }
                    let (lp, _) = plus.backward(&batch).unwrap();
                    let (lm, _) = minus.backward(&batch).unwrap();
                    let numeric = (lp - lm) / (2.0 * eps);
                    let a = if kind == 0 {
                        analytic.layers[layer].dw[idx]
                    } else {
                        analytic.layers[layer].db[idx]
                    };
                    let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
                    max_rel = max_rel.max(rel);
                }
            }
        }
        max_rel
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        for trial in 0..3 {
            let rel = assert_gradient_matches(5, 7, 6, 4, trial);
            assert!(rel < 1e-4, "max relative error {rel} on trial {trial}");
        }
    }

    #[test]
    fn sgd_momentum_follows_update_rule() {
        let mut p = Predictor::<f64>::zeros(1, 1, 1);
        // Force deterministic tiny net: all weights 1 for visibility.
        for l in &mut p.layers {
            for w in &mut l.w {
                *w = 1.0;
            }
        }
        let mut g = Gradients::zeros_like(&p);
        g.layers[0].dw[0] = 2.0;
        let mut opt = OptimState::new(0.1, 0.5, &p);
        sgd_step(&mut p, &g, &mut opt).unwrap();
        // v = 2, w = 1 - 0.1*2 = 0.8
        assert!((p.layers()[0].w[0] - 0.8).abs() < 1e-15);
        sgd_step(&mut p, &g, &mut opt).unwrap();
        // v = 0.5*2 + 2 = 3, w = 0.8 - 0.3 = 0.5
        assert!((p.layers()[0].w[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sgd_rejects_non_finite_gradients() {
        let mut p = Predictor::<f64>::init(2, 3, 3, 5);
        let mut g = Gradients::zeros_like(&p);
        g.layers[1].dw[0] = f64::NAN;
        let mut opt = OptimState::new(0.01, 0.9, &p);
        assert!(sgd_step(&mut p, &g, &mut opt).is_err());
    }

    #[test]
    fn training_separates_two_blobs() {
        // Two Gaussian blobs in d=2, linearly separable; 200 steps of
        // full-batch SGD reach training accuracy 1.0.
        let mut rng = seed::rng(77);
        let mut batch = Vec::new();
        for _ in 0..40 {
            let cx = 2.0 + 0.4 * rng.sample::<f64, _>(rand_distr::StandardNormal);
            let cy = 2.0 + 0.4 * rng.sample::<f64, _>(rand_distr::StandardNormal);
            batch.push(BatchItem {
                x: vec![cx, cy],
                label: 1,
                weight: 1.0,
            });
            let bx = -2.0 + 0.4 * rng.sample::<f64, _>(rand_distr::StandardNormal);
            let by = -2.0 + 0.4 * rng.sample::<f64, _>(rand_distr::StandardNormal);
            batch.push(BatchItem {
                x: vec![bx, by],
                label: 0,
                weight: 1.0,
            });
        }
        let mut p = Predictor::<f64>::init(2, 16, 8, 3);
        let mut opt = OptimState::new(0.05, 0.9, &p);
        for _ in 0..200 {
            let (_, g) = p.backward(&batch).unwrap();
            sgd_step(&mut p, &g, &mut opt).unwrap();
        }
        let correct = batch
            .iter()
            .filter(|it| {
                let fg = p.fg_prob(&it.x).unwrap();
                (fg > 0.5) == (it.label == 1)
            })
            .count();
        assert_eq!(correct, batch.len());
    }

    #[test]
    fn augmentations_are_deterministic_per_seed() {
        let x: Vec<f64> = vec![0.5, -1.0, 2.0, 0.0];
        assert_eq!(weak_augment(&x, 0.05, 9), weak_augment(&x, 0.05, 9));
        assert_ne!(weak_augment(&x, 0.05, 9), weak_augment(&x, 0.05, 10));
        assert_eq!(
            strong_augment(&x, 0.2, 0.3, 4),
            strong_augment(&x, 0.2, 0.3, 4)
        );
        assert_ne!(
            strong_augment(&x, 0.2, 0.3, 4),
            strong_augment(&x, 0.2, 0.3, 5)
        );
    }

    #[test]
    fn strong_augment_is_mean_preserving() {
        let x: Vec<f64> = vec![1.0, -0.5, 0.25, 2.0];
        let n = 20_000;
        let mut mean = vec![0.0f64; x.len()];
        for s in 0..n {
            let v = strong_augment(&x, 0.2, 0.3, seed::mix(0xaa, s));
            for (m, vi) in mean.iter_mut().zip(&v) {
                *m += vi;
            }
        }
        let norm = (x.iter().map(|v| v * v).sum::<f64>()).sqrt();
        for (m, xi) in mean.iter().zip(&x) {
            let avg = m / n as f64;
            assert!(
                (avg - xi).abs() <= 0.02 * norm,
                "coordinate mean {avg} drifted from {xi}"
            );
        }
    }

    #[test]
    fn strong_augment_drops_about_p_fraction() {
        let x: Vec<f64> = vec![1.0; 64];
        let mut dropped = 0usize;
        let n = 2_000;
        for s in 0..n {
            let v = strong_augment(&x, 0.0, 0.3, seed::mix(0xbb, s));
            dropped += v.iter().filter(|c| **c == 0.0).count();
        }
        let rate = dropped as f64 / (64 * n) as f64;
        assert!((rate - 0.3).abs() < 0.01, "drop rate {rate}");
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let p = Predictor::<f64>::init(6, 10, 4, 21);
        let mut opt = OptimState::new(0.01, 0.9, &p);
        // Give the velocity some structure before saving.
        opt.velocity.layers[0].dw[3] = -0.125;
        save_checkpoint(&p, &opt, &path).unwrap();
        let (p2, opt2) = load_checkpoint::<f64>(&path).unwrap();
        assert_eq!(p, p2);
        assert_eq!(opt, opt2);
    }

    #[test]
    fn checkpoint_rejects_bad_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let p = Predictor::<f64>::init(3, 4, 4, 0);
        let opt = OptimState::new(0.01, 0.9, &p);
        save_checkpoint(&p, &opt, &path).unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("\"version\":1", "\"version\":999");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(
            load_checkpoint::<f64>(&path),
            Err(PredictorError::Version { got: 999, .. })
        ));
    }

    #[test]
    fn f32_instantiation_runs() {
        let p = Predictor::<f32>::init(4, 8, 6, 11);
        let batch: Vec<BatchItem<f32>> = vec![BatchItem {
            x: vec![0.5, -0.25, 1.0, 0.0],
            label: 1,
            weight: 1.0,
        }];
        let (loss, g) = p.backward(&batch).unwrap();
        assert!(loss.is_finite());
        assert!(g.is_finite());
    }
}
