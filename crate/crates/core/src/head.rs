//! Learned known-class classification head.
//!
//! A linear softmax over the classes annotated so far plus one background
//! row. Rows are appended (zero-initialized) as tasks introduce classes, so
//! logits over absent classes never exist. The head is the forgettable part
//! of known-class detection: softmax cross-entropy pushes every non-label
//! row down on each sample, so a class whose annotations stop arriving has
//! its logits eroded by later training until balanced fine-tuning revisits
//! it.

use crate::scalar::{sc, Scalar};
use serde::{Deserialize, Serialize};

/// One labeled sample for the head: a feature and its class, `None` for
/// background.
#[derive(Debug, Clone)]
pub struct HeadSample<S> {
    pub feature: Vec<S>,
    pub class_id: Option<u32>,
}

/// Linear classifier `logits = W x + b` with one row per registered class
/// and a trailing background row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassHead<S> {
    d: usize,
    /// Registered class ids in row order; the background row sits after
    /// these.
    classes: Vec<u32>,
    /// Row-major weights, `(classes.len() + 1) * d`.
    w: Vec<S>,
    b: Vec<S>,
    /// Momentum buffers matching `w` / `b`.
    vw: Vec<S>,
    vb: Vec<S>,
}

impl<S: Scalar> ClassHead<S> {
    /// An empty head knowing only the background row.
    pub fn new(d: usize) -> Self {
        ClassHead {
            d,
            classes: Vec::new(),
            w: vec![S::zero(); d],
            b: vec![S::zero()],
            vw: vec![S::zero(); d],
            vb: vec![S::zero()],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.d
    }

    pub fn classes(&self) -> &[u32] {
        &self.classes
    }

    /// Registers any unseen class ids with zero-initialized rows. Existing
    /// rows (and their momenta) are untouched, so incremental growth never
    /// perturbs learned classes.
    pub fn ensure_classes(&mut self, ids: &[u32]) {
        for &id in ids {
            if self.classes.contains(&id) {
                continue;
            }
            // Insert before the background row (kept last).
            let at = self.classes.len();
            self.classes.push(id);
            self.w.splice(at * self.d..at * self.d, vec![S::zero(); self.d]);
            self.vw
                .splice(at * self.d..at * self.d, vec![S::zero(); self.d]);
            self.b.insert(at, S::zero());
            self.vb.insert(at, S::zero());
        }
    }

    fn rows(&self) -> usize {
        self.classes.len() + 1
    }

    fn logits(&self, x: &[S]) -> Vec<S> {
        assert_eq!(x.len(), self.d, "head feature dimension mismatch");
        (0..self.rows())
            .map(|r| {
                let row = &self.w[r * self.d..(r + 1) * self.d];
                row.iter().zip(x).fold(self.b[r], |acc, (w, xi)| acc + *w * *xi)
            })
            .collect()
    }

    fn softmax(logits: &[S]) -> Vec<S> {
        let m = logits
            .iter()
            .copied()
            .fold(S::neg_infinity(), |a, v| a.max(v));
        let exps: Vec<S> = logits.iter().map(|&l| (l - m).exp()).collect();
        let z = exps.iter().copied().fold(S::zero(), |a, v| a + v);
        exps.into_iter().map(|e| e / z).collect()
    }

    /// Class probabilities over registered classes plus background (last).
    pub fn probs(&self, x: &[S]) -> Vec<S> {
        Self::softmax(&self.logits(x))
    }

    /// Most probable class and its probability, or `None` when the
    /// background row wins. Ties break toward the earliest row, so
    /// background (last) loses exact ties against any class.
    pub fn predict(&self, x: &[S]) -> Option<(u32, S)> {
        let p = self.probs(x);
        let mut best = 0usize;
        for r in 1..p.len() {
            if p[r] > p[best] {
                best = r;
            }
        }
        (best < self.classes.len()).then(|| (self.classes[best], p[best]))
    }

    /// One SGD-with-momentum step on the label-balanced softmax
    /// cross-entropy of the batch: each sample is weighted inversely to its
    /// label's count, so every label present contributes equally. Background
    /// picks outnumber any single class several-fold in detection batches;
    /// unweighted CE would spend the whole step learning that prior. Returns
    /// the pre-step loss; empty batches are a no-op.
    ///
    /// Panics if a sample names an unregistered class: the caller's task
    /// bookkeeping must register classes before labeling with them.
    pub fn train_batch(&mut self, batch: &[HeadSample<S>], lr: S, momentum: S) -> S {
        if batch.is_empty() {
            return S::zero();
        }
        let rows = self.rows();
        let ys: Vec<usize> = batch
            .iter()
            .map(|s| match s.class_id {
                Some(id) => self
                    .classes
                    .iter()
                    .position(|&c| c == id)
                    .unwrap_or_else(|| panic!("class {id} not registered with the head")),
                None => rows - 1,
            })
            .collect();
        let mut counts = vec![0usize; rows];
        for &y in &ys {
            counts[y] += 1;
        }
        let labels_present = sc::<S>(counts.iter().filter(|&&c| c > 0).count() as f64);
        let mut gw = vec![S::zero(); self.w.len()];
        let mut gb = vec![S::zero(); rows];
        let mut loss = S::zero();
        for (s, &y) in batch.iter().zip(&ys) {
            let wgt = S::one() / (labels_present * sc::<S>(counts[y] as f64));
            let p = self.probs(&s.feature);
            loss -= p[y].max(sc::<S>(1e-300)).ln() * wgt;
            for r in 0..rows {
                let delta = (p[r] - if r == y { S::one() } else { S::zero() }) * wgt;
                gb[r] += delta;
                let grow = &mut gw[r * self.d..(r + 1) * self.d];
                for (g, xi) in grow.iter_mut().zip(&s.feature) {
                    *g += delta * *xi;
                }
            }
        }
        for i in 0..self.w.len() {
            self.vw[i] = momentum * self.vw[i] + gw[i];
            self.w[i] -= lr * self.vw[i];
        }
        for i in 0..rows {
            self.vb[i] = momentum * self.vb[i] + gb[i];
            self.b[i] -= lr * self.vb[i];
        }
        loss
    }
}
