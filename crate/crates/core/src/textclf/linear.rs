//! Multinomial logistic regression and one-vs-rest linear SVM, both trained
//! by seeded mini-batch SGD with an implicit (proximal) L2 step.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::features::SparseVector;
use crate::label::NUM_LABELS;
use crate::{EmotionLabel, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearKind {
    Logistic,
    Svm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearHyper {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2_lambda: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for LinearHyper {
    fn default() -> Self {
        LinearHyper {
            learning_rate: 0.1,
            epochs: 30,
            l2_lambda: 1e-4,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl LinearHyper {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning_rate must be > 0".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "epochs and batch_size must be ≥ 1".into(),
            ));
        }
        if !(self.l2_lambda >= 0.0) {
            return Err(Error::InvalidArgument("l2_lambda must be ≥ 0".into()));
        }
        Ok(())
    }
}

/// `weights[k * dim + j]` is the weight of feature `j` for label `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub kind: LinearKind,
    pub dimension: usize,
    pub weights: Vec<f64>,
    pub bias: [f64; NUM_LABELS],
    pub hyper: LinearHyper,
}

impl LinearModel {
    pub fn zeros(kind: LinearKind, dimension: usize, hyper: LinearHyper) -> Self {
        LinearModel {
            kind,
            dimension,
            weights: vec![0.0; NUM_LABELS * dimension],
            bias: [0.0; NUM_LABELS],
            hyper,
        }
    }

    pub fn row(&self, label: usize) -> &[f64] {
        &self.weights[label * self.dimension..(label + 1) * self.dimension]
    }

    /// Raw per-label scores `w_k · x + b_k`.
    pub fn margins(&self, x: &SparseVector) -> [f64; NUM_LABELS] {
        let mut s = self.bias;
        for (k, sk) in s.iter_mut().enumerate() {
            *sk += x.dot_dense(self.row(k));
        }
        s
    }

    /// Softmax of margins; for the SVM this is only a monotone rescoring.
    pub fn scores(&self, x: &SparseVector) -> [f64; NUM_LABELS] {
        super::softmax(&self.margins(x))
    }

    pub fn weight_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }
}

/// Per-sample data loss and its gradient with respect to the margins.
fn sample_loss(
    kind: LinearKind,
    margins: &[f64; NUM_LABELS],
    y: usize,
) -> (f64, [f64; NUM_LABELS]) {
    match kind {
        LinearKind::Logistic => {
            let p = super::softmax(margins);
            let mut g = p;
            g[y] -= 1.0;
            let max = margins.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + margins.iter().map(|m| (m - max).exp()).sum::<f64>().ln();
            (lse - margins[y], g)
        }
        LinearKind::Svm => {
            let mut loss = 0.0;
            let mut g = [0.0; NUM_LABELS];
            for k in 0..NUM_LABELS {
                let t = if k == y { 1.0 } else { -1.0 };
                let slack = 1.0 - t * margins[k];
                if slack > 0.0 {
                    loss += slack;
                    g[k] = -t;
                }
            }
            (loss, g)
        }
    }
}

fn margins_of(
    weights: &[f64],
    scale: f64,
    bias: &[f64; NUM_LABELS],
    dim: usize,
    x: &SparseVector,
) -> [f64; NUM_LABELS] {
    let mut s = *bias;
    for (k, sk) in s.iter_mut().enumerate() {
        *sk += scale * x.dot_dense(&weights[k * dim..(k + 1) * dim]);
    }
    s
}

/// Mean data loss over `samples` and its sparse gradient as
/// `(label, feature, value)` triples plus the bias gradient. The L2 term is
/// not included. The effective weights are `scale · weights`.
fn data_gradient(
    kind: LinearKind,
    dim: usize,
    weights: &[f64],
    scale: f64,
    bias: &[f64; NUM_LABELS],
    x: &[SparseVector],
    y: &[EmotionLabel],
    samples: &[usize],
) -> (f64, Vec<(usize, usize, f64)>, [f64; NUM_LABELS]) {
    let inv_n = 1.0 / samples.len() as f64;
    let mut loss = 0.0;
    let mut grad_w = Vec::new();
    let mut grad_b = [0.0; NUM_LABELS];
    for &i in samples {
        let m = margins_of(weights, scale, bias, dim, &x[i]);
        let (l, g) = sample_loss(kind, &m, y[i].index());
        loss += l * inv_n;
        for k in 0..NUM_LABELS {
            if g[k] != 0.0 {
                grad_b[k] += g[k] * inv_n;
                for &(j, v) in x[i].entries() {
                    grad_w.push((k, j, g[k] * v * inv_n));
                }
            }
        }
    }
    (loss, grad_w, grad_b)
}

fn all_samples(
    model: &LinearModel,
    x: &[SparseVector],
    y: &[EmotionLabel],
) -> (f64, Vec<(usize, usize, f64)>, [f64; NUM_LABELS]) {
    let all: Vec<usize> = (0..x.len()).collect();
    data_gradient(
        model.kind,
        model.dimension,
        &model.weights,
        1.0,
        &model.bias,
        x,
        y,
        &all,
    )
}

/// Full objective: mean data loss + `λ/2 · ‖W‖²` (bias unregularized).
pub fn objective(model: &LinearModel, x: &[SparseVector], y: &[EmotionLabel]) -> f64 {
    let (loss, _, _) = all_samples(model, x, y);
    let w2: f64 = model.weights.iter().map(|w| w * w).sum();
    loss + 0.5 * model.hyper.l2_lambda * w2
}

/// (Sub)gradient of [`objective`] as dense `(weights, bias)`.
pub fn gradient(
    model: &LinearModel,
    x: &[SparseVector],
    y: &[EmotionLabel],
) -> (Vec<f64>, [f64; NUM_LABELS]) {
    let (_, sparse, grad_b) = all_samples(model, x, y);
    let mut grad_w: Vec<f64> = model
        .weights
        .iter()
        .map(|w| model.hyper.l2_lambda * w)
        .collect();
    for (k, j, g) in sparse {
        grad_w[k * model.dimension + j] += g;
    }
    (grad_w, grad_b)
}

fn diverged(epoch: usize, reason: String, history: &[f64]) -> Error {
    Error::Diverged {
        epoch,
        reason,
        history: history.iter().map(|&l| (l, f64::NAN)).collect(),
    }
}

fn fit(
    kind: LinearKind,
    x: &[SparseVector],
    y: &[EmotionLabel],
    hyper: LinearHyper,
) -> Result<(LinearModel, Vec<f64>)> {
    hyper.validate()?;
    let dim = super::check_training_set_any(x, y)?;
    let mut model = LinearModel::zeros(kind, dim, hyper);
    // True weights are `scale · model.weights`; the L2 shrink then costs
    // O(1) per step instead of O(labels · dim).
    let mut scale = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order: Vec<usize> = (0..x.len()).collect();
    let mut history = Vec::with_capacity(hyper.epochs);

    for epoch in 0..hyper.epochs {
        let lr = hyper.learning_rate / (1.0 + 0.01 * epoch as f64);
        let shrink = 1.0 / (1.0 + lr * hyper.l2_lambda);
        order.shuffle(&mut rng);
        for batch in order.chunks(hyper.batch_size) {
            let (loss, grad_w, grad_b) =
                data_gradient(kind, dim, &model.weights, scale, &model.bias, x, y, batch);
            if !loss.is_finite() {
                return Err(diverged(
                    epoch,
                    format!("non-finite batch loss {loss}"),
                    &history,
                ));
            }
            for (k, j, g) in grad_w {
                model.weights[k * dim + j] -= lr * g / scale;
            }
            for k in 0..NUM_LABELS {
                model.bias[k] -= lr * grad_b[k];
            }
            scale *= shrink;
            if scale < 1e-9 {
                model.weights.iter_mut().for_each(|w| *w *= scale);
                scale = 1.0;
            }
        }
        model.weights.iter_mut().for_each(|w| *w *= scale);
        scale = 1.0;
        let loss = objective(&model, x, y);
        if !loss.is_finite() || model.weights.iter().any(|v| !v.is_finite()) {
            return Err(diverged(
                epoch,
                "non-finite weights or loss".into(),
                &history,
            ));
        }
        history.push(loss);
    }
    Ok((model, history))
}

pub fn train_logistic(
    x: &[SparseVector],
    y: &[EmotionLabel],
    hyper: LinearHyper,
) -> Result<LinearModel> {
    fit(LinearKind::Logistic, x, y, hyper).map(|r| r.0)
}

pub fn train_linear_svm(
    x: &[SparseVector],
    y: &[EmotionLabel],
    hyper: LinearHyper,
) -> Result<LinearModel> {
    fit(LinearKind::Svm, x, y, hyper).map(|r| r.0)
}

/// Like the `train_*` functions but also returns the per-epoch objective.
pub fn train_linear_with_history(
    kind: LinearKind,
    x: &[SparseVector],
    y: &[EmotionLabel],
    hyper: LinearHyper,
) -> Result<(LinearModel, Vec<f64>)> {
    fit(kind, x, y, hyper)
}
