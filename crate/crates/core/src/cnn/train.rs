//! Mini-batch SGD with momentum, data augmentation and training history.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Network, Tensor};
use crate::label::NUM_LABELS;
use crate::{EmotionLabel, Error, Result};

/// One training or validation example: an `(h, w, c)` image and its label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Tensor,
    pub label: EmotionLabel,
}

/// Random geometric perturbations applied per sample during training.
/// Magnitudes are maxima; each draw is uniform in `[-max, max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub shift_px: f64,
    pub rotate_deg: f64,
    pub hflip: bool,
    pub zoom_pct: f64,
    pub shear_deg: f64,
}

impl AugmentConfig {
    pub fn none() -> Self {
        AugmentConfig {
            shift_px: 0.0,
            rotate_deg: 0.0,
            hflip: false,
            zoom_pct: 0.0,
            shear_deg: 0.0,
        }
    }

    fn is_identity(&self) -> bool {
        *self == Self::none()
    }
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            shift_px: 3.0,
            rotate_deg: 10.0,
            hflip: true,
            zoom_pct: 10.0,
            shear_deg: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Overrides every layer's kernel penalty when set.
    pub l2_lambda: Option<f64>,
    pub seed: u64,
    pub augmentation: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            l2_lambda: None,
            seed: 0,
            augmentation: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("train config: {what}")));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.l2_lambda.is_some_and(|l| !(l >= 0.0 && l.is_finite())) {
            return bad("l2_lambda must be non-negative");
        }
        let a = &self.augmentation;
        if [a.shift_px, a.rotate_deg, a.zoom_pct, a.shear_deg]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return bad("augmentation magnitudes must be non-negative");
        }
        if a.zoom_pct >= 100.0 {
            return bad("zoom_pct must be below 100");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean total loss (data + kernel penalty) over the epoch's batches.
    pub loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
}

impl EpochRecord {
    /// `epoch,loss,val_accuracy`; the accuracy field is empty without a
    /// validation set.
    pub fn to_line(&self) -> String {
        match self.val_accuracy {
            Some(v) => format!("{},{},{}", self.epoch, self.loss, v),
            None => format!("{},{},", self.epoch, self.loss),
        }
    }
}

/// Mirrors an `(h, w, c)` image left to right.
pub fn flip_horizontal(img: &Tensor) -> Tensor {
    let [h, w, c] = img.shape()[..] else {
        panic!("flip_horizontal expects an (h, w, c) tensor");
    };
    let src = img.data();
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            let s = (y * w + (w - 1 - x)) * c;
            let d = (y * w + x) * c;
            out[d..d + c].copy_from_slice(&src[s..s + c]);
        }
    }
    Tensor::new(img.shape().to_vec(), out).expect("same shape")
}

/// Bilinear sample of channel `ch` at `(x, y)`, clamping to the border.
fn sample(src: &[f64], h: usize, w: usize, c: usize, ch: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let at = |xx: usize, yy: usize| src[(yy * w + xx) * c + ch];
    let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
    let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Random flip, then one affine warp (shift, rotation, zoom, shear about
/// the image center) with bilinear sampling and edge replication. Draws
/// happen in a fixed order, so a replayed RNG state gives the same output.
pub fn augment(img: &Tensor, config: &AugmentConfig, rng: &mut impl Rng) -> Tensor {
    if config.is_identity() {
        return img.clone();
    }
    let mut draw = |max: f64| {
        if max > 0.0 {
            rng.gen_range(-max..=max)
        } else {
            0.0
        }
    };
    let flip = config.hflip && draw(1.0) < 0.0;
    let (dx, dy) = (draw(config.shift_px), draw(config.shift_px));
    let theta = draw(config.rotate_deg).to_radians();
    let zoom = 1.0 + draw(config.zoom_pct) / 100.0;
    let shear = draw(config.shear_deg).to_radians().tan();

    let base = if flip {
        flip_horizontal(img)
    } else {
        img.clone()
    };
    if dx == 0.0 && dy == 0.0 && theta == 0.0 && zoom == 1.0 && shear == 0.0 {
        return base;
    }
    let [h, w, c] = base.shape()[..] else {
        panic!("augment expects an (h, w, c) tensor");
    };
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (sin, cos) = theta.sin_cos();
    let src = base.data();
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            // Inverse map: undo shift, rotation, shear, zoom in that order.
            let u = x as f64 - cx - dx;
            let v = y as f64 - cy - dy;
            let (ru, rv) = (cos * u + sin * v, -sin * u + cos * v);
            let (su, sv) = (ru - shear * rv, rv);
            let (sx, sy) = (su / zoom + cx, sv / zoom + cy);
            for ch in 0..c {
                out[(y * w + x) * c + ch] = sample(src, h, w, c, ch, sx, sy);
            }
        }
    }
    Tensor::new(base.shape().to_vec(), out).expect("same shape")
}

fn batch_of(samples: &[&Sample]) -> Result<(Tensor, Vec<EmotionLabel>)> {
    let inputs: Vec<&Tensor> = samples.iter().map(|s| &s.input).collect();
    Ok((
        Tensor::stack(&inputs)?,
        samples.iter().map(|s| s.label).collect(),
    ))
}

fn argmax_row(row: &[f64]) -> EmotionLabel {
    let mut scores = [0.0; NUM_LABELS];
    scores.copy_from_slice(row);
    EmotionLabel::argmax(&scores)
}

/// Eval-mode accuracy over `samples`.
pub fn evaluate_accuracy(network: &Network, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty set".into()));
    }
    let mut hits = 0;
    for chunk in samples.chunks(64) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (x, y) = batch_of(&refs)?;
        let logits = network.forward_eval(&x)?;
        for (row, label) in logits.data().chunks_exact(NUM_LABELS).zip(&y) {
            if argmax_row(row) == *label {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// As [`train_with_progress`] without a callback.
pub fn train(
    network: &mut Network,
    train: &[Sample],
    val: &[Sample],
    config: &TrainConfig,
) -> Result<Vec<EpochRecord>> {
    train_with_progress(network, train, val, config, |_| {})
}

/// Trains in place. Every stochastic choice (shuffle order, augmentation)
/// comes from one seeded stream. After each update all parameters are
/// rounded to `f32` precision. A non-finite loss aborts with
/// [`Error::Diverged`] carrying the epochs completed so far.
pub fn train_with_progress(
    network: &mut Network,
    train: &[Sample],
    val: &[Sample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let mut history: Vec<EpochRecord> = Vec::new();
    if config.epochs == 0 {
        return Ok(history);
    }
    if let Some(l2) = config.l2_lambda {
        override_l2(network, l2);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut velocity: Vec<Vec<f64>> = Vec::new();
    network.params_mut(&mut |p| velocity.push(vec![0.0; p.value.len()]));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let diverged = |epoch: usize, reason: String, history: &[EpochRecord]| Error::Diverged {
        epoch,
        reason,
        history: history
            .iter()
            .map(|r| (r.loss, r.val_accuracy.unwrap_or(f64::NAN)))
            .collect(),
    };

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut batches, mut hits) = (0.0, 0usize, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let augmented: Vec<Sample> = chunk
                .iter()
                .map(|&i| Sample {
                    input: augment(&train[i].input, &config.augmentation, &mut rng),
                    label: train[i].label,
                })
                .collect();
            let refs: Vec<&Sample> = augmented.iter().collect();
            let (x, y) = batch_of(&refs)?;
            let out = network.train_batch(&x, &y)?;
            if !out.total_loss.is_finite() {
                return Err(diverged(
                    epoch,
                    format!("loss became {}", out.total_loss),
                    &history,
                ));
            }
            let mut bad_grad = None;
            let mut k = 0;
            network.params_mut(&mut |p| {
                let v = &mut velocity[k];
                k += 1;
                if bad_grad.is_none() && p.grad.iter().any(|g| !g.is_finite()) {
                    bad_grad = Some(p.name.clone());
                }
                for ((w, g), vel) in p.value.iter_mut().zip(p.grad.iter()).zip(v.iter_mut()) {
                    *vel = config.momentum * *vel - config.learning_rate * g;
                    *w += *vel;
                }
            });
            if let Some(name) = bad_grad {
                return Err(diverged(
                    epoch,
                    format!("non-finite gradient in {name}"),
                    &history,
                ));
            }
            network.round_to_f32();
            loss_sum += out.total_loss;
            batches += 1;
            for (row, label) in out.probs.data().chunks_exact(NUM_LABELS).zip(&y) {
                if argmax_row(row) == *label {
                    hits += 1;
                }
            }
        }
        let record = EpochRecord {
            epoch,
            loss: loss_sum / batches as f64,
            train_accuracy: hits as f64 / train.len() as f64,
            val_accuracy: if val.is_empty() {
                None
            } else {
                Some(evaluate_accuracy(network, val)?)
            },
        };
        on_epoch(&record);
        history.push(record);
    }
    Ok(history)
}

fn override_l2(network: &mut Network, l2: f64) {
    use super::layers::Layer;
    fn walk(layers: &mut [Layer], l2: f64) {
        for l in layers {
            match l {
                Layer::Conv(c) => c.l2 = l2,
                Layer::SepConv(s) => s.l2 = l2,
                Layer::Residual { skip, main } => {
                    walk(skip, l2);
                    walk(main, l2);
                }
                _ => {}
            }
        }
    }
    walk(network.layers_mut(), l2);
}
