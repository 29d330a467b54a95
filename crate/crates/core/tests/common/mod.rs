//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use liesensor::cnn::{
    softmax_cross_entropy, softmax_cross_entropy_grad, AugmentConfig, Descriptor, Network, Sample,
    Tensor, TrainConfig,
};
use liesensor::features::SparseVector;
use liesensor::synth::constant_images;
use liesensor::textclf::{
    linear_gradient, linear_objective, train_naive_bayes, LinearHyper, LinearKind, LinearModel,
};
use liesensor::vision::{
    scale_pixels, Cascade, DetectParams, GrayImage, HaarRect, RawWindow, Stage, WeakClassifier,
};
use liesensor::{EmotionLabel, NUM_LABELS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;
pub const GRAD_TOL: f64 = 1e-4;
/// Below this absolute difference two gradients are considered equal;
/// central differences cannot resolve smaller values against round-off.
pub const GRAD_FLOOR: f64 = 1e-8;

pub fn close(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= GRAD_FLOOR || diff <= GRAD_TOL * analytic.abs().max(numeric.abs())
}

pub fn random_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn total_loss(net: &mut Network, x: &Tensor, labels: &[EmotionLabel]) -> f64 {
    let logits = net.forward_train(x).unwrap();
    softmax_cross_entropy(&logits, labels).unwrap().0 + net.regularization()
}

fn nudge(net: &mut Network, block: usize, index: usize, delta: f64) {
    let mut k = 0;
    net.params_mut(&mut |p| {
        if k == block {
            p.value[index] += delta;
        }
        k += 1;
    });
}

/// Worst gradient mismatch found, as `(what, analytic, numeric)`.
pub type Mismatch = (String, f64, f64);

/// Compares analytic gradients of the training loss (data term plus
/// kernel penalty) against central differences, for up to `per_block`
/// entries of every parameter block and of the input.
pub fn check_network_gradients(
    desc: &Descriptor,
    batch: usize,
    seed: u64,
    per_block: usize,
) -> Result<usize, Mismatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::new(desc, seed).unwrap();
    // Move biases and BN affine terms off their zero/one initial values.
    net.params_mut(&mut |p| {
        if p.l2 == 0.0 {
            p.value
                .iter_mut()
                .for_each(|v| *v += rng.gen_range(-0.3..0.3));
        }
    });
    let [h, w, c] = desc.input;
    let x = random_tensor(vec![batch, h, w, c], &mut rng);
    let labels: Vec<EmotionLabel> = (0..batch)
        .map(|_| EmotionLabel::ALL[rng.gen_range(0..4)])
        .collect();

    net.zero_grads();
    let probs = {
        let logits = net.forward_train(&x).unwrap();
        softmax_cross_entropy(&logits, &labels).unwrap().1
    };
    let dx = net
        .backward(&softmax_cross_entropy_grad(&probs, &labels))
        .unwrap();
    let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
    net.params_mut(&mut |p| {
        let g = p
            .grad
            .iter()
            .zip(p.value.iter())
            .map(|(g, v)| g + 2.0 * p.l2 * v)
            .collect();
        analytic.push((p.name, g));
    });

    let mut checked = 0;
    for (block, (name, grads)) in analytic.iter().enumerate() {
        let picks: Vec<usize> = if grads.len() <= per_block {
            (0..grads.len()).collect()
        } else {
            (0..per_block)
                .map(|_| rng.gen_range(0..grads.len()))
                .collect()
        };
        for i in picks {
            nudge(&mut net, block, i, FD_STEP);
            let up = total_loss(&mut net, &x, &labels);
            nudge(&mut net, block, i, -2.0 * FD_STEP);
            let down = total_loss(&mut net, &x, &labels);
            nudge(&mut net, block, i, FD_STEP);
            let numeric = (up - down) / (2.0 * FD_STEP);
            if !close(grads[i], numeric) {
                return Err((format!("{name}[{i}]"), grads[i], numeric));
            }
            checked += 1;
        }
    }
    let picks: Vec<usize> = (0..per_block.min(x.len()))
        .map(|_| rng.gen_range(0..x.len()))
        .collect();
    for i in picks {
        let mut xp = x.clone();
        xp.data_mut()[i] += FD_STEP;
        let up = total_loss(&mut net, &xp, &labels);
        xp.data_mut()[i] -= 2.0 * FD_STEP;
        let down = total_loss(&mut net, &xp, &labels);
        let numeric = (up - down) / (2.0 * FD_STEP);
        if !close(dx.data()[i], numeric) {
            return Err((format!("input[{i}]"), dx.data()[i], numeric));
        }
        checked += 1;
    }
    Ok(checked)
}

/// Softmax head alone: analytic logit gradient vs central differences.
pub fn check_softmax_head(seed: u64) -> Result<usize, Mismatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let logits = random_tensor(vec![5, 4], &mut rng);
    let labels: Vec<EmotionLabel> = (0..5)
        .map(|_| EmotionLabel::ALL[rng.gen_range(0..4)])
        .collect();
    let (_, probs) = softmax_cross_entropy(&logits, &labels).unwrap();
    let grad = softmax_cross_entropy_grad(&probs, &labels);
    for i in 0..logits.len() {
        let mut l = logits.clone();
        l.data_mut()[i] += FD_STEP;
        let up = softmax_cross_entropy(&l, &labels).unwrap().0;
        l.data_mut()[i] -= 2.0 * FD_STEP;
        let down = softmax_cross_entropy(&l, &labels).unwrap().0;
        let numeric = (up - down) / (2.0 * FD_STEP);
        if !close(grad.data()[i], numeric) {
            return Err((format!("logit[{i}]"), grad.data()[i], numeric));
        }
    }
    Ok(logits.len())
}

/// One small network per layer type, each ending in four pooled scores.
pub fn gradient_suite() -> Vec<(&'static str, Descriptor)> {
    let text = |s: &str| Descriptor::from_text(s).unwrap();
    vec![
        (
            "conv",
            text("input 5 5 2\nconv k=3 in=2 out=4 stride=2 pad=same l2=0.01\ngap\n"),
        ),
        (
            "conv-valid",
            text("input 6 5 3\nconv k=3 in=3 out=4 stride=1 pad=valid l2=0.02\ngap\n"),
        ),
        (
            "sepconv",
            text("input 5 5 3\nsepconv k=3 in=3 out=4 stride=1 pad=same l2=0.01\ngap\n"),
        ),
        (
            "sepconv-strided",
            text("input 7 6 2\nsepconv k=3 in=2 out=4 stride=2 pad=valid l2=0.01\ngap\n"),
        ),
        (
            "batchnorm",
            text(
                "input 4 4 2\nconv k=1 in=2 out=3 stride=1 pad=same l2=0\nbatchnorm c=3 momentum=0.99 eps=0.00001\n\
                 relu\nconv k=1 in=3 out=4 stride=1 pad=same l2=0\ngap\n",
            ),
        ),
        (
            "maxpool",
            text(
                "input 6 6 1\nconv k=3 in=1 out=4 stride=1 pad=same l2=0\nmaxpool k=3 stride=2 pad=same\ngap\n",
            ),
        ),
        (
            "residual",
            text(
                "input 6 6 2\nconv k=1 in=2 out=4 stride=1 pad=same l2=0.01\nresidual\n  \
                 conv k=1 in=4 out=4 stride=2 pad=same l2=0.01\n  batchnorm c=4 momentum=0.99 eps=0.00001\nbranch\n  \
                 sepconv k=3 in=4 out=4 stride=1 pad=same l2=0.01\n  batchnorm c=4 momentum=0.99 eps=0.00001\n  \
                 relu\n  maxpool k=3 stride=2 pad=same\nend\ngap\n",
            ),
        ),
        (
            "residual-identity",
            text(
                "input 4 4 4\nresidual\nbranch\n  sepconv k=3 in=4 out=4 stride=1 pad=same l2=0.01\n  relu\nend\ngap\n",
            ),
        ),
        ("mini-xception", liesensor::cnn::mini_xception([12, 12, 1], 0.25, 0.01)),
    ]
}

pub fn random_image(w: usize, h: usize, rng: &mut ChaCha8Rng) -> GrayImage {
    GrayImage::from_fn(w, h, |_, _| rng.gen())
}

pub fn one_rect_cascade() -> Cascade {
    Cascade {
        window_width: 24,
        window_height: 24,
        stages: vec![Stage {
            threshold: 0.5,
            weak: vec![WeakClassifier {
                rects: vec![HaarRect {
                    x: 8,
                    y: 8,
                    w: 8,
                    h: 8,
                    weight: 1.0,
                }],
                threshold: 0.0,
                left_value: 0.0,
                right_value: 1.0,
            }],
        }],
    }
}

/// Exhaustive reference detector: recomputes every scaled rect and every
/// pixel sum directly, without the integral image.
pub fn brute_force_windows(
    img: &GrayImage,
    cascade: &Cascade,
    params: &DetectParams,
) -> Vec<RawWindow> {
    let sum = |x0: usize, y0: usize, w: usize, h: usize, sq: bool| -> f64 {
        let mut s = 0.0;
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                let p = img.get(x, y) as f64;
                s += if sq { p * p } else { p };
            }
        }
        s
    };
    let mut out = Vec::new();
    let mut level = 0;
    loop {
        let scale = params.scale_factor.powi(level as i32);
        let ww = (cascade.window_width as f64 * scale).round() as usize;
        let wh = (cascade.window_height as f64 * scale).round() as usize;
        if ww > img.width() || wh > img.height() {
            break;
        }
        for y in 0..=img.height() - wh {
            for x in 0..=img.width() - ww {
                let (nw, nh) = (ww - 2, wh - 2);
                let area = (nw * nh) as f64;
                let mean = sum(x + 1, y + 1, nw, nh, false) / area;
                let var = sum(x + 1, y + 1, nw, nh, true) / area - mean * mean;
                if var <= 0.0 {
                    continue;
                }
                let std = var.sqrt();
                let passes = cascade.stages.iter().all(|stage| {
                    let total: f64 = stage
                        .weak
                        .iter()
                        .map(|weak| {
                            let r = |v: usize| (v as f64 * scale).round() as usize;
                            let mut rects: Vec<(usize, usize, usize, usize, f64)> = weak
                                .rects
                                .iter()
                                .map(|hr| {
                                    let (rx, ry) = (r(hr.x).min(ww - 1), r(hr.y).min(wh - 1));
                                    (
                                        rx,
                                        ry,
                                        r(hr.w).clamp(1, ww - rx),
                                        r(hr.h).clamp(1, wh - ry),
                                        hr.weight,
                                    )
                                })
                                .collect();
                            if rects.len() > 1 {
                                let rest: f64 =
                                    rects[1..].iter().map(|q| q.4 * (q.2 * q.3) as f64).sum();
                                rects[0].4 = -rest / (rects[0].2 * rects[0].3) as f64;
                            }
                            let value: f64 = rects
                                .iter()
                                .map(|&(rx, ry, rw, rh, wt)| {
                                    wt * sum(x + rx, y + ry, rw, rh, false)
                                })
                                .sum::<f64>()
                                / area;
                            if value < weak.threshold * std {
                                weak.left_value
                            } else {
                                weak.right_value
                            }
                        })
                        .sum();
                    total >= stage.threshold
                });
                if passes {
                    out.push(RawWindow {
                        level,
                        y,
                        x,
                        w: ww,
                        h: wh,
                    });
                }
            }
        }
        level += 1;
    }
    out
}

pub fn two_stage_cascade() -> Cascade {
    let rect = |x, y, w, h, weight| HaarRect { x, y, w, h, weight };
    Cascade {
        window_width: 24,
        window_height: 24,
        stages: vec![
            Stage {
                threshold: 0.5,
                weak: vec![WeakClassifier {
                    // Bright center relative to the whole window.
                    rects: vec![rect(0, 0, 24, 24, -1.0), rect(6, 6, 12, 12, 4.0)],
                    threshold: 0.05,
                    left_value: 0.0,
                    right_value: 1.0,
                }],
            },
            Stage {
                threshold: 0.2,
                weak: vec![
                    WeakClassifier {
                        // Top half brighter than bottom half.
                        rects: vec![rect(0, 12, 24, 12, -1.0), rect(0, 0, 24, 12, 1.0)],
                        threshold: -0.1,
                        left_value: -0.5,
                        right_value: 0.5,
                    },
                    WeakClassifier {
                        rects: vec![rect(3, 3, 18, 18, 1.0)],
                        threshold: 0.2,
                        left_value: 0.0,
                        right_value: 0.3,
                    },
                ],
            },
        ],
    }
}

pub fn tiny_samples(side: usize) -> Vec<Sample> {
    constant_images(side)
        .into_iter()
        .map(|img| Sample {
            input: scale_pixels(&GrayImage::new(side, side, img.pixels).unwrap()),
            label: img.label,
        })
        .collect()
}

pub fn tiny_net() -> Network {
    let desc = Descriptor::from_text(
        "input 8 8 1\nconv k=3 in=1 out=4 stride=1 pad=same l2=0\nbatchnorm c=4 momentum=0.9 eps=0.00001\nrelu\n\
         conv k=1 in=4 out=4 stride=1 pad=same l2=0\ngap\n",
    )
    .unwrap();
    Network::new(&desc, 3).unwrap()
}

pub fn memorize_config() -> TrainConfig {
    TrainConfig {
        epochs: 50,
        batch_size: 4,
        learning_rate: 0.05,
        augmentation: AugmentConfig::none(),
        seed: 9,
        ..TrainConfig::default()
    }
}

/// Bayes' rule in probability space, straight from the smoothed counts.
fn brute_force_posterior(
    x: &[SparseVector],
    y: &[EmotionLabel],
    alpha: f64,
    doc: &[f64],
) -> [f64; NUM_LABELS] {
    let v = doc.len();
    let mut joint = [0.0; NUM_LABELS];
    for (c, slot) in joint.iter_mut().enumerate() {
        let members: Vec<&SparseVector> = x
            .iter()
            .zip(y)
            .filter(|(_, l)| l.index() == c)
            .map(|(d, _)| d)
            .collect();
        let prior = members.len() as f64 / x.len() as f64;
        let total: f64 = members
            .iter()
            .map(|d| d.entries().iter().map(|e| e.1).sum::<f64>())
            .sum();
        let mut p = prior;
        for (j, &count) in doc.iter().enumerate() {
            let fc: f64 = members.iter().map(|d| d.get(j)).sum();
            p *= ((fc + alpha) / (total + alpha * v as f64)).powf(count);
        }
        *slot = p;
    }
    let z: f64 = joint.iter().sum();
    joint.map(|p| p / z)
}

/// 400 random corpora with V <= 5 and 4 <= N <= 10, five query documents
/// each; returns the number of posteriors compared.
pub fn naive_bayes_oracle(seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = 0;
    for _ in 0..400 {
        let v = rng.gen_range(1..=5);
        let n = rng.gen_range(4..=10);
        let alpha = [0.5, 1.0, 2.0][rng.gen_range(0..3)];
        let x: Vec<SparseVector> = (0..n)
            .map(|_| {
                SparseVector::from_dense(
                    &(0..v)
                        .map(|_| rng.gen_range(0..3) as f64)
                        .collect::<Vec<_>>(),
                )
            })
            .collect();
        // Every label present at least once.
        let y: Vec<EmotionLabel> = (0..n)
            .map(|i| {
                if i < 4 {
                    EmotionLabel::ALL[i]
                } else {
                    EmotionLabel::ALL[rng.gen_range(0..4)]
                }
            })
            .collect();
        let model = train_naive_bayes(&x, &y, alpha).map_err(|e| e.to_string())?;
        for _ in 0..5 {
            let doc: Vec<f64> = (0..v).map(|_| rng.gen_range(0..4) as f64).collect();
            let got = model.posterior(&SparseVector::from_dense(&doc));
            let want = brute_force_posterior(&x, &y, alpha, &doc);
            if (0..NUM_LABELS).any(|c| (got[c] - want[c]).abs() > 1e-9) {
                return Err(format!("posterior {got:?} vs brute force {want:?}"));
            }
            cases += 1;
        }
    }
    Ok(cases)
}

/// Logistic and SVM gradients against central differences of the
/// objective on 50 random small instances; returns the number of
/// coordinates compared.
pub fn linear_gradient_oracle(seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    for instance in 0..50 {
        let kind = if instance % 2 == 0 {
            LinearKind::Logistic
        } else {
            LinearKind::Svm
        };
        let dim = rng.gen_range(2..=6);
        let n = rng.gen_range(4..=10);
        let hyper = LinearHyper {
            l2_lambda: rng.gen_range(0.0..0.5),
            ..LinearHyper::default()
        };
        let x: Vec<SparseVector> = (0..n)
            .map(|_| {
                SparseVector::from_dense(
                    &(0..dim)
                        .map(|_| rng.gen_range(-2.0..2.0))
                        .collect::<Vec<_>>(),
                )
            })
            .collect();
        let y: Vec<EmotionLabel> = (0..n)
            .map(|_| EmotionLabel::ALL[rng.gen_range(0..4)])
            .collect();
        let mut model = LinearModel::zeros(kind, dim, hyper);
        model
            .weights
            .iter_mut()
            .for_each(|w| *w = rng.gen_range(-1.0..1.0));
        model
            .bias
            .iter_mut()
            .for_each(|b| *b = rng.gen_range(-1.0..1.0));

        let (gw, gb) = linear_gradient(&model, &x, &y);
        let analytic: Vec<f64> = gw.iter().chain(gb.iter()).copied().collect();
        for (i, &a) in analytic.iter().enumerate() {
            let bump = |m: &mut LinearModel, d: f64| {
                if i < m.weights.len() {
                    m.weights[i] += d;
                } else {
                    m.bias[i - m.weights.len()] += d;
                }
            };
            let mut m = model.clone();
            bump(&mut m, FD_STEP);
            let up = linear_objective(&m, &x, &y);
            bump(&mut m, -2.0 * FD_STEP);
            let down = linear_objective(&m, &x, &y);
            let numeric = (up - down) / (2.0 * FD_STEP);
            if !close(a, numeric) {
                return Err(format!(
                    "instance {instance} {kind:?} coordinate {i}: analytic {a} numeric {numeric}"
                ));
            }
            checked += 1;
        }
    }
    Ok(checked)
}
