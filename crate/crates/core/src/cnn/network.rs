//! Architecture descriptors, network construction and the loss head.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{
    out_dim, run_backward, run_eval, run_train, BatchNorm, Conv2d, Layer, MaxPool, Padding, Param,
    SepConv2d,
};
use super::Tensor;
use crate::label::NUM_LABELS;
use crate::{EmotionLabel, Error, Result};

pub const BN_MOMENTUM: f64 = 0.99;
pub const BN_EPSILON: f64 = 1e-5;

/// Parameter-free description of one layer.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv {
        k: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        padding: Padding,
        l2: f64,
    },
    SepConv {
        k: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        padding: Padding,
        l2: f64,
    },
    BatchNorm {
        channels: usize,
        momentum: f64,
        eps: f64,
    },
    Relu,
    MaxPool {
        k: usize,
        stride: usize,
        padding: Padding,
    },
    GlobalAvgPool,
    Residual {
        skip: Vec<LayerSpec>,
        main: Vec<LayerSpec>,
    },
}

impl LayerSpec {
    pub fn batch_norm(channels: usize) -> Self {
        LayerSpec::BatchNorm {
            channels,
            momentum: BN_MOMENTUM,
            eps: BN_EPSILON,
        }
    }
}

/// Input geometry plus the layer list. Has a line-oriented text form:
///
/// ```text
/// input 48 48 1
/// conv k=3 in=1 out=4 stride=1 pad=same l2=0.01
/// batchnorm c=4 momentum=0.99 eps=0.00001
/// relu
/// residual
///   conv k=1 in=4 out=8 stride=2 pad=same l2=0.01
/// branch
///   sepconv k=3 in=4 out=8 stride=1 pad=same l2=0.01
///   maxpool k=3 stride=2 pad=same
/// end
/// gap
/// ```
///
/// Inside `residual`, layers before `branch` form the skip path and the
/// rest the main path.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    /// `(height, width, channels)`
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

impl Descriptor {
    /// Output shape for the declared input; errors name the offending layer.
    pub fn output_shape(&self) -> Result<Vec<usize>> {
        let [h, w, c] = self.input;
        infer(&self.layers, vec![h, w, c], "")
    }

    /// The shape check plus the requirement of a `(4,)` class-score output.
    pub fn validate(&self) -> Result<()> {
        let out = self.output_shape()?;
        if out != [NUM_LABELS] {
            return Err(Error::Shape {
                layer: "output".into(),
                reason: format!(
                    "network must end in {NUM_LABELS} pooled class scores, got shape {out:?}"
                ),
            });
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "input {} {} {}\n",
            self.input[0], self.input[1], self.input[2]
        );
        write_specs(&mut out, &self.layers, 0);
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let (n, first) = lines
            .next()
            .ok_or_else(|| Error::Parse("empty architecture descriptor".into()))?;
        let dims: Vec<&str> = first.split_whitespace().collect();
        let input = match dims[..] {
            ["input", h, w, c] => [num(n, h)?, num(n, w)?, num(n, c)?],
            _ => return Err(Error::Parse(format!("line {n}: expected `input H W C`"))),
        };
        let mut stack: Vec<(Vec<LayerSpec>, Option<Vec<LayerSpec>>)> = Vec::new();
        let mut current: Vec<LayerSpec> = Vec::new();
        for (n, line) in lines {
            let mut words = line.split_whitespace();
            let kind = words.next().unwrap_or_default();
            let kv = |key: &str| -> Result<&str> {
                line.split_whitespace()
                    .skip(1)
                    .find_map(|t| t.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                    .ok_or_else(|| Error::Parse(format!("line {n}: `{kind}` needs {key}=")))
            };
            let pad = |v: &str| match v {
                "same" => Ok(Padding::Same),
                "valid" => Ok(Padding::Valid),
                _ => Err(Error::Parse(format!(
                    "line {n}: padding must be same or valid"
                ))),
            };
            let spec = match kind {
                "conv" | "sepconv" => {
                    let (k, cin, cout) =
                        (num(n, kv("k")?)?, num(n, kv("in")?)?, num(n, kv("out")?)?);
                    let (stride, padding, l2) = (
                        num(n, kv("stride")?)?,
                        pad(kv("pad")?)?,
                        real(n, kv("l2")?)?,
                    );
                    if kind == "conv" {
                        LayerSpec::Conv {
                            k,
                            cin,
                            cout,
                            stride,
                            padding,
                            l2,
                        }
                    } else {
                        LayerSpec::SepConv {
                            k,
                            cin,
                            cout,
                            stride,
                            padding,
                            l2,
                        }
                    }
                }
                "batchnorm" => LayerSpec::BatchNorm {
                    channels: num(n, kv("c")?)?,
                    momentum: real(n, kv("momentum")?)?,
                    eps: real(n, kv("eps")?)?,
                },
                "relu" => LayerSpec::Relu,
                "maxpool" => LayerSpec::MaxPool {
                    k: num(n, kv("k")?)?,
                    stride: num(n, kv("stride")?)?,
                    padding: pad(kv("pad")?)?,
                },
                "gap" => LayerSpec::GlobalAvgPool,
                "residual" => {
                    stack.push((std::mem::take(&mut current), None));
                    continue;
                }
                "branch" => {
                    match stack.last_mut() {
                        Some((_, skip @ None)) => *skip = Some(std::mem::take(&mut current)),
                        _ => {
                            return Err(Error::Parse(format!(
                                "line {n}: `branch` outside a residual block"
                            )))
                        }
                    }
                    continue;
                }
                "end" => {
                    let (outer, skip) = stack.pop().ok_or_else(|| {
                        Error::Parse(format!("line {n}: `end` without `residual`"))
                    })?;
                    let skip = skip.ok_or_else(|| {
                        Error::Parse(format!("line {n}: residual block lacks `branch`"))
                    })?;
                    let main = std::mem::replace(&mut current, outer);
                    LayerSpec::Residual { skip, main }
                }
                other => return Err(Error::Parse(format!("line {n}: unknown layer `{other}`"))),
            };
            current.push(spec);
        }
        if !stack.is_empty() {
            return Err(Error::Parse("unterminated residual block".into()));
        }
        Ok(Descriptor {
            input,
            layers: current,
        })
    }
}

fn num(line: usize, s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::Parse(format!("line {line}: `{s}` is not a non-negative integer")))
}

fn real(line: usize, s: &str) -> Result<f64> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
        _ => Err(Error::Parse(format!(
            "line {line}: `{s}` is not a non-negative number"
        ))),
    }
}

fn write_specs(out: &mut String, specs: &[LayerSpec], depth: usize) {
    let pad = "  ".repeat(depth);
    for s in specs {
        match s {
            LayerSpec::Conv {
                k,
                cin,
                cout,
                stride,
                padding,
                l2,
            } => {
                let _ = writeln!(
                    out,
                    "{pad}conv k={k} in={cin} out={cout} stride={stride} pad={} l2={l2}",
                    padding.name()
                );
            }
            LayerSpec::SepConv {
                k,
                cin,
                cout,
                stride,
                padding,
                l2,
            } => {
                let _ = writeln!(
                    out,
                    "{pad}sepconv k={k} in={cin} out={cout} stride={stride} pad={} l2={l2}",
                    padding.name()
                );
            }
            LayerSpec::BatchNorm {
                channels,
                momentum,
                eps,
            } => {
                let _ = writeln!(
                    out,
                    "{pad}batchnorm c={channels} momentum={momentum} eps={eps}"
                );
            }
            LayerSpec::Relu => {
                let _ = writeln!(out, "{pad}relu");
            }
            LayerSpec::MaxPool { k, stride, padding } => {
                let _ = writeln!(
                    out,
                    "{pad}maxpool k={k} stride={stride} pad={}",
                    padding.name()
                );
            }
            LayerSpec::GlobalAvgPool => {
                let _ = writeln!(out, "{pad}gap");
            }
            LayerSpec::Residual { skip, main } => {
                let _ = writeln!(out, "{pad}residual");
                write_specs(out, skip, depth + 1);
                let _ = writeln!(out, "{pad}branch");
                write_specs(out, main, depth + 1);
                let _ = writeln!(out, "{pad}end");
            }
        }
    }
}

fn infer(specs: &[LayerSpec], mut shape: Vec<usize>, prefix: &str) -> Result<Vec<usize>> {
    for (i, s) in specs.iter().enumerate() {
        let err = |kind: &str, reason: String| Error::Shape {
            layer: format!("{kind} at layer {prefix}{i}"),
            reason,
        };
        let spatial = |kind: &str, shape: &[usize], k: usize, stride: usize, padding: Padding| {
            if shape.len() != 3 {
                return Err(err(
                    kind,
                    format!("expected a feature map, got shape {shape:?}"),
                ));
            }
            if k == 0 || stride == 0 {
                return Err(err(kind, "kernel size and stride must be positive".into()));
            }
            let small = || {
                err(
                    kind,
                    format!("{}x{} input is smaller than the kernel", shape[0], shape[1]),
                )
            };
            let (oh, _) = out_dim(shape[0], k, stride, padding).ok_or_else(small)?;
            let (ow, _) = out_dim(shape[1], k, stride, padding).ok_or_else(small)?;
            Ok((oh, ow))
        };
        shape = match s {
            LayerSpec::Conv {
                k,
                cin,
                cout,
                stride,
                padding,
                ..
            }
            | LayerSpec::SepConv {
                k,
                cin,
                cout,
                stride,
                padding,
                ..
            } => {
                let kind = if matches!(s, LayerSpec::Conv { .. }) {
                    "conv"
                } else {
                    "sepconv"
                };
                let (oh, ow) = spatial(kind, &shape, *k, *stride, *padding)?;
                if shape[2] != *cin {
                    return Err(err(
                        kind,
                        format!("expected {cin} input channels, got {}", shape[2]),
                    ));
                }
                if *cout == 0 {
                    return Err(err(kind, "zero output channels".into()));
                }
                vec![oh, ow, *cout]
            }
            LayerSpec::BatchNorm { channels, .. } => {
                if shape.last() != Some(channels) {
                    return Err(err(
                        "batchnorm",
                        format!("expected {channels} channels, got shape {shape:?}"),
                    ));
                }
                shape
            }
            LayerSpec::Relu => shape,
            LayerSpec::MaxPool { k, stride, padding } => {
                let (oh, ow) = spatial("maxpool", &shape, *k, *stride, *padding)?;
                vec![oh, ow, shape[2]]
            }
            LayerSpec::GlobalAvgPool => {
                if shape.len() != 3 {
                    return Err(err(
                        "gap",
                        format!("expected a feature map, got shape {shape:?}"),
                    ));
                }
                vec![shape[2]]
            }
            LayerSpec::Residual { skip, main } => {
                let a = infer(skip, shape.clone(), &format!("{prefix}{i}.skip."))?;
                let b = infer(main, shape, &format!("{prefix}{i}.main."))?;
                if a != b {
                    return Err(err(
                        "residual",
                        format!("skip path gives {a:?} but main path gives {b:?}"),
                    ));
                }
                a
            }
        };
    }
    Ok(shape)
}

/// Rounds through `f32`, the precision of the weight file.
pub(crate) fn to_f32_precision(values: &mut [f64]) {
    for v in values {
        *v = *v as f32 as f64;
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    to_f32_precision(&mut v);
    v
}

fn build(spec: &LayerSpec, rng: &mut ChaCha8Rng) -> Layer {
    match *spec {
        LayerSpec::Conv {
            k,
            cin,
            cout,
            stride,
            padding,
            l2,
        } => {
            let mut l = Conv2d::zeros(k, cin, cout, stride, padding, l2);
            l.kernel = uniform(rng, l.kernel.len(), k * k * cin);
            Layer::Conv(l)
        }
        LayerSpec::SepConv {
            k,
            cin,
            cout,
            stride,
            padding,
            l2,
        } => {
            let mut l = SepConv2d::zeros(k, cin, cout, stride, padding, l2);
            l.depthwise = uniform(rng, l.depthwise.len(), k * k);
            l.pointwise = uniform(rng, l.pointwise.len(), cin);
            Layer::SepConv(l)
        }
        LayerSpec::BatchNorm {
            channels,
            momentum,
            eps,
        } => Layer::BatchNorm(BatchNorm::new(channels, momentum, eps)),
        LayerSpec::Relu => Layer::Relu(None),
        LayerSpec::MaxPool { k, stride, padding } => {
            Layer::MaxPool(MaxPool::new(k, stride, padding))
        }
        LayerSpec::GlobalAvgPool => Layer::GlobalAvgPool(None),
        LayerSpec::Residual { ref skip, ref main } => Layer::Residual {
            skip: skip.iter().map(|s| build(s, rng)).collect(),
            main: main.iter().map(|s| build(s, rng)).collect(),
        },
    }
}

fn spec_of(layer: &Layer) -> LayerSpec {
    match layer {
        Layer::Conv(l) => LayerSpec::Conv {
            k: l.k,
            cin: l.cin,
            cout: l.cout,
            stride: l.stride,
            padding: l.padding,
            l2: l.l2,
        },
        Layer::SepConv(l) => LayerSpec::SepConv {
            k: l.k,
            cin: l.cin,
            cout: l.cout,
            stride: l.stride,
            padding: l.padding,
            l2: l.l2,
        },
        Layer::BatchNorm(l) => LayerSpec::BatchNorm {
            channels: l.channels,
            momentum: l.momentum,
            eps: l.eps,
        },
        Layer::Relu(_) => LayerSpec::Relu,
        Layer::MaxPool(l) => LayerSpec::MaxPool {
            k: l.k,
            stride: l.stride,
            padding: l.padding,
        },
        Layer::GlobalAvgPool(_) => LayerSpec::GlobalAvgPool,
        Layer::Residual { skip, main } => LayerSpec::Residual {
            skip: skip.iter().map(spec_of).collect(),
            main: main.iter().map(spec_of).collect(),
        },
    }
}

/// Row-wise softmax of `(n, k)` logits with the max subtracted first.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let k = *logits.shape().last().unwrap_or(&1);
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(k) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    out
}

/// Mean negative log-likelihood and the probabilities. The loss uses the
/// log-sum-exp form so extreme logits neither overflow nor give `ln 0`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[EmotionLabel]) -> Result<(f64, Tensor)> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[1] != NUM_LABELS || shape[0] != labels.len() || labels.is_empty() {
        return Err(Error::Shape {
            layer: "softmax".into(),
            reason: format!("logits {shape:?} do not match {} labels", labels.len()),
        });
    }
    let mut loss = 0.0;
    for (row, y) in logits.data().chunks_exact(NUM_LABELS).zip(labels) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[y.index()];
    }
    Ok((loss / labels.len() as f64, softmax_rows(logits)))
}

/// Gradient of the mean cross-entropy with respect to the logits.
pub fn softmax_cross_entropy_grad(probs: &Tensor, labels: &[EmotionLabel]) -> Tensor {
    let mut g = probs.clone();
    let n = labels.len() as f64;
    for (row, y) in g.data_mut().chunks_exact_mut(NUM_LABELS).zip(labels) {
        row[y.index()] -= 1.0;
        row.iter_mut().for_each(|v| *v /= n);
    }
    g
}

/// Result of one training forward/backward pass.
#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub data_loss: f64,
    pub total_loss: f64,
    pub probs: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input: [usize; 3],
    layers: Vec<Layer>,
}

impl Network {
    /// Builds and initializes a network: fan-in scaled uniform kernels,
    /// zero biases, `gamma = 1`, `beta = 0`.
    pub fn new(descriptor: &Descriptor, seed: u64) -> Result<Self> {
        descriptor.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Network {
            input: descriptor.input,
            layers: descriptor
                .layers
                .iter()
                .map(|s| build(s, &mut rng))
                .collect(),
        })
    }

    pub fn descriptor(&self) -> Descriptor {
        Descriptor {
            input: self.input,
            layers: self.layers.iter().map(spec_of).collect(),
        }
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Inference-mode logits for an NHWC batch. Does not touch any state.
    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        run_eval(&self.layers, x, "")
    }

    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        Ok(softmax_rows(&self.forward_eval(x)?))
    }

    /// Training-mode forward pass: batch statistics, caches for backward,
    /// running statistics updated.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        run_train(&mut self.layers, x, "")
    }

    /// Backpropagates `grad` (d loss / d logits), accumulating parameter
    /// gradients, and returns d loss / d input.
    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        run_backward(&mut self.layers, grad, "")
    }

    pub fn params_mut(&mut self, f: &mut dyn FnMut(Param<'_>)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.params_mut(&i.to_string(), f);
        }
    }

    pub fn state(&self, f: &mut dyn FnMut(String, Vec<usize>, &[f64])) {
        for (i, l) in self.layers.iter().enumerate() {
            l.state(&i.to_string(), f);
        }
    }

    pub fn state_mut(&mut self, f: &mut dyn FnMut(String, Vec<usize>, &mut [f64])) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.state_mut(&i.to_string(), f);
        }
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.state(&mut |name, _, v| {
            if !name.ends_with("running_mean") && !name.ends_with("running_var") {
                n += v.len();
            }
        });
        n
    }

    pub fn zero_grads(&mut self) {
        self.params_mut(&mut |p| p.grad.iter_mut().for_each(|g| *g = 0.0));
    }

    /// `Σ l2 · ‖kernel‖²` over all regularized kernels.
    pub fn regularization(&mut self) -> f64 {
        let mut total = 0.0;
        self.params_mut(&mut |p| {
            if p.l2 > 0.0 {
                total += p.l2 * p.value.iter().map(|v| v * v).sum::<f64>();
            }
        });
        total
    }

    /// One full training pass on a batch: zeroes gradients, runs forward
    /// and backward, and adds the kernel penalty gradient `2·l2·K`.
    pub fn train_batch(&mut self, x: &Tensor, labels: &[EmotionLabel]) -> Result<BatchLoss> {
        self.zero_grads();
        let logits = self.forward_train(x)?;
        let (data_loss, probs) = softmax_cross_entropy(&logits, labels)?;
        self.backward(&softmax_cross_entropy_grad(&probs, labels))?;
        let mut reg = 0.0;
        self.params_mut(&mut |p| {
            if p.l2 > 0.0 {
                for (g, v) in p.grad.iter_mut().zip(p.value.iter()) {
                    *g += 2.0 * p.l2 * v;
                    reg += p.l2 * v * v;
                }
            }
        });
        Ok(BatchLoss {
            data_loss,
            total_loss: data_loss + reg,
            probs,
        })
    }

    /// Rounds every persisted value to `f32` precision so a saved and
    /// reloaded network computes bit-identical outputs.
    pub fn round_to_f32(&mut self) {
        self.state_mut(&mut |_, _, v| to_f32_precision(v));
    }
}

/// The reduced miniXception topology: a two-conv entry block, four
/// residual modules of separable convolutions with strided 1×1 shortcuts,
/// and a final convolution to four channels followed by global average
/// pooling. `width` scales every channel count (1.0 gives 8/16/32/64/128).
pub fn mini_xception(input: [usize; 3], width: f64, l2: f64) -> Descriptor {
    let ch = |base: usize| ((base as f64 * width).round() as usize).max(1);
    let conv = |k, cin, cout, stride| LayerSpec::Conv {
        k,
        cin,
        cout,
        stride,
        padding: Padding::Same,
        l2,
    };
    let sep = |cin, cout| LayerSpec::SepConv {
        k: 3,
        cin,
        cout,
        stride: 1,
        padding: Padding::Same,
        l2,
    };
    let entry = ch(8);
    let mut layers = vec![
        conv(3, input[2], entry, 1),
        LayerSpec::batch_norm(entry),
        LayerSpec::Relu,
        conv(3, entry, entry, 1),
        LayerSpec::batch_norm(entry),
        LayerSpec::Relu,
    ];
    let mut cin = entry;
    for base in [16, 32, 64, 128] {
        let cout = ch(base);
        layers.push(LayerSpec::Residual {
            skip: vec![conv(1, cin, cout, 2), LayerSpec::batch_norm(cout)],
            main: vec![
                sep(cin, cout),
                LayerSpec::batch_norm(cout),
                LayerSpec::Relu,
                sep(cout, cout),
                LayerSpec::batch_norm(cout),
                LayerSpec::MaxPool {
                    k: 3,
                    stride: 2,
                    padding: Padding::Same,
                },
            ],
        });
        cin = cout;
    }
    layers.push(conv(3, cin, NUM_LABELS, 1));
    layers.push(LayerSpec::GlobalAvgPool);
    Descriptor { input, layers }
}
