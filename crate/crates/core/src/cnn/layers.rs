//! Layer implementations. Every layer has a pure `forward_eval`, a caching
//! `forward_train`, and a `backward` that accumulates parameter gradients
//! and returns the gradient with respect to its input.

use super::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

impl Padding {
    pub fn name(self) -> &'static str {
        match self {
            Padding::Same => "same",
            Padding::Valid => "valid",
        }
    }
}

/// Output length and leading pad along one spatial axis.
/// `Same` follows the usual convention: `ceil(n / stride)` outputs with
/// the odd pad pixel at the end.
pub fn out_dim(input: usize, k: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    match padding {
        Padding::Valid => (input >= k).then(|| ((input - k) / stride + 1, 0)),
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(input);
            (input > 0).then_some((out, total / 2))
        }
    }
}

fn shape_err(layer: &str, reason: impl Into<String>) -> Error {
    Error::Shape {
        layer: layer.to_string(),
        reason: reason.into(),
    }
}

fn rank4(x: &Tensor, layer: &str, channels: usize) -> Result<(usize, usize, usize, usize)> {
    let (n, h, w, c) = x.dims4().ok_or_else(|| {
        shape_err(
            layer,
            format!("expected NHWC input, got shape {:?}", x.shape()),
        )
    })?;
    if c != channels {
        return Err(shape_err(
            layer,
            format!("expected {channels} input channels, got {c}"),
        ));
    }
    Ok((n, h, w, c))
}

/// Geometry shared by convolution-like layers.
#[derive(Debug, Clone, Copy)]
struct Window {
    n: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    ph: usize,
    pw: usize,
    k: usize,
    stride: usize,
}

impl Window {
    fn new(
        layer: &str,
        dims: (usize, usize, usize, usize),
        k: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        let (n, h, w, _) = dims;
        let too_small = || {
            shape_err(
                layer,
                format!("{h}x{w} input is smaller than the {k}x{k} kernel"),
            )
        };
        let (oh, ph) = out_dim(h, k, stride, padding).ok_or_else(too_small)?;
        let (ow, pw) = out_dim(w, k, stride, padding).ok_or_else(too_small)?;
        Ok(Window {
            n,
            h,
            w,
            oh,
            ow,
            ph,
            pw,
            k,
            stride,
        })
    }

    /// Calls `f(out_index, in_index, tap)` for every valid kernel tap, where
    /// indices are pixel offsets (not yet multiplied by channels).
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        for b in 0..self.n {
            for oy in 0..self.oh {
                for ox in 0..self.ow {
                    let o = (b * self.oh + oy) * self.ow + ox;
                    for ky in 0..self.k {
                        let iy = (oy * self.stride + ky) as isize - self.ph as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        for kx in 0..self.k {
                            let ix = (ox * self.stride + kx) as isize - self.pw as isize;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            let i = (b * self.h + iy as usize) * self.w + ix as usize;
                            f(o, i, ky * self.k + kx);
                        }
                    }
                }
            }
        }
    }

    fn out_shape(&self, c: usize) -> Vec<usize> {
        vec![self.n, self.oh, self.ow, c]
    }
}

fn conv_forward(
    x: &Tensor,
    win: &Window,
    cin: usize,
    cout: usize,
    kernel: &[f64],
    bias: Option<&[f64]>,
) -> Tensor {
    let mut out = vec![0.0; win.n * win.oh * win.ow * cout];
    if let Some(bias) = bias {
        for o in out.chunks_exact_mut(cout) {
            o.copy_from_slice(bias);
        }
    }
    let xd = x.data();
    win.for_each_tap(|o, i, tap| {
        let xs = &xd[i * cin..(i + 1) * cin];
        let os = &mut out[o * cout..(o + 1) * cout];
        let kt = &kernel[tap * cin * cout..(tap + 1) * cin * cout];
        for (ci, &xv) in xs.iter().enumerate() {
            let kr = &kt[ci * cout..(ci + 1) * cout];
            for (ov, &kv) in os.iter_mut().zip(kr) {
                *ov += xv * kv;
            }
        }
    });
    Tensor::new(win.out_shape(cout), out).expect("conv output shape")
}

/// Accumulates into `dk` and returns the input gradient.
fn conv_backward(
    x: &Tensor,
    grad: &Tensor,
    win: &Window,
    cin: usize,
    cout: usize,
    kernel: &[f64],
    dk: &mut [f64],
) -> Tensor {
    let mut dx = vec![0.0; x.len()];
    let xd = x.data();
    let gd = grad.data();
    win.for_each_tap(|o, i, tap| {
        let g = &gd[o * cout..(o + 1) * cout];
        let xs = &xd[i * cin..(i + 1) * cin];
        let dxs = &mut dx[i * cin..(i + 1) * cin];
        let base = tap * cin * cout;
        for ci in 0..cin {
            let kr = &kernel[base + ci * cout..base + (ci + 1) * cout];
            let dkr = &mut dk[base + ci * cout..base + (ci + 1) * cout];
            let xv = xs[ci];
            let mut acc = 0.0;
            for co in 0..cout {
                dkr[co] += xv * g[co];
                acc += kr[co] * g[co];
            }
            dxs[ci] += acc;
        }
    });
    Tensor::new(x.shape().to_vec(), dx).expect("conv input-grad shape")
}

fn bias_backward(grad: &Tensor, db: &mut [f64]) {
    for g in grad.data().chunks_exact(db.len()) {
        for (d, &v) in db.iter_mut().zip(g) {
            *d += v;
        }
    }
}

fn depthwise_forward(x: &Tensor, win: &Window, c: usize, dw: &[f64]) -> Tensor {
    let mut out = vec![0.0; win.n * win.oh * win.ow * c];
    let xd = x.data();
    win.for_each_tap(|o, i, tap| {
        let xs = &xd[i * c..(i + 1) * c];
        let ds = &dw[tap * c..(tap + 1) * c];
        for ((ov, &xv), &dv) in out[o * c..(o + 1) * c].iter_mut().zip(xs).zip(ds) {
            *ov += xv * dv;
        }
    });
    Tensor::new(win.out_shape(c), out).expect("depthwise output shape")
}

fn depthwise_backward(
    x: &Tensor,
    grad: &Tensor,
    win: &Window,
    c: usize,
    dw: &[f64],
    ddw: &mut [f64],
) -> Tensor {
    let mut dx = vec![0.0; x.len()];
    let xd = x.data();
    let gd = grad.data();
    win.for_each_tap(|o, i, tap| {
        let g = &gd[o * c..(o + 1) * c];
        for ch in 0..c {
            ddw[tap * c + ch] += xd[i * c + ch] * g[ch];
            dx[i * c + ch] += dw[tap * c + ch] * g[ch];
        }
    });
    Tensor::new(x.shape().to_vec(), dx).expect("depthwise input-grad shape")
}

/// Standard convolution (cross-correlation) with bias.
/// Kernel layout: `[ky][kx][cin][cout]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub k: usize,
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
    pub padding: Padding,
    pub l2: f64,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
    pub(crate) kernel_grad: Vec<f64>,
    pub(crate) bias_grad: Vec<f64>,
    cache: Option<Tensor>,
}

impl Conv2d {
    pub fn zeros(
        k: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        padding: Padding,
        l2: f64,
    ) -> Self {
        Conv2d {
            k,
            cin,
            cout,
            stride,
            padding,
            l2,
            kernel: vec![0.0; k * k * cin * cout],
            bias: vec![0.0; cout],
            kernel_grad: vec![0.0; k * k * cin * cout],
            bias_grad: vec![0.0; cout],
            cache: None,
        }
    }

    pub fn param_count(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }

    fn window(&self, x: &Tensor) -> Result<Window> {
        let dims = rank4(x, "conv", self.cin)?;
        Window::new("conv", dims, self.k, self.stride, self.padding)
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        let win = self.window(x)?;
        Ok(conv_forward(
            x,
            &win,
            self.cin,
            self.cout,
            &self.kernel,
            Some(&self.bias),
        ))
    }

    fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = self.forward_eval(x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let x = self.cache.take().ok_or_else(|| no_cache("conv"))?;
        let win = self.window(&x)?;
        bias_backward(grad, &mut self.bias_grad);
        Ok(conv_backward(
            &x,
            grad,
            &win,
            self.cin,
            self.cout,
            &self.kernel,
            &mut self.kernel_grad,
        ))
    }
}

/// Depthwise `k×k` convolution per channel followed by a pointwise `1×1`
/// channel mix with bias.
#[derive(Debug, Clone, PartialEq)]
pub struct SepConv2d {
    pub k: usize,
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
    pub padding: Padding,
    pub l2: f64,
    /// `[ky][kx][cin]`
    pub depthwise: Vec<f64>,
    /// `[cin][cout]`
    pub pointwise: Vec<f64>,
    pub bias: Vec<f64>,
    pub(crate) depthwise_grad: Vec<f64>,
    pub(crate) pointwise_grad: Vec<f64>,
    pub(crate) bias_grad: Vec<f64>,
    cache: Option<(Tensor, Tensor)>,
}

impl SepConv2d {
    pub fn zeros(
        k: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        padding: Padding,
        l2: f64,
    ) -> Self {
        let layer = SepConv2d {
            k,
            cin,
            cout,
            stride,
            padding,
            l2,
            depthwise: vec![0.0; k * k * cin],
            pointwise: vec![0.0; cin * cout],
            bias: vec![0.0; cout],
            depthwise_grad: vec![0.0; k * k * cin],
            pointwise_grad: vec![0.0; cin * cout],
            bias_grad: vec![0.0; cout],
            cache: None,
        };
        if k > 1 && cout > 1 {
            assert!(
                layer.weight_count() < k * k * cin * cout,
                "separable convolution must be cheaper than the full one"
            );
        }
        layer
    }

    /// Kernel weights only: `k·k·cin + cin·cout`.
    pub fn weight_count(&self) -> usize {
        self.depthwise.len() + self.pointwise.len()
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + self.bias.len()
    }

    fn windows(&self, x: &Tensor) -> Result<(Window, Window)> {
        let dims = rank4(x, "sepconv", self.cin)?;
        let dw = Window::new("sepconv", dims, self.k, self.stride, self.padding)?;
        let pw = Window::new(
            "sepconv",
            (dw.n, dw.oh, dw.ow, self.cin),
            1,
            1,
            Padding::Valid,
        )?;
        Ok((dw, pw))
    }

    fn forward_parts(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let (dw, pw) = self.windows(x)?;
        let mid = depthwise_forward(x, &dw, self.cin, &self.depthwise);
        let out = conv_forward(
            &mid,
            &pw,
            self.cin,
            self.cout,
            &self.pointwise,
            Some(&self.bias),
        );
        Ok((mid, out))
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_parts(x)?.1)
    }

    fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let (mid, out) = self.forward_parts(x)?;
        self.cache = Some((x.clone(), mid));
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let (x, mid) = self.cache.take().ok_or_else(|| no_cache("sepconv"))?;
        let (dw, pw) = self.windows(&x)?;
        bias_backward(grad, &mut self.bias_grad);
        let dmid = conv_backward(
            &mid,
            grad,
            &pw,
            self.cin,
            self.cout,
            &self.pointwise,
            &mut self.pointwise_grad,
        );
        Ok(depthwise_backward(
            &x,
            &dmid,
            &dw,
            self.cin,
            &self.depthwise,
            &mut self.depthwise_grad,
        ))
    }
}

/// Per-channel batch normalization over every axis but the last.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub channels: usize,
    pub momentum: f64,
    pub eps: f64,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub(crate) gamma_grad: Vec<f64>,
    pub(crate) beta_grad: Vec<f64>,
    cache: Option<(Vec<f64>, Vec<f64>)>,
}

impl BatchNorm {
    pub fn new(channels: usize, momentum: f64, eps: f64) -> Self {
        BatchNorm {
            channels,
            momentum,
            eps,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            gamma_grad: vec![0.0; channels],
            beta_grad: vec![0.0; channels],
            cache: None,
        }
    }

    fn check(&self, x: &Tensor) -> Result<usize> {
        let c = *x.shape().last().unwrap_or(&0);
        if c != self.channels {
            return Err(shape_err(
                "batchnorm",
                format!("expected {} channels, got {c}", self.channels),
            ));
        }
        Ok(x.len() / c)
    }

    /// Affine map using the running statistics.
    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let c = self.channels;
        let scale: Vec<f64> = (0..c)
            .map(|i| self.gamma[i] / (self.running_var[i] + self.eps).sqrt())
            .collect();
        let mut out = x.clone();
        for row in out.data_mut().chunks_exact_mut(c) {
            for i in 0..c {
                row[i] = (row[i] - self.running_mean[i]) * scale[i] + self.beta[i];
            }
        }
        Ok(out)
    }

    fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let m = self.check(x)?;
        if m == 0 {
            return Err(shape_err("batchnorm", "empty batch in training mode"));
        }
        let c = self.channels;
        let mut mean = vec![0.0; c];
        for row in x.data().chunks_exact(c) {
            for i in 0..c {
                mean[i] += row[i];
            }
        }
        mean.iter_mut().for_each(|v| *v /= m as f64);
        let mut var = vec![0.0; c];
        for row in x.data().chunks_exact(c) {
            for i in 0..c {
                let d = row[i] - mean[i];
                var[i] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= m as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = x.data().to_vec();
        for row in xhat.chunks_exact_mut(c) {
            for i in 0..c {
                row[i] = (row[i] - mean[i]) * inv_std[i];
            }
        }
        let mut out = xhat.clone();
        for row in out.chunks_exact_mut(c) {
            for i in 0..c {
                row[i] = self.gamma[i] * row[i] + self.beta[i];
            }
        }
        for i in 0..c {
            self.running_mean[i] =
                self.momentum * self.running_mean[i] + (1.0 - self.momentum) * mean[i];
            self.running_var[i] =
                self.momentum * self.running_var[i] + (1.0 - self.momentum) * var[i];
        }
        self.cache = Some((xhat, inv_std));
        Tensor::new(x.shape().to_vec(), out)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let (xhat, inv_std) = self.cache.take().ok_or_else(|| no_cache("batchnorm"))?;
        let c = self.channels;
        let m = (grad.len() / c) as f64;
        let mut sum_g = vec![0.0; c];
        let mut sum_gx = vec![0.0; c];
        for (g, xh) in grad.data().chunks_exact(c).zip(xhat.chunks_exact(c)) {
            for i in 0..c {
                sum_g[i] += g[i];
                sum_gx[i] += g[i] * xh[i];
            }
        }
        for i in 0..c {
            self.gamma_grad[i] += sum_gx[i];
            self.beta_grad[i] += sum_g[i];
        }
        let mut dx = grad.data().to_vec();
        for (d, xh) in dx.chunks_exact_mut(c).zip(xhat.chunks_exact(c)) {
            for i in 0..c {
                d[i] = self.gamma[i] * inv_std[i] / m * (m * d[i] - sum_g[i] - xh[i] * sum_gx[i]);
            }
        }
        Tensor::new(grad.shape().to_vec(), dx)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxPool {
    pub k: usize,
    pub stride: usize,
    pub padding: Padding,
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool {
    pub fn new(k: usize, stride: usize, padding: Padding) -> Self {
        MaxPool {
            k,
            stride,
            padding,
            cache: None,
        }
    }

    /// Output and, per output value, the flat input index it came from.
    fn pool(&self, x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
        let dims = x.dims4().ok_or_else(|| {
            shape_err(
                "maxpool",
                format!("expected NHWC input, got {:?}", x.shape()),
            )
        })?;
        let c = dims.3;
        let win = Window::new("maxpool", dims, self.k, self.stride, self.padding)?;
        let len = win.n * win.oh * win.ow * c;
        let mut out = vec![f64::NEG_INFINITY; len];
        let mut arg = vec![usize::MAX; len];
        let xd = x.data();
        win.for_each_tap(|o, i, _| {
            for ch in 0..c {
                let v = xd[i * c + ch];
                if v > out[o * c + ch] || arg[o * c + ch] == usize::MAX {
                    out[o * c + ch] = v;
                    arg[o * c + ch] = i * c + ch;
                }
            }
        });
        Ok((Tensor::new(win.out_shape(c), out)?, arg))
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.pool(x)?.0)
    }

    fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let (y, arg) = self.pool(x)?;
        self.cache = Some((arg, x.shape().to_vec()));
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let (arg, shape) = self.cache.take().ok_or_else(|| no_cache("maxpool"))?;
        let mut dx = Tensor::zeros(shape);
        let d = dx.data_mut();
        for (&i, &g) in arg.iter().zip(grad.data()) {
            d[i] += g;
        }
        Ok(dx)
    }
}

fn no_cache(layer: &str) -> Error {
    shape_err(
        layer,
        "backward called without a preceding training forward pass",
    )
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(Conv2d),
    SepConv(SepConv2d),
    BatchNorm(BatchNorm),
    Relu(Option<Vec<bool>>),
    MaxPool(MaxPool),
    GlobalAvgPool(Option<Vec<usize>>),
    /// `skip(x) + main(x)`; an empty skip path is the identity.
    Residual {
        skip: Vec<Layer>,
        main: Vec<Layer>,
    },
}

/// Trainable parameter handle handed to optimizers and gradient checks.
pub struct Param<'a> {
    pub name: String,
    pub value: &'a mut [f64],
    pub grad: &'a mut [f64],
    /// Coefficient of the `l2·‖value‖²` penalty; zero for non-kernels.
    pub l2: f64,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::SepConv(_) => "sepconv",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Relu(_) => "relu",
            Layer::MaxPool(_) => "maxpool",
            Layer::GlobalAvgPool(_) => "gap",
            Layer::Residual { .. } => "residual",
        }
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv(l) => l.forward_eval(x),
            Layer::SepConv(l) => l.forward_eval(x),
            Layer::BatchNorm(l) => l.forward_eval(x),
            Layer::Relu(_) => {
                let mut y = x.clone();
                y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
                Ok(y)
            }
            Layer::MaxPool(l) => l.forward_eval(x),
            Layer::GlobalAvgPool(_) => global_avg_pool(x),
            Layer::Residual { skip, main } => {
                let s = run_eval(skip, x, "skip.")?;
                let m = run_eval(main, x, "main.")?;
                residual_add(s, &m)
            }
        }
    }

    pub(crate) fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv(l) => l.forward_train(x),
            Layer::SepConv(l) => l.forward_train(x),
            Layer::BatchNorm(l) => l.forward_train(x),
            Layer::Relu(cache) => {
                let mut y = x.clone();
                let mut mask = Vec::with_capacity(x.len());
                for v in y.data_mut() {
                    mask.push(*v > 0.0);
                    *v = v.max(0.0);
                }
                *cache = Some(mask);
                Ok(y)
            }
            Layer::MaxPool(l) => l.forward_train(x),
            Layer::GlobalAvgPool(cache) => {
                let y = global_avg_pool(x)?;
                *cache = Some(x.shape().to_vec());
                Ok(y)
            }
            Layer::Residual { skip, main } => {
                let s = run_train(skip, x, "skip.")?;
                let m = run_train(main, x, "main.")?;
                residual_add(s, &m)
            }
        }
    }

    pub(crate) fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv(l) => l.backward(grad),
            Layer::SepConv(l) => l.backward(grad),
            Layer::BatchNorm(l) => l.backward(grad),
            Layer::Relu(cache) => {
                let mask = cache.take().ok_or_else(|| no_cache("relu"))?;
                let mut dx = grad.clone();
                for (d, keep) in dx.data_mut().iter_mut().zip(mask) {
                    if !keep {
                        *d = 0.0;
                    }
                }
                Ok(dx)
            }
            Layer::MaxPool(l) => l.backward(grad),
            Layer::GlobalAvgPool(cache) => {
                let shape = cache.take().ok_or_else(|| no_cache("gap"))?;
                let (h, w, c) = (shape[1], shape[2], shape[3]);
                let inv = 1.0 / (h * w) as f64;
                let mut dx = Tensor::zeros(shape);
                for (dst, g) in dx
                    .data_mut()
                    .chunks_exact_mut(h * w * c)
                    .zip(grad.data().chunks_exact(c))
                {
                    for px in dst.chunks_exact_mut(c) {
                        for (d, &gv) in px.iter_mut().zip(g) {
                            *d = gv * inv;
                        }
                    }
                }
                Ok(dx)
            }
            Layer::Residual { skip, main } => {
                let ds = run_backward(skip, grad, "skip.")?;
                let dm = run_backward(main, grad, "main.")?;
                residual_add(ds, &dm)
            }
        }
    }

    pub fn params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(Param<'_>)) {
        let name = |s: &str| format!("{prefix}.{s}");
        match self {
            Layer::Conv(l) => {
                f(Param {
                    name: name("kernel"),
                    value: &mut l.kernel,
                    grad: &mut l.kernel_grad,
                    l2: l.l2,
                });
                f(Param {
                    name: name("bias"),
                    value: &mut l.bias,
                    grad: &mut l.bias_grad,
                    l2: 0.0,
                });
            }
            Layer::SepConv(l) => {
                f(Param {
                    name: name("depthwise"),
                    value: &mut l.depthwise,
                    grad: &mut l.depthwise_grad,
                    l2: l.l2,
                });
                f(Param {
                    name: name("pointwise"),
                    value: &mut l.pointwise,
                    grad: &mut l.pointwise_grad,
                    l2: l.l2,
                });
                f(Param {
                    name: name("bias"),
                    value: &mut l.bias,
                    grad: &mut l.bias_grad,
                    l2: 0.0,
                });
            }
            Layer::BatchNorm(l) => {
                f(Param {
                    name: name("gamma"),
                    value: &mut l.gamma,
                    grad: &mut l.gamma_grad,
                    l2: 0.0,
                });
                f(Param {
                    name: name("beta"),
                    value: &mut l.beta,
                    grad: &mut l.beta_grad,
                    l2: 0.0,
                });
            }
            Layer::Residual { skip, main } => {
                for (i, l) in skip.iter_mut().enumerate() {
                    l.params_mut(&format!("{prefix}.skip.{i}"), f);
                }
                for (i, l) in main.iter_mut().enumerate() {
                    l.params_mut(&format!("{prefix}.main.{i}"), f);
                }
            }
            Layer::Relu(_) | Layer::MaxPool(_) | Layer::GlobalAvgPool(_) => {}
        }
    }

    /// Every persisted array (trainable parameters plus batch-norm running
    /// statistics) with its name and dimensions, in file order.
    pub fn state(&self, prefix: &str, f: &mut dyn FnMut(String, Vec<usize>, &[f64])) {
        let name = |s: &str| format!("{prefix}.{s}");
        match self {
            Layer::Conv(l) => {
                f(name("kernel"), vec![l.k, l.k, l.cin, l.cout], &l.kernel);
                f(name("bias"), vec![l.cout], &l.bias);
            }
            Layer::SepConv(l) => {
                f(name("depthwise"), vec![l.k, l.k, l.cin], &l.depthwise);
                f(name("pointwise"), vec![l.cin, l.cout], &l.pointwise);
                f(name("bias"), vec![l.cout], &l.bias);
            }
            Layer::BatchNorm(l) => {
                f(name("gamma"), vec![l.channels], &l.gamma);
                f(name("beta"), vec![l.channels], &l.beta);
                f(name("running_mean"), vec![l.channels], &l.running_mean);
                f(name("running_var"), vec![l.channels], &l.running_var);
            }
            Layer::Residual { skip, main } => {
                for (i, l) in skip.iter().enumerate() {
                    l.state(&format!("{prefix}.skip.{i}"), f);
                }
                for (i, l) in main.iter().enumerate() {
                    l.state(&format!("{prefix}.main.{i}"), f);
                }
            }
            Layer::Relu(_) | Layer::MaxPool(_) | Layer::GlobalAvgPool(_) => {}
        }
    }

    pub fn state_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, Vec<usize>, &mut [f64])) {
        let name = |s: &str| format!("{prefix}.{s}");
        match self {
            Layer::Conv(l) => {
                f(name("kernel"), vec![l.k, l.k, l.cin, l.cout], &mut l.kernel);
                f(name("bias"), vec![l.cout], &mut l.bias);
            }
            Layer::SepConv(l) => {
                f(name("depthwise"), vec![l.k, l.k, l.cin], &mut l.depthwise);
                f(name("pointwise"), vec![l.cin, l.cout], &mut l.pointwise);
                f(name("bias"), vec![l.cout], &mut l.bias);
            }
            Layer::BatchNorm(l) => {
                f(name("gamma"), vec![l.channels], &mut l.gamma);
                f(name("beta"), vec![l.channels], &mut l.beta);
                f(name("running_mean"), vec![l.channels], &mut l.running_mean);
                f(name("running_var"), vec![l.channels], &mut l.running_var);
            }
            Layer::Residual { skip, main } => {
                for (i, l) in skip.iter_mut().enumerate() {
                    l.state_mut(&format!("{prefix}.skip.{i}"), f);
                }
                for (i, l) in main.iter_mut().enumerate() {
                    l.state_mut(&format!("{prefix}.main.{i}"), f);
                }
            }
            Layer::Relu(_) | Layer::MaxPool(_) | Layer::GlobalAvgPool(_) => {}
        }
    }
}

/// Spatial mean per channel: `(n, h, w, c)` to `(n, c)`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (n, h, w, c) = x
        .dims4()
        .ok_or_else(|| shape_err("gap", format!("expected NHWC input, got {:?}", x.shape())))?;
    if h * w == 0 {
        return Err(shape_err("gap", "empty feature map"));
    }
    let mut out = vec![0.0; n * c];
    for (o, img) in out
        .chunks_exact_mut(c)
        .zip(x.data().chunks_exact(h * w * c))
    {
        for px in img.chunks_exact(c) {
            for (ov, &v) in o.iter_mut().zip(px) {
                *ov += v;
            }
        }
        o.iter_mut().for_each(|v| *v /= (h * w) as f64);
    }
    Tensor::new(vec![n, c], out)
}

fn residual_add(mut a: Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(shape_err(
            "residual",
            format!(
                "skip path gives {:?} but main path gives {:?}",
                a.shape(),
                b.shape()
            ),
        ));
    }
    for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
        *x += y;
    }
    Ok(a)
}

fn locate(err: Error, prefix: &str, index: usize) -> Error {
    match err {
        Error::Shape { layer, reason } => {
            let path = match layer.split_once(" at layer ") {
                Some((kind, inner)) => format!("{kind} at layer {prefix}{index}.{inner}"),
                None => format!("{layer} at layer {prefix}{index}"),
            };
            Error::Shape {
                layer: path,
                reason,
            }
        }
        other => other,
    }
}

pub(crate) fn run_eval(layers: &[Layer], x: &Tensor, prefix: &str) -> Result<Tensor> {
    let mut cur: Option<Tensor> = None;
    for (i, l) in layers.iter().enumerate() {
        let y = l
            .forward_eval(cur.as_ref().unwrap_or(x))
            .map_err(|e| locate(e, prefix, i))?;
        cur = Some(y);
    }
    Ok(cur.unwrap_or_else(|| x.clone()))
}

pub(crate) fn run_train(layers: &mut [Layer], x: &Tensor, prefix: &str) -> Result<Tensor> {
    let mut cur: Option<Tensor> = None;
    for (i, l) in layers.iter_mut().enumerate() {
        let y = l
            .forward_train(cur.as_ref().unwrap_or(x))
            .map_err(|e| locate(e, prefix, i))?;
        cur = Some(y);
    }
    Ok(cur.unwrap_or_else(|| x.clone()))
}

pub(crate) fn run_backward(layers: &mut [Layer], grad: &Tensor, prefix: &str) -> Result<Tensor> {
    let mut cur: Option<Tensor> = None;
    for (i, l) in layers.iter_mut().enumerate().rev() {
        let g = l
            .backward(cur.as_ref().unwrap_or(grad))
            .map_err(|e| locate(e, prefix, i))?;
        cur = Some(g);
    }
    Ok(cur.unwrap_or_else(|| grad.clone()))
}
