//! Convolutional Q-network with hand-written backpropagation.
//!
//! Activations are stored height-major, channel-minor (`(y * W + x) * C + c`).
//! All parameters live in one flat vector; each layer stores its weights
//! followed by its biases. Convolution weights are laid out
//! `[ky][kx][in_channel][out_channel]`, dense weights `[out][in]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub size: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// Max pooling applied after the activation.
    #[serde(default)]
    pub pool: Option<PoolSpec>,
}

/// Network topology: convolution blocks, global max pooling, then fully
/// connected layers ending in one output per action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    /// Multiplies raw input intensities before the first layer.
    pub input_scale: f64,
    pub conv: Vec<ConvSpec>,
    pub hidden: Vec<usize>,
    pub outputs: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        let pool = Some(PoolSpec { size: 2, stride: 2 });
        Self {
            input_channels: 3,
            input_height: 60,
            input_width: 60,
            input_scale: 1.0 / 255.0,
            conv: vec![
                ConvSpec { out_channels: 8, kernel: 5, stride: 2, pool },
                ConvSpec { out_channels: 16, kernel: 3, stride: 1, pool },
                ConvSpec { out_channels: 32, kernel: 5, stride: 1, pool: None },
            ],
            hidden: vec![64],
            outputs: 3,
        }
    }
}

impl NetConfig {
    /// Three 3x3 stride-1 convolutions (8, 16, 32 channels) with 2x2 pooling
    /// after the first two.
    pub fn small_kernels() -> Self {
        let pool = Some(PoolSpec { size: 2, stride: 2 });
        Self {
            conv: vec![
                ConvSpec { out_channels: 8, kernel: 3, stride: 1, pool },
                ConvSpec { out_channels: 16, kernel: 3, stride: 1, pool },
                ConvSpec { out_channels: 32, kernel: 3, stride: 1, pool: None },
            ],
            ..Self::default()
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_channels * self.input_height * self.input_width
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Shape {
    h: usize,
    w: usize,
    c: usize,
}

impl Shape {
    fn len(&self) -> usize {
        self.h * self.w * self.c
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Op {
    Conv { inp: Shape, out: Shape, k: usize, s: usize, w: usize, b: usize },
    Relu,
    MaxPool { inp: Shape, out: Shape, size: usize, stride: usize },
    GlobalMax { inp: Shape },
    Dense { n_in: usize, n_out: usize, w: usize, b: usize },
}

/// Per-layer activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    acts: Vec<Vec<f64>>,
    argmax: Vec<Vec<u32>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace has an output")
    }

    /// True when both traces select the same pooled elements and every
    /// activation has the same sign, i.e. the network is locally the same
    /// linear map.
    pub fn same_branches(&self, other: &Trace) -> bool {
        self.argmax == other.argmax
            && self
                .acts
                .iter()
                .zip(&other.acts)
                .all(|(a, b)| a.iter().zip(b).all(|(x, y)| (*x > 0.0) == (*y > 0.0)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    config: NetConfig,
    ops: Vec<Op>,
    params: Vec<f64>,
    /// Fan-in of each parameterised layer as `(weight offset, weight len, bias len, fan_in, is_output)`.
    layers: Vec<(usize, usize, usize, usize, bool)>,
}

impl QNetwork {
    /// Builds the topology with all parameters zero.
    pub fn zeros(config: NetConfig) -> Result<Self> {
        if config.input_channels == 0 || config.outputs == 0 || !(config.input_scale.is_finite()) {
            return Err(Error::invalid("network needs input channels, outputs and a finite input scale"));
        }
        let mut shape = Shape { h: config.input_height, w: config.input_width, c: config.input_channels };
        let mut ops = Vec::new();
        let mut layers = Vec::new();
        let mut n_params = 0usize;
        for (i, spec) in config.conv.iter().enumerate() {
            let (k, s) = (spec.kernel, spec.stride);
            if k == 0 || s == 0 || spec.out_channels == 0 || k > shape.h || k > shape.w {
                return Err(Error::invalid(format!("conv layer {i} does not fit a {}x{} input", shape.w, shape.h)));
            }
            let out = Shape { h: (shape.h - k) / s + 1, w: (shape.w - k) / s + 1, c: spec.out_channels };
            let wlen = shape.c * k * k * out.c;
            layers.push((n_params, wlen, out.c, shape.c * k * k, false));
            ops.push(Op::Conv { inp: shape, out, k, s, w: n_params, b: n_params + wlen });
            n_params += wlen + out.c;
            ops.push(Op::Relu);
            shape = out;
            if let Some(p) = spec.pool {
                if p.size == 0 || p.stride == 0 || p.size > shape.h || p.size > shape.w {
                    return Err(Error::invalid(format!("pooling after conv layer {i} does not fit")));
                }
                let out = Shape { h: (shape.h - p.size) / p.stride + 1, w: (shape.w - p.size) / p.stride + 1, c: shape.c };
                ops.push(Op::MaxPool { inp: shape, out, size: p.size, stride: p.stride });
                shape = out;
            }
        }
        ops.push(Op::GlobalMax { inp: shape });
        let mut n_in = shape.c;
        let widths: Vec<usize> = config.hidden.iter().copied().chain([config.outputs]).collect();
        for (i, &n_out) in widths.iter().enumerate() {
            if n_out == 0 {
                return Err(Error::invalid("fully connected layers need at least one unit"));
            }
            let last = i + 1 == widths.len();
            layers.push((n_params, n_in * n_out, n_out, n_in, last));
            ops.push(Op::Dense { n_in, n_out, w: n_params, b: n_params + n_in * n_out });
            n_params += n_in * n_out + n_out;
            if !last {
                ops.push(Op::Relu);
            }
            n_in = n_out;
        }
        Ok(Self { config, ops, params: vec![0.0; n_params], layers })
    }

    /// Fan-in scaled uniform initialisation: `sqrt(6 / fan_in)` bounds for
    /// hidden layers, `sqrt(1 / fan_in)` for the output layer; zero biases.
    pub fn new<R: Rng + ?Sized>(config: NetConfig, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        for &(off, wlen, _, fan_in, last) in &net.layers {
            let gain = if last { 1.0 } else { 6.0 };
            let bound = (gain / fan_in as f64).sqrt();
            for p in &mut net.params[off..off + wlen] {
                *p = rng.gen_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::invalid(format!("expected {} parameters, got {}", self.params.len(), params.len())));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// `(offset, len)` of the weights of the first layer.
    pub fn first_layer_weights(&self) -> (usize, usize) {
        (self.layers[0].0, self.layers[0].1)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.input_len() {
            return Err(Error::invalid(format!(
                "network input has {} values, expected {}",
                x.len(),
                self.config.input_len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(x)?.acts.pop().expect("output"))
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<Trace> {
        self.check_input(x)?;
        let scale = self.config.input_scale;
        let mut acts = Vec::with_capacity(self.ops.len() + 1);
        acts.push(x.iter().map(|v| v * scale).collect::<Vec<f64>>());
        let mut argmax = Vec::with_capacity(self.ops.len());
        for op in &self.ops {
            let input = acts.last().expect("input");
            let (out, arg) = self.apply(op, input);
            acts.push(out);
            argmax.push(arg);
        }
        Ok(Trace { acts, argmax })
    }

    fn apply(&self, op: &Op, x: &[f64]) -> (Vec<f64>, Vec<u32>) {
        let p = &self.params;
        match *op {
            Op::Conv { inp, out, k, s, w, b } => {
                let oc = out.c;
                let row = k * inp.c;
                let mut y = Vec::with_capacity(out.len());
                for _ in 0..out.h * out.w {
                    y.extend_from_slice(&p[b..b + oc]);
                }
                for oy in 0..out.h {
                    for ox in 0..out.w {
                        let yr = &mut y[(oy * out.w + ox) * oc..][..oc];
                        for ky in 0..k {
                            let xr = &x[((oy * s + ky) * inp.w + ox * s) * inp.c..][..row];
                            let wk = &p[w + ky * row * oc..][..row * oc];
                            for (j, &v) in xr.iter().enumerate() {
                                if v != 0.0 {
                                    for (a, &wv) in yr.iter_mut().zip(&wk[j * oc..(j + 1) * oc]) {
                                        *a += v * wv;
                                    }
                                }
                            }
                        }
                    }
                }
                (y, Vec::new())
            }
            Op::Relu => (x.iter().map(|&v| v.max(0.0)).collect(), Vec::new()),
            Op::MaxPool { inp, out, size, stride } => {
                let mut y = Vec::with_capacity(out.len());
                let mut arg = Vec::with_capacity(out.len());
                for oy in 0..out.h {
                    for ox in 0..out.w {
                        for c in 0..out.c {
                            let mut best = f64::NEG_INFINITY;
                            let mut bi = 0usize;
                            for py in 0..size {
                                for px in 0..size {
                                    let i = ((oy * stride + py) * inp.w + ox * stride + px) * inp.c + c;
                                    if x[i] > best {
                                        best = x[i];
                                        bi = i;
                                    }
                                }
                            }
                            y.push(best);
                            arg.push(bi as u32);
                        }
                    }
                }
                (y, arg)
            }
            Op::GlobalMax { inp } => {
                let mut y = vec![f64::NEG_INFINITY; inp.c];
                let mut arg = vec![0u32; inp.c];
                for pos in 0..inp.h * inp.w {
                    for c in 0..inp.c {
                        let i = pos * inp.c + c;
                        if x[i] > y[c] {
                            y[c] = x[i];
                            arg[c] = i as u32;
                        }
                    }
                }
                (y, arg)
            }
            Op::Dense { n_in, n_out, w, b } => {
                let y = (0..n_out)
                    .map(|o| {
                        let wr = &p[w + o * n_in..][..n_in];
                        p[b + o] + wr.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
                    })
                    .collect();
                (y, Vec::new())
            }
        }
    }

    /// Accumulates `d(loss)/d(params)` into `grads` given `d(loss)/d(output)`.
    pub fn backward(&self, trace: &Trace, grad_out: &[f64], grads: &mut [f64]) {
        assert_eq!(grads.len(), self.params.len());
        let p = &self.params;
        let mut g = grad_out.to_vec();
        for (i, op) in self.ops.iter().enumerate().rev() {
            let x = &trace.acts[i];
            let need_dx = i > 0;
            g = match *op {
                Op::Conv { inp, out, k, s, w, b } => {
                    let oc = out.c;
                    let row = k * inp.c;
                    let mut dx = if need_dx { vec![0.0; inp.len()] } else { Vec::new() };
                    for oy in 0..out.h {
                        for ox in 0..out.w {
                            let gr = &g[(oy * out.w + ox) * oc..][..oc];
                            if gr.iter().all(|&v| v == 0.0) {
                                continue;
                            }
                            for (db, &gv) in grads[b..b + oc].iter_mut().zip(gr) {
                                *db += gv;
                            }
                            for ky in 0..k {
                                let xo = ((oy * s + ky) * inp.w + ox * s) * inp.c;
                                let wo = w + ky * row * oc;
                                for j in 0..row {
                                    let v = x[xo + j];
                                    if v != 0.0 {
                                        for (dw, &gv) in grads[wo + j * oc..][..oc].iter_mut().zip(gr) {
                                            *dw += v * gv;
                                        }
                                    }
                                    if need_dx {
                                        dx[xo + j] += p[wo + j * oc..][..oc].iter().zip(gr).map(|(a, b)| a * b).sum::<f64>();
                                    }
                                }
                            }
                        }
                    }
                    dx
                }
                Op::Relu => {
                    let y = &trace.acts[i + 1];
                    g.iter().zip(y).map(|(&gv, &yv)| if yv > 0.0 { gv } else { 0.0 }).collect()
                }
                Op::MaxPool { inp, .. } | Op::GlobalMax { inp } => {
                    let mut dx = vec![0.0; inp.len()];
                    for (&gv, &a) in g.iter().zip(&trace.argmax[i]) {
                        dx[a as usize] += gv;
                    }
                    dx
                }
                Op::Dense { n_in, n_out, w, b } => {
                    let mut dx = vec![0.0; n_in];
                    for o in 0..n_out {
                        let gv = g[o];
                        grads[b + o] += gv;
                        if gv == 0.0 {
                            continue;
                        }
                        for j in 0..n_in {
                            grads[w + o * n_in + j] += gv * x[j];
                            dx[j] += gv * p[w + o * n_in + j];
                        }
                    }
                    dx
                }
            };
        }
    }
}

/// Adaptive-moment optimiser over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}
