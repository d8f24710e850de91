//! Minimal feed-forward network stack with explicit backpropagation.
//!
//! Activations are `(batch, features)` matrices; convolutional layers interpret
//! each row as a `channels x height x width` tensor in row-major order. Every
//! network ends in a [`Dense`] layer whose input is the penultimate embedding.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::seed::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `(in, out)`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        Self {
            weight: he_init(inputs, (inputs, outputs), rng),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }

    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    fn backward(&self, input: &Array2<f64>, grad: &Array2<f64>, out: &mut [f64]) -> Array2<f64> {
        let dw = input.t().dot(grad);
        let db = grad.sum_axis(Axis(0));
        let (w_out, b_out) = out.split_at_mut(dw.len());
        copy_into(w_out, dw.iter());
        copy_into(b_out, db.iter());
        grad.dot(&self.weight.t())
    }
}

/// 3x3 convolution, stride 1, zero padding 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    /// `(out_channels, in_channels * 9)`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Conv2d {
    pub fn new(in_channels: usize, out_channels: usize, height: usize, width: usize, rng: &mut Rng) -> Self {
        let fan_in = in_channels * 9;
        Self {
            in_channels,
            out_channels,
            height,
            width,
            weight: he_init(fan_in, (out_channels, fan_in), rng),
            bias: Array1::zeros(out_channels),
        }
    }

    fn im2col(&self, x: &Array2<f64>) -> Array2<f64> {
        let (h, w, c) = (self.height, self.width, self.in_channels);
        let hw = h * w;
        let batch = x.nrows();
        let mut cols = Array2::zeros((batch * hw, c * 9));
        for b in 0..batch {
            let row = x.row(b);
            for i in 0..h {
                for j in 0..w {
                    let mut col = cols.row_mut(b * hw + i * w + j);
                    for ch in 0..c {
                        for ki in 0..3 {
                            let ii = i as isize + ki as isize - 1;
                            if ii < 0 || ii >= h as isize {
                                continue;
                            }
                            for kj in 0..3 {
                                let jj = j as isize + kj as isize - 1;
                                if jj < 0 || jj >= w as isize {
                                    continue;
                                }
                                col[ch * 9 + ki * 3 + kj] =
                                    row[ch * hw + ii as usize * w + jj as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &Array2<f64>, batch: usize) -> Array2<f64> {
        let (h, w, c) = (self.height, self.width, self.in_channels);
        let hw = h * w;
        let mut dx = Array2::zeros((batch, c * hw));
        for b in 0..batch {
            let mut row = dx.row_mut(b);
            for i in 0..h {
                for j in 0..w {
                    let col = dcols.row(b * hw + i * w + j);
                    for ch in 0..c {
                        for ki in 0..3 {
                            let ii = i as isize + ki as isize - 1;
                            if ii < 0 || ii >= h as isize {
                                continue;
                            }
                            for kj in 0..3 {
                                let jj = j as isize + kj as isize - 1;
                                if jj < 0 || jj >= w as isize {
                                    continue;
                                }
                                row[ch * hw + ii as usize * w + jj as usize] += col[ch * 9 + ki * 3 + kj];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let hw = self.height * self.width;
        let batch = x.nrows();
        let cols = self.im2col(x);
        let out_mat = cols.dot(&self.weight.t()) + &self.bias;
        let mut out = Array2::zeros((batch, self.out_channels * hw));
        for b in 0..batch {
            for p in 0..hw {
                for o in 0..self.out_channels {
                    out[[b, o * hw + p]] = out_mat[[b * hw + p, o]];
                }
            }
        }
        (out, cols)
    }

    fn backward(&self, cols: &Array2<f64>, grad: &Array2<f64>, out: &mut [f64]) -> Array2<f64> {
        let hw = self.height * self.width;
        let batch = grad.nrows();
        let mut g_mat = Array2::zeros((batch * hw, self.out_channels));
        for b in 0..batch {
            for p in 0..hw {
                for o in 0..self.out_channels {
                    g_mat[[b * hw + p, o]] = grad[[b, o * hw + p]];
                }
            }
        }
        let dw = g_mat.t().dot(cols);
        let db = g_mat.sum_axis(Axis(0));
        let (w_out, b_out) = out.split_at_mut(dw.len());
        copy_into(w_out, dw.iter());
        copy_into(b_out, db.iter());
        let dcols = g_mat.dot(&self.weight);
        self.col2im(&dcols, batch)
    }

    fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// 2x2 max pooling with stride 2. Ties resolve to the first position.
#[derive(Clone, Debug, PartialEq)]
pub struct MaxPool2 {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl MaxPool2 {
    fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, Vec<usize>) {
        let (c, h, w) = (self.channels, self.height, self.width);
        let (oh, ow) = (h / 2, w / 2);
        let batch = x.nrows();
        let mut out = Array2::zeros((batch, c * oh * ow));
        let mut argmax = Vec::with_capacity(batch * c * oh * ow);
        for b in 0..batch {
            for ch in 0..c {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut best_idx = ch * h * w + 2 * i * w + 2 * j;
                        let mut best = x[[b, best_idx]];
                        for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                            let idx = ch * h * w + (2 * i + di) * w + 2 * j + dj;
                            if x[[b, idx]] > best {
                                best = x[[b, idx]];
                                best_idx = idx;
                            }
                        }
                        out[[b, ch * oh * ow + i * ow + j]] = best;
                        argmax.push(best_idx);
                    }
                }
            }
        }
        (out, argmax)
    }

    fn backward(&self, argmax: &[usize], grad: &Array2<f64>) -> Array2<f64> {
        let batch = grad.nrows();
        let per = grad.ncols();
        let mut dx = Array2::zeros((batch, self.channels * self.height * self.width));
        for b in 0..batch {
            for k in 0..per {
                dx[[b, argmax[b * per + k]]] += grad[[b, k]];
            }
        }
        dx
    }
}

/// Mean over the spatial positions of each channel.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalAvgPool {
    pub channels: usize,
    pub positions: usize,
}

impl GlobalAvgPool {
    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let batch = x.nrows();
        let mut out = Array2::zeros((batch, self.channels));
        for b in 0..batch {
            for ch in 0..self.channels {
                let start = ch * self.positions;
                out[[b, ch]] = x.slice(s![b, start..start + self.positions]).sum() / self.positions as f64;
            }
        }
        out
    }

    fn backward(&self, grad: &Array2<f64>) -> Array2<f64> {
        let batch = grad.nrows();
        let mut dx = Array2::zeros((batch, self.channels * self.positions));
        let scale = 1.0 / self.positions as f64;
        for b in 0..batch {
            for ch in 0..self.channels {
                let g = grad[[b, ch]] * scale;
                dx.slice_mut(s![b, ch * self.positions..(ch + 1) * self.positions]).fill(g);
            }
        }
        dx
    }
}

/// `relu(x + conv_b(relu(conv_a(x))))` with shape-preserving convolutions.
#[derive(Clone, Debug, PartialEq)]
pub struct Residual {
    pub conv_a: Conv2d,
    pub conv_b: Conv2d,
}

#[derive(Clone, Debug)]
pub struct ResidualCache {
    cols_a: Array2<f64>,
    hidden: Array2<f64>,
    cols_b: Array2<f64>,
    output: Array2<f64>,
}

impl Residual {
    fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, ResidualCache) {
        let (a, cols_a) = self.conv_a.forward(x);
        let hidden = a.mapv(relu);
        let (b, cols_b) = self.conv_b.forward(&hidden);
        let output = (x + &b).mapv(relu);
        let cache = ResidualCache { cols_a, hidden, cols_b, output: output.clone() };
        (output, cache)
    }

    fn backward(&self, cache: &ResidualCache, grad: &Array2<f64>, out: &mut [f64]) -> Array2<f64> {
        let g_sum = relu_mask(grad, &cache.output);
        let n_a = self.conv_a.param_count();
        let (out_a, out_b) = out.split_at_mut(n_a);
        let g_hidden = self.conv_b.backward(&cache.cols_b, &g_sum, out_b);
        let g_a = relu_mask(&g_hidden, &cache.hidden);
        let dx_a = self.conv_a.backward(&cache.cols_a, &g_a, out_a);
        g_sum + dx_a
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv(Conv2d),
    Relu,
    MaxPool(MaxPool2),
    GlobalAvgPool(GlobalAvgPool),
    Residual(Residual),
}

impl Layer {
    pub fn param_count(&self) -> usize {
        match self {
            Layer::Dense(d) => d.weight.len() + d.bias.len(),
            Layer::Conv(c) => c.param_count(),
            Layer::Residual(r) => r.conv_a.param_count() + r.conv_b.param_count(),
            Layer::Relu | Layer::MaxPool(_) | Layer::GlobalAvgPool(_) => 0,
        }
    }

    /// Parameter tensors in layout order (weight then bias).
    pub fn tensors(&self) -> Vec<(Vec<usize>, Vec<f64>)> {
        fn pair(w: &Array2<f64>, b: &Array1<f64>) -> [(Vec<usize>, Vec<f64>); 2] {
            [
                (w.shape().to_vec(), w.iter().copied().collect()),
                (b.shape().to_vec(), b.to_vec()),
            ]
        }
        match self {
            Layer::Dense(d) => pair(&d.weight, &d.bias).to_vec(),
            Layer::Conv(c) => pair(&c.weight, &c.bias).to_vec(),
            Layer::Residual(r) => {
                let mut v = pair(&r.conv_a.weight, &r.conv_a.bias).to_vec();
                v.extend(pair(&r.conv_b.weight, &r.conv_b.bias));
                v
            }
            _ => Vec::new(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        fn slices<'a>(w: &'a mut Array2<f64>, b: &'a mut Array1<f64>) -> [&'a mut [f64]; 2] {
            [
                w.as_slice_mut().expect("contiguous weight"),
                b.as_slice_mut().expect("contiguous bias"),
            ]
        }
        match self {
            Layer::Dense(d) => slices(&mut d.weight, &mut d.bias).into_iter().collect(),
            Layer::Conv(c) => slices(&mut c.weight, &mut c.bias).into_iter().collect(),
            Layer::Residual(r) => {
                let mut v: Vec<&mut [f64]> = slices(&mut r.conv_a.weight, &mut r.conv_a.bias).into_iter().collect();
                v.extend(slices(&mut r.conv_b.weight, &mut r.conv_b.bias));
                v
            }
            _ => Vec::new(),
        }
    }
}

enum Cache {
    Input(Array2<f64>),
    Cols(Array2<f64>),
    Output(Array2<f64>),
    Argmax(Vec<usize>),
    Residual(Box<ResidualCache>),
    None,
}

/// Cached intermediate values of one forward pass.
pub struct Trace {
    caches: Vec<Cache>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub input_dim: usize,
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Self {
        assert!(
            matches!(layers.last(), Some(Layer::Dense(_))),
            "network must end in a dense layer"
        );
        Self { input_dim, layers }
    }

    /// Dense stack `dims[0] -> dims[1] -> ... -> dims[n]` with ReLU between layers.
    pub fn mlp(dims: &[usize], rng: &mut Rng) -> Self {
        assert!(dims.len() >= 2);
        let mut layers = Vec::new();
        for (i, pair) in dims.windows(2).enumerate() {
            if i > 0 {
                layers.push(Layer::Relu);
            }
            layers.push(Layer::Dense(Dense::new(pair[0], pair[1], rng)));
        }
        Self::new(dims[0], layers)
    }

    pub fn output_dim(&self) -> usize {
        self.last_dense().outputs()
    }

    pub fn embedding_dim(&self) -> usize {
        self.last_dense().inputs()
    }

    pub fn last_dense(&self) -> &Dense {
        match self.layers.last() {
            Some(Layer::Dense(d)) => d,
            _ => unreachable!("checked in Network::new"),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            for (_, values) in layer.tensors() {
                out.extend(values);
            }
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "parameter count");
        let mut offset = 0;
        for layer in &mut self.layers {
            for slice in layer.params_mut() {
                slice.copy_from_slice(&flat[offset..offset + slice.len()]);
                offset += slice.len();
            }
        }
    }

    /// Apply `params += delta` without materializing the flat vector.
    pub fn apply_update(&mut self, delta: &[f64]) {
        let mut offset = 0;
        for layer in &mut self.layers {
            for slice in layer.params_mut() {
                let len = slice.len();
                for (p, d) in slice.iter_mut().zip(&delta[offset..offset + len]) {
                    *p += d;
                }
                offset += len;
            }
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        self.forward_trace(x).0
    }

    /// Logits and penultimate embeddings.
    pub fn forward_with_embedding(&self, x: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for layer in &self.layers[..last] {
            h = forward_layer(layer, &h).0;
        }
        let logits = forward_layer(&self.layers[last], &h).0;
        (logits, h)
    }

    pub fn forward_trace(&self, x: &Array2<f64>) -> (Array2<f64>, Trace) {
        assert_eq!(x.ncols(), self.input_dim, "input dimension");
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let (next, cache) = forward_layer(layer, &h);
            caches.push(match cache {
                Cache::Input(_) => Cache::Input(h),
                other => other,
            });
            h = next;
        }
        (h, Trace { caches })
    }

    /// Backpropagate `grad_out` (gradient w.r.t. the logits, summed over the
    /// batch). Returns the flat parameter gradient and the input gradient.
    pub fn backward(&self, trace: &Trace, grad_out: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
        let mut grads = vec![0.0; self.param_count()];
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut acc = 0;
        for layer in &self.layers {
            offsets.push(acc);
            acc += layer.param_count();
        }
        let mut g = grad_out.clone();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let span = &mut grads[offsets[idx]..offsets[idx] + layer.param_count()];
            g = match (layer, &trace.caches[idx]) {
                (Layer::Dense(d), Cache::Input(input)) => d.backward(input, &g, span),
                (Layer::Conv(c), Cache::Cols(cols)) => c.backward(cols, &g, span),
                (Layer::Relu, Cache::Output(out)) => relu_mask(&g, out),
                (Layer::MaxPool(p), Cache::Argmax(am)) => p.backward(am, &g),
                (Layer::GlobalAvgPool(p), Cache::None) => p.backward(&g),
                (Layer::Residual(r), Cache::Residual(rc)) => r.backward(rc, &g, span),
                _ => unreachable!("trace does not match network"),
            };
        }
        (grads, g)
    }
}

fn forward_layer(layer: &Layer, x: &Array2<f64>) -> (Array2<f64>, Cache) {
    match layer {
        // the caller swaps in the real input to avoid a second clone
        Layer::Dense(d) => (d.forward(x), Cache::Input(Array2::zeros((0, 0)))),
        Layer::Conv(c) => {
            let (out, cols) = c.forward(x);
            (out, Cache::Cols(cols))
        }
        Layer::Relu => {
            let out = x.mapv(relu);
            (out.clone(), Cache::Output(out))
        }
        Layer::MaxPool(p) => {
            let (out, am) = p.forward(x);
            (out, Cache::Argmax(am))
        }
        Layer::GlobalAvgPool(p) => (p.forward(x), Cache::None),
        Layer::Residual(r) => {
            let (out, cache) = r.forward(x);
            (out, Cache::Residual(Box::new(cache)))
        }
    }
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

fn relu_mask(grad: &Array2<f64>, output: &Array2<f64>) -> Array2<f64> {
    let mut g = grad.clone();
    g.zip_mut_with(output, |g, &o| {
        if o <= 0.0 {
            *g = 0.0;
        }
    });
    g
}

fn copy_into<'a>(dst: &mut [f64], src: impl Iterator<Item = &'a f64>) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *s;
    }
}

fn he_init(fan_in: usize, shape: (usize, usize), rng: &mut Rng) -> Array2<f64> {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    Array2::from_shape_simple_fn(shape, || normal.sample(rng))
}

/// Row-wise numerically stable softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Summed cross-entropy and its gradient w.r.t. the logits.
pub fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let probs = softmax_rows(logits);
    let mut loss = 0.0;
    let mut grad = probs.clone();
    for (i, &y) in labels.iter().enumerate() {
        loss -= probs[[i, y]].max(f64::MIN_POSITIVE).ln();
        grad[[i, y]] -= 1.0;
    }
    (loss, grad)
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Adam over a flat parameter vector.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    /// Returns the parameter delta for gradient `grad`.
    pub fn delta(&mut self, grad: &[f64]) -> Vec<f64> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let mut delta = vec![0.0; grad.len()];
        for i in 0..grad.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            delta[i] = -self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        delta
    }

    pub fn step(&mut self, net: &mut Network, grad: &[f64]) {
        let delta = self.delta(grad);
        net.apply_update(&delta);
    }
}

/// Fisher-Yates shuffled `0..n`.
pub fn shuffled_indices(n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// Rows `indices` of `x` gathered into a new matrix.
pub fn gather_rows(x: &Array2<f64>, indices: &[usize]) -> Array2<f64> {
    x.select(Axis(0), indices)
}
