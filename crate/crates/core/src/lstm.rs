//! Stacked LSTM regressor with a tanh dense head, trained by
//! backpropagation through time.
//!
//! Per layer and step:
//!
//! ```text
//! i_t = sigmoid(W_i x_t + U_i h_{t-1} + b_i)
//! f_t = sigmoid(W_f x_t + U_f h_{t-1} + b_f)
//! o_t = sigmoid(W_o x_t + U_o h_{t-1} + b_o)
//! g_t = tanh(W_c x_t + U_c h_{t-1} + b_c)
//! c_t = f_t * c_{t-1} + i_t * g_t
//! h_t = o_t * tanh(c_t)
//! ```
//!
//! States start at zero. During training, inverted dropout is applied to
//! each layer's output before it reaches the next layer or the head; the
//! recurrent path is never dropped.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scaler::FeatureScaler;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Parameters of one LSTM layer. `w_*` are hidden x input, `u_*` are
/// hidden x hidden.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayerParams {
    pub w_i: Mat,
    pub w_f: Mat,
    pub w_o: Mat,
    pub w_c: Mat,
    pub u_i: Mat,
    pub u_f: Mat,
    pub u_o: Mat,
    pub u_c: Mat,
    pub b_i: Vec<f64>,
    pub b_f: Vec<f64>,
    pub b_o: Vec<f64>,
    pub b_c: Vec<f64>,
}

impl LstmLayerParams {
    fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_i: Mat::zeros(hidden, input),
            w_f: Mat::zeros(hidden, input),
            w_o: Mat::zeros(hidden, input),
            w_c: Mat::zeros(hidden, input),
            u_i: Mat::zeros(hidden, hidden),
            u_f: Mat::zeros(hidden, hidden),
            u_o: Mat::zeros(hidden, hidden),
            u_c: Mat::zeros(hidden, hidden),
            b_i: vec![0.0; hidden],
            b_f: vec![0.0; hidden],
            b_o: vec![0.0; hidden],
            b_c: vec![0.0; hidden],
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_i.cols
    }

    pub fn hidden_size(&self) -> usize {
        self.w_i.rows
    }

    fn tensors(&self) -> [&[f64]; 12] {
        [
            &self.w_i.data,
            &self.w_f.data,
            &self.w_o.data,
            &self.w_c.data,
            &self.u_i.data,
            &self.u_f.data,
            &self.u_o.data,
            &self.u_c.data,
            &self.b_i,
            &self.b_f,
            &self.b_o,
            &self.b_c,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 12] {
        [
            &mut self.w_i.data,
            &mut self.w_f.data,
            &mut self.w_o.data,
            &mut self.w_c.data,
            &mut self.u_i.data,
            &mut self.u_f.data,
            &mut self.u_o.data,
            &mut self.u_c.data,
            &mut self.b_i,
            &mut self.b_f,
            &mut self.b_o,
            &mut self.b_c,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmNetwork {
    pub layers: Vec<LstmLayerParams>,
    pub head_w: Vec<f64>,
    pub head_b: f64,
    pub dropout_rate: f64,
    pub hidden_size: usize,
    pub input_size: usize,
}

/// Gradient container with the same layout as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LstmLayerParams>,
    pub head_w: Vec<f64>,
    pub head_b: f64,
}

/// Flat views over every parameter tensor, in a fixed order shared by
/// networks, gradients and optimizer state.
pub trait ParamTensors {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;
}

impl ParamTensors for LstmNetwork {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.layers.iter().flat_map(|l| l.tensors()).collect();
        out.push(&self.head_w);
        out.push(std::slice::from_ref(&self.head_b));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect();
        out.push(&mut self.head_w);
        out.push(std::slice::from_mut(&mut self.head_b));
        out
    }
}

impl ParamTensors for Gradients {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.layers.iter().flat_map(|l| l.tensors()).collect();
        out.push(&self.head_w);
        out.push(std::slice::from_ref(&self.head_b));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect();
        out.push(&mut self.head_w);
        out.push(std::slice::from_mut(&mut self.head_b));
        out
    }
}

impl Gradients {
    pub fn zeros_like(net: &LstmNetwork) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LstmLayerParams::zeros(l.input_size(), l.hidden_size()))
                .collect(),
            head_w: vec![0.0; net.hidden_size],
            head_b: 0.0,
        }
    }

    fn reset(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|t| t.iter().map(|g| g * g).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            for g in t.iter_mut() {
                *g *= factor;
            }
        }
    }
}

/// Creates a network with weights uniform in `±1/sqrt(hidden_size)`,
/// forget-gate biases at 1 and all other biases at 0.
///
/// Every weight tensor draws from its own ChaCha stream, and input-weight
/// matrices are filled input-column by input-column, so appending an input
/// feature leaves all existing weights unchanged.
pub fn init_network(
    input_size: usize,
    hidden_size: usize,
    layers: usize,
    dropout_rate: f64,
    seed: u64,
) -> Result<LstmNetwork> {
    if input_size == 0 || hidden_size == 0 || !(1..=2).contains(&layers) {
        return Err(Error::ShapeMismatch(format!(
            "input {input_size}, hidden {hidden_size}, layers {layers}"
        )));
    }
    if !(0.0..1.0).contains(&dropout_rate) {
        return Err(Error::InvalidConfig(format!("dropout rate {dropout_rate}")));
    }
    let bound = 1.0 / (hidden_size as f64).sqrt();
    let stream = |id: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id);
        rng
    };
    let fill_col_major = |m: &mut Mat, id: u64| {
        let mut rng = stream(id);
        for c in 0..m.cols {
            for r in 0..m.rows {
                m.data[r * m.cols + c] = rng.random_range(-bound..=bound);
            }
        }
    };
    let mut out = Vec::with_capacity(layers);
    for l in 0..layers {
        let input = if l == 0 { input_size } else { hidden_size };
        let mut p = LstmLayerParams::zeros(input, hidden_size);
        let base = 16 * l as u64;
        fill_col_major(&mut p.w_i, base);
        fill_col_major(&mut p.w_f, base + 1);
        fill_col_major(&mut p.w_o, base + 2);
        fill_col_major(&mut p.w_c, base + 3);
        fill_col_major(&mut p.u_i, base + 4);
        fill_col_major(&mut p.u_f, base + 5);
        fill_col_major(&mut p.u_o, base + 6);
        fill_col_major(&mut p.u_c, base + 7);
        p.b_f.fill(1.0);
        out.push(p);
    }
    let mut head_rng = stream(1000);
    let head_w = (0..hidden_size)
        .map(|_| head_rng.random_range(-bound..=bound))
        .collect();
    Ok(LstmNetwork {
        layers: out,
        head_w,
        head_b: 0.0,
        dropout_rate,
        hidden_size,
        input_size,
    })
}

/// Per-layer activations of one forward pass. Step-major flat buffers of
/// length `seq_len * hidden`.
#[derive(Debug, Clone)]
struct LayerCache {
    /// Layer input per step (`seq_len * input`), after lower-layer dropout.
    x: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    c: Vec<f64>,
    tc: Vec<f64>,
    h: Vec<f64>,
    /// Dropout multipliers applied to this layer's output (`seq_len * hidden`),
    /// or empty when inactive.
    mask: Vec<f64>,
}

/// Activations recorded by [`forward`] for use by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    seq_len: usize,
    layers: Vec<LayerCache>,
    head_in: Vec<f64>,
    pub prediction: f64,
}

impl ForwardCache {
    /// Gate activations `(i, f, o, g)` of `layer` at `step`.
    pub fn gates(&self, layer: usize, step: usize) -> [&[f64]; 4] {
        let l = &self.layers[layer];
        let h = l.i.len() / self.seq_len;
        let r = step * h..(step + 1) * h;
        [&l.i[r.clone()], &l.f[r.clone()], &l.o[r.clone()], &l.g[r]]
    }

    /// `(h_t, c_t)` of `layer` at `step`.
    pub fn state(&self, layer: usize, step: usize) -> (&[f64], &[f64]) {
        let l = &self.layers[layer];
        let h = l.h.len() / self.seq_len;
        let r = step * h..(step + 1) * h;
        (&l.h[r.clone()], &l.c[r])
    }
}

/// Runs one window (`seq_len * input_size`, row-major) through the network.
pub fn forward<R: Rng + ?Sized>(
    net: &LstmNetwork,
    window: &[f64],
    training: bool,
    rng: &mut R,
) -> Result<(f64, ForwardCache)> {
    let input_size = net.input_size;
    if window.is_empty() || window.len() % input_size != 0 {
        return Err(Error::ShapeMismatch(format!(
            "window of {} values for input size {input_size}",
            window.len()
        )));
    }
    let seq_len = window.len() / input_size;
    let hidden = net.hidden_size;
    let n_layers = net.layers.len();
    let dropout = training && net.dropout_rate > 0.0;
    let keep_scale = 1.0 / (1.0 - net.dropout_rate);

    let mut caches: Vec<LayerCache> = Vec::with_capacity(n_layers);
    let mut layer_input = window.to_vec();
    for (li, layer) in net.layers.iter().enumerate() {
        let in_dim = layer.input_size();
        let size = seq_len * hidden;
        let mut cache = LayerCache {
            x: layer_input,
            i: vec![0.0; size],
            f: vec![0.0; size],
            o: vec![0.0; size],
            g: vec![0.0; size],
            c: vec![0.0; size],
            tc: vec![0.0; size],
            h: vec![0.0; size],
            mask: Vec::new(),
        };
        let zeros = vec![0.0; hidden];
        for t in 0..seq_len {
            let x_t = &cache.x[t * in_dim..(t + 1) * in_dim];
            let (h_prev, c_prev) = if t == 0 {
                (zeros.clone(), zeros.clone())
            } else {
                (
                    cache.h[(t - 1) * hidden..t * hidden].to_vec(),
                    cache.c[(t - 1) * hidden..t * hidden].to_vec(),
                )
            };
            for k in 0..hidden {
                let zi = layer.b_i[k] + dot(layer.w_i.row(k), x_t) + dot(layer.u_i.row(k), &h_prev);
                let zf = layer.b_f[k] + dot(layer.w_f.row(k), x_t) + dot(layer.u_f.row(k), &h_prev);
                let zo = layer.b_o[k] + dot(layer.w_o.row(k), x_t) + dot(layer.u_o.row(k), &h_prev);
                let zg = layer.b_c[k] + dot(layer.w_c.row(k), x_t) + dot(layer.u_c.row(k), &h_prev);
                let (ig, fg, og, gg) = (sigmoid(zi), sigmoid(zf), sigmoid(zo), zg.tanh());
                let c = fg * c_prev[k] + ig * gg;
                let tc = c.tanh();
                let idx = t * hidden + k;
                cache.i[idx] = ig;
                cache.f[idx] = fg;
                cache.o[idx] = og;
                cache.g[idx] = gg;
                cache.c[idx] = c;
                cache.tc[idx] = tc;
                cache.h[idx] = og * tc;
            }
        }
        let top = li + 1 == n_layers;
        if dropout {
            // Only h_T of the top layer reaches the head.
            let mut mask = vec![1.0; size];
            let first = if top { seq_len - 1 } else { 0 };
            for m in &mut mask[first * hidden..] {
                *m = if rng.random::<f64>() < net.dropout_rate { 0.0 } else { keep_scale };
            }
            cache.mask = mask;
        }
        layer_input = if cache.mask.is_empty() {
            cache.h.clone()
        } else {
            cache.h.iter().zip(&cache.mask).map(|(h, m)| h * m).collect()
        };
        caches.push(cache);
    }
    let head_in = layer_input[(seq_len - 1) * hidden..].to_vec();
    let prediction = (dot(&net.head_w, &head_in) + net.head_b).tanh();
    Ok((
        prediction,
        ForwardCache {
            seq_len,
            layers: caches,
            head_in,
            prediction,
        },
    ))
}

/// Inference-mode prediction for one window.
pub fn predict_one(net: &LstmNetwork, window: &[f64]) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Ok(forward(net, window, false, &mut rng)?.0)
}

/// BPTT gradients of a loss whose derivative w.r.t. the prediction is
/// `d_loss_d_pred`.
pub fn backward(net: &LstmNetwork, cache: &ForwardCache, d_loss_d_pred: f64) -> Gradients {
    let mut grads = Gradients::zeros_like(net);
    accumulate_backward(net, cache, d_loss_d_pred, &mut grads);
    grads
}

/// Adds the gradients of one sample into `grads`.
pub fn accumulate_backward(
    net: &LstmNetwork,
    cache: &ForwardCache,
    d_loss_d_pred: f64,
    grads: &mut Gradients,
) {
    let hidden = net.hidden_size;
    let seq_len = cache.seq_len;
    let dz = d_loss_d_pred * (1.0 - cache.prediction * cache.prediction);
    axpy(dz, &cache.head_in, &mut grads.head_w);
    grads.head_b += dz;
    if dz == 0.0 {
        return;
    }

    // Gradient w.r.t. each layer's (pre-dropout) output, seq_len * hidden.
    let n_layers = net.layers.len();
    let mut dh_above = vec![0.0; seq_len * hidden];
    for k in 0..hidden {
        dh_above[(seq_len - 1) * hidden + k] = dz * net.head_w[k];
    }
    for li in (0..n_layers).rev() {
        let layer = &net.layers[li];
        let lc = &cache.layers[li];
        let g = &mut grads.layers[li];
        let in_dim = layer.input_size();
        if !lc.mask.is_empty() {
            for (d, m) in dh_above.iter_mut().zip(&lc.mask) {
                *d *= m;
            }
        }
        let need_dx = li > 0;
        let mut dx = if need_dx { vec![0.0; seq_len * in_dim] } else { Vec::new() };
        let mut dh_next = vec![0.0; hidden];
        let mut dc_next = vec![0.0; hidden];
        let mut da = [
            vec![0.0; hidden],
            vec![0.0; hidden],
            vec![0.0; hidden],
            vec![0.0; hidden],
        ];
        let zeros = vec![0.0; hidden];
        for t in (0..seq_len).rev() {
            let r = t * hidden..(t + 1) * hidden;
            let c_prev: &[f64] = if t == 0 { &zeros } else { &lc.c[(t - 1) * hidden..t * hidden] };
            let h_prev: &[f64] = if t == 0 { &zeros } else { &lc.h[(t - 1) * hidden..t * hidden] };
            let x_t = &lc.x[t * in_dim..(t + 1) * in_dim];
            for k in 0..hidden {
                let idx = r.start + k;
                let (ig, fg, og, gg, tc) = (lc.i[idx], lc.f[idx], lc.o[idx], lc.g[idx], lc.tc[idx]);
                let dh = dh_above[idx] + dh_next[k];
                let d_o = dh * tc;
                let dc = dh * og * (1.0 - tc * tc) + dc_next[k];
                let d_i = dc * gg;
                let d_g = dc * ig;
                let d_f = dc * c_prev[k];
                dc_next[k] = dc * fg;
                da[0][k] = d_i * ig * (1.0 - ig);
                da[1][k] = d_f * fg * (1.0 - fg);
                da[2][k] = d_o * og * (1.0 - og);
                da[3][k] = d_g * (1.0 - gg * gg);
            }
            dh_next.fill(0.0);
            let ws = [&layer.w_i, &layer.w_f, &layer.w_o, &layer.w_c];
            let us = [&layer.u_i, &layer.u_f, &layer.u_o, &layer.u_c];
            for (gate, dag) in da.iter().enumerate() {
                let (gw, gu, gb) = match gate {
                    0 => (&mut g.w_i, &mut g.u_i, &mut g.b_i),
                    1 => (&mut g.w_f, &mut g.u_f, &mut g.b_f),
                    2 => (&mut g.w_o, &mut g.u_o, &mut g.b_o),
                    _ => (&mut g.w_c, &mut g.u_c, &mut g.b_c),
                };
                for k in 0..hidden {
                    let a = dag[k];
                    if a == 0.0 {
                        continue;
                    }
                    axpy(a, x_t, gw.row_mut(k));
                    if t > 0 {
                        axpy(a, h_prev, gu.row_mut(k));
                        axpy(a, us[gate].row(k), &mut dh_next);
                    }
                    gb[k] += a;
                    if need_dx {
                        axpy(a, ws[gate].row(k), &mut dx[t * in_dim..(t + 1) * in_dim]);
                    }
                }
            }
        }
        dh_above = dx;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OptimizerKind {
    Adam,
    Nadam,
    Adagrad,
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::Adam => "Adam",
            Self::Nadam => "Nadam",
            Self::Adagrad => "Adagrad",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(Self::Adam),
            "nadam" => Ok(Self::Nadam),
            "adagrad" => Ok(Self::Adagrad),
            other => Err(Error::Parse(format!("unknown optimizer `{other}`"))),
        }
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;

/// Per-parameter moment / accumulator buffers.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: OptimizerKind,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new<P: ParamTensors>(kind: OptimizerKind, params: &P) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        Self {
            kind,
            step: 0,
            m: shapes.iter().map(|n| vec![0.0; *n]).collect(),
            v: shapes.iter().map(|n| vec![0.0; *n]).collect(),
        }
    }

    /// Applies one update in place.
    pub fn step<P: ParamTensors, G: ParamTensors>(&mut self, params: &mut P, grads: &G, lr: f64) {
        self.step += 1;
        let t = self.step;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        let grads = grads.tensors();
        for (ti, p) in params.tensors_mut().into_iter().enumerate() {
            let g = grads[ti];
            let m = &mut self.m[ti];
            let v = &mut self.v[ti];
            for j in 0..p.len() {
                let gj = g[j];
                match self.kind {
                    OptimizerKind::Adam => {
                        m[j] = BETA1 * m[j] + (1.0 - BETA1) * gj;
                        v[j] = BETA2 * v[j] + (1.0 - BETA2) * gj * gj;
                        let m_hat = m[j] / bc1;
                        let v_hat = v[j] / bc2;
                        p[j] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
                    }
                    OptimizerKind::Nadam => {
                        m[j] = BETA1 * m[j] + (1.0 - BETA1) * gj;
                        v[j] = BETA2 * v[j] + (1.0 - BETA2) * gj * gj;
                        let m_hat = m[j] / bc1;
                        let v_hat = v[j] / bc2;
                        let nesterov = BETA1 * m_hat + (1.0 - BETA1) * gj / bc1;
                        p[j] -= lr * nesterov / (v_hat.sqrt() + EPSILON);
                    }
                    OptimizerKind::Adagrad => {
                        v[j] += gj * gj;
                        p[j] -= lr * gj / (v[j].sqrt() + EPSILON);
                    }
                }
            }
        }
    }
}

/// Scalar next-step targets with their feature windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceDataset {
    /// Row-major `seq_len * input_size` windows.
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    /// Series index of each target; its window covers the `seq_len`
    /// indices immediately before it.
    pub target_index: Vec<usize>,
    pub seq_len: usize,
    pub input_size: usize,
}

impl SequenceDataset {
    /// Builds one sample per target index in `targets`: the window is rows
    /// `t - seq_len .. t` of `rows`, the target `target_col[t]`.
    pub fn from_rows(
        rows: &[Vec<f64>],
        target_col: &[f64],
        seq_len: usize,
        targets: std::ops::Range<usize>,
    ) -> Result<Self> {
        if seq_len == 0 {
            return Err(Error::ShapeMismatch("sequence length 0".into()));
        }
        let input_size = rows.first().map(Vec::len).unwrap_or(0);
        if targets.start < seq_len || targets.end > rows.len() || targets.end > target_col.len() {
            return Err(Error::ShapeMismatch(format!(
                "targets {targets:?} need {seq_len} prior rows within {} rows",
                rows.len()
            )));
        }
        let mut ds = Self {
            inputs: Vec::with_capacity(targets.len()),
            targets: Vec::with_capacity(targets.len()),
            target_index: Vec::with_capacity(targets.len()),
            seq_len,
            input_size,
        };
        for t in targets {
            let mut w = Vec::with_capacity(seq_len * input_size);
            for row in &rows[t - seq_len..t] {
                if row.len() != input_size {
                    return Err(Error::ShapeMismatch("ragged feature rows".into()));
                }
                w.extend_from_slice(row);
            }
            ds.inputs.push(w);
            ds.targets.push(target_col[t]);
            ds.target_index.push(t);
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            learning_rate: 0.01,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            clip_norm: Some(5.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean squared error over the epoch's mini-batches (training mode).
    pub train_loss: f64,
    pub valid_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best-validation epoch.
    pub net: LstmNetwork,
    pub history: Vec<EpochLoss>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl TrainOutcome {
    pub fn best_valid_loss(&self) -> f64 {
        self.history[self.best_epoch - 1].valid_loss
    }
}

/// Inference-mode MSE over a dataset.
pub fn evaluate_mse(net: &LstmNetwork, data: &SequenceDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut sum = 0.0;
    for (x, y) in data.inputs.iter().zip(&data.targets) {
        let p = predict_one(net, x)?;
        sum += (p - y) * (p - y);
    }
    Ok(sum / data.len() as f64)
}

/// Mini-batch training in chronological order with early stopping on the
/// validation MSE.
pub fn train(
    mut net: LstmNetwork,
    train_set: &SequenceDataset,
    valid_set: &SequenceDataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if train_set.is_empty() || valid_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if train_set.input_size != net.input_size || valid_set.input_size != net.input_size {
        return Err(Error::ShapeMismatch(format!(
            "dataset input size {} vs network {}",
            train_set.input_size, net.input_size
        )));
    }
    if !(config.learning_rate >= 0.0) || config.batch_size == 0 {
        return Err(Error::InvalidConfig("learning rate / batch size".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(7);
    let mut opt = OptimizerState::new(config.optimizer, &net);
    let mut grads = Gradients::zeros_like(&net);
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, LstmNetwork)> = None;
    let mut since_best = 0;

    for epoch in 1..=config.max_epochs {
        let mut sq_sum = 0.0;
        for start in (0..train_set.len()).step_by(config.batch_size) {
            let end = (start + config.batch_size).min(train_set.len());
            let n = (end - start) as f64;
            grads.reset();
            for s in start..end {
                let (pred, cache) = forward(&net, &train_set.inputs[s], true, &mut rng)?;
                let err = pred - train_set.targets[s];
                sq_sum += err * err;
                accumulate_backward(&net, &cache, 2.0 * err / n, &mut grads);
            }
            if let Some(max_norm) = config.clip_norm {
                let norm = grads.norm();
                if norm > max_norm {
                    grads.scale(max_norm / norm);
                }
            }
            opt.step(&mut net, &grads, config.learning_rate);
        }
        let train_loss = sq_sum / train_set.len() as f64;
        let valid_loss = evaluate_mse(&net, valid_set)?;
        if !train_loss.is_finite() || !valid_loss.is_finite() {
            return Err(Error::DivergedLoss { epoch });
        }
        history.push(EpochLoss {
            epoch,
            train_loss,
            valid_loss,
        });
        match &best {
            Some((b, _, _)) if valid_loss >= *b => since_best += 1,
            _ => {
                best = Some((valid_loss, epoch, net.clone()));
                since_best = 0;
            }
        }
        if since_best >= config.patience {
            break;
        }
    }
    let (_, best_epoch, net) = best.ok_or(Error::EmptyDataset)?;
    Ok(TrainOutcome {
        net,
        history,
        best_epoch,
    })
}

/// Raw (scaled) predictions for every window.
pub fn predict_scaled(net: &LstmNetwork, data: &SequenceDataset) -> Result<Vec<f64>> {
    data.inputs.iter().map(|x| predict_one(net, x)).collect()
}

/// Predictions mapped back to price units.
pub fn predict_series(
    net: &LstmNetwork,
    data: &SequenceDataset,
    scaler: &FeatureScaler,
) -> Result<Vec<f64>> {
    if data.input_size != net.input_size {
        return Err(Error::ShapeMismatch(format!(
            "dataset input size {} vs network {}",
            data.input_size, net.input_size
        )));
    }
    Ok(predict_scaled(net, data)?
        .into_iter()
        .map(|p| scaler.inverse(p))
        .collect())
}
