//! Minimal feed-forward network with exact analytic gradients, temperature
//! softmax, entropy/cross-entropy primitives, SGD with momentum/weight decay,
//! and EMA weight tracking.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::math;

/// Raw network outputs, one logit per ID class.
#[derive(Clone, Debug, PartialEq)]
pub struct Logits(Vec<f64>);

impl Logits {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "logit vector needs at least 2 entries, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite logit".into()));
        }
        Ok(Self(values))
    }

    pub(crate) fn new_unchecked(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A probability distribution over the K ID classes.
#[derive(Clone, Debug, PartialEq)]
pub struct Probs(Vec<f64>);

impl Probs {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::InvalidArgument(
                "probability entries must lie in [0,1]".into(),
            ));
        }
        let sum: f64 = values.iter().sum();
        if math::abs(sum - 1.0) > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(Self(values))
    }

    pub(crate) fn new_unchecked(values: Vec<f64>) -> Self {
        Self(values)
    }

    /// Uniform distribution over `k` classes.
    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    /// One-hot distribution with mass on `class`.
    pub fn one_hot(k: usize, class: usize) -> Result<Self> {
        if class >= k {
            return Err(Error::InvalidArgument(format!(
                "class {class} out of range for K={k}"
            )));
        }
        let mut v = vec![0.0; k];
        v[class] = 1.0;
        Ok(Self(v))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest entry, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Temperature-scaled softmax, stabilized by max-logit subtraction.
pub fn softmax_with_temperature(logits: &Logits, t: f64) -> Result<Probs> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "temperature must be a positive real, got {t}"
        )));
    }
    Ok(Probs::new_unchecked(softmax_t_slice(logits.values(), t)))
}

pub(crate) fn softmax_t_slice(z: &[f64], t: f64) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|&zi| math::exp((zi - max) / t)).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// Output confidence S(x, T): the maximum temperature-scaled softmax entry.
pub fn confidence_score(logits: &Logits, t: f64) -> Result<f64> {
    let p = softmax_with_temperature(logits, t)?;
    Ok(p.values()[p.argmax()])
}

/// Shannon entropy in nats, with 0 ln 0 := 0.
pub fn entropy(p: &Probs) -> f64 {
    let mut h = 0.0;
    for &pi in p.values() {
        if pi > 0.0 {
            h -= pi * math::ln(pi);
        }
    }
    h
}

/// Cross-entropy CE(target || pred). Predicted probabilities are floored at
/// 1e-12 inside the log, so a zero prediction under positive target mass
/// yields a large finite value instead of infinity.
pub fn cross_entropy(target: &Probs, pred: &Probs) -> f64 {
    debug_assert_eq!(target.len(), pred.len());
    let mut ce = 0.0;
    for (&ti, &pi) in target.values().iter().zip(pred.values()) {
        if ti > 0.0 {
            ce -= ti * math::ln_floored(pi);
        }
    }
    ce
}

/// Hidden-layer nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    LeakyRelu { slope: f64 },
}

impl Activation {
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    1.0
                } else {
                    *slope
                }
            }
        }
    }
}

impl Default for Activation {
    fn default() -> Self {
        Activation::LeakyRelu { slope: 0.01 }
    }
}

/// One dense layer: row-major `rows x cols` weights plus a bias per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    fn matvec(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..self.rows {
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            let mut acc = self.bias[r];
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            out.push(acc);
        }
    }
}

/// The full set of layered weights and biases of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

impl ParameterSet {
    /// Zero-initialized network with the given layer widths
    /// (`dims[0]` = input dim, last entry = K).
    pub fn zeros(dims: &[usize], activation: Activation) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArgument(
                "network needs at least an input and an output dimension".into(),
            ));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument("zero-width layer".into()));
        }
        let layers = dims
            .windows(2)
            .map(|w| Layer::zeros(w[1], w[0]))
            .collect();
        Ok(Self { layers, activation })
    }

    /// Glorot-uniform initialization: per layer, entries drawn uniformly from
    /// +/- sqrt(6 / (fan_in + fan_out)).
    pub fn init<R: Rng>(dims: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        let mut params = Self::zeros(dims, activation)?;
        for layer in &mut params.layers {
            let bound = math::sqrt(6.0 / (layer.cols + layer.rows) as f64);
            for w in &mut layer.weights {
                *w = rng.random_range(-bound..bound);
            }
            // biases stay zero
        }
        Ok(params)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().rows
    }

    pub fn same_shape(&self, other: &ParameterSet) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.rows == b.rows && a.cols == b.cols)
    }

    /// Mutable view over every scalar parameter, weights then bias per layer.
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for layer in &mut self.layers {
            for w in &mut layer.weights {
                f(w);
            }
            for b in &mut layer.bias {
                f(b);
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite())
        })
    }
}

/// Gradients (or momentum buffers), shape-identical to a `ParameterSet`.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<Layer>,
}

impl GradientSet {
    pub fn zeros_like(params: &ParameterSet) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| Layer::zeros(l.rows, l.cols))
                .collect(),
        }
    }

    /// self += scale * other
    pub fn scaled_add(&mut self, other: &GradientSet, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += scale * y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            for w in &mut l.weights {
                *w *= s;
            }
            for b in &mut l.bias {
                *b *= s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite())
        })
    }
}

fn check_input_dim(params: &ParameterSet, x: &[f64]) -> Result<()> {
    if x.len() != params.input_dim() {
        return Err(Error::InvalidArgument(format!(
            "input dimension {} does not match network input {}",
            x.len(),
            params.input_dim()
        )));
    }
    Ok(())
}

/// Forward pass for a single sample.
pub fn forward(params: &ParameterSet, x: &[f64]) -> Result<Logits> {
    check_input_dim(params, x)?;
    let mut cur: Vec<f64> = x.to_vec();
    let mut next = Vec::new();
    let last = params.layers.len() - 1;
    for (i, layer) in params.layers.iter().enumerate() {
        layer.matvec(&cur, &mut next);
        if i != last {
            for v in &mut next {
                *v = params.activation.apply(*v);
            }
        }
        core::mem::swap(&mut cur, &mut next);
    }
    Ok(Logits::new_unchecked(cur))
}

/// Forward pass over a batch, order-preserving.
pub fn forward_batch(params: &ParameterSet, xs: &[Vec<f64>]) -> Result<Vec<Logits>> {
    xs.iter().map(|x| forward(params, x)).collect()
}

/// Per-sample activations retained for the backward pass.
pub struct ForwardCache {
    /// Input to each layer: `inputs[0]` is the sample, `inputs[i]` the
    /// post-activation output of layer i-1.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each layer; the last entry is the logits.
    pre: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn logits(&self) -> &[f64] {
        self.pre.last().unwrap()
    }
}

pub fn forward_cached(params: &ParameterSet, x: &[f64]) -> Result<ForwardCache> {
    check_input_dim(params, x)?;
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut pre = Vec::with_capacity(params.layers.len());
    let mut cur: Vec<f64> = x.to_vec();
    let last = params.layers.len() - 1;
    for (i, layer) in params.layers.iter().enumerate() {
        let mut z = Vec::new();
        layer.matvec(&cur, &mut z);
        inputs.push(cur);
        pre.push(z.clone());
        if i != last {
            for v in &mut z {
                *v = params.activation.apply(*v);
            }
        }
        cur = z;
    }
    Ok(ForwardCache { inputs, pre })
}

/// Backpropagate a gradient w.r.t. the logits of one sample, accumulating
/// parameter gradients into `grads`.
pub fn backward(
    params: &ParameterSet,
    cache: &ForwardCache,
    dlogits: &[f64],
    grads: &mut GradientSet,
) {
    debug_assert_eq!(dlogits.len(), params.output_dim());
    let mut delta: Vec<f64> = dlogits.to_vec();
    for i in (0..params.layers.len()).rev() {
        let layer = &params.layers[i];
        let input = &cache.inputs[i];
        let g = &mut grads.layers[i];
        for r in 0..layer.rows {
            let d = delta[r];
            g.bias[r] += d;
            let grow = &mut g.weights[r * layer.cols..(r + 1) * layer.cols];
            for (gw, xi) in grow.iter_mut().zip(input) {
                *gw += d * xi;
            }
        }
        if i > 0 {
            // propagate through W^T and the activation of the previous layer
            let mut prev = vec![0.0; layer.cols];
            for r in 0..layer.rows {
                let d = delta[r];
                let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            let z_prev = &cache.pre[i - 1];
            for (p, z) in prev.iter_mut().zip(z_prev) {
                *p *= params.activation.derivative(*z);
            }
            delta = prev;
        }
    }
}

/// One SGD step with momentum and weight decay:
/// buffer <- momentum * buffer + grads + weight_decay * params;
/// params <- params - lr * buffer.
pub fn sgd_step(
    params: &mut ParameterSet,
    grads: &GradientSet,
    buffer: &mut GradientSet,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::InvalidArgument("learning rate must be positive".into()));
    }
    if !(0.0..1.0).contains(&momentum) || !(0.0..1.0).contains(&weight_decay) {
        return Err(Error::InvalidArgument(
            "momentum and weight decay must lie in [0,1)".into(),
        ));
    }
    for ((p, g), b) in params
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut buffer.layers)
    {
        for ((pw, gw), bw) in p.weights.iter_mut().zip(&g.weights).zip(&mut b.weights) {
            *bw = momentum * *bw + *gw + weight_decay * *pw;
            *pw -= lr * *bw;
        }
        for ((pb, gb), bb) in p.bias.iter_mut().zip(&g.bias).zip(&mut b.bias) {
            *bb = momentum * *bb + *gb + weight_decay * *pb;
            *pb -= lr * *bb;
        }
    }
    if !params.is_finite() {
        return Err(Error::TrainingDiverged("non-finite parameter update".into()));
    }
    Ok(())
}

/// Exponential moving average of the live parameters.
#[derive(Clone, Debug)]
pub struct EmaState {
    pub shadow: ParameterSet,
    pub decay: f64,
}

impl EmaState {
    pub fn new(params: &ParameterSet, decay: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&decay) {
            return Err(Error::InvalidArgument("EMA decay must lie in [0,1]".into()));
        }
        Ok(Self {
            shadow: params.clone(),
            decay,
        })
    }

    /// shadow <- decay * shadow + (1 - decay) * params
    pub fn update(&mut self, params: &ParameterSet) -> Result<()> {
        if !self.shadow.same_shape(params) {
            return Err(Error::InvalidArgument(
                "EMA shadow shape does not match parameters".into(),
            ));
        }
        let d = self.decay;
        for (s, p) in self.shadow.layers.iter_mut().zip(&params.layers) {
            for (sw, pw) in s.weights.iter_mut().zip(&p.weights) {
                *sw = d * *sw + (1.0 - d) * pw;
            }
            for (sb, pb) in s.bias.iter_mut().zip(&p.bias) {
                *sb = d * *sb + (1.0 - d) * pb;
            }
        }
        Ok(())
    }
}
