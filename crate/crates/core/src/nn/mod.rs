//! Feed-forward rectifier network with softmax cross-entropy, analytic
//! backprop and SGD with classical momentum.
//!
//! Weights of a layer are stored fan-in-major: `weights[i * fan_out + o]`
//! connects input `i` to output `o`. Loss and gradients are averaged over the
//! batch.

mod matrix;
mod train;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};

use crate::augment::EnhancementSpec;
use crate::math;
use crate::rng::rng_from_seed;
use crate::{Error, Result};

pub use matrix::Matrix;
pub use train::{train, train_with_teacher};

/// Features, integer labels and the class count.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    n_classes: usize,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::shape("dataset has no samples"));
        }
        if features.rows() != labels.len() {
            return Err(Error::shape(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if n_classes == 0 {
            return Err(Error::param("n_classes", "must be positive"));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= n_classes) {
            return Err(Error::param(
                "labels",
                format!("label {y} of sample {i} is not below n_classes = {n_classes}"),
            ));
        }
        if !features.all_finite() {
            return Err(Error::param("features", "non-finite value"));
        }
        Ok(Dataset {
            features,
            labels,
            n_classes,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn batch(&self, rows: &[usize]) -> Batch {
        Batch {
            features: self.features.select_rows(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }
}

/// A mini-batch of feature rows and their hard labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

/// Probability vector used as a training target.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabel(Vec<f64>);

impl SoftLabel {
    pub const TOLERANCE: f64 = 1e-6;

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::param("soft_label", "empty"));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::param("soft_label", "entries must be finite and nonnegative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > Self::TOLERANCE {
            return Err(Error::param("soft_label", format!("sums to {total}, not 1")));
        }
        Ok(SoftLabel(probs))
    }

    pub fn one_hot(class: usize, n_classes: usize) -> Self {
        let mut p = vec![0.0; n_classes];
        p[class] = 1.0;
        SoftLabel(p)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Parameters of one dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub fan_in: usize,
    pub fan_out: usize,
    /// `fan_in x fan_out`, row-major.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl LayerParams {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        LayerParams {
            fan_in,
            fan_out,
            weights: vec![0.0; fan_in * fan_out],
            biases: vec![0.0; fan_out],
        }
    }

    #[inline]
    pub fn weight_row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.fan_out..(i + 1) * self.fan_out]
    }

    /// Euclidean norm over weights and biases together.
    pub fn norm(&self) -> f64 {
        let ss: f64 = self
            .weights
            .iter()
            .chain(&self.biases)
            .map(|v| v * v)
            .sum();
        math::sqrt(ss)
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.biases)
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.biases.iter_mut())
    }
}

/// Multilayer perceptron: rectifier hidden layers, identity output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<LayerParams>,
}

/// One tensor per parameter tensor of a model, same shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerParams>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Gradients {
            layers: model
                .layers
                .iter()
                .map(|l| LayerParams::zeros(l.fan_in, l.fan_out))
                .collect(),
        }
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            math::axpy(scale, &b.weights, &mut a.weights);
            math::axpy(scale, &b.biases, &mut a.biases);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.values_mut().for_each(|v| *v *= s);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|l| l.values().copied())
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(f64::is_finite)
    }
}

/// Momentum buffer for [`sgd_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct Velocity(pub Gradients);

impl Velocity {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Velocity(Gradients::zeros_like(model))
    }
}

impl MlpModel {
    /// Builds a model from explicit layers; shapes must chain.
    pub fn from_layers(layers: Vec<LayerParams>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::shape("model needs at least one layer"));
        }
        for l in &layers {
            if l.fan_in == 0 || l.fan_out == 0 {
                return Err(Error::shape("zero-width layer"));
            }
            if l.weights.len() != l.fan_in * l.fan_out || l.biases.len() != l.fan_out {
                return Err(Error::shape("parameter buffer length does not match layer shape"));
            }
        }
        for w in layers.windows(2) {
            if w[0].fan_out != w[1].fan_in {
                return Err(Error::shape(format!(
                    "layer output {} does not feed input {}",
                    w[0].fan_out, w[1].fan_in
                )));
            }
        }
        Ok(MlpModel { layers })
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    /// `[input, hidden..., n_classes]`
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].fan_in];
        sizes.extend(self.layers.iter().map(|l| l.fan_out));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn n_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|l| l.values().copied())
    }

    /// Rounds every parameter to the nearest `f32`, the checkpoint precision.
    pub fn round_to_f32(&mut self) {
        for l in &mut self.layers {
            l.values_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }

    /// `self + delta`, layer by layer.
    pub fn perturbed(&self, delta: &Gradients) -> MlpModel {
        let mut out = self.clone();
        for (l, d) in out.layers.iter_mut().zip(&delta.layers) {
            math::axpy(1.0, &d.weights, &mut l.weights);
            math::axpy(1.0, &d.biases, &mut l.biases);
        }
        out
    }
}

/// He-initialised network: weights `N(0, 2 / fan_in)`, zero biases.
pub fn init_mlp(layer_sizes: &[usize], seed: u64) -> Result<MlpModel> {
    if layer_sizes.len() < 2 {
        return Err(Error::shape("need at least an input and an output size"));
    }
    if layer_sizes.iter().any(|&s| s == 0) {
        return Err(Error::shape(format!("zero layer size in {layer_sizes:?}")));
    }
    let mut rng = rng_from_seed(seed);
    let layers = layer_sizes
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let normal = Normal::new(0.0, math::sqrt(2.0 / fan_in as f64))
                .expect("positive standard deviation");
            LayerParams {
                fan_in,
                fan_out,
                weights: (0..fan_in * fan_out).map(|_| normal.sample(&mut rng)).collect(),
                biases: vec![0.0; fan_out],
            }
        })
        .collect();
    Ok(MlpModel { layers })
}

/// `c <- a * b + beta * c` with `c` row-major and `a`, `b` given by strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the callers pass buffers of at least m*k, k*n and m*n elements
    // laid out as described by the strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn dense(x: &Matrix, layer: &LayerParams, relu: bool) -> Matrix {
    let (rows, fi, fo) = (x.rows(), layer.fan_in, layer.fan_out);
    let mut out = Matrix::zeros(rows, fo);
    for b in 0..rows {
        out.row_mut(b).copy_from_slice(&layer.biases);
    }
    gemm(
        rows,
        fi,
        fo,
        x.as_slice(),
        fi as isize,
        1,
        &layer.weights,
        fo as isize,
        1,
        1.0,
        out.as_mut_slice(),
    );
    if relu {
        for v in out.as_mut_slice() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
    out
}

fn check_width(model: &MlpModel, x: &Matrix) -> Result<()> {
    if x.cols() != model.input_dim() {
        return Err(Error::shape(format!(
            "batch width {} but model input is {}",
            x.cols(),
            model.input_dim()
        )));
    }
    Ok(())
}

/// Outputs of every layer; the last entry holds the logits.
fn forward_all(model: &MlpModel, x: &Matrix) -> Vec<Matrix> {
    let last = model.layers.len() - 1;
    let mut outs: Vec<Matrix> = Vec::with_capacity(model.layers.len());
    for (l, layer) in model.layers.iter().enumerate() {
        let input = if l == 0 { x } else { &outs[l - 1] };
        let o = dense(input, layer, l != last);
        outs.push(o);
    }
    outs
}

/// Logits for every row of `x`.
pub fn forward(model: &MlpModel, x: &Matrix) -> Result<Matrix> {
    check_width(model, x)?;
    Ok(forward_all(model, x).pop().expect("at least one layer"))
}

/// Logits for every sample of a dataset.
pub fn predict_logits(model: &MlpModel, dataset: &Dataset) -> Result<Matrix> {
    forward(model, dataset.features())
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}

pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = math::exp(*x - max);
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}

/// `log softmax(logits)` via max subtraction.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = math::ln(logits.iter().map(|&z| math::exp(z - max)).sum::<f64>()) + max;
    logits.iter().map(|&z| z - lse).collect()
}

fn cross_entropy(log_probs: &[f64], target: &[f64]) -> f64 {
    log_probs
        .iter()
        .zip(target)
        .filter(|(_, &t)| t != 0.0)
        .map(|(&lp, &t)| -t * lp)
        .sum()
}

/// Softmax probabilities and `-sum_c t_c log p_c`.
pub fn softmax_xent(logits: &[f64], target: &SoftLabel) -> Result<(SoftLabel, f64)> {
    if logits.len() != target.as_slice().len() {
        return Err(Error::shape("logit and target lengths differ"));
    }
    let lp = log_softmax(logits);
    let loss = cross_entropy(&lp, target.as_slice());
    Ok((SoftLabel(softmax(logits)), loss))
}

/// Result of a forward/backward pass over a batch.
#[derive(Debug, Clone)]
pub struct BackwardOutput {
    /// Mean cross-entropy over the batch.
    pub loss: f64,
    pub grads: Gradients,
    /// Gradient of the mean loss with respect to each input row.
    pub input_grad: Option<Matrix>,
}

/// Mean loss and gradients of `CE(softmax(f(x)), targets)`.
///
/// `targets` holds one probability row per input row.
pub fn loss_and_gradients(
    model: &MlpModel,
    x: &Matrix,
    targets: &Matrix,
    want_input_grad: bool,
) -> Result<BackwardOutput> {
    backprop(model, x, targets, true, want_input_grad)
}

/// Gradient of the mean loss with respect to the input rows only.
pub fn input_gradient(model: &MlpModel, x: &Matrix, targets: &Matrix) -> Result<Matrix> {
    let out = backprop(model, x, targets, false, true)?;
    Ok(out.input_grad.expect("requested"))
}

fn backprop(
    model: &MlpModel,
    x: &Matrix,
    targets: &Matrix,
    param_grads: bool,
    want_input_grad: bool,
) -> Result<BackwardOutput> {
    check_width(model, x)?;
    if targets.rows() != x.rows() || targets.cols() != model.n_classes() {
        return Err(Error::shape(format!(
            "targets are {}x{}, expected {}x{}",
            targets.rows(),
            targets.cols(),
            x.rows(),
            model.n_classes()
        )));
    }
    if x.rows() == 0 {
        return Err(Error::shape("empty batch"));
    }
    let n = x.rows() as f64;
    let mut outs = forward_all(model, x);
    let logits = outs.pop().expect("at least one layer");

    let mut loss = 0.0;
    let mut delta = Matrix::zeros(x.rows(), model.n_classes());
    for b in 0..x.rows() {
        let lp = log_softmax(logits.row(b));
        let t = targets.row(b);
        loss += cross_entropy(&lp, t);
        for ((d, &l), &tc) in delta.row_mut(b).iter_mut().zip(&lp).zip(t) {
            *d = (math::exp(l) - tc) / n;
        }
    }
    loss /= n;

    let mut grads = Gradients::zeros_like(model);
    let mut input_grad = None;
    for l in (0..model.layers.len()).rev() {
        let layer = &model.layers[l];
        let input = if l == 0 { x } else { &outs[l - 1] };
        let (rows, fi, fo) = (input.rows(), layer.fan_in, layer.fan_out);
        if param_grads {
            let g = &mut grads.layers[l];
            for b in 0..rows {
                math::axpy(1.0, delta.row(b), &mut g.biases);
            }
            // dW = input^T * delta
            gemm(
                fi,
                rows,
                fo,
                input.as_slice(),
                1,
                fi as isize,
                delta.as_slice(),
                fo as isize,
                1,
                0.0,
                &mut g.weights,
            );
        }
        if l > 0 || want_input_grad {
            // delta * W^T, then the rectifier mask on hidden inputs
            let mut prev = Matrix::zeros(rows, fi);
            gemm(
                rows,
                fo,
                fi,
                delta.as_slice(),
                fo as isize,
                1,
                &layer.weights,
                1,
                fo as isize,
                0.0,
                prev.as_mut_slice(),
            );
            if l > 0 {
                for (p, &a) in prev.as_mut_slice().iter_mut().zip(input.as_slice()) {
                    if a <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
            if l == 0 {
                input_grad = Some(prev);
            } else {
                delta = prev;
            }
        }
    }
    Ok(BackwardOutput {
        loss,
        grads,
        input_grad,
    })
}

/// Parameter gradients of the mean soft-label cross-entropy.
pub fn backward(model: &MlpModel, x: &Matrix, targets: &Matrix) -> Result<Gradients> {
    loss_and_gradients(model, x, targets, false).map(|o| o.grads)
}

/// Mean cross-entropy without gradients.
pub fn mean_loss(model: &MlpModel, x: &Matrix, targets: &Matrix) -> Result<f64> {
    let logits = forward(model, x)?;
    if targets.rows() != x.rows() || targets.cols() != logits.cols() {
        return Err(Error::shape("targets do not match batch"));
    }
    let total: f64 = (0..x.rows())
        .map(|b| cross_entropy(&log_softmax(logits.row(b)), targets.row(b)))
        .sum();
    Ok(total / x.rows() as f64)
}

/// One-hot target rows.
pub fn one_hot_matrix(labels: &[usize], n_classes: usize) -> Matrix {
    let mut m = Matrix::zeros(labels.len(), n_classes);
    for (b, &y) in labels.iter().enumerate() {
        m.set(b, y, 1.0);
    }
    m
}

/// Row-wise softmax of a logit matrix.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut p = logits.clone();
    for b in 0..p.rows() {
        softmax_in_place(p.row_mut(b));
    }
    p
}

/// Classical momentum: `v <- momentum * v + g`, `theta <- theta - lr * v`.
pub fn sgd_step(
    model: &mut MlpModel,
    grads: &Gradients,
    velocity: &mut Velocity,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if grads.layers.len() != model.layers.len() || velocity.0.layers.len() != model.layers.len() {
        return Err(Error::shape("gradient/velocity layer count differs from model"));
    }
    for ((p, g), v) in model
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut velocity.0.layers)
    {
        if p.weights.len() != g.weights.len() || p.biases.len() != g.biases.len() {
            return Err(Error::shape("gradient tensor shape differs from model"));
        }
        for ((pv, gv), vv) in p.values_mut().zip(g.values()).zip(v.values_mut()) {
            *vv = momentum * *vv + gv;
            *pv -= lr * *vv;
        }
    }
    Ok(())
}

/// Hyper-parameters of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden_sizes: Vec<usize>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs at which the learning rate is multiplied by `decay_factor`.
    pub decay_milestones: Vec<usize>,
    pub decay_factor: f64,
    pub seed: u64,
    pub enhancement: EnhancementSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_sizes: vec![512, 256, 128, 128],
            learning_rate: 0.1,
            momentum: 0.9,
            epochs: 100,
            batch_size: 256,
            decay_milestones: vec![75, 90],
            decay_factor: 0.1,
            seed: 0,
            enhancement: EnhancementSpec::None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::param("learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::param("momentum", "must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size", "must be positive"));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return Err(Error::param("decay_factor", "must lie in (0, 1)"));
        }
        if self.decay_milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("decay_milestones", "must be strictly increasing"));
        }
        if self.epochs > 0 && self.decay_milestones.iter().any(|&m| m >= self.epochs) {
            return Err(Error::param("decay_milestones", "must be below the epoch count"));
        }
        if self.hidden_sizes.iter().any(|&h| h == 0) {
            return Err(Error::param("hidden_sizes", "zero-width hidden layer"));
        }
        self.enhancement.validate()
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.decay_milestones.iter().filter(|&&m| m <= epoch).count();
        let mut lr = self.learning_rate;
        for _ in 0..decays {
            lr *= self.decay_factor;
        }
        lr
    }

    pub fn layer_sizes(&self, n_features: usize, n_classes: usize) -> Vec<usize> {
        let mut s = vec![n_features];
        s.extend_from_slice(&self.hidden_sizes);
        s.push(n_classes);
        s
    }
}
