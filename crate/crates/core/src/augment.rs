//! Data-augmentation transforms applied to each training batch.
//!
//! A transform maps a batch of `(x, y)` pairs to one or more weighted parts
//! `(x~, y~, w)`; the training gradient is `sum_k w_k * grad CE(f(x~_k), y~_k)`.
//! Pure augmentations produce a single part of weight 1. Adversarial kinds
//! are dispatched to [`crate::advtrain`].
//!
//! The cutout analog masks a contiguous block of `size` features (flat
//! vectors have no spatial layout to take a square from).

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Beta, Distribution, Normal};

use crate::advtrain::{self, AdvConfig};
use crate::nn::{
    forward, loss_and_gradients, one_hot_matrix, softmax_in_place, Batch, Gradients, Matrix,
    MlpModel, SoftLabel,
};
use crate::rng::Rng;
use crate::{Error, Result};

/// Which enhancement to apply during training, with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum EnhancementSpec {
    None,
    LabelSmooth { epsilon: f64 },
    /// Each label is replaced by a uniformly drawn wrong class with probability `rate`.
    DisturbLabel { rate: f64 },
    GaussianNoise { sigma: f64 },
    FeatureCutout { size: usize },
    Mixup { alpha: f64 },
    ZeroOneFlip { ratio: f64 },
    Distillation { temperature: f64 },
    PgdAt { adv: AdvConfig },
    Trades { adv: AdvConfig, lambda: f64 },
    Awp { adv: AdvConfig, gamma: f64 },
    TradesAwp { adv: AdvConfig, lambda: f64, gamma: f64 },
}

impl EnhancementSpec {
    pub const KIND_NAMES: [&'static str; 12] = [
        "none",
        "label_smooth",
        "disturb_label",
        "gaussian_noise",
        "feature_cutout",
        "mixup",
        "zero_one_flip",
        "distillation",
        "pgd_at",
        "trades",
        "awp",
        "trades_awp",
    ];

    pub fn kind_name(&self) -> &'static str {
        match self {
            EnhancementSpec::None => "none",
            EnhancementSpec::LabelSmooth { .. } => "label_smooth",
            EnhancementSpec::DisturbLabel { .. } => "disturb_label",
            EnhancementSpec::GaussianNoise { .. } => "gaussian_noise",
            EnhancementSpec::FeatureCutout { .. } => "feature_cutout",
            EnhancementSpec::Mixup { .. } => "mixup",
            EnhancementSpec::ZeroOneFlip { .. } => "zero_one_flip",
            EnhancementSpec::Distillation { .. } => "distillation",
            EnhancementSpec::PgdAt { .. } => "pgd_at",
            EnhancementSpec::Trades { .. } => "trades",
            EnhancementSpec::Awp { .. } => "awp",
            EnhancementSpec::TradesAwp { .. } => "trades_awp",
        }
    }

    pub fn is_adversarial(&self) -> bool {
        self.adv().is_some()
    }

    pub fn adv(&self) -> Option<&AdvConfig> {
        match self {
            EnhancementSpec::PgdAt { adv }
            | EnhancementSpec::Trades { adv, .. }
            | EnhancementSpec::Awp { adv, .. }
            | EnhancementSpec::TradesAwp { adv, .. } => Some(adv),
            _ => None,
        }
    }

    /// Checks parameter domains that do not depend on the data.
    pub fn validate(&self) -> Result<()> {
        match *self {
            EnhancementSpec::None => Ok(()),
            EnhancementSpec::LabelSmooth { epsilon } => check_open_unit("epsilon", epsilon),
            EnhancementSpec::DisturbLabel { rate } => check_closed_unit("rate", rate),
            EnhancementSpec::GaussianNoise { sigma } => {
                if sigma >= 0.0 && sigma.is_finite() {
                    Ok(())
                } else {
                    Err(Error::param("sigma", "must be finite and >= 0"))
                }
            }
            EnhancementSpec::FeatureCutout { .. } => Ok(()),
            EnhancementSpec::Mixup { alpha } => {
                if alpha > 0.0 && alpha.is_finite() {
                    Ok(())
                } else {
                    Err(Error::param("alpha", "must be positive"))
                }
            }
            EnhancementSpec::ZeroOneFlip { ratio } => check_closed_unit("ratio", ratio),
            EnhancementSpec::Distillation { temperature } => check_temperature(temperature),
            EnhancementSpec::PgdAt { ref adv } => adv.validate(),
            EnhancementSpec::Trades { ref adv, lambda } => {
                adv.validate()?;
                check_lambda(lambda)
            }
            EnhancementSpec::Awp { ref adv, gamma } => {
                adv.validate()?;
                check_gamma(gamma)
            }
            EnhancementSpec::TradesAwp {
                ref adv,
                lambda,
                gamma,
            } => {
                adv.validate()?;
                check_lambda(lambda)?;
                check_gamma(gamma)
            }
        }
    }
}

fn check_open_unit(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::param(name, alloc::format!("{v} is outside (0, 1)")))
    }
}

fn check_closed_unit(name: &'static str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::param(name, alloc::format!("{v} is outside [0, 1]")))
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::param("temperature", "must be positive"))
    }
}

pub(crate) fn check_lambda(l: f64) -> Result<()> {
    if l > 0.0 {
        Ok(())
    } else {
        Err(Error::param("lambda", "must be positive"))
    }
}

fn check_gamma(g: f64) -> Result<()> {
    if g >= 0.0 && g.is_finite() {
        Ok(())
    } else {
        Err(Error::param("gamma", "must be finite and >= 0"))
    }
}

/// `p_y = 1 - (n-1) eps / n`, every other class `eps / n`.
pub fn label_smooth(y: usize, n_classes: usize, epsilon: f64) -> Result<SoftLabel> {
    check_open_unit("epsilon", epsilon)?;
    if y >= n_classes {
        return Err(Error::param("y", "label out of range"));
    }
    let n = n_classes as f64;
    let mut p = vec![epsilon / n; n_classes];
    p[y] = 1.0 - (n - 1.0) * epsilon / n;
    SoftLabel::new(p)
}

/// Keeps `y` with probability `1 - rate`, else a uniform wrong class.
pub fn disturb_label(y: usize, n_classes: usize, rate: f64, rng: &mut Rng) -> Result<usize> {
    check_closed_unit("rate", rate)?;
    if rate > 0.0 && n_classes < 2 {
        return Err(Error::param("n_classes", "label disturbance needs at least two classes"));
    }
    if rng.random::<f64>() < rate {
        let k = rng.random_range(0..n_classes - 1);
        Ok(if k >= y { k + 1 } else { k })
    } else {
        Ok(y)
    }
}

/// `x + N(0, sigma^2 I)`.
pub fn gaussian_noise(x: &[f64], sigma: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::param("sigma", "must be finite and >= 0"));
    }
    if sigma == 0.0 {
        return Ok(x.to_vec());
    }
    let normal = Normal::new(0.0, sigma).map_err(|_| Error::param("sigma", "invalid"))?;
    Ok(x.iter().map(|&v| v + normal.sample(rng)).collect())
}

/// Zeroes a uniformly placed block of `size` consecutive features.
pub fn feature_cutout(x: &[f64], size: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    if size > x.len() {
        return Err(Error::param(
            "size",
            alloc::format!("cutout of {size} exceeds {} features", x.len()),
        ));
    }
    let mut out = x.to_vec();
    if size == 0 {
        return Ok(out);
    }
    let start = rng.random_range(0..=x.len() - size);
    out[start..start + size].fill(0.0);
    Ok(out)
}

/// Blend with a fixed ratio: `gamma * (x0, e_y0) + (1 - gamma) * (x1, e_y1)`.
pub fn mixup_with_ratio(
    x0: &[f64],
    y0: usize,
    x1: &[f64],
    y1: usize,
    gamma: f64,
    n_classes: usize,
) -> Result<(Vec<f64>, SoftLabel)> {
    if x0.len() != x1.len() {
        return Err(Error::shape("mixup partners differ in width"));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::param("gamma", "mixing ratio must lie in [0, 1]"));
    }
    let x = x0
        .iter()
        .zip(x1)
        .map(|(&a, &b)| gamma * a + (1.0 - gamma) * b)
        .collect();
    let mut p = vec![0.0; n_classes];
    p[y0] += gamma;
    p[y1] += 1.0 - gamma;
    Ok((x, SoftLabel::new(p)?))
}

/// Mixup with `gamma ~ Beta(alpha, alpha)`.
pub fn mixup(
    x0: &[f64],
    y0: usize,
    x1: &[f64],
    y1: usize,
    alpha: f64,
    n_classes: usize,
    rng: &mut Rng,
) -> Result<(Vec<f64>, SoftLabel)> {
    let beta = Beta::new(alpha, alpha).map_err(|_| Error::param("alpha", "must be positive"))?;
    let gamma: f64 = beta.sample(rng);
    mixup_with_ratio(x0, y0, x1, y1, gamma, n_classes)
}

/// Complements `round(ratio * n)` uniformly chosen coordinates of a 0/1 vector.
pub fn zero_one_flip(x: &[f64], ratio: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    check_closed_unit("ratio", ratio)?;
    if let Some((index, &value)) = x.iter().enumerate().find(|(_, &v)| v != 0.0 && v != 1.0) {
        return Err(Error::NonBinaryInput { index, value });
    }
    let n = x.len();
    let k = (crate::math::round(ratio * n as f64) as usize).min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    let mut out = x.to_vec();
    for &i in &idx[..k] {
        out[i] = 1.0 - out[i];
    }
    Ok(out)
}

/// Tempered soft outputs `softmax(f_aux(x) / T)` of an auxiliary model.
pub fn distill_targets(aux_model: &MlpModel, x: &Matrix, temperature: f64) -> Result<Matrix> {
    check_temperature(temperature)?;
    let mut logits = forward(aux_model, x)?;
    for b in 0..logits.rows() {
        let row = logits.row_mut(b);
        row.iter_mut().for_each(|v| *v /= temperature);
        softmax_in_place(row);
    }
    Ok(logits)
}

/// One weighted component of an enhanced batch.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedPart {
    pub features: Matrix,
    /// One probability row per feature row.
    pub targets: Matrix,
    pub weight: f64,
}

/// Batch after enhancement: the loss is the weighted sum of per-part mean losses.
#[derive(Debug, Clone, PartialEq)]
pub struct EnhancedBatch {
    pub parts: Vec<WeightedPart>,
}

impl EnhancedBatch {
    pub fn single(features: Matrix, targets: Matrix) -> Self {
        EnhancedBatch {
            parts: vec![WeightedPart {
                features,
                targets,
                weight: 1.0,
            }],
        }
    }

    pub fn loss_and_gradients(&self, model: &MlpModel) -> Result<(f64, Gradients)> {
        if let [part] = self.parts.as_slice() {
            if part.weight == 1.0 {
                let out = loss_and_gradients(model, &part.features, &part.targets, false)?;
                return Ok((out.loss, out.grads));
            }
        }
        let mut total = Gradients::zeros_like(model);
        let mut loss = 0.0;
        for part in &self.parts {
            let out = loss_and_gradients(model, &part.features, &part.targets, false)?;
            total.add_scaled(&out.grads, part.weight);
            loss += part.weight * out.loss;
        }
        Ok((loss, total))
    }

    pub fn gradients(&self, model: &MlpModel) -> Result<Gradients> {
        self.loss_and_gradients(model).map(|(_, g)| g)
    }

    pub fn loss(&self, model: &MlpModel) -> Result<f64> {
        let mut loss = 0.0;
        for part in &self.parts {
            loss += part.weight * crate::nn::mean_loss(model, &part.features, &part.targets)?;
        }
        Ok(loss)
    }
}

/// Models visible to a transform: the one being trained and, for
/// distillation, the auxiliary teacher.
#[derive(Debug, Clone, Copy)]
pub struct ModelContext<'a> {
    pub model: &'a MlpModel,
    pub teacher: Option<&'a MlpModel>,
}

fn map_rows(
    batch: &Batch,
    mut f: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<Matrix> {
    let mut out = Matrix::zeros(batch.features.rows(), batch.features.cols());
    for b in 0..batch.features.rows() {
        let row = f(batch.features.row(b))?;
        out.row_mut(b).copy_from_slice(&row);
    }
    Ok(out)
}

/// Applies `spec` to a batch. `none` returns the batch with one-hot labels.
pub fn apply_enhancement(
    spec: &EnhancementSpec,
    batch: &Batch,
    n_classes: usize,
    ctx: &ModelContext<'_>,
    rng: &mut Rng,
) -> Result<EnhancedBatch> {
    spec.validate()?;
    let one_hot = || one_hot_matrix(&batch.labels, n_classes);
    match *spec {
        EnhancementSpec::None => Ok(EnhancedBatch::single(batch.features.clone(), one_hot())),
        EnhancementSpec::LabelSmooth { epsilon } => {
            let mut t = Matrix::zeros(batch.labels.len(), n_classes);
            for (b, &y) in batch.labels.iter().enumerate() {
                t.row_mut(b)
                    .copy_from_slice(label_smooth(y, n_classes, epsilon)?.as_slice());
            }
            Ok(EnhancedBatch::single(batch.features.clone(), t))
        }
        EnhancementSpec::DisturbLabel { rate } => {
            let labels = batch
                .labels
                .iter()
                .map(|&y| disturb_label(y, n_classes, rate, rng))
                .collect::<Result<Vec<_>>>()?;
            Ok(EnhancedBatch::single(
                batch.features.clone(),
                one_hot_matrix(&labels, n_classes),
            ))
        }
        EnhancementSpec::GaussianNoise { sigma } => {
            let x = map_rows(batch, |r| gaussian_noise(r, sigma, rng))?;
            Ok(EnhancedBatch::single(x, one_hot()))
        }
        EnhancementSpec::FeatureCutout { size } => {
            let x = map_rows(batch, |r| feature_cutout(r, size, rng))?;
            Ok(EnhancedBatch::single(x, one_hot()))
        }
        EnhancementSpec::ZeroOneFlip { ratio } => {
            let x = map_rows(batch, |r| zero_one_flip(r, ratio, rng))?;
            Ok(EnhancedBatch::single(x, one_hot()))
        }
        EnhancementSpec::Mixup { alpha } => {
            let n = batch.labels.len();
            let mut partner: Vec<usize> = (0..n).collect();
            partner.shuffle(rng);
            let mut x = Matrix::zeros(n, batch.features.cols());
            let mut t = Matrix::zeros(n, n_classes);
            for b in 0..n {
                let p = partner[b];
                let (row, label) = mixup(
                    batch.features.row(b),
                    batch.labels[b],
                    batch.features.row(p),
                    batch.labels[p],
                    alpha,
                    n_classes,
                    rng,
                )?;
                x.row_mut(b).copy_from_slice(&row);
                t.row_mut(b).copy_from_slice(label.as_slice());
            }
            Ok(EnhancedBatch::single(x, t))
        }
        EnhancementSpec::Distillation { temperature } => {
            let teacher = ctx.teacher.ok_or_else(|| {
                Error::param("teacher", "distillation needs an auxiliary model")
            })?;
            let t = distill_targets(teacher, &batch.features, temperature)?;
            Ok(EnhancedBatch::single(batch.features.clone(), t))
        }
        EnhancementSpec::PgdAt { ref adv } | EnhancementSpec::Awp { ref adv, .. } => {
            advtrain::pgd_at_batch(ctx.model, batch, adv, rng)
        }
        EnhancementSpec::Trades { ref adv, lambda }
        | EnhancementSpec::TradesAwp { ref adv, lambda, .. } => {
            advtrain::trades_batch(ctx.model, batch, adv, lambda, rng)
        }
    }
}

/// Gradients of one training step under `spec`, including the weight
/// perturbation of the AWP variants.
pub fn enhancement_gradients(
    spec: &EnhancementSpec,
    batch: &Batch,
    n_classes: usize,
    ctx: &ModelContext<'_>,
    rng: &mut Rng,
) -> Result<Gradients> {
    let enhanced = apply_enhancement(spec, batch, n_classes, ctx, rng)?;
    match *spec {
        EnhancementSpec::Awp { gamma, .. } | EnhancementSpec::TradesAwp { gamma, .. } => {
            advtrain::awp_gradients(ctx.model, &enhanced, gamma)
        }
        _ => enhanced.gradients(ctx.model),
    }
}
