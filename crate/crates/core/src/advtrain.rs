//! l-infinity PGD and the adversarial-training objectives built on it:
//! PGD-AT, TRADES, AWP and TRADES-AWP.
//!
//! AWP takes a single weight-ascent step per batch. Each layer (weights and
//! biases together) moves by `gamma * |theta_l| * g_l / |g_l|`, the descent
//! gradient is evaluated at the perturbed weights, and the perturbation is
//! discarded before the optimizer update.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::augment::{check_lambda, EnhancedBatch, WeightedPart};
use crate::math;
use crate::nn::{
    forward, input_gradient, one_hot_matrix, softmax_rows, Batch, Dataset, Gradients, Matrix,
    MlpModel,
};
use crate::rng::Rng;
use crate::{Error, Result};

/// PGD parameters; `epsilon` is in raw feature units.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvConfig {
    pub epsilon: f64,
    pub step_size: f64,
    pub iters: usize,
    pub random_start: bool,
    /// Optional `(lo, hi)` box every adversarial example is clamped into.
    pub clamp: Option<(f64, f64)>,
}

impl AdvConfig {
    /// Training-time defaults: step `epsilon / 8`, 10 steps, random start.
    pub fn training(epsilon: f64) -> Self {
        AdvConfig {
            epsilon,
            step_size: epsilon / 8.0,
            iters: 10,
            random_start: true,
            clamp: None,
        }
    }

    /// Evaluation defaults: step `epsilon / 8`, 20 steps, no random start.
    pub fn evaluation(epsilon: f64) -> Self {
        AdvConfig {
            epsilon,
            step_size: epsilon / 8.0,
            iters: 20,
            random_start: false,
            clamp: None,
        }
    }

    pub fn with_clamp(mut self, lo: f64, hi: f64) -> Self {
        self.clamp = Some((lo, hi));
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::param("epsilon", "must be finite and >= 0"));
        }
        if self.iters > 0 && self.epsilon > 0.0 && !(self.step_size > 0.0) {
            return Err(Error::param("step_size", "must be positive when iters > 0"));
        }
        if let Some((lo, hi)) = self.clamp {
            if !(lo <= hi) {
                return Err(Error::param("clamp", "lower bound exceeds upper bound"));
            }
        }
        Ok(())
    }
}

/// What the inner maximization ascends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgdObjective {
    /// Cross-entropy against the true label.
    CrossEntropy,
    /// Cross-entropy against the model's (fixed) clean prediction.
    KlVsClean,
}

#[inline]
fn project(v: f64, center: f64, cfg: &AdvConfig) -> f64 {
    let mut p = v.max(center - cfg.epsilon).min(center + cfg.epsilon);
    if let Some((lo, hi)) = cfg.clamp {
        p = p.max(lo).min(hi);
    }
    p
}

/// Sign-gradient ascent inside the `epsilon` ball around each row of `x`.
pub fn pgd_attack(
    model: &MlpModel,
    x: &Matrix,
    labels: &[usize],
    cfg: &AdvConfig,
    objective: PgdObjective,
    rng: &mut Rng,
) -> Result<Matrix> {
    cfg.validate()?;
    if labels.len() != x.rows() {
        return Err(Error::shape("label count differs from batch rows"));
    }
    if x.cols() != model.input_dim() {
        return Err(Error::shape("batch width differs from model input"));
    }
    if cfg.epsilon == 0.0 {
        return Ok(x.clone());
    }
    let targets = match objective {
        PgdObjective::CrossEntropy => one_hot_matrix(labels, model.n_classes()),
        PgdObjective::KlVsClean => softmax_rows(&forward(model, x)?),
    };
    let mut adv = x.clone();
    if cfg.random_start {
        for (a, &c) in adv.as_mut_slice().iter_mut().zip(x.as_slice()) {
            let u: f64 = rng.random_range(-cfg.epsilon..=cfg.epsilon);
            *a = project(c + u, c, cfg);
        }
    }
    for _ in 0..cfg.iters {
        let g = input_gradient(model, &adv, &targets)?;
        for ((a, &c), &gi) in adv
            .as_mut_slice()
            .iter_mut()
            .zip(x.as_slice())
            .zip(g.as_slice())
        {
            *a = project(*a + cfg.step_size * math::signum0(gi), c, cfg);
        }
    }
    Ok(adv)
}

/// PGD-AT: train on `(x_adv, one-hot y)`.
pub fn pgd_at_batch(
    model: &MlpModel,
    batch: &Batch,
    cfg: &AdvConfig,
    rng: &mut Rng,
) -> Result<EnhancedBatch> {
    let x_adv = pgd_attack(
        model,
        &batch.features,
        &batch.labels,
        cfg,
        PgdObjective::CrossEntropy,
        rng,
    )?;
    Ok(EnhancedBatch::single(
        x_adv,
        one_hot_matrix(&batch.labels, model.n_classes()),
    ))
}

/// TRADES as a weighted batch: `(x, y)` with weight 1 and
/// `(x_adv, stopgrad softmax f(x))` with weight `1 / lambda`.
pub fn trades_batch(
    model: &MlpModel,
    batch: &Batch,
    cfg: &AdvConfig,
    lambda: f64,
    rng: &mut Rng,
) -> Result<EnhancedBatch> {
    check_lambda(lambda)?;
    let x_adv = pgd_attack(
        model,
        &batch.features,
        &batch.labels,
        cfg,
        PgdObjective::KlVsClean,
        rng,
    )?;
    let clean_probs = softmax_rows(&forward(model, &batch.features)?);
    Ok(EnhancedBatch {
        parts: vec![
            WeightedPart {
                features: batch.features.clone(),
                targets: one_hot_matrix(&batch.labels, model.n_classes()),
                weight: 1.0,
            },
            WeightedPart {
                features: x_adv,
                targets: clean_probs,
                weight: 1.0 / lambda,
            },
        ],
    })
}

/// `L(f(x), y) + L(f(x), f(x_adv)) / lambda` and its parameter gradients.
pub fn trades_loss(
    model: &MlpModel,
    x: &Matrix,
    labels: &[usize],
    cfg: &AdvConfig,
    lambda: f64,
    rng: &mut Rng,
) -> Result<(f64, Gradients)> {
    let batch = Batch {
        features: x.clone(),
        labels: labels.to_vec(),
    };
    trades_batch(model, &batch, cfg, lambda, rng)?.loss_and_gradients(model)
}

/// Layer-wise weight perturbation `gamma * |theta_l| * g_l / |g_l|`.
pub fn awp_perturb(model: &MlpModel, batch: &EnhancedBatch, gamma: f64) -> Result<Gradients> {
    if !(gamma >= 0.0) {
        return Err(Error::param("gamma", "must be >= 0"));
    }
    let mut v = batch.gradients(model)?;
    for (vl, pl) in v.layers.iter_mut().zip(model.layers()) {
        let gnorm = vl.norm();
        let scale = if gnorm > 0.0 {
            gamma * pl.norm() / gnorm
        } else {
            0.0
        };
        vl.weights.iter_mut().for_each(|x| *x *= scale);
        vl.biases.iter_mut().for_each(|x| *x *= scale);
    }
    Ok(v)
}

/// Perturb, take the descent gradient at the perturbed weights, restore.
pub fn awp_gradients(model: &MlpModel, batch: &EnhancedBatch, gamma: f64) -> Result<Gradients> {
    if gamma == 0.0 {
        return batch.gradients(model);
    }
    let v = awp_perturb(model, batch, gamma)?;
    let perturbed = model.perturbed(&v);
    batch.gradients(&perturbed)
}

/// TRADES-AWP step gradients.
pub fn trades_awp_batch(
    model: &MlpModel,
    batch: &Batch,
    cfg: &AdvConfig,
    lambda: f64,
    gamma: f64,
    rng: &mut Rng,
) -> Result<Gradients> {
    let enhanced = trades_batch(model, batch, cfg, lambda, rng)?;
    awp_gradients(model, &enhanced, gamma)
}

/// Clean and PGD accuracy of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessReport {
    pub clean_accuracy: f64,
    pub adversarial_accuracy: f64,
    pub eval: AdvConfig,
}

/// Fraction of samples still classified correctly after a cross-entropy PGD attack.
pub fn robust_accuracy(
    model: &MlpModel,
    dataset: &Dataset,
    eval_cfg: &AdvConfig,
    rng: &mut Rng,
) -> Result<RobustnessReport> {
    const CHUNK: usize = 512;
    let n = dataset.n_samples();
    let mut clean = 0usize;
    let mut robust = 0usize;
    let rows: Vec<usize> = (0..n).collect();
    for chunk in rows.chunks(CHUNK) {
        let batch = dataset.batch(chunk);
        let logits = forward(model, &batch.features)?;
        let x_adv = pgd_attack(
            model,
            &batch.features,
            &batch.labels,
            eval_cfg,
            PgdObjective::CrossEntropy,
            rng,
        )?;
        let adv_logits = forward(model, &x_adv)?;
        for (b, &y) in batch.labels.iter().enumerate() {
            clean += usize::from(math::argmax(logits.row(b)) == y);
            robust += usize::from(math::argmax(adv_logits.row(b)) == y);
        }
    }
    Ok(RobustnessReport {
        clean_accuracy: clean as f64 / n as f64,
        adversarial_accuracy: robust as f64 / n as f64,
        eval: eval_cfg.clone(),
    })
}

#[cfg(test)]
mod tests;
