//! Membership-inference scoring rules. Every score follows the convention
//! "higher means more likely a member".
//!
//! Shadow-based attacks use all fleet models except the target. The Gaussian
//! fits are per sample with a floor on the standard deviation, and the
//! calibrated attacks reuse the same per-sample means. Confidences are
//! logit-scaled with `phi(p) = ln(p / (1 - p))`, clamped at `P_MIN`.

use alloc::vec::Vec;

use rand::Rng as _;

use crate::math;
use crate::nn::{log_softmax, softmax, train, Dataset, Matrix, MlpModel, TrainConfig};
use crate::rng::rng_from_seed;
use crate::shadow::{ConfidenceStore, MembershipMatrix};
use crate::{Error, Result};

/// Probabilities are clamped to `[P_MIN, 1 - P_MIN]` before `phi`.
pub const P_MIN: f64 = 1e-5;
/// Lower bound on fitted standard deviations.
pub const SIGMA_FLOOR: f64 = 1e-4;

/// `ln(p / (1 - p))` with clamping.
pub fn phi(p: f64) -> f64 {
    let p = p.clamp(P_MIN, 1.0 - P_MIN);
    math::ln(p / (1.0 - p))
}

/// `phi(softmax(logits)[class])` evaluated as `z_y - logsumexp_{c != y} z_c`,
/// which stays accurate when the probability saturates.
pub fn phi_from_logits(logits: &[f64], class: usize) -> f64 {
    let bound = phi(1.0);
    let zy = logits[class];
    let max = logits
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != class)
        .map(|(_, &z)| z)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return bound;
    }
    let s: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != class)
        .map(|(_, &z)| math::exp(z - max))
        .sum();
    (zy - (max + math::ln(s))).clamp(-bound, bound)
}

/// The seven scoring rules, with their on-disk codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttackId {
    MaxPreCa = 0,
    Loss = 1,
    ModifiedEntropy = 2,
    BinaryClassifier = 3,
    BayesCalibrated = 4,
    DifficultyCalibrated = 5,
    Lira = 6,
}

impl AttackId {
    pub const ALL: [AttackId; 7] = [
        AttackId::MaxPreCa,
        AttackId::Loss,
        AttackId::ModifiedEntropy,
        AttackId::BinaryClassifier,
        AttackId::BayesCalibrated,
        AttackId::DifficultyCalibrated,
        AttackId::Lira,
    ];

    pub fn code(self) -> u32 {
        self as u32
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            AttackId::MaxPreCa => "maxpreca",
            AttackId::Loss => "loss",
            AttackId::ModifiedEntropy => "modified_entropy",
            AttackId::BinaryClassifier => "binary_classifier",
            AttackId::BayesCalibrated => "bayes_calibrated",
            AttackId::DifficultyCalibrated => "difficulty_calibrated",
            AttackId::Lira => "lira",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == name)
    }

    pub fn uses_shadows(self) -> bool {
        matches!(
            self,
            AttackId::BinaryClassifier
                | AttackId::BayesCalibrated
                | AttackId::DifficultyCalibrated
                | AttackId::Lira
        )
    }
}

/// Per-sample scores of one attack against one target model.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackScores {
    pub attack: AttackId,
    pub target: usize,
    pub scores: Vec<f64>,
}

fn check_table(logits: &[f32], n_classes: usize) -> Result<usize> {
    if n_classes == 0 || logits.len() % n_classes != 0 {
        return Err(Error::shape("logit table is not a whole number of rows"));
    }
    Ok(logits.len() / n_classes)
}

fn rows64(logits: &[f32], n_classes: usize) -> impl Iterator<Item = Vec<f64>> + '_ {
    logits
        .chunks_exact(n_classes)
        .map(|r| r.iter().map(|&v| v as f64).collect())
}

fn check_labels(n: usize, labels: &[usize], n_classes: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::shape("label count differs from logit rows"));
    }
    if labels.iter().any(|&y| y >= n_classes) {
        return Err(Error::param("labels", "label out of range"));
    }
    Ok(())
}

/// `max_c softmax(logits)_c`
pub fn score_maxpreca(logits: &[f32], n_classes: usize) -> Result<Vec<f64>> {
    check_table(logits, n_classes)?;
    Ok(rows64(logits, n_classes)
        .map(|r| softmax(&r).into_iter().fold(0.0, f64::max))
        .collect())
}

/// Negative cross-entropy `log softmax(logits)_y`.
pub fn score_loss(logits: &[f32], n_classes: usize, labels: &[usize]) -> Result<Vec<f64>> {
    let n = check_table(logits, n_classes)?;
    check_labels(n, labels, n_classes)?;
    Ok(rows64(logits, n_classes)
        .zip(labels)
        .map(|(r, &y)| log_softmax(&r)[y])
        .collect())
}

/// `(1 - f_y) ln f_y + sum_{c != y} f_c ln(1 - f_c)`, logs clamped at `P_MIN`.
pub fn score_modified_entropy(logits: &[f32], n_classes: usize, labels: &[usize]) -> Result<Vec<f64>> {
    let n = check_table(logits, n_classes)?;
    check_labels(n, labels, n_classes)?;
    let term = |w: f64, q: f64| if w == 0.0 { 0.0 } else { w * math::ln(q.max(P_MIN)) };
    Ok(rows64(logits, n_classes)
        .zip(labels)
        .map(|(r, &y)| {
            let p = softmax(&r);
            let mut s = term(1.0 - p[y], p[y]);
            for (c, &pc) in p.iter().enumerate() {
                if c != y {
                    s += term(pc, 1.0 - pc);
                }
            }
            s
        })
        .collect())
}

/// Which scale the calibrated attacks and their fits use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CalibrationScale {
    #[default]
    Phi,
    Confidence,
}

/// Per-sample IN/OUT Gaussian fits over the shadow models.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFit {
    pub mu_in: Vec<f64>,
    pub sigma_in: Vec<f64>,
    pub mu_out: Vec<f64>,
    pub sigma_out: Vec<f64>,
}

/// Mean and standard deviation (divide by n), the deviation floored at `SIGMA_FLOOR`.
pub fn fit_gaussian(values: &[f64]) -> (f64, f64) {
    let mu = math::mean(values);
    let var = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / values.len() as f64;
    (mu, math::sqrt(var).max(SIGMA_FLOOR))
}

fn sample_value(store: &ConfidenceStore, model: usize, sample: usize, y: usize, scale: CalibrationScale) -> f64 {
    match scale {
        CalibrationScale::Phi => store.phi(model, sample, y),
        CalibrationScale::Confidence => softmax(&store.logit_row_f64(model, sample))[y],
    }
}

fn check_store(store: &ConfidenceStore, matrix: &MembershipMatrix, target: usize, labels: &[usize]) -> Result<()> {
    if store.n_models() != matrix.n_models() || store.n_samples() != matrix.n_samples() {
        return Err(Error::shape("store and membership matrix disagree"));
    }
    if target >= store.n_models() {
        return Err(Error::param("target", "index out of range"));
    }
    check_labels(store.n_samples(), labels, store.n_classes())
}

/// Fits IN and OUT Gaussians per sample over every model except `target`.
pub fn fit_in_out(
    store: &ConfidenceStore,
    matrix: &MembershipMatrix,
    target: usize,
    labels: &[usize],
    scale: CalibrationScale,
) -> Result<GaussianFit> {
    check_store(store, matrix, target, labels)?;
    let n = store.n_samples();
    let mut fit = GaussianFit {
        mu_in: Vec::with_capacity(n),
        sigma_in: Vec::with_capacity(n),
        mu_out: Vec::with_capacity(n),
        sigma_out: Vec::with_capacity(n),
    };
    let mut ins = Vec::new();
    let mut outs = Vec::new();
    for (j, &y) in labels.iter().enumerate() {
        ins.clear();
        outs.clear();
        for m in (0..store.n_models()).filter(|&m| m != target) {
            let v = sample_value(store, m, j, y, scale);
            if matrix.is_member(m, j) {
                ins.push(v);
            } else {
                outs.push(v);
            }
        }
        if ins.len() < 2 || outs.len() < 2 {
            return Err(Error::InsufficientShadows {
                sample: j,
                n_in: ins.len(),
                n_out: outs.len(),
            });
        }
        let (mi, si) = fit_gaussian(&ins);
        let (mo, so) = fit_gaussian(&outs);
        fit.mu_in.push(mi);
        fit.sigma_in.push(si);
        fit.mu_out.push(mo);
        fit.sigma_out.push(so);
    }
    Ok(fit)
}

/// The target's per-sample value on the chosen scale.
pub fn target_values(
    store: &ConfidenceStore,
    target: usize,
    labels: &[usize],
    scale: CalibrationScale,
) -> Vec<f64> {
    labels
        .iter()
        .enumerate()
        .map(|(j, &y)| sample_value(store, target, j, y, scale))
        .collect()
}

/// Log-density of `N(mu, sigma^2)`.
pub fn normal_logpdf(x: f64, mu: f64, sigma: f64) -> f64 {
    const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;
    let z = (x - mu) / sigma;
    -HALF_LN_2PI - math::ln(sigma) - 0.5 * z * z
}

fn check_fit(values: &[f64], fit: &GaussianFit) -> Result<()> {
    if fit.mu_in.len() != values.len() {
        return Err(Error::shape("fit length differs from target values"));
    }
    Ok(())
}

/// `log N(phi_t; mu_in, s_in^2) - log N(phi_t; mu_out, s_out^2)`
pub fn score_lira(target_phi: &[f64], fit: &GaussianFit) -> Result<Vec<f64>> {
    check_fit(target_phi, fit)?;
    Ok(target_phi
        .iter()
        .enumerate()
        .map(|(j, &x)| {
            normal_logpdf(x, fit.mu_in[j], fit.sigma_in[j])
                - normal_logpdf(x, fit.mu_out[j], fit.sigma_out[j])
        })
        .collect())
}

/// `f_y - (mu_in + mu_out) / 2`
pub fn score_bayes_calibrated(target_values: &[f64], fit: &GaussianFit) -> Result<Vec<f64>> {
    check_fit(target_values, fit)?;
    Ok(target_values
        .iter()
        .enumerate()
        .map(|(j, &x)| x - (fit.mu_in[j] + fit.mu_out[j]) / 2.0)
        .collect())
}

/// `f_y - mu_out`
pub fn score_difficulty_calibrated(target_values: &[f64], fit: &GaussianFit) -> Result<Vec<f64>> {
    check_fit(target_values, fit)?;
    Ok(target_values
        .iter()
        .zip(&fit.mu_out)
        .map(|(&x, &mo)| x - mo)
        .collect())
}

/// Shadow-trained membership classifier.
///
/// Input per (model, sample) is the raw logit row followed by the one-hot
/// label; the network is `[2C, hidden..., 2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryClassifierConfig {
    pub k_shadows: usize,
    pub hidden_sizes: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for BinaryClassifierConfig {
    fn default() -> Self {
        BinaryClassifierConfig {
            k_shadows: 10,
            hidden_sizes: alloc::vec![64],
            epochs: 10,
            learning_rate: 0.05,
            batch_size: 128,
            seed: 0,
        }
    }
}

fn classifier_features(store: &ConfidenceStore, model: usize, labels: &[usize]) -> Matrix {
    let c = store.n_classes();
    let mut x = Matrix::zeros(labels.len(), 2 * c);
    for (j, &y) in labels.iter().enumerate() {
        let row = x.row_mut(j);
        for (dst, &v) in row[..c].iter_mut().zip(store.logit_row(model, j)) {
            *dst = v as f64;
        }
        row[c + y] = 1.0;
    }
    x
}

/// Picks `k` shadow models (never the target) for the classifier.
pub fn pick_shadows(n_models: usize, target: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 || k >= n_models {
        return Err(Error::param(
            "k_shadows",
            alloc::format!("{k} shadows requested from a fleet of {n_models}"),
        ));
    }
    let mut pool: Vec<usize> = (0..n_models).filter(|&m| m != target).collect();
    let mut rng = rng_from_seed(seed);
    for i in 0..k {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(k);
    Ok(pool)
}

/// Trains the membership classifier on the given shadow models.
pub fn train_membership_classifier(
    store: &ConfidenceStore,
    matrix: &MembershipMatrix,
    shadows: &[usize],
    labels: &[usize],
    cfg: &BinaryClassifierConfig,
) -> Result<MlpModel> {
    let n = store.n_samples();
    let c = store.n_classes();
    let mut data = Vec::with_capacity(shadows.len() * n * 2 * c);
    let mut member = Vec::with_capacity(shadows.len() * n);
    for &m in shadows {
        data.extend_from_slice(classifier_features(store, m, labels).as_slice());
        member.extend((0..n).map(|j| usize::from(matrix.is_member(m, j))));
    }
    let dataset = Dataset::new(Matrix::from_vec(shadows.len() * n, 2 * c, data)?, member, 2)?;
    let config = TrainConfig {
        hidden_sizes: cfg.hidden_sizes.clone(),
        learning_rate: cfg.learning_rate,
        momentum: 0.9,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        decay_milestones: Vec::new(),
        decay_factor: 0.1,
        seed: cfg.seed,
        enhancement: crate::augment::EnhancementSpec::None,
    };
    let rows: Vec<usize> = (0..dataset.n_samples()).collect();
    train(&dataset, &rows, &config)
}

/// Member-class probability of the shadow-trained classifier on the target's outputs.
pub fn score_binary_classifier(
    store: &ConfidenceStore,
    matrix: &MembershipMatrix,
    target: usize,
    labels: &[usize],
    cfg: &BinaryClassifierConfig,
) -> Result<Vec<f64>> {
    check_store(store, matrix, target, labels)?;
    let shadows = pick_shadows(store.n_models(), target, cfg.k_shadows, cfg.seed)?;
    let clf = train_membership_classifier(store, matrix, &shadows, labels, cfg)?;
    let logits = crate::nn::forward(&clf, &classifier_features(store, target, labels))?;
    Ok(logits.iter_rows().map(|r| softmax(r)[1]).collect())
}

/// Options shared by [`run_attack`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttackOptions {
    pub calibration_scale: CalibrationScale,
    pub binary: BinaryClassifierConfig,
}

/// Scores `target` with one attack; shadow-based attacks use the rest of the fleet.
pub fn run_attack(
    attack: AttackId,
    store: &ConfidenceStore,
    matrix: &MembershipMatrix,
    target: usize,
    labels: &[usize],
    opts: &AttackOptions,
) -> Result<AttackScores> {
    check_store(store, matrix, target, labels)?;
    let c = store.n_classes();
    let logits = store.model_logits(target);
    let scores = match attack {
        AttackId::MaxPreCa => score_maxpreca(logits, c)?,
        AttackId::Loss => score_loss(logits, c, labels)?,
        AttackId::ModifiedEntropy => score_modified_entropy(logits, c, labels)?,
        AttackId::BinaryClassifier => score_binary_classifier(store, matrix, target, labels, &opts.binary)?,
        AttackId::Lira => {
            let fit = fit_in_out(store, matrix, target, labels, CalibrationScale::Phi)?;
            score_lira(&target_values(store, target, labels, CalibrationScale::Phi), &fit)?
        }
        AttackId::BayesCalibrated | AttackId::DifficultyCalibrated => {
            let scale = opts.calibration_scale;
            let fit = fit_in_out(store, matrix, target, labels, scale)?;
            let values = target_values(store, target, labels, scale);
            if attack == AttackId::BayesCalibrated {
                score_bayes_calibrated(&values, &fit)?
            } else {
                score_difficulty_calibrated(&values, &fit)?
            }
        }
    };
    Ok(AttackScores {
        attack,
        target,
        scores,
    })
}
