//! Shadow-fleet bookkeeping: the balanced membership matrix, per-model
//! training, fleet querying and the confidence store every attack reads.
//!
//! Membership is drawn per sample: each sample independently picks a uniform
//! subset of exactly `M / 2` models that train on it. Per-model training-set
//! sizes therefore concentrate around `N / 2` without being fixed.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Beta, Distribution};

use crate::attacks::phi_from_logits;
use crate::augment::{self, EnhancementSpec};
use crate::math;
use crate::nn::{forward, train, Dataset, Matrix, MlpModel, TrainConfig};
use crate::rng::{mix_seed, rng_from_seed, stream};
use crate::{Error, Result};

/// `M x N` membership bits; row `m` is model `m`'s training set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MembershipMatrix {
    n_models: usize,
    n_samples: usize,
    bits: Vec<bool>,
}

impl MembershipMatrix {
    /// Wraps raw row-major bits. Balance is not enforced; see [`Self::check_balanced`].
    pub fn from_bits(n_models: usize, n_samples: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != n_models * n_samples {
            return Err(Error::shape(alloc::format!(
                "{} bits for a {n_models}x{n_samples} membership matrix",
                bits.len()
            )));
        }
        Ok(MembershipMatrix {
            n_models,
            n_samples,
            bits,
        })
    }

    pub fn n_models(&self) -> usize {
        self.n_models
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    #[inline]
    pub fn is_member(&self, model: usize, sample: usize) -> bool {
        self.bits[model * self.n_samples + sample]
    }

    pub fn row(&self, model: usize) -> &[bool] {
        &self.bits[model * self.n_samples..(model + 1) * self.n_samples]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn member_rows(&self, model: usize) -> Vec<usize> {
        (0..self.n_samples)
            .filter(|&j| self.is_member(model, j))
            .collect()
    }

    pub fn column_count(&self, sample: usize) -> usize {
        (0..self.n_models)
            .filter(|&m| self.is_member(m, sample))
            .count()
    }

    pub fn row_count(&self, model: usize) -> usize {
        self.row(model).iter().filter(|&&b| b).count()
    }

    /// Every sample is IN for exactly half of the models.
    pub fn check_balanced(&self) -> Result<()> {
        if self.n_models % 2 != 0 {
            return Err(Error::param("n_models", "odd model count cannot be balanced"));
        }
        for j in 0..self.n_samples {
            let c = self.column_count(j);
            if c != self.n_models / 2 {
                return Err(Error::param(
                    "membership",
                    alloc::format!("sample {j} is IN for {c} of {} models", self.n_models),
                ));
            }
        }
        Ok(())
    }
}

/// Balanced matrix: for each sample a uniform `M / 2` subset of models is IN.
pub fn make_membership_matrix(n_models: usize, n_samples: usize, seed: u64) -> Result<MembershipMatrix> {
    if n_models < 2 || n_models % 2 != 0 {
        return Err(Error::param("n_models", alloc::format!("{n_models} is not an even count >= 2")));
    }
    let half = n_models / 2;
    let mut rng = rng_from_seed(seed);
    let mut bits = vec![false; n_models * n_samples];
    let mut perm: Vec<usize> = (0..n_models).collect();
    for j in 0..n_samples {
        for i in 0..half {
            let k = rng.random_range(i..n_models);
            perm.swap(i, k);
        }
        for &m in &perm[..half] {
            bits[m * n_samples + j] = true;
        }
    }
    Ok(MembershipMatrix {
        n_models,
        n_samples,
        bits,
    })
}

/// Seed of fleet member `model`; independent of training order.
pub fn model_seed(master_seed: u64, model: usize) -> u64 {
    mix_seed(master_seed, model as u64)
}

/// Trains fleet member `model` on its IN rows. Parameters are rounded to
/// `f32` so the in-memory model equals its checkpoint.
pub fn train_shadow_model(
    dataset: &Dataset,
    matrix: &MembershipMatrix,
    model: usize,
    config: &TrainConfig,
) -> Result<MlpModel> {
    if matrix.n_samples() != dataset.n_samples() {
        return Err(Error::shape("membership matrix and dataset disagree on sample count"));
    }
    let mut cfg = config.clone();
    cfg.seed = model_seed(config.seed, model);
    let mut m = train(dataset, &matrix.member_rows(model), &cfg)?;
    m.round_to_f32();
    Ok(m)
}

/// Trains every fleet member in turn.
pub fn train_fleet(
    dataset: &Dataset,
    matrix: &MembershipMatrix,
    config: &TrainConfig,
) -> Result<Vec<MlpModel>> {
    (0..matrix.n_models())
        .map(|m| train_shadow_model(dataset, matrix, m, config))
        .collect()
}

/// How the fleet is queried.
#[derive(Debug, Clone, PartialEq)]
pub enum QuerySpec {
    Single,
    /// `k` augmented variants per sample, drawn from a stream keyed by
    /// `(seed, sample)` so every model sees the same variants.
    Multi {
        k: usize,
        augmentation: EnhancementSpec,
        seed: u64,
    },
}

/// Query inputs shared by all models of a fleet.
#[derive(Debug, Clone)]
pub struct QueryPlan {
    spec: QuerySpec,
    n_samples: usize,
    /// Row `i * k + v` is variant `v` of sample `i`.
    inputs: Matrix,
    k: usize,
}

/// One model's answers: logits (mean over variants for multi-query) and,
/// for multi-query, the per-class phi averaged over variants.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelQuery {
    pub logits: Vec<f32>,
    pub phi: Option<Vec<f32>>,
}

fn query_variant(
    aug: &EnhancementSpec,
    dataset: &Dataset,
    sample: usize,
    rng: &mut crate::rng::Rng,
) -> Result<Vec<f64>> {
    let x = dataset.features().row(sample);
    match *aug {
        EnhancementSpec::None
        | EnhancementSpec::LabelSmooth { .. }
        | EnhancementSpec::DisturbLabel { .. }
        | EnhancementSpec::Distillation { .. } => Ok(x.to_vec()),
        EnhancementSpec::GaussianNoise { sigma } => augment::gaussian_noise(x, sigma, rng),
        EnhancementSpec::FeatureCutout { size } => augment::feature_cutout(x, size, rng),
        EnhancementSpec::ZeroOneFlip { ratio } => augment::zero_one_flip(x, ratio, rng),
        EnhancementSpec::Mixup { alpha } => {
            let partner = rng.random_range(0..dataset.n_samples());
            let beta = Beta::new(alpha, alpha).map_err(|_| Error::param("alpha", "must be positive"))?;
            let gamma: f64 = beta.sample(rng);
            Ok(x.iter()
                .zip(dataset.features().row(partner))
                .map(|(&a, &b)| gamma * a + (1.0 - gamma) * b)
                .collect())
        }
        _ => Err(Error::Unsupported(alloc::format!(
            "queries cannot use the adversarial enhancement `{}`",
            aug.kind_name()
        ))),
    }
}

impl QueryPlan {
    pub fn new(dataset: &Dataset, spec: &QuerySpec) -> Result<Self> {
        match spec {
            QuerySpec::Single => Ok(QueryPlan {
                spec: spec.clone(),
                n_samples: dataset.n_samples(),
                inputs: dataset.features().clone(),
                k: 1,
            }),
            QuerySpec::Multi {
                k,
                augmentation,
                seed,
            } => {
                if *k == 0 {
                    return Err(Error::param("k", "multi-query needs at least one variant"));
                }
                augmentation.validate()?;
                let n = dataset.n_samples();
                let d = dataset.n_features();
                let mut inputs = Matrix::zeros(n * k, d);
                let base = mix_seed(*seed, stream::QUERY);
                for i in 0..n {
                    let mut rng = rng_from_seed(mix_seed(base, i as u64));
                    for v in 0..*k {
                        let row = query_variant(augmentation, dataset, i, &mut rng)?;
                        inputs.row_mut(i * k + v).copy_from_slice(&row);
                    }
                }
                Ok(QueryPlan {
                    spec: spec.clone(),
                    n_samples: n,
                    inputs,
                    k: *k,
                })
            }
        }
    }

    pub fn spec(&self) -> &QuerySpec {
        &self.spec
    }

    /// Queries one model.
    pub fn run(&self, model: &MlpModel) -> Result<ModelQuery> {
        const CHUNK: usize = 4096;
        let c = model.n_classes();
        let mut raw = Vec::with_capacity(self.inputs.rows() * c);
        let rows: Vec<usize> = (0..self.inputs.rows()).collect();
        for chunk in rows.chunks(CHUNK) {
            let x = if chunk.len() == self.inputs.rows() {
                forward(model, &self.inputs)?
            } else {
                forward(model, &self.inputs.select_rows(chunk))?
            };
            raw.extend(x.as_slice().iter().map(|&v| v as f32));
        }
        if !raw.iter().all(|v| v.is_finite()) {
            return Err(Error::param("logits", "model produced non-finite logits"));
        }
        match self.spec {
            QuerySpec::Single => Ok(ModelQuery {
                logits: raw,
                phi: None,
            }),
            QuerySpec::Multi { .. } => {
                let k = self.k;
                let mut logits = vec![0f32; self.n_samples * c];
                let mut phis = vec![0f32; self.n_samples * c];
                let mut row64 = vec![0.0; c];
                for i in 0..self.n_samples {
                    let mut lsum = vec![0.0f64; c];
                    let mut psum = vec![0.0f64; c];
                    for v in 0..k {
                        let r = &raw[(i * k + v) * c..(i * k + v + 1) * c];
                        for (dst, &s) in row64.iter_mut().zip(r) {
                            *dst = s as f64;
                        }
                        for cls in 0..c {
                            lsum[cls] += row64[cls];
                            // per-variant phi is rounded to f32 first so k
                            // identical variants average back to the single value
                            psum[cls] += phi_from_logits(&row64, cls) as f32 as f64;
                        }
                    }
                    for cls in 0..c {
                        logits[i * c + cls] = (lsum[cls] / k as f64) as f32;
                        phis[i * c + cls] = (psum[cls] / k as f64) as f32;
                    }
                }
                Ok(ModelQuery {
                    logits,
                    phi: Some(phis),
                })
            }
        }
    }
}

/// Per-model, per-sample, per-class query outputs of a fleet.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceStore {
    n_models: usize,
    n_samples: usize,
    n_classes: usize,
    logits: Vec<f32>,
    phi: Option<Vec<f32>>,
    query: QuerySpec,
}

impl ConfidenceStore {
    pub fn new(
        n_models: usize,
        n_samples: usize,
        n_classes: usize,
        logits: Vec<f32>,
        phi: Option<Vec<f32>>,
        query: QuerySpec,
    ) -> Result<Self> {
        let len = n_models * n_samples * n_classes;
        if logits.len() != len || phi.as_ref().is_some_and(|p| p.len() != len) {
            return Err(Error::shape(alloc::format!(
                "store buffers do not match {n_models}x{n_samples}x{n_classes}"
            )));
        }
        if !logits.iter().chain(phi.iter().flatten()).all(|v| v.is_finite()) {
            return Err(Error::param("logits", "store contains non-finite values"));
        }
        Ok(ConfidenceStore {
            n_models,
            n_samples,
            n_classes,
            logits,
            phi,
            query,
        })
    }

    /// Stacks per-model answers in model order.
    pub fn assemble(n_samples: usize, n_classes: usize, queries: Vec<ModelQuery>, query: QuerySpec) -> Result<Self> {
        let n_models = queries.len();
        let with_phi = queries.first().is_some_and(|q| q.phi.is_some());
        let mut logits = Vec::with_capacity(n_models * n_samples * n_classes);
        let mut phi = with_phi.then(|| Vec::with_capacity(n_models * n_samples * n_classes));
        for q in queries {
            logits.extend_from_slice(&q.logits);
            match (&mut phi, q.phi) {
                (Some(p), Some(qp)) => p.extend_from_slice(&qp),
                (None, None) => {}
                _ => return Err(Error::shape("models disagree on query kind")),
            }
        }
        ConfidenceStore::new(n_models, n_samples, n_classes, logits, phi, query)
    }

    pub fn n_models(&self) -> usize {
        self.n_models
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn query(&self) -> &QuerySpec {
        &self.query
    }

    /// All logits of one model, `N x C` row-major.
    pub fn model_logits(&self, model: usize) -> &[f32] {
        let span = self.n_samples * self.n_classes;
        &self.logits[model * span..(model + 1) * span]
    }

    pub fn model_phi(&self, model: usize) -> Option<&[f32]> {
        let span = self.n_samples * self.n_classes;
        self.phi.as_ref().map(|p| &p[model * span..(model + 1) * span])
    }

    pub fn logit_row(&self, model: usize, sample: usize) -> &[f32] {
        let base = (model * self.n_samples + sample) * self.n_classes;
        &self.logits[base..base + self.n_classes]
    }

    pub fn logit_row_f64(&self, model: usize, sample: usize) -> Vec<f64> {
        self.logit_row(model, sample).iter().map(|&v| v as f64).collect()
    }

    /// Logit-scaled confidence of `class`: the stored multi-query average when
    /// present, else derived from the logits (rounded to `f32` either way).
    pub fn phi(&self, model: usize, sample: usize, class: usize) -> f64 {
        let idx = (model * self.n_samples + sample) * self.n_classes + class;
        match &self.phi {
            Some(p) => p[idx] as f64,
            None => phi_from_logits(&self.logit_row_f64(model, sample), class) as f32 as f64,
        }
    }

    /// Top-1 prediction of a model; ties go to the lowest class index.
    pub fn predicted(&self, model: usize, sample: usize) -> usize {
        math::argmax(&self.logit_row_f64(model, sample))
    }

    pub fn logits(&self) -> &[f32] {
        &self.logits
    }
}

/// Queries every model of a fleet.
pub fn query_fleet(models: &[MlpModel], dataset: &Dataset, spec: &QuerySpec) -> Result<ConfidenceStore> {
    let plan = QueryPlan::new(dataset, spec)?;
    let queries = models
        .iter()
        .map(|m| plan.run(m))
        .collect::<Result<Vec<_>>>()?;
    ConfidenceStore::assemble(dataset.n_samples(), dataset.n_classes(), queries, spec.clone())
}

/// Train/test accuracy per model and their fleet means.
#[derive(Debug, Clone, PartialEq)]
pub struct FleetGap {
    /// `(train_acc, test_acc)` per model.
    pub per_model: Vec<(f64, f64)>,
    pub train_acc: f64,
    pub test_acc: f64,
    pub gap: f64,
}

/// Accuracy on IN rows minus accuracy on OUT rows, averaged over the fleet.
pub fn generalization_gap(
    store: &ConfidenceStore,
    matrix: &MembershipMatrix,
    labels: &[usize],
) -> Result<FleetGap> {
    if store.n_models() != matrix.n_models() || store.n_samples() != matrix.n_samples() {
        return Err(Error::shape("store and membership matrix disagree"));
    }
    if labels.len() != store.n_samples() {
        return Err(Error::shape("label count differs from store"));
    }
    let mut per_model = Vec::with_capacity(store.n_models());
    for m in 0..store.n_models() {
        let (mut ic, mut it, mut oc, mut ot) = (0usize, 0usize, 0usize, 0usize);
        for (j, &y) in labels.iter().enumerate() {
            let correct = usize::from(store.predicted(m, j) == y);
            if matrix.is_member(m, j) {
                ic += correct;
                it += 1;
            } else {
                oc += correct;
                ot += 1;
            }
        }
        let frac = |c: usize, t: usize| if t == 0 { f64::NAN } else { c as f64 / t as f64 };
        per_model.push((frac(ic, it), frac(oc, ot)));
    }
    let avg = |f: &dyn Fn(&(f64, f64)) -> f64| {
        let vals: Vec<f64> = per_model.iter().map(f).filter(|v| !v.is_nan()).collect();
        if vals.is_empty() {
            0.0
        } else {
            math::mean(&vals)
        }
    };
    let train_acc = avg(&|p| p.0);
    let test_acc = avg(&|p| p.1);
    Ok(FleetGap {
        per_model,
        train_acc,
        test_acc,
        gap: train_acc - test_acc,
    })
}

/// `n_targets` distinct model indices drawn uniformly.
pub fn select_targets(n_models: usize, n_targets: usize, seed: u64) -> Result<Vec<usize>> {
    if n_targets == 0 || n_targets > n_models {
        return Err(Error::param(
            "n_targets",
            alloc::format!("{n_targets} targets out of {n_models} models"),
        ));
    }
    let mut rng = rng_from_seed(seed);
    let mut idx: Vec<usize> = (0..n_models).collect();
    for i in 0..n_targets {
        let k = rng.random_range(i..n_models);
        idx.swap(i, k);
    }
    idx.truncate(n_targets);
    Ok(idx)
}
