//! Per-sample memorization estimates and the attack/memorization
//! consistency reports built on them.
//!
//! The memorization of a sample is the top-1 accuracy of the fleet models
//! that trained on it minus that of the models that did not. With a balanced
//! membership matrix this is the IN/OUT estimate of the leave-one-out
//! quantity `Pr[f(x) = y | (x, y) in D] - Pr[f(x) = y | (x, y) not in D]`.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::math;
use crate::metrics::{balanced_accuracy_from_roc, roc, threshold_at_fpr};
use crate::rng::rng_from_seed;
use crate::shadow::{ConfidenceStore, MembershipMatrix};
use crate::{Error, Result};

/// Per-sample memorization, each in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MemorizationScores(pub Vec<f64>);

impl MemorizationScores {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn mean(&self) -> f64 {
        math::mean(&self.0)
    }
}

fn check(store: &ConfidenceStore, matrix: &MembershipMatrix, labels: &[usize]) -> Result<()> {
    if store.n_models() != matrix.n_models() || store.n_samples() != matrix.n_samples() {
        return Err(Error::shape("store and membership matrix disagree"));
    }
    if labels.len() != store.n_samples() {
        return Err(Error::shape("label count differs from store"));
    }
    Ok(())
}

pub fn estimate_memorization(
    store: &ConfidenceStore,
    matrix: &MembershipMatrix,
    labels: &[usize],
) -> Result<MemorizationScores> {
    check(store, matrix, labels)?;
    let mut out = Vec::with_capacity(labels.len());
    for (j, &y) in labels.iter().enumerate() {
        let (mut in_ok, mut in_n, mut out_ok, mut out_n) = (0usize, 0usize, 0usize, 0usize);
        for m in 0..store.n_models() {
            let ok = usize::from(store.predicted(m, j) == y);
            if matrix.is_member(m, j) {
                in_ok += ok;
                in_n += 1;
            } else {
                out_ok += ok;
                out_n += 1;
            }
        }
        if in_n == 0 || out_n == 0 {
            return Err(Error::param(
                "membership",
                alloc::format!("sample {j} has {in_n} IN and {out_n} OUT models"),
            ));
        }
        out.push(in_ok as f64 / in_n as f64 - out_ok as f64 / out_n as f64);
    }
    Ok(MemorizationScores(out))
}

/// How the global membership threshold of a bin report is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdRule {
    /// Maximize `(TPR + TNR) / 2` over all samples.
    BalancedAccuracyOptimal,
    /// Loosest threshold whose FPR stays at or below the value.
    FixedFpr(f64),
    /// Use this threshold as given.
    Fixed(f64),
}

/// Attack behaviour per memorization bin. Bins without members carry `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinReport {
    /// `n_bins + 1` uniform edges over the observed memorization range.
    pub edges: Vec<f64>,
    pub tpr: Vec<Option<f64>>,
    /// Mean and standard deviation of the attack score over the bin's members.
    pub feature_mean: Vec<Option<f64>>,
    pub feature_std: Vec<Option<f64>>,
    /// All samples per bin; sums to N.
    pub count: Vec<usize>,
    pub member_count: Vec<usize>,
    pub threshold: f64,
}

/// Index of the bin holding `value` for uniform edges over `[lo, hi]`.
fn bin_of(value: f64, lo: f64, hi: f64, n_bins: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    let b = ((value - lo) / (hi - lo) * n_bins as f64) as usize;
    b.min(n_bins - 1)
}

pub fn bin_consistency(
    attack_scores: &[f64],
    mem_scores: &[f64],
    membership: &[bool],
    n_bins: usize,
    rule: ThresholdRule,
) -> Result<BinReport> {
    let n = attack_scores.len();
    if mem_scores.len() != n || membership.len() != n {
        return Err(Error::shape("scores, memorization and membership differ in length"));
    }
    if n_bins == 0 {
        return Err(Error::param("n_bins", "must be positive"));
    }
    let threshold = match rule {
        ThresholdRule::Fixed(t) => t,
        ThresholdRule::BalancedAccuracyOptimal => {
            balanced_accuracy_from_roc(&roc(attack_scores, membership)?).1
        }
        ThresholdRule::FixedFpr(f) => threshold_at_fpr(&roc(attack_scores, membership)?, f),
    };
    let lo = mem_scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mem_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let edges: Vec<f64> = (0..=n_bins)
        .map(|k| lo + (hi - lo) * k as f64 / n_bins as f64)
        .collect();

    let mut count = vec![0usize; n_bins];
    let mut member_scores: Vec<Vec<f64>> = vec![Vec::new(); n_bins];
    for j in 0..n {
        let b = bin_of(mem_scores[j], lo, hi, n_bins);
        count[b] += 1;
        if membership[j] {
            member_scores[b].push(attack_scores[j]);
        }
    }
    let mut report = BinReport {
        edges,
        tpr: Vec::with_capacity(n_bins),
        feature_mean: Vec::with_capacity(n_bins),
        feature_std: Vec::with_capacity(n_bins),
        member_count: member_scores.iter().map(Vec::len).collect(),
        count,
        threshold,
    };
    for s in &member_scores {
        if s.is_empty() {
            report.tpr.push(None);
            report.feature_mean.push(None);
            report.feature_std.push(None);
        } else {
            let hits = s.iter().filter(|&&v| v >= threshold).count();
            report.tpr.push(Some(hits as f64 / s.len() as f64));
            report.feature_mean.push(Some(math::mean(s)));
            report.feature_std.push(Some(math::sample_std(s)));
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterPoint {
    pub sample_id: usize,
    pub a: f64,
    pub b: f64,
}

/// Paired memorization scores, optionally a random subsample of `size` ids.
pub fn scatter_memorization(
    mem_a: &[f64],
    mem_b: &[f64],
    subsample: Option<(usize, u64)>,
) -> Result<Vec<ScatterPoint>> {
    if mem_a.len() != mem_b.len() {
        return Err(Error::shape("memorization vectors differ in length"));
    }
    let n = mem_a.len();
    let ids: Vec<usize> = match subsample {
        None => (0..n).collect(),
        Some((size, seed)) => {
            if size > n {
                return Err(Error::param(
                    "subsample",
                    alloc::format!("{size} points requested from {n}"),
                ));
            }
            let mut idx: Vec<usize> = (0..n).collect();
            let mut rng = rng_from_seed(seed);
            for i in 0..size {
                let j = rng.random_range(i..n);
                idx.swap(i, j);
            }
            idx.truncate(size);
            idx.sort_unstable();
            idx
        }
    };
    Ok(ids
        .into_iter()
        .map(|i| ScatterPoint {
            sample_id: i,
            a: mem_a[i],
            b: mem_b[i],
        })
        .collect())
}

/// Logit-scaled label confidences of one sample split by membership.
#[derive(Debug, Clone, PartialEq)]
pub struct InOutPhi {
    pub sample_id: usize,
    pub in_values: Vec<f64>,
    pub out_values: Vec<f64>,
}

pub fn in_out_histogram(
    store: &ConfidenceStore,
    matrix: &MembershipMatrix,
    labels: &[usize],
    sample_id: usize,
) -> Result<InOutPhi> {
    check(store, matrix, labels)?;
    if sample_id >= store.n_samples() {
        return Err(Error::param("sample_id", "out of range"));
    }
    let y = labels[sample_id];
    let mut rep = InOutPhi {
        sample_id,
        in_values: Vec::new(),
        out_values: Vec::new(),
    };
    for m in 0..store.n_models() {
        let v = store.phi(m, sample_id, y);
        if matrix.is_member(m, sample_id) {
            rep.in_values.push(v);
        } else {
            rep.out_values.push(v);
        }
    }
    Ok(rep)
}
