//! ROC construction and attack-quality metrics.
//!
//! The ROC is a descending-threshold sweep where tied scores enter together,
//! so a tie contributes a single diagonal segment. `tpr_at_fpr` reads the
//! largest TPR among operating points whose FPR does not exceed the target
//! (no interpolation). `log_auc` integrates the piecewise-linear ROC against
//! `log10(FPR)` exactly over `[fpr_min, 1]` and divides by `log10(1 / fpr_min)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::{Error, Result};

/// Default lower FPR bound of [`log_auc`].
pub const LOG_AUC_FPR_MIN: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    /// Point `k` predicts "member" for scores `>= thresholds[k]`; the first is `+inf`.
    pub thresholds: Vec<f64>,
}

fn counts(membership: &[bool]) -> Result<(usize, usize)> {
    let pos = membership.iter().filter(|&&m| m).count();
    let neg = membership.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    Ok((pos, neg))
}

pub fn roc(scores: &[f64], membership: &[bool]) -> Result<RocCurve> {
    if scores.len() != membership.len() {
        return Err(Error::shape("scores and membership differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::param("scores", "NaN score"));
    }
    let (pos, neg) = counts(membership)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut curve = RocCurve {
        fpr: vec![0.0],
        tpr: vec![0.0],
        thresholds: vec![f64::INFINITY],
    };
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if membership[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        curve.fpr.push(fp as f64 / neg as f64);
        curve.tpr.push(tp as f64 / pos as f64);
        curve.thresholds.push(s);
    }
    Ok(curve)
}

/// Largest TPR over operating points with `FPR <= fpr_target`.
pub fn tpr_at_fpr(curve: &RocCurve, fpr_target: f64) -> f64 {
    curve
        .fpr
        .iter()
        .zip(&curve.tpr)
        .filter(|(&f, _)| f <= fpr_target)
        .map(|(_, &t)| t)
        .fold(0.0, f64::max)
}

/// Threshold of the loosest operating point with `FPR <= fpr_target`.
pub fn threshold_at_fpr(curve: &RocCurve, fpr_target: f64) -> f64 {
    let mut best = 0;
    for k in 0..curve.fpr.len() {
        if curve.fpr[k] <= fpr_target && curve.tpr[k] > curve.tpr[best] {
            best = k;
        }
    }
    curve.thresholds[best]
}

/// Area under the ROC (trapezoidal, linear axes).
pub fn auc(curve: &RocCurve) -> f64 {
    curve
        .fpr
        .windows(2)
        .zip(curve.tpr.windows(2))
        .map(|(f, t)| (f[1] - f[0]) * (t[0] + t[1]) / 2.0)
        .sum()
}

/// Normalized area under TPR versus `log10(FPR)` over `[fpr_min, 1]`.
pub fn log_auc(curve: &RocCurve, fpr_min: f64) -> Result<f64> {
    if !(fpr_min > 0.0 && fpr_min < 1.0) {
        return Err(Error::param("fpr_min", "must lie in (0, 1)"));
    }
    let mut area = 0.0;
    for k in 1..curve.fpr.len() {
        let (f0, f1) = (curve.fpr[k - 1], curve.fpr[k]);
        let (t0, t1) = (curve.tpr[k - 1], curve.tpr[k]);
        if f1 <= f0 || f1 <= fpr_min {
            continue;
        }
        let slope = (t1 - t0) / (f1 - f0);
        let intercept = t0 - slope * f0;
        let lo = f0.max(fpr_min);
        // integral of (intercept + slope * f) / f over [lo, f1]
        area += intercept * math::ln(f1 / lo) + slope * (f1 - lo);
    }
    Ok(area / math::ln(1.0 / fpr_min))
}

/// Best `(TPR + TNR) / 2` over all thresholds and the threshold reaching it
/// (strictest one on ties). Predict "member" when `score >= threshold`.
pub fn balanced_accuracy(scores: &[f64], membership: &[bool]) -> Result<(f64, f64)> {
    let curve = roc(scores, membership)?;
    Ok(balanced_accuracy_from_roc(&curve))
}

pub fn balanced_accuracy_from_roc(curve: &RocCurve) -> (f64, f64) {
    let mut best = (f64::NEG_INFINITY, f64::INFINITY);
    for k in 0..curve.fpr.len() {
        let acc = (curve.tpr[k] + 1.0 - curve.fpr[k]) / 2.0;
        if acc > best.0 {
            best = (acc, curve.thresholds[k]);
        }
    }
    best
}

/// Sample Pearson correlation.
pub fn pearson_r(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::shape("series differ in length"));
    }
    if xs.len() < 2 {
        return Err(Error::param("xs", "need at least two points"));
    }
    let (mx, my) = (math::mean(xs), math::mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ConstantSeries);
    }
    Ok((sxy / math::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

/// Ranks starting at 1; tied values share their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> Result<f64> {
    pearson_r(&average_ranks(xs), &average_ranks(ys))
}

/// The headline numbers for one attack on one target.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSummary {
    pub tpr_at_1e_2: f64,
    pub tpr_at_1e_3: f64,
    pub tpr_at_1e_5: f64,
    pub log_auc: f64,
    pub auc: f64,
    pub balanced_acc: f64,
    pub threshold: f64,
}

pub fn summarize(scores: &[f64], membership: &[bool]) -> Result<MetricSummary> {
    let curve = roc(scores, membership)?;
    let (balanced_acc, threshold) = balanced_accuracy_from_roc(&curve);
    Ok(MetricSummary {
        tpr_at_1e_2: tpr_at_fpr(&curve, 1e-2),
        tpr_at_1e_3: tpr_at_fpr(&curve, 1e-3),
        tpr_at_1e_5: tpr_at_fpr(&curve, 1e-5),
        log_auc: log_auc(&curve, LOG_AUC_FPR_MIN)?,
        auc: auc(&curve),
        balanced_acc,
        threshold,
    })
}

#[cfg(test)]
mod tests;
