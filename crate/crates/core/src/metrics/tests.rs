use super::*;
use crate::rng::rng_from_seed;
use proptest::prelude::*;
use rand::Rng as _;

/// ROC points by brute force: one threshold per distinct score plus `+inf`.
fn oracle_points(scores: &[f64], member: &[bool]) -> Vec<(f64, f64, f64)> {
    let pos = member.iter().filter(|&&m| m).count() as f64;
    let neg = member.len() as f64 - pos;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.push(f64::INFINITY);
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    thresholds
        .into_iter()
        .map(|t| {
            let mut tp = 0.0;
            let mut fp = 0.0;
            for (s, &m) in scores.iter().zip(member) {
                if *s >= t {
                    if m {
                        tp += 1.0;
                    } else {
                        fp += 1.0;
                    }
                }
            }
            (fp / neg, tp / pos, t)
        })
        .collect()
}

fn oracle_tpr_at(points: &[(f64, f64, f64)], target: f64) -> f64 {
    points.iter().filter(|p| p.0 <= target).map(|p| p.1).fold(0.0, f64::max)
}

fn oracle_balanced(points: &[(f64, f64, f64)]) -> f64 {
    points.iter().map(|p| (p.1 + 1.0 - p.0) / 2.0).fold(0.0, f64::max)
}

/// Piecewise-linear TPR(FPR) integrated against ln(FPR) by composite Simpson
/// in the log domain.
fn oracle_log_auc(points: &[(f64, f64, f64)], fmin: f64) -> f64 {
    let mut total = 0.0;
    for w in points.windows(2) {
        let ((f0, t0, _), (f1, t1, _)) = (w[0], w[1]);
        if f1 <= f0 || f1 <= fmin {
            continue;
        }
        let tpr = |f: f64| t0 + (t1 - t0) * (f - f0) / (f1 - f0);
        let (a, b) = (f0.max(fmin).ln(), f1.ln());
        let n = 400;
        let h = (b - a) / n as f64;
        let mut s = tpr(a.exp()) + tpr(b.exp());
        for k in 1..n {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            s += w * tpr((a + k as f64 * h).exp());
        }
        total += s * h / 3.0;
    }
    total / (1.0 / fmin).ln()
}

fn random_instance(seed: u64) -> (Vec<f64>, Vec<bool>) {
    let mut rng = rng_from_seed(seed);
    let n = rng.random_range(2..=500);
    let levels = rng.random_range(1..=n.max(2));
    let mut member: Vec<bool> = (0..n).map(|_| rng.random()).collect();
    member[0] = true;
    member[1] = false;
    let scores = (0..n)
        .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
        .collect();
    (scores, member)
}

#[test]
fn oracle_equivalence_on_random_instances() {
    for seed in 0..200 {
        let (scores, member) = random_instance(seed);
        let curve = roc(&scores, &member).unwrap();
        let points = oracle_points(&scores, &member);
        assert_eq!(curve.fpr, points.iter().map(|p| p.0).collect::<Vec<_>>());
        assert_eq!(curve.tpr, points.iter().map(|p| p.1).collect::<Vec<_>>());
        assert_eq!(curve.thresholds, points.iter().map(|p| p.2).collect::<Vec<_>>());
        for target in [1e-5, 1e-3, 1e-2, 0.1, 0.25, 0.5] {
            assert_eq!(tpr_at_fpr(&curve, target), oracle_tpr_at(&points, target));
        }
        let (acc, _) = balanced_accuracy(&scores, &member).unwrap();
        assert_eq!(acc, oracle_balanced(&points));
        let la = log_auc(&curve, 1e-5).unwrap();
        assert!((la - oracle_log_auc(&points, 1e-5)).abs() <= 1e-9, "seed {seed}");
    }
}

#[test]
fn hand_sweep() {
    let curve = roc(&[3.0, 2.0, 1.0, 0.0], &[true, true, false, false]).unwrap();
    assert_eq!(curve.fpr, vec![0.0, 0.0, 0.0, 0.5, 1.0]);
    assert_eq!(curve.tpr, vec![0.0, 0.5, 1.0, 1.0, 1.0]);
    assert_eq!(tpr_at_fpr(&curve, 0.25), 1.0);
    assert_eq!(auc(&curve), 1.0);
}

#[test]
fn all_equal_scores() {
    let curve = roc(&[1.0; 6], &[true, false, true, false, true, false]).unwrap();
    assert_eq!(curve.fpr, vec![0.0, 1.0]);
    assert_eq!(curve.tpr, vec![0.0, 1.0]);
    assert_eq!(auc(&curve), 0.5);
    assert_eq!(balanced_accuracy(&[1.0; 2], &[true, false]).unwrap().0, 0.5);
}

#[test]
fn single_class_is_rejected() {
    assert!(matches!(roc(&[1.0, 2.0], &[true, true]), Err(Error::SingleClass)));
    assert!(balanced_accuracy(&[1.0], &[false]).is_err());
}

#[test]
fn perfect_attack() {
    let scores = [0.9, 0.8, 0.1, 0.2];
    let member = [true, true, false, false];
    let curve = roc(&scores, &member).unwrap();
    assert_eq!(tpr_at_fpr(&curve, 1e-5), 1.0);
    assert!((log_auc(&curve, 1e-5).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(balanced_accuracy(&scores, &member).unwrap().0, 1.0);
}

#[test]
fn chance_diagonal_log_auc_closed_form() {
    let diagonal = RocCurve {
        fpr: vec![0.0, 1.0],
        tpr: vec![0.0, 1.0],
        thresholds: vec![f64::INFINITY, 0.0],
    };
    let fmin: f64 = 1e-5;
    let want = (1.0 - fmin) / (1.0 / fmin).ln();
    assert!((log_auc(&diagonal, fmin).unwrap() - want).abs() < 1e-15);
    assert!((want - 0.086_858).abs() < 1e-6);
}

#[test]
fn balanced_accuracy_hand_example() {
    let (acc, t) = balanced_accuracy(&[2.0, 1.0, 1.0, 0.0], &[true, true, false, false]).unwrap();
    assert_eq!(acc, 0.75);
    assert!(t == 2.0 || t == 1.0);
}

#[test]
fn null_scores_track_fpr() {
    let mut rng = rng_from_seed(11);
    let n = 100_000;
    let scores: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let member: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
    let curve = roc(&scores, &member).unwrap();
    assert!((tpr_at_fpr(&curve, 1e-3) - 1e-3).abs() <= 5e-4);
    let small: Vec<f64> = scores[..20_000].to_vec();
    let area = auc(&roc(&small, &member[..20_000]).unwrap());
    assert!((area - 0.5).abs() <= 0.02);
}

#[test]
fn pearson_examples() {
    let xs = [0.0, 1.0, 2.0, 3.0];
    let double: Vec<f64> = xs.iter().map(|x| 2.0 * x).collect();
    let flipped: Vec<f64> = xs.iter().map(|x| 5.0 - x).collect();
    assert!((pearson_r(&xs, &double).unwrap() - 1.0).abs() < 1e-12);
    assert!((pearson_r(&xs, &flipped).unwrap() + 1.0).abs() < 1e-12);
    assert!(pearson_r(&[0.0, 1.0, 2.0], &[0.0, 1.0, 0.0]).unwrap().abs() < 1e-12);
    assert!(matches!(pearson_r(&[1.0, 1.0], &[0.0, 1.0]), Err(Error::ConstantSeries)));
    assert!(pearson_r(&[1.0], &[1.0]).is_err());
}

#[test]
fn spearman_uses_average_ranks() {
    assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
    let rho = spearman_rho(&[1.0, 2.0, 3.0, 4.0], &[1.0, 8.0, 27.0, 64.0]).unwrap();
    assert!((rho - 1.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn curve_is_monotone_with_exact_endpoints(seed in any::<u64>()) {
        let (scores, member) = random_instance(seed);
        let c = roc(&scores, &member).unwrap();
        prop_assert_eq!((c.fpr[0], c.tpr[0]), (0.0, 0.0));
        prop_assert_eq!((*c.fpr.last().unwrap(), *c.tpr.last().unwrap()), (1.0, 1.0));
        for k in 1..c.fpr.len() {
            prop_assert!(c.fpr[k] >= c.fpr[k - 1] && c.tpr[k] >= c.tpr[k - 1]);
        }
    }

    #[test]
    fn metrics_are_rank_invariant(seed in any::<u64>(), a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let (scores, member) = random_instance(seed);
        let mapped: Vec<f64> = scores.iter().map(|s| (a * s + b).exp()).collect();
        let x = summarize(&scores, &member).unwrap();
        let y = summarize(&mapped, &member).unwrap();
        prop_assert_eq!(x.tpr_at_1e_3, y.tpr_at_1e_3);
        prop_assert_eq!(x.tpr_at_1e_2, y.tpr_at_1e_2);
        prop_assert_eq!(x.balanced_acc, y.balanced_acc);
        prop_assert_eq!(x.log_auc, y.log_auc);
        prop_assert_eq!(x.auc, y.auc);
    }

    #[test]
    fn higher_curve_has_higher_log_auc(seed in any::<u64>(), lift in 0.01f64..0.5) {
        let (scores, member) = random_instance(seed);
        let c = roc(&scores, &member).unwrap();
        let mut up = c.clone();
        up.tpr.iter_mut().skip(1).for_each(|t| *t = (*t + lift).min(1.0));
        prop_assert!(log_auc(&up, 1e-5).unwrap() >= log_auc(&c, 1e-5).unwrap());
    }

    #[test]
    fn pearson_is_bounded(xs in prop::collection::vec(-100.0f64..100.0, 3..30), seed in any::<u64>()) {
        let mut rng = rng_from_seed(seed);
        let ys: Vec<f64> = xs.iter().map(|x| x * rng.random_range(-1.0..1.0) + rng.random_range(-1.0..1.0)).collect();
        if let Ok(r) = pearson_r(&xs, &ys) {
            prop_assert!((-1.0..=1.0).contains(&r));
        }
    }
}
