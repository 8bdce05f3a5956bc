use super::*;
use crate::augment::{enhancement_gradients, EnhancementSpec, ModelContext};
use crate::nn::{backward, init_mlp, mean_loss, train, LayerParams, TrainConfig};
use crate::rng::rng_from_seed;
use crate::testutil::{blobs, random_matrix, random_model};
use proptest::prelude::*;

fn trained_model(seed: u64) -> (MlpModel, Dataset) {
    let data = blobs(40, 3, 5, 0.8, seed);
    let rows: Vec<usize> = (0..data.n_samples()).collect();
    let cfg = TrainConfig {
        hidden_sizes: vec![16],
        learning_rate: 0.05,
        epochs: 15,
        batch_size: 16,
        decay_milestones: vec![],
        seed,
        ..TrainConfig::default()
    };
    (train(&data, &rows, &cfg).unwrap(), data)
}

fn max_abs_diff(a: &Gradients, b: &Gradients) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn zero_epsilon_returns_input() {
    let model = init_mlp(&[4, 3], 1).unwrap();
    let x = random_matrix(5, 4, &mut rng_from_seed(1));
    let cfg = AdvConfig::training(0.0);
    let adv = pgd_attack(&model, &x, &[0, 1, 2, 0, 1], &cfg, PgdObjective::CrossEntropy, &mut rng_from_seed(2)).unwrap();
    assert_eq!(adv, x);
}

#[test]
fn linear_model_single_step_follows_closed_form_sign() {
    let mut layer = LayerParams::zeros(3, 2);
    // W^T rows: class 0 weights (1, -2, 0.5), class 1 weights (-1, 1, 3)
    layer.weights = vec![1.0, -1.0, -2.0, 1.0, 0.5, 3.0];
    let model = MlpModel::from_layers(vec![layer]).unwrap();
    let x = Matrix::from_rows(&[&[0.2, -0.1, 0.4]]).unwrap();
    let cfg = AdvConfig {
        epsilon: 0.5,
        step_size: 0.1,
        iters: 1,
        random_start: false,
        clamp: None,
    };
    let adv = pgd_attack(&model, &x, &[0], &cfg, PgdObjective::CrossEntropy, &mut rng_from_seed(0)).unwrap();
    // dCE/dx = W (p - e_y); with y = 0, (p - e_y) = (p0 - 1, p1) = (-p1, p1)
    // so the gradient is p1 * (w_1 - w_0) and its sign is sign(w_1 - w_0).
    let w0 = [1.0, -2.0, 0.5];
    let w1 = [-1.0, 1.0, 3.0];
    for k in 0..3 {
        let s = (w1[k] - w0[k] as f64).signum();
        assert!((adv.get(0, k) - (x.get(0, k) + 0.1 * s)).abs() < 1e-15);
    }
}

#[test]
fn clamp_is_respected() {
    let model = random_model(&[4, 6, 3], 5);
    let mut x = random_matrix(10, 4, &mut rng_from_seed(5));
    x.as_mut_slice().iter_mut().for_each(|v| *v = (*v + 1.0) / 2.0);
    let cfg = AdvConfig::training(0.3).with_clamp(0.0, 1.0);
    let labels: Vec<usize> = (0..10).map(|i| i % 3).collect();
    let adv = pgd_attack(&model, &x, &labels, &cfg, PgdObjective::CrossEntropy, &mut rng_from_seed(6)).unwrap();
    assert!(adv.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn pgd_increases_loss_on_trained_model() {
    let (model, data) = trained_model(3);
    let cfg = AdvConfig::training(0.3);
    let mut rng = rng_from_seed(7);
    let rows: Vec<usize> = (0..data.n_samples()).collect();
    let mut ascended = 0;
    let chunks: Vec<&[usize]> = rows.chunks(12).collect();
    for chunk in &chunks {
        let b = data.batch(chunk);
        let adv = pgd_attack(&model, &b.features, &b.labels, &cfg, PgdObjective::CrossEntropy, &mut rng).unwrap();
        let t = one_hot_matrix(&b.labels, 3);
        if mean_loss(&model, &adv, &t).unwrap() >= mean_loss(&model, &b.features, &t).unwrap() {
            ascended += 1;
        }
    }
    assert!(ascended as f64 >= 0.99 * chunks.len() as f64);
}

#[test]
fn pgd_at_with_zero_epsilon_matches_standard_batch() {
    let model = init_mlp(&[4, 3], 1).unwrap();
    let data = blobs(4, 3, 4, 0.5, 1);
    let b = data.batch(&[0, 1, 2, 3, 4]);
    let e = pgd_at_batch(&model, &b, &AdvConfig::training(0.0), &mut rng_from_seed(0)).unwrap();
    assert_eq!(e, EnhancedBatch::single(b.features.clone(), one_hot_matrix(&b.labels, 3)));
}

#[test]
fn zero_epsilon_training_is_standard_training() {
    let data = blobs(20, 3, 4, 0.6, 2);
    let rows: Vec<usize> = (0..data.n_samples()).step_by(2).collect();
    let base = TrainConfig {
        hidden_sizes: vec![8],
        epochs: 4,
        batch_size: 8,
        decay_milestones: vec![],
        seed: 17,
        ..TrainConfig::default()
    };
    let adv = TrainConfig {
        enhancement: EnhancementSpec::PgdAt { adv: AdvConfig::training(0.0) },
        ..base.clone()
    };
    assert_eq!(train(&data, &rows, &base).unwrap(), train(&data, &rows, &adv).unwrap());
}

#[test]
fn trades_huge_lambda_matches_standard_gradient() {
    let model = random_model(&[5, 8, 3], 2);
    let data = blobs(4, 3, 5, 0.5, 2);
    let b = data.batch(&(0..12).collect::<Vec<_>>());
    let standard = backward(&model, &b.features, &one_hot_matrix(&b.labels, 3)).unwrap();
    let (_, g) = trades_loss(&model, &b.features, &b.labels, &AdvConfig::training(0.2), 1e9, &mut rng_from_seed(1)).unwrap();
    assert!(max_abs_diff(&standard, &g) <= 1e-6);
    let g2 = trades_awp_batch(&model, &b, &AdvConfig::training(0.2), 1e9, 0.0, &mut rng_from_seed(1)).unwrap();
    assert!(max_abs_diff(&standard, &g2) <= 1e-6);
}

#[test]
fn trades_zero_epsilon_matches_standard_gradient() {
    let model = random_model(&[5, 8, 3], 3);
    let data = blobs(4, 3, 5, 0.5, 3);
    let b = data.batch(&(0..12).collect::<Vec<_>>());
    let standard = backward(&model, &b.features, &one_hot_matrix(&b.labels, 3)).unwrap();
    let (_, g) = trades_loss(&model, &b.features, &b.labels, &AdvConfig::training(0.0), 1.0, &mut rng_from_seed(1)).unwrap();
    assert!(max_abs_diff(&standard, &g) <= 1e-6);
}

#[test]
fn trades_rejects_nonpositive_lambda() {
    let model = random_model(&[2, 2], 0);
    let x = Matrix::zeros(1, 2);
    assert!(trades_loss(&model, &x, &[0], &AdvConfig::training(0.1), 0.0, &mut rng_from_seed(0)).is_err());
}

#[test]
fn awp_zero_gamma_matches_pgd_at_step() {
    let model = random_model(&[4, 6, 3], 4);
    let data = blobs(4, 3, 4, 0.5, 4);
    let b = data.batch(&(0..12).collect::<Vec<_>>());
    let adv = AdvConfig::training(0.1);
    let c = ModelContext { model: &model, teacher: None };
    let pgd = enhancement_gradients(&EnhancementSpec::PgdAt { adv: adv.clone() }, &b, 3, &c, &mut rng_from_seed(9)).unwrap();
    let awp = enhancement_gradients(&EnhancementSpec::Awp { adv, gamma: 0.0 }, &b, 3, &c, &mut rng_from_seed(9)).unwrap();
    assert_eq!(pgd, awp);
}

#[test]
fn awp_relative_norm_is_gamma() {
    let model = random_model(&[4, 6, 3], 5);
    let data = blobs(4, 3, 4, 0.5, 5);
    let b = data.batch(&(0..12).collect::<Vec<_>>());
    let e = EnhancedBatch::single(b.features.clone(), one_hot_matrix(&b.labels, 3));
    let v = awp_perturb(&model, &e, 0.01).unwrap();
    for (vl, pl) in v.layers.iter().zip(model.layers()) {
        assert!((vl.norm() / pl.norm() - 0.01).abs() < 1e-12);
    }
}

#[test]
fn awp_ascends_loss_for_small_gamma() {
    let mut ascended = 0;
    let trials = 40;
    for seed in 0..trials {
        let model = random_model(&[4, 8, 3], seed);
        let mut rng = rng_from_seed(seed);
        let x = random_matrix(10, 4, &mut rng);
        let labels: Vec<usize> = (0..10).map(|i| i % 3).collect();
        let e = EnhancedBatch::single(x, one_hot_matrix(&labels, 3));
        let v = awp_perturb(&model, &e, 1e-3).unwrap();
        if e.loss(&model.perturbed(&v)).unwrap() >= e.loss(&model).unwrap() {
            ascended += 1;
        }
    }
    assert!(ascended as f64 >= 0.95 * trials as f64);
}

#[test]
fn robust_accuracy_at_zero_epsilon_equals_clean() {
    let (model, data) = trained_model(6);
    let r = robust_accuracy(&model, &data, &AdvConfig::evaluation(0.0), &mut rng_from_seed(0)).unwrap();
    assert_eq!(r.clean_accuracy, r.adversarial_accuracy);
    assert!(r.clean_accuracy > 0.9);
}

#[test]
fn robust_accuracy_shrinks_with_epsilon() {
    let (model, data) = trained_model(7);
    let eps = 1.0;
    let accs: Vec<f64> = [0.0, eps / 2.0, eps]
        .iter()
        .map(|&e| {
            robust_accuracy(&model, &data, &AdvConfig::evaluation(e), &mut rng_from_seed(0))
                .unwrap()
                .adversarial_accuracy
        })
        .collect();
    assert!(accs[0] >= accs[1] && accs[1] >= accs[2], "{accs:?}");
}

#[test]
fn untrained_model_is_near_chance() {
    let n_classes = 4;
    let mut total = 0.0;
    let reps = 20;
    for seed in 0..reps {
        let data = blobs(50, n_classes, 6, 1.0, 100 + seed);
        let model = init_mlp(&[6, 16, n_classes], seed).unwrap();
        total += robust_accuracy(&model, &data, &AdvConfig::evaluation(0.0), &mut rng_from_seed(0))
            .unwrap()
            .clean_accuracy;
    }
    let mean = total / reps as f64;
    assert!((mean - 0.25).abs() < 0.1, "{mean}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn projection_is_exact(
        seed in 0u64..10_000,
        eps in 0.0f64..2.0,
        iters in 0usize..6,
        random_start in any::<bool>(),
        clamp in any::<bool>(),
    ) {
        let model = random_model(&[3, 5, 3], seed);
        let mut x = random_matrix(4, 3, &mut rng_from_seed(seed));
        x.as_mut_slice().iter_mut().for_each(|v| *v *= 0.5);
        let mut cfg = AdvConfig { epsilon: eps, step_size: eps / 3.0 + 1e-3, iters, random_start, clamp: None };
        if clamp {
            cfg = cfg.with_clamp(-0.5, 0.5);
        }
        let adv = pgd_attack(&model, &x, &[0, 1, 2, 0], &cfg, PgdObjective::KlVsClean, &mut rng_from_seed(seed)).unwrap();
        for (a, c) in adv.as_slice().iter().zip(x.as_slice()) {
            prop_assert!((a - c).abs() <= eps + 1e-15);
            if clamp {
                prop_assert!((-0.5..=0.5).contains(a));
            }
        }
    }

    #[test]
    fn trades_loss_dominates_clean_loss(seed in 0u64..10_000, lambda in 0.1f64..10.0) {
        let model = random_model(&[3, 5, 3], seed);
        let x = random_matrix(4, 3, &mut rng_from_seed(seed));
        let labels = [0, 1, 2, 0];
        let clean = mean_loss(&model, &x, &one_hot_matrix(&labels, 3)).unwrap();
        let (loss, _) = trades_loss(&model, &x, &labels, &AdvConfig::training(0.2), lambda, &mut rng_from_seed(seed)).unwrap();
        prop_assert!(loss >= clean);
    }

    #[test]
    fn adversarial_batches_are_deterministic(seed in 0u64..10_000) {
        let model = random_model(&[3, 5, 3], seed);
        let data = blobs(3, 3, 3, 0.5, seed);
        let b = data.batch(&[0, 1, 2, 3, 4, 5]);
        let cfg = AdvConfig::training(0.2);
        let a = trades_awp_batch(&model, &b, &cfg, 6.0, 5e-3, &mut rng_from_seed(seed)).unwrap();
        let c = trades_awp_batch(&model, &b, &cfg, 6.0, 5e-3, &mut rng_from_seed(seed)).unwrap();
        prop_assert_eq!(a, c);
    }
}
