//! Fixtures shared by the unit tests.

use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::nn::{init_mlp, Dataset, Matrix, MlpModel};
use crate::rng::{rng_from_seed, Rng};

/// `n_per_class` points per class around well separated centres.
pub fn blobs(n_per_class: usize, n_classes: usize, dim: usize, spread: f64, seed: u64) -> Dataset {
    let mut rng = rng_from_seed(seed);
    let noise = Normal::new(0.0, spread).unwrap();
    let centres: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n_per_class * n_classes {
        let c = i % n_classes;
        data.extend(centres[c].iter().map(|m| m + noise.sample(&mut rng)));
        labels.push(c);
    }
    let n = labels.len();
    Dataset::new(Matrix::from_vec(n, dim, data).unwrap(), labels, n_classes).unwrap()
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// A model with nonzero random biases, so every parameter gets exercised.
pub fn random_model(sizes: &[usize], seed: u64) -> MlpModel {
    let mut model = init_mlp(sizes, seed).unwrap();
    let mut rng = rng_from_seed(seed ^ 0xB1A5);
    for l in model.layers_mut() {
        l.biases.iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
    }
    model
}

/// Random probability rows.
pub fn random_targets(rows: usize, n_classes: usize, rng: &mut Rng) -> Matrix {
    let mut m = Matrix::zeros(rows, n_classes);
    for r in 0..rows {
        let row = m.row_mut(r);
        row.iter_mut().for_each(|v| *v = rng.random_range(0.01..1.0));
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    m
}
