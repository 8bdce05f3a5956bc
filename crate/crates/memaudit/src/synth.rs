//! Synthetic long-tail classification data.
//!
//! Each class has one broad Gaussian cluster holding most of its samples.
//! A `tail_fraction` of every class is instead spread over small rare
//! subclusters whose centres are drawn independently of the class centre, so
//! a model only classifies them correctly after seeing them. Features are
//! min-max scaled to `[0, 1]` and rounded to `f32`.
//!
//! With `code_agreement` set, `n_classes` extra features carry a noisy
//! one-hot class code that names the true class with that probability and a
//! uniformly drawn other class otherwise. The code is far more robust to
//! small l-infinity perturbations than the cluster features, so adversarial
//! training leans on it and has to memorize the samples whose code disagrees.

use memaudit_core::nn::{Dataset, Matrix};
use memaudit_core::rng::{mix_seed, rng_from_seed};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_per_class: usize,
    pub n_classes: usize,
    pub n_features: usize,
    pub tail_fraction: f64,
    /// Standard deviation of class and subcluster centres.
    pub center_scale: f64,
    /// Within-cluster standard deviation of typical samples.
    pub spread: f64,
    /// Within-subcluster standard deviation of tail samples.
    pub tail_spread: f64,
    /// Samples per rare subcluster.
    pub subcluster_size: usize,
    /// Draw typical-sample noise uniformly (same standard deviation) instead of Gaussian.
    pub uniform_noise: bool,
    /// Probability that the class code names the true class; `None` omits the code.
    pub code_agreement: Option<f64>,
    /// Standard deviation of the noise on the class code.
    pub code_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_per_class: 500,
            n_classes: 10,
            n_features: 20,
            tail_fraction: 0.2,
            center_scale: 1.0,
            spread: 0.3,
            tail_spread: 0.15,
            subcluster_size: 2,
            uniform_noise: false,
            code_agreement: None,
            code_noise: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_class == 0 || self.n_classes < 2 || self.n_features == 0 {
            return Err(Error::Config(
                "dataset needs n_per_class >= 1, n_classes >= 2 and n_features >= 1".into(),
            ));
        }
        if !(0.0..=0.5).contains(&self.tail_fraction) {
            return Err(Error::Config(format!(
                "tail_fraction {} is outside [0, 0.5]",
                self.tail_fraction
            )));
        }
        if self.subcluster_size == 0 {
            return Err(Error::Config("subcluster_size must be positive".into()));
        }
        for (name, v) in [
            ("center_scale", self.center_scale),
            ("spread", self.spread),
            ("tail_spread", self.tail_spread),
            ("code_noise", self.code_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
        if let Some(p) = self.code_agreement {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("code_agreement {p} is outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn total_features(&self) -> usize {
        self.n_features + if self.code_agreement.is_some() { self.n_classes } else { 0 }
    }
}

/// Generated data plus per-sample provenance flags.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub dataset: Dataset,
    pub is_tail: Vec<bool>,
    /// Class code names a wrong class (always false without a code).
    pub code_flipped: Vec<bool>,
}

fn gaussian_point(center: &[f64], sd: f64, rng: &mut memaudit_core::rng::Rng) -> Vec<f64> {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    center.iter().map(|&c| c + sd * n.sample(rng)).collect()
}

fn uniform_point(center: &[f64], sd: f64, rng: &mut memaudit_core::rng::Rng) -> Vec<f64> {
    let half = 3f64.sqrt() * sd;
    center
        .iter()
        .map(|&c| c + half * (2.0 * rng.random::<f64>() - 1.0))
        .collect()
}

pub fn gen_synthetic(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let d = cfg.n_features;
    let mut rng = rng_from_seed(mix_seed(cfg.seed, 0x5EED));
    let n_tail = (cfg.tail_fraction * cfg.n_per_class as f64).round() as usize;

    let mut rows: Vec<(Vec<f64>, usize, bool)> = Vec::with_capacity(cfg.n_per_class * cfg.n_classes);
    for class in 0..cfg.n_classes {
        let centre = gaussian_point(&vec![0.0; d], cfg.center_scale, &mut rng);
        for _ in 0..cfg.n_per_class - n_tail {
            let x = if cfg.uniform_noise {
                uniform_point(&centre, cfg.spread, &mut rng)
            } else {
                gaussian_point(&centre, cfg.spread, &mut rng)
            };
            rows.push((x, class, false));
        }
        let mut left = n_tail;
        while left > 0 {
            let sub = gaussian_point(&vec![0.0; d], cfg.center_scale, &mut rng);
            for _ in 0..cfg.subcluster_size.min(left) {
                rows.push((gaussian_point(&sub, cfg.tail_spread, &mut rng), class, true));
                left -= 1;
            }
        }
    }
    rows.shuffle(&mut rng);

    let mut code_flipped = vec![false; rows.len()];
    if let Some(agree) = cfg.code_agreement {
        let mut code_rng = rng_from_seed(mix_seed(cfg.seed, 0xC0DE));
        let noise = Normal::new(0.0, 1.0).expect("unit normal");
        for ((x, y, _), flipped) in rows.iter_mut().zip(&mut code_flipped) {
            let mut code = *y;
            if code_rng.random::<f64>() >= agree {
                code = (*y + code_rng.random_range(1..cfg.n_classes)) % cfg.n_classes;
                *flipped = true;
            }
            for c in 0..cfg.n_classes {
                let base = if c == code { 1.0 } else { 0.0 };
                x.push(base + cfg.code_noise * noise.sample(&mut code_rng));
            }
        }
    }

    let d = cfg.total_features();
    let n = rows.len();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for (x, _, _) in &rows {
        for k in 0..d {
            lo[k] = lo[k].min(x[k]);
            hi[k] = hi[k].max(x[k]);
        }
    }
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    let mut is_tail = Vec::with_capacity(n);
    for (x, y, t) in rows {
        for k in 0..d {
            let span = hi[k] - lo[k];
            let v = if span > 0.0 { (x[k] - lo[k]) / span } else { 0.0 };
            data.push(v as f32 as f64);
        }
        labels.push(y);
        is_tail.push(t);
    }
    let dataset = Dataset::new(Matrix::from_vec(n, d, data)?, labels, cfg.n_classes)?;
    Ok(SynthData {
        dataset,
        is_tail,
        code_flipped,
    })
}
