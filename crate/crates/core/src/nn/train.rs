use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::{init_mlp, sgd_step, Dataset, MlpModel, TrainConfig, Velocity};
use crate::augment::{enhancement_gradients, EnhancementSpec, ModelContext};
use crate::rng::{mix_seed, rng_from_seed, stream};
use crate::{Error, Result};

/// Fits a model on `member_rows` of `dataset` under `config`.
///
/// The run is a pure function of its inputs: each epoch reshuffles the
/// member rows with a stream keyed by `(seed, epoch)` and draws enhancement
/// randomness from a second, independent stream. Distillation trains its
/// auxiliary network first, on the same rows with no enhancement.
pub fn train(dataset: &Dataset, member_rows: &[usize], config: &TrainConfig) -> Result<MlpModel> {
    train_with_teacher(dataset, member_rows, config, None)
}

/// Like [`train`], but distillation uses the supplied auxiliary model.
pub fn train_with_teacher(
    dataset: &Dataset,
    member_rows: &[usize],
    config: &TrainConfig,
    teacher: Option<&MlpModel>,
) -> Result<MlpModel> {
    config.validate()?;
    if member_rows.is_empty() {
        return Err(Error::EmptyMemberSet);
    }
    if let Some(&bad) = member_rows.iter().find(|&&r| r >= dataset.n_samples()) {
        return Err(Error::param(
            "member_rows",
            alloc::format!("row {bad} is out of range for {} samples", dataset.n_samples()),
        ));
    }
    let n_classes = dataset.n_classes();
    let sizes = config.layer_sizes(dataset.n_features(), n_classes);
    let mut model = init_mlp(&sizes, mix_seed(config.seed, stream::INIT))?;
    if config.epochs == 0 {
        return Ok(model);
    }

    let owned_teacher;
    let teacher = match (&config.enhancement, teacher) {
        (EnhancementSpec::Distillation { .. }, None) => {
            let mut aux = config.clone();
            aux.enhancement = EnhancementSpec::None;
            aux.seed = mix_seed(config.seed, stream::TEACHER);
            owned_teacher = train(dataset, member_rows, &aux)?;
            Some(&owned_teacher)
        }
        (_, t) => t,
    };

    let mut velocity = Velocity::zeros_like(&model);
    let mut order: Vec<usize> = member_rows.to_vec();
    for epoch in 0..config.epochs {
        let epoch_seed = mix_seed(config.seed, epoch as u64);
        let mut shuffle_rng = rng_from_seed(mix_seed(epoch_seed, stream::SHUFFLE));
        let mut enhance_rng = rng_from_seed(mix_seed(epoch_seed, stream::ENHANCE));
        order.copy_from_slice(member_rows);
        order.shuffle(&mut shuffle_rng);
        let lr = config.lr_at(epoch);
        for chunk in order.chunks(config.batch_size) {
            let batch = dataset.batch(chunk);
            let ctx = ModelContext {
                model: &model,
                teacher,
            };
            let grads = enhancement_gradients(
                &config.enhancement,
                &batch,
                n_classes,
                &ctx,
                &mut enhance_rng,
            )?;
            sgd_step(&mut model, &grads, &mut velocity, lr, config.momentum)?;
        }
    }
    Ok(model)
}
