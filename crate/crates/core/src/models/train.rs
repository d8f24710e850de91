use rand_distr::{Distribution, Normal};

use super::{accountant, accuracy, DatasetMeta, DpReport, EpochRecord, ModelConfig, StopReason, TrainedModel};
use crate::data::{feature_matrix, task_labels, Sample};
use crate::error::{Error, Result};
use crate::nn::{cross_entropy, gather_rows, shuffled_indices, Adam, Network};
use crate::seed::{derive_seed, rng_for};

fn check_inputs(config: &ModelConfig, meta: &DatasetMeta, train: &[Sample], test: &[Sample]) -> Result<()> {
    config.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::InsufficientSamples("training and test sets must be nonempty".into()));
    }
    for s in train.iter().chain(test) {
        meta.validate(s)?;
    }
    Ok(())
}

/// Train with Adam on mini-batches, evaluating after every epoch. Training
/// halts at the first epoch whose train-test accuracy gap exceeds
/// `overfit_threshold`, or after `max_epochs`.
pub fn train_model(config: &ModelConfig, meta: DatasetMeta, train: &[Sample], test: &[Sample]) -> Result<TrainedModel> {
    if config.dp.is_some() {
        return train_dp_model(config, meta, train, test);
    }
    check_inputs(config, &meta, train, test)?;
    let x = feature_matrix(train);
    let y = task_labels(train);
    let mut net = config.architecture.build(&meta, config.seed);
    let mut adam = Adam::new(config.learning_rate, net.param_count());
    let mut rng = rng_for(derive_seed(config.seed, "shuffle", 0));
    run_epochs(config, &mut net, train, test, |net, epoch| {
        let order = shuffled_indices(train.len(), &mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let xb = gather_rows(&x, batch);
            let yb: Vec<usize> = batch.iter().map(|&i| y[i]).collect();
            let (logits, trace) = net.forward_trace(&xb);
            let (loss, dlogits) = cross_entropy(&logits, &yb);
            if !loss.is_finite() {
                return Err(Error::DivergedTraining { epoch });
            }
            total += loss;
            let (grad, _) = net.backward(&trace, &(dlogits / batch.len() as f64));
            adam.step(net, &grad);
        }
        Ok(total / train.len() as f64)
    })
    .map(|(net, log, stop)| finish(config, meta, net, log, stop, None))
}

/// Scale `grad` so its Euclidean norm is at most `clip_norm`; returns the
/// resulting norm.
pub fn clip_in_place(grad: &mut [f64], clip_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > clip_norm {
        let scale = clip_norm / norm;
        grad.iter_mut().for_each(|g| *g *= scale);
        clip_norm
    } else {
        norm
    }
}

/// DP-SGD: per-sample gradients are clipped to `clip_norm`, summed, perturbed
/// with `N(0, (sigma * clip_norm)^2)` per coordinate and averaged over the batch
/// before the Adam update. Batches are disjoint slices of a fresh shuffle each
/// epoch. `sigma` comes from the RDP accountant for `max_epochs` worth of steps
/// unless fixed in the config.
pub fn train_dp_model(config: &ModelConfig, meta: DatasetMeta, train: &[Sample], test: &[Sample]) -> Result<TrainedModel> {
    check_inputs(config, &meta, train, test)?;
    let dp = config
        .dp
        .clone()
        .ok_or_else(|| Error::InvalidSpec("train_dp_model needs a dp config".into()))?;
    let batch_size = config.batch_size.min(train.len());
    let steps_per_epoch = train.len().div_ceil(batch_size);
    let planned_steps = steps_per_epoch * config.max_epochs;
    let sigma = match dp.noise_multiplier {
        Some(s) => s,
        None => {
            let q = batch_size as f64 / train.len() as f64;
            accountant::noise_multiplier_for(dp.epsilon, dp.delta, q, planned_steps)?
        }
    };

    let x = feature_matrix(train);
    let y = task_labels(train);
    let mut net = config.architecture.build(&meta, config.seed);
    let mut adam = Adam::new(config.learning_rate, net.param_count());
    let mut rng = rng_for(derive_seed(config.seed, "shuffle", 0));
    let mut noise_rng = rng_for(derive_seed(config.seed, "dp_noise", 0));
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut max_norms = Vec::new();
    let result = run_epochs(config, &mut net, train, test, |net, epoch| {
        let order = shuffled_indices(train.len(), &mut rng);
        let mut total = 0.0;
        for batch in order.chunks(batch_size) {
            let mut sum = vec![0.0; net.param_count()];
            let mut max_norm: f64 = 0.0;
            for &i in batch {
                let xi = gather_rows(&x, &[i]);
                let (logits, trace) = net.forward_trace(&xi);
                let (loss, dlogits) = cross_entropy(&logits, &[y[i]]);
                if !loss.is_finite() {
                    return Err(Error::DivergedTraining { epoch });
                }
                total += loss;
                let (mut g, _) = net.backward(&trace, &dlogits);
                max_norm = max_norm.max(clip_in_place(&mut g, dp.clip_norm));
                sum.iter_mut().zip(&g).for_each(|(s, g)| *s += g);
            }
            if sigma > 0.0 {
                let std = sigma * dp.clip_norm;
                sum.iter_mut().for_each(|s| *s += std * normal.sample(&mut noise_rng));
            }
            let inv = 1.0 / batch.len() as f64;
            sum.iter_mut().for_each(|s| *s *= inv);
            adam.step(net, &sum);
            max_norms.push(max_norm);
        }
        Ok(total / train.len() as f64)
    });
    let (net, log, stop) = result?;
    let steps = max_norms.len();
    let report = DpReport { noise_multiplier: sigma, steps, max_clipped_norms: max_norms };
    Ok(finish(config, meta, net, log, stop, Some(report)))
}

type EpochOutcome = (Network, Vec<EpochRecord>, StopReason);

fn run_epochs(
    config: &ModelConfig,
    net: &mut Network,
    train: &[Sample],
    test: &[Sample],
    mut epoch_fn: impl FnMut(&mut Network, usize) -> Result<f64>,
) -> Result<EpochOutcome> {
    let mut log = Vec::new();
    let mut stop = StopReason::MaxEpochs;
    for epoch in 1..=config.max_epochs {
        let mean_loss = epoch_fn(net, epoch)?;
        if !mean_loss.is_finite() || net.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::DivergedTraining { epoch });
        }
        let train_acc = accuracy(&*net, train);
        let test_acc = accuracy(&*net, test);
        log.push(EpochRecord { epoch, train_acc, test_acc, mean_loss });
        if train_acc - test_acc > config.overfit_threshold {
            stop = StopReason::OverfitThreshold;
            break;
        }
    }
    Ok((net.clone(), log, stop))
}

fn finish(
    config: &ModelConfig,
    meta: DatasetMeta,
    network: Network,
    log: Vec<EpochRecord>,
    stop_reason: StopReason,
    dp_report: Option<DpReport>,
) -> TrainedModel {
    let last = log.last().expect("at least one epoch");
    TrainedModel {
        network,
        config: config.clone(),
        meta,
        final_train_acc: last.train_acc,
        final_test_acc: last.test_acc,
        training_log: log,
        stop_reason,
        dp_report,
    }
}
