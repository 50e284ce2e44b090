//! The interventional training loop.
//!
//! Every epoch rebuilds the training set with one fresh augmented copy per
//! original (a Monte-Carlo draw over imaging conditions), shuffles it, and
//! takes one SGD step per batch on `L_ce + lambda_d * L_d`.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{backward_into, forward_traced, init_params, sgd_step, FeatureBundle, GradientBundle, ModelParams, ModelShape, Trace, Upstream, Velocity};
use crate::seed::{derive_sample_seed, purpose, SeedStream};
use crate::synthdata::LabeledImage;

use super::augment::build_augmented_set;
use super::loss::{loss_ce_with_grad, loss_d_with_grad, LossReport};
use super::{argmax, AugmentConfig, TrainConfig};

/// One line of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    #[serde(flatten)]
    pub loss: LossReport,
    pub train_acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
}

/// Totals of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub loss: LossReport,
    pub correct: usize,
}

fn pool(threads: usize) -> Option<rayon::ThreadPool> {
    (threads > 1).then(|| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool")
    })
}

fn map_samples<T: Send, U: Send + Sync>(
    pool: Option<&rayon::ThreadPool>,
    items: &[U],
    f: impl Fn(&U) -> T + Send + Sync,
) -> Vec<T> {
    match pool {
        Some(p) => p.install(|| items.par_iter().map(&f).collect()),
        None => items.iter().map(f).collect(),
    }
}

/// Loss and parameter gradient of one batch.
///
/// `ld_weight` of zero skips the discrimination term entirely.
pub fn batch_gradient(
    params: &ModelParams,
    batch: &[&LabeledImage],
    margin: f64,
    ld_weight: f64,
    threads: Option<&rayon::ThreadPool>,
) -> Result<(StepReport, GradientBundle)> {
    let forwards: Vec<(FeatureBundle, Trace)> = map_samples(threads, batch, |x| forward_traced(params, &x.image))
        .into_iter()
        .collect::<Result<_>>()?;
    let labels: Vec<usize> = batch.iter().map(|x| x.label).collect();
    let logits: Vec<Vec<f64>> = forwards.iter().map(|(b, _)| b.logits.clone()).collect();
    let correct = logits
        .iter()
        .zip(&labels)
        .filter(|(z, &y)| argmax(z) == y)
        .count();
    let (ce, d_logits) = loss_ce_with_grad(&logits, &labels);

    let (ld, active, d_features) = if ld_weight > 0.0 {
        let bundles: Vec<FeatureBundle> = forwards.iter().map(|(b, _)| b.clone()).collect();
        let (t, mut g) = loss_d_with_grad(&bundles, &labels, margin)?;
        g.iter_mut().flatten().for_each(|v| *v *= ld_weight);
        (t.value, t.active, Some(g))
    } else {
        (0.0, 0, None)
    };

    let upstream: Vec<Upstream> = d_logits
        .into_iter()
        .enumerate()
        .map(|(i, d_logits)| Upstream {
            d_logits,
            d_features: match &d_features {
                Some(g) => g[i].clone(),
                None => vec![0.0; params.shape.feature_len()],
            },
        })
        .collect();
    let pairs: Vec<(&Trace, &Upstream)> = forwards.iter().map(|(_, t)| t).zip(&upstream).collect();
    let partials: Vec<GradientBundle> = map_samples(threads, &pairs, |(t, u)| {
        let mut g = GradientBundle::zeros(params.shape);
        backward_into(params, t, u, &mut g);
        g
    });
    // Reduce in sample order so the sum does not depend on scheduling.
    let mut grads = GradientBundle::zeros(params.shape);
    for g in &partials {
        grads.accumulate(g);
    }
    let report = StepReport {
        loss: LossReport::new(ce, ld, ld_weight, active),
        correct,
    };
    Ok((report, grads))
}

fn check_inputs(train: &[LabeledImage], num_classes: usize) -> Result<ModelShape> {
    let first = train.first().ok_or_else(|| invalid("train", "training set is empty"))?;
    let (h, w) = first.image.dims();
    if let Some(bad) = train.iter().find(|x| x.image.dims() != (h, w)) {
        return Err(Error::ShapeMismatch(format!(
            "mixed image sizes {h}x{w} and {:?}",
            bad.image.dims()
        )));
    }
    if let Some(bad) = train.iter().find(|x| x.label >= num_classes) {
        return Err(invalid("label", format!("label {} >= {num_classes} classes", bad.label)));
    }
    ModelShape::new(h, w, num_classes)
}

/// Trains from scratch. Deterministic for a given seed regardless of
/// `cfg.threads`, since per-sample results are reduced in order.
pub fn train(train: &[LabeledImage], num_classes: usize, cfg: &TrainConfig, acfg: &AugmentConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let shape = check_inputs(train, num_classes)?;
    let acfg = AugmentConfig {
        enabled: acfg.enabled && cfg.augment_on,
        ..acfg.clone()
    };
    if acfg.enabled {
        acfg.validate(shape.height, shape.width)?;
    }
    let ld_weight = if cfg.ld_on { cfg.lambda_d } else { 0.0 };
    let root = SeedStream::new(cfg.seed, 0);
    let aug_root = root.child(purpose::AUGMENT);
    let shuffle_root = root.child(purpose::SHUFFLE);
    let threads = pool(cfg.threads);

    let mut params = init_params(root.child(purpose::INIT), shape);
    let mut velocity = Velocity::zeros(shape);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let set = build_augmented_set(train, epoch as u32, aug_root, &acfg)?;
        let mut order: Vec<usize> = (0..set.len()).collect();
        order.shuffle(&mut derive_sample_seed(shuffle_root, epoch as u32, 0).rng());

        let (mut ce_sum, mut ld_sum, mut active, mut correct) = (0.0, 0.0, 0usize, 0usize);
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&LabeledImage> = chunk.iter().map(|&i| &set[i]).collect();
            let (step, grads) = batch_gradient(&params, &batch, cfg.margin, ld_weight, threads.as_ref())?;
            let total = step.loss.total;
            if !total.is_finite() || !grads.0.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    ce: step.loss.l_ce,
                    discrimination: step.loss.l_d,
                    total,
                });
            }
            sgd_step(&mut params, &grads, cfg.lr, cfg.momentum, &mut velocity);
            ce_sum += step.loss.l_ce * batch.len() as f64;
            ld_sum += step.loss.l_d;
            active += step.loss.num_active_triplets;
            correct += step.correct;
            batches += 1;
        }
        let loss = LossReport::new(ce_sum / set.len() as f64, ld_sum / batches as f64, ld_weight, active);
        history.push(EpochRecord {
            epoch,
            loss,
            train_acc: correct as f64 / set.len() as f64,
        });
    }
    Ok(TrainOutcome { params, history })
}
