//! Losses, the training loop, evaluation and the ablation harness.

mod augment;
mod config;
mod eval;
pub mod experiment;
mod loss;
mod train;

pub use augment::{augment_sample, augment_stages, build_augmented_set, AugmentStages};
pub use config::{AugmentConfig, TrainConfig, TransformSigmas};
pub use eval::{evaluate, EvalReport};
pub use loss::{loss_ce, loss_ce_with_grad, loss_d, loss_d_with_grad, pairwise_hm, FeatureGrads, LossReport, TripletLoss};
pub use train::{batch_gradient, train, EpochRecord, StepReport, TrainOutcome};

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
