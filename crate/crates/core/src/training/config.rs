use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::spatial::TransformKind;

/// Standard deviation of the magnitude draw for each transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformSigmas {
    pub rotate: f64,
    pub scale: f64,
    pub translate: f64,
    pub flip_h: f64,
    pub flip_v: f64,
}

impl Default for TransformSigmas {
    fn default() -> Self {
        Self {
            rotate: 1.0,
            scale: 1.0,
            translate: 1.0,
            flip_h: 1.0,
            flip_v: 1.0,
        }
    }
}

impl TransformSigmas {
    pub fn get(&self, kind: TransformKind) -> f64 {
        match kind {
            TransformKind::Rotate => self.rotate,
            TransformKind::Scale => self.scale,
            TransformKind::Translate => self.translate,
            TransformKind::FlipH => self.flip_h,
            TransformKind::FlipV => self.flip_v,
        }
    }
}

/// Parameters of the spatial-frequency augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Reuse the epoch-0 augmented copies in every epoch instead of redrawing.
    pub fixed: bool,
    pub ra_max: f64,
    pub rm_re_choices: Vec<usize>,
    pub include_prob: f64,
    pub sigmas: TransformSigmas,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            fixed: false,
            ra_max: 0.3,
            rm_re_choices: vec![4, 8, 16],
            include_prob: 0.5,
            sigmas: TransformSigmas::default(),
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ra_max) {
            return Err(invalid("ra_max", format!("{} outside [0, 1]", self.ra_max)));
        }
        if !(0.0..=1.0).contains(&self.include_prob) {
            return Err(invalid("include_prob", format!("{} outside [0, 1]", self.include_prob)));
        }
        if self.rm_re_choices.is_empty() {
            return Err(invalid("rm_re_choices", "must list at least one patch edge"));
        }
        if let Some(bad) = self
            .rm_re_choices
            .iter()
            .find(|&&r| r == 0 || height % r != 0 || width % r != 0)
        {
            return Err(invalid("rm_re_choices", format!("{bad} does not divide {height}x{width}")));
        }
        for kind in TransformKind::ALL {
            let s = self.sigmas.get(kind);
            if !(s > 0.0 && s.is_finite()) {
                return Err(invalid("sigma", format!("sigma for {} must be positive", kind.name())));
            }
        }
        Ok(())
    }
}

/// Optimizer, loss and ablation settings for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Triplet margin on the hybrid similarity.
    pub margin: f64,
    /// Weight of the discrimination loss in the total.
    pub lambda_d: f64,
    pub seed: u64,
    pub augment_on: bool,
    pub ld_on: bool,
    /// Worker threads for per-sample work inside a batch; 1 is sequential.
    #[serde(skip)]
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_size: 24,
            lr: 0.01,
            momentum: 0.9,
            margin: 0.5,
            lambda_d: 1.0,
            seed: 0,
            augment_on: true,
            ld_on: true,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(invalid("epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid("lr", format!("{} must be positive", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid("momentum", format!("{} outside [0, 1)", self.momentum)));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(invalid("margin", format!("{} must be positive", self.margin)));
        }
        if !(self.lambda_d >= 0.0 && self.lambda_d.is_finite()) {
            return Err(invalid("lambda_d", format!("{} must be non-negative", self.lambda_d)));
        }
        Ok(())
    }
}
