//! Cross-entropy and the triplet discrimination loss on hybrid similarity.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::FeatureBundle;
use crate::similarity::{hm, hm_backward};

/// Losses of one step (or epoch average).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    #[serde(rename = "L_ce")]
    pub l_ce: f64,
    #[serde(rename = "L_d")]
    pub l_d: f64,
    pub total: f64,
    #[serde(rename = "active_triplets")]
    pub num_active_triplets: usize,
}

impl LossReport {
    pub fn new(l_ce: f64, l_d: f64, lambda_d: f64, num_active_triplets: usize) -> Self {
        Self {
            l_ce,
            l_d,
            total: l_ce + lambda_d * l_d,
            num_active_triplets,
        }
    }
}

fn log_softmax_at(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits[label] - lse
}

/// Mean over the batch of `-log softmax(logits)[label]`.
pub fn loss_ce(logits: &[Vec<f64>], labels: &[usize]) -> f64 {
    let n = logits.len() as f64;
    logits
        .iter()
        .zip(labels)
        .map(|(z, &y)| -log_softmax_at(z, y))
        .sum::<f64>()
        / n
}

/// [`loss_ce`] with its gradient with respect to every logit.
pub fn loss_ce_with_grad(logits: &[Vec<f64>], labels: &[usize]) -> (f64, Vec<Vec<f64>>) {
    let n = logits.len() as f64;
    let grads = logits
        .iter()
        .zip(labels)
        .map(|(z, &y)| {
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            exps.iter()
                .enumerate()
                .map(|(k, e)| (e / sum - if k == y { 1.0 } else { 0.0 }) / n)
                .collect()
        })
        .collect();
    (loss_ce(logits, labels), grads)
}

/// Result of the triplet loss over one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletLoss {
    pub value: f64,
    /// Triplets with a non-zero hinge.
    pub active: usize,
    /// All `(anchor, positive, negative)` triplets the labels admit.
    pub valid: usize,
}

/// Symmetric matrix of pairwise hybrid similarities.
pub fn pairwise_hm(bundles: &[FeatureBundle]) -> Result<Vec<Vec<f64>>> {
    let n = bundles.len();
    let mut sims = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let s = hm(&bundles[i], &bundles[j])?.hm;
            sims[i][j] = s;
            sims[j][i] = s;
        }
    }
    Ok(sims)
}

/// Enumerates ordered triplets `(a, p, n)` with `a != p`, `label[p] ==
/// label[a]` and `label[n] != label[a]`.
fn for_each_triplet(labels: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let n = labels.len();
    for a in 0..n {
        for p in 0..n {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            for q in 0..n {
                if labels[q] != labels[a] {
                    f(a, p, q);
                }
            }
        }
    }
}

fn triplet_from_sims(sims: &[Vec<f64>], labels: &[usize], margin: f64) -> (TripletLoss, Vec<Vec<f64>>) {
    let n = labels.len();
    let mut sum = 0.0;
    let mut active = 0usize;
    let mut valid = 0usize;
    let mut coef = vec![vec![0.0; n]; n];
    for_each_triplet(labels, |a, p, q| {
        valid += 1;
        let hinge = margin - sims[a][p] + sims[a][q];
        if hinge > 0.0 {
            sum += hinge;
            active += 1;
            coef[a][p] -= 1.0;
            coef[a][q] += 1.0;
        }
    });
    let value = if active > 0 { sum / active as f64 } else { 0.0 };
    if active > 0 {
        let inv = 1.0 / active as f64;
        coef.iter_mut().flatten().for_each(|c| *c *= inv);
    }
    (TripletLoss { value, active, valid }, coef)
}

/// Batch-all triplet loss on `hm`: the mean of `max(0, m - hm(a,p) +
/// hm(a,n))` over the triplets whose hinge is active. Zero when no triplet is
/// active or none exists.
pub fn loss_d(bundles: &[FeatureBundle], labels: &[usize], margin: f64) -> Result<TripletLoss> {
    let sims = pairwise_hm(bundles)?;
    Ok(triplet_from_sims(&sims, labels, margin).0)
}

/// Per-sample gradient of a loss with respect to the flat feature vector
/// (map and vector contributions already summed).
pub type FeatureGrads = Vec<Vec<f64>>;

/// [`loss_d`] with gradients with respect to every bundle's features.
pub fn loss_d_with_grad(bundles: &[FeatureBundle], labels: &[usize], margin: f64) -> Result<(TripletLoss, FeatureGrads)> {
    let n = bundles.len();
    let sims = pairwise_hm(bundles)?;
    let (loss, coef) = triplet_from_sims(&sims, labels, margin);
    let mut grads: FeatureGrads = bundles.iter().map(|b| vec![0.0; b.feature_vector.len()]).collect();
    for i in 0..n {
        for j in i + 1..n {
            let c = coef[i][j] + coef[j][i];
            if c == 0.0 {
                continue;
            }
            let (gi, gj) = hm_backward(&bundles[i], &bundles[j], c)?;
            for (dst, src) in grads[i].iter_mut().zip(gi.combined()) {
                *dst += src;
            }
            for (dst, src) in grads[j].iter_mut().zip(gj.combined()) {
                *dst += src;
            }
        }
    }
    Ok((loss, grads))
}
