//! Two-layer convolutional feature extractor with a linear head.
//!
//! ```text
//! image (1 x h x w)
//!   -> conv 3x3 pad 1 (8)  -> ReLU -> max-pool 2x2
//!   -> conv 3x3 pad 1 (16) -> ReLU -> max-pool 2x2   = feature map (16 x h/4 x w/4)
//!   -> flatten                                       = feature vector (F)
//!   -> linear (C x F)                                = logits
//! ```
//!
//! Gradients are computed by hand. The discrimination loss injects gradients
//! at the pooled feature level and the cross-entropy loss at the logits; both
//! flow back through the same trunk.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::seed::SeedStream;

pub const CONV1_OUT: usize = 8;
pub const CONV2_OUT: usize = 16;
const K: usize = 3;

/// Input geometry and class count a parameter set was built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
}

impl ModelShape {
    pub fn new(height: usize, width: usize, num_classes: usize) -> Result<Self> {
        if height % 4 != 0 || width % 4 != 0 || height < 4 || width < 4 {
            return Err(Error::ShapeMismatch(format!(
                "input {height}x{width} must be divisible by 4"
            )));
        }
        if num_classes < 1 {
            return Err(Error::ShapeMismatch("at least one class is required".into()));
        }
        Ok(Self {
            height,
            width,
            num_classes,
        })
    }

    /// `(channels, rows, cols)` of the feature map.
    pub fn feature_dims(&self) -> (usize, usize, usize) {
        (CONV2_OUT, self.height / 4, self.width / 4)
    }

    pub fn feature_len(&self) -> usize {
        CONV2_OUT * (self.height / 4) * (self.width / 4)
    }

    fn tensor_lens(&self) -> [usize; 6] {
        [
            CONV1_OUT * K * K,
            CONV1_OUT,
            CONV2_OUT * CONV1_OUT * K * K,
            CONV2_OUT,
            self.num_classes * self.feature_len(),
            self.num_classes,
        ]
    }
}

pub const TENSOR_NAMES: [&str; 6] = ["conv1_w", "conv1_b", "conv2_w", "conv2_b", "fc_w", "fc_b"];

/// Network weights. Layouts are row-major: conv weights `[out][in][ky][kx]`,
/// head weights `[class][feature]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub shape: ModelShape,
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    pub fc_w: Vec<f64>,
    pub fc_b: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(shape: ModelShape) -> Self {
        let [a, b, c, d, e, f] = shape.tensor_lens();
        Self {
            shape,
            conv1_w: vec![0.0; a],
            conv1_b: vec![0.0; b],
            conv2_w: vec![0.0; c],
            conv2_b: vec![0.0; d],
            fc_w: vec![0.0; e],
            fc_b: vec![0.0; f],
        }
    }

    /// Rebuilds a parameter set from named tensors in [`TENSOR_NAMES`] order.
    pub fn from_tensors(shape: ModelShape, tensors: Vec<Vec<f64>>) -> Result<Self> {
        let lens = shape.tensor_lens();
        if tensors.len() != 6 || tensors.iter().zip(lens).any(|(t, l)| t.len() != l) {
            return Err(Error::ShapeMismatch("tensor lengths do not match the model shape".into()));
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("six tensors");
        Ok(Self {
            shape,
            conv1_w: next(),
            conv1_b: next(),
            conv2_w: next(),
            conv2_b: next(),
            fc_w: next(),
            fc_b: next(),
        })
    }

    pub fn tensors(&self) -> [&[f64]; 6] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.fc_w,
            &self.fc_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.fc_w,
            &mut self.fc_b,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Gradients of a scalar loss, shape-matched to [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle(pub ModelParams);

impl GradientBundle {
    pub fn zeros(shape: ModelShape) -> Self {
        Self(ModelParams::zeros(shape))
    }

    /// `self += other`.
    pub fn accumulate(&mut self, other: &GradientBundle) {
        for (dst, src) in self.0.tensors_mut().into_iter().zip(other.0.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.0.tensors_mut() {
            for v in t.iter_mut() {
                *v *= factor;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.0
            .tensors()
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl std::ops::Deref for GradientBundle {
    type Target = ModelParams;
    fn deref(&self) -> &ModelParams {
        &self.0
    }
}

impl std::ops::DerefMut for GradientBundle {
    fn deref_mut(&mut self) -> &mut ModelParams {
        &mut self.0
    }
}

/// He-normal weights, zero biases.
pub fn init_params(rng: SeedStream, shape: ModelShape) -> ModelParams {
    let mut rng = rng.rng();
    let mut params = ModelParams::zeros(shape);
    let fan_ins = [K * K, CONV1_OUT * K * K, shape.feature_len()];
    let weights = [&mut params.conv1_w, &mut params.conv2_w, &mut params.fc_w];
    for (w, fan_in) in weights.into_iter().zip(fan_ins) {
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        for v in w.iter_mut() {
            *v = normal.sample(&mut rng);
        }
    }
    params
}

/// Channel-major 3D activation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {channels}x{height}x{width} map",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

/// Everything the losses see for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    pub feature_map: FeatureMap,
    pub feature_vector: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    input: Vec<f64>,
    z1: Vec<f64>,
    pool1_arg: Vec<u32>,
    pooled1: Vec<f64>,
    z2: Vec<f64>,
    pool2_arg: Vec<u32>,
    pooled2: Vec<f64>,
}

impl Trace {
    /// Winning position of every pooling window and whether its value passed
    /// the ReLU. Two parameter points with different patterns lie on
    /// different linear pieces of the network.
    pub fn activation_pattern(&self) -> Vec<u32> {
        let encode = |arg: &[u32], z: &[f64]| {
            arg.iter()
                .map(|&k| 2 * k + u32::from(z[k as usize] > 0.0))
                .collect::<Vec<_>>()
        };
        let mut out = encode(&self.pool1_arg, &self.z1);
        out.extend(encode(&self.pool2_arg, &self.z2));
        out
    }
}

/// 3x3 convolution with zero padding 1 over a channel-major input.
fn conv3x3(input: &[f64], in_c: usize, h: usize, w: usize, weights: &[f64], bias: &[f64], out_c: usize) -> Vec<f64> {
    let plane = h * w;
    let mut out = vec![0.0; out_c * plane];
    for oc in 0..out_c {
        let dst = &mut out[oc * plane..(oc + 1) * plane];
        dst.fill(bias[oc]);
        for ic in 0..in_c {
            let src = &input[ic * plane..(ic + 1) * plane];
            for ky in 0..K {
                for kx in 0..K {
                    let wv = weights[((oc * in_c + ic) * K + ky) * K + kx];
                    let (dy, dx) = (ky as isize - 1, kx as isize - 1);
                    let y0 = (-dy).max(0) as usize;
                    let y1 = (h as isize - dy).min(h as isize) as usize;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize) as usize;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let sx0 = (x0 as isize + dx) as usize;
                        let d = &mut dst[y * w + x0..y * w + x1];
                        let s = &src[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                        for (o, i) in d.iter_mut().zip(s) {
                            *o += wv * i;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of [`conv3x3`]: accumulates weight and bias gradients and, if
/// requested, returns the input gradient.
#[allow(clippy::too_many_arguments)]
fn conv3x3_backward(
    input: &[f64],
    in_c: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    out_c: usize,
    d_out: &[f64],
    d_weights: &mut [f64],
    d_bias: &mut [f64],
    want_input_grad: bool,
) -> Option<Vec<f64>> {
    let plane = h * w;
    let mut d_in = want_input_grad.then(|| vec![0.0; in_c * plane]);
    for oc in 0..out_c {
        let g = &d_out[oc * plane..(oc + 1) * plane];
        d_bias[oc] += g.iter().sum::<f64>();
        for ic in 0..in_c {
            let src = &input[ic * plane..(ic + 1) * plane];
            for ky in 0..K {
                for kx in 0..K {
                    let widx = ((oc * in_c + ic) * K + ky) * K + kx;
                    let wv = weights[widx];
                    let (dy, dx) = (ky as isize - 1, kx as isize - 1);
                    let y0 = (-dy).max(0) as usize;
                    let y1 = (h as isize - dy).min(h as isize) as usize;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize) as usize;
                    let sx0 = (x0 as isize + dx) as usize;
                    let span = x1 - x0;
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let gr = &g[y * w + x0..y * w + x1];
                        let sr = &src[sy * w + sx0..sy * w + sx0 + span];
                        acc += gr.iter().zip(sr).map(|(a, b)| a * b).sum::<f64>();
                        if let Some(d_in) = d_in.as_mut() {
                            let dr = &mut d_in[ic * plane + sy * w + sx0..ic * plane + sy * w + sx0 + span];
                            for (d, gv) in dr.iter_mut().zip(gr) {
                                *d += wv * gv;
                            }
                        }
                    }
                    d_weights[widx] += acc;
                }
            }
        }
    }
    d_in
}

/// ReLU followed by 2x2 max-pool. Ties go to the first element in row-major
/// order. Returns pooled values and the flat input index of each maximum.
fn relu_maxpool(z: &[f64], channels: usize, h: usize, w: usize) -> (Vec<f64>, Vec<u32>) {
    let (ph, pw) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(channels * ph * pw);
    let mut arg = Vec::with_capacity(channels * ph * pw);
    for c in 0..channels {
        let base = c * h * w;
        for i in 0..ph {
            for j in 0..pw {
                let cands = [
                    base + 2 * i * w + 2 * j,
                    base + 2 * i * w + 2 * j + 1,
                    base + (2 * i + 1) * w + 2 * j,
                    base + (2 * i + 1) * w + 2 * j + 1,
                ];
                let mut best = cands[0];
                for &k in &cands[1..] {
                    if z[k] > z[best] {
                        best = k;
                    }
                }
                out.push(z[best].max(0.0));
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

/// Routes pooled gradients back to the argmax positions, masked by ReLU.
fn relu_maxpool_backward(d_pooled: &[f64], arg: &[u32], z: &[f64]) -> Vec<f64> {
    let mut d_z = vec![0.0; z.len()];
    for (&g, &k) in d_pooled.iter().zip(arg) {
        let k = k as usize;
        if z[k] > 0.0 {
            d_z[k] += g;
        }
    }
    d_z
}

fn check_input(params: &ModelParams, img: &Grid2D) -> Result<()> {
    let s = params.shape;
    if img.dims() != (s.height, s.width) {
        return Err(Error::ShapeMismatch(format!(
            "model expects {}x{} images, got {}x{}",
            s.height,
            s.width,
            img.height(),
            img.width()
        )));
    }
    Ok(())
}

/// Forward pass keeping the activations needed by [`backward`].
pub fn forward_traced(params: &ModelParams, img: &Grid2D) -> Result<(FeatureBundle, Trace)> {
    check_input(params, img)?;
    let s = params.shape;
    let (h, w) = (s.height, s.width);
    let input = img.as_slice().to_vec();
    let z1 = conv3x3(&input, 1, h, w, &params.conv1_w, &params.conv1_b, CONV1_OUT);
    let (pooled1, pool1_arg) = relu_maxpool(&z1, CONV1_OUT, h, w);
    let (h2, w2) = (h / 2, w / 2);
    let z2 = conv3x3(&pooled1, CONV1_OUT, h2, w2, &params.conv2_w, &params.conv2_b, CONV2_OUT);
    let (pooled2, pool2_arg) = relu_maxpool(&z2, CONV2_OUT, h2, w2);
    let f = s.feature_len();
    let logits = (0..s.num_classes)
        .map(|k| {
            params.fc_b[k]
                + params.fc_w[k * f..(k + 1) * f]
                    .iter()
                    .zip(&pooled2)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
        })
        .collect();
    let (c, fh, fw) = s.feature_dims();
    let bundle = FeatureBundle {
        feature_map: FeatureMap::new(c, fh, fw, pooled2.clone())?,
        feature_vector: pooled2.clone(),
        logits,
    };
    Ok((
        bundle,
        Trace {
            input,
            z1,
            pool1_arg,
            pooled1,
            z2,
            pool2_arg,
            pooled2,
        },
    ))
}

pub fn forward(params: &ModelParams, img: &Grid2D) -> Result<FeatureBundle> {
    forward_traced(params, img).map(|(b, _)| b)
}

/// Upstream gradients for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Upstream {
    /// dLoss/dlogits.
    pub d_logits: Vec<f64>,
    /// dLoss/dfeatures, flattened in feature-map order. Gradients with respect
    /// to the feature map and the feature vector are both expressed here and
    /// summed, since the vector is the flattened map.
    pub d_features: Vec<f64>,
}

impl Upstream {
    pub fn zeros(shape: &ModelShape) -> Self {
        Self {
            d_logits: vec![0.0; shape.num_classes],
            d_features: vec![0.0; shape.feature_len()],
        }
    }
}

/// Reverse-mode gradients for one sample, accumulated into `grads`.
pub fn backward_into(params: &ModelParams, trace: &Trace, upstream: &Upstream, grads: &mut GradientBundle) {
    let s = params.shape;
    let f = s.feature_len();
    let (h, w) = (s.height, s.width);

    let mut d_feat = upstream.d_features.clone();
    for (k, &g) in upstream.d_logits.iter().enumerate() {
        grads.fc_b[k] += g;
        if g == 0.0 {
            continue;
        }
        let row = &params.fc_w[k * f..(k + 1) * f];
        let d_row = &mut grads.0.fc_w[k * f..(k + 1) * f];
        for ((dw, x), (df, wv)) in d_row.iter_mut().zip(&trace.pooled2).zip(d_feat.iter_mut().zip(row)) {
            *dw += g * x;
            *df += g * wv;
        }
    }

    let d_z2 = relu_maxpool_backward(&d_feat, &trace.pool2_arg, &trace.z2);
    let g = &mut grads.0;
    let d_pooled1 = conv3x3_backward(
        &trace.pooled1,
        CONV1_OUT,
        h / 2,
        w / 2,
        &params.conv2_w,
        CONV2_OUT,
        &d_z2,
        &mut g.conv2_w,
        &mut g.conv2_b,
        true,
    )
    .expect("input gradient requested");
    let d_z1 = relu_maxpool_backward(&d_pooled1, &trace.pool1_arg, &trace.z1);
    conv3x3_backward(
        &trace.input,
        1,
        h,
        w,
        &params.conv1_w,
        CONV1_OUT,
        &d_z1,
        &mut g.conv1_w,
        &mut g.conv1_b,
        false,
    );
}

/// Gradients for a batch of `(trace, upstream)` pairs, summed in order.
pub fn backward(params: &ModelParams, batch: &[(&Trace, &Upstream)]) -> GradientBundle {
    let mut grads = GradientBundle::zeros(params.shape);
    for (trace, up) in batch {
        backward_into(params, trace, up, &mut grads);
    }
    grads
}

/// Momentum state for [`sgd_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct Velocity(pub GradientBundle);

impl Velocity {
    pub fn zeros(shape: ModelShape) -> Self {
        Self(GradientBundle::zeros(shape))
    }
}

/// `v <- momentum * v + g; p <- p - lr * v`.
pub fn sgd_step(params: &mut ModelParams, grads: &GradientBundle, lr: f64, momentum: f64, velocity: &mut Velocity) {
    let tensors = params
        .tensors_mut()
        .into_iter()
        .zip(velocity.0 .0.tensors_mut())
        .zip(grads.0.tensors());
    for ((p, v), g) in tensors {
        for ((pi, vi), gi) in p.iter_mut().zip(v.iter_mut()).zip(g) {
            *vi = momentum * *vi + gi;
            *pi -= lr * *vi;
        }
    }
}
