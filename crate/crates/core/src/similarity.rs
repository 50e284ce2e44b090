//! Hybrid similarity between two feature bundles: windowed SSIM on the
//! feature maps plus cosine similarity on the feature vectors, with exact
//! gradients for both.

use crate::error::{Error, Result};
use crate::model::{FeatureBundle, FeatureMap};

/// SSIM window edge (uniform weights, stride 1).
pub const SSIM_WINDOW: usize = 8;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// Floor on the dynamic range used for the SSIM constants.
pub const SSIM_MIN_RANGE: f64 = 1e-6;
/// Norm floor in the cosine denominator.
pub const COSINE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HybridScore {
    pub stm: f64,
    pub vam: f64,
    pub hm: f64,
}

/// Gradient of a scalar with respect to one bundle's map and vector.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleGrad {
    pub d_map: Vec<f64>,
    pub d_vector: Vec<f64>,
}

impl BundleGrad {
    /// Map and vector gradients summed into one flat feature gradient.
    pub fn combined(&self) -> Vec<f64> {
        self.d_map.iter().zip(&self.d_vector).map(|(a, b)| a + b).collect()
    }
}

/// Sums over every `k x k` window, row-major over window origins.
fn window_sums(src: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = line[x..x + k].iter().sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (y..y + k).map(|r| rows[r * ow + x]).sum();
        }
    }
    out
}

/// Adjoint of [`window_sums`]: each pixel receives the sum of the
/// coefficients of every window that covers it.
fn window_scatter(coef: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut cols = vec![0.0; oh * w];
    for y in 0..oh {
        for x in 0..w {
            let lo = x.saturating_sub(k - 1);
            let hi = x.min(ow - 1);
            cols[y * w + x] = (lo..=hi).map(|wx| coef[y * ow + wx]).sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let lo = y.saturating_sub(k - 1);
        let hi = y.min(oh - 1);
        for x in 0..w {
            out[y * w + x] = (lo..=hi).map(|wy| cols[wy * w + x]).sum();
        }
    }
    out
}

fn check_maps(a: &FeatureMap, b: &FeatureMap) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch(format!(
            "feature maps {:?} and {:?} differ",
            a.dims(),
            b.dims()
        )));
    }
    if a.height < SSIM_WINDOW || a.width < SSIM_WINDOW {
        return Err(Error::ShapeMismatch(format!(
            "feature maps need at least {SSIM_WINDOW}x{SSIM_WINDOW} spatial extent, got {}x{}",
            a.height, a.width
        )));
    }
    Ok(())
}

/// Dynamic range of the pair and, if it came from the data, where.
fn dynamic_range(a: &[f64], b: &[f64]) -> (f64, Option<(bool, usize)>) {
    let mut best = SSIM_MIN_RANGE;
    let mut at = None;
    for (i, v) in a.iter().enumerate() {
        if v.abs() > best {
            best = v.abs();
            at = Some((true, i));
        }
    }
    for (i, v) in b.iter().enumerate() {
        if v.abs() > best {
            best = v.abs();
            at = Some((false, i));
        }
    }
    (best, at)
}

struct WindowStats {
    mu_a: f64,
    mu_b: f64,
    a1: f64,
    a2: f64,
    b1: f64,
    b2: f64,
}

impl WindowStats {
    #[allow(clippy::too_many_arguments)]
    fn new(sa: f64, sb: f64, saa: f64, sbb: f64, sab: f64, n: f64, c1: f64, c2: f64) -> Self {
        let (mu_a, mu_b) = (sa / n, sb / n);
        let var_a = saa / n - mu_a * mu_a;
        let var_b = sbb / n - mu_b * mu_b;
        let cov = sab / n - mu_a * mu_b;
        Self {
            mu_a,
            mu_b,
            a1: 2.0 * mu_a * mu_b + c1,
            a2: 2.0 * cov + c2,
            b1: mu_a * mu_a + mu_b * mu_b + c1,
            b2: var_a + var_b + c2,
        }
    }

    fn ssim(&self) -> f64 {
        (self.a1 * self.a2) / (self.b1 * self.b2)
    }
}

struct ChannelSums {
    sa: Vec<f64>,
    sb: Vec<f64>,
    saa: Vec<f64>,
    sbb: Vec<f64>,
    sab: Vec<f64>,
}

fn channel_sums(a: &[f64], b: &[f64], h: usize, w: usize) -> ChannelSums {
    let sq = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let k = SSIM_WINDOW;
    ChannelSums {
        sa: window_sums(a, h, w, k),
        sb: window_sums(b, h, w, k),
        saa: window_sums(&sq(a, a), h, w, k),
        sbb: window_sums(&sq(b, b), h, w, k),
        sab: window_sums(&sq(a, b), h, w, k),
    }
}

/// Structural measurement: SSIM averaged over every channel and every
/// `8 x 8` window, with constants scaled by the pair's dynamic range.
pub fn stm(a: &FeatureMap, b: &FeatureMap) -> Result<f64> {
    check_maps(a, b)?;
    let (l, _) = dynamic_range(&a.data, &b.data);
    let c1 = (SSIM_K1 * l).powi(2);
    let c2 = (SSIM_K2 * l).powi(2);
    let (h, w) = (a.height, a.width);
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..a.channels {
        let s = channel_sums(a.channel(ch), b.channel(ch), h, w);
        for i in 0..s.sa.len() {
            total += WindowStats::new(s.sa[i], s.sb[i], s.saa[i], s.sbb[i], s.sab[i], n, c1, c2).ssim();
        }
        count += s.sa.len();
    }
    Ok((total / count as f64).clamp(-1.0, 1.0))
}

/// Gradients of `stm(a, b)` with respect to `a` and `b`, scaled by `d_out`.
pub fn stm_backward(a: &FeatureMap, b: &FeatureMap, d_out: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    check_maps(a, b)?;
    let mut ga = vec![0.0; a.data.len()];
    let mut gb = vec![0.0; b.data.len()];
    if d_out == 0.0 {
        return Ok((ga, gb));
    }
    let (l, at) = dynamic_range(&a.data, &b.data);
    let c1 = (SSIM_K1 * l).powi(2);
    let c2 = (SSIM_K2 * l).powi(2);
    let (h, w) = (a.height, a.width);
    let k = SSIM_WINDOW;
    let n = (k * k) as f64;
    let windows = (h - k + 1) * (w - k + 1);
    let scale = d_out / (windows * a.channels) as f64;
    let plane = h * w;

    // d(mean SSIM)/dL, through C1 and C2.
    let mut d_range = 0.0;
    for ch in 0..a.channels {
        let (xa, xb) = (a.channel(ch), b.channel(ch));
        let s = channel_sums(xa, xb, h, w);
        let mut alpha_a = vec![0.0; windows];
        let mut alpha_b = vec![0.0; windows];
        let mut beta = vec![0.0; windows];
        let mut gamma = vec![0.0; windows];
        for i in 0..windows {
            let st = WindowStats::new(s.sa[i], s.sb[i], s.saa[i], s.sbb[i], s.sab[i], n, c1, c2);
            let ssim = st.ssim();
            let inv = 1.0 / (st.b1 * st.b2);
            let d_mu_a = 2.0 * st.mu_b * st.a2 * inv - ssim * 2.0 * st.mu_a / st.b1;
            let d_mu_b = 2.0 * st.mu_a * st.a2 * inv - ssim * 2.0 * st.mu_b / st.b1;
            let d_var = -ssim / st.b2;
            let d_cov = 2.0 * st.a1 * inv;
            alpha_a[i] = scale * (d_mu_a - 2.0 * d_var * st.mu_a - d_cov * st.mu_b) / n;
            alpha_b[i] = scale * (d_mu_b - 2.0 * d_var * st.mu_b - d_cov * st.mu_a) / n;
            beta[i] = scale * 2.0 * d_var / n;
            gamma[i] = scale * d_cov / n;
            let d_c1 = st.a2 * inv - ssim / st.b1;
            let d_c2 = st.a1 * inv - ssim / st.b2;
            d_range += scale * (d_c1 * 2.0 * SSIM_K1 * SSIM_K1 * l + d_c2 * 2.0 * SSIM_K2 * SSIM_K2 * l);
        }
        let sa = window_scatter(&alpha_a, h, w, k);
        let sb = window_scatter(&alpha_b, h, w, k);
        let sbeta = window_scatter(&beta, h, w, k);
        let sgamma = window_scatter(&gamma, h, w, k);
        let (da, db) = (&mut ga[ch * plane..(ch + 1) * plane], &mut gb[ch * plane..(ch + 1) * plane]);
        for p in 0..plane {
            da[p] = sa[p] + xa[p] * sbeta[p] + xb[p] * sgamma[p];
            db[p] = sb[p] + xb[p] * sbeta[p] + xa[p] * sgamma[p];
        }
    }
    match at {
        Some((true, i)) => ga[i] += d_range * a.data[i].signum(),
        Some((false, i)) => gb[i] += d_range * b.data[i].signum(),
        None => {}
    }
    Ok((ga, gb))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Vector-angle measurement: cosine similarity with guarded norms.
pub fn vam(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::ShapeMismatch(format!(
            "feature vectors of length {} and {}",
            u.len(),
            v.len()
        )));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let denom = norm(u).max(COSINE_EPS) * norm(v).max(COSINE_EPS);
    Ok((dot / denom).clamp(-1.0, 1.0))
}

/// Gradients of the unclamped cosine with respect to `u` and `v`.
pub fn vam_backward(u: &[f64], v: &[f64], d_out: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if u.len() != v.len() {
        return Err(Error::ShapeMismatch("feature vector lengths differ".into()));
    }
    let (nu, nv) = (norm(u), norm(v));
    let (du_, dv_) = (nu.max(COSINE_EPS), nv.max(COSINE_EPS));
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let cos = dot / (du_ * dv_);
    // The norm term only applies where the norm is above its floor.
    let ku = if nu > COSINE_EPS { cos / (nu * nu) } else { 0.0 };
    let kv = if nv > COSINE_EPS { cos / (nv * nv) } else { 0.0 };
    let inv = 1.0 / (du_ * dv_);
    let gu = u.iter().zip(v).map(|(a, b)| d_out * (b * inv - ku * a)).collect();
    let gv = u.iter().zip(v).map(|(a, b)| d_out * (a * inv - kv * b)).collect();
    Ok((gu, gv))
}

/// Hybrid measurement `stm(maps) + vam(vectors)`.
pub fn hm(a: &FeatureBundle, b: &FeatureBundle) -> Result<HybridScore> {
    let stm = stm(&a.feature_map, &b.feature_map)?;
    let vam = vam(&a.feature_vector, &b.feature_vector)?;
    Ok(HybridScore {
        stm,
        vam,
        hm: stm + vam,
    })
}

pub fn hm_backward(a: &FeatureBundle, b: &FeatureBundle, d_hm: f64) -> Result<(BundleGrad, BundleGrad)> {
    let (ma, mb) = stm_backward(&a.feature_map, &b.feature_map, d_hm)?;
    let (va, vb) = vam_backward(&a.feature_vector, &b.feature_vector, d_hm)?;
    Ok((
        BundleGrad {
            d_map: ma,
            d_vector: va,
        },
        BundleGrad {
            d_map: mb,
            d_vector: vb,
        },
    ))
}
