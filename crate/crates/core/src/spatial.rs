//! Random spatial transformation.
//!
//! The transform set is fixed to rotate, scale, translate and the two flips,
//! applied in that order. Geometric steps resample with bilinear
//! interpolation about the image center and treat everything outside the
//! frame as zero. Flips are exact index permutations.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::Grid2D;
use crate::seed::SeedStream;
use crate::training::AugmentConfig;

/// Degrees of rotation per unit magnitude.
pub const ROTATE_DEG_PER_UNIT: f64 = 15.0;
/// Pixels of translation (both axes) per unit magnitude.
pub const TRANSLATE_PX_PER_UNIT: f64 = 3.0;
/// Scale change per unit magnitude, before clamping.
pub const SCALE_PER_UNIT: f64 = 0.1;
pub const SCALE_MIN: f64 = 0.7;
pub const SCALE_MAX: f64 = 1.3;

/// Members of the transform set, in application order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Rotate,
    Scale,
    Translate,
    FlipH,
    FlipV,
}

impl TransformKind {
    pub const ALL: [TransformKind; 5] = [
        TransformKind::Rotate,
        TransformKind::Scale,
        TransformKind::Translate,
        TransformKind::FlipH,
        TransformKind::FlipV,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Rotate => "rotate",
            TransformKind::Scale => "scale",
            TransformKind::Translate => "translate",
            TransformKind::FlipH => "flip_h",
            TransformKind::FlipV => "flip_v",
        }
    }
}

/// Selected transforms `q` with their magnitudes `M_q`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransformSpec {
    steps: Vec<(TransformKind, f64)>,
}

impl TransformSpec {
    pub fn new(steps: Vec<(TransformKind, f64)>) -> Result<Self> {
        for (i, (kind, m)) in steps.iter().enumerate() {
            if !m.is_finite() {
                return Err(invalid("transform magnitude", format!("{} has non-finite magnitude", kind.name())));
            }
            if steps[..i].iter().any(|(k, _)| k == kind) {
                return Err(invalid("transform set", format!("{} repeated", kind.name())));
            }
        }
        Ok(Self { steps })
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> &[(TransformKind, f64)] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Includes each transform independently with `cfg.include_prob` and draws
/// its magnitude from `Normal(0, sigma)`.
pub fn sample_transform_spec(rng: SeedStream, cfg: &AugmentConfig) -> Result<TransformSpec> {
    sample_transform_with(&mut rng.rng(), cfg)
}

pub(crate) fn sample_transform_with<R: Rng>(rng: &mut R, cfg: &AugmentConfig) -> Result<TransformSpec> {
    let mut steps = Vec::new();
    for kind in TransformKind::ALL {
        let sigma = cfg.sigmas.get(kind);
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(invalid("sigma", format!("{} sigma must be positive, got {sigma}", kind.name())));
        }
        let normal = Normal::new(0.0, sigma)
            .map_err(|_| invalid("sigma", format!("{} sigma must be positive, got {sigma}", kind.name())))?;
        // Both draws happen unconditionally so the stream layout is independent of inclusion.
        let include = rng.random::<f64>() < cfg.include_prob;
        let magnitude = normal.sample(rng);
        if include {
            steps.push((kind, magnitude));
        }
    }
    TransformSpec::new(steps)
}

/// Bilinear sample with zero padding outside the frame.
#[inline]
fn sample_bilinear(img: &Grid2D, y: f64, x: f64) -> f64 {
    let (h, w) = (img.height() as isize, img.width() as isize);
    let y0 = y.floor();
    let x0 = x.floor();
    let (fy, fx) = (y - y0, x - x0);
    let (y0, x0) = (y0 as isize, x0 as isize);
    let px = |r: isize, c: isize| {
        if r >= 0 && r < h && c >= 0 && c < w {
            img.get(r as usize, c as usize)
        } else {
            0.0
        }
    };
    let top = px(y0, x0) * (1.0 - fx) + px(y0, x0 + 1) * fx;
    let bottom = px(y0 + 1, x0) * (1.0 - fx) + px(y0 + 1, x0 + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Resamples `img` through an inverse map from output to source coordinates
/// (both relative to the image center).
fn resample(img: &Grid2D, inverse: impl Fn(f64, f64) -> (f64, f64)) -> Grid2D {
    let (h, w) = img.dims();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    Grid2D::from_fn(h, w, |r, c| {
        let (sy, sx) = inverse(r as f64 - cy, c as f64 - cx);
        let v = sample_bilinear(img, sy + cy, sx + cx);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    })
    .expect("resampling preserves dimensions")
}

/// Rotates counter-clockwise (as displayed, rows growing downward) by `deg`.
pub fn rotate(img: &Grid2D, deg: f64) -> Grid2D {
    let (s, c) = deg.to_radians().sin_cos();
    // Output offset (dy, dx) pulls from the source point rotated back by -deg.
    resample(img, move |dy, dx| (c * dy + s * dx, -s * dy + c * dx))
}

pub fn scale(img: &Grid2D, factor: f64) -> Grid2D {
    resample(img, move |dy, dx| (dy / factor, dx / factor))
}

pub fn translate(img: &Grid2D, dy: f64, dx: f64) -> Grid2D {
    resample(img, move |y, x| (y - dy, x - dx))
}

pub fn flip_h(img: &Grid2D) -> Grid2D {
    let w = img.width();
    Grid2D::from_fn(img.height(), w, |r, c| img.get(r, w - 1 - c)).expect("same dimensions")
}

pub fn flip_v(img: &Grid2D) -> Grid2D {
    let h = img.height();
    Grid2D::from_fn(h, img.width(), |r, c| img.get(h - 1 - r, c)).expect("same dimensions")
}

/// Scale factor for a magnitude, clamped to `[SCALE_MIN, SCALE_MAX]`.
pub fn scale_factor(magnitude: f64) -> f64 {
    (1.0 + SCALE_PER_UNIT * magnitude).clamp(SCALE_MIN, SCALE_MAX)
}

/// Applies the steps of `spec` in order.
pub fn rst(img: &Grid2D, spec: &TransformSpec) -> Grid2D {
    let mut out = img.clone();
    for &(kind, m) in spec.steps() {
        out = match kind {
            TransformKind::Rotate => rotate(&out, ROTATE_DEG_PER_UNIT * m),
            TransformKind::Scale => scale(&out, scale_factor(m)),
            TransformKind::Translate => {
                let d = TRANSLATE_PX_PER_UNIT * m;
                translate(&out, d, d)
            }
            TransformKind::FlipH => flip_h(&out),
            TransformKind::FlipV => flip_v(&out),
        };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64) -> Grid2D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Grid2D::from_fn(32, 32, |_, _| rng.random::<f64>()).unwrap()
    }

    fn blob(h: usize, sigma: f64) -> Grid2D {
        let c = (h as f64 - 1.0) / 2.0;
        Grid2D::from_fn(h, h, |r, col| {
            let (dy, dx) = (r as f64 - c - 3.0, col as f64 - c + 5.0);
            (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp()
        })
        .unwrap()
    }

    #[test]
    fn empty_spec_is_identity() {
        let img = random_image(1);
        assert_eq!(rst(&img, &TransformSpec::identity()), img);
    }

    #[test]
    fn flip_h_is_an_involution() {
        let img = random_image(2);
        let spec = TransformSpec::new(vec![(TransformKind::FlipH, 0.7)]).unwrap();
        assert_eq!(rst(&rst(&img, &spec), &spec), img);
    }

    #[test]
    fn both_flips_equal_half_turn() {
        let img = random_image(3);
        let flips = TransformSpec::new(vec![(TransformKind::FlipH, 0.0), (TransformKind::FlipV, 0.0)]).unwrap();
        let turned = rotate(&img, 180.0);
        let flipped = rst(&img, &flips);
        for (a, b) in turned.as_slice().iter().zip(flipped.as_slice()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn rotation_round_trip_on_smooth_blob() {
        let img = blob(64, 6.0);
        let peak = img.max_abs();
        for theta in [5.0, 15.0, 30.0, -22.5] {
            let back = rotate(&rotate(&img, theta), -theta);
            let err = back
                .as_slice()
                .iter()
                .zip(img.as_slice())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(err < 0.02 * peak, "theta {theta}: err {err}");
        }
    }

    #[test]
    fn integer_translation_shifts_pixels() {
        let img = random_image(4);
        let out = translate(&img, 2.0, -1.0);
        assert_eq!(out.get(5, 5), img.get(3, 6));
        assert_eq!(out.get(0, 0), 0.0);
    }

    #[test]
    fn scale_is_clamped() {
        assert_eq!(scale_factor(100.0), SCALE_MAX);
        assert_eq!(scale_factor(-100.0), SCALE_MIN);
        assert!((scale_factor(1.0) - 1.1).abs() < 1e-15);
    }

    #[test]
    fn spec_rejects_repeats_and_non_finite() {
        assert!(TransformSpec::new(vec![(TransformKind::Rotate, 1.0), (TransformKind::Rotate, 2.0)]).is_err());
        assert!(TransformSpec::new(vec![(TransformKind::Scale, f64::NAN)]).is_err());
    }

    #[test]
    fn inclusion_probability_extremes() {
        let never = AugmentConfig { include_prob: 0.0, ..AugmentConfig::default() };
        let always = AugmentConfig { include_prob: 1.0, ..AugmentConfig::default() };
        for i in 0..100 {
            assert!(sample_transform_spec(SeedStream::new(i, 9), &never).unwrap().is_empty());
            let spec = sample_transform_spec(SeedStream::new(i, 9), &always).unwrap();
            let kinds: Vec<_> = spec.steps().iter().map(|s| s.0).collect();
            assert_eq!(kinds, TransformKind::ALL);
        }
    }

    #[test]
    fn mean_selected_count_at_half() {
        let cfg = AugmentConfig { include_prob: 0.5, ..AugmentConfig::default() };
        let mut rng = SeedStream::new(8, 8).rng();
        let total: usize = (0..10_000).map(|_| sample_transform_with(&mut rng, &cfg).unwrap().len()).sum();
        let mean = total as f64 / 10_000.0;
        assert!((2.4..=2.6).contains(&mean), "mean |q| = {mean}");
    }

    #[test]
    fn non_positive_sigma_is_rejected() {
        let mut cfg = AugmentConfig::default();
        cfg.sigmas.rotate = 0.0;
        assert!(sample_transform_spec(SeedStream::new(1, 1), &cfg).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn outputs_are_finite_and_same_size(seed in any::<u64>(), mags in prop::array::uniform5(-50.0f64..50.0), mask in 0u8..32) {
            let img = random_image(seed);
            let steps = TransformKind::ALL.iter().zip(mags).enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, (k, m))| (*k, m))
                .collect();
            let out = rst(&img, &TransformSpec::new(steps).unwrap());
            prop_assert_eq!(out.dims(), img.dims());
            prop_assert!(out.as_slice().iter().all(|v| v.is_finite()));
        }

        #[test]
        fn energy_does_not_grow(seed in any::<u64>(), deg in -60.0f64..60.0, dy in -6.0f64..6.0, dx in -6.0f64..6.0, s in 0.7f64..1.0) {
            let img = random_image(seed);
            let e = img.energy() * (1.0 + 1e-12);
            prop_assert!(translate(&img, dy, dx).energy() <= e);
            prop_assert!(rotate(&img, deg).energy() <= e);
            prop_assert!(scale(&img, s).energy() <= e);
        }
    }
}
