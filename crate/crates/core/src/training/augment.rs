//! Spatial-frequency hybrid augmentation: `RST(ifft(RFM(fft(x))))`.

use crate::error::Result;
use crate::fourier::{fft2, ifft2, rfm, sample_mask_with, MaskSpec};
use crate::grid::{normalize_minmax, ComplexGrid2D, Grid2D};
use crate::seed::{derive_sample_seed, SeedStream};
use crate::spatial::{rst, sample_transform_with, TransformSpec};
use crate::synthdata::LabeledImage;

use super::AugmentConfig;

/// Every intermediate of one augmentation draw.
#[derive(Debug, Clone)]
pub struct AugmentStages {
    pub original: Grid2D,
    pub spectrum: ComplexGrid2D,
    pub masked_spectrum: ComplexGrid2D,
    pub inverse: Grid2D,
    pub output: Grid2D,
    pub mask: MaskSpec,
    pub transform: TransformSpec,
}

/// Runs the pipeline on a normalized copy of `img`. The mask is drawn first,
/// then the transform, both from the same stream.
pub fn augment_stages(img: &Grid2D, rng: SeedStream, cfg: &AugmentConfig) -> Result<AugmentStages> {
    let (h, w) = img.dims();
    cfg.validate(h, w)?;
    let mut rng = rng.rng();
    let mask = sample_mask_with(h, w, &mut rng, cfg)?;
    let transform = sample_transform_with(&mut rng, cfg)?;
    let original = normalize_minmax(img);
    let spectrum = fft2(&original);
    let masked_spectrum = rfm(&spectrum, &mask)?;
    let inverse = ifft2(&masked_spectrum).real_part();
    let output = normalize_minmax(&rst(&inverse, &transform));
    Ok(AugmentStages {
        original,
        spectrum,
        masked_spectrum,
        inverse,
        output,
        mask,
        transform,
    })
}

/// One random augmented version of `x`, renormalized to `[0, 1]`.
pub fn augment_sample(x: &LabeledImage, rng: SeedStream, cfg: &AugmentConfig) -> Result<LabeledImage> {
    let stages = augment_stages(&x.image, rng, cfg)?;
    Ok(LabeledImage {
        image: stages.output,
        ..x.clone()
    })
}

/// The training set for one epoch: each normalized original followed by one
/// fresh augmented copy. With augmentation disabled, just the normalized
/// originals.
pub fn build_augmented_set(
    train: &[LabeledImage],
    epoch: u32,
    root: SeedStream,
    cfg: &AugmentConfig,
) -> Result<Vec<LabeledImage>> {
    let normalized = |x: &LabeledImage| LabeledImage {
        image: normalize_minmax(&x.image),
        ..x.clone()
    };
    if !cfg.enabled {
        return Ok(train.iter().map(normalized).collect());
    }
    let epoch = if cfg.fixed { 0 } else { epoch };
    let mut out = Vec::with_capacity(2 * train.len());
    for (i, x) in train.iter().enumerate() {
        out.push(normalized(x));
        out.push(augment_sample(x, derive_sample_seed(root, epoch, i as u32), cfg)?);
    }
    Ok(out)
}
