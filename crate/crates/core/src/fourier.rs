//! 2D radix-2 FFT and the random frequency mask.
//!
//! The forward transform is unnormalized; `ifft2` carries the `1/(h*w)`
//! factor. Mask patches tile the *unshifted* spectrum in row-major order, so
//! patch 0 always holds the DC coefficient and is never maskable.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{ComplexGrid2D, Grid2D};
use crate::seed::SeedStream;
use crate::training::AugmentConfig;

/// In-place iterative radix-2 FFT; the twiddle table fixes the direction.
fn fft_in_place(buf: &mut [Complex64], twiddles: &[Complex64]) {
    let n = buf.len();
    debug_assert!(n.is_power_of_two());
    let bits = n.trailing_zeros();
    if bits == 0 {
        return;
    }
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if i < j {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let w = twiddles[k * step];
                let a = buf[start + k];
                let b = buf[start + k + half] * w;
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

fn twiddles(n: usize, inverse: bool) -> Vec<Complex64> {
    let sign = if inverse { 1.0 } else { -1.0 };
    (0..n / 2)
        .map(|k| Complex64::from_polar(1.0, sign * 2.0 * PI * k as f64 / n as f64))
        .collect()
}

fn transform_2d(grid: &mut ComplexGrid2D, inverse: bool) {
    let (h, w) = grid.dims();
    let row_tw = twiddles(w, inverse);
    let col_tw = twiddles(h, inverse);
    let data = grid.as_mut_slice();
    for row in data.chunks_exact_mut(w) {
        fft_in_place(row, &row_tw);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); h];
    for c in 0..w {
        for r in 0..h {
            column[r] = data[r * w + c];
        }
        fft_in_place(&mut column, &col_tw);
        for r in 0..h {
            data[r * w + c] = column[r];
        }
    }
}

/// Unnormalized forward 2D DFT of a real image.
pub fn fft2(img: &Grid2D) -> ComplexGrid2D {
    let mut out = img.to_complex();
    transform_2d(&mut out, false);
    out
}

/// Forward 2D DFT of a complex grid.
pub fn fft2_complex(grid: &ComplexGrid2D) -> ComplexGrid2D {
    let mut out = grid.clone();
    transform_2d(&mut out, false);
    out
}

/// Inverse 2D DFT, normalized by `1/(h*w)`.
pub fn ifft2(spec: &ComplexGrid2D) -> ComplexGrid2D {
    let mut out = spec.clone();
    transform_2d(&mut out, true);
    let scale = 1.0 / (out.height() * out.width()) as f64;
    for v in out.as_mut_slice() {
        *v *= scale;
    }
    out
}

/// Moves the DC coefficient to the center, for display only.
pub fn fftshift(grid: &Grid2D) -> Grid2D {
    let (h, w) = grid.dims();
    Grid2D::from_fn(h, w, |r, c| grid.get((r + h / 2) % h, (c + w / 2) % w))
        .expect("shifted grid keeps valid dimensions")
}

/// One draw of the frequency mask: patch edge, ratio and the zeroed patches.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSpec {
    height: usize,
    width: usize,
    rm_re: usize,
    rm_ra: f64,
    rm_l: Vec<usize>,
}

/// Number of masked patches for a ratio, capped at the non-DC patch count.
pub fn masked_patch_count(rm_ra: f64, num_patches: usize) -> usize {
    ((rm_ra * num_patches as f64).round() as usize).min(num_patches.saturating_sub(1))
}

impl MaskSpec {
    /// Validates and builds a mask for an `height x width` spectrum.
    pub fn new(height: usize, width: usize, rm_re: usize, rm_ra: f64, mut rm_l: Vec<usize>) -> Result<Self> {
        if rm_re == 0 || height % rm_re != 0 || width % rm_re != 0 {
            return Err(Error::InvalidMask(format!(
                "patch edge {rm_re} does not tile a {height}x{width} spectrum"
            )));
        }
        if !(0.0..=1.0).contains(&rm_ra) {
            return Err(Error::InvalidMask(format!("ratio {rm_ra} outside [0, 1]")));
        }
        let num_patches = height * width / (rm_re * rm_re);
        rm_l.sort_unstable();
        if rm_l.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidMask("duplicate patch index".into()));
        }
        if let Some(&bad) = rm_l.iter().find(|&&i| i >= num_patches) {
            return Err(Error::InvalidMask(format!(
                "patch index {bad} out of range (grid has {num_patches} patches)"
            )));
        }
        if rm_l.first() == Some(&0) {
            return Err(Error::InvalidMask("the DC patch cannot be masked".into()));
        }
        let expected = masked_patch_count(rm_ra, num_patches);
        if rm_l.len() != expected {
            return Err(Error::InvalidMask(format!(
                "ratio {rm_ra} over {num_patches} patches requires {expected} indices, got {}",
                rm_l.len()
            )));
        }
        Ok(Self {
            height,
            width,
            rm_re,
            rm_ra,
            rm_l,
        })
    }

    /// Mask over every non-DC patch.
    pub fn all_non_dc(height: usize, width: usize, rm_re: usize) -> Result<Self> {
        let n = height * width / (rm_re * rm_re);
        Self::new(height, width, rm_re, 1.0, (1..n).collect())
    }

    pub fn rm_re(&self) -> usize {
        self.rm_re
    }

    pub fn rm_ra(&self) -> f64 {
        self.rm_ra
    }

    /// Masked patch indices, ascending.
    pub fn rm_l(&self) -> &[usize] {
        &self.rm_l
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn patch_cols(&self) -> usize {
        self.width / self.rm_re
    }

    pub fn num_patches(&self) -> usize {
        self.height * self.width / (self.rm_re * self.rm_re)
    }
}

/// Draws a mask: edge uniform over `cfg.rm_re_choices`, ratio uniform on
/// `[0, cfg.ra_max]`, locations uniform without replacement over non-DC patches.
pub fn sample_mask_spec(height: usize, width: usize, rng: SeedStream, cfg: &AugmentConfig) -> Result<MaskSpec> {
    let mut rng = rng.rng();
    sample_mask_with(height, width, &mut rng, cfg)
}

pub(crate) fn sample_mask_with<R: Rng>(height: usize, width: usize, rng: &mut R, cfg: &AugmentConfig) -> Result<MaskSpec> {
    if cfg.rm_re_choices.is_empty() {
        return Err(crate::error::invalid("rm_re_choices", "must not be empty"));
    }
    let rm_re = cfg.rm_re_choices[rng.random_range(0..cfg.rm_re_choices.len())];
    if rm_re == 0 || height % rm_re != 0 || width % rm_re != 0 {
        return Err(crate::error::invalid(
            "rm_re_choices",
            format!("{rm_re} does not divide {height}x{width}"),
        ));
    }
    let rm_ra = if cfg.ra_max > 0.0 {
        rng.random_range(0.0..=cfg.ra_max)
    } else {
        0.0
    };
    let num_patches = height * width / (rm_re * rm_re);
    let count = masked_patch_count(rm_ra, num_patches);
    let rm_l = index::sample(rng, num_patches - 1, count)
        .into_iter()
        .map(|i| i + 1)
        .collect();
    MaskSpec::new(height, width, rm_re, rm_ra, rm_l)
}

/// Zeroes every coefficient in the masked patches together with its
/// Hermitian mirror `(-u mod h, -v mod w)`, leaving all others untouched.
pub fn rfm(spec: &ComplexGrid2D, mask: &MaskSpec) -> Result<ComplexGrid2D> {
    let (h, w) = spec.dims();
    if mask.dims() != (h, w) || h % mask.rm_re != 0 || w % mask.rm_re != 0 {
        return Err(Error::InvalidMask(format!(
            "mask built for {:?} with edge {} does not tile a {h}x{w} spectrum",
            mask.dims(),
            mask.rm_re
        )));
    }
    let mut out = spec.clone();
    let re = mask.rm_re;
    let cols = mask.patch_cols();
    let zero = Complex64::new(0.0, 0.0);
    let data = out.as_mut_slice();
    for &patch in &mask.rm_l {
        let (pr, pc) = (patch / cols, patch % cols);
        for u in pr * re..(pr + 1) * re {
            for v in pc * re..(pc + 1) * re {
                data[u * w + v] = zero;
                data[((h - u) % h) * w + (w - v) % w] = zero;
            }
        }
    }
    Ok(out)
}
