//! Real and complex image grids.
//!
//! Both grids are stored row-major. Dimensions are restricted to powers of
//! two no smaller than 8 so the radix-2 FFT in [`crate::fourier`] applies to
//! every grid without padding.

use num_complex::Complex64;

use crate::error::{Error, Result};

fn check_dims(height: usize, width: usize) -> Result<()> {
    let ok = |n: usize| n >= 8 && n.is_power_of_two();
    if ok(height) && ok(width) {
        Ok(())
    } else {
        Err(Error::InvalidDimensions { height, width })
    }
}

/// A real amplitude image.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Grid2D {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        check_dims(height, width)?;
        if values.len() != height * width {
            return Err(Error::DataLength {
                expected: height * width,
                actual: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    /// Builds a grid by evaluating `f(row, col)` at every pixel.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Self::new(height, width, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Lifts the image into a complex grid with zero imaginary part.
    pub fn to_complex(&self) -> ComplexGrid2D {
        ComplexGrid2D {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }
}

/// A complex grid, typically the spectrum of a [`Grid2D`].
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid2D {
    height: usize,
    width: usize,
    values: Vec<Complex64>,
}

impl ComplexGrid2D {
    pub fn new(height: usize, width: usize, values: Vec<Complex64>) -> Result<Self> {
        check_dims(height, width)?;
        if values.len() != height * width {
            return Err(Error::DataLength {
                expected: height * width,
                actual: values.len(),
            });
        }
        if let Some(index) = values
            .iter()
            .position(|v| !(v.re.is_finite() && v.im.is_finite()))
        {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.values[row * self.width + col]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.values
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }

    /// Real part as an image. Fails only if the real parts are non-finite.
    pub fn real_part(&self) -> Grid2D {
        Grid2D {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|v| v.re).collect(),
        }
    }

    pub fn max_abs_imag(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.im.abs()))
    }

    /// Magnitude image `|F|`.
    pub fn magnitude(&self) -> Grid2D {
        Grid2D {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|v| v.norm()).collect(),
        }
    }
}

/// Min-max normalization to `[0, 1]`. A constant image maps to all zeros.
pub fn normalize_minmax(img: &Grid2D) -> Grid2D {
    let (lo, hi) = img
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = hi - lo;
    let values = if span > 0.0 {
        img.values
            .iter()
            .map(|&v| ((v - lo) / span).clamp(0.0, 1.0))
            .collect()
    } else {
        vec![0.0; img.values.len()]
    };
    Grid2D {
        height: img.height,
        width: img.width,
        values,
    }
}
