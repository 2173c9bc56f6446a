use num_complex::Complex32;

use crate::error::{Error, Result};

/// Whether a volume holds spatial-frequency samples or image pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    KSpace,
    Image,
}

/// Stack of 2-D complex slices with a coil dimension.
///
/// Samples are stored slice-major, then coil, then row, then column, as
/// interleaved single-precision (re, im) pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexVolume {
    n_slices: usize,
    n_coils: usize,
    height: usize,
    width: usize,
    domain: Domain,
    data: Vec<Complex32>,
}

impl ComplexVolume {
    pub fn zeros(
        n_slices: usize,
        n_coils: usize,
        height: usize,
        width: usize,
        domain: Domain,
    ) -> Self {
        ComplexVolume {
            n_slices,
            n_coils,
            height,
            width,
            domain,
            data: vec![Complex32::new(0.0, 0.0); n_slices * n_coils * height * width],
        }
    }

    pub fn from_parts(
        n_slices: usize,
        n_coils: usize,
        height: usize,
        width: usize,
        domain: Domain,
        data: Vec<Complex32>,
    ) -> Result<Self> {
        if data.len() != n_slices * n_coils * height * width {
            return Err(Error::ShapeMismatch(format!(
                "volume data length {} does not match {}x{}x{}x{}",
                data.len(),
                n_slices,
                n_coils,
                height,
                width
            )));
        }
        Ok(ComplexVolume {
            n_slices,
            n_coils,
            height,
            width,
            domain,
            data,
        })
    }

    #[inline]
    pub fn n_slices(&self) -> usize {
        self.n_slices
    }
    #[inline]
    pub fn n_coils(&self) -> usize {
        self.n_coils
    }
    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }
    #[inline]
    pub fn domain(&self) -> Domain {
        self.domain
    }
    #[inline]
    pub fn data(&self) -> &[Complex32] {
        &self.data
    }
    #[inline]
    pub fn data_mut(&mut self) -> &mut [Complex32] {
        &mut self.data
    }

    pub fn set_domain(&mut self, domain: Domain) {
        self.domain = domain;
    }

    /// Contiguous `height*width` plane of one (slice, coil) pair.
    #[inline]
    pub fn plane(&self, slice: usize, coil: usize) -> &[Complex32] {
        let hw = self.height * self.width;
        let start = (slice * self.n_coils + coil) * hw;
        &self.data[start..start + hw]
    }

    #[inline]
    pub fn plane_mut(&mut self, slice: usize, coil: usize) -> &mut [Complex32] {
        let hw = self.height * self.width;
        let start = (slice * self.n_coils + coil) * hw;
        &mut self.data[start..start + hw]
    }

    /// Single-slice view (copy) keeping all coils.
    pub fn extract_slice(&self, slice: usize) -> ComplexVolume {
        let hw = self.height * self.width;
        let start = slice * self.n_coils * hw;
        ComplexVolume {
            n_slices: 1,
            n_coils: self.n_coils,
            height: self.height,
            width: self.width,
            domain: self.domain,
            data: self.data[start..start + self.n_coils * hw].to_vec(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(format!("{context}: volume contains NaN/Inf")))
        }
    }

    /// L2 norm over all samples.
    pub fn energy(&self) -> f64 {
        self.data
            .iter()
            .map(|c| c.re as f64 * c.re as f64 + c.im as f64 * c.im as f64)
            .sum::<f64>()
            .sqrt()
    }

    pub fn same_dims(&self, other: &ComplexVolume) -> bool {
        self.n_slices == other.n_slices
            && self.n_coils == other.n_coils
            && self.height == other.height
            && self.width == other.width
    }
}

/// A single real-valued 2-D image (e.g. a coil-combined magnitude slice).
#[derive(Clone, Debug, PartialEq)]
pub struct RealImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
}

impl RealImage {
    pub fn zeros(height: usize, width: usize) -> Self {
        RealImage {
            height,
            width,
            pixels: vec![0.0; height * width],
        }
    }

    pub fn from_pixels(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "image pixel count {} does not match {}x{}",
                pixels.len(),
                height,
                width
            )));
        }
        Ok(RealImage {
            height,
            width,
            pixels,
        })
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    pub fn max_value(&self) -> f32 {
        self.pixels.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }
}
