use crate::error::{Error, Result};

/// Floating-point scalar the tensor engine is generic over.
///
/// The production path runs in `f32`; `f64` is used by the gradient
/// verification path only.
pub trait Scalar:
    Copy
    + Send
    + Sync
    + PartialOrd
    + std::fmt::Debug
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f32(v: f32) -> Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn to_f32(self) -> f32;
    fn abs(self) -> Self;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn max_s(self, other: Self) -> Self;
    fn is_finite_s(self) -> bool;
    /// Relative step for central finite differences at this precision.
    fn fd_epsilon() -> f64;
    /// Magnitude below which finite-difference noise dominates.
    fn fd_noise_floor() -> f64;
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f32(v: f32) -> Self {
        v
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn to_f32(self) -> f32 {
        self
    }
    fn abs(self) -> Self {
        f32::abs(self)
    }
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    fn exp(self) -> Self {
        f32::exp(self)
    }
    fn max_s(self, other: Self) -> Self {
        f32::max(self, other)
    }
    fn is_finite_s(self) -> bool {
        f32::is_finite(self)
    }
    fn fd_epsilon() -> f64 {
        1e-3
    }
    fn fd_noise_floor() -> f64 {
        1e-4
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn to_f32(self) -> f32 {
        self as f32
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn max_s(self, other: Self) -> Self {
        f64::max(self, other)
    }
    fn is_finite_s(self) -> bool {
        f64::is_finite(self)
    }
    fn fd_epsilon() -> f64 {
        1e-5
    }
    fn fd_noise_floor() -> f64 {
        1e-9
    }
}

/// Dense 4-D array in `(batch, channels, height, width)` order, row-major.
///
/// Every value flowing through the network is one of these; vectors are
/// represented with trailing unit spatial dims.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

/// The real-valued feature currency of the network.
pub type ChannelTensor = Tensor<f32>;

impl<T: Scalar> Tensor<T> {
    pub fn zeros(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Tensor {
            shape: [batch, channels, height, width],
            data: vec![T::ZERO; batch * channels * height * width],
        }
    }

    pub fn from_vec(
        batch: usize,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<T>,
    ) -> Result<Self> {
        if data.len() != batch * channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "tensor data length {} does not match {}x{}x{}x{}",
                data.len(),
                batch,
                channels,
                height,
                width
            )));
        }
        Ok(Tensor {
            shape: [batch, channels, height, width],
            data,
        })
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: [1, 1, 1, 1],
            data: vec![v],
        }
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }
    #[inline]
    pub fn batch(&self) -> usize {
        self.shape[0]
    }
    #[inline]
    pub fn channels(&self) -> usize {
        self.shape[1]
    }
    #[inline]
    pub fn height(&self) -> usize {
        self.shape[2]
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.shape[3]
    }
    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }
    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, y: usize, x: usize) -> T {
        self.data[((b * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x]
    }

    #[inline]
    pub fn at_mut(&mut self, b: usize, c: usize, y: usize, x: usize) -> &mut T {
        &mut self.data[((b * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x]
    }

    /// Contiguous `height*width` plane of one (batch, channel) pair.
    #[inline]
    pub fn plane(&self, b: usize, c: usize) -> &[T] {
        let hw = self.shape[2] * self.shape[3];
        let start = (b * self.shape[1] + c) * hw;
        &self.data[start..start + hw]
    }

    #[inline]
    pub fn plane_mut(&mut self, b: usize, c: usize) -> &mut [T] {
        let hw = self.shape[2] * self.shape[3];
        let start = (b * self.shape[1] + c) * hw;
        &mut self.data[start..start + hw]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite_s())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    /// Scalar payload of a 1x1x1x1 tensor.
    pub fn scalar_value(&self) -> T {
        debug_assert_eq!(self.len(), 1);
        self.data[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_row_major() {
        let mut t = ChannelTensor::zeros(2, 3, 4, 5);
        *t.at_mut(1, 2, 3, 4) = 7.0;
        assert_eq!(t.data()[t.len() - 1], 7.0);
        assert_eq!(t.at(1, 2, 3, 4), 7.0);
    }

    #[test]
    fn plane_is_contiguous() {
        let mut t = ChannelTensor::zeros(1, 2, 2, 2);
        t.plane_mut(0, 1).copy_from_slice(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(t.at(0, 1, 0, 0), 1.0);
        assert_eq!(t.at(0, 1, 1, 1), 4.0);
    }

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(ChannelTensor::from_vec(1, 1, 2, 2, vec![0.0; 3]).is_err());
    }
}
