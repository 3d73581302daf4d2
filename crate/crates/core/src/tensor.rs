//! Planar floating-point image container and the pixel-space projections
//! used by every attack.
//!
//! Values live on the 0..255 pixel scale but are kept continuous; rounding
//! happens only at file export. Gradients and DCT coefficients reuse the
//! same container, so individual values may leave [0, 255] — the only hard
//! invariant is that every public operation leaves all values finite.

use crate::error::{Error, Result};

/// Channel-major (C, H, W) tensor of `f64` values, row-major within a channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    /// Builds a tensor from raw planar data. Length must equal `c * h * w`
    /// and every value must be finite.
    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "degenerate tensor shape ({channels}, {height}, {width})"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::InvalidArgument(format!(
                "data length {} does not match shape ({channels}, {height}, {width})",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite value in tensor data".into()));
        }
        Ok(Self { channels, height, width, data })
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    /// Tensor filled with a single value.
    pub fn constant(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// One channel plane as a contiguous row-major slice.
    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Elementwise map, preserving shape.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Returns an error if the other tensor's shape differs.
    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                got: other.shape(),
            });
        }
        Ok(())
    }
}

/// Clamps every value into `[lo, hi]`; values already inside are untouched.
pub fn clamp_pixels(img: &ImageTensor, lo: f64, hi: f64) -> ImageTensor {
    debug_assert!(lo < hi);
    img.map(|v| v.clamp(lo, hi))
}

/// Projects `img` onto the L-infinity ball of radius `eps` around `anchor`,
/// then onto the valid pixel range [0, 255].
///
/// Idempotent, and values already satisfying both constraints are returned
/// bit-for-bit unchanged.
pub fn linf_project(img: &ImageTensor, anchor: &ImageTensor, eps: f64) -> Result<ImageTensor> {
    img.check_same_shape(anchor)?;
    if eps < 0.0 {
        return Err(Error::InvalidArgument(format!("negative eps {eps}")));
    }
    let (c, h, w) = img.shape();
    let data = img
        .data()
        .iter()
        .zip(anchor.data().iter())
        .map(|(&v, &a)| v.max(a - eps).min(a + eps).clamp(0.0, 255.0))
        .collect();
    ImageTensor::from_vec(c, h, w, data)
}

/// Mean squared error between two same-shaped tensors.
pub fn mse(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.check_same_shape(b)?;
    let n = a.len() as f64;
    Ok(a.data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        / n)
}

/// Largest absolute difference between two same-shaped tensors.
pub fn linf_distance(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.check_same_shape(b)?;
    Ok(a.data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| (x - y).abs())
        .fold(0.0, f64::max))
}

/// Elementwise difference `a - b`.
pub fn subtract(a: &ImageTensor, b: &ImageTensor) -> Result<ImageTensor> {
    a.check_same_shape(b)?;
    let (c, h, w) = a.shape();
    let data = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| x - y)
        .collect();
    ImageTensor::from_vec(c, h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(ImageTensor::from_vec(3, 2, 2, vec![0.0; 11]).is_err());
    }

    #[test]
    fn from_vec_rejects_non_finite() {
        assert!(ImageTensor::from_vec(1, 1, 2, vec![0.0, f64::NAN]).is_err());
        assert!(ImageTensor::from_vec(1, 1, 2, vec![0.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn from_vec_rejects_degenerate_shape() {
        assert!(ImageTensor::from_vec(0, 2, 2, vec![]).is_err());
        assert!(ImageTensor::from_vec(1, 0, 2, vec![]).is_err());
    }

    #[test]
    fn clamp_boundaries() {
        let img = ImageTensor::from_vec(1, 1, 3, vec![260.0, -3.0, 100.0]).unwrap();
        let out = clamp_pixels(&img, 0.0, 255.0);
        assert_eq!(out.data(), &[255.0, 0.0, 100.0]);
    }

    #[test]
    fn clamp_identity_inside_range() {
        let img = ImageTensor::constant(3, 4, 4, 128.0);
        let out = clamp_pixels(&img, 0.0, 255.0);
        assert_eq!(out, img);
    }

    #[test]
    fn linf_project_band_edges() {
        let anchor = ImageTensor::from_vec(1, 1, 3, vec![100.0, 100.0, 250.0]).unwrap();
        let img = ImageTensor::from_vec(1, 1, 3, vec![115.0, 105.0, 265.0]).unwrap();
        let out = linf_project(&img, &anchor, 10.0).unwrap();
        // 115 clips to the band edge 110; 105 is inside; 265 clips to the
        // band edge 260 and then to the pixel ceiling 255.
        assert_eq!(out.data(), &[110.0, 105.0, 255.0]);
    }

    #[test]
    fn linf_project_shape_mismatch() {
        let a = ImageTensor::zeros(1, 2, 2);
        let b = ImageTensor::zeros(1, 2, 3);
        assert!(matches!(
            linf_project(&a, &b, 1.0),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn linf_project_idempotent() {
        let anchor = ImageTensor::from_vec(1, 2, 2, vec![10.0, 200.0, 250.0, 3.0]).unwrap();
        let img = ImageTensor::from_vec(1, 2, 2, vec![50.0, 180.0, 270.0, -9.0]).unwrap();
        let once = linf_project(&img, &anchor, 12.0).unwrap();
        let twice = linf_project(&once, &anchor, 12.0).unwrap();
        assert_eq!(once, twice);
    }
}
