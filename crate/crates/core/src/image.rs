//! Single-channel intensity rasters and sub-pixel sampling.

use crate::error::{FlowError, Result};

/// Row-major single-channel image with real-valued intensities.
///
/// Intensities are nominally in `[0, 255]` regardless of the source bit
/// depth. Every value is finite and the raster is never empty.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(FlowError::Dimensions(format!(
                "image must be at least 1x1, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(FlowError::Dimensions(format!(
                "{width}x{height} image needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(FlowError::NonFinite {
                stage: "image construction",
                x: i % width,
                y: i / width,
            });
        }
        Ok(Self { width, height, data })
    }

    /// Constant image. Panics on a zero dimension.
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "image must be at least 1x1");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image must be at least 1x1");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    #[inline]
    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    /// Bilinear interpolation with clamp-to-border addressing.
    ///
    /// Exact at integer coordinates; coordinates outside the raster read
    /// the nearest border value.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        bilinear(&self.data, self.width, self.height, x, y)
    }

    /// Adds a constant to every pixel.
    pub fn offset(&self, c: f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| v + c).collect(),
        }
    }

    /// Image whose pixel `(x, y)` is this image sampled at `(x - dx, y - dy)`,
    /// i.e. the content moved by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self::from_fn(self.width, self.height, |x, y| {
            self.sample(x as f64 - dx, y as f64 - dy)
        })
    }

    /// (min, max) intensity.
    pub fn range(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Free-function form of [`GrayImage::sample`].
#[inline]
pub fn bilinear_sample(img: &GrayImage, x: f64, y: f64) -> f64 {
    img.sample(x, y)
}

/// Clamped bilinear lookup into a row-major buffer.
#[inline]
pub(crate) fn bilinear(data: &[f64], width: usize, height: usize, x: f64, y: f64) -> f64 {
    let max_x = (width - 1) as f64;
    let max_y = (height - 1) as f64;
    // NaN coordinates collapse onto the origin rather than poisoning indices.
    let x = if x.is_nan() { 0.0 } else { x.clamp(0.0, max_x) };
    let y = if y.is_nan() { 0.0 } else { y.clamp(0.0, max_y) };
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let x0 = x0 as usize;
    let y0 = y0 as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);

    let r0 = y0 * width;
    let r1 = y1 * width;
    let top = data[r0 + x0] + fx * (data[r0 + x1] - data[r0 + x0]);
    let bottom = data[r1 + x0] + fx * (data[r1 + x1] - data[r1 + x0]);
    top + fy * (bottom - top)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(GrayImage::new(0, 3, vec![]).is_err());
        assert!(GrayImage::new(2, 2, vec![0.0; 3]).is_err());
        assert!(GrayImage::new(1, 1, vec![f64::NAN]).is_err());
        assert!(GrayImage::new(2, 1, vec![1.0, 2.0]).is_ok());
    }

    #[test]
    fn integer_coordinates_are_exact() {
        let img = GrayImage::from_fn(5, 4, |x, y| (x * 7 + y * 13) as f64 * 0.37);
        for y in 0..4 {
            for x in 0..5 {
                assert_eq!(img.sample(x as f64, y as f64), img.get(x, y));
            }
        }
    }

    #[test]
    fn midpoint_of_four_pixels() {
        let img = GrayImage::new(2, 2, vec![0.0, 2.0, 4.0, 6.0]).unwrap();
        assert_eq!(bilinear_sample(&img, 0.5, 0.5), 3.0);
    }

    #[test]
    fn out_of_bounds_clamps() {
        let img = GrayImage::new(2, 2, vec![9.0, 2.0, 4.0, 6.0]).unwrap();
        assert_eq!(img.sample(-5.0, -5.0), 9.0);
        assert_eq!(img.sample(10.0, 10.0), 6.0);
        assert_eq!(img.sample(10.0, -1.0), 2.0);
    }

    proptest! {
        #[test]
        fn sampling_is_lipschitz(
            vals in proptest::collection::vec(0.0f64..255.0, 16),
            x in 0.0f64..3.0, y in 0.0f64..3.0, d in 0.0f64..1.0,
        ) {
            let img = GrayImage::new(4, 4, vals).unwrap();
            let (lo, hi) = img.range();
            let a = img.sample(x, y);
            let b = img.sample(x + d, y);
            prop_assert!((a - b).abs() <= d * (hi - lo) + 1e-9);
            prop_assert!(a >= lo - 1e-9 && a <= hi + 1e-9);
        }
    }
}
