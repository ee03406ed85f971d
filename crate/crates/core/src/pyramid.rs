//! Coarse-to-fine image pyramids with per-level gradients.

use crate::error::{FlowError, Result};
use crate::image::GrayImage;

/// One pyramid level: intensities plus central-difference gradients.
#[derive(Debug, Clone)]
pub struct PyramidLevel {
    pub image: GrayImage,
    pub grad_x: GrayImage,
    pub grad_y: GrayImage,
    pub scale_index: usize,
}

impl PyramidLevel {
    pub fn new(image: GrayImage, scale_index: usize) -> Self {
        let (grad_x, grad_y) = gradients(&image);
        Self {
            image,
            grad_x,
            grad_y,
            scale_index,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.image.width()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.image.height()
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        self.image.dims()
    }
}

/// Levels ordered fine to coarse; index 0 is the input resolution.
#[derive(Debug, Clone)]
pub struct ImagePyramid {
    levels: Vec<PyramidLevel>,
    downscale: usize,
}

impl ImagePyramid {
    pub fn levels(&self) -> &[PyramidLevel] {
        &self.levels
    }

    pub fn level(&self, s: usize) -> &PyramidLevel {
        &self.levels[s]
    }

    /// Index of the coarsest level.
    pub fn coarsest(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn downscale(&self) -> usize {
        self.downscale
    }
}

/// Dimensions of levels `0..=coarsest` under repeated floor division.
pub fn level_dims(width: usize, height: usize, downscale: usize, coarsest: usize) -> Vec<(usize, usize)> {
    let mut dims = Vec::with_capacity(coarsest + 1);
    let (mut w, mut h) = (width, height);
    dims.push((w, h));
    for _ in 0..coarsest {
        w /= downscale;
        h /= downscale;
        dims.push((w, h));
    }
    dims
}

/// Builds levels `0..=coarsest`, each a `downscale x downscale` box average
/// of the previous one, decimated with floor rounding.
pub fn build_pyramid(img: &GrayImage, coarsest: usize, downscale: usize) -> Result<ImagePyramid> {
    if downscale < 2 {
        return Err(FlowError::InvalidParams(format!(
            "downscale factor must be >= 2, got {downscale}"
        )));
    }
    let dims = level_dims(img.width(), img.height(), downscale, coarsest);
    if let Some((s, &(w, h))) = dims.iter().enumerate().find(|(_, &(w, h))| w < 2 || h < 2) {
        return Err(FlowError::Dimensions(format!(
            "{}x{} image collapses to {w}x{h} at pyramid level {s} (downscale {downscale})",
            img.width(),
            img.height()
        )));
    }

    let mut levels = Vec::with_capacity(coarsest + 1);
    let mut current = img.clone();
    for s in 0..=coarsest {
        let next = if s < coarsest {
            Some(downsample(&current, downscale))
        } else {
            None
        };
        levels.push(PyramidLevel::new(current, s));
        match next {
            Some(n) => current = n,
            None => break,
        }
    }
    Ok(ImagePyramid { levels, downscale })
}

/// Box-filter decimation by an integer factor.
pub fn downsample(img: &GrayImage, factor: usize) -> GrayImage {
    let w = img.width() / factor;
    let h = img.height() / factor;
    let norm = 1.0 / (factor * factor) as f64;
    GrayImage::from_fn(w, h, |x, y| {
        let mut acc = 0.0;
        for dy in 0..factor {
            let row = img.row(y * factor + dy);
            for dx in 0..factor {
                acc += row[x * factor + dx];
            }
        }
        acc * norm
    })
}

/// Central differences `[-0.5, 0, 0.5]` with border replication.
pub fn gradients(img: &GrayImage) -> (GrayImage, GrayImage) {
    let (w, h) = img.dims();
    let gx = GrayImage::from_fn(w, h, |x, y| {
        let row = img.row(y);
        0.5 * (row[(x + 1).min(w - 1)] - row[x.saturating_sub(1)])
    });
    let gy = GrayImage::from_fn(w, h, |x, y| {
        0.5 * (img.get(x, (y + 1).min(h - 1)) - img.get(x, y.saturating_sub(1)))
    });
    (gx, gy)
}
