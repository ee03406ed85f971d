//! Synthetic test scenes with exactly known motion.
//!
//! Textures are sums of plane waves evaluated analytically, so a shifted
//! frame is the exact continuous translation of the reference rather than
//! an interpolated copy. Box downsampling of a plane wave yields a plane
//! wave of the same frequency, so the translation also holds exactly on
//! every pyramid level.

use std::f64::consts::TAU;

use rand::Rng;

use crate::flow::FlowField;
use crate::image::GrayImage;

/// One plane wave `amplitude * sin(kx x + ky y + phase)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wave {
    pub kx: f64,
    pub ky: f64,
    pub phase: f64,
    pub amplitude: f64,
}

/// Smooth, band-limited intensity function on the continuous plane.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothTexture {
    pub mean: f64,
    pub waves: Vec<Wave>,
}

/// Spectral content of random textures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextureSpec {
    pub waves: usize,
    /// Shortest and longest wavelengths in pixels.
    pub wavelength: (f64, f64),
    /// Sum of the wave amplitudes; intensities stay within
    /// `128 +/- contrast`.
    pub contrast: f64,
}

impl Default for TextureSpec {
    fn default() -> Self {
        Self {
            waves: 12,
            wavelength: (24.0, 160.0),
            contrast: 100.0,
        }
    }
}

impl SmoothTexture {
    /// Random texture with uniformly distributed directions and phases and
    /// log-uniform wavelengths.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, spec: &TextureSpec) -> Self {
        let (lo, hi) = (spec.wavelength.0.ln(), spec.wavelength.1.ln());
        let raw: Vec<(f64, f64, f64, f64)> = (0..spec.waves)
            .map(|_| {
                let lambda = rng.random_range(lo..=hi).exp();
                let theta = rng.random_range(0.0..TAU);
                let k = TAU / lambda;
                (
                    k * theta.cos(),
                    k * theta.sin(),
                    rng.random_range(0.0..TAU),
                    rng.random_range(0.3..1.0),
                )
            })
            .collect();
        let total: f64 = raw.iter().map(|r| r.3).sum();
        let waves = raw
            .into_iter()
            .map(|(kx, ky, phase, a)| Wave {
                kx,
                ky,
                phase,
                amplitude: spec.contrast * a / total,
            })
            .collect();
        Self { mean: 128.0, waves }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.mean
            + self
                .waves
                .iter()
                .map(|w| w.amplitude * (w.kx * x + w.ky * y + w.phase).sin())
                .sum::<f64>()
    }

    /// Renders the texture moved by `(dx, dy)`: pixel `x` shows the
    /// content at `x - d`.
    pub fn render(&self, width: usize, height: usize, shift: (f64, f64)) -> GrayImage {
        GrayImage::from_fn(width, height, |x, y| self.eval(x as f64 - shift.0, y as f64 - shift.1))
    }
}

/// Frame pair related by a constant translation, with its flow.
#[derive(Debug, Clone)]
pub struct TranslationScene {
    pub frame0: GrayImage,
    pub frame1: GrayImage,
    pub displacement: (f64, f64),
}

impl TranslationScene {
    pub fn new(texture: &SmoothTexture, width: usize, height: usize, displacement: (f64, f64)) -> Self {
        Self {
            frame0: texture.render(width, height, (0.0, 0.0)),
            frame1: texture.render(width, height, displacement),
            displacement,
        }
    }

    /// Random texture moved by a random displacement of magnitude at most
    /// `max_shift`, uniformly distributed over the disc.
    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        width: usize,
        height: usize,
        max_shift: f64,
        spec: &TextureSpec,
    ) -> Self {
        let texture = SmoothTexture::random(rng, spec);
        let r = max_shift * rng.random_range(0.0f64..=1.0).sqrt();
        let theta = rng.random_range(0.0..TAU);
        Self::new(&texture, width, height, (r * theta.cos(), r * theta.sin()))
    }

    pub fn ground_truth(&self) -> FlowField {
        let (w, h) = self.frame0.dims();
        FlowField::constant(w, h, self.displacement.0, self.displacement.1)
    }

    /// Pixels at least `band` away from the border whose true match also
    /// lies at least `band` inside the frame. Row-major.
    pub fn visible_interior(&self, band: usize) -> Vec<bool> {
        let (w, h) = self.frame0.dims();
        let b = band as f64;
        let (dx, dy) = self.displacement;
        let inside = |p: f64, dim: usize| p >= b && p <= dim as f64 - 1.0 - b;
        (0..h)
            .flat_map(|y| (0..w).map(move |x| (x as f64, y as f64)))
            .map(|(x, y)| inside(x, w) && inside(y, h) && inside(x + dx, w) && inside(y + dy, h))
            .collect()
    }
}

/// White-noise texture with values uniform in `[0, 255]`.
pub fn random_noise_image<R: Rng + ?Sized>(rng: &mut R, width: usize, height: usize) -> GrayImage {
    GrayImage::from_fn(width, height, |_, _| rng.random_range(0.0..=255.0))
}
