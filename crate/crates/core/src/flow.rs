//! Dense displacement fields.

use crate::error::{FlowError, Result};
use crate::image::bilinear;

/// Magnitude above which a stored flow component marks the pixel invalid.
pub const UNKNOWN_FLOW_THRESHOLD: f64 = 1e9;
/// Value written for invalid pixels.
pub const UNKNOWN_FLOW: f64 = 1e10;

/// Per-pixel `(u, v)` displacements in pixels, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(FlowError::Dimensions(format!(
                "flow field must be at least 1x1, got {width}x{height}"
            )));
        }
        let n = width * height;
        if u.len() != n || v.len() != n {
            return Err(FlowError::Dimensions(format!(
                "{width}x{height} flow needs {n} values per component, got {} and {}",
                u.len(),
                v.len()
            )));
        }
        if let Some(i) = u.iter().chain(&v).position(|c| !c.is_finite()) {
            let i = i % n;
            return Err(FlowError::NonFinite {
                stage: "flow construction",
                x: i % width,
                y: i / width,
            });
        }
        Ok(Self { width, height, u, v })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::constant(width, height, 0.0, 0.0)
    }

    pub fn constant(width: usize, height: usize, u: f64, v: f64) -> Self {
        assert!(width > 0 && height > 0, "flow field must be at least 1x1");
        Self {
            width,
            height,
            u: vec![u; width * height],
            v: vec![v; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> (f64, f64)) -> Self {
        assert!(width > 0 && height > 0, "flow field must be at least 1x1");
        let n = width * height;
        let mut u = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for y in 0..height {
            for x in 0..width {
                let (a, b) = f(x, y);
                u.push(a);
                v.push(b);
            }
        }
        Self { width, height, u, v }
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
    pub fn u(&self) -> &[f64] {
        &self.u
    }

    #[inline]
    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub(crate) fn components_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.u, &mut self.v)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: (f64, f64)) {
        let i = y * self.width + x;
        self.u[i] = value.0;
        self.v[i] = value.1;
    }

    /// False for pixels carrying the unknown-flow sentinel.
    #[inline]
    pub fn is_valid_at(&self, x: usize, y: usize) -> bool {
        let (u, v) = self.get(x, y);
        u.abs() <= UNKNOWN_FLOW_THRESHOLD && v.abs() <= UNKNOWN_FLOW_THRESHOLD
    }

    /// Bilinear sample of both components with clamp-to-border addressing.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> (f64, f64) {
        (
            bilinear(&self.u, self.width, self.height, x, y),
            bilinear(&self.v, self.width, self.height, x, y),
        )
    }

    pub fn magnitude(&self, x: usize, y: usize) -> f64 {
        let (u, v) = self.get(x, y);
        u.hypot(v)
    }

    /// Largest component magnitude over the field.
    pub fn max_abs(&self) -> f64 {
        self.u.iter().chain(&self.v).fold(0.0f64, |m, c| m.max(c.abs()))
    }

    /// Applies `f` to every `(u, v)` pair.
    pub fn map(&self, mut f: impl FnMut(f64, f64) -> (f64, f64)) -> Self {
        let mut out = self.clone();
        for i in 0..self.u.len() {
            let (a, b) = f(self.u[i], self.v[i]);
            out.u[i] = a;
            out.v[i] = b;
        }
        out
    }
}

/// Resamples a coarse field onto a finer grid and rescales the vectors.
///
/// Target pixel `x` reads the source at `x / scale_factor` (bilinear,
/// clamped) and the sampled vector is multiplied by `scale_factor`.
pub fn upsample_flow(flow: &FlowField, new_width: usize, new_height: usize, scale_factor: usize) -> FlowField {
    let s = scale_factor as f64;
    let inv = 1.0 / s;
    FlowField::from_fn(new_width, new_height, |x, y| {
        let (u, v) = flow.sample(x as f64 * inv, y as f64 * inv);
        (u * s, v * s)
    })
}
