//! Algorithm parameters and the four standard operating points.

use std::fmt;
use std::str::FromStr;

use crate::error::{FlowError, Result};

/// Penalty applied to per-pixel patch residuals during inverse search.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ResidualNorm {
    #[default]
    L2,
    L1,
    /// Huber penalty with threshold `b > 0` (intensity units).
    Huber(f64),
}

impl FromStr for ResidualNorm {
    type Err = FlowError;

    /// Parses `l2`, `l1` or `huber:B`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "l2" => Ok(ResidualNorm::L2),
            "l1" => Ok(ResidualNorm::L1),
            _ => {
                let b = lower
                    .strip_prefix("huber:")
                    .and_then(|b| b.parse::<f64>().ok())
                    .ok_or_else(|| {
                        FlowError::InvalidParams(format!("unknown residual norm '{s}' (expected l2, l1 or huber:B)"))
                    })?;
                if !(b > 0.0 && b.is_finite()) {
                    return Err(FlowError::InvalidParams(format!(
                        "huber threshold must be positive, got {b}"
                    )));
                }
                Ok(ResidualNorm::Huber(b))
            }
        }
    }
}

impl fmt::Display for ResidualNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResidualNorm::L2 => f.write_str("l2"),
            ResidualNorm::L1 => f.write_str("l1"),
            ResidualNorm::Huber(b) => write!(f, "huber:{b}"),
        }
    }
}

/// Two-dimensional optical flow or horizontal-only stereo matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Flow,
    Stereo,
}

/// Weights and iteration counts of the per-scale variational refinement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarParams {
    /// Weight of the brightness constancy term.
    pub intensity_weight: f64,
    /// Weight of the gradient constancy term.
    pub gradient_weight: f64,
    /// Weight of the flow smoothness term.
    pub smoothness_weight: f64,
    /// Fixed-point iterations at scale `s` are `outer_iters_factor * (s + 1)`.
    pub outer_iters_factor: usize,
    /// SOR sweeps per fixed-point iteration.
    pub inner_sor_iters: usize,
    /// Epsilon of the robust penalizer `sqrt(a^2 + eps^2)`.
    pub epsilon: f64,
    /// SOR relaxation factor, in `(0, 2)`.
    pub sor_omega: f64,
}

impl Default for VarParams {
    fn default() -> Self {
        Self {
            intensity_weight: 5.0,
            gradient_weight: 10.0,
            smoothness_weight: 10.0,
            outer_iters_factor: 1,
            inner_sor_iters: 5,
            epsilon: 0.001,
            sor_omega: 1.6,
        }
    }
}

impl VarParams {
    pub fn outer_iterations(&self, scale: usize) -> usize {
        self.outer_iters_factor * (scale + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let weights = [self.intensity_weight, self.gradient_weight, self.smoothness_weight];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(FlowError::InvalidParams(
                "variational weights must be finite and non-negative".into(),
            ));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(FlowError::InvalidParams(format!(
                "penalizer epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.sor_omega > 0.0 && self.sor_omega < 2.0) {
            return Err(FlowError::InvalidParams(format!(
                "SOR relaxation must lie in (0, 2), got {}",
                self.sor_omega
            )));
        }
        Ok(())
    }
}

/// The four speed/quality operating points, from fastest to most accurate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    /// No variational refinement; the fastest setting.
    UltraFast = 1,
    Fast = 2,
    Medium = 3,
    /// All scales down to full resolution.
    Accurate = 4,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::UltraFast, Preset::Fast, Preset::Medium, Preset::Accurate];

    pub fn from_index(i: u8) -> Option<Self> {
        match i {
            1 => Some(Preset::UltraFast),
            2 => Some(Preset::Fast),
            3 => Some(Preset::Medium),
            4 => Some(Preset::Accurate),
            _ => None,
        }
    }

    pub fn index(self) -> u8 {
        self as u8
    }

    /// `(finest_scale, iterations, patch_size, overlap)`.
    pub fn tuple(self) -> (usize, usize, usize, f64) {
        match self {
            Preset::UltraFast => (3, 16, 8, 0.30),
            Preset::Fast => (3, 12, 8, 0.40),
            Preset::Medium => (1, 16, 12, 0.75),
            Preset::Accurate => (0, 256, 12, 0.75),
        }
    }
}

/// Default fraction `f` of the image width that the coarsest scale must
/// be able to capture (`1/f` of the width).
pub const DEFAULT_MOTION_FRACTION: f64 = 8.0;

/// Complete parameter set for one flow computation.
#[derive(Debug, Clone, PartialEq)]
pub struct DisParams {
    pub patch_size: usize,
    /// Fractional overlap of neighbouring patches, in `[0, 1)`.
    pub overlap: f64,
    /// Gauss-Newton iterations per patch.
    pub iterations: usize,
    pub finest_scale: usize,
    pub downscale: usize,
    pub coarsest_scale: usize,
    pub use_mean_normalization: bool,
    pub use_densification: bool,
    pub residual_norm: ResidualNorm,
    pub variational: Option<VarParams>,
    pub mode: Mode,
    /// Merge forward and backward patch estimates during densification.
    pub bidirectional: bool,
    /// Worker threads for the patch loop and densification: 1 runs
    /// sequentially, 0 uses the global pool. Results do not depend on it.
    pub threads: usize,
}

impl Default for DisParams {
    fn default() -> Self {
        Self::preset(Preset::Fast)
    }
}

impl DisParams {
    /// Parameters of an operating point with the coarsest scale used for
    /// 1024-pixel-wide input (`5`). Call [`DisParams::fit_to`] to adapt the
    /// coarsest scale to other resolutions.
    pub fn preset(preset: Preset) -> Self {
        let (finest_scale, iterations, patch_size, overlap) = preset.tuple();
        Self {
            patch_size,
            overlap,
            iterations,
            finest_scale,
            downscale: 2,
            coarsest_scale: 5,
            use_mean_normalization: true,
            use_densification: true,
            residual_norm: ResidualNorm::L2,
            variational: match preset {
                Preset::UltraFast => None,
                _ => Some(VarParams::default()),
            },
            mode: Mode::Flow,
            bidirectional: false,
            threads: 1,
        }
    }

    /// Stereo variant of a preset: horizontal-only, iterations halved.
    pub fn stereo_preset(preset: Preset) -> Self {
        let mut p = Self::preset(preset);
        p.mode = Mode::Stereo;
        p.iterations = (p.iterations / 2).max(1);
        p
    }

    /// Sets the coarsest scale from the image width, then lowers it until
    /// every processed level can hold a patch.
    pub fn fit_to(mut self, width: usize, height: usize) -> Result<Self> {
        let wanted = coarsest_scale_for(
            width as f64,
            self.patch_size as f64,
            DEFAULT_MOTION_FRACTION,
            self.downscale,
        );
        self.coarsest_scale = wanted.max(self.finest_scale);
        let feasible = max_feasible_scale(width, height, self.patch_size, self.downscale);
        if self.coarsest_scale > feasible {
            self.coarsest_scale = feasible;
        }
        if self.finest_scale > self.coarsest_scale {
            return Err(FlowError::Dimensions(format!(
                "{width}x{height} input is too small for finest scale {} with {}px patches",
                self.finest_scale, self.patch_size
            )));
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 2 {
            return Err(FlowError::InvalidParams(format!(
                "patch size must be >= 2, got {}",
                self.patch_size
            )));
        }
        if !(self.overlap >= 0.0 && self.overlap < 1.0) {
            return Err(FlowError::InvalidParams(format!(
                "overlap must lie in [0, 1), got {}",
                self.overlap
            )));
        }
        if self.iterations < 1 {
            return Err(FlowError::InvalidParams("iterations must be >= 1".into()));
        }
        if self.downscale < 2 {
            return Err(FlowError::InvalidParams(format!(
                "downscale must be >= 2, got {}",
                self.downscale
            )));
        }
        if self.finest_scale > self.coarsest_scale {
            return Err(FlowError::InvalidParams(format!(
                "finest scale {} exceeds coarsest scale {}",
                self.finest_scale, self.coarsest_scale
            )));
        }
        if let ResidualNorm::Huber(b) = self.residual_norm {
            if !(b > 0.0 && b.is_finite()) {
                return Err(FlowError::InvalidParams(format!(
                    "huber threshold must be positive, got {b}"
                )));
            }
        }
        if let Some(var) = &self.variational {
            var.validate()?;
        }
        Ok(())
    }
}

/// Smallest pyramid depth whose coarsest level captures motions of `1/f`
/// of the image width: `ceil(log_downscale(2 * width / (f * patch_size)))`,
/// never negative.
pub fn coarsest_scale_for(width: f64, patch_size: f64, motion_fraction: f64, downscale: usize) -> usize {
    let arg = 2.0 * width / (motion_fraction * patch_size);
    if arg <= 1.0 {
        return 0;
    }
    let exact = arg.ln() / (downscale as f64).ln();
    // guard against ln rounding pushing an exact power just above an integer
    let rounded = exact.round();
    if (exact - rounded).abs() < 1e-9 {
        rounded as usize
    } else {
        exact.ceil() as usize
    }
}

/// Deepest level index whose dimensions are still at least `patch_size`.
pub fn max_feasible_scale(width: usize, height: usize, patch_size: usize, downscale: usize) -> usize {
    let mut s = 0;
    let (mut w, mut h) = (width / downscale, height / downscale);
    while w >= patch_size && h >= patch_size && w >= 2 && h >= 2 {
        s += 1;
        w /= downscale;
        h /= downscale;
    }
    s
}
