//! Single-patch correspondence search with the inverse compositional
//! Gauss-Newton method.
//!
//! The template gradients (steepest-descent images) and the 2x2 Hessian
//! depend only on the reference patch, so they are computed once in
//! [`precompute_patch`]. Each iteration of [`optimize_patch`] then only
//! resamples the query window, forms the residual, and solves a fixed
//! 2x2 system.

use crate::params::{Mode, ResidualNorm};
use crate::pyramid::PyramidLevel;

/// Updates smaller than this (pixels) end the iteration.
pub const CONVERGENCE_THRESHOLD: f64 = 1e-2;
/// Patches whose Hessian determinant falls below this are skipped.
pub const MIN_HESSIAN_DET: f64 = 1e-6;
/// Patches whose Hessian condition number exceeds this are skipped.
pub const MAX_HESSIAN_CONDITION: f64 = 1e6;

/// Search settings shared by every patch of a scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchSettings {
    pub iterations: usize,
    pub residual_norm: ResidualNorm,
    pub mean_normalization: bool,
    pub mode: Mode,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            iterations: 12,
            residual_norm: ResidualNorm::L2,
            mean_normalization: true,
            mode: Mode::Flow,
        }
    }
}

/// Precomputed template data and current displacement of one patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchState {
    /// Window center in level coordinates; the window spans
    /// `center - size/2 .. center - size/2 + size` on both axes.
    pub center: (f64, f64),
    pub size: usize,
    pub template: Vec<f64>,
    /// Template gradients, one `[gx, gy]` per window pixel (the warp
    /// Jacobian of a pure translation is the identity).
    pub steepest_descent: Vec<[f64; 2]>,
    pub hessian: [[f64; 2]; 2],
    /// Present only for well-conditioned patches.
    pub hessian_inverse: Option<[[f64; 2]; 2]>,
    pub template_mean: f64,
    pub displacement: (f64, f64),
    pub init_displacement: (f64, f64),
    pub valid: bool,
    /// Query-minus-template mean at the final displacement (0 when mean
    /// normalization is off or the patch was not optimized).
    pub mean_offset: f64,
    /// Mean absolute residual over the window at the final displacement.
    pub mean_abs_residual: f64,
    /// Gauss-Newton steps actually taken.
    pub iterations_run: usize,
}

impl PatchState {
    /// Top-left corner of the window.
    #[inline]
    pub fn origin(&self) -> (f64, f64) {
        let half = (self.size / 2) as f64;
        (self.center.0 - half, self.center.1 - half)
    }

    /// Sets both the initial and the current displacement.
    pub fn initialize(&mut self, u: (f64, f64)) {
        self.init_displacement = u;
        self.displacement = u;
    }
}

/// Extracts the template and its gradients around `center` and decides
/// whether the patch carries enough texture to be optimized under
/// `settings` (mode and mean normalization shape the Hessian).
pub fn precompute_patch(
    reference: &PyramidLevel,
    center: (f64, f64),
    patch_size: usize,
    settings: &SearchSettings,
) -> PatchState {
    let mode = settings.mode;
    let n = patch_size * patch_size;
    let mut template = Vec::with_capacity(n);
    let mut sd = Vec::with_capacity(n);
    let half = (patch_size / 2) as f64;
    let (ox, oy) = (center.0 - half, center.1 - half);

    let integral = ox.fract() == 0.0
        && oy.fract() == 0.0
        && ox >= 0.0
        && oy >= 0.0
        && ox as usize + patch_size <= reference.width()
        && oy as usize + patch_size <= reference.height();

    if integral {
        let (x0, y0) = (ox as usize, oy as usize);
        for j in 0..patch_size {
            let y = y0 + j;
            let (row, gxr, gyr) = (reference.image.row(y), reference.grad_x.row(y), reference.grad_y.row(y));
            for i in 0..patch_size {
                let x = x0 + i;
                template.push(row[x]);
                sd.push([gxr[x], gyr[x]]);
            }
        }
    } else {
        for j in 0..patch_size {
            let y = oy + j as f64;
            for i in 0..patch_size {
                let x = ox + i as f64;
                template.push(reference.image.sample(x, y));
                sd.push([reference.grad_x.sample(x, y), reference.grad_y.sample(x, y)]);
            }
        }
    }

    if mode == Mode::Stereo {
        for g in &mut sd {
            g[1] = 0.0;
        }
    }

    // With mean normalization the residual is blind to the window mean, so
    // the Gauss-Newton Hessian is built from mean-free gradients.
    let nf = n as f64;
    let mean_g = if settings.mean_normalization {
        let s = sd.iter().fold([0.0; 2], |a, g| [a[0] + g[0], a[1] + g[1]]);
        [s[0] / nf, s[1] / nf]
    } else {
        [0.0; 2]
    };
    let mut h = [[0.0; 2]; 2];
    for g in &sd {
        let (gx, gy) = (g[0] - mean_g[0], g[1] - mean_g[1]);
        h[0][0] += gx * gx;
        h[0][1] += gx * gy;
        h[1][1] += gy * gy;
    }
    h[1][0] = h[0][1];

    let hessian_inverse = match mode {
        Mode::Flow => invert_if_conditioned(&h),
        Mode::Stereo => (h[0][0] >= MIN_HESSIAN_DET).then(|| [[1.0 / h[0][0], 0.0], [0.0, 0.0]]),
    };

    let template_mean = template.iter().sum::<f64>() / nf;
    PatchState {
        center,
        size: patch_size,
        template,
        steepest_descent: sd,
        hessian: h,
        valid: hessian_inverse.is_some(),
        hessian_inverse,
        template_mean,
        displacement: (0.0, 0.0),
        init_displacement: (0.0, 0.0),
        mean_offset: 0.0,
        mean_abs_residual: 0.0,
        iterations_run: 0,
    }
}

fn invert_if_conditioned(h: &[[f64; 2]; 2]) -> Option<[[f64; 2]; 2]> {
    let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
    // also rejects a NaN determinant
    if det.is_nan() || det < MIN_HESSIAN_DET {
        return None;
    }
    // eigenvalues of the symmetric 2x2
    let tr = h[0][0] + h[1][1];
    let disc = ((h[0][0] - h[1][1]).powi(2) + 4.0 * h[0][1] * h[0][1]).sqrt();
    let lmax = 0.5 * (tr + disc);
    let lmin = 0.5 * (tr - disc);
    if lmin <= 0.0 || lmax / lmin > MAX_HESSIAN_CONDITION {
        return None;
    }
    let inv_det = 1.0 / det;
    Some([
        [h[1][1] * inv_det, -h[0][1] * inv_det],
        [-h[1][0] * inv_det, h[0][0] * inv_det],
    ])
}

/// Maps a residual so that its square equals the chosen penalty.
///
/// L2 leaves it unchanged, L1 gives `sign(e) * sqrt(|e|)`, and Huber keeps
/// `|e| < b` unchanged and gives `sign(e) * sqrt(2b|e| - b^2)` beyond.
#[inline]
pub fn residual_transform(e: f64, norm: ResidualNorm) -> f64 {
    match norm {
        ResidualNorm::L2 => e,
        ResidualNorm::L1 => e.signum() * e.abs().sqrt(),
        ResidualNorm::Huber(b) => {
            let a = e.abs();
            if a < b {
                e
            } else {
                e.signum() * (2.0 * b * a - b * b).sqrt()
            }
        }
    }
}

/// Result of evaluating the matching objective at one displacement.
#[derive(Debug, Clone, Copy)]
struct WindowEval {
    /// Sum of transformed squared residuals.
    cost: f64,
    /// `sum S'^T * transformed residual`.
    gradient: [f64; 2],
    mean_offset: f64,
    mean_abs_residual: f64,
}

/// Samples the query window at `displacement` into `buf`.
fn extract_window(patch: &PatchState, query: &PyramidLevel, displacement: (f64, f64), buf: &mut [f64]) {
    let (ox, oy) = patch.origin();
    let (bx, by) = (ox + displacement.0, oy + displacement.1);
    let size = patch.size;
    let img = &query.image;

    // Fast path: the whole window lies inside the image, so clamping can
    // be skipped and the bilinear weights are shared by every pixel.
    let fx0 = bx.floor();
    let fy0 = by.floor();
    if fx0 >= 0.0 && fy0 >= 0.0 && (fx0 as usize) + size < img.width() && (fy0 as usize) + size < img.height() {
        let (x0, y0) = (fx0 as usize, fy0 as usize);
        let (ax, ay) = (bx - fx0, by - fy0);
        let w00 = (1.0 - ax) * (1.0 - ay);
        let w10 = ax * (1.0 - ay);
        let w01 = (1.0 - ax) * ay;
        let w11 = ax * ay;
        for j in 0..size {
            let r0 = img.row(y0 + j);
            let r1 = img.row(y0 + j + 1);
            let out = &mut buf[j * size..(j + 1) * size];
            for (i, o) in out.iter_mut().enumerate() {
                let x = x0 + i;
                *o = w00 * r0[x] + w10 * r0[x + 1] + w01 * r1[x] + w11 * r1[x + 1];
            }
        }
    } else {
        for j in 0..size {
            let y = by + j as f64;
            for i in 0..size {
                buf[j * size + i] = img.sample(bx + i as f64, y);
            }
        }
    }
}

fn evaluate(
    patch: &PatchState,
    query: &PyramidLevel,
    displacement: (f64, f64),
    settings: &SearchSettings,
    buf: &mut [f64],
) -> WindowEval {
    extract_window(patch, query, displacement, buf);
    let n = buf.len() as f64;
    let mean_offset = if settings.mean_normalization {
        buf.iter().sum::<f64>() / n - patch.template_mean
    } else {
        0.0
    };
    let mut cost = 0.0;
    let mut gradient = [0.0; 2];
    let mut abs_sum = 0.0;
    for ((&q, &t), g) in buf.iter().zip(&patch.template).zip(&patch.steepest_descent) {
        let e = q - mean_offset - t;
        abs_sum += e.abs();
        let r = residual_transform(e, settings.residual_norm);
        cost += r * r;
        gradient[0] += g[0] * r;
        gradient[1] += g[1] * r;
    }
    WindowEval {
        cost,
        gradient,
        mean_offset,
        mean_abs_residual: abs_sum / n,
    }
}

/// Matching cost of `patch` against `query` at `displacement`: the sum of
/// squared (transformed, mean-normalized when enabled) residuals.
pub fn patch_cost(
    patch: &PatchState,
    query: &PyramidLevel,
    displacement: (f64, f64),
    settings: &SearchSettings,
) -> f64 {
    let mut buf = vec![0.0; patch.size * patch.size];
    evaluate(patch, query, displacement, settings, &mut buf).cost
}

/// Gauss-Newton descent direction `sum S'^T e` at `displacement`.
pub fn patch_gradient(
    patch: &PatchState,
    query: &PyramidLevel,
    displacement: (f64, f64),
    settings: &SearchSettings,
) -> [f64; 2] {
    let mut buf = vec![0.0; patch.size * patch.size];
    evaluate(patch, query, displacement, settings, &mut buf).gradient
}

/// Runs up to `settings.iterations` inverse compositional updates
/// `u <- u - H'^-1 sum S'^T e` starting from the patch's current displacement.
///
/// Stops early when the step drops below [`CONVERGENCE_THRESHOLD`] or when a
/// step would raise the cost, in which case the previous displacement is
/// kept. A displacement that
/// carries the window center more than one level width outside the image is
/// reset to the initial displacement. Invalid patches are returned with
/// their initialization untouched (residual statistics are still filled in).
pub fn optimize_patch(mut patch: PatchState, query: &PyramidLevel, settings: &SearchSettings) -> PatchState {
    let mut buf = vec![0.0; patch.size * patch.size];
    let mut u = patch.displacement;
    let mut current = evaluate(&patch, query, u, settings, &mut buf);
    let Some(hinv) = patch.hessian_inverse else {
        patch.mean_offset = current.mean_offset;
        patch.mean_abs_residual = current.mean_abs_residual;
        return patch;
    };
    let mut evaluated_at = u;
    let (w, h) = (query.width() as f64, query.height() as f64);
    let mut steps = 0;

    for _ in 0..settings.iterations {
        let g = current.gradient;
        let du = match settings.mode {
            Mode::Flow => (
                hinv[0][0] * g[0] + hinv[0][1] * g[1],
                hinv[1][0] * g[0] + hinv[1][1] * g[1],
            ),
            Mode::Stereo => (hinv[0][0] * g[0], 0.0),
        };
        let candidate = (u.0 - du.0, u.1 - du.1);
        steps += 1;

        let cx = patch.center.0 + candidate.0;
        let cy = patch.center.1 + candidate.1;
        if !(cx > -w && cx < 2.0 * w && cy > -h && cy < 2.0 * h) {
            u = patch.init_displacement;
            break;
        }

        let step = du.0.hypot(du.1);
        if step < CONVERGENCE_THRESHOLD {
            u = candidate;
            break;
        }

        let next = evaluate(&patch, query, candidate, settings, &mut buf);
        if next.cost > current.cost {
            break;
        }
        u = candidate;
        current = next;
        evaluated_at = candidate;
    }

    if evaluated_at != u {
        current = evaluate(&patch, query, u, settings, &mut buf);
    }
    patch.displacement = u;
    patch.mean_offset = current.mean_offset;
    patch.mean_abs_residual = current.mean_abs_residual;
    patch.iterations_run = steps;
    patch
}
