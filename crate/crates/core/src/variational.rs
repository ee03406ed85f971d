//! Per-scale variational refinement of a dense flow field.
//!
//! Minimizes a robustly penalized sum of a brightness constancy term, a
//! gradient constancy term and a smoothness term. Each fixed-point
//! iteration re-warps the query level with the current field, linearizes
//! the data terms into normalized 3x3 motion tensors, freezes the robust
//! (lagged diffusivity) weights, and solves for a flow increment with
//! in-place SOR sweeps.

use crate::error::{FlowError, Result};
use crate::flow::FlowField;
use crate::image::GrayImage;
use crate::params::{Mode, VarParams};
use crate::pyramid::{gradients, PyramidLevel};

/// Regularizer added to squared gradient norms before normalizing.
pub const NORMALIZATION_FLOOR: f64 = 0.01;

/// Symmetric 3x3 tensor packed as `[xx, xy, xz, yy, yz, zz]`.
pub type Tensor3 = [f64; 6];

/// Normalized motion tensors of the intensity and gradient constancy terms.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTensors {
    pub width: usize,
    pub height: usize,
    /// Brightness constancy tensor per pixel.
    pub intensity: Vec<Tensor3>,
    /// Gradient constancy tensor per pixel.
    pub gradient: Vec<Tensor3>,
}

impl DataTensors {
    pub fn intensity_at(&self, x: usize, y: usize) -> [[f64; 3]; 3] {
        unpack(&self.intensity[y * self.width + x])
    }

    pub fn gradient_at(&self, x: usize, y: usize) -> [[f64; 3]; 3] {
        unpack(&self.gradient[y * self.width + x])
    }
}

pub fn unpack(t: &Tensor3) -> [[f64; 3]; 3] {
    [[t[0], t[1], t[2]], [t[1], t[3], t[4]], [t[2], t[4], t[5]]]
}

#[inline]
fn outer(a: [f64; 3], scale: f64) -> Tensor3 {
    [
        scale * a[0] * a[0],
        scale * a[0] * a[1],
        scale * a[0] * a[2],
        scale * a[1] * a[1],
        scale * a[1] * a[2],
        scale * a[2] * a[2],
    ]
}

#[inline]
fn add(a: Tensor3, b: Tensor3) -> Tensor3 {
    [
        a[0] + b[0],
        a[1] + b[1],
        a[2] + b[2],
        a[3] + b[3],
        a[4] + b[4],
        a[5] + b[5],
    ]
}

/// Second derivatives of one level: `(d/dx grad_x, d/dy grad_x, d/dy grad_y)`.
struct SecondDerivatives {
    xx: GrayImage,
    xy: GrayImage,
    yy: GrayImage,
}

impl SecondDerivatives {
    fn new(level: &PyramidLevel) -> Self {
        let (xx, xy) = gradients(&level.grad_x);
        let (_, yy) = gradients(&level.grad_y);
        Self { xx, xy, yy }
    }
}

struct TensorInputs<'a> {
    reference: &'a PyramidLevel,
    query: &'a PyramidLevel,
    ref_second: SecondDerivatives,
    query_second: SecondDerivatives,
}

impl<'a> TensorInputs<'a> {
    fn new(reference: &'a PyramidLevel, query: &'a PyramidLevel) -> Self {
        Self {
            reference,
            query,
            ref_second: SecondDerivatives::new(reference),
            query_second: SecondDerivatives::new(query),
        }
    }

    /// Tensors at pixel `(x, y)` with the query warped by `(u, v)`.
    ///
    /// Spatial derivatives average the reference and the warped query;
    /// temporal derivatives are warped query minus reference.
    #[inline]
    fn at(&self, x: usize, y: usize, u: f64, v: f64) -> (Tensor3, Tensor3) {
        let (r, q) = (self.reference, self.query);
        let (rs, qs) = (&self.ref_second, &self.query_second);
        let (xw, yw) = (x as f64 + u, y as f64 + v);

        let i1 = q.image.sample(xw, yw);
        let i1x = q.grad_x.sample(xw, yw);
        let i1y = q.grad_y.sample(xw, yw);
        let i1xx = qs.xx.sample(xw, yw);
        let i1xy = qs.xy.sample(xw, yw);
        let i1yy = qs.yy.sample(xw, yw);

        let i0 = r.image.get(x, y);
        let i0x = r.grad_x.get(x, y);
        let i0y = r.grad_y.get(x, y);

        let ix = 0.5 * (i0x + i1x);
        let iy = 0.5 * (i0y + i1y);
        let iz = i1 - i0;
        let ixx = 0.5 * (rs.xx.get(x, y) + i1xx);
        let ixy = 0.5 * (rs.xy.get(x, y) + i1xy);
        let iyy = 0.5 * (rs.yy.get(x, y) + i1yy);
        let ixz = i1x - i0x;
        let iyz = i1y - i0y;

        let beta0 = 1.0 / (ix * ix + iy * iy + NORMALIZATION_FLOOR);
        let beta_x = 1.0 / (ixx * ixx + ixy * ixy + NORMALIZATION_FLOOR);
        let beta_y = 1.0 / (ixy * ixy + iyy * iyy + NORMALIZATION_FLOOR);

        let j0 = outer([ix, iy, iz], beta0);
        let jxy = add(outer([ixx, ixy, ixz], beta_x), outer([ixy, iyy, iyz], beta_y));
        (j0, jxy)
    }
}

/// Normalized data tensors for `reference -> query` under the field `flow`.
pub fn compute_tensors(reference: &PyramidLevel, query: &PyramidLevel, flow: &FlowField) -> Result<DataTensors> {
    check_dims(reference, query, flow)?;
    let inputs = TensorInputs::new(reference, query);
    let (w, h) = reference.dims();
    let mut intensity = Vec::with_capacity(w * h);
    let mut gradient = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = flow.get(x, y);
            let (j0, jxy) = inputs.at(x, y, u, v);
            intensity.push(j0);
            gradient.push(jxy);
        }
    }
    Ok(DataTensors {
        width: w,
        height: h,
        intensity,
        gradient,
    })
}

fn check_dims(reference: &PyramidLevel, query: &PyramidLevel, flow: &FlowField) -> Result<()> {
    if reference.dims() != query.dims() {
        return Err(FlowError::DimensionMismatch {
            expected: reference.dims(),
            actual: query.dims(),
        });
    }
    if reference.dims() != flow.dims() {
        return Err(FlowError::DimensionMismatch {
            expected: reference.dims(),
            actual: flow.dims(),
        });
    }
    Ok(())
}

/// Derivative of the robust penalizer, `1 / (2 sqrt(a2 + eps^2))`.
#[inline]
pub fn penalizer_derivative(a2: f64, epsilon: f64) -> f64 {
    0.5 / (a2 + epsilon * epsilon).sqrt()
}

/// Per-pixel linear system of one fixed-point iteration.
struct LinearSystem {
    a11: Vec<f64>,
    a12: Vec<f64>,
    a22: Vec<f64>,
    b1: Vec<f64>,
    b2: Vec<f64>,
    /// Smoothness link weight between `(x, y)` and `(x + 1, y)`.
    link_right: Vec<f64>,
    /// Smoothness link weight between `(x, y)` and `(x, y + 1)`.
    link_down: Vec<f64>,
}

/// Refines `flow` on one pyramid level.
///
/// Runs `params.outer_iterations(scale)` fixed-point iterations of
/// `params.inner_sor_iters` row-major SOR sweeps each. In stereo mode only
/// the horizontal component is updated. Smoothness links are absent across
/// the image border (reflecting boundary).
pub fn refine(
    flow: &FlowField,
    reference: &PyramidLevel,
    query: &PyramidLevel,
    params: &VarParams,
    scale: usize,
    mode: Mode,
) -> Result<FlowField> {
    params.validate()?;
    check_dims(reference, query, flow)?;
    let inputs = TensorInputs::new(reference, query);
    let (w, h) = reference.dims();
    let n = w * h;
    let mut out = flow.clone();
    let mut du = vec![0.0; n];
    let mut dv = vec![0.0; n];

    for _ in 0..params.outer_iterations(scale) {
        let sys = assemble(&inputs, &out, params, mode);
        du.iter_mut().for_each(|d| *d = 0.0);
        dv.iter_mut().for_each(|d| *d = 0.0);
        for _ in 0..params.inner_sor_iters {
            sor_sweep(&sys, &out, &mut du, &mut dv, w, h, params.sor_omega, mode);
        }
        let (ou, ov) = out.components_mut();
        for i in 0..n {
            ou[i] += du[i];
            ov[i] += dv[i];
            if !(ou[i].is_finite() && ov[i].is_finite()) {
                return Err(FlowError::NonFinite {
                    stage: "variational refinement",
                    x: i % w,
                    y: i / w,
                });
            }
        }
    }
    Ok(out)
}

fn assemble(inputs: &TensorInputs<'_>, flow: &FlowField, params: &VarParams, mode: Mode) -> LinearSystem {
    let (w, h) = flow.dims();
    let n = w * h;
    let eps = params.epsilon;
    let mut sys = LinearSystem {
        a11: Vec::with_capacity(n),
        a12: Vec::with_capacity(n),
        a22: Vec::with_capacity(n),
        b1: Vec::with_capacity(n),
        b2: Vec::with_capacity(n),
        link_right: vec![0.0; n],
        link_down: vec![0.0; n],
    };

    for y in 0..h {
        for x in 0..w {
            let (u, v) = flow.get(x, y);
            let (j0, jxy) = inputs.at(x, y, u, v);
            // increment starts at zero, so a^2 = (0, 0, 1) J (0, 0, 1)^T
            let wi = params.intensity_weight * penalizer_derivative(j0[5], eps);
            let wg = params.gradient_weight * penalizer_derivative(jxy[5], eps);
            sys.a11.push(wi * j0[0] + wg * jxy[0]);
            sys.a12.push(wi * j0[1] + wg * jxy[1]);
            sys.a22.push(wi * j0[3] + wg * jxy[3]);
            sys.b1.push(wi * j0[2] + wg * jxy[2]);
            sys.b2.push(wi * j0[4] + wg * jxy[4]);
        }
    }

    // smoothness diffusivity from central differences of the current field
    let (fu, fv) = (flow.u(), flow.v());
    let mut diffusivity = vec![0.0; n];
    for y in 0..h {
        let (ym, yp) = (y.saturating_sub(1), (y + 1).min(h - 1));
        for x in 0..w {
            let (xm, xp) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let ux = 0.5 * (fu[y * w + xp] - fu[y * w + xm]);
            let uy = 0.5 * (fu[yp * w + x] - fu[ym * w + x]);
            let mut a2 = ux * ux + uy * uy;
            if mode == Mode::Flow {
                let vx = 0.5 * (fv[y * w + xp] - fv[y * w + xm]);
                let vy = 0.5 * (fv[yp * w + x] - fv[ym * w + x]);
                a2 += vx * vx + vy * vy;
            }
            diffusivity[y * w + x] = penalizer_derivative(a2, eps);
        }
    }
    let alpha = params.smoothness_weight;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                sys.link_right[i] = alpha * 0.5 * (diffusivity[i] + diffusivity[i + 1]);
            }
            if y + 1 < h {
                sys.link_down[i] = alpha * 0.5 * (diffusivity[i] + diffusivity[i + w]);
            }
        }
    }
    sys
}

#[allow(clippy::too_many_arguments)]
fn sor_sweep(
    sys: &LinearSystem,
    flow: &FlowField,
    du: &mut [f64],
    dv: &mut [f64],
    w: usize,
    h: usize,
    omega: f64,
    mode: Mode,
) {
    let (fu, fv) = (flow.u(), flow.v());
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mut link_sum = 0.0;
            let mut nu = 0.0;
            let mut nv = 0.0;
            let mut visit = |j: usize, wt: f64| {
                link_sum += wt;
                nu += wt * (fu[j] + du[j] - fu[i]);
                nv += wt * (fv[j] + dv[j] - fv[i]);
            };
            if x > 0 {
                visit(i - 1, sys.link_right[i - 1]);
            }
            if x + 1 < w {
                visit(i + 1, sys.link_right[i]);
            }
            if y > 0 {
                visit(i - w, sys.link_down[i - w]);
            }
            if y + 1 < h {
                visit(i + w, sys.link_down[i]);
            }

            let d1 = sys.a11[i] + link_sum;
            if d1 > 0.0 {
                let target = (nu - sys.b1[i] - sys.a12[i] * dv[i]) / d1;
                du[i] += omega * (target - du[i]);
            }
            if mode == Mode::Flow {
                let d2 = sys.a22[i] + link_sum;
                if d2 > 0.0 {
                    let target = (nv - sys.b2[i] - sys.a12[i] * du[i]) / d2;
                    dv[i] += omega * (target - dv[i]);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn level(img: GrayImage) -> PyramidLevel {
        PyramidLevel::new(img, 0)
    }

    #[test]
    fn constant_frames_are_a_fixed_point() {
        let l = level(GrayImage::filled(20, 14, 42.0));
        let flow = FlowField::constant(20, 14, 1.5, -0.25);
        let out = refine(&flow, &l, &l, &VarParams::default(), 3, Mode::Flow).unwrap();
        assert_eq!(out, flow);
    }

    #[test]
    fn identical_frames_zero_temporal_column() {
        let l = level(GrayImage::from_fn(12, 12, |x, y| ((x * 5 + y * 3) % 11) as f64 * 10.0));
        let t = compute_tensors(&l, &l, &FlowField::zeros(12, 12)).unwrap();
        for (j0, jxy) in t.intensity.iter().zip(&t.gradient) {
            assert_eq!([j0[2], j0[4], j0[5]], [0.0; 3]);
            assert_eq!([jxy[2], jxy[4], jxy[5]], [0.0; 3]);
        }
    }

    #[test]
    fn ramp_tensor_entry() {
        let l = level(GrayImage::from_fn(10, 10, |x, _| x as f64));
        let t = compute_tensors(&l, &l, &FlowField::zeros(10, 10)).unwrap();
        let j = t.intensity_at(5, 5);
        let beta = 1.0 / 1.01;
        assert!((j[0][0] - beta).abs() < 1e-15);
        assert_eq!(j[1][1], 0.0);
        assert_eq!(j[2][2], 0.0);
    }

    #[test]
    fn constant_images_zero_tensors() {
        let l = level(GrayImage::filled(6, 6, 9.0));
        let t = compute_tensors(&l, &l, &FlowField::constant(6, 6, 0.3, 0.1)).unwrap();
        assert!(t
            .intensity
            .iter()
            .chain(&t.gradient)
            .all(|m| m.iter().all(|&e| e == 0.0)));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let l = level(GrayImage::filled(6, 6, 9.0));
        assert!(refine(&FlowField::zeros(5, 6), &l, &l, &VarParams::default(), 0, Mode::Flow).is_err());
    }

    #[test]
    fn stereo_keeps_vertical_zero() {
        let a = level(GrayImage::from_fn(24, 16, |x, y| {
            100.0 + 50.0 * (0.4 * x as f64).sin() + 20.0 * (0.3 * y as f64).cos()
        }));
        let b = level(a.image.translated(1.0, 0.0));
        let out = refine(
            &FlowField::constant(24, 16, 0.5, 0.0),
            &a,
            &b,
            &VarParams::default(),
            1,
            Mode::Stereo,
        )
        .unwrap();
        assert!(out.v().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic() {
        let a = level(GrayImage::from_fn(24, 16, |x, y| {
            100.0 + 50.0 * (0.4 * x as f64 + 0.2 * y as f64).sin()
        }));
        let b = level(a.image.translated(0.7, -0.4));
        let f = FlowField::from_fn(24, 16, |x, y| (0.01 * x as f64, -0.02 * y as f64));
        let p = VarParams::default();
        let r1 = refine(&f, &a, &b, &p, 2, Mode::Flow).unwrap();
        let r2 = refine(&f, &a, &b, &p, 2, Mode::Flow).unwrap();
        assert_eq!(r1, r2);
    }

    fn scene_texture(x: f64, y: f64) -> f64 {
        128.0
            + 45.0 * (0.31 * x + 0.17 * y).sin()
            + 30.0 * (0.23 * y - 0.11 * x + 1.0).cos()
            + 15.0 * (0.47 * x + 0.39 * y + 2.0).sin()
    }

    #[test]
    fn ground_truth_is_nearly_stationary() {
        let (w, h, d) = (48, 40, (1.3, -0.6));
        let a = level(GrayImage::from_fn(w, h, |x, y| scene_texture(x as f64, y as f64)));
        let b = level(GrayImage::from_fn(w, h, |x, y| {
            scene_texture(x as f64 - d.0, y as f64 - d.1)
        }));
        let gt = FlowField::constant(w, h, d.0, d.1);
        let out = refine(&gt, &a, &b, &VarParams::default(), 1, Mode::Flow).unwrap();
        let mut worst: f64 = 0.0;
        for y in 4..h - 4 {
            for x in 4..w - 4 {
                let (u, v) = out.get(x, y);
                worst = worst.max((u - d.0).hypot(v - d.1));
            }
        }
        assert!(worst < 0.05, "drift {worst}");
    }

    /// Refines `init` on a `w x h` window at offset `origin` of an endless
    /// scene moving by `d`.
    fn refine_window(origin: (usize, usize), d: (f64, f64), params: &VarParams, scale: usize) -> FlowField {
        let (w, h) = (40, 32);
        let frame = |shift: (f64, f64)| {
            level(GrayImage::from_fn(w, h, |x, y| {
                scene_texture((x + origin.0) as f64 - shift.0, (y + origin.1) as f64 - shift.1)
            }))
        };
        let init = FlowField::from_fn(w, h, |x, y| {
            let (x, y) = ((x + origin.0) as f64, (y + origin.1) as f64);
            (d.0 + 0.1 * (0.2 * x).sin(), d.1 + 0.1 * (0.15 * y).cos())
        });
        refine(&init, &frame((0.0, 0.0)), &frame(d), params, scale, Mode::Flow).unwrap()
    }

    /// Largest difference between `base` and `moved` on pixels at least
    /// `band` inside both windows, `moved` being offset by `k`.
    fn max_shift_deviation(base: &FlowField, moved: &FlowField, k: (usize, usize), band: usize) -> f64 {
        let (w, h) = base.dims();
        let mut worst: f64 = 0.0;
        for y in band..h - band - k.1 {
            for x in band..w - band - k.0 {
                let (u0, v0) = base.get(x + k.0, y + k.1);
                let (u1, v1) = moved.get(x, y);
                worst = worst.max((u0 - u1).hypot(v0 - v1));
            }
        }
        worst
    }

    #[test]
    fn grid_shift_equivariance_of_local_terms() {
        // Without smoothness, one fixed-point iteration makes every pixel
        // depend only on its two-pixel derivative stencils plus the one-pixel
        // footprint of the sub-pixel warp, so results three pixels inside
        // the border move exactly with the grid.
        let (k, d) = ((3, 2), (0.8, 0.5));
        let params = VarParams {
            smoothness_weight: 0.0,
            ..VarParams::default()
        };
        let base = refine_window((0, 0), d, &params, 0);
        let moved = refine_window(k, d, &params, 0);
        assert!(max_shift_deviation(&base, &moved, k, 3) < 1e-12);
    }

    #[test]
    fn grid_shift_equivariance_with_smoothness() {
        // The smoothness links couple the whole window, so different border
        // content leaves a small residual difference.
        let (k, d) = ((3, 2), (0.8, 0.5));
        let base = refine_window((0, 0), d, &VarParams::default(), 1);
        let moved = refine_window(k, d, &VarParams::default(), 1);
        let dev = max_shift_deviation(&base, &moved, k, 2);
        assert!(dev < 0.05, "max deviation {dev}");
    }

    /// Eigenvalues of a symmetric 3x3 matrix by cyclic Jacobi rotations.
    fn eigenvalues(mut m: [[f64; 3]; 3]) -> [f64; 3] {
        for _ in 0..50 {
            let off = m[0][1].powi(2) + m[0][2].powi(2) + m[1][2].powi(2);
            if off < 1e-30 {
                break;
            }
            for (p, q) in [(0, 1), (0, 2), (1, 2)] {
                if m[p][q] == 0.0 {
                    continue;
                }
                let theta = 0.5 * (2.0 * m[p][q]).atan2(m[q][q] - m[p][p]);
                let (s, c) = theta.sin_cos();
                let mut r = [[0.0; 3]; 3];
                for (i, row) in r.iter_mut().enumerate() {
                    row[i] = 1.0;
                }
                r[p][p] = c;
                r[q][q] = c;
                r[p][q] = s;
                r[q][p] = -s;
                // m <- r^T m r
                let mut t = [[0.0; 3]; 3];
                for i in 0..3 {
                    for j in 0..3 {
                        t[i][j] = (0..3).map(|l| m[i][l] * r[l][j]).sum();
                    }
                }
                for i in 0..3 {
                    for j in 0..3 {
                        m[i][j] = (0..3).map(|l| r[l][i] * t[l][j]).sum();
                    }
                }
            }
        }
        [m[0][0], m[1][1], m[2][2]]
    }

    #[test]
    fn jacobi_eigenvalues() {
        let mut e = eigenvalues([[2.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 5.0]]);
        e.sort_by(f64::total_cmp);
        for (a, b) in e.iter().zip([1.0, 3.0, 5.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn tensors_are_positive_semidefinite(
            seed_a in proptest::collection::vec(0.0..255.0f64, 12 * 10),
            seed_b in proptest::collection::vec(0.0..255.0f64, 12 * 10),
            u in -2.0..2.0f64,
            v in -2.0..2.0f64,
        ) {
            let a = level(GrayImage::from_fn(12, 10, |x, y| seed_a[y * 12 + x]));
            let b = level(GrayImage::from_fn(12, 10, |x, y| seed_b[y * 12 + x]));
            let t = compute_tensors(&a, &b, &FlowField::constant(12, 10, u, v)).unwrap();
            for (j0, jxy) in t.intensity.iter().zip(&t.gradient) {
                for m in [unpack(j0), unpack(jxy)] {
                    let lowest = eigenvalues(m).into_iter().fold(f64::INFINITY, f64::min);
                    prop_assert!(lowest >= -1e-9, "{m:?} has eigenvalue {lowest}");
                }
            }
        }
    }
}
