//! Patch grids, per-scale initialization, outlier reset, and the weighted
//! averaging that turns sparse patch displacements into a dense field.
//!
//! A pixel `x` covered by patches `i` receives
//!
//! ```text
//! U(x) = sum_i w_i(x) u_i / sum_i w_i(x),   w_i(x) = 1 / max(1, |d_i(x)|)
//! d_i(x) = I_query(x + u_i) - I_ref(x) - offset_i
//! ```
//!
//! where `offset_i` is the patch's mean-normalization offset. Each pixel
//! accumulates its contributions in one canonical patch order (by window
//! position), so parallel and sequential runs, and any permutation of the
//! input patches, produce bit-identical fields.

use crate::error::{FlowError, Result};
use crate::exec::Executor;
use crate::flow::FlowField;
use crate::inverse_search::PatchState;
use crate::pyramid::PyramidLevel;

/// Uniform grid of patch windows covering a level.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub width: usize,
    pub height: usize,
    pub patch_size: usize,
    /// Distance between neighbouring window origins.
    pub spacing: usize,
    /// Window origins along x; the last one may be clamped to the border.
    pub origins_x: Vec<usize>,
    pub origins_y: Vec<usize>,
    /// Window centers, row-major over `origins_y x origins_x`.
    pub centers: Vec<(f64, f64)>,
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

/// Grid step for a patch size and fractional overlap: the overlap is
/// floored to whole pixels.
pub fn grid_spacing(patch_size: usize, overlap: f64) -> usize {
    // the epsilon keeps products like 0.29 * 100 from flooring one short
    let overlap_px = (overlap * patch_size as f64 + 1e-9).floor() as usize;
    patch_size.saturating_sub(overlap_px).max(1)
}

fn axis_origins(dim: usize, patch_size: usize, spacing: usize) -> Vec<usize> {
    let last = dim - patch_size;
    let mut out: Vec<usize> = (0..=last).step_by(spacing).collect();
    if *out.last().expect("dim >= patch_size") != last {
        out.push(last);
    }
    out
}

/// Lays out windows from the top-left corner with the overlap-derived
/// spacing; a final window is clamped to the far border whenever the
/// regular steps would leave pixels uncovered.
pub fn create_grid(width: usize, height: usize, patch_size: usize, overlap: f64) -> Result<PatchGrid> {
    if patch_size == 0 || width < patch_size || height < patch_size {
        return Err(FlowError::Dimensions(format!(
            "{width}x{height} level cannot hold a {patch_size}x{patch_size} patch"
        )));
    }
    let spacing = grid_spacing(patch_size, overlap);
    let origins_x = axis_origins(width, patch_size, spacing);
    let origins_y = axis_origins(height, patch_size, spacing);
    let half = (patch_size / 2) as f64;
    let centers = origins_y
        .iter()
        .flat_map(|&oy| origins_x.iter().map(move |&ox| (ox as f64 + half, oy as f64 + half)))
        .collect();
    Ok(PatchGrid {
        width,
        height,
        patch_size,
        spacing,
        origins_x,
        origins_y,
        centers,
    })
}

/// Initial displacement of every grid patch: zero at the coarsest scale,
/// otherwise the coarser field read at `center / downscale` and scaled
/// by `downscale`.
pub fn init_patches(grid: &PatchGrid, coarser: Option<&FlowField>, downscale: usize) -> Vec<(f64, f64)> {
    match coarser {
        None => vec![(0.0, 0.0); grid.len()],
        Some(flow) => {
            let s = downscale as f64;
            grid.centers
                .iter()
                .map(|&(cx, cy)| {
                    let (u, v) = flow.sample(cx / s, cy / s);
                    (u * s, v * s)
                })
                .collect()
        }
    }
}

/// Resets every patch that moved farther than `patch_size` from its
/// initialization back to the initialization.
pub fn reset_outliers(patches: &mut [PatchState], patch_size: usize) {
    let limit = patch_size as f64;
    for p in patches {
        let (du, dv) = (
            p.init_displacement.0 - p.displacement.0,
            p.init_displacement.1 - p.displacement.1,
        );
        if du.hypot(dv) > limit {
            p.displacement = p.init_displacement;
        }
    }
}

/// Densification weight for an intensity difference.
#[inline]
pub fn residual_weight(d: f64) -> f64 {
    1.0 / d.abs().max(1.0)
}

/// Integer pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy)]
struct Footprint {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
}

/// Pixels `x` with `origin + shift <= x < origin + shift + size`, clipped.
fn footprint(origin: (f64, f64), size: usize, shift: (f64, f64), width: usize, height: usize) -> Option<Footprint> {
    let span = |o: f64, dim: usize| -> Option<(usize, usize)> {
        let lo = o.ceil().max(0.0);
        let hi = (o + size as f64).ceil().min(dim as f64);
        (lo < hi).then_some((lo as usize, hi as usize))
    };
    let (x0, x1) = span(origin.0 + shift.0, width)?;
    let (y0, y1) = span(origin.1 + shift.1, height)?;
    Some(Footprint { x0, x1, y0, y1 })
}

/// Patch indices sorted by window origin, then by displacement and offset,
/// so the summation order does not depend on how the caller ordered them.
fn canonical_order(patches: &[PatchState]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..patches.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&patches[a], &patches[b]);
        let (oa, ob) = (pa.origin(), pb.origin());
        oa.1.total_cmp(&ob.1)
            .then(oa.0.total_cmp(&ob.0))
            .then(pa.displacement.1.total_cmp(&pb.displacement.1))
            .then(pa.displacement.0.total_cmp(&pb.displacement.0))
            .then(pa.mean_offset.total_cmp(&pb.mean_offset))
            .then(pa.size.cmp(&pb.size))
    });
    order
}

/// Patches of one direction, prepared for row-wise accumulation.
struct Contributions<'a> {
    patches: &'a [PatchState],
    footprints: Vec<Option<Footprint>>,
    /// Patch indices touching each row, in canonical order.
    rows: Vec<Vec<u32>>,
    backward: bool,
}

impl<'a> Contributions<'a> {
    fn new(patches: &'a [PatchState], width: usize, height: usize, backward: bool) -> Self {
        let footprints: Vec<_> = patches
            .iter()
            .map(|p| {
                let shift = if backward { p.displacement } else { (0.0, 0.0) };
                footprint(p.origin(), p.size, shift, width, height)
            })
            .collect();
        let mut rows = vec![Vec::new(); height];
        for i in canonical_order(patches) {
            if let Some(fp) = &footprints[i] {
                for row in &mut rows[fp.y0..fp.y1] {
                    row.push(i as u32);
                }
            }
        }
        Self {
            patches,
            footprints,
            rows,
            backward,
        }
    }

    /// Adds this direction's weighted votes for row `y` into the
    /// accumulators. Forward patches read `query(x + u) - reference(x)`;
    /// backward patches (estimated from `query` to `reference`) read
    /// `reference(x) - query(x - u)` and vote with `-u`.
    fn accumulate_row(
        &self,
        y: usize,
        reference: &PyramidLevel,
        query: &PyramidLevel,
        acc_w: &mut [f64],
        acc_u: &mut [f64],
        acc_v: &mut [f64],
    ) {
        let yf = y as f64;
        for &i in &self.rows[y] {
            let i = i as usize;
            let p = &self.patches[i];
            let fp = self.footprints[i].expect("bucketed patches have a footprint");
            let (u, v) = p.displacement;
            let (vote_u, vote_v) = if self.backward { (-u, -v) } else { (u, v) };
            for x in fp.x0..fp.x1 {
                let xf = x as f64;
                let d = if self.backward {
                    reference.image.get(x, y) - query.image.sample(xf - u, yf - v) - p.mean_offset
                } else {
                    query.image.sample(xf + u, yf + v) - reference.image.get(x, y) - p.mean_offset
                };
                let w = residual_weight(d);
                acc_w[x] += w;
                acc_u[x] += w * vote_u;
                acc_v[x] += w * vote_v;
            }
        }
    }
}

/// Dense field from optimized patches of `reference -> query`.
pub fn densify(patches: &[PatchState], reference: &PyramidLevel, query: &PyramidLevel) -> Result<FlowField> {
    densify_with(&Executor::Sequential, patches, reference, query)
}

pub(crate) fn densify_with(
    exec: &Executor,
    patches: &[PatchState],
    reference: &PyramidLevel,
    query: &PyramidLevel,
) -> Result<FlowField> {
    let (w, h) = reference.dims();
    let fwd = Contributions::new(patches, w, h, false);
    accumulate(exec, w, h, |y, acc_w, acc_u, acc_v| {
        fwd.accumulate_row(y, reference, query, acc_w, acc_u, acc_v);
        None
    })
}

/// Dense forward field merging forward patches (`i_t -> i_t1`) and
/// backward patches (`i_t1 -> i_t`).
///
/// Backward patches vote with their negated displacement at the pixels
/// their window lands on after being displaced, with residuals read by
/// bilinear interpolation. Pixels left with zero total weight take the
/// forward-only value.
pub fn densify_bidirectional(
    forward: &[PatchState],
    backward: &[PatchState],
    i_t: &PyramidLevel,
    i_t1: &PyramidLevel,
) -> Result<FlowField> {
    densify_bidirectional_with(&Executor::Sequential, forward, backward, i_t, i_t1)
}

pub(crate) fn densify_bidirectional_with(
    exec: &Executor,
    forward: &[PatchState],
    backward: &[PatchState],
    i_t: &PyramidLevel,
    i_t1: &PyramidLevel,
) -> Result<FlowField> {
    if i_t.dims() != i_t1.dims() {
        return Err(FlowError::DimensionMismatch {
            expected: i_t.dims(),
            actual: i_t1.dims(),
        });
    }
    let (w, h) = i_t.dims();
    let fwd = Contributions::new(forward, w, h, false);
    let bwd = Contributions::new(backward, w, h, true);
    accumulate(exec, w, h, |y, acc_w, acc_u, acc_v| {
        fwd.accumulate_row(y, i_t, i_t1, acc_w, acc_u, acc_v);
        let forward_only: Vec<(f64, f64, f64)> = (0..w).map(|x| (acc_w[x], acc_u[x], acc_v[x])).collect();
        bwd.accumulate_row(y, i_t, i_t1, acc_w, acc_u, acc_v);
        Some(forward_only)
    })
}

/// Runs `row_fn` per row into zeroed accumulators and normalizes. When
/// `row_fn` returns a fallback (forward-only sums), pixels with zero total
/// weight use it.
fn accumulate<F>(exec: &Executor, w: usize, h: usize, row_fn: F) -> Result<FlowField>
where
    F: Fn(usize, &mut [f64], &mut [f64], &mut [f64]) -> Option<Vec<(f64, f64, f64)>> + Sync + Send,
{
    let mut out = FlowField::zeros(w, h);
    let (out_u, out_v) = out.components_mut();
    let uncovered = std::sync::atomic::AtomicUsize::new(usize::MAX);
    exec.rows(w, out_u, out_v, |y, row_u, row_v| {
        let mut acc_w = vec![0.0; w];
        let fallback = row_fn(y, &mut acc_w, row_u, row_v);
        for x in 0..w {
            let (mut z, mut su, mut sv) = (acc_w[x], row_u[x], row_v[x]);
            if z <= 0.0 {
                if let Some(fb) = &fallback {
                    (z, su, sv) = fb[x];
                }
            }
            if z > 0.0 {
                row_u[x] = su / z;
                row_v[x] = sv / z;
            } else {
                uncovered.fetch_min(y * w + x, std::sync::atomic::Ordering::Relaxed);
            }
        }
    });
    let first = uncovered.into_inner();
    if first != usize::MAX {
        return Err(FlowError::InvalidInput(format!(
            "pixel ({}, {}) is not covered by any patch",
            first % w,
            first / w
        )));
    }
    Ok(out)
}

/// `(patch index, weight)` of every forward patch covering pixel `(x, y)`,
/// in accumulation order.
pub fn pixel_weights(
    patches: &[PatchState],
    reference: &PyramidLevel,
    query: &PyramidLevel,
    x: usize,
    y: usize,
) -> Vec<(usize, f64)> {
    let (w, h) = reference.dims();
    patches
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let fp = footprint(p.origin(), p.size, (0.0, 0.0), w, h)?;
            if x < fp.x0 || x >= fp.x1 || y < fp.y0 || y >= fp.y1 {
                return None;
            }
            let (u, v) = p.displacement;
            let d = query.image.sample(x as f64 + u, y as f64 + v) - reference.image.get(x, y) - p.mean_offset;
            Some((i, residual_weight(d)))
        })
        .collect()
}
