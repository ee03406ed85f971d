//! Coarse-to-fine orchestration: pyramids, per-scale patch search,
//! densification and variational refinement, plus stereo, sparse and
//! flow-composition entry points.

use std::time::{Duration, Instant};

use crate::densification::{create_grid, densify_bidirectional_with, densify_with, init_patches, reset_outliers};
use crate::error::{FlowError, Result};
use crate::exec::Executor;
use crate::flow::{upsample_flow, FlowField, UNKNOWN_FLOW, UNKNOWN_FLOW_THRESHOLD};
use crate::image::GrayImage;
use crate::inverse_search::{optimize_patch, precompute_patch, PatchState, SearchSettings};
use crate::params::{DisParams, Mode};
use crate::pyramid::{build_pyramid, ImagePyramid, PyramidLevel};
use crate::variational;

/// Wall-clock time spent in each stage of one flow computation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    /// Pyramid and gradient construction for both frames.
    pub preprocess: Duration,
    /// Patch precomputation and inverse search over all scales.
    pub patch_search: Duration,
    pub densification: Duration,
    pub variational: Duration,
    /// Final upsampling to input resolution.
    pub upsampling: Duration,
}

impl StageTimings {
    /// Everything after preprocessing.
    pub fn flow_total(&self) -> Duration {
        self.patch_search + self.densification + self.variational + self.upsampling
    }
}

/// Image pyramids of a frame pair, built once and reusable across runs
/// with the same scale range.
#[derive(Debug, Clone)]
pub struct FramePair {
    pub reference: ImagePyramid,
    pub query: ImagePyramid,
}

impl FramePair {
    pub fn new(i_t: &GrayImage, i_t1: &GrayImage, params: &DisParams) -> Result<Self> {
        params.validate()?;
        if i_t.dims() != i_t1.dims() {
            return Err(FlowError::DimensionMismatch {
                expected: i_t.dims(),
                actual: i_t1.dims(),
            });
        }
        let reference = build_pyramid(i_t, params.coarsest_scale, params.downscale)?;
        let query = build_pyramid(i_t1, params.coarsest_scale, params.downscale)?;
        for s in params.finest_scale..=params.coarsest_scale {
            let (w, h) = reference.level(s).dims();
            if w < params.patch_size || h < params.patch_size {
                return Err(FlowError::Dimensions(format!(
                    "level {s} is {w}x{h}, smaller than the {0}x{0} patch; lower the coarsest scale",
                    params.patch_size
                )));
            }
        }
        Ok(Self { reference, query })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.reference.level(0).dims()
    }
}

fn search_settings(params: &DisParams) -> SearchSettings {
    SearchSettings {
        iterations: params.iterations,
        residual_norm: params.residual_norm,
        mean_normalization: params.use_mean_normalization,
        mode: params.mode,
    }
}

/// Precomputes and optimizes one patch per center of `reference -> query`.
fn search_patches(
    exec: &Executor,
    reference: &PyramidLevel,
    query: &PyramidLevel,
    centers: &[(f64, f64)],
    inits: Vec<(f64, f64)>,
    params: &DisParams,
) -> Vec<PatchState> {
    let settings = search_settings(params);
    let jobs: Vec<((f64, f64), (f64, f64))> = centers.iter().copied().zip(inits).collect();
    let mut patches = exec.map(jobs, |(center, init)| {
        let mut patch = precompute_patch(reference, center, params.patch_size, &settings);
        patch.initialize(init);
        optimize_patch(patch, query, &settings)
    });
    reset_outliers(&mut patches, params.patch_size);
    patches
}

/// Dense flow `i_t -> i_t1` at input resolution.
pub fn dis_flow(i_t: &GrayImage, i_t1: &GrayImage, params: &DisParams) -> Result<FlowField> {
    dis_flow_timed(i_t, i_t1, params).map(|(flow, _)| flow)
}

/// [`dis_flow`] plus a per-stage timing breakdown.
pub fn dis_flow_timed(i_t: &GrayImage, i_t1: &GrayImage, params: &DisParams) -> Result<(FlowField, StageTimings)> {
    let start = Instant::now();
    let pair = FramePair::new(i_t, i_t1, params)?;
    let preprocess = start.elapsed();
    let (flow, mut timings) = flow_from_pair(&pair, params)?;
    timings.preprocess = preprocess;
    Ok((flow, timings))
}

/// Runs the coarse-to-fine loop on prebuilt pyramids. The returned timings
/// leave `preprocess` at zero.
pub fn flow_from_pair(pair: &FramePair, params: &DisParams) -> Result<(FlowField, StageTimings)> {
    params.validate()?;
    if pair.reference.coarsest() < params.coarsest_scale {
        return Err(FlowError::InvalidParams(format!(
            "pyramid has {} levels, parameters need {}",
            pair.reference.coarsest() + 1,
            params.coarsest_scale + 1
        )));
    }
    let mut timings = StageTimings::default();
    let exec = Executor::new(params.threads)?;
    let flow = coarse_to_fine(&exec, pair, params, params.variational.is_some(), &mut timings)?;

    let t = Instant::now();
    let flow = upsample_to(&flow, &pair.reference, params.finest_scale, params.downscale);
    timings.upsampling = t.elapsed();
    Ok((flow, timings))
}

/// Field at the finest processed scale `params.finest_scale`.
fn coarse_to_fine(
    exec: &Executor,
    pair: &FramePair,
    params: &DisParams,
    variational: bool,
    timings: &mut StageTimings,
) -> Result<FlowField> {
    let mut coarser: Option<FlowField> = None;
    for s in (params.finest_scale..=params.coarsest_scale).rev() {
        let (r, q) = (pair.reference.level(s), pair.query.level(s));
        let (w, h) = r.dims();

        let t = Instant::now();
        let grid = create_grid(w, h, params.patch_size, params.overlap)?;
        let inits = init_patches(&grid, coarser.as_ref(), params.downscale);
        let forward = search_patches(exec, r, q, &grid.centers, inits.clone(), params);
        let backward = if params.bidirectional {
            // the reverse field is approximated by the negated forward one
            let reversed = inits.iter().map(|&(u, v)| (-u, -v)).collect();
            Some(search_patches(exec, q, r, &grid.centers, reversed, params))
        } else {
            None
        };
        timings.patch_search += t.elapsed();

        let t = Instant::now();
        let mut flow = match &backward {
            Some(b) => densify_bidirectional_with(exec, &forward, b, r, q)?,
            None => densify_with(exec, &forward, r, q)?,
        };
        timings.densification += t.elapsed();

        if variational {
            if let Some(var) = &params.variational {
                let t = Instant::now();
                flow = variational::refine(&flow, r, q, var, s, params.mode)?;
                timings.variational += t.elapsed();
            }
        }
        coarser = Some(flow);
    }
    Ok(coarser.expect("scale range is non-empty"))
}

/// Upsamples a field at scale `from` one level at a time to level 0.
fn upsample_to(flow: &FlowField, pyramid: &ImagePyramid, from: usize, downscale: usize) -> FlowField {
    let mut out = flow.clone();
    for s in (0..from).rev() {
        let (w, h) = pyramid.level(s).dims();
        out = upsample_flow(&out, w, h, downscale);
    }
    out
}

/// Horizontal disparity between a rectified pair.
///
/// Positive disparity means the content appears shifted to the left in the
/// right image: a point at column `x` in `left` is found at
/// `x - disparity(x)` in `right`. The vertical component is exactly zero.
/// `params.mode` is forced to stereo; use [`DisParams::stereo_preset`] for
/// the halved iteration counts.
pub fn dis_stereo(left: &GrayImage, right: &GrayImage, params: &DisParams) -> Result<FlowField> {
    dis_stereo_timed(left, right, params).map(|(d, _)| d)
}

/// [`dis_stereo`] plus a per-stage timing breakdown.
pub fn dis_stereo_timed(left: &GrayImage, right: &GrayImage, params: &DisParams) -> Result<(FlowField, StageTimings)> {
    let mut p = params.clone();
    p.mode = Mode::Stereo;
    let (flow, timings) = dis_flow_timed(left, right, &p)?;
    Ok((flow.map(|u, _| (-u, 0.0)), timings))
}

/// Displacement estimate at one seed location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparseMatch {
    pub seed: (f64, f64),
    pub displacement: (f64, f64),
    /// False when the seed lies outside the image.
    pub valid: bool,
}

/// Displacements at `seeds` (full-resolution pixel coordinates), without
/// variational refinement.
///
/// With `params.use_densification` the dense multi-scale loop runs and
/// each seed reads the finest processed field. Without it, each seed keeps
/// its own patch at every scale, initialized from its result one scale
/// coarser.
pub fn sparse_correspondences(
    i_t: &GrayImage,
    i_t1: &GrayImage,
    seeds: &[(f64, f64)],
    params: &DisParams,
) -> Result<Vec<SparseMatch>> {
    let pair = FramePair::new(i_t, i_t1, params)?;
    let exec = Executor::new(params.threads)?;
    let (w, h) = pair.dims();
    let inside = |&(x, y): &(f64, f64)| x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64;
    let sd = params.downscale as f64;

    let displacements: Vec<(f64, f64)> = if params.use_densification {
        let mut timings = StageTimings::default();
        let flow = coarse_to_fine(&exec, &pair, params, false, &mut timings)?;
        let f = sd.powi(params.finest_scale as i32);
        seeds
            .iter()
            .map(|&(x, y)| {
                let (u, v) = flow.sample(x / f, y / f);
                (u * f, v * f)
            })
            .collect()
    } else {
        let mut u = vec![(0.0, 0.0); seeds.len()];
        for s in (params.finest_scale..=params.coarsest_scale).rev() {
            let level = pair.reference.level(s);
            let f = sd.powi(s as i32);
            let half = (params.patch_size / 2) as f64;
            let clamp = |c: f64, dim: usize| c.clamp(half, (dim - params.patch_size) as f64 + half);
            let centers: Vec<(f64, f64)> = seeds
                .iter()
                .map(|&(x, y)| (clamp(x / f, level.width()), clamp(y / f, level.height())))
                .collect();
            let inits = if s == params.coarsest_scale {
                u.clone()
            } else {
                u.iter().map(|&(a, b)| (a * sd, b * sd)).collect()
            };
            let patches = search_patches(&exec, level, pair.query.level(s), &centers, inits, params);
            u = patches.iter().map(|p| p.displacement).collect();
        }
        let f = sd.powi(params.finest_scale as i32);
        u.into_iter().map(|(a, b)| (a * f, b * f)).collect()
    };

    Ok(seeds
        .iter()
        .zip(displacements)
        .map(|(&seed, d)| {
            let valid = inside(&seed);
            SparseMatch {
                seed,
                displacement: if valid { d } else { (0.0, 0.0) },
                valid,
            }
        })
        .collect())
}

/// Chains `a -> b` and `b -> c` into `a -> c`:
/// `U_ac(x) = U_ab(x) + U_bc(x + U_ab(x))` with bilinear lookup.
///
/// Pixels where either leg is unknown are marked unknown.
pub fn compose_flows(ab: &FlowField, bc: &FlowField) -> Result<FlowField> {
    if ab.dims() != bc.dims() {
        return Err(FlowError::DimensionMismatch {
            expected: ab.dims(),
            actual: bc.dims(),
        });
    }
    let (w, h) = ab.dims();
    let mut out = FlowField::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = ab.get(x, y);
            let value = if ab.is_valid_at(x, y) {
                let (u2, v2) = bc.sample(x as f64 + u, y as f64 + v);
                if u2.abs() > UNKNOWN_FLOW_THRESHOLD || v2.abs() > UNKNOWN_FLOW_THRESHOLD {
                    (UNKNOWN_FLOW, UNKNOWN_FLOW)
                } else {
                    (u + u2, v + v2)
                }
            } else {
                (UNKNOWN_FLOW, UNKNOWN_FLOW)
            };
            out.set(x, y, value);
        }
    }
    Ok(out)
}
