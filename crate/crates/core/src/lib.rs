//! Dense optical flow by fast inverse patch search.
//!
//! A flow computation builds image pyramids of both frames and, from the
//! coarsest processed level to the finest, aligns a grid of square patches
//! with inverse-compositional Gauss-Newton steps, blends the patch
//! displacements into a dense field weighted by photometric residuals, and
//! optionally refines that field with a robust variational energy. The
//! crate also provides a horizontal-only stereo mode, sparse
//! correspondences, flow composition, end-point-error evaluation, and
//! `.flo`/PGM/PPM file support.
//!
//! ```
//! use disflow::{dis_flow, DisParams, GrayImage, Preset};
//!
//! let a = GrayImage::from_fn(128, 64, |x, y| 128.0 + 60.0 * (0.1 * x as f64 + 0.07 * y as f64).sin());
//! let b = a.translated(1.5, -0.5);
//! let params = DisParams::preset(Preset::Fast).fit_to(128, 64)?;
//! let flow = dis_flow(&a, &b, &params)?;
//! assert_eq!(flow.dims(), (128, 64));
//! # Ok::<(), disflow::FlowError>(())
//! ```
//!
//! With the default `parallel` feature, `DisParams::threads` spreads the
//! patch loop and densification over a rayon pool; results are
//! bit-identical to the single-threaded run.

pub mod densification;
pub mod error;
pub mod eval;
mod exec;
pub mod flow;
pub mod image;
pub mod inverse_search;
pub mod io;
pub mod params;
pub mod pipeline;
pub mod pyramid;
pub mod synth;
pub mod variational;

pub use densification::{create_grid, densify, densify_bidirectional, init_patches, reset_outliers, PatchGrid};
pub use error::{FlowError, Result};
pub use eval::{endpoint_error, error_threshold_curve, EpeStats};
pub use flow::{upsample_flow, FlowField, UNKNOWN_FLOW, UNKNOWN_FLOW_THRESHOLD};
pub use image::{bilinear_sample, GrayImage};
pub use inverse_search::{optimize_patch, precompute_patch, PatchState, SearchSettings};
pub use io::{flow_to_color, read_flo, read_image, write_flo, write_pgm, write_ppm, RgbImage};
pub use params::{coarsest_scale_for, DisParams, Mode, Preset, ResidualNorm, VarParams};
pub use pipeline::{
    compose_flows, dis_flow, dis_flow_timed, dis_stereo, dis_stereo_timed, sparse_correspondences, FramePair,
    SparseMatch, StageTimings,
};
pub use pyramid::{build_pyramid, ImagePyramid, PyramidLevel};
pub use variational::{compute_tensors, refine, DataTensors};
