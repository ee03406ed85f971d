//! End-point-error statistics, bucketed by ground-truth motion magnitude.

use crate::error::{FlowError, Result};
use crate::flow::FlowField;

/// Upper edges of the small and medium motion buckets, in pixels.
pub const BUCKET_EDGES: [f64; 2] = [10.0, 40.0];

/// Mean end-point errors over all valid pixels and per motion bucket.
///
/// Buckets are `[0, 10)`, `[10, 40)` and `[40, inf)` on the ground-truth
/// magnitude. Empty buckets report a mean of 0.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EpeStats {
    pub epe_all: f64,
    pub epe_s0_10: f64,
    pub epe_s10_40: f64,
    pub epe_s40: f64,
    pub count_s0_10: usize,
    pub count_s10_40: usize,
    pub count_s40: usize,
    pub valid_pixel_count: usize,
}

/// Bucket index (0, 1 or 2) of a ground-truth magnitude.
pub fn bucket_of(magnitude: f64) -> usize {
    BUCKET_EDGES.iter().filter(|&&e| magnitude >= e).count()
}

/// Per-pixel end-point errors at valid pixels, paired with the
/// ground-truth magnitude.
///
/// A pixel is valid when the mask (if given) is true there and neither
/// field holds the unknown-flow sentinel or a non-finite value.
pub fn endpoint_errors(gt: &FlowField, est: &FlowField, mask: Option<&[bool]>) -> Result<Vec<(f64, f64)>> {
    if gt.dims() != est.dims() {
        return Err(FlowError::DimensionMismatch {
            expected: gt.dims(),
            actual: est.dims(),
        });
    }
    let (w, h) = gt.dims();
    if let Some(m) = mask {
        if m.len() != w * h {
            return Err(FlowError::InvalidInput(format!(
                "validity mask has {} entries for {w}x{h} fields",
                m.len()
            )));
        }
    }
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            if mask.is_some_and(|m| !m[y * w + x]) || !gt.is_valid_at(x, y) || !est.is_valid_at(x, y) {
                continue;
            }
            let (gu, gv) = gt.get(x, y);
            let (eu, ev) = est.get(x, y);
            out.push(((gu - eu).hypot(gv - ev), gu.hypot(gv)));
        }
    }
    Ok(out)
}

/// Bucketed mean end-point error of `est` against `gt`.
pub fn endpoint_error(gt: &FlowField, est: &FlowField, mask: Option<&[bool]>) -> Result<EpeStats> {
    let errors = endpoint_errors(gt, est, mask)?;
    let mut sums = [0.0; 3];
    let mut counts = [0usize; 3];
    for &(e, mag) in &errors {
        let b = bucket_of(mag);
        sums[b] += e;
        counts[b] += 1;
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    let total: usize = counts.iter().sum();
    Ok(EpeStats {
        epe_all: mean(sums.iter().sum(), total),
        epe_s0_10: mean(sums[0], counts[0]),
        epe_s10_40: mean(sums[1], counts[1]),
        epe_s40: mean(sums[2], counts[2]),
        count_s0_10: counts[0],
        count_s10_40: counts[1],
        count_s40: counts[2],
        valid_pixel_count: total,
    })
}

/// Fraction of errors strictly above each threshold.
pub fn error_threshold_curve(errors: &[f64], thresholds: &[f64]) -> Result<Vec<f64>> {
    if errors.is_empty() {
        return Err(FlowError::InvalidInput("no errors to evaluate".into()));
    }
    if thresholds.windows(2).any(|p| p[0] > p[1]) || thresholds.iter().any(|t| t.is_nan()) {
        return Err(FlowError::InvalidInput("thresholds must be sorted ascending".into()));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&t| {
            let at_or_below = sorted.partition_point(|&e| e <= t);
            (sorted.len() - at_or_below) as f64 / n
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::UNKNOWN_FLOW;
    use proptest::prelude::*;

    #[test]
    fn perfect_estimate() {
        let f = FlowField::from_fn(6, 5, |x, y| (x as f64 * 7.0, -(y as f64) * 9.0));
        let s = endpoint_error(&f, &f, None).unwrap();
        assert_eq!(s.epe_all, 0.0);
        assert_eq!(s.valid_pixel_count, 30);
        assert_eq!(s.count_s0_10 + s.count_s10_40 + s.count_s40, 30);
    }

    #[test]
    fn three_four_five() {
        let s = endpoint_error(&FlowField::zeros(4, 4), &FlowField::constant(4, 4, 3.0, 4.0), None).unwrap();
        assert_eq!(s.epe_all, 5.0);
        assert_eq!(s.count_s0_10, 16);
        assert_eq!(s.epe_s0_10, 5.0);
    }

    #[test]
    fn large_motion_bucket() {
        let s = endpoint_error(&FlowField::constant(3, 3, 50.0, 0.0), &FlowField::zeros(3, 3), None).unwrap();
        assert_eq!(s.epe_all, 50.0);
        assert_eq!(s.count_s40, 9);
        assert_eq!(s.epe_s40, 50.0);
    }

    #[test]
    fn bucket_edges_are_half_open() {
        assert_eq!(bucket_of(9.999), 0);
        assert_eq!(bucket_of(10.0), 1);
        assert_eq!(bucket_of(39.999), 1);
        assert_eq!(bucket_of(40.0), 2);
    }

    #[test]
    fn sentinel_and_mask_excluded() {
        let mut gt = FlowField::zeros(2, 2);
        gt.set(0, 0, (UNKNOWN_FLOW, UNKNOWN_FLOW));
        let est = FlowField::constant(2, 2, 1.0, 0.0);
        let mask = [true, true, true, false];
        let s = endpoint_error(&gt, &est, Some(&mask)).unwrap();
        assert_eq!(s.valid_pixel_count, 2);
        assert_eq!(s.epe_all, 1.0);
    }

    #[test]
    fn mismatch_rejected() {
        assert!(endpoint_error(&FlowField::zeros(2, 2), &FlowField::zeros(2, 3), None).is_err());
        assert!(endpoint_error(&FlowField::zeros(2, 2), &FlowField::zeros(2, 2), Some(&[true])).is_err());
    }

    #[test]
    fn curve_examples() {
        assert_eq!(error_threshold_curve(&[0.0; 5], &[0.5, 1.0]).unwrap(), vec![0.0, 0.0]);
        let c = error_threshold_curve(&[1.0, 3.0, 5.0], &[2.0, 4.0]).unwrap();
        assert!((c[0] - 2.0 / 3.0).abs() < 1e-15 && (c[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(error_threshold_curve(&[0.1, 2.0], &[0.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn curve_errors() {
        assert!(error_threshold_curve(&[], &[1.0]).is_err());
        assert!(error_threshold_curve(&[1.0], &[2.0, 1.0]).is_err());
    }

    fn field(w: usize, h: usize) -> impl Strategy<Value = (FlowField, FlowField)> {
        let n = w * h;
        (
            proptest::collection::vec((-60.0..60.0f64, -60.0..60.0f64), n),
            proptest::collection::vec((-60.0..60.0f64, -60.0..60.0f64), n),
        )
            .prop_map(move |(a, b)| {
                let mk = |p: Vec<(f64, f64)>| {
                    let (u, v) = p.into_iter().unzip();
                    FlowField::new(w, h, u, v).unwrap()
                };
                (mk(a), mk(b))
            })
    }

    proptest! {
        #[test]
        fn epe_all_is_weighted_bucket_mean((gt, est) in field(5, 4)) {
            let s = endpoint_error(&gt, &est, None).unwrap();
            prop_assert_eq!(s.count_s0_10 + s.count_s10_40 + s.count_s40, s.valid_pixel_count);
            let weighted = (s.epe_s0_10 * s.count_s0_10 as f64
                + s.epe_s10_40 * s.count_s10_40 as f64
                + s.epe_s40 * s.count_s40 as f64)
                / s.valid_pixel_count as f64;
            prop_assert!((weighted - s.epe_all).abs() < 1e-6);
            prop_assert!(s.epe_s0_10 >= 0.0 && s.epe_s10_40 >= 0.0 && s.epe_s40 >= 0.0);
            let r = endpoint_error(&est, &gt, None).unwrap();
            prop_assert!((r.epe_all - s.epe_all).abs() < 1e-9);
        }

        #[test]
        fn curve_is_monotone_and_bounded(
            errors in proptest::collection::vec(0.0..20.0f64, 1..50),
            mut thresholds in proptest::collection::vec(0.0..25.0f64, 0..10),
        ) {
            thresholds.sort_by(f64::total_cmp);
            let c = error_threshold_curve(&errors, &thresholds).unwrap();
            prop_assert!(c.iter().all(|&f| (0.0..=1.0).contains(&f)));
            prop_assert!(c.windows(2).all(|p| p[0] >= p[1]));
        }
    }
}
