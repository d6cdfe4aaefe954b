//! Accuracy metrics against the known imposed deformation.
//!
//! Displacement errors are absolute differences in pixels between the
//! matched and the analytically imposed displacement at each subset
//! center; statistics use the population standard deviation. Failed points
//! never enter the statistics but are counted and flagged when they exceed
//! five percent of the grid.

use serde::{Deserialize, Serialize};

use crate::dic::MatchResult;
use crate::error::{Error, Result};
use crate::fields::DeformationField;
use crate::strain::FieldGrid;

/// Share of failed points above which a run is flagged as unreliable.
pub const FAILURE_RATE_LIMIT: f64 = 0.05;

/// Displacement error at one converged point, in pixels.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PointError {
    pub center: (usize, usize),
    pub e_u: f64,
    pub e_v: f64,
    /// Euclidean combination `sqrt(e_u^2 + e_v^2)`.
    pub e_e: f64,
}

/// Mean, population standard deviation and extremes of one error sample.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean: f64,
    pub std: f64,
    pub max: f64,
    pub n: usize,
}

/// Summarizes a sample; errors on an empty one.
pub fn aggregate(values: &[f64]) -> Result<ErrorStats> {
    if values.is_empty() {
        return Err(Error::Empty("no values to aggregate".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let max = values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    Ok(ErrorStats { mean, std: var.sqrt(), max, n: values.len() })
}

/// Full-field displacement error summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldErrors {
    pub u: ErrorStats,
    pub v: ErrorStats,
    pub e: ErrorStats,
    pub n_points: usize,
    pub n_failed: usize,
    pub failure_rate: f64,
    /// More than [`FAILURE_RATE_LIMIT`] of the points failed.
    pub excessive_failures: bool,
}

/// Per-point errors against the imposed field; returns the converged
/// points' errors and the failed-point count.
pub fn point_errors(
    results: &[MatchResult],
    field: &dyn DeformationField,
    image_size: usize,
) -> Result<(Vec<PointError>, usize)> {
    let size = image_size as f64;
    let mut errors = Vec::with_capacity(results.len());
    let mut failed = 0usize;
    for r in results {
        if !r.status.is_converged() {
            failed += 1;
            continue;
        }
        let x = (r.center.0 as f64 + 0.5) / size;
        let y = (r.center.1 as f64 + 0.5) / size;
        let (tu, tv) = field.displacement(x, y)?;
        let e_u = (r.params.u - tu * size).abs();
        let e_v = (r.params.v - tv * size).abs();
        errors.push(PointError {
            center: r.center,
            e_u,
            e_v,
            e_e: (e_u * e_u + e_v * e_v).sqrt(),
        });
    }
    Ok((errors, failed))
}

/// Aggregated displacement errors for one full-field run.
pub fn field_errors(
    results: &[MatchResult],
    field: &dyn DeformationField,
    image_size: usize,
) -> Result<FieldErrors> {
    let (errors, failed) = point_errors(results, field, image_size)?;
    let eu: Vec<f64> = errors.iter().map(|e| e.e_u).collect();
    let ev: Vec<f64> = errors.iter().map(|e| e.e_v).collect();
    let ee: Vec<f64> = errors.iter().map(|e| e.e_e).collect();
    let n_points = results.len();
    let failure_rate = if n_points == 0 { 0.0 } else { failed as f64 / n_points as f64 };
    Ok(FieldErrors {
        u: aggregate(&eu)?,
        v: aggregate(&ev)?,
        e: aggregate(&ee)?,
        n_points,
        n_failed: failed,
        failure_rate,
        excessive_failures: failure_rate > FAILURE_RATE_LIMIT,
    })
}

/// Root-mean-square deviation of a strain grid from an analytic strain
/// component, evaluated at the node centers.
pub fn strain_rms_error(
    grid: &FieldGrid,
    image_size: usize,
    truth: impl Fn(f64, f64) -> Result<f64>,
) -> Result<f64> {
    let size = image_size as f64;
    let mut sum = 0.0;
    let mut n = 0usize;
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            let Some(v) = grid.get(ix, iy) else { continue };
            let (px, py) = grid.node_center(ix, iy);
            let t = truth((px as f64 + 0.5) / size, (py as f64 + 0.5) / size)?;
            sum += (v - t) * (v - t);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Empty("no valid strain nodes".into()));
    }
    Ok((sum / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dic::{MatchStatus, MeasurementGrid, ShapeParams};
    use crate::fields::rigid_translation;
    use approx::assert_abs_diff_eq;

    fn result_at(x: usize, y: usize, u: f64, v: f64, status: MatchStatus) -> MatchResult {
        MatchResult {
            center: (x, y),
            params: ShapeParams::translation(u, v),
            cc: 1.0,
            iterations: 1,
            status,
            fit_fallback: false,
        }
    }

    #[test]
    fn two_point_statistics() {
        let s = aggregate(&[0.02, 0.04]).unwrap();
        assert_abs_diff_eq!(s.mean, 0.03, epsilon = 1e-15);
        assert_abs_diff_eq!(s.std, 0.01, epsilon = 1e-15);
        assert_abs_diff_eq!(s.max, 0.04, epsilon = 1e-15);
        assert_eq!(s.n, 2);
    }

    #[test]
    fn permutation_invariance() {
        let a = aggregate(&[0.1, 0.5, 0.2, 0.9]).unwrap();
        let b = aggregate(&[0.9, 0.1, 0.2, 0.5]).unwrap();
        assert_abs_diff_eq!(a.mean, b.mean, epsilon = 1e-15);
        assert_abs_diff_eq!(a.std, b.std, epsilon = 1e-15);
    }

    #[test]
    fn errors_against_known_translation() {
        // imposed shift of 2 px at size 100
        let field = rigid_translation(0.02, 0.0);
        let results = vec![
            result_at(30, 30, 2.05, 0.0, MatchStatus::Converged),
            result_at(60, 60, 1.95, 0.1, MatchStatus::Converged),
        ];
        let fe = field_errors(&results, &field, 100).unwrap();
        assert_abs_diff_eq!(fe.u.mean, 0.05, epsilon = 1e-12);
        assert_abs_diff_eq!(fe.v.mean, 0.05, epsilon = 1e-12);
        assert_abs_diff_eq!(fe.e.max, (0.05f64.powi(2) + 0.1f64.powi(2)).sqrt(), epsilon = 1e-12);
        assert_eq!(fe.n_failed, 0);
        assert!(!fe.excessive_failures);
    }

    #[test]
    fn failed_points_are_excluded_and_flagged() {
        let field = rigid_translation(0.0, 0.0);
        let mut results: Vec<MatchResult> =
            (0..10).map(|i| result_at(20 + i, 20, 0.0, 0.0, MatchStatus::Converged)).collect();
        results[0].status = MatchStatus::OutOfSearchRange;
        results[0].params.u = 999.0; // must not pollute the stats
        let fe = field_errors(&results, &field, 100).unwrap();
        assert_eq!(fe.n_failed, 1);
        assert_abs_diff_eq!(fe.u.mean, 0.0, epsilon = 1e-12);
        assert!(fe.excessive_failures); // 10% > 5%
        assert_eq!(fe.u.n, 9);
    }

    #[test]
    fn empty_sample_rejected() {
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn strain_rms_against_constant_truth() {
        let grid = MeasurementGrid { origin: (10, 10), stride: 5, nx: 3, ny: 3, half: 2 };
        let mut fg = FieldGrid::new_like(&grid);
        for iy in 0..3 {
            for ix in 0..3 {
                fg.set(ix, iy, 1.5e-3);
            }
        }
        let rms = strain_rms_error(&fg, 100, |_, _| Ok(1.0e-3)).unwrap();
        assert_abs_diff_eq!(rms, 0.5e-3, epsilon = 1e-15);
    }
}
