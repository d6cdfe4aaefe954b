//! Strain reconstruction from matched displacement fields.
//!
//! Three routes produce the in-plane strains (ex, ey, gxy):
//!
//! - relabeling the Extended engine's displacement gradients at each point,
//! - central finite differences of the raw displacement grids,
//! - local mean smoothing of the displacements followed by the same
//!   differences.
//!
//! All grids share the measurement grid geometry; failed points carry an
//! invalid flag and are skipped by every operation.

use serde::{Deserialize, Serialize};

use crate::dic::{EngineKind, MatchResult, MeasurementGrid};
use crate::error::{Error, Result};

/// One scalar sampled on a measurement grid, with a per-node validity mask.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldGrid {
    pub origin: (usize, usize),
    pub stride: usize,
    pub nx: usize,
    pub ny: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl FieldGrid {
    pub fn new_like(grid: &MeasurementGrid) -> Self {
        FieldGrid {
            origin: grid.origin,
            stride: grid.stride,
            nx: grid.nx,
            ny: grid.ny,
            values: vec![0.0; grid.len()],
            valid: vec![false; grid.len()],
        }
    }

    fn idx(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix < self.nx && iy < self.ny);
        iy * self.nx + ix
    }

    pub fn get(&self, ix: usize, iy: usize) -> Option<f64> {
        let i = self.idx(ix, iy);
        self.valid[i].then(|| self.values[i])
    }

    pub fn set(&mut self, ix: usize, iy: usize, value: f64) {
        let i = self.idx(ix, iy);
        self.values[i] = value;
        self.valid[i] = true;
    }

    pub fn invalidate(&mut self, ix: usize, iy: usize) {
        let i = self.idx(ix, iy);
        self.valid[i] = false;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Pixel coordinates of a node center.
    pub fn node_center(&self, ix: usize, iy: usize) -> (usize, usize) {
        (self.origin.0 + ix * self.stride, self.origin.1 + iy * self.stride)
    }

    fn like_me(&self) -> FieldGrid {
        FieldGrid {
            origin: self.origin,
            stride: self.stride,
            nx: self.nx,
            ny: self.ny,
            values: vec![0.0; self.values.len()],
            valid: vec![false; self.values.len()],
        }
    }
}

fn check_results(grid: &MeasurementGrid, results: &[MatchResult]) -> Result<()> {
    if results.len() != grid.len() {
        return Err(Error::Dimension(format!(
            "{} results for a grid of {} points",
            results.len(),
            grid.len()
        )));
    }
    Ok(())
}

/// Extracts one per-result scalar into a grid, skipping failed points.
fn extract(
    grid: &MeasurementGrid,
    results: &[MatchResult],
    f: impl Fn(&MatchResult) -> f64,
) -> FieldGrid {
    let mut out = FieldGrid::new_like(grid);
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            let r = &results[iy * grid.nx + ix];
            if r.status.is_converged() {
                out.set(ix, iy, f(r));
            }
        }
    }
    out
}

/// Displacement component grids `(u, v)` in pixels.
pub fn displacement_grids(
    grid: &MeasurementGrid,
    results: &[MatchResult],
) -> Result<(FieldGrid, FieldGrid)> {
    check_results(grid, results)?;
    Ok((
        extract(grid, results, |r| r.params.u),
        extract(grid, results, |r| r.params.v),
    ))
}

/// Mean filter over the `(2 half + 1)^2` node neighborhood, truncated at
/// the grid edges; invalid nodes are left out of the mean. A node with no
/// valid neighbor stays invalid.
pub fn smooth(field: &FieldGrid, half: usize) -> FieldGrid {
    let mut out = field.like_me();
    for iy in 0..field.ny {
        for ix in 0..field.nx {
            let x0 = ix.saturating_sub(half);
            let x1 = (ix + half).min(field.nx - 1);
            let y0 = iy.saturating_sub(half);
            let y1 = (iy + half).min(field.ny - 1);
            let mut sum = 0.0;
            let mut n = 0usize;
            for jy in y0..=y1 {
                for jx in x0..=x1 {
                    if let Some(v) = field.get(jx, jy) {
                        sum += v;
                        n += 1;
                    }
                }
            }
            if n > 0 {
                out.set(ix, iy, sum / n as f64);
            }
        }
    }
    out
}

/// Partial derivatives of a grid, in units of the field per pixel.
///
/// Central differences where both neighbors are valid, one-sided at the
/// grid edges or next to an invalid node; nodes without a usable neighbor
/// pair become invalid.
pub fn differentiate(field: &FieldGrid) -> (FieldGrid, FieldGrid) {
    let h = field.stride as f64;
    let mut dx = field.like_me();
    let mut dy = field.like_me();
    let along = |get: &dyn Fn(isize) -> Option<f64>, i: isize| -> Option<f64> {
        let prev = get(i - 1);
        let next = get(i + 1);
        let here = get(i)?;
        match (prev, next) {
            (Some(p), Some(n)) => Some((n - p) / (2.0 * h)),
            (None, Some(n)) => Some((n - here) / h),
            (Some(p), None) => Some((here - p) / h),
            (None, None) => None,
        }
    };
    for iy in 0..field.ny {
        for ix in 0..field.nx {
            let row = |i: isize| -> Option<f64> {
                (0..field.nx as isize).contains(&i).then(|| field.get(i as usize, iy))?
            };
            let col = |j: isize| -> Option<f64> {
                (0..field.ny as isize).contains(&j).then(|| field.get(ix, j as usize))?
            };
            if let Some(d) = along(&row, ix as isize) {
                dx.set(ix, iy, d);
            }
            if let Some(d) = along(&col, iy as isize) {
                dy.set(ix, iy, d);
            }
        }
    }
    (dx, dy)
}

/// Per-node strain grids.
#[derive(Debug, Clone)]
pub struct StrainGrid {
    pub ex: FieldGrid,
    pub ey: FieldGrid,
    pub gxy: FieldGrid,
}

/// Strain reconstruction route.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrainMethod {
    /// Relabel the six-parameter model's gradients (Extended engine only).
    ShapeGradients,
    /// Finite differences of the raw displacement grids.
    PointwiseDifference,
    /// Mean-smooth the displacements, then finite differences.
    SmoothedDifference,
    /// Relabel the gradients, then mean-smooth each strain component
    /// (Extended engine only).
    SmoothedGradients,
}

/// Full smoothing window side in pixels used by
/// [`StrainMethod::SmoothedDifference`]: half the subset side, rounded up
/// to the next odd integer.
pub fn smoothing_window(subset_side: usize) -> usize {
    let w = subset_side.div_ceil(2);
    if w % 2 == 0 {
        w + 1
    } else {
        w
    }
}

fn strain_from_grads(
    ux: &FieldGrid,
    uy: &FieldGrid,
    vx: &FieldGrid,
    vy: &FieldGrid,
) -> StrainGrid {
    let mut ex = ux.like_me();
    let mut ey = ux.like_me();
    let mut gxy = ux.like_me();
    for iy in 0..ux.ny {
        for ix in 0..ux.nx {
            if let Some(v) = ux.get(ix, iy) {
                ex.set(ix, iy, v);
            }
            if let Some(v) = vy.get(ix, iy) {
                ey.set(ix, iy, v);
            }
            if let (Some(a), Some(b)) = (uy.get(ix, iy), vx.get(ix, iy)) {
                gxy.set(ix, iy, a + b);
            }
        }
    }
    StrainGrid { ex, ey, gxy }
}

/// Reconstructs the strain field from full-field match results.
///
/// `subset_side` sizes the smoothing window for the smoothed route; it is
/// ignored by the other two.
pub fn strain_field(
    grid: &MeasurementGrid,
    results: &[MatchResult],
    engine: EngineKind,
    method: StrainMethod,
    subset_side: usize,
) -> Result<StrainGrid> {
    check_results(grid, results)?;
    let filter_half_nodes = || {
        let half_px = smoothing_window(subset_side) / 2;
        (half_px as f64 / grid.stride as f64).round() as usize
    };
    match method {
        StrainMethod::ShapeGradients | StrainMethod::SmoothedGradients => {
            if engine != EngineKind::Extended {
                return Err(Error::Parameter(
                    "shape-gradient strains need the Extended engine's six-parameter results"
                        .into(),
                ));
            }
            let ux = extract(grid, results, |r| r.params.ux);
            let uy = extract(grid, results, |r| r.params.uy);
            let vx = extract(grid, results, |r| r.params.vx);
            let vy = extract(grid, results, |r| r.params.vy);
            let mut s = strain_from_grads(&ux, &uy, &vx, &vy);
            if method == StrainMethod::SmoothedGradients {
                let half = filter_half_nodes();
                s = StrainGrid {
                    ex: smooth(&s.ex, half),
                    ey: smooth(&s.ey, half),
                    gxy: smooth(&s.gxy, half),
                };
            }
            Ok(s)
        }
        StrainMethod::PointwiseDifference | StrainMethod::SmoothedDifference => {
            let (mut u, mut v) = displacement_grids(grid, results)?;
            if method == StrainMethod::SmoothedDifference {
                // pixel-sized filter mapped to whole grid nodes
                let half = filter_half_nodes();
                u = smooth(&u, half);
                v = smooth(&v, half);
            }
            let (ux, uy) = differentiate(&u);
            let (vx, vy) = differentiate(&v);
            Ok(strain_from_grads(&ux, &uy, &vx, &vy))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dic::{MatchStatus, ShapeParams};
    use approx::assert_abs_diff_eq;

    fn mk_grid(nx: usize, ny: usize, stride: usize) -> MeasurementGrid {
        MeasurementGrid { origin: (20, 20), stride, nx, ny, half: 10 }
    }

    fn fill(grid: &MeasurementGrid, f: impl Fn(f64, f64) -> f64) -> FieldGrid {
        let mut out = FieldGrid::new_like(grid);
        for iy in 0..grid.ny {
            for ix in 0..grid.nx {
                let (x, y) = out.node_center(ix, iy);
                out.set(ix, iy, f(x as f64, y as f64));
            }
        }
        out
    }

    #[test]
    fn smoothing_three_by_three_mean() {
        let grid = mk_grid(3, 3, 10);
        let mut field = FieldGrid::new_like(&grid);
        for (i, v) in [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0].iter().enumerate() {
            field.set(i % 3, i / 3, *v);
        }
        let s = smooth(&field, 1);
        assert_abs_diff_eq!(s.get(1, 1).unwrap(), 5.0, epsilon = 1e-12);
        // corner window truncates to the 2x2 block
        assert_abs_diff_eq!(s.get(0, 0).unwrap(), (1.0 + 2.0 + 4.0 + 5.0) / 4.0, epsilon = 1e-12);
    }

    #[test]
    fn smoothing_skips_invalid_nodes() {
        let grid = mk_grid(3, 1, 10);
        let mut field = FieldGrid::new_like(&grid);
        field.set(0, 0, 2.0);
        field.set(2, 0, 4.0);
        let s = smooth(&field, 1);
        assert_abs_diff_eq!(s.get(1, 0).unwrap(), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn linear_field_differentiated_exactly() {
        let grid = mk_grid(6, 5, 10);
        let field = fill(&grid, |x, y| 0.003 * x - 0.001 * y + 7.0);
        let (dx, dy) = differentiate(&field);
        for iy in 0..5 {
            for ix in 0..6 {
                assert_abs_diff_eq!(dx.get(ix, iy).unwrap(), 0.003, epsilon = 1e-12);
                assert_abs_diff_eq!(dy.get(ix, iy).unwrap(), -0.001, epsilon = 1e-12);
            }
        }
        // interior of a linear field survives smoothing untouched
        let s = smooth(&field, 1);
        let (x, y) = field.node_center(2, 2);
        assert_abs_diff_eq!(
            s.get(2, 2).unwrap(),
            0.003 * x as f64 - 0.001 * y as f64 + 7.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn quadratic_field_central_difference_exact_in_interior() {
        let grid = mk_grid(5, 5, 8);
        let field = fill(&grid, |x, _| 1e-4 * x * x);
        let (dx, _) = differentiate(&field);
        let (x, _) = field.node_center(2, 2);
        // central differences are exact for quadratics
        assert_abs_diff_eq!(dx.get(2, 2).unwrap(), 2e-4 * x as f64, epsilon = 1e-10);
    }

    fn synthetic_results(grid: &MeasurementGrid, p: ShapeParams) -> Vec<MatchResult> {
        grid.subsets()
            .iter()
            .map(|s| MatchResult {
                center: (s.x, s.y),
                params: p,
                cc: 1.0,
                iterations: 1,
                status: MatchStatus::Converged,
                fit_fallback: false,
            })
            .collect()
    }

    #[test]
    fn shape_gradient_relabeling() {
        let grid = mk_grid(4, 4, 10);
        let p = ShapeParams { u: 0.0, v: 0.0, ux: 1e-3, uy: 2e-3, vx: 3e-3, vy: -1e-3 };
        let results = synthetic_results(&grid, p);
        let s = strain_field(&grid, &results, EngineKind::Extended, StrainMethod::ShapeGradients, 21)
            .unwrap();
        assert_abs_diff_eq!(s.ex.get(1, 2).unwrap(), 1e-3, epsilon = 1e-15);
        assert_abs_diff_eq!(s.ey.get(1, 2).unwrap(), -1e-3, epsilon = 1e-15);
        assert_abs_diff_eq!(s.gxy.get(1, 2).unwrap(), 5e-3, epsilon = 1e-15);
    }

    #[test]
    fn shape_gradients_reject_basic_engine() {
        let grid = mk_grid(3, 3, 10);
        let results = synthetic_results(&grid, ShapeParams::default());
        assert!(strain_field(
            &grid,
            &results,
            EngineKind::Basic,
            StrainMethod::ShapeGradients,
            21
        )
        .is_err());
    }

    #[test]
    fn smoothing_window_rule() {
        assert_eq!(smoothing_window(21), 11);
        assert_eq!(smoothing_window(41), 21);
        assert_eq!(smoothing_window(20), 11);
        assert_eq!(smoothing_window(5), 3);
    }

    #[test]
    fn failed_points_propagate_as_invalid() {
        let grid = mk_grid(3, 3, 10);
        let mut results = synthetic_results(&grid, ShapeParams::translation(1.0, 0.0));
        results[4].status = MatchStatus::OutOfSearchRange;
        let (u, _) = displacement_grids(&grid, &results).unwrap();
        assert!(u.get(1, 1).is_none());
        assert_eq!(u.valid_count(), 8);
    }
}
