//! The correlation engines.
//!
//! Two engines share the subset machinery and the ZNCC/ZNSSD criteria:
//!
//! - **Basic**: integer-pixel correlation search followed by a biparabolic
//!   least-squares fit of the 3x3 correlation neighborhood around the peak.
//!   Two unknowns (u, v); the subset is assumed to translate rigidly.
//! - **Extended**: Newton-Raphson maximization of the correlation over six
//!   shape parameters (u, v and the four displacement gradients), sampling
//!   the deformed image through the bicubic spline interpolant.
//!
//! The reference subset is always sampled at integer pixels of the raw
//! reference image; only the deformed image is interpolated.

mod basic;
mod criteria;
mod extended;
mod seed;

pub use basic::{basic_dic, full_field_basic, integer_search, IntegerPeak};
pub use criteria::{extract_subset, subset_stats, zncc, znssd};
pub use extended::{extended_dic, full_field_extended, NewtonOpts};
pub use seed::global_integer_seed;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::build_spline;
use crate::synth::GrayImage;

/// A `(2M+1) x (2M+1)` correlation window centered on a reference pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetSpec {
    /// Center column in the reference image.
    pub x: usize,
    /// Center row in the reference image.
    pub y: usize,
    /// Half-size `M`.
    pub half: usize,
}

impl SubsetSpec {
    pub fn new(x: usize, y: usize, half: usize) -> Self {
        SubsetSpec { x, y, half }
    }

    /// Full side length `2M + 1`.
    pub fn side(&self) -> usize {
        2 * self.half + 1
    }

    pub fn len(&self) -> usize {
        self.side() * self.side()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// The center must be at least `M` pixels from every border.
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.x < self.half
            || self.y < self.half
            || self.x + self.half >= width
            || self.y + self.half >= height
        {
            return Err(Error::Parameter(format!(
                "subset at ({}, {}) with half-size {} leaves a {width}x{height} image",
                self.x, self.y, self.half
            )));
        }
        Ok(())
    }
}

/// The six unknowns of the first-order subset deformation model.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ShapeParams {
    pub u: f64,
    pub v: f64,
    pub ux: f64,
    pub uy: f64,
    pub vx: f64,
    pub vy: f64,
}

impl ShapeParams {
    pub fn translation(u: f64, v: f64) -> Self {
        ShapeParams { u, v, ..Default::default() }
    }

    pub fn as_array(&self) -> [f64; 6] {
        [self.u, self.v, self.ux, self.uy, self.vx, self.vy]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        ShapeParams { u: a[0], v: a[1], ux: a[2], uy: a[3], vx: a[4], vy: a[5] }
    }

    /// Largest displacement-gradient magnitude; used for the
    /// small-deformation sanity bound.
    pub fn max_gradient(&self) -> f64 {
        self.ux.abs().max(self.uy.abs()).max(self.vx.abs()).max(self.vy.abs())
    }
}

/// Termination state of one subset match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchStatus {
    Converged,
    MaxIterations,
    DegenerateSubset,
    OutOfSearchRange,
}

impl MatchStatus {
    pub fn is_converged(self) -> bool {
        self == MatchStatus::Converged
    }
}

/// Per-point output of either engine.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MatchResult {
    /// Subset center in the reference image.
    pub center: (usize, usize),
    pub params: ShapeParams,
    /// Final ZNCC value (1 = perfect match).
    pub cc: f64,
    pub iterations: usize,
    pub status: MatchStatus,
    /// Basic engine only: the biparabolic surface was rejected and the
    /// integer peak was reported instead.
    pub fit_fallback: bool,
}

/// Minimum recommended subset side for a speckle geometry:
/// `ss_min = image_size * (2 r_a - r_d)`, rounded up to the next odd
/// integer. Valid for comparable spacing and diameter (`r_a ~ r_d`); use
/// [`speckle_ratios_comparable`] to decide whether to warn.
pub fn min_subset_size(image_size: usize, r_a: f64, r_d: f64) -> Result<usize> {
    let raw = image_size as f64 * (2.0 * r_a - r_d);
    if raw <= 0.0 {
        return Err(Error::Parameter(format!(
            "non-positive minimum subset size for image_size={image_size}, r_a={r_a}, r_d={r_d}"
        )));
    }
    let mut ss = raw.ceil() as usize;
    if ss % 2 == 0 {
        ss += 1;
    }
    Ok(ss)
}

/// True when the spacing/diameter ratio is close enough for the
/// minimum-subset-size rule to apply.
pub fn speckle_ratios_comparable(r_a: f64, r_d: f64) -> bool {
    (r_a - r_d).abs() <= 0.5 * r_a.max(r_d)
}

/// Row-major measurement grid with a uniform stride.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasurementGrid {
    pub origin: (usize, usize),
    pub stride: usize,
    pub nx: usize,
    pub ny: usize,
    pub half: usize,
}

impl MeasurementGrid {
    /// Lays out the densest stride-aligned grid whose subsets keep
    /// `half + margin` pixels from every border.
    pub fn build(
        width: usize,
        height: usize,
        half: usize,
        stride: usize,
        margin: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Parameter("grid stride must be >= 1".into()));
        }
        let lo = half + margin;
        let hi_x = width.checked_sub(lo + 1).ok_or_else(|| {
            Error::Dimension(format!("image {width}x{height} too small for half {half}"))
        })?;
        let hi_y = height
            .checked_sub(lo + 1)
            .ok_or_else(|| Error::Dimension("image too small".into()))?;
        if hi_x < lo || hi_y < lo {
            return Err(Error::Dimension(format!(
                "no room for a grid: image {width}x{height}, half {half}, margin {margin}"
            )));
        }
        let nx = (hi_x - lo) / stride + 1;
        let ny = (hi_y - lo) / stride + 1;
        Ok(MeasurementGrid { origin: (lo, lo), stride, nx, ny, half })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn subset(&self, ix: usize, iy: usize) -> SubsetSpec {
        SubsetSpec::new(
            self.origin.0 + ix * self.stride,
            self.origin.1 + iy * self.stride,
            self.half,
        )
    }

    /// All subsets in row-major scanline order.
    pub fn subsets(&self) -> Vec<SubsetSpec> {
        let mut out = Vec::with_capacity(self.len());
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                out.push(self.subset(ix, iy));
            }
        }
        out
    }
}

/// Engine selector for [`full_field`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    Basic,
    Extended,
}

/// Runs one engine over a measurement grid.
///
/// The Basic engine treats points independently. The Extended engine seeds
/// its first point by pixel-level cross-correlation over the whole feasible
/// range and warm-starts every later point from its nearest
/// already-processed neighbor (left neighbor in the row, else the head of
/// the previous row). Failed points are reported with their status, never
/// dropped.
pub fn full_field(
    reference: &GrayImage,
    deformed: &GrayImage,
    grid: &MeasurementGrid,
    engine: EngineKind,
    search_radius: usize,
    opts: &NewtonOpts,
) -> Result<Vec<MatchResult>> {
    match engine {
        EngineKind::Basic => full_field_basic(reference, deformed, grid, search_radius),
        EngineKind::Extended => {
            let spline = build_spline(deformed)?;
            full_field_extended(reference, deformed, &spline, grid, opts)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subset_size_rule() {
        assert_eq!(min_subset_size(2000, 0.01, 0.01).unwrap(), 21);
        assert_eq!(min_subset_size(500, 0.01, 0.01).unwrap(), 5);
        // r_a = r_d collapses to image_size * r_a
        assert_eq!(min_subset_size(1000, 0.01, 0.01).unwrap(), 11);
        assert!(min_subset_size(100, 0.01, 0.05).is_err());
        assert!(speckle_ratios_comparable(0.01, 0.012));
        assert!(!speckle_ratios_comparable(0.01, 0.03));
    }

    #[test]
    fn subset_margin_rule() {
        let s = SubsetSpec::new(10, 10, 10);
        assert!(s.validate(100, 100).is_ok());
        assert!(s.validate(21, 100).is_ok()); // fits exactly
        assert!(s.validate(20, 100).is_err());
        assert!(SubsetSpec::new(5, 50, 10).validate(100, 100).is_err());
        assert_eq!(SubsetSpec::new(10, 10, 10).side(), 21);
    }

    #[test]
    fn grid_respects_margins() {
        let g = MeasurementGrid::build(500, 500, 10, 25, 5).unwrap();
        for s in g.subsets() {
            assert!(s.x >= 15 && s.y >= 15);
            assert!(s.x + 15 < 500 && s.y + 15 < 500);
            s.validate(500, 500).unwrap();
        }
        assert_eq!(g.len(), g.nx * g.ny);
        assert!(g.len() > 300);
    }
}
