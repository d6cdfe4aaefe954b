//! Basic engine: integer correlation search plus biparabolic subpixel
//! peak fit.
//!
//! The full-field path batches work by search offset: for each candidate
//! offset one product integral image is built, after which every subset's
//! correlation value is four table lookups. The per-point cost is then
//! independent of the subset size, and all sums are exact (integer-valued
//! f64 arithmetic below 2^53).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::synth::GrayImage;

use super::criteria::{extract_subset, subset_stats, DEGENERATE_EPS};
use super::{MatchResult, MatchStatus, MeasurementGrid, ShapeParams, SubsetSpec};

/// Integer-pixel search result: the peak offset and the 3x3 correlation
/// neighborhood used for the subpixel fit.
#[derive(Debug, Clone, Copy)]
pub struct IntegerPeak {
    pub du: i64,
    pub dv: i64,
    pub cc: f64,
    /// `cc_map[j][i]` is the correlation at offset `(du + i - 1, dv + j - 1)`.
    pub cc_map: [[f64; 3]; 3],
}

/// Summed-area table over an f64-valued pixel function.
struct Integral {
    width: usize,
    data: Vec<f64>,
}

impl Integral {
    fn build<F: Fn(usize, usize) -> f64>(width: usize, height: usize, f: F) -> Self {
        let w1 = width + 1;
        let mut data = vec![0.0f64; w1 * (height + 1)];
        for y in 0..height {
            let mut row_sum = 0.0;
            for x in 0..width {
                row_sum += f(x, y);
                data[(y + 1) * w1 + x + 1] = data[y * w1 + x + 1] + row_sum;
            }
        }
        Integral { width: w1, data }
    }

    /// Sum over the inclusive pixel rectangle `[x0..=x1] x [y0..=y1]`.
    #[inline]
    fn rect(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        let w = self.width;
        self.data[(y1 + 1) * w + x1 + 1] + self.data[y0 * w + x0]
            - self.data[y0 * w + x1 + 1]
            - self.data[(y1 + 1) * w + x0]
    }
}

fn window_feasible(
    subset: &SubsetSpec,
    radius: usize,
    width: usize,
    height: usize,
) -> Result<()> {
    let reach = subset.half + radius;
    if subset.x < reach
        || subset.y < reach
        || subset.x + reach >= width
        || subset.y + reach >= height
    {
        return Err(Error::Parameter(format!(
            "search window of radius {radius} around ({}, {}) leaves the {width}x{height} image",
            subset.x, subset.y
        )));
    }
    Ok(())
}

/// Candidate offsets in tie-break priority order: smallest `|du| + |dv|`
/// first, then lexicographic `(du, dv)`.
fn ordered_offsets(radius: i64) -> Vec<(i64, i64)> {
    let mut offs: Vec<(i64, i64)> = (-radius..=radius)
        .flat_map(|du| (-radius..=radius).map(move |dv| (du, dv)))
        .collect();
    offs.sort_by_key(|&(du, dv)| (du.abs() + dv.abs(), du, dv));
    offs
}

/// Finds the integer offset maximizing ZNCC over the search window.
pub fn integer_search(
    reference: &GrayImage,
    deformed: &GrayImage,
    subset: &SubsetSpec,
    search_radius: usize,
) -> Result<IntegerPeak> {
    subset.validate(reference.width(), reference.height())?;
    window_feasible(subset, search_radius, deformed.width(), deformed.height())?;
    let f = extract_subset(reference, subset)?;
    let (fm, df) = subset_stats(&f)?;

    let r = search_radius as i64;
    let side = (2 * r + 1) as usize;
    let mut window = vec![f64::NAN; side * side];
    let mut any_valid = false;
    for dv in -r..=r {
        for du in -r..=r {
            let shifted = SubsetSpec::new(
                (subset.x as i64 + du) as usize,
                (subset.y as i64 + dv) as usize,
                subset.half,
            );
            let g = extract_subset(deformed, &shifted)?;
            let cc = match subset_stats(&g) {
                Ok((gm, dg)) => {
                    let num: f64 =
                        f.iter().zip(&g).map(|(&a, &b)| (a - fm) * (b - gm)).sum();
                    any_valid = true;
                    num / (df * dg)
                }
                Err(Error::DegenerateSubset) => f64::NAN,
                Err(e) => return Err(e),
            };
            window[(dv + r) as usize * side + (du + r) as usize] = cc;
        }
    }
    if !any_valid {
        return Err(Error::DegenerateSubset);
    }
    peak_from_window(&window, r)
}

fn peak_from_window(window: &[f64], r: i64) -> Result<IntegerPeak> {
    let side = (2 * r + 1) as usize;
    let at = |du: i64, dv: i64| window[(dv + r) as usize * side + (du + r) as usize];
    let mut best: Option<(i64, i64, f64)> = None;
    for &(du, dv) in &ordered_offsets(r) {
        let cc = at(du, dv);
        if cc.is_nan() {
            continue;
        }
        // offsets visit in tie-break order, so strict improvement keeps
        // the preferred candidate on exact ties
        if best.map_or(true, |(_, _, b)| cc > b) {
            best = Some((du, dv, cc));
        }
    }
    let (du, dv, cc) = best.ok_or(Error::DegenerateSubset)?;
    if du.abs() == r || dv.abs() == r {
        return Err(Error::OutOfSearchRange);
    }
    let mut cc_map = [[0.0f64; 3]; 3];
    for (j, row) in cc_map.iter_mut().enumerate() {
        for (i, v) in row.iter_mut().enumerate() {
            *v = at(du + i as i64 - 1, dv + j as i64 - 1);
        }
    }
    Ok(IntegerPeak { du, dv, cc, cc_map })
}

/// Least-squares biquadratic surface through the 3x3 correlation stencil,
/// solved in closed form on the centered orthogonal basis
/// `{1, dx, dy, dx^2 - 2/3, dy^2 - 2/3, dx dy}`.
///
/// Returns the stationary point and the fitted peak value when the surface
/// is concave and the stationary point lies strictly inside `(-1, 1)^2`.
pub(super) fn biparabolic_fit(cc_map: &[[f64; 3]; 3]) -> Option<(f64, f64, f64)> {
    let mut s = 0.0;
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (j, row) in cc_map.iter().enumerate() {
        let dy = j as f64 - 1.0;
        for (i, &c) in row.iter().enumerate() {
            if !c.is_finite() {
                return None;
            }
            let dx = i as f64 - 1.0;
            s += c;
            sx += c * dx;
            sy += c * dy;
            sxx += c * dx * dx;
            syy += c * dy * dy;
            sxy += c * dx * dy;
        }
    }
    let b0 = s / 9.0;
    let a1 = sx / 6.0;
    let a2 = sy / 6.0;
    let a3 = (sxx - 2.0 / 3.0 * s) / 2.0;
    let a4 = (syy - 2.0 / 3.0 * s) / 2.0;
    let a5 = sxy / 4.0;
    let det = 4.0 * a3 * a4 - a5 * a5;
    if !(a3 < 0.0 && det > 0.0) {
        return None; // not a concave surface
    }
    let dx = (-2.0 * a4 * a1 + a5 * a2) / det;
    let dy = (-2.0 * a3 * a2 + a5 * a1) / det;
    if dx.abs() >= 1.0 || dy.abs() >= 1.0 {
        return None;
    }
    let peak = b0
        + a1 * dx
        + a2 * dy
        + a3 * (dx * dx - 2.0 / 3.0)
        + a4 * (dy * dy - 2.0 / 3.0)
        + a5 * dx * dy;
    Some((dx, dy, peak))
}

fn result_from_peak(subset: &SubsetSpec, peak: &IntegerPeak) -> MatchResult {
    match biparabolic_fit(&peak.cc_map) {
        Some((sx, sy, fitted_cc)) => MatchResult {
            center: (subset.x, subset.y),
            params: ShapeParams::translation(peak.du as f64 + sx, peak.dv as f64 + sy),
            cc: fitted_cc,
            iterations: 0,
            status: MatchStatus::Converged,
            fit_fallback: false,
        },
        None => MatchResult {
            center: (subset.x, subset.y),
            params: ShapeParams::translation(peak.du as f64, peak.dv as f64),
            cc: peak.cc,
            iterations: 0,
            status: MatchStatus::Converged,
            fit_fallback: true,
        },
    }
}

fn failure(subset: &SubsetSpec, status: MatchStatus) -> MatchResult {
    MatchResult {
        center: (subset.x, subset.y),
        params: ShapeParams::default(),
        cc: f64::NAN,
        iterations: 0,
        status,
        fit_fallback: false,
    }
}

/// Basic DIC at a single point.
pub fn basic_dic(
    reference: &GrayImage,
    deformed: &GrayImage,
    subset: &SubsetSpec,
    search_radius: usize,
) -> Result<MatchResult> {
    match integer_search(reference, deformed, subset, search_radius) {
        Ok(peak) => Ok(result_from_peak(subset, &peak)),
        Err(Error::DegenerateSubset) => Ok(failure(subset, MatchStatus::DegenerateSubset)),
        Err(Error::OutOfSearchRange) => Ok(failure(subset, MatchStatus::OutOfSearchRange)),
        Err(e) => Err(e),
    }
}

/// Basic DIC over a whole grid, batched by search offset.
pub fn full_field_basic(
    reference: &GrayImage,
    deformed: &GrayImage,
    grid: &MeasurementGrid,
    search_radius: usize,
) -> Result<Vec<MatchResult>> {
    let subsets = grid.subsets();
    for s in &subsets {
        s.validate(reference.width(), reference.height())?;
        window_feasible(s, search_radius, deformed.width(), deformed.height())?;
    }
    let (w, h) = (reference.width(), reference.height());
    let n_px = (grid.half * 2 + 1).pow(2) as f64;
    let sf = Integral::build(w, h, |x, y| reference.get(x, y) as f64);
    let sf2 = Integral::build(w, h, |x, y| {
        let v = reference.get(x, y) as f64;
        v * v
    });
    let sg = Integral::build(w, h, |x, y| deformed.get(x, y) as f64);
    let sg2 = Integral::build(w, h, |x, y| {
        let v = deformed.get(x, y) as f64;
        v * v
    });

    // per-point reference statistics
    let m = grid.half;
    let f_stats: Vec<Option<(f64, f64)>> = subsets
        .iter()
        .map(|s| {
            let sum = sf.rect(s.x - m, s.y - m, s.x + m, s.y + m);
            let sum2 = sf2.rect(s.x - m, s.y - m, s.x + m, s.y + m);
            let var = sum2 - sum * sum / n_px;
            (var.sqrt() > DEGENERATE_EPS).then(|| (sum, var.sqrt()))
        })
        .collect();

    let r = search_radius as i64;
    let side = (2 * r + 1) as usize;
    let offsets: Vec<(i64, i64)> = (-r..=r)
        .flat_map(|dv| (-r..=r).map(move |du| (du, dv)))
        .collect();

    // one product integral per offset, then O(1) per point
    let columns: Vec<Vec<f64>> = offsets
        .par_iter()
        .map(|&(du, dv)| {
            let prod = Integral::build(w, h, |x, y| {
                let gx = x as i64 + du;
                let gy = y as i64 + dv;
                if gx < 0 || gy < 0 || gx >= w as i64 || gy >= h as i64 {
                    0.0
                } else {
                    reference.get(x, y) as f64 * deformed.get(gx as usize, gy as usize) as f64
                }
            });
            subsets
                .iter()
                .zip(&f_stats)
                .map(|(s, fs)| {
                    let Some((f_sum, df)) = fs else { return f64::NAN };
                    let (x0, y0) = (s.x - m, s.y - m);
                    let (x1, y1) = (s.x + m, s.y + m);
                    let gx0 = (x0 as i64 + du) as usize;
                    let gy0 = (y0 as i64 + dv) as usize;
                    let gx1 = (x1 as i64 + du) as usize;
                    let gy1 = (y1 as i64 + dv) as usize;
                    let g_sum = sg.rect(gx0, gy0, gx1, gy1);
                    let g_sum2 = sg2.rect(gx0, gy0, gx1, gy1);
                    let g_var = g_sum2 - g_sum * g_sum / n_px;
                    let dg = g_var.sqrt();
                    if !(dg > DEGENERATE_EPS) {
                        return f64::NAN;
                    }
                    let fg = prod.rect(x0, y0, x1, y1);
                    (fg - f_sum * g_sum / n_px) / (df * dg)
                })
                .collect()
        })
        .collect();

    let results = subsets
        .iter()
        .enumerate()
        .map(|(pi, s)| {
            if f_stats[pi].is_none() {
                return failure(s, MatchStatus::DegenerateSubset);
            }
            let mut window = vec![f64::NAN; side * side];
            for (oi, &(du, dv)) in offsets.iter().enumerate() {
                window[(dv + r) as usize * side + (du + r) as usize] = columns[oi][pi];
            }
            match peak_from_window(&window, r) {
                Ok(peak) => result_from_peak(s, &peak),
                Err(Error::DegenerateSubset) => failure(s, MatchStatus::DegenerateSubset),
                Err(Error::OutOfSearchRange) => failure(s, MatchStatus::OutOfSearchRange),
                Err(_) => failure(s, MatchStatus::OutOfSearchRange),
            }
        })
        .collect();
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::rigid_translation;
    use crate::synth::{generate_speckles, make_image_pair, rasterize, SpeckleSpec};
    use approx::assert_abs_diff_eq;

    fn speckle_pair(shift_px: f64, size: usize, seed: u64) -> (GrayImage, GrayImage) {
        let spec = SpeckleSpec { r_d: 0.04, r_a: 0.04, seed };
        let field = rigid_translation(shift_px / size as f64, 0.0);
        make_image_pair(&spec, &field, size).unwrap()
    }

    #[test]
    fn identity_peak_is_centered() {
        let spec = SpeckleSpec { r_d: 0.05, r_a: 0.05, seed: 5 };
        let f = generate_speckles(&spec).unwrap();
        let img = rasterize(&f, None, 128).unwrap();
        let subset = SubsetSpec::new(64, 64, 10);
        let peak = integer_search(&img, &img, &subset, 5).unwrap();
        assert_eq!((peak.du, peak.dv), (0, 0));
        assert_abs_diff_eq!(peak.cc, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn integer_shift_recovered() {
        let (reference, deformed) = speckle_pair(3.0, 256, 8);
        let subset = SubsetSpec::new(120, 130, 10);
        let peak = integer_search(&reference, &deformed, &subset, 6).unwrap();
        assert_eq!((peak.du, peak.dv), (3, 0));
    }

    #[test]
    fn background_subset_is_degenerate() {
        let blank = GrayImage::new(64, 64);
        let spec = SpeckleSpec { r_d: 0.05, r_a: 0.05, seed: 5 };
        let img = rasterize(&generate_speckles(&spec).unwrap(), None, 64).unwrap();
        let subset = SubsetSpec::new(32, 32, 5);
        assert!(matches!(
            integer_search(&blank, &img, &subset, 3),
            Err(Error::DegenerateSubset)
        ));
    }

    #[test]
    fn symmetric_cc_map_gives_zero_offset() {
        let mut cc_map = [[0.0; 3]; 3];
        for (j, row) in cc_map.iter_mut().enumerate() {
            for (i, v) in row.iter_mut().enumerate() {
                let dx = i as f64 - 1.0;
                let dy = j as f64 - 1.0;
                *v = 1.0 - 0.3 * dx * dx - 0.2 * dy * dy;
            }
        }
        let (dx, dy, peak) = biparabolic_fit(&cc_map).unwrap();
        assert_abs_diff_eq!(dx, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(dy, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(peak, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn known_paraboloid_peak_recovered() {
        // c(dx,dy) = 1 - (dx - 0.3)^2 - 0.8 (dy + 0.2)^2
        let mut cc_map = [[0.0; 3]; 3];
        for (j, row) in cc_map.iter_mut().enumerate() {
            for (i, v) in row.iter_mut().enumerate() {
                let dx = i as f64 - 1.0;
                let dy = j as f64 - 1.0;
                *v = 1.0 - (dx - 0.3).powi(2) - 0.8 * (dy + 0.2).powi(2);
            }
        }
        let (dx, dy, _) = biparabolic_fit(&cc_map).unwrap();
        assert_abs_diff_eq!(dx, 0.3, epsilon = 1e-10);
        assert_abs_diff_eq!(dy, -0.2, epsilon = 1e-10);
    }

    #[test]
    fn convex_map_falls_back() {
        let mut cc_map = [[0.0; 3]; 3];
        for (j, row) in cc_map.iter_mut().enumerate() {
            for (i, v) in row.iter_mut().enumerate() {
                let dx = i as f64 - 1.0;
                let dy = j as f64 - 1.0;
                *v = dx * dx + dy * dy;
            }
        }
        assert!(biparabolic_fit(&cc_map).is_none());
    }

    #[test]
    fn subpixel_shift_within_tenth_pixel() {
        // 0.25 px at size 256 is exactly representable in the field
        let (reference, deformed) = speckle_pair(0.25, 256, 12);
        let subset = SubsetSpec::new(128, 128, 15);
        let r = basic_dic(&reference, &deformed, &subset, 4).unwrap();
        assert!(r.status.is_converged());
        assert!((r.params.u - 0.25).abs() <= 0.1, "u = {}", r.params.u);
        assert!(r.params.v.abs() <= 0.1, "v = {}", r.params.v);
    }

    #[test]
    fn batched_full_field_matches_pointwise_search() {
        let (reference, deformed) = speckle_pair(2.0, 256, 21);
        let grid = MeasurementGrid::build(256, 256, 10, 40, 8).unwrap();
        let batched = full_field_basic(&reference, &deformed, &grid, 5).unwrap();
        for (s, b) in grid.subsets().iter().zip(&batched) {
            let single = basic_dic(&reference, &deformed, s, 5).unwrap();
            assert_eq!(single.status, b.status);
            if b.status.is_converged() {
                assert_abs_diff_eq!(single.params.u, b.params.u, epsilon = 1e-8);
                assert_abs_diff_eq!(single.params.v, b.params.v, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn peak_on_window_boundary_is_flagged() {
        let (reference, deformed) = speckle_pair(3.0, 256, 8);
        let subset = SubsetSpec::new(120, 130, 10);
        // radius 3 puts the true peak on the boundary
        assert!(matches!(
            integer_search(&reference, &deformed, &subset, 3),
            Err(Error::OutOfSearchRange)
        ));
    }
}
