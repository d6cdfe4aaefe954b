//! Extended engine: Gauss-Newton maximization of the correlation over the
//! six-parameter subset deformation model.
//!
//! The deformed subset is sampled through the bicubic spline interpolant;
//! each iteration solves the 6x6 normal equations built from the spline's
//! analytic intensity gradients, with step halving when a step would make
//! the match worse.

use nalgebra::{Matrix6, Vector6};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::interp::SplineImage;
use crate::synth::GrayImage;

use super::criteria::{extract_subset, subset_stats, DEGENERATE_EPS};
use super::seed::global_integer_seed;
use super::{MatchResult, MatchStatus, MeasurementGrid, ShapeParams, SubsetSpec};

/// Gradient magnitude above which a converged solution is treated as a
/// runaway fit rather than a physical deformation.
const GRADIENT_BOUND: f64 = 0.5;

/// Newton-Raphson solver settings.
#[derive(Debug, Clone, Copy)]
pub struct NewtonOpts {
    pub max_iterations: usize,
    /// Bound on both the summed and the largest single parameter change.
    pub param_tol: f64,
    /// Bound on the correlation-coefficient change.
    pub cc_tol: f64,
    /// Step halvings tried before accepting stagnation.
    pub max_halvings: usize,
    /// Cap on the whole-image integer seed shift; `None` uses a quarter of
    /// the image side.
    pub seed_radius: Option<usize>,
}

impl Default for NewtonOpts {
    fn default() -> Self {
        NewtonOpts {
            max_iterations: 40,
            param_tol: 0.5e-8,
            cc_tol: 1e-8,
            max_halvings: 8,
            seed_radius: None,
        }
    }
}

/// One evaluation of the warped subset: interpolated intensities, their
/// spatial gradients, normalization stats and the ZNSSD value.
struct Eval {
    g: Vec<f64>,
    gx: Vec<f64>,
    gy: Vec<f64>,
    gm: f64,
    dg: f64,
    znssd: f64,
}

enum EvalError {
    OutOfDomain,
    Degenerate,
}

fn evaluate(
    spline: &SplineImage,
    center: (f64, f64),
    offsets: &[(f64, f64)],
    f_hat: &[f64],
    p: &ShapeParams,
) -> std::result::Result<Eval, EvalError> {
    let n = offsets.len();
    let mut g = Vec::with_capacity(n);
    let mut gx = Vec::with_capacity(n);
    let mut gy = Vec::with_capacity(n);
    for &(dx, dy) in offsets {
        let x = center.0 + p.u + (1.0 + p.ux) * dx + p.uy * dy;
        let y = center.1 + p.v + p.vx * dx + (1.0 + p.vy) * dy;
        let (v, vx, vy) = spline.eval_with_grad(x, y).map_err(|_| EvalError::OutOfDomain)?;
        g.push(v);
        gx.push(vx);
        gy.push(vy);
    }
    let nf = n as f64;
    let gm = g.iter().sum::<f64>() / nf;
    let dg = g.iter().map(|&v| (v - gm) * (v - gm)).sum::<f64>().sqrt();
    if dg <= DEGENERATE_EPS {
        return Err(EvalError::Degenerate);
    }
    let znssd = f_hat
        .iter()
        .zip(&g)
        .map(|(&fh, &gv)| {
            let d = fh - (gv - gm) / dg;
            d * d
        })
        .sum();
    Ok(Eval { g, gx, gy, gm, dg, znssd })
}

fn failure(subset: &SubsetSpec, status: MatchStatus, iterations: usize) -> MatchResult {
    MatchResult {
        center: (subset.x, subset.y),
        params: ShapeParams::default(),
        cc: f64::NAN,
        iterations,
        status,
        fit_fallback: false,
    }
}

/// Extended DIC at a single point, starting from `init`.
pub fn extended_dic(
    reference: &GrayImage,
    spline: &SplineImage,
    subset: &SubsetSpec,
    init: ShapeParams,
    opts: &NewtonOpts,
) -> Result<MatchResult> {
    subset.validate(reference.width(), reference.height())?;
    let f = extract_subset(reference, subset)?;
    let (fm, df) = match subset_stats(&f) {
        Ok(s) => s,
        Err(Error::DegenerateSubset) => {
            return Ok(failure(subset, MatchStatus::DegenerateSubset, 0))
        }
        Err(e) => return Err(e),
    };
    let f_hat: Vec<f64> = f.iter().map(|&v| (v - fm) / df).collect();
    let m = subset.half as f64;
    let side = subset.side();
    let mut offsets = Vec::with_capacity(subset.len());
    for j in 0..side {
        for i in 0..side {
            offsets.push((i as f64 - m, j as f64 - m));
        }
    }
    let center = (subset.x as f64, subset.y as f64);

    let mut p = init;
    let mut eval = match evaluate(spline, center, &offsets, &f_hat, &p) {
        Ok(e) => e,
        Err(EvalError::OutOfDomain) => {
            return Ok(failure(subset, MatchStatus::OutOfSearchRange, 0))
        }
        Err(EvalError::Degenerate) => {
            return Ok(failure(subset, MatchStatus::DegenerateSubset, 0))
        }
    };

    let mut status = MatchStatus::MaxIterations;
    let mut iterations = 0;
    for _ in 0..opts.max_iterations {
        iterations += 1;
        // normal equations with the normalization frozen at the current
        // iterate: J_k = (gx, gy) . d(x', y')/dp scaled by 1/dg
        let mut a = Matrix6::<f64>::zeros();
        let mut b = Vector6::<f64>::zeros();
        for (k, &(dx, dy)) in offsets.iter().enumerate() {
            let gx = eval.gx[k] / eval.dg;
            let gy = eval.gy[k] / eval.dg;
            let jac = Vector6::new(gx, gy, gx * dx, gx * dy, gy * dx, gy * dy);
            let r = f_hat[k] - (eval.g[k] - eval.gm) / eval.dg;
            a += jac * jac.transpose();
            b += jac * r;
        }
        let Some(chol) = a.cholesky() else {
            return Ok(failure(subset, MatchStatus::DegenerateSubset, iterations));
        };
        let delta = chol.solve(&b);

        // step halving: shrink until the match stops getting worse
        let mut scale = 1.0;
        let mut accepted = None;
        let mut least_worsening = f64::INFINITY;
        for _ in 0..=opts.max_halvings {
            let mut trial = p.as_array();
            for (t, d) in trial.iter_mut().zip(delta.iter()) {
                *t += scale * d;
            }
            let trial = ShapeParams::from_array(trial);
            match evaluate(spline, center, &offsets, &f_hat, &trial) {
                Ok(e) if e.znssd <= eval.znssd => {
                    accepted = Some((trial, e, scale));
                    break;
                }
                Ok(e) => {
                    least_worsening = least_worsening.min(e.znssd - eval.znssd);
                    scale *= 0.5;
                }
                Err(EvalError::OutOfDomain) => scale *= 0.5,
                Err(EvalError::Degenerate) => {
                    return Ok(failure(subset, MatchStatus::DegenerateSubset, iterations))
                }
            }
        }
        let Some((new_p, new_eval, scale)) = accepted else {
            // no scaled step improves the match; this is the optimum when
            // the quadratic model only promised a negligible gain or the
            // surface is flat within tolerance, otherwise the model is
            // fighting the data and we give up
            let predicted_cc_gain = b.dot(&delta).abs() / 2.0;
            if predicted_cc_gain < opts.cc_tol || least_worsening / 2.0 < opts.cc_tol {
                status = MatchStatus::Converged;
            }
            break;
        };

        let step: Vec<f64> = delta.iter().map(|d| scale * d).collect();
        let sum_change = step.iter().sum::<f64>().abs();
        let max_change = step.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        let cc_change = (new_eval.znssd - eval.znssd).abs() / 2.0;
        p = new_p;
        eval = new_eval;
        if sum_change < opts.param_tol && max_change < opts.param_tol && cc_change < opts.cc_tol {
            status = MatchStatus::Converged;
            break;
        }
    }

    if status == MatchStatus::Converged && p.max_gradient() > GRADIENT_BOUND {
        return Ok(failure(subset, MatchStatus::OutOfSearchRange, iterations));
    }
    Ok(MatchResult {
        center: (subset.x, subset.y),
        params: p,
        cc: 1.0 - eval.znssd / 2.0,
        iterations,
        status,
        fit_fallback: false,
    })
}

/// Extended DIC over a whole grid.
///
/// The first point of the first row starts from a whole-image integer
/// cross-correlation seed; each later row head starts from the previous
/// successful head, and points within a row start from their left
/// neighbor's solution. Rows run in parallel once their heads are known.
pub fn full_field_extended(
    reference: &GrayImage,
    deformed: &GrayImage,
    spline: &SplineImage,
    grid: &MeasurementGrid,
    opts: &NewtonOpts,
) -> Result<Vec<MatchResult>> {
    let (du, dv) = global_integer_seed(reference, deformed, opts.seed_radius)?;
    let global = ShapeParams::translation(du as f64, dv as f64);

    let mut heads = Vec::with_capacity(grid.ny);
    let mut head_seed = global;
    for iy in 0..grid.ny {
        let r = extended_dic(reference, spline, &grid.subset(0, iy), head_seed, opts)?;
        if r.status.is_converged() {
            head_seed = r.params;
        }
        heads.push(r);
    }

    let rows: Vec<Result<Vec<MatchResult>>> = (0..grid.ny)
        .into_par_iter()
        .map(|iy| {
            let head = heads[iy];
            let mut seed = if head.status.is_converged() { head.params } else { global };
            let mut row = Vec::with_capacity(grid.nx);
            row.push(head);
            for ix in 1..grid.nx {
                let r = extended_dic(reference, spline, &grid.subset(ix, iy), seed, opts)?;
                if r.status.is_converged() {
                    seed = r.params;
                }
                row.push(r);
            }
            Ok(row)
        })
        .collect();

    let mut out = Vec::with_capacity(grid.len());
    for row in rows {
        out.extend(row?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{affine_field, rigid_translation};
    use crate::interp::build_spline;
    use crate::synth::{make_image_pair, SpeckleSpec};
    use approx::assert_abs_diff_eq;

    fn pair(
        shift_px: f64,
        size: usize,
        seed: u64,
    ) -> (GrayImage, GrayImage, SplineImage) {
        let spec = SpeckleSpec { r_d: 0.04, r_a: 0.04, seed };
        let field = rigid_translation(shift_px / size as f64, 0.0);
        let (r, d) = make_image_pair(&spec, &field, size).unwrap();
        let s = build_spline(&d).unwrap();
        (r, d, s)
    }

    #[test]
    fn identity_match_stays_at_zero() {
        let (r, _, s) = pair(0.0, 128, 3);
        let subset = SubsetSpec::new(64, 64, 10);
        let m = extended_dic(&r, &s, &subset, ShapeParams::default(), &NewtonOpts::default())
            .unwrap();
        assert!(m.status.is_converged());
        assert_abs_diff_eq!(m.params.u, 0.0, epsilon = 1e-7);
        assert_abs_diff_eq!(m.params.v, 0.0, epsilon = 1e-7);
        assert_abs_diff_eq!(m.cc, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn subpixel_translation_recovered() {
        let (r, _, s) = pair(0.25, 256, 11);
        let subset = SubsetSpec::new(128, 120, 12);
        let m = extended_dic(&r, &s, &subset, ShapeParams::default(), &NewtonOpts::default())
            .unwrap();
        assert!(m.status.is_converged());
        assert!((m.params.u - 0.25).abs() < 0.05, "u = {}", m.params.u);
        assert!(m.params.v.abs() < 0.05, "v = {}", m.params.v);
        assert!(m.cc > 0.99, "cc = {}", m.cc);
    }

    #[test]
    fn affine_gradients_recovered() {
        let size = 256;
        let spec = SpeckleSpec { r_d: 0.04, r_a: 0.04, seed: 17 };
        let field = affine_field(0.005, 0.0, 0.0, -0.005, 0.0, 0.0);
        let (r, d) = make_image_pair(&spec, &field, size).unwrap();
        let s = build_spline(&d).unwrap();
        let subset = SubsetSpec::new(128, 128, 15);
        let m = extended_dic(&r, &s, &subset, ShapeParams::default(), &NewtonOpts::default())
            .unwrap();
        assert!(m.status.is_converged());
        assert!((m.params.ux - 0.005).abs() < 2e-3, "ux = {}", m.params.ux);
        assert!((m.params.vy + 0.005).abs() < 2e-3, "vy = {}", m.params.vy);
        assert!(m.params.uy.abs() < 2e-3);
        assert!(m.params.vx.abs() < 2e-3);
    }

    #[test]
    fn blank_reference_is_degenerate() {
        let (_, d, s) = pair(0.0, 128, 3);
        let blank = GrayImage::new(d.width(), d.height());
        let subset = SubsetSpec::new(64, 64, 10);
        let m = extended_dic(&blank, &s, &subset, ShapeParams::default(), &NewtonOpts::default())
            .unwrap();
        assert_eq!(m.status, MatchStatus::DegenerateSubset);
    }

    #[test]
    fn warp_leaving_image_is_out_of_range() {
        let (r, _, s) = pair(0.0, 128, 3);
        let subset = SubsetSpec::new(64, 64, 10);
        let init = ShapeParams::translation(300.0, 0.0);
        let m = extended_dic(&r, &s, &subset, init, &NewtonOpts::default()).unwrap();
        assert_eq!(m.status, MatchStatus::OutOfSearchRange);
    }

    #[test]
    fn full_field_translation() {
        let (r, d, s) = pair(2.25, 256, 29);
        let grid = MeasurementGrid::build(256, 256, 10, 40, 8).unwrap();
        let results =
            full_field_extended(&r, &d, &s, &grid, &NewtonOpts::default()).unwrap();
        assert_eq!(results.len(), grid.len());
        let converged: Vec<_> =
            results.iter().filter(|m| m.status.is_converged()).collect();
        assert!(converged.len() * 10 >= results.len() * 9, "too many failures");
        for m in converged {
            assert!((m.params.u - 2.25).abs() < 0.1, "u = {}", m.params.u);
            assert!(m.params.v.abs() < 0.1, "v = {}", m.params.v);
        }
    }
}
