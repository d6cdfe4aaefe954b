//! Continuous gray-level evaluation via bicubic spline interpolation.
//!
//! The image is fitted once with an interpolating, C2-continuous cubic
//! B-spline surface (natural end conditions: zero second derivative at the
//! borders). Fitting solves one tridiagonal system per row and per column;
//! evaluation reads a 4x4 coefficient block, so queries are O(1). Analytic
//! first derivatives are available for the Newton-Raphson engine.
//!
//! Values are not clamped to [0, 255]: the correlation criteria are affine
//! invariant in intensity, and clamping would only introduce kinks that
//! hurt the optimizer.

use crate::error::{Error, Result};
use crate::synth::GrayImage;

/// Precomputed B-spline coefficient grid for one image.
#[derive(Debug, Clone)]
pub struct SplineImage {
    width: usize,
    height: usize,
    coeffs: Vec<f64>,
}

/// Fits the interpolating bicubic spline through all pixel centers.
pub fn build_spline(image: &GrayImage) -> Result<SplineImage> {
    let (w, h) = (image.width(), image.height());
    if w < 4 || h < 4 {
        return Err(Error::Dimension(format!("spline needs at least 4x4 pixels, got {w}x{h}")));
    }
    let mut coeffs: Vec<f64> = image.pixels().iter().map(|&p| p as f64).collect();
    let mut scratch = vec![0.0f64; w.max(h)];
    // rows
    for y in 0..h {
        solve_line(&mut coeffs[y * w..(y + 1) * w], &mut scratch);
    }
    // columns
    let mut col = vec![0.0f64; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = coeffs[y * w + x];
        }
        solve_line(&mut col, &mut scratch);
        for y in 0..h {
            coeffs[y * w + x] = col[y];
        }
    }
    Ok(SplineImage { width: w, height: h, coeffs })
}

/// Solves the interpolation system along one line in place.
///
/// Interior equations `(c[i-1] + 4 c[i] + c[i+1]) / 6 = f[i]`; the natural
/// end condition pins `c[0] = f[0]` and `c[n-1] = f[n-1]` (the phantom
/// coefficient `c[-1] = 2 c[0] - c[1]` makes S''(0) = 0).
fn solve_line(values: &mut [f64], scratch: &mut [f64]) {
    let n = values.len();
    if n < 3 {
        return;
    }
    // Thomas algorithm on the interior unknowns c[1..n-1]; c[0] and
    // c[n-1] are pinned to the end samples.
    let m = n - 2;
    let (a, b, c) = (1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0);
    if m == 1 {
        values[1] = (values[1] - a * values[0] - c * values[2]) / b;
        return;
    }
    let cp = &mut scratch[..m];
    cp[0] = c / b;
    values[1] = (values[1] - a * values[0]) / b;
    for i in 1..m {
        let denom = b - a * cp[i - 1];
        cp[i] = c / denom;
        let mut d = values[i + 1];
        if i == m - 1 {
            d -= c * values[n - 1];
        }
        values[i + 1] = (d - a * values[i]) / denom;
    }
    for i in (0..m - 1).rev() {
        values[i + 1] -= cp[i] * values[i + 2];
    }
}

#[inline]
fn basis(t: f64) -> [f64; 4] {
    let omt = 1.0 - t;
    [
        omt * omt * omt / 6.0,
        (3.0 * t * t * t - 6.0 * t * t + 4.0) / 6.0,
        (-3.0 * t * t * t + 3.0 * t * t + 3.0 * t + 1.0) / 6.0,
        t * t * t / 6.0,
    ]
}

#[inline]
fn basis_deriv(t: f64) -> [f64; 4] {
    let omt = 1.0 - t;
    [
        -omt * omt / 2.0,
        (3.0 * t * t - 4.0 * t) / 2.0,
        (-3.0 * t * t + 2.0 * t + 1.0) / 2.0,
        t * t / 2.0,
    ]
}

impl SplineImage {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Coefficient with linear extension one knot beyond each border,
    /// matching the natural end condition.
    #[inline]
    fn coeff_ext(&self, r: isize, c: isize) -> f64 {
        let w = self.width as isize;
        let h = self.height as isize;
        let fetch_col = |r: isize, c: isize| -> f64 {
            let row = r as usize * self.width;
            if c < 0 {
                2.0 * self.coeffs[row] - self.coeffs[row + 1]
            } else if c >= w {
                2.0 * self.coeffs[row + self.width - 1] - self.coeffs[row + self.width - 2]
            } else {
                self.coeffs[row + c as usize]
            }
        };
        if r < 0 {
            2.0 * fetch_col(0, c) - fetch_col(1, c)
        } else if r >= h {
            2.0 * fetch_col(h - 1, c) - fetch_col(h - 2, c)
        } else {
            fetch_col(r, c)
        }
    }

    #[inline]
    fn locate(&self, x: f64, y: f64) -> Result<(isize, isize, f64, f64)> {
        let (w, h) = (self.width as f64 - 1.0, self.height as f64 - 1.0);
        if !(0.0..=w).contains(&x) || !(0.0..=h).contains(&y) {
            return Err(Error::OutOfDomain { x, y });
        }
        let i = (x.floor() as isize).min(self.width as isize - 2);
        let j = (y.floor() as isize).min(self.height as isize - 2);
        Ok((i, j, x - i as f64, y - j as f64))
    }

    /// Interpolated intensity at subpixel coordinates.
    pub fn eval(&self, x: f64, y: f64) -> Result<f64> {
        let (i, j, tx, ty) = self.locate(x, y)?;
        let bx = basis(tx);
        let by = basis(ty);
        let mut acc = 0.0;
        for (l, wy) in by.iter().enumerate() {
            let mut row_acc = 0.0;
            for (k, wx) in bx.iter().enumerate() {
                row_acc += wx * self.coeff_ext(j + l as isize - 1, i + k as isize - 1);
            }
            acc += wy * row_acc;
        }
        Ok(acc)
    }

    /// Analytic first partial derivatives of the interpolant.
    pub fn eval_grad(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        let (i, j, tx, ty) = self.locate(x, y)?;
        let bx = basis(tx);
        let by = basis(ty);
        let dbx = basis_deriv(tx);
        let dby = basis_deriv(ty);
        let mut gx = 0.0;
        let mut gy = 0.0;
        for l in 0..4 {
            let mut row = 0.0;
            let mut drow = 0.0;
            for k in 0..4 {
                let cv = self.coeff_ext(j + l as isize - 1, i + k as isize - 1);
                row += bx[k] * cv;
                drow += dbx[k] * cv;
            }
            gx += by[l] * drow;
            gy += dby[l] * row;
        }
        Ok((gx, gy))
    }

    /// Value and gradient in one pass; the Newton engine's inner loop.
    pub fn eval_with_grad(&self, x: f64, y: f64) -> Result<(f64, f64, f64)> {
        let (i, j, tx, ty) = self.locate(x, y)?;
        let bx = basis(tx);
        let by = basis(ty);
        let dbx = basis_deriv(tx);
        let dby = basis_deriv(ty);
        let mut s = 0.0;
        let mut gx = 0.0;
        let mut gy = 0.0;
        for l in 0..4 {
            let mut row = 0.0;
            let mut drow = 0.0;
            for k in 0..4 {
                let cv = self.coeff_ext(j + l as isize - 1, i + k as isize - 1);
                row += bx[k] * cv;
                drow += dbx[k] * cv;
            }
            s += by[l] * row;
            gx += by[l] * drow;
            gy += dby[l] * row;
        }
        Ok((s, gx, gy))
    }
}
