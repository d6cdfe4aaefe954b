//! Whole-image integer shift estimate used to seed the Extended engine.
//!
//! Circular cross-correlation of the zero-mean images, computed with FFTs,
//! gives the correlation for every integer shift at once; the peak inside
//! the allowed shift range seeds the first Newton-Raphson point.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::synth::GrayImage;

/// In-place 2D FFT (rows, then columns) of a row-major grid.
fn fft_2d(data: &mut [Complex<f64>], width: usize, height: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let row_fft = if inverse {
        planner.plan_fft_inverse(width)
    } else {
        planner.plan_fft_forward(width)
    };
    for row in data.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    let col_fft = if inverse {
        planner.plan_fft_inverse(height)
    } else {
        planner.plan_fft_forward(height)
    };
    let mut col = vec![Complex::default(); height];
    for x in 0..width {
        for y in 0..height {
            col[y] = data[y * width + x];
        }
        col_fft.process(&mut col);
        for y in 0..height {
            data[y * width + x] = col[y];
        }
    }
}

fn zero_mean_complex(image: &GrayImage) -> Vec<Complex<f64>> {
    let n = image.pixels().len() as f64;
    let mean = image.pixels().iter().map(|&p| p as f64).sum::<f64>() / n;
    image
        .pixels()
        .iter()
        .map(|&p| Complex::new(p as f64 - mean, 0.0))
        .collect()
}

/// Estimates the dominant integer shift from `reference` to `deformed`.
///
/// `max_shift` bounds the allowed shift magnitude per axis; `None` uses a
/// quarter of the smaller image side. Ties prefer the smallest
/// `|du| + |dv|`, then lexicographic `(du, dv)`.
pub fn global_integer_seed(
    reference: &GrayImage,
    deformed: &GrayImage,
    max_shift: Option<usize>,
) -> Result<(i64, i64)> {
    let (w, h) = (reference.width(), reference.height());
    if deformed.width() != w || deformed.height() != h {
        return Err(Error::Dimension(format!(
            "image sizes differ: {w}x{h} vs {}x{}",
            deformed.width(),
            deformed.height()
        )));
    }
    let limit = max_shift.unwrap_or(w.min(h) / 4);
    if limit >= w.min(h) / 2 {
        return Err(Error::Parameter(format!(
            "shift limit {limit} is ambiguous for a {w}x{h} circular correlation"
        )));
    }
    let limit = limit as i64;

    let mut f = zero_mean_complex(reference);
    let mut g = zero_mean_complex(deformed);
    fft_2d(&mut f, w, h, false);
    fft_2d(&mut g, w, h, false);
    for (a, b) in f.iter_mut().zip(&g) {
        *a = a.conj() * b;
    }
    fft_2d(&mut f, w, h, true);

    // correlation at circular lag (dx, dy) sits at index (dx mod w, dy mod h)
    let mut best: Option<(i64, i64, f64)> = None;
    let mut candidates = Vec::new();
    for dv in -limit..=limit {
        for du in -limit..=limit {
            candidates.push((du, dv));
        }
    }
    candidates.sort_by_key(|&(du, dv)| (du.abs() + dv.abs(), du, dv));
    for (du, dv) in candidates {
        let x = du.rem_euclid(w as i64) as usize;
        let y = dv.rem_euclid(h as i64) as usize;
        let c = f[y * w + x].re;
        if best.map_or(true, |(_, _, b)| c > b) {
            best = Some((du, dv, c));
        }
    }
    let (du, dv, peak) = best.ok_or_else(|| Error::Empty("empty shift range".into()))?;
    if !peak.is_finite() {
        return Err(Error::DegenerateSubset);
    }
    Ok((du, dv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::rigid_translation;
    use crate::synth::{make_image_pair, SpeckleSpec};

    fn shifted_pair(px: f64, size: usize, seed: u64) -> (GrayImage, GrayImage) {
        let spec = SpeckleSpec { r_d: 0.04, r_a: 0.04, seed };
        make_image_pair(&spec, &rigid_translation(px / size as f64, 0.0), size).unwrap()
    }

    #[test]
    fn identity_gives_zero() {
        let (r, d) = shifted_pair(0.0, 128, 7);
        assert_eq!(global_integer_seed(&r, &d, None).unwrap(), (0, 0));
    }

    #[test]
    fn positive_shift_found() {
        let (r, d) = shifted_pair(5.0, 256, 9);
        assert_eq!(global_integer_seed(&r, &d, None).unwrap(), (5, 0));
    }

    #[test]
    fn negative_shift_found() {
        let (r, d) = shifted_pair(4.0, 256, 13);
        // swapping the roles flips the sign
        assert_eq!(global_integer_seed(&d, &r, None).unwrap(), (-4, 0));
    }

    #[test]
    fn shift_limit_respected() {
        let (r, d) = shifted_pair(5.0, 256, 9);
        let (du, dv) = global_integer_seed(&r, &d, Some(3)).unwrap();
        assert!(du.abs() <= 3 && dv.abs() <= 3);
    }

    #[test]
    fn size_mismatch_rejected() {
        let a = GrayImage::new(64, 64);
        let b = GrayImage::new(32, 64);
        assert!(global_integer_seed(&a, &b, None).is_err());
    }
}
