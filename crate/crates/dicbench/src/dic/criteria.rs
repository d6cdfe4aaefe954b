//! Zero-normalized correlation criteria.
//!
//! ZNCC sums the products of zero-mean, norm-scaled subset intensities;
//! ZNSSD sums their squared differences. The two are linked by
//! `C_znssd = 2 - 2 C_zncc` and are both invariant to affine changes of
//! illumination.

use crate::error::{Error, Result};
use crate::synth::GrayImage;

use super::SubsetSpec;

/// Threshold below which the intensity norm counts as zero variation.
pub(super) const DEGENERATE_EPS: f64 = 1e-9;

/// Copies subset pixels into a row-major f64 grid.
pub fn extract_subset(image: &GrayImage, subset: &SubsetSpec) -> Result<Vec<f64>> {
    subset.validate(image.width(), image.height())?;
    let m = subset.half;
    let mut out = Vec::with_capacity(subset.len());
    for y in subset.y - m..=subset.y + m {
        for &p in &image.row(y)[subset.x - m..=subset.x + m] {
            out.push(p as f64);
        }
    }
    Ok(out)
}

/// Mean and zero-mean norm of a subset; errors on zero intensity
/// variation (a subset covering only speckle or only background).
pub fn subset_stats(values: &[f64]) -> Result<(f64, f64)> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let norm = ss.sqrt();
    if norm <= DEGENERATE_EPS {
        return Err(Error::DegenerateSubset);
    }
    Ok((mean, norm))
}

fn check_dims(f: &[f64], g: &[f64]) -> Result<()> {
    if f.len() != g.len() || f.is_empty() {
        return Err(Error::Dimension(format!(
            "subset size mismatch: {} vs {}",
            f.len(),
            g.len()
        )));
    }
    Ok(())
}

/// Zero-normalized cross-correlation of two equally sized subsets.
pub fn zncc(f: &[f64], g: &[f64]) -> Result<f64> {
    check_dims(f, g)?;
    let (fm, df) = subset_stats(f)?;
    let (gm, dg) = subset_stats(g)?;
    let num: f64 = f.iter().zip(g).map(|(&a, &b)| (a - fm) * (b - gm)).sum();
    Ok(num / (df * dg))
}

/// Zero-normalized sum of squared differences; `0` for a perfect match.
pub fn znssd(f: &[f64], g: &[f64]) -> Result<f64> {
    check_dims(f, g)?;
    let (fm, df) = subset_stats(f)?;
    let (gm, dg) = subset_stats(g)?;
    let sum: f64 = f
        .iter()
        .zip(g)
        .map(|(&a, &b)| {
            let d = (a - fm) / df - (b - gm) / dg;
            d * d
        })
        .sum();
    Ok(sum)
}
