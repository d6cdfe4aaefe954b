//! Runs a configured benchmark sweep and collects per-cell records.
//!
//! One cell is a (image size, subset size, engine) combination. Each cell
//! reports displacement error statistics, iteration counts, wall-clock
//! timings split into interpolant construction and matching, and strain
//! reconstruction errors for every applicable method.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dic::{
    full_field_basic, full_field_extended, EngineKind, MatchResult, MeasurementGrid, NewtonOpts,
};
use crate::error::{Error, Result};
use crate::fields::DeformationField;
use crate::interp::build_spline;
use crate::metrics::{field_errors, strain_rms_error, FieldErrors};
use crate::strain::{strain_field, StrainMethod};
use crate::synth::{make_image_pair, GrayImage, SpeckleSpec};

use super::config::ExperimentConfig;

/// Strain reconstruction errors for one method in one cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrainRecord {
    pub method: StrainMethod,
    pub rms_ex: f64,
    pub rms_ey: f64,
    pub rms_gxy: f64,
}

/// Everything measured for one (image size, subset size, engine) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellRecord {
    pub image_size: usize,
    pub subset_size: usize,
    pub engine: EngineKind,
    pub errors: FieldErrors,
    pub mean_iterations: f64,
    /// Wall-clock seconds spent matching (excludes interpolant build).
    pub match_seconds: f64,
    /// Wall-clock seconds building the spline interpolant (Extended only).
    pub interp_build_seconds: f64,
    pub per_point_seconds: f64,
    pub strain: Vec<StrainRecord>,
}

/// A finished experiment: the resolved configuration and all cells.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub amplitude_scale: f64,
    pub cells: Vec<CellRecord>,
}

/// Search radius covering the field's largest displacement at this image
/// size, with two pixels of headroom.
pub fn derived_search_radius(field: &dyn DeformationField, image_size: usize) -> usize {
    let n = 64;
    let mut max_px = 0.0f64;
    for i in 0..=n {
        for j in 0..=n {
            let x = i as f64 / n as f64;
            let y = j as f64 / n as f64;
            if let Ok((u, v)) = field.displacement(x, y) {
                max_px = max_px.max(u.abs().max(v.abs()) * image_size as f64);
            }
        }
    }
    max_px.ceil() as usize + 2
}

fn strain_methods(engine: EngineKind) -> &'static [StrainMethod] {
    match engine {
        EngineKind::Extended => &[
            StrainMethod::ShapeGradients,
            StrainMethod::SmoothedGradients,
            StrainMethod::PointwiseDifference,
            StrainMethod::SmoothedDifference,
        ],
        EngineKind::Basic => {
            &[StrainMethod::PointwiseDifference, StrainMethod::SmoothedDifference]
        }
    }
}

fn strain_records(
    grid: &MeasurementGrid,
    results: &[MatchResult],
    engine: EngineKind,
    subset_size: usize,
    field: &dyn DeformationField,
    image_size: usize,
) -> Result<Vec<StrainRecord>> {
    let mut out = Vec::new();
    for &method in strain_methods(engine) {
        let sg = strain_field(grid, results, engine, method, subset_size)?;
        let rec = StrainRecord {
            method,
            rms_ex: strain_rms_error(&sg.ex, image_size, |x, y| {
                field.strain(x, y).map(|s| s.ex)
            })?,
            rms_ey: strain_rms_error(&sg.ey, image_size, |x, y| {
                field.strain(x, y).map(|s| s.ey)
            })?,
            rms_gxy: strain_rms_error(&sg.gxy, image_size, |x, y| {
                field.strain(x, y).map(|s| s.gxy)
            })?,
        };
        out.push(rec);
    }
    Ok(out)
}

/// One cell of the sweep against already-rendered images.
#[allow(clippy::too_many_arguments)]
pub fn run_cell(
    reference: &GrayImage,
    deformed: &GrayImage,
    field: &dyn DeformationField,
    image_size: usize,
    subset_size: usize,
    engine: EngineKind,
    stride: usize,
    search_radius: usize,
) -> Result<CellRecord> {
    let half = subset_size / 2;
    let grid =
        MeasurementGrid::build(image_size, image_size, half, stride, search_radius)?;

    let mut interp_build_seconds = 0.0;
    let start = Instant::now();
    let results = match engine {
        EngineKind::Basic => {
            full_field_basic(reference, deformed, &grid, search_radius)?
        }
        EngineKind::Extended => {
            let t0 = Instant::now();
            let spline = build_spline(deformed)?;
            interp_build_seconds = t0.elapsed().as_secs_f64();
            let mut opts = NewtonOpts::default();
            opts.seed_radius = Some(search_radius.min(image_size / 2 - 1));
            full_field_extended(reference, deformed, &spline, &grid, &opts)?
        }
    };
    let match_seconds = start.elapsed().as_secs_f64() - interp_build_seconds;

    let errors = field_errors(&results, field, image_size)?;
    let mean_iterations = results.iter().map(|r| r.iterations as f64).sum::<f64>()
        / results.len().max(1) as f64;
    let strain = strain_records(&grid, &results, engine, subset_size, field, image_size)?;
    Ok(CellRecord {
        image_size,
        subset_size,
        engine,
        errors,
        mean_iterations,
        match_seconds,
        interp_build_seconds,
        per_point_seconds: match_seconds / grid.len().max(1) as f64,
        strain,
    })
}

/// Runs the full sweep described by `config`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let amplitude_scale = config.amplitude.resolve(&config.field)?;
    let field = config.field.build(amplitude_scale)?;
    let mut cells = Vec::new();
    for &image_size in &config.image_sizes {
        let spec = SpeckleSpec { r_d: config.r_d, r_a: config.r_a, seed: config.seed };
        let (reference, deformed) = make_image_pair(&spec, field.as_ref(), image_size)?;
        let search_radius = match config.search_radius {
            Some(r) => r,
            None => derived_search_radius(field.as_ref(), image_size),
        };
        for &subset_size in &config.subset_sizes {
            for &engine in &config.engines {
                cells.push(run_cell(
                    &reference,
                    &deformed,
                    field.as_ref(),
                    image_size,
                    subset_size,
                    engine,
                    config.stride,
                    search_radius,
                )?);
            }
        }
    }
    if cells.is_empty() {
        return Err(Error::Empty("experiment produced no cells".into()));
    }
    Ok(ExperimentOutput {
        config: config.clone(),
        config_hash: config.hash()?,
        amplitude_scale,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{AmplitudeSpec, FieldConfig};

    fn tiny_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::desk_scale();
        cfg.name = "tiny".into();
        cfg.image_sizes = vec![128];
        cfg.subset_sizes = vec![15];
        cfg.stride = 24;
        cfg.r_d = 0.04;
        cfg.r_a = 0.04;
        cfg.field = FieldConfig::RigidTranslation { u: 2.0 / 128.0, v: 0.0 };
        cfg.amplitude = AmplitudeSpec::Scale { value: 1.0 };
        cfg
    }

    #[test]
    fn rigid_sweep_is_accurate() {
        let cfg = tiny_config();
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.cells.len(), 2); // one size, one subset, two engines
        assert_eq!(out.config_hash, cfg.hash().unwrap());
        for cell in &out.cells {
            assert!(cell.errors.u.mean < 0.1, "mean e_u = {}", cell.errors.u.mean);
            assert!(!cell.errors.excessive_failures);
            assert!(cell.match_seconds >= 0.0);
            let n_methods = match cell.engine {
                EngineKind::Extended => 4,
                EngineKind::Basic => 2,
            };
            assert_eq!(cell.strain.len(), n_methods);
        }
    }

    #[test]
    fn derived_radius_covers_displacement() {
        let f = FieldConfig::RigidTranslation { u: 3.2 / 128.0, v: 0.0 }.build(1.0).unwrap();
        assert_eq!(derived_search_radius(f.as_ref(), 128), 6); // ceil(3.2) + 2
    }
}
