//! File outputs of an experiment: CSV tables, the canonical configuration,
//! a plain-text metadata sidecar and PGM image dumps.
//!
//! Non-timing outputs are byte-deterministic for a given configuration:
//! stable column order, LF line endings, shortest round-trip float
//! formatting. Timing tables depend on the machine by nature.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::dic::EngineKind;
use crate::error::Result;
use crate::strain::StrainMethod;
use crate::synth::{GrayImage, SpeckleSpec, RNG_ALGORITHM};

use super::experiment::ExperimentOutput;

fn engine_name(engine: EngineKind) -> &'static str {
    match engine {
        EngineKind::Basic => "basic",
        EngineKind::Extended => "extended",
    }
}

fn method_name(method: StrainMethod) -> &'static str {
    match method {
        StrainMethod::ShapeGradients => "shape-gradients",
        StrainMethod::SmoothedGradients => "smoothed-gradients",
        StrainMethod::PointwiseDifference => "pointwise-difference",
        StrainMethod::SmoothedDifference => "smoothed-difference",
    }
}

/// `errors.csv`: displacement error statistics per cell.
pub fn errors_csv(out: &ExperimentOutput) -> String {
    let mut s = String::from(
        "image_size,subset_size,engine,mean_eu,std_eu,mean_ev,std_ev,mean_ee,std_ee,max_ee,n_points,n_failed\n",
    );
    for c in &out.cells {
        let e = &c.errors;
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            c.image_size,
            c.subset_size,
            engine_name(c.engine),
            e.u.mean,
            e.u.std,
            e.v.mean,
            e.v.std,
            e.e.mean,
            e.e.std,
            e.e.max,
            e.n_points,
            e.n_failed
        )
        .unwrap();
    }
    s
}

/// `timing.csv`: wall-clock measurements per cell.
pub fn timing_csv(out: &ExperimentOutput) -> String {
    let mut s = String::from(
        "image_size,subset_size,engine,match_seconds,interp_build_seconds,per_point_seconds,mean_iterations\n",
    );
    for c in &out.cells {
        writeln!(
            s,
            "{},{},{},{},{},{},{}",
            c.image_size,
            c.subset_size,
            engine_name(c.engine),
            c.match_seconds,
            c.interp_build_seconds,
            c.per_point_seconds,
            c.mean_iterations
        )
        .unwrap();
    }
    s
}

/// `strain.csv`: strain reconstruction RMS errors per cell and method.
pub fn strain_csv(out: &ExperimentOutput) -> String {
    let mut s =
        String::from("image_size,subset_size,engine,method,rms_ex,rms_ey,rms_gxy\n");
    for c in &out.cells {
        for r in &c.strain {
            writeln!(
                s,
                "{},{},{},{},{},{},{}",
                c.image_size,
                c.subset_size,
                engine_name(c.engine),
                method_name(r.method),
                r.rms_ex,
                r.rms_ey,
                r.rms_gxy
            )
            .unwrap();
        }
    }
    s
}

/// `metadata.txt`: run provenance as plain key-value lines.
pub fn metadata_text(out: &ExperimentOutput) -> Result<String> {
    let field = out.config.field.build(out.amplitude_scale)?;
    let mut s = String::new();
    writeln!(s, "name={}", out.config.name).unwrap();
    writeln!(s, "config_hash={}", out.config_hash).unwrap();
    writeln!(s, "seed={}", out.config.seed).unwrap();
    writeln!(s, "rng={RNG_ALGORITHM}").unwrap();
    writeln!(s, "r_d={}", out.config.r_d).unwrap();
    writeln!(s, "r_a={}", out.config.r_a).unwrap();
    writeln!(s, "amplitude_scale={}", out.amplitude_scale).unwrap();
    writeln!(s, "field={}", field.describe()).unwrap();
    Ok(s)
}

/// Writes every report file for one finished experiment into `dir`.
pub fn write_reports(dir: &Path, out: &ExperimentOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.json"), out.config.canonical_json()? + "\n")?;
    fs::write(dir.join("errors.csv"), errors_csv(out))?;
    fs::write(dir.join("timing.csv"), timing_csv(out))?;
    fs::write(dir.join("strain.csv"), strain_csv(out))?;
    fs::write(dir.join("metadata.txt"), metadata_text(out)?)?;
    Ok(())
}

/// Writes `<stem>.pgm` plus a `<stem>.txt` sidecar describing how the
/// image was generated.
pub fn write_image_with_sidecar(
    dir: &Path,
    stem: &str,
    image: &GrayImage,
    spec: &SpeckleSpec,
    field_description: &str,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    image.write_pgm(&dir.join(format!("{stem}.pgm")))?;
    let mut s = String::new();
    writeln!(s, "seed={}", spec.seed).unwrap();
    writeln!(s, "rng={RNG_ALGORITHM}").unwrap();
    writeln!(s, "r_d={}", spec.r_d).unwrap();
    writeln!(s, "r_a={}", spec.r_a).unwrap();
    writeln!(s, "image_size={}", image.width()).unwrap();
    writeln!(s, "field={field_description}").unwrap();
    fs::write(dir.join(format!("{stem}.txt")), s)?;
    Ok(())
}
