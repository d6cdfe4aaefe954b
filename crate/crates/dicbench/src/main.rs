//! Command-line front end: synthesize benchmark images, match image
//! pairs, run the benchmark sweep, reconstruct strain fields and run the
//! built-in verification suite.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use dicbench::dic::{
    full_field, EngineKind, MatchResult, MeasurementGrid, NewtonOpts,
};
use dicbench::error::Error;
use dicbench::harness::{
    report, run_acceptance, run_experiment, ExperimentConfig,
};
use dicbench::metrics::field_errors;
use dicbench::strain::{strain_field, StrainMethod};
use dicbench::synth::{make_image_pair, GrayImage, SpeckleSpec};

#[derive(Parser)]
#[command(name = "dicbench", version, about = "Synthetic speckle DIC benchmark")]
struct Cli {
    /// Worker thread count (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EngineArg {
    Basic,
    Extended,
    Both,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment configuration file (JSON); defaults to the desk-scale
    /// benchmark.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured speckle seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Use the full protocol (adds the 2000-pixel image size).
    #[arg(long)]
    full_protocol: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None if self.full_protocol => ExperimentConfig::full_protocol(),
            None => ExperimentConfig::desk_scale(),
        };
        if self.config.is_some() && self.full_protocol && !cfg.image_sizes.contains(&2000) {
            cfg.image_sizes.push(2000);
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a reference/deformed speckle image pair with metadata.
    Synth {
        #[command(flatten)]
        config: ConfigArgs,
        /// Image side in pixels; defaults to the first configured size.
        #[arg(long)]
        size: Option<usize>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Match one image pair and write the displacement field.
    Match {
        /// Reference image (binary PGM).
        reference: PathBuf,
        /// Deformed image (binary PGM).
        deformed: PathBuf,
        #[arg(long, value_enum, default_value = "extended")]
        engine: EngineArg,
        /// Subset side length (odd).
        #[arg(long, default_value_t = 21)]
        subset: usize,
        #[arg(long, default_value_t = 10)]
        stride: usize,
        #[arg(long, default_value_t = 5)]
        search_radius: usize,
        /// Optional experiment config supplying the ground-truth field;
        /// adds an error summary to the output.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Run the benchmark sweep and write CSV reports.
    Bench {
        #[command(flatten)]
        config: ConfigArgs,
        /// Restrict to one engine.
        #[arg(long, value_enum)]
        engine: Option<EngineArg>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Reconstruct a strain field from saved match results.
    Strain {
        /// `matches.json` written by the `match` subcommand.
        results: PathBuf,
        #[arg(long, value_enum, default_value = "smoothed-difference")]
        method: MethodArg,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Run the acceptance criteria and print pass/fail per criterion.
    Verify,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    ShapeGradients,
    SmoothedGradients,
    PointwiseDifference,
    SmoothedDifference,
}

impl From<MethodArg> for StrainMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::ShapeGradients => StrainMethod::ShapeGradients,
            MethodArg::SmoothedGradients => StrainMethod::SmoothedGradients,
            MethodArg::PointwiseDifference => StrainMethod::PointwiseDifference,
            MethodArg::SmoothedDifference => StrainMethod::SmoothedDifference,
        }
    }
}

/// Everything `strain` needs to pick up where `match` left off.
#[derive(Serialize, Deserialize)]
struct SavedMatches {
    engine: EngineKind,
    subset_size: usize,
    grid: MeasurementGrid,
    results: Vec<MatchResult>,
}

fn status_name(r: &MatchResult) -> String {
    serde_json::to_value(r.status)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_else(|| format!("{:?}", r.status))
}

fn matches_csv(results: &[MatchResult]) -> String {
    let mut s = String::from("x,y,u,v,ux,uy,vx,vy,cc,iterations,status\n");
    for r in results {
        let p = &r.params;
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.center.0, r.center.1, p.u, p.v, p.ux, p.uy, p.vx, p.vy, r.cc, r.iterations,
            status_name(r)
        )
        .unwrap();
    }
    s
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Resource(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Synth { config, size, out_dir } => {
            let cfg = config.resolve()?;
            let image_size = size.unwrap_or(cfg.image_sizes[0]);
            let scale = cfg.amplitude.resolve(&cfg.field)?;
            let field = cfg.field.build(scale)?;
            let spec = SpeckleSpec { r_d: cfg.r_d, r_a: cfg.r_a, seed: cfg.seed };
            let (reference, deformed) = make_image_pair(&spec, field.as_ref(), image_size)?;
            let desc = format!("{} scale={scale}", field.describe());
            report::write_image_with_sidecar(&out_dir, "reference", &reference, &spec, "none")?;
            report::write_image_with_sidecar(&out_dir, "deformed", &deformed, &spec, &desc)?;
            println!(
                "wrote {}/reference.pgm and deformed.pgm ({image_size}x{image_size})",
                out_dir.display()
            );
            Ok(())
        }
        Command::Match {
            reference,
            deformed,
            engine,
            subset,
            stride,
            search_radius,
            config,
            out_dir,
        } => {
            if subset % 2 == 0 || subset < 5 {
                return Err(Error::Config(format!("subset size {subset} must be odd and >= 5")));
            }
            let engine = match engine {
                EngineArg::Basic => EngineKind::Basic,
                EngineArg::Extended => EngineKind::Extended,
                EngineArg::Both => {
                    return Err(Error::Config("match runs one engine at a time".into()))
                }
            };
            let reference = GrayImage::read_pgm(&reference)?;
            let deformed_img = GrayImage::read_pgm(&deformed)?;
            let grid = MeasurementGrid::build(
                reference.width(),
                reference.height(),
                subset / 2,
                stride,
                search_radius,
            )?;
            let results = full_field(
                &reference,
                &deformed_img,
                &grid,
                engine,
                search_radius,
                &NewtonOpts::default(),
            )?;
            std::fs::create_dir_all(&out_dir)?;
            std::fs::write(out_dir.join("matches.csv"), matches_csv(&results))?;
            let saved = SavedMatches { engine, subset_size: subset, grid, results };
            std::fs::write(
                out_dir.join("matches.json"),
                serde_json::to_string_pretty(&saved)?,
            )?;
            let n_fail =
                saved.results.iter().filter(|r| !r.status.is_converged()).count();
            println!(
                "{} points matched, {} failed; results in {}",
                saved.results.len(),
                n_fail,
                out_dir.display()
            );
            if let Some(path) = config {
                let cfg = ExperimentConfig::load(&path)?;
                let scale = cfg.amplitude.resolve(&cfg.field)?;
                let field = cfg.field.build(scale)?;
                let errors =
                    field_errors(&saved.results, field.as_ref(), reference.width())?;
                println!(
                    "against configured field: mean e_u {:.5} px, e_v {:.5} px, e2e {:.5} px",
                    errors.u.mean, errors.v.mean, errors.e.mean
                );
            }
            Ok(())
        }
        Command::Bench { config, engine, out_dir } => {
            let mut cfg = config.resolve()?;
            if let Some(engine) = engine {
                cfg.engines = match engine {
                    EngineArg::Basic => vec![EngineKind::Basic],
                    EngineArg::Extended => vec![EngineKind::Extended],
                    EngineArg::Both => vec![EngineKind::Basic, EngineKind::Extended],
                };
            }
            let out = run_experiment(&cfg)?;
            report::write_reports(&out_dir, &out)?;
            std::fs::write(
                out_dir.join("record.json"),
                serde_json::to_string_pretty(&out)?,
            )?;
            println!(
                "{} cells, config hash {}, reports in {}",
                out.cells.len(),
                out.config_hash,
                out_dir.display()
            );
            Ok(())
        }
        Command::Strain { results, method, out_dir } => {
            let saved: SavedMatches =
                serde_json::from_str(&std::fs::read_to_string(&results)?)?;
            let method: StrainMethod = method.into();
            let field = strain_field(
                &saved.grid,
                &saved.results,
                saved.engine,
                method,
                saved.subset_size,
            )?;
            let mut s = String::from("x,y,ex,ey,gxy\n");
            for iy in 0..saved.grid.ny {
                for ix in 0..saved.grid.nx {
                    let (x, y) = field.ex.node_center(ix, iy);
                    let (ex, ey, gxy) = (
                        field.ex.get(ix, iy),
                        field.ey.get(ix, iy),
                        field.gxy.get(ix, iy),
                    );
                    let cell = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
                    writeln!(s, "{x},{y},{},{},{}", cell(ex), cell(ey), cell(gxy)).unwrap();
                }
            }
            std::fs::create_dir_all(&out_dir)?;
            std::fs::write(out_dir.join("strain_field.csv"), s)?;
            println!(
                "strain field ({} nodes) written to {}/strain_field.csv",
                saved.grid.len(),
                out_dir.display()
            );
            Ok(())
        }
        Command::Verify => {
            let results = run_acceptance()?;
            let mut failed = 0;
            for r in &results {
                println!("{}", r.line());
                if !r.passed {
                    failed += 1;
                }
            }
            if failed > 0 {
                return Err(Error::Parameter(format!("{failed} criteria failed")));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Parameter(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
