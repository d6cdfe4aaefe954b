//! Synthetic speckle image generation.
//!
//! A speckle field is laid out on a jittered grid in normalized surface
//! coordinates (specimen length = 1): the unit square is divided into cells
//! of pitch `r_a` and one speckle center is placed uniformly at random in
//! each cell. Speckles are opaque rigid disks of diameter `r_d`; they may
//! overlap. Rasterization assigns each pixel an 8-bit intensity
//! proportional to the fraction of its square covered by the union of
//! disks, saturating at 255. The deformed frame translates every disk by
//! the displacement field evaluated at its undeformed center.
//!
//! The random generator is ChaCha8 seeded from the 64-bit `seed`, which is
//! portable across platforms; identical specs reproduce identical fields
//! bit for bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fields::DeformationField;

/// Hard cap on generated speckle centers.
pub const MAX_SPECKLES: usize = 4_000_000;

/// Supersampling grid per boundary pixel: 16 x 16 = 256 samples, one per
/// representable gray level.
const SUPERSAMPLE: usize = 16;

/// Name of the rasterizer's random generator, recorded in metadata.
pub const RNG_ALGORITHM: &str = "chacha8";

/// Speckle layout parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct SpeckleSpec {
    /// Speckle diameter as a fraction of the specimen length.
    pub r_d: f64,
    /// Average speckle spacing (grid pitch) as a fraction of the specimen
    /// length.
    pub r_a: f64,
    /// Seed for the speckle placement generator.
    pub seed: u64,
}

impl SpeckleSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_d > 0.0 && self.r_d <= 1.0) {
            return Err(Error::Parameter(format!("r_d must be in (0, 1], got {}", self.r_d)));
        }
        if !(self.r_a > 0.0 && self.r_a <= 1.0) {
            return Err(Error::Parameter(format!("r_a must be in (0, 1], got {}", self.r_a)));
        }
        Ok(())
    }
}

/// Randomized speckle layout in normalized surface coordinates.
#[derive(Debug, Clone)]
pub struct SpeckleField {
    pub centers: Vec<(f64, f64)>,
    /// Disk radius, `r_d / 2`.
    pub radius: f64,
    /// Cell pitch, `r_a`.
    pub grid_pitch: f64,
}

/// Places one speckle per grid cell of pitch `r_a`, jittered uniformly
/// within the cell and clipped to the unit square.
pub fn generate_speckles(spec: &SpeckleSpec) -> Result<SpeckleField> {
    spec.validate()?;
    let cells = (1.0 / spec.r_a).ceil() as usize;
    let count = cells.checked_mul(cells).filter(|&n| n <= MAX_SPECKLES).ok_or_else(|| {
        Error::Resource(format!("{cells}x{cells} speckles exceed the cap of {MAX_SPECKLES}"))
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut centers = Vec::with_capacity(count);
    for row in 0..cells {
        for col in 0..cells {
            let cx = (col as f64 + rng.gen::<f64>()) * spec.r_a;
            let cy = (row as f64 + rng.gen::<f64>()) * spec.r_a;
            centers.push((cx.min(1.0), cy.min(1.0)));
        }
    }
    Ok(SpeckleField { centers, radius: spec.r_d / 2.0, grid_pitch: spec.r_a })
}

/// 8-bit single-channel raster, row-major, top row first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        GrayImage { width, height, pixels: vec![0; width * height] }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Dimension(format!(
                "{}x{} image needs {} pixels, got {}",
                width,
                height,
                width * height,
                pixels.len()
            )));
        }
        Ok(GrayImage { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn row(&self, y: usize) -> &[u8] {
        &self.pixels[y * self.width..(y + 1) * self.width]
    }

    /// Writes the image as binary PGM (`P5`, maxval 255).
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.pixels)?;
        Ok(())
    }

    /// Reads a binary PGM (`P5`, maxval 255) image.
    pub fn read_pgm(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        parse_pgm(&bytes)
    }
}

fn parse_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String> {
        // skip whitespace and comment lines
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token(bytes)? != "P5" {
        return Err(Error::Format("expected binary PGM magic 'P5'".into()));
    }
    let width: usize =
        token(bytes)?.parse().map_err(|_| Error::Format("bad PGM width".into()))?;
    let height: usize =
        token(bytes)?.parse().map_err(|_| Error::Format("bad PGM height".into()))?;
    let maxval: usize =
        token(bytes)?.parse().map_err(|_| Error::Format("bad PGM maxval".into()))?;
    if maxval != 255 {
        return Err(Error::Format(format!("unsupported PGM maxval {maxval}, expected 255")));
    }
    pos += 1; // single whitespace byte after maxval
    let need = width * height;
    let data = bytes.get(pos..pos + need).ok_or_else(|| {
        Error::Format(format!("PGM payload short: need {need} bytes"))
    })?;
    GrayImage::from_pixels(width, height, data.to_vec())
}

struct Disk {
    cx: f64,
    cy: f64,
}

/// Spatial bucket index over disks, so each pixel only tests nearby disks.
struct DiskIndex {
    disks: Vec<Disk>,
    radius: f64,
    buckets: Vec<Vec<u32>>,
    bucket_size: f64,
    nb: usize,
}

impl DiskIndex {
    fn build(disks: Vec<Disk>, radius: f64, image_size: usize) -> Self {
        let bucket_size = (2.0 * radius + 2.0).max(8.0);
        let nb = (image_size as f64 / bucket_size).ceil() as usize + 1;
        let mut buckets = vec![Vec::new(); nb * nb];
        let clamp = |b: f64| (b.max(0.0) as usize).min(nb - 1);
        // pad by one pixel: a pixel center up to HALF_DIAG outside the
        // disk still takes boundary coverage from it
        let reach = radius + 1.0;
        for (i, d) in disks.iter().enumerate() {
            let b0x = clamp(((d.cx - reach) / bucket_size).floor());
            let b1x = clamp(((d.cx + reach) / bucket_size).floor());
            let b0y = clamp(((d.cy - reach) / bucket_size).floor());
            let b1y = clamp(((d.cy + reach) / bucket_size).floor());
            for by in b0y..=b1y {
                for bx in b0x..=b1x {
                    buckets[by * nb + bx].push(i as u32);
                }
            }
        }
        DiskIndex { disks, radius, buckets, bucket_size, nb }
    }

    fn candidates(&self, px: usize, py: usize) -> &[u32] {
        let bx = ((px as f64 + 0.5) / self.bucket_size) as usize;
        let by = ((py as f64 + 0.5) / self.bucket_size) as usize;
        &self.buckets[by.min(self.nb - 1) * self.nb + bx.min(self.nb - 1)]
    }
}

/// Rasterizes the speckle field into an 8-bit image.
///
/// With a displacement field, each disk center is translated by
/// `image_size * (u, v)` evaluated at the undeformed center (Lagrangian
/// convention). Coverage outside the image is discarded.
pub fn rasterize(
    field: &SpeckleField,
    displacement: Option<&dyn DeformationField>,
    image_size: usize,
) -> Result<GrayImage> {
    if image_size < 16 {
        return Err(Error::Dimension(format!("image size {image_size} < 16")));
    }
    if field.centers.is_empty() {
        return Err(Error::Parameter("empty speckle field".into()));
    }
    let size = image_size as f64;
    let radius = field.radius * size;
    let mut disks = Vec::with_capacity(field.centers.len());
    for &(cx, cy) in &field.centers {
        let (u, v) = match displacement {
            Some(f) => f.displacement(cx, cy)?,
            None => (0.0, 0.0),
        };
        let dcx = cx * size + u * size;
        let dcy = cy * size + v * size;
        // drop disks that cannot touch the image
        if dcx + radius < 0.0 || dcx - radius > size || dcy + radius < 0.0 || dcy - radius > size
        {
            continue;
        }
        disks.push(Disk { cx: dcx, cy: dcy });
    }
    let index = DiskIndex::build(disks, radius, image_size);

    let mut img = GrayImage::new(image_size, image_size);
    img.pixels
        .par_chunks_mut(image_size)
        .enumerate()
        .for_each(|(py, row)| {
            for (px, out) in row.iter_mut().enumerate() {
                *out = pixel_intensity(&index, px, py);
            }
        });
    Ok(img)
}

const HALF_DIAG: f64 = std::f64::consts::SQRT_2 / 2.0;

fn pixel_intensity(index: &DiskIndex, px: usize, py: usize) -> u8 {
    let pcx = px as f64 + 0.5;
    let pcy = py as f64 + 0.5;
    let r = index.radius;
    let mut boundary: [u32; 64] = [0; 64];
    let mut nb = 0usize;
    let mut overflow: Vec<u32> = Vec::new();
    for &id in index.candidates(px, py) {
        let d = &index.disks[id as usize];
        let dist = ((d.cx - pcx).powi(2) + (d.cy - pcy).powi(2)).sqrt();
        if dist <= r - HALF_DIAG {
            return 255; // pixel square entirely inside this disk
        }
        if dist < r + HALF_DIAG {
            if nb < boundary.len() {
                boundary[nb] = id;
                nb += 1;
            } else {
                overflow.push(id);
            }
        }
    }
    if nb == 0 {
        return 0;
    }
    // supersample the pixel square against the union of boundary disks
    let r2 = r * r;
    let mut covered = 0u32;
    for sy in 0..SUPERSAMPLE {
        let y = py as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64;
        for sx in 0..SUPERSAMPLE {
            let x = px as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64;
            let inside = boundary[..nb]
                .iter()
                .chain(overflow.iter())
                .any(|&id| {
                    let d = &index.disks[id as usize];
                    (d.cx - x).powi(2) + (d.cy - y).powi(2) <= r2
                });
            if inside {
                covered += 1;
            }
        }
    }
    let total = (SUPERSAMPLE * SUPERSAMPLE) as f64;
    (255.0 * covered as f64 / total).round() as u8
}

/// Generates the reference/deformed image pair for a deformation field.
pub fn make_image_pair(
    spec: &SpeckleSpec,
    field: &dyn DeformationField,
    image_size: usize,
) -> Result<(GrayImage, GrayImage)> {
    let speckles = generate_speckles(spec)?;
    let reference = rasterize(&speckles, None, image_size)?;
    let deformed = rasterize(&speckles, Some(field), image_size)?;
    Ok((reference, deformed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::rigid_translation;

    #[test]
    fn grid_cell_counts() {
        let spec = SpeckleSpec { r_d: 0.5, r_a: 0.5, seed: 1 };
        let f = generate_speckles(&spec).unwrap();
        assert_eq!(f.centers.len(), 4);
        // one center per quadrant cell
        for (i, &(cx, cy)) in f.centers.iter().enumerate() {
            let col = i % 2;
            let row = i / 2;
            assert!(cx >= col as f64 * 0.5 && cx <= (col + 1) as f64 * 0.5);
            assert!(cy >= row as f64 * 0.5 && cy <= (row + 1) as f64 * 0.5);
        }

        let spec = SpeckleSpec { r_d: 0.01, r_a: 0.01, seed: 9 };
        assert_eq!(generate_speckles(&spec).unwrap().centers.len(), 10_000);
    }

    #[test]
    fn same_seed_reproduces_centers() {
        let spec = SpeckleSpec { r_d: 0.01, r_a: 0.02, seed: 42 };
        let a = generate_speckles(&spec).unwrap();
        let b = generate_speckles(&spec).unwrap();
        assert_eq!(a.centers, b.centers);
        let other = SpeckleSpec { seed: 43, ..spec };
        assert_ne!(generate_speckles(&other).unwrap().centers, a.centers);
    }

    #[test]
    fn speckle_cap_is_enforced() {
        let spec = SpeckleSpec { r_d: 1e-4, r_a: 1e-4, seed: 0 };
        assert!(matches!(generate_speckles(&spec), Err(Error::Resource(_))));
    }

    #[test]
    fn full_and_empty_pixels() {
        // single disk centered in a 64 px image, radius 10 px
        let field = SpeckleField {
            centers: vec![(0.5, 0.5)],
            radius: 10.0 / 64.0,
            grid_pitch: 1.0,
        };
        let img = rasterize(&field, None, 64).unwrap();
        assert_eq!(img.get(32, 32), 255); // deep inside
        assert_eq!(img.get(2, 2), 0); // far outside
    }

    #[test]
    fn disk_coverage_mass_matches_area() {
        for &r_px in &[5.0, 10.0, 15.0] {
            let field = SpeckleField {
                centers: vec![(0.5, 0.5)],
                radius: r_px / 64.0,
                grid_pitch: 1.0,
            };
            let img = rasterize(&field, None, 64).unwrap();
            let mass: f64 = img.pixels().iter().map(|&p| p as f64 / 255.0).sum();
            let area = std::f64::consts::PI * r_px * r_px;
            assert!(
                (mass - area).abs() / area < 0.01,
                "r={r_px}: mass {mass} vs area {area}"
            );
        }
    }

    #[test]
    fn intensity_monotone_as_disk_sweeps_over_pixel() {
        // slide a disk toward a pixel center; coverage never decreases
        let mut last = 0u8;
        for step in 0..30 {
            let cx = (10.0 + step as f64 * 0.5) / 64.0;
            let field =
                SpeckleField { centers: vec![(cx, 0.5)], radius: 6.0 / 64.0, grid_pitch: 1.0 };
            let img = rasterize(&field, None, 64).unwrap();
            let v = img.get(25, 32);
            if (cx * 64.0) <= 25.5 {
                assert!(v >= last, "intensity dropped while approaching");
                last = v;
            }
        }
    }

    #[test]
    fn identity_field_reproduces_reference() {
        let spec = SpeckleSpec { r_d: 0.04, r_a: 0.04, seed: 7 };
        let id = rigid_translation(0.0, 0.0);
        let (reference, deformed) = make_image_pair(&spec, &id, 128).unwrap();
        assert_eq!(reference, deformed);
    }

    #[test]
    fn integer_shift_moves_columns() {
        // 3 px shift at size 256: 3/256 is exactly representable
        let spec = SpeckleSpec { r_d: 0.04, r_a: 0.04, seed: 11 };
        let shift = rigid_translation(3.0 / 256.0, 0.0);
        let (reference, deformed) = make_image_pair(&spec, &shift, 256).unwrap();
        for y in 0..256 {
            for x in 20..236 {
                assert_eq!(
                    deformed.get(x + 3, y),
                    reference.get(x, y),
                    "mismatch at ({x}, {y})"
                );
            }
        }
    }

    #[test]
    fn pgm_round_trip() {
        let spec = SpeckleSpec { r_d: 0.05, r_a: 0.05, seed: 3 };
        let f = generate_speckles(&spec).unwrap();
        let img = rasterize(&f, None, 64).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        img.write_pgm(&path).unwrap();
        let back = GrayImage::read_pgm(&path).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn undersized_image_rejected() {
        let spec = SpeckleSpec { r_d: 0.05, r_a: 0.05, seed: 3 };
        let f = generate_speckles(&spec).unwrap();
        assert!(rasterize(&f, None, 8).is_err());
    }
}
