//! Experiment configuration: a serializable description of one benchmark
//! run, with a canonical JSON form and a content hash for reproducibility.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::dic::EngineKind;
use crate::error::{Error, Result};
use crate::fields::{
    affine_field, max_abs_v, rigid_translation, CantileverField, CantileverParams,
    DeformationField, ShiftedField,
};

/// The imposed deformation field, in normalized image coordinates
/// (the image spans the unit square).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum FieldConfig {
    /// Bending of an end-loaded cantilever filling the image; the beam
    /// axis runs along the horizontal centerline.
    Cantilever,
    /// Uniform displacement `(u, v)`.
    RigidTranslation { u: f64, v: f64 },
    /// Linear displacement with constant gradients.
    Affine { u: f64, v: f64, ux: f64, uy: f64, vx: f64, vy: f64 },
}

impl FieldConfig {
    /// Instantiates the field. `amplitude_scale` multiplies the cantilever
    /// displacements and is ignored by the exact calibration fields.
    pub fn build(&self, amplitude_scale: f64) -> Result<Box<dyn DeformationField>> {
        match *self {
            FieldConfig::Cantilever => {
                let beam = CantileverField::new(CantileverParams::normalized_benchmark())?
                    .allow_outside()
                    .with_amplitude_scale(amplitude_scale)?;
                // image y in [0, 1] maps to beam y in [-c, c]
                Ok(Box::new(ShiftedField::new(beam, 0.0, -0.5)))
            }
            FieldConfig::RigidTranslation { u, v } => Ok(Box::new(rigid_translation(u, v))),
            FieldConfig::Affine { u, v, ux, uy, vx, vy } => {
                Ok(Box::new(affine_field(ux, uy, vx, vy, u, v)))
            }
        }
    }
}

/// How the cantilever displacement amplitude is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum AmplitudeSpec {
    /// Scale the field so the largest `|v|` over the image equals `value`
    /// in normalized units (e.g. 0.002 is one pixel at size 500).
    VMaxNorm { value: f64 },
    /// Use the multiplier directly.
    Scale { value: f64 },
}

impl Default for AmplitudeSpec {
    fn default() -> Self {
        AmplitudeSpec::VMaxNorm { value: 0.002 }
    }
}

impl AmplitudeSpec {
    /// Resolves to a concrete amplitude multiplier for `field`.
    pub fn resolve(&self, field: &FieldConfig) -> Result<f64> {
        match *self {
            AmplitudeSpec::Scale { value } => {
                if !(value.is_finite() && value > 0.0) {
                    return Err(Error::Config(format!("amplitude scale must be positive, got {value}")));
                }
                Ok(value)
            }
            AmplitudeSpec::VMaxNorm { value } => {
                if !(value.is_finite() && value > 0.0) {
                    return Err(Error::Config(format!(
                        "amplitude target must be positive, got {value}"
                    )));
                }
                if !matches!(field, FieldConfig::Cantilever) {
                    return Err(Error::Config(
                        "v-max amplitude targets only apply to the cantilever field".into(),
                    ));
                }
                let unit = field.build(1.0)?;
                let vmax = max_abs_v(unit.as_ref(), (0.0, 1.0), (0.0, 1.0), 400);
                if vmax <= 0.0 {
                    return Err(Error::Config("field has zero deflection".into()));
                }
                Ok(value / vmax)
            }
        }
    }
}

fn default_engines() -> Vec<EngineKind> {
    vec![EngineKind::Basic, EngineKind::Extended]
}

/// One benchmark experiment: a sweep over image sizes and subset sizes for
/// a fixed speckle geometry, deformation field and engine set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub image_sizes: Vec<usize>,
    /// Subset side lengths (odd).
    pub subset_sizes: Vec<usize>,
    /// Grid stride in pixels.
    pub stride: usize,
    /// Speckle diameter as a fraction of the image side.
    pub r_d: f64,
    /// Speckle center spacing as a fraction of the image side.
    pub r_a: f64,
    pub seed: u64,
    pub field: FieldConfig,
    #[serde(default)]
    pub amplitude: AmplitudeSpec,
    #[serde(default = "default_engines")]
    pub engines: Vec<EngineKind>,
    /// Basic engine search radius in pixels; `None` derives it from the
    /// field's largest expected displacement.
    #[serde(default)]
    pub search_radius: Option<usize>,
}

impl ExperimentConfig {
    /// The quick benchmark: image sizes 500 and 1000.
    pub fn desk_scale() -> Self {
        ExperimentConfig {
            name: "desk".into(),
            image_sizes: vec![500, 1000],
            subset_sizes: vec![21, 41, 61, 101],
            stride: 25,
            r_d: 0.01,
            r_a: 0.01,
            seed: 42,
            field: FieldConfig::Cantilever,
            amplitude: AmplitudeSpec::default(),
            engines: default_engines(),
            search_radius: None,
        }
    }

    /// The full sweep, adding the 2000-pixel image size.
    pub fn full_protocol() -> Self {
        let mut cfg = Self::desk_scale();
        cfg.name = "full".into();
        cfg.image_sizes.push(2000);
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Config("experiment name must not be empty".into()));
        }
        if self.image_sizes.is_empty() || self.subset_sizes.is_empty() {
            return Err(Error::Config("image_sizes and subset_sizes must not be empty".into()));
        }
        for &s in &self.image_sizes {
            if s < 64 {
                return Err(Error::Config(format!("image size {s} is below the minimum of 64")));
            }
        }
        for &ss in &self.subset_sizes {
            if ss < 5 || ss % 2 == 0 {
                return Err(Error::Config(format!("subset size {ss} must be odd and >= 5")));
            }
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be >= 1".into()));
        }
        for (name, v) in [("r_d", self.r_d), ("r_a", self.r_a)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must be in (0, 1), got {v}")));
            }
        }
        if self.engines.is_empty() {
            return Err(Error::Config("at least one engine must be selected".into()));
        }
        self.amplitude.resolve(&self.field).map(|_| ())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Canonical JSON form: object keys sorted at every level, no
    /// insignificant whitespace. Equal configs always hash equal.
    pub fn canonical_json(&self) -> Result<String> {
        let value = serde_json::to_value(self)?;
        Ok(serde_json::to_string(&sort_value(value))?)
    }

    /// SHA-256 of the canonical JSON, hex encoded.
    pub fn hash(&self) -> Result<String> {
        let mut hasher = Sha256::new();
        hasher.update(self.canonical_json()?.as_bytes());
        let digest = hasher.finalize();
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

fn sort_value(v: Value) -> Value {
    match v {
        Value::Object(map) => {
            let sorted: std::collections::BTreeMap<String, Value> =
                map.into_iter().map(|(k, v)| (k, sort_value(v))).collect();
            Value::Object(sorted.into_iter().collect())
        }
        Value::Array(items) => Value::Array(items.into_iter().map(sort_value).collect()),
        other => other,
    }
}
