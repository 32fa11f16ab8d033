//! Experiment configuration. Angles are in degrees in the file and in
//! radians everywhere past [`ExperimentConfig::load`].

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use qholo_core::gs::GsParams;
use qholo_core::metasurface::OpticalConfig;
use qholo_core::pipeline::DesignConfig;
use qholo_core::spad::SpadConfig;
use qholo_core::target::CanonicalLayout;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Ideal,
    Physical,
}

/// A user target: 8-bit amplitude and label images plus a descriptor that
/// maps label values to letters and phase differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetFiles {
    pub amplitude: PathBuf,
    pub labels: PathBuf,
    pub descriptor: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErasedImage {
    pub path: PathBuf,
    pub idler_deg: f64,
}

/// Input files; anything left unset is looked up in the output directory
/// under the names the other subcommands write.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    pub masks: Option<PathBuf>,
    pub holograms: Option<PathBuf>,
    pub intensity_map: Option<PathBuf>,
    pub reference_image: Option<PathBuf>,
    pub erased_images: Vec<ErasedImage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid_size: usize,
    /// Metasurface pixel pitch in meters.
    pub pitch: f64,
    pub optics: OpticalConfig,
    pub gs: GsParams,
    pub layout: CanonicalLayout,
    pub target: Option<TargetFiles>,
    pub tier: Tier,
    pub idler_angles_deg: Vec<f64>,
    pub signal_angles_deg: Vec<f64>,
    /// Idler polarizer used for the eraser-on sweep.
    pub sweep_idler_deg: f64,
    /// Also measure the sweeps with the detector model.
    pub sweep_monte_carlo: bool,
    pub spad: SpadConfig,
    pub inputs: Inputs,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            grid_size: 256,
            pitch: 0.7e-6,
            optics: OpticalConfig::default(),
            gs: GsParams::default(),
            layout: CanonicalLayout::default(),
            target: None,
            tier: Tier::Ideal,
            idler_angles_deg: vec![0.0, 45.0, 90.0, 135.0],
            signal_angles_deg: (0..13).map(|k| k as f64 * 15.0).collect(),
            sweep_idler_deg: 0.0,
            sweep_monte_carlo: false,
            spad: SpadConfig::default(),
            inputs: Inputs::default(),
            out: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// Reads a config file. A manifest written by a previous run (an object
    /// with a `config` member) is accepted as well.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut value: Value =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if let Some(inner) = value.get("config").filter(|_| value.get("command").is_some()) {
            value = inner.clone();
        }
        let config: Self =
            serde_json::from_value(value).with_context(|| format!("invalid config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.design().source_grid()?;
        self.optics.validate()?;
        self.gs.validate()?;
        self.spad.validate()?;
        let all = self.idler_angles_deg.iter().chain(&self.signal_angles_deg).chain([&self.sweep_idler_deg]);
        for a in all {
            if !a.is_finite() {
                bail!("polarizer angles must be finite");
            }
        }
        Ok(())
    }

    pub fn design(&self) -> DesignConfig {
        DesignConfig { grid_size: self.grid_size, pitch: self.pitch, layout: self.layout, gs: self.gs, optics: self.optics }
    }

    pub fn idler_angles(&self) -> Vec<f64> {
        self.idler_angles_deg.iter().map(|d| d.to_radians()).collect()
    }

    pub fn signal_angles(&self) -> Vec<f64> {
        self.signal_angles_deg.iter().map(|d| d.to_radians()).collect()
    }

    pub fn input_or_out(&self, given: &Option<PathBuf>, default: &str) -> PathBuf {
        given.clone().unwrap_or_else(|| self.out.join(default))
    }
}

/// File-name tag for an angle in degrees: `45`, `22.5`.
pub fn angle_tag(deg: f64) -> String {
    format!("{deg}")
}
