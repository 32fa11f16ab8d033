//! End-to-end workflows: canonical design, ideal and physical image tiers,
//! heralded images, polarizer sweeps and simulated acquisition.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};
use crate::field::{ComplexField, GridSpec};
use crate::gs::{modified_gs, reconstruct_on, ConvergenceReport, GsParams, PhaseMaskPair};
use crate::metasurface::{image_at_focus, image_grid_for, synthesize, ImagePlaneSampler, MetasurfaceProfile, OpticalConfig};
use crate::metrics::{RegionMask, SweepSample};
use crate::quantum::{
    apply_metasurface, bell_state, heralded_intensity, project_idler, project_signal_polarizer, quantum_hologram,
    unheralded_intensity, IntensityMap, PolarizationKet,
};
use crate::spad::{accumulate_subtract, simulate_background, simulate_frames, FrameStack, SpadConfig};
use crate::target::{canonical_hdva, CanonicalLayout, TargetHologram};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DesignConfig {
    pub grid_size: usize,
    /// Metasurface pixel pitch in meters.
    pub pitch: f64,
    pub layout: CanonicalLayout,
    pub gs: GsParams,
    pub optics: OpticalConfig,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self {
            grid_size: 256,
            pitch: 0.7e-6,
            layout: CanonicalLayout::default(),
            gs: GsParams::default(),
            optics: OpticalConfig::default(),
        }
    }
}

impl DesignConfig {
    pub fn source_grid(&self) -> Result<GridSpec> {
        GridSpec::square(self.grid_size, self.pitch)
    }
}

/// The two image-plane holograms, shared between states.
#[derive(Debug, Clone)]
pub struct HologramPair {
    pub psi_l: Arc<ComplexField>,
    pub psi_r: Arc<ComplexField>,
}

#[derive(Debug, Clone)]
pub struct Design {
    pub target: TargetHologram,
    pub masks: PhaseMaskPair,
    pub report: ConvergenceReport,
    /// Ideal-tier holograms on the image-plane grid.
    pub ideal: HologramPair,
}

/// Runs the modified GS on `target` with a uniform unit-energy source.
pub fn design(target: TargetHologram, config: &DesignConfig) -> Result<Design> {
    let source_grid = GridSpec::new(target.grid().width, target.grid().height, config.pitch)?;
    let source = ComplexField::uniform_unit_energy(source_grid);
    let (masks, report) = modified_gs(&target, &source, &config.gs)?;
    let image_grid = image_grid_for(&source_grid, &config.optics)?;
    let psi_l = reconstruct_on(image_grid, &masks.phi_l, &source)?;
    let psi_r = reconstruct_on(image_grid, &masks.phi_r, &source)?;
    let target = target.relabelled(image_grid)?;
    Ok(Design { target, masks, report, ideal: HologramPair { psi_l: Arc::new(psi_l), psi_r: Arc::new(psi_r) } })
}

pub fn design_canonical(config: &DesignConfig) -> Result<Design> {
    let grid = config.source_grid()?;
    design(canonical_hdva(grid, config.layout)?, config)
}

/// Where heralded images are formed: directly on the image grid (ideal) or
/// on a padded focal-plane grid that is binned back to image pixels.
#[derive(Debug, Clone)]
pub struct ImageTier {
    pub pair: HologramPair,
    pub sampler: Option<Arc<ImagePlaneSampler>>,
    pub aliasing_warning: bool,
}

impl ImageTier {
    pub fn ideal(pair: HologramPair) -> Self {
        Self { pair, sampler: None, aliasing_warning: false }
    }

    /// Physical tier: the synthesized metasurface under LCP and RCP
    /// illumination, propagated over the focal length.
    pub fn physical(masks: &PhaseMaskPair, optics: &OpticalConfig) -> Result<(Self, MetasurfaceProfile)> {
        let profile = synthesize(masks, optics)?;
        let l = image_at_focus(&profile, &PolarizationKet::left(), optics)?;
        let r = image_at_focus(&profile, &PolarizationKet::right(), optics)?;
        let sampler = ImagePlaneSampler::new(l.field.grid(), &profile.grid, optics)?;
        let tier = Self {
            pair: HologramPair { psi_l: Arc::new(l.field), psi_r: Arc::new(r.field) },
            sampler: Some(Arc::new(sampler)),
            aliasing_warning: l.aliasing_warning || r.aliasing_warning,
        };
        Ok((tier, profile))
    }

    /// Brings a map on the tier's native grid to the image grid.
    pub fn to_image(&self, map: IntensityMap) -> Result<IntensityMap> {
        match &self.sampler {
            None => Ok(map),
            Some(s) => IntensityMap::analytic(*s.image_grid(), s.bin(&map.values)?),
        }
    }

    /// Signal image heralded by an idler behind a linear polarizer at
    /// `phi_i`, normalized by the herald probability; `None` gives the
    /// no-eraser image.
    pub fn heralded(&self, phi_i: Option<f64>) -> Result<IntensityMap> {
        let state = quantum_hologram(self.pair.psi_l.clone(), self.pair.psi_r.clone())?;
        let map = match phi_i {
            None => unheralded_intensity(&state)?,
            Some(phi) => {
                let (h, p) = project_idler(&state, Some(&PolarizationKet::linear(phi)))?;
                if !(p > 0.0) {
                    return Err(validation(format!("idler polarizer at {phi} rad never heralds")));
                }
                heralded_intensity(&h)?.scaled(1.0 / p)
            }
        };
        self.to_image(map)
    }

    /// Image with a linear polarizer `phi_s` on the signal arm, for an
    /// idler polarizer `phi_i` (`None`: idler detected without polarizer).
    /// Not renormalized, so sweep curves keep their relative scale.
    pub fn signal_projected(&self, phi_i: Option<f64>, phi_s: f64) -> Result<IntensityMap> {
        let state = apply_metasurface(&bell_state(), self.pair.psi_l.clone(), self.pair.psi_r.clone())?;
        let state = project_signal_polarizer(&state, phi_s)?;
        let map = match phi_i {
            None => unheralded_intensity(&state)?,
            Some(phi) => heralded_intensity(&project_idler(&state, Some(&PolarizationKet::linear(phi)))?.0)?,
        };
        self.to_image(map)
    }
}

/// Mean intensity of every letter in `masks`; absent letters read 0.
pub fn letter_means(map: &IntensityMap, masks: &RegionMask) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (l, px) in &masks.letter_pixels {
        out[l.index()] = map.mean_over(px);
    }
    out
}

/// `count` evenly spaced signal polarizer angles covering `[0, pi]`.
pub fn sweep_angles(count: usize) -> Vec<f64> {
    let step = std::f64::consts::PI / (count.max(2) - 1) as f64;
    (0..count).map(|k| k as f64 * step).collect()
}

/// Noiseless polarizer sweep.
pub fn sweep(tier: &ImageTier, phi_i: Option<f64>, angles: &[f64], masks: &RegionMask) -> Result<Vec<SweepSample>> {
    angles
        .iter()
        .map(|&phi_s| {
            let map = tier.signal_projected(phi_i, phi_s)?;
            Ok(SweepSample { phi_s, intensity: letter_means(&map, masks) })
        })
        .collect()
}

/// Simulated detector run: signal frames driven by `map` minus a blocked
/// background run with the same settings.
pub fn measure(map: &IntensityMap, config: &SpadConfig, background: &FrameStack) -> Result<IntensityMap> {
    let frames = simulate_frames(map, config)?;
    accumulate_subtract(&frames, background)
}

/// Background acquisition for the same detector settings, with its own
/// random stream.
pub fn background_run(grid: GridSpec, config: &SpadConfig) -> Result<FrameStack> {
    let cfg = SpadConfig { seed: config.seed ^ 0x6261_636b_6772_6e64, ..*config };
    simulate_background(grid, &cfg)
}

/// Polarizer sweep measured with the detector model; each angle gets its
/// own seed and the photon budget is scaled by the angle's share of the
/// brightest frame so relative intensities survive.
pub fn measured_sweep(
    tier: &ImageTier,
    phi_i: Option<f64>,
    angles: &[f64],
    masks: &RegionMask,
    config: &SpadConfig,
) -> Result<Vec<SweepSample>> {
    let maps: Vec<IntensityMap> = angles.iter().map(|&a| tier.signal_projected(phi_i, a)).collect::<Result<_>>()?;
    let peak = maps.iter().map(|m| m.total_weight).fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(validation("sweep has no signal at any angle"));
    }
    let grid = maps[0].grid;
    let background = background_run(grid, config)?;
    maps.iter()
        .zip(angles)
        .enumerate()
        .map(|(k, (map, &phi_s))| {
            let cfg = SpadConfig {
                signal_photon_budget: config.signal_photon_budget * map.total_weight / peak,
                seed: config.seed.wrapping_add(k as u64 + 1),
                ..*config
            };
            let measured = if map.total_weight > 0.0 {
                measure(map, &cfg, &background)?
            } else {
                measure(map, &SpadConfig { signal_photon_budget: 0.0, ..cfg }, &background)?
            };
            Ok(SweepSample { phi_s, intensity: letter_means(&measured, masks) })
        })
        .collect()
}
