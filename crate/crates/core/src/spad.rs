//! Heralded SPAD-camera acquisition.
//!
//! Each frame collects Poisson counts with mean `budget * I_p / sum(I) + dark`
//! per pixel, clamped to the counter depth. Random streams are keyed by
//! `(seed, frame, pixel)` so a stack does not depend on thread scheduling.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_distr::{Distribution, Poisson};
use rand_pcg::Pcg64Mcg;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::field::GridSpec;
use crate::quantum::IntensityMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpadConfig {
    pub frames: usize,
    /// Seconds per frame.
    pub frame_duration: f64,
    pub max_count: u8,
    /// Coincidence gate in seconds. Kept for the record; it only enters
    /// through the per-frame mean.
    pub gate_window: f64,
    /// Herald events per second, for the record as above.
    pub herald_rate: f64,
    /// Expected detected signal photons per frame over the whole sensor.
    pub signal_photon_budget: f64,
    /// Expected background counts per pixel per frame.
    pub dark_rate: f64,
    pub seed: u64,
}

impl Default for SpadConfig {
    fn default() -> Self {
        Self {
            frames: 600,
            frame_duration: 0.1,
            max_count: 255,
            gate_window: 18e-9,
            herald_rate: 1e5,
            signal_photon_budget: 5e4,
            dark_rate: 1.0,
            seed: 0,
        }
    }
}

impl SpadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(validation("frames must be at least 1"));
        }
        if self.max_count == 0 {
            return Err(validation("max_count must be at least 1"));
        }
        let rates = [
            ("frame_duration", self.frame_duration),
            ("gate_window", self.gate_window),
            ("herald_rate", self.herald_rate),
            ("signal_photon_budget", self.signal_photon_budget),
            ("dark_rate", self.dark_rate),
        ];
        for (name, v) in rates {
            if !(v.is_finite() && v >= 0.0) {
                return Err(validation(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack {
    pub grid: GridSpec,
    /// Frame-major counts: `counts[f * grid.len() + p]`.
    pub counts: Vec<u8>,
    pub config: SpadConfig,
    /// Number of (frame, pixel) draws that hit `max_count` and were clamped.
    pub clamped_events: u64,
}

impl FrameStack {
    pub fn frames(&self) -> usize {
        self.config.frames
    }

    pub fn frame(&self, f: usize) -> &[u8] {
        let n = self.grid.len();
        &self.counts[f * n..(f + 1) * n]
    }

    /// Per-pixel sum over frames.
    pub fn accumulate(&self) -> Vec<u64> {
        let n = self.grid.len();
        (0..n)
            .into_par_iter()
            .map(|p| (0..self.frames()).map(|f| self.counts[f * n + p] as u64).sum())
            .collect()
    }
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn stream_key(seed: u64, frame: usize, pixel: usize) -> u64 {
    mix(mix(mix(seed) ^ frame as u64) ^ pixel as u64)
}

fn draw(mean: f64, key: u64, max: u8) -> (u8, bool) {
    if mean <= 0.0 {
        return (0, false);
    }
    let mut rng = Pcg64Mcg::seed_from_u64(key);
    let k: f64 = Poisson::new(mean).expect("positive finite mean").sample(&mut rng);
    if k >= max as f64 {
        (max, k > max as f64)
    } else {
        (k as u8, false)
    }
}

fn simulate_means(grid: GridSpec, means: &[f64], config: &SpadConfig) -> FrameStack {
    let n = grid.len();
    let mut counts = vec![0u8; n * config.frames];
    let clamped: u64 = counts
        .par_chunks_mut(n)
        .enumerate()
        .map(|(f, frame)| {
            let mut clamped = 0u64;
            for (p, c) in frame.iter_mut().enumerate() {
                let (v, hit) = draw(means[p], stream_key(config.seed, f, p), config.max_count);
                *c = v;
                clamped += hit as u64;
            }
            clamped
        })
        .sum();
    FrameStack { grid, counts, config: *config, clamped_events: clamped }
}

/// Per-pixel Poisson means for one frame.
pub fn frame_means(intensity: &IntensityMap, config: &SpadConfig) -> Result<Vec<f64>> {
    config.validate()?;
    if intensity.measured {
        return Err(validation("frames must be driven by an analytic intensity map"));
    }
    let total: f64 = intensity.values.iter().sum();
    if config.signal_photon_budget > 0.0 && total <= 0.0 {
        return Err(validation("intensity map has zero total with a nonzero photon budget"));
    }
    let scale = if total > 0.0 { config.signal_photon_budget / total } else { 0.0 };
    Ok(intensity.values.iter().map(|v| v * scale + config.dark_rate).collect())
}

pub fn simulate_frames(intensity: &IntensityMap, config: &SpadConfig) -> Result<FrameStack> {
    let means = frame_means(intensity, config)?;
    Ok(simulate_means(intensity.grid, &means, config))
}

/// Blocked-signal acquisition: dark counts only.
pub fn simulate_background(grid: GridSpec, config: &SpadConfig) -> Result<FrameStack> {
    config.validate()?;
    grid.validate()?;
    let means = vec![config.dark_rate; grid.len()];
    Ok(simulate_means(grid, &means, config))
}

/// `sum_f signal - sum_f background`; negative pixels are kept.
pub fn accumulate_subtract(signal: &FrameStack, background: &FrameStack) -> Result<IntensityMap> {
    if !signal.grid.same_shape(&background.grid) || signal.grid.pitch != background.grid.pitch {
        return Err(validation("signal and background stacks are on different grids"));
    }
    if signal.frames() != background.frames() {
        return Err(validation(format!(
            "frame counts differ: {} vs {}",
            signal.frames(),
            background.frames()
        )));
    }
    let (s, b) = (signal.accumulate(), background.accumulate());
    let values = s.iter().zip(&b).map(|(s, b)| *s as f64 - *b as f64).collect();
    IntensityMap::measured(signal.grid, values)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StackManifest {
    width: usize,
    height: usize,
    pitch: f64,
    frames: usize,
    layout: String,
    clamped_events: u64,
    config: SpadConfig,
}

/// Writes `<path>` as raw u8 counts (frame-major, row-major) and
/// `<path>.json` as its manifest.
pub fn write_frame_stack(path: &Path, stack: &FrameStack) -> Result<()> {
    fs::write(path, &stack.counts)?;
    let manifest = StackManifest {
        width: stack.grid.width,
        height: stack.grid.height,
        pitch: stack.grid.pitch,
        frames: stack.frames(),
        layout: "u8 frame-major row-major".into(),
        clamped_events: stack.clamped_events,
        config: stack.config,
    };
    fs::write(crate::pfm::sidecar_path(path), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn read_frame_stack(path: &Path) -> Result<FrameStack> {
    let manifest: StackManifest = serde_json::from_str(&fs::read_to_string(crate::pfm::sidecar_path(path))?)?;
    let counts = fs::read(path)?;
    let grid = GridSpec::new(manifest.width, manifest.height, manifest.pitch)?;
    if counts.len() != grid.len() * manifest.frames || manifest.frames != manifest.config.frames {
        return Err(Error::Format("frame stack size does not match its manifest".into()));
    }
    Ok(FrameStack { grid, counts, config: manifest.config, clamped_events: manifest.clamped_events })
}
