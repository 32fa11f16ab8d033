//! Spin-multiplexed metasurface synthesis and its Jones-matrix response.
//!
//! A geometric-phase metasurface with transmission phase `t(x, y)` (nanopillar
//! rotation `t / 2`) maps `|L> -> e^{i t} |R>` and `|R> -> e^{-i t} |L>`.
//! The profile combines two phase-only holograms with a hyperbolic lens so that
//! left-circular input focuses the `phi_L` hologram and right-circular input
//! the `phi_R` hologram at the back focal plane.

use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map};

use crate::error::{validation, Error, Result};
use crate::field::{lens_phase_at, propagate, transfer_function_aliased, ComplexField, GridSpec, LensKind, PhaseMask};
use crate::gs::PhaseMaskPair;
use crate::pfm;
use crate::quantum::PolarizationKet;

/// A sum smaller than this is treated as zero when combining the two terms.
const DEGENERATE_EPS: f64 = 1e-12;
const MAX_FOCAL_WINDOW: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpticalConfig {
    pub wavelength: f64,
    pub focal_length: f64,
    /// Fraction of power converted into the cross-polarized channel.
    pub conversion_efficiency: f64,
    /// Propagation window in pixels; chosen automatically when `None`.
    pub focal_window: Option<usize>,
}

impl Default for OpticalConfig {
    fn default() -> Self {
        Self { wavelength: 810e-9, focal_length: 1e-3, conversion_efficiency: 1.0, focal_window: None }
    }
}

impl OpticalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.wavelength.is_finite() && self.wavelength > 0.0) {
            return Err(validation(format!("wavelength must be positive, got {}", self.wavelength)));
        }
        if !(self.focal_length.is_finite() && self.focal_length > 0.0) {
            return Err(validation(format!("focal length must be positive, got {}", self.focal_length)));
        }
        if !(0.0..=1.0).contains(&self.conversion_efficiency) {
            return Err(validation(format!(
                "conversion efficiency must lie in [0, 1], got {}",
                self.conversion_efficiency
            )));
        }
        if let Some(m) = self.focal_window {
            if m < 2 {
                return Err(validation("focal window must be at least 2 pixels"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetasurfaceProfile {
    pub grid: GridSpec,
    pub trl_phase: PhaseMask,
    /// Nanopillar rotation angle, half the transmission phase, in `(-pi/2, pi/2]`.
    pub rotation: Vec<f64>,
    /// Pixels where the two terms cancel; their phase is set to zero.
    pub degenerate_pixels: Vec<usize>,
}

/// `t = Arg(e^{i phi_L} e^{-i K} + e^{-i phi_R} e^{i K})` where `-K` is the
/// converging hyperbolic lens phase.
pub fn synthesize(masks: &PhaseMaskPair, config: &OpticalConfig) -> Result<MetasurfaceProfile> {
    config.validate()?;
    let grid = *masks.grid();
    let (pl, pr) = (masks.phi_l.values(), masks.phi_r.values());
    let (trl, degenerate): (Vec<f64>, Vec<bool>) = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let (i, j) = grid.position(k);
            let (x, y) = grid.coords(i, j);
            let lens = lens_phase_at(x.hypot(y), config.focal_length, config.wavelength, LensKind::Converging);
            let sum = Complex64::from_polar(1.0, pl[k] + lens) + Complex64::from_polar(1.0, -pr[k] - lens);
            if sum.norm() <= DEGENERATE_EPS {
                (0.0, true)
            } else {
                (sum.arg(), false)
            }
        })
        .unzip();
    let degenerate_pixels = degenerate.iter().enumerate().filter(|(_, d)| **d).map(|(k, _)| k).collect();
    let trl_phase = PhaseMask::new(grid, trl)?;
    let rotation = trl_phase.values().iter().map(|t| t / 2.0).collect();
    Ok(MetasurfaceProfile { grid, trl_phase, rotation, degenerate_pixels })
}

/// Output of [`jones_apply`] in the circular basis.
#[derive(Debug, Clone)]
pub struct PolarizedFieldPair {
    pub lcp: ComplexField,
    pub rcp: ComplexField,
}

/// Transmitted field for an incident polarization and aperture amplitude.
///
/// The converted part carries `sqrt(eta) e^{+-i t}` into the opposite
/// handedness; the residual `sqrt(1 - eta)` stays co-polarized with a
/// quadrature phase so the pair stays lossless.
pub fn jones_apply(
    profile: &MetasurfaceProfile,
    incident: &PolarizationKet,
    aperture: &ComplexField,
    config: &OpticalConfig,
) -> Result<PolarizedFieldPair> {
    config.validate()?;
    profile.grid.ensure_same(aperture.grid(), "aperture vs profile")?;
    aperture.validate_finite()?;
    let eta = config.conversion_efficiency;
    let (s, c) = (eta.sqrt(), Complex64::new(0.0, (1.0 - eta).sqrt()));
    let (al, ar) = (incident.amp_l, incident.amp_r);
    let t = profile.trl_phase.values();
    let (lcp, rcp): (Vec<Complex64>, Vec<Complex64>) = aperture
        .samples()
        .par_iter()
        .zip(t.par_iter())
        .map(|(u, &t)| {
            let e = Complex64::from_polar(s, t);
            let rcp = (e * al + c * ar) * u;
            let lcp = (e.conj() * ar + c * al) * u;
            (lcp, rcp)
        })
        .unzip();
    Ok(PolarizedFieldPair {
        lcp: ComplexField::new(profile.grid, lcp)?,
        rcp: ComplexField::new(profile.grid, rcp)?,
    })
}

/// Image-plane grid of an `n x n` hologram: pitch `lambda f / (n p)`.
pub fn image_grid_for(source: &GridSpec, config: &OpticalConfig) -> Result<GridSpec> {
    config.validate()?;
    source.validate()?;
    let pitch_x = config.wavelength * config.focal_length / (source.width as f64 * source.pitch);
    let pitch_y = config.wavelength * config.focal_length / (source.height as f64 * source.pitch);
    if (pitch_x - pitch_y).abs() > 1e-12 * pitch_x {
        return Err(validation("image-plane grid needs a square source aperture"));
    }
    GridSpec::new(source.width, source.height, pitch_x)
}

/// Smallest power-of-two window at which propagating over the focal length
/// does not alias, or the configured window.
pub fn focal_window(source: &GridSpec, config: &OpticalConfig) -> usize {
    if let Some(m) = config.focal_window {
        return m.max(source.width.max(source.height));
    }
    let mut m = source.width.max(source.height).next_power_of_two();
    while m < MAX_FOCAL_WINDOW {
        let grid = GridSpec { width: m, height: m, pitch: source.pitch };
        if !transfer_function_aliased(&grid, config.focal_length, config.wavelength) {
            break;
        }
        m *= 2;
    }
    m
}

/// Field at the back focal plane on a padded grid of the metasurface pitch.
#[derive(Debug, Clone)]
pub struct FocalImage {
    pub field: ComplexField,
    pub aliasing_warning: bool,
}

fn embed(field: &ComplexField, window: usize) -> Result<ComplexField> {
    let src = field.grid();
    if src.width > window || src.height > window {
        return Err(validation("focal window smaller than the aperture"));
    }
    let grid = GridSpec::new(window, window, src.pitch)?;
    let mut out = vec![Complex64::new(0.0, 0.0); grid.len()];
    let (oi, oj) = (window / 2 - src.width / 2, window / 2 - src.height / 2);
    for j in 0..src.height {
        let row = &field.samples()[j * src.width..(j + 1) * src.width];
        let start = grid.index(oi, oj + j);
        out[start..start + src.width].copy_from_slice(row);
    }
    ComplexField::new(grid, out)
}

fn focus(field: &ComplexField, config: &OpticalConfig) -> Result<FocalImage> {
    let window = focal_window(field.grid(), config);
    let padded = embed(field, window)?;
    let p = propagate(&padded, config.focal_length, config.wavelength)?;
    Ok(FocalImage { field: p.field, aliasing_warning: p.aliasing_warning })
}

/// Propagates the cross-polarized output for a circular input to the focal
/// plane. The aperture is uniform with unit total energy.
pub fn image_at_focus(
    profile: &MetasurfaceProfile,
    incident: &PolarizationKet,
    config: &OpticalConfig,
) -> Result<FocalImage> {
    let left = (incident.amp_l.norm_sqr() - 1.0).abs() < 1e-12;
    let right = (incident.amp_r.norm_sqr() - 1.0).abs() < 1e-12;
    if !(left || right) {
        return Err(validation("image_at_focus needs a circular input polarization"));
    }
    let aperture = ComplexField::uniform_unit_energy(profile.grid);
    let out = jones_apply(profile, incident, &aperture, config)?;
    focus(if left { &out.rcp } else { &out.lcp }, config)
}

/// The secondary, diverging term of the combined profile for a circular
/// input, propagated alone: `e^{-i phi_R} e^{i K}` for left-circular input.
pub fn virtual_channel(masks: &PhaseMaskPair, incident: &PolarizationKet, config: &OpticalConfig) -> Result<FocalImage> {
    config.validate()?;
    let grid = *masks.grid();
    let left = (incident.amp_l.norm_sqr() - 1.0).abs() < 1e-12;
    let (sign, phase) = if left { (-1.0, &masks.phi_r) } else { (1.0, &masks.phi_l) };
    let amp = 1.0 / (grid.len() as f64).sqrt();
    let phase = phase.values();
    let samples = (0..grid.len())
        .map(|k| {
            let (i, j) = grid.position(k);
            let (x, y) = grid.coords(i, j);
            let lens = lens_phase_at(x.hypot(y), config.focal_length, config.wavelength, LensKind::Converging);
            Complex64::from_polar(amp, sign * (phase[k] + lens))
        })
        .collect();
    let field = ComplexField::new(grid, samples)?;
    focus(&field, config)
}

/// Nearest-bin map from a fine focal-plane grid onto the image-plane pixel
/// grid: a focal point `(X, Y)` is seen along direction cosines
/// `(X, Y) / sqrt(X^2 + Y^2 + f^2)`, which fixes its spatial-frequency pixel.
#[derive(Debug, Clone)]
pub struct ImagePlaneSampler {
    image_grid: GridSpec,
    fine_len: usize,
    bin_of: Vec<Option<u32>>,
    counts: Vec<u32>,
}

impl ImagePlaneSampler {
    pub fn new(fine: &GridSpec, source: &GridSpec, config: &OpticalConfig) -> Result<Self> {
        let image_grid = image_grid_for(source, config)?;
        let f = config.focal_length;
        let scale_x = source.width as f64 * source.pitch / config.wavelength;
        let scale_y = source.height as f64 * source.pitch / config.wavelength;
        let (cx, cy) = ((source.width / 2) as f64, (source.height / 2) as f64);
        let bin_of: Vec<Option<u32>> = (0..fine.len())
            .into_par_iter()
            .map(|k| {
                let (i, j) = fine.position(k);
                let (x, y) = fine.coords(i, j);
                let norm = (x * x + y * y + f * f).sqrt();
                let bi = (x / norm * scale_x + cx).round();
                let bj = (y / norm * scale_y + cy).round();
                if bi < 0.0 || bj < 0.0 || bi >= source.width as f64 || bj >= source.height as f64 {
                    None
                } else {
                    Some(image_grid.index(bi as usize, bj as usize) as u32)
                }
            })
            .collect();
        let mut counts = vec![0u32; image_grid.len()];
        for b in bin_of.iter().flatten() {
            counts[*b as usize] += 1;
        }
        Ok(Self { image_grid, fine_len: fine.len(), bin_of, counts })
    }

    pub fn image_grid(&self) -> &GridSpec {
        &self.image_grid
    }

    /// Image pixels that receive at least one fine-grid sample. Pixels near
    /// the corners of a wide-angle image may fall outside the window.
    pub fn covered(&self) -> Vec<bool> {
        self.counts.iter().map(|&c| c > 0).collect()
    }

    /// Averages fine-grid values over each image pixel; uncovered pixels
    /// read zero.
    pub fn bin(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.fine_len {
            return Err(Error::GridMismatch("sampler applied to a map of another size".into()));
        }
        let mut out = vec![0.0; self.image_grid.len()];
        for (v, b) in values.iter().zip(&self.bin_of) {
            if let Some(b) = b {
                out[*b as usize] += v;
            }
        }
        for (o, c) in out.iter_mut().zip(&self.counts) {
            if *c > 0 {
                *o /= *c as f64;
            }
        }
        Ok(out)
    }
}

/// Writes `trl_phase.pfm` (+ sidecar), `rotation.csv` and `profile.json`.
pub fn write_profile(dir: &Path, profile: &MetasurfaceProfile, config: &OpticalConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut extra = Map::new();
    extra.insert("wavelength".into(), json!(config.wavelength));
    extra.insert("focal_length".into(), json!(config.focal_length));
    pfm::write_phase_mask(&dir.join("trl_phase.pfm"), &profile.trl_phase, extra)?;
    let mut csv = std::io::BufWriter::new(fs::File::create(dir.join("rotation.csv"))?);
    writeln!(csv, "i,j,rotation_rad")?;
    for (k, r) in profile.rotation.iter().enumerate() {
        let (i, j) = profile.grid.position(k);
        writeln!(csv, "{i},{j},{r}")?;
    }
    csv.flush()?;
    let manifest = json!({
        "width": profile.grid.width,
        "height": profile.grid.height,
        "pitch": profile.grid.pitch,
        "wavelength": config.wavelength,
        "focal_length": config.focal_length,
        "conversion_efficiency": config.conversion_efficiency,
        "degenerate_pixels": profile.degenerate_pixels,
        "phase_file": "trl_phase.pfm",
        "rotation_file": "rotation.csv",
    });
    fs::write(dir.join("profile.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Peak intensity relative to the mean aperture intensity.
pub fn focal_gain(image: &FocalImage, aperture_pixels: usize) -> f64 {
    let peak = image.field.samples().iter().map(|z| z.norm_sqr()).fold(0.0, f64::max);
    peak * aperture_pixels as f64 / image.field.energy().max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn small_config() -> OpticalConfig {
        OpticalConfig { focal_length: 100e-6, ..OpticalConfig::default() }
    }

    fn grid(n: usize) -> GridSpec {
        GridSpec::square(n, 0.7e-6).unwrap()
    }

    fn masks(n: usize, f: impl Fn(usize, usize) -> (f64, f64)) -> PhaseMaskPair {
        let g = grid(n);
        let (l, r): (Vec<f64>, Vec<f64>) = (0..g.len()).map(|k| {
            let (i, j) = g.position(k);
            f(i, j)
        }).unzip();
        PhaseMaskPair::new(PhaseMask::new(g, l).unwrap(), PhaseMask::new(g, r).unwrap()).unwrap()
    }

    fn random_profile(n: usize) -> MetasurfaceProfile {
        let m = masks(n, |i, j| (((i * 31 + j * 17) % 23) as f64 * 0.27 - 3.0, ((i * 7 + j * 29) % 19) as f64 * 0.33 - 3.0));
        synthesize(&m, &OpticalConfig::default()).unwrap()
    }

    #[test]
    fn profile_matches_two_term_formula() {
        let cfg = OpticalConfig::default();
        let m = masks(16, |i, j| (0.1 * i as f64, -0.2 * j as f64));
        let p = synthesize(&m, &cfg).unwrap();
        let g = grid(16);
        for k in [0, 37, 130, 255] {
            let (i, j) = g.position(k);
            let (x, y) = g.coords(i, j);
            let r2 = x * x + y * y;
            let kk = 2.0 * PI / cfg.wavelength * ((r2 + cfg.focal_length.powi(2)).sqrt() - cfg.focal_length);
            let z = Complex64::from_polar(1.0, m.phi_l.values()[k] - kk)
                + Complex64::from_polar(1.0, -m.phi_r.values()[k] + kk);
            let d = crate::field::wrap_phase(p.trl_phase.values()[k] - z.arg());
            assert!(d.abs() < 1e-9, "pixel {k}: {d}");
            assert!((p.rotation[k] - p.trl_phase.values()[k] / 2.0).abs() < 1e-15);
            assert!(p.rotation[k] > -PI / 2.0 && p.rotation[k] <= PI / 2.0);
        }
        assert!(p.degenerate_pixels.is_empty());
    }

    #[test]
    fn cancelling_terms_are_flagged() {
        let m = masks(8, |_, _| (PI / 2.0, PI / 2.0));
        let p = synthesize(&m, &OpticalConfig::default()).unwrap();
        let center = grid(8).index(4, 4);
        assert_eq!(p.degenerate_pixels, vec![center]);
        assert_eq!(p.trl_phase.values()[center], 0.0);
    }

    #[test]
    fn cross_polarized_responses_are_conjugate() {
        let p = random_profile(16);
        let cfg = OpticalConfig::default();
        let ap = ComplexField::uniform_unit_energy(p.grid);
        let from_l = jones_apply(&p, &PolarizationKet::left(), &ap, &cfg).unwrap();
        let from_r = jones_apply(&p, &PolarizationKet::right(), &ap, &cfg).unwrap();
        for (a, b) in from_l.rcp.samples().iter().zip(from_r.lcp.samples()) {
            assert!((a - b.conj()).norm() < 1e-15);
        }
        assert_eq!(from_l.lcp.energy(), 0.0);
        assert_eq!(from_r.rcp.energy(), 0.0);
    }

    #[test]
    fn partial_conversion_splits_energy() {
        let p = random_profile(16);
        let cfg = OpticalConfig { conversion_efficiency: 0.8, ..OpticalConfig::default() };
        let ap = ComplexField::uniform_unit_energy(p.grid);
        let out = jones_apply(&p, &PolarizationKet::left(), &ap, &cfg).unwrap();
        assert!((out.rcp.energy() - 0.8).abs() < 1e-12);
        assert!((out.lcp.energy() - 0.2).abs() < 1e-12);
        for angle in [0.0, 0.4, 1.3] {
            let out = jones_apply(&p, &PolarizationKet::linear(angle), &ap, &cfg).unwrap();
            assert!((out.rcp.energy() + out.lcp.energy() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zone_plate_focuses_and_flat_profile_does_not() {
        let cfg = small_config();
        let lens = synthesize(&masks(64, |_, _| (0.0, 0.0)), &cfg).unwrap();
        let flat = MetasurfaceProfile {
            grid: lens.grid,
            trl_phase: PhaseMask::zeros(lens.grid),
            rotation: vec![0.0; lens.grid.len()],
            degenerate_pixels: vec![],
        };
        let a = image_at_focus(&lens, &PolarizationKet::left(), &cfg).unwrap();
        let b = image_at_focus(&flat, &PolarizationKet::left(), &cfg).unwrap();
        assert!(!a.aliasing_warning);
        assert_eq!(a.field.grid().width, 256);
        let (ga, gb) = (focal_gain(&a, 64 * 64), focal_gain(&b, 64 * 64));
        assert!(ga > 20.0 * gb, "zone plate {ga} vs flat {gb}");
    }

    #[test]
    fn each_handedness_images_its_own_hologram() {
        let cfg = small_config();
        let n = 64;
        let ramp = |a: f64, i: usize| 2.0 * PI * a * i as f64 / n as f64;
        let m = masks(n, |i, j| (ramp(10.0, i), ramp(-12.0, j)));
        let p = synthesize(&m, &cfg).unwrap();
        let src = grid(n);
        for (ket, expect) in [(PolarizationKet::left(), (42, 32)), (PolarizationKet::right(), (32, 20))] {
            let img = image_at_focus(&p, &ket, &cfg).unwrap();
            let sampler = ImagePlaneSampler::new(img.field.grid(), &src, &cfg).unwrap();
            let binned = sampler.bin(&img.field.intensity()).unwrap();
            let peak = (0..binned.len()).max_by(|&a, &b| binned[a].total_cmp(&binned[b])).unwrap();
            let (pi, pj) = sampler.image_grid().position(peak);
            assert!(pi.abs_diff(expect.0) <= 1 && pj.abs_diff(expect.1) <= 1, "{ket:?}: peak at {pi},{pj}");
        }
    }

    #[test]
    fn sampler_averages_and_covers_the_image() {
        let cfg = small_config();
        let src = grid(64);
        let fine = grid(256);
        let s = ImagePlaneSampler::new(&fine, &src, &cfg).unwrap();
        assert!((s.image_grid().pitch - 0.81e-6 * 100e-6 / (64.0 * 0.7e-6)).abs() < 1e-15);
        let out = s.bin(&vec![2.5; fine.len()]).unwrap();
        let covered = s.covered();
        for k in 0..src.len() {
            let (i, j) = src.position(k);
            let central = i.abs_diff(32) <= 19 && j.abs_diff(32) <= 19;
            if central {
                assert!(covered[k], "pixel {i},{j}");
            }
            let expect = if covered[k] { 2.5 } else { 0.0 };
            assert!((out[k] - expect).abs() < 1e-12);
        }
        assert!(covered.iter().any(|c| !c));
        assert!(s.bin(&[1.0; 3]).is_err());
    }

    #[test]
    fn focal_window_follows_sampling_rule() {
        let cfg = OpticalConfig::default();
        assert_eq!(focal_window(&grid(256), &cfg), 2048);
        assert_eq!(focal_window(&grid(64), &small_config()), 256);
        let fixed = OpticalConfig { focal_window: Some(512), ..cfg };
        assert_eq!(focal_window(&grid(256), &fixed), 512);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = random_profile(8);
        assert!(image_at_focus(&p, &PolarizationKet::horizontal(), &small_config()).is_err());
        let bad = OpticalConfig { conversion_efficiency: 1.2, ..OpticalConfig::default() };
        assert!(bad.validate().is_err());
        let ap = ComplexField::uniform_unit_energy(grid(4));
        assert!(jones_apply(&p, &PolarizationKet::left(), &ap, &OpticalConfig::default()).is_err());
    }

    #[test]
    fn profile_export_writes_all_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = random_profile(8);
        write_profile(dir.path(), &p, &OpticalConfig::default()).unwrap();
        let (mask, side) = pfm::read_phase_mask(&dir.path().join("trl_phase.pfm")).unwrap();
        assert_eq!(side.kind, pfm::MapKind::Phase);
        for (a, b) in mask.values().iter().zip(p.trl_phase.values()) {
            assert!(crate::field::wrap_phase(a - b).abs() < 1e-6);
        }
        let csv = fs::read_to_string(dir.path().join("rotation.csv")).unwrap();
        assert_eq!(csv.lines().count(), 65);
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("profile.json")).unwrap()).unwrap();
        assert_eq!(manifest["width"], 8);
    }
}
