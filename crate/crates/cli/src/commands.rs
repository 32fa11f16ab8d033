use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use qholo_core::field::{wrap_phase, GridSpec};
use qholo_core::gs::PhaseMaskPair;
use qholo_core::metasurface::{image_grid_for, synthesize, write_profile};
use qholo_core::metrics::{
    contrast, intensity_drop, pearson, visibility_fit, write_sweep_csv, MetricsReport, RegionMask, SweepSample,
};
use qholo_core::pfm::{self, read_complex_field, read_phase_mask, read_real_map, write_complex_field, write_phase_mask, write_real_map};
use qholo_core::pipeline::{background_run, design, measured_sweep, sweep, HologramPair, ImageTier};
use qholo_core::quantum::IntensityMap;
use qholo_core::spad::{accumulate_subtract, simulate_frames, write_frame_stack};
use qholo_core::target::{canonical_hdva, Letter, TargetDescriptor, TargetHologram};
use serde_json::{json, Map, Value};

use crate::config::{angle_tag, ExperimentConfig, Tier};
use crate::render::{read_gray8, write_intensity_png, write_sweep_png};

/// Successful runs that still deserve a distinct exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Done,
    NotConverged,
}

fn out_dir(cfg: &ExperimentConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    Ok(&cfg.out)
}

fn write_manifest(cfg: &ExperimentConfig, command: &str, outputs: &[PathBuf], extra: Value) -> Result<()> {
    let names: Vec<String> = outputs
        .iter()
        .map(|p| p.strip_prefix(&cfg.out).unwrap_or(p).display().to_string())
        .collect();
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "outputs": names,
        "summary": extra,
    });
    let path = cfg.out.join(format!("manifest_{command}.json"));
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

fn meta(pairs: &[(&str, Value)]) -> Map<String, Value> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

/// The configured target on the source grid.
pub fn load_target(cfg: &ExperimentConfig) -> Result<TargetHologram> {
    match &cfg.target {
        None => Ok(canonical_hdva(cfg.design().source_grid()?, cfg.layout)?),
        Some(files) => {
            let (w, h, amp) = read_gray8(&files.amplitude)?;
            let (lw, lh, labels) = read_gray8(&files.labels)?;
            if (w, h) != (lw, lh) {
                bail!("amplitude image is {w}x{h} but label image is {lw}x{lh}");
            }
            let text = fs::read_to_string(&files.descriptor)
                .with_context(|| format!("reading {}", files.descriptor.display()))?;
            let descriptor: TargetDescriptor = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", files.descriptor.display()))?;
            Ok(TargetHologram::from_gray8(GridSpec::new(w, h, cfg.pitch)?, &amp, &labels, &descriptor)?)
        }
    }
}

fn region_mask(cfg: &ExperimentConfig) -> Result<RegionMask> {
    let target = load_target(cfg)?;
    let image_grid = image_grid_for(target.grid(), &cfg.optics)?;
    Ok(RegionMask::from_target(&target.relabelled(image_grid)?)?)
}

/// The letter whose phase difference an idler polarizer at `phi_i` cancels.
fn erased_letter(target: &TargetHologram, phi_i: f64) -> Option<Letter> {
    target
        .letters_present()
        .into_iter()
        .find(|&l| target.letter_theta(l).is_some_and(|t| wrap_phase(t + 2.0 * phi_i).abs() < 1e-6))
}

pub fn cmd_design(cfg: &ExperimentConfig) -> Result<Outcome> {
    let out = out_dir(cfg)?;
    let target = load_target(cfg)?;
    let d = design(target, &cfg.design())?;
    let mut outputs = Vec::new();
    let tag = |c: &str| meta(&[("channel", json!(c))]);
    for (name, mask, c) in [("phi_l.pfm", &d.masks.phi_l, "L"), ("phi_r.pfm", &d.masks.phi_r, "R")] {
        write_phase_mask(&out.join(name), mask, tag(c))?;
        outputs.push(out.join(name));
    }
    for (name, psi, c) in [("psi_l.pfm", &d.ideal.psi_l, "L"), ("psi_r.pfm", &d.ideal.psi_r, "R")] {
        let mut m = tag(c);
        m.insert("tier".into(), json!("ideal"));
        write_complex_field(&out.join(name), psi, m)?;
        outputs.push(out.join(name));
    }
    let target_map = IntensityMap::analytic(*d.target.grid(), d.target.amplitude().iter().map(|a| a * a).collect())?;
    write_intensity_png(&out.join("target.png"), &target_map)?;
    outputs.push(out.join("target.png"));
    let report_path = out.join("convergence.json");
    fs::write(&report_path, serde_json::to_string_pretty(&d.report)? + "\n")?;
    outputs.push(report_path);
    let r = &d.report;
    write_manifest(
        cfg,
        "design",
        &outputs,
        json!({
            "converged": r.converged,
            "iterations": r.iterations_run,
            "amplitude_error": r.amplitude_error_history.last(),
            "phase_error": r.phase_error_history.last(),
        }),
    )?;
    Ok(if r.converged { Outcome::Done } else { Outcome::NotConverged })
}

fn load_masks(cfg: &ExperimentConfig) -> Result<PhaseMaskPair> {
    let dir = cfg.input_or_out(&cfg.inputs.masks, "");
    let (phi_l, _) = read_phase_mask(&dir.join("phi_l.pfm")).with_context(|| format!("reading masks in {}", dir.display()))?;
    let (phi_r, _) = read_phase_mask(&dir.join("phi_r.pfm")).with_context(|| format!("reading masks in {}", dir.display()))?;
    Ok(PhaseMaskPair::new(phi_l, phi_r)?)
}

pub fn cmd_synth(cfg: &ExperimentConfig) -> Result<Outcome> {
    let out = out_dir(cfg)?;
    let masks = load_masks(cfg)?;
    let profile = synthesize(&masks, &cfg.optics)?;
    let dir = out.join("profile");
    write_profile(&dir, &profile, &cfg.optics)?;
    let outputs = ["trl_phase.pfm", "rotation.csv", "profile.json"].map(|f| dir.join(f));
    write_manifest(
        cfg,
        "synth",
        &outputs,
        json!({
            "degenerate_pixels": profile.degenerate_pixels.len(),
            "degenerate_fraction": profile.degenerate_pixels.len() as f64 / profile.grid.len() as f64,
        }),
    )?;
    Ok(Outcome::Done)
}

fn load_tier(cfg: &ExperimentConfig) -> Result<ImageTier> {
    match cfg.tier {
        Tier::Ideal => {
            let dir = cfg.input_or_out(&cfg.inputs.holograms, "");
            let read = |name: &str| {
                read_complex_field(&dir.join(name)).with_context(|| format!("reading holograms in {}", dir.display()))
            };
            let (psi_l, _) = read("psi_l.pfm")?;
            let (psi_r, _) = read("psi_r.pfm")?;
            Ok(ImageTier::ideal(HologramPair { psi_l: Arc::new(psi_l), psi_r: Arc::new(psi_r) }))
        }
        Tier::Physical => {
            let masks = load_masks(cfg)?;
            Ok(ImageTier::physical(&masks, &cfg.optics)?.0)
        }
    }
}

fn tier_name(tier: Tier) -> &'static str {
    match tier {
        Tier::Ideal => "ideal",
        Tier::Physical => "physical",
    }
}

fn write_map(path: &Path, map: &IntensityMap, mut extra: Map<String, Value>) -> Result<Vec<PathBuf>> {
    extra.insert("measured".into(), json!(map.measured));
    write_real_map(path, &map.grid, &map.values, extra)?;
    let png = path.with_extension("png");
    write_intensity_png(&png, map)?;
    Ok(vec![path.to_path_buf(), png])
}

pub fn heralded_name(deg: f64) -> String {
    format!("heralded_{}deg.pfm", angle_tag(deg))
}

pub fn cmd_herald(cfg: &ExperimentConfig) -> Result<Outcome> {
    let out = out_dir(cfg)?;
    let tier = load_tier(cfg)?;
    let tier_tag = json!(tier_name(cfg.tier));
    let mut outputs = Vec::new();
    let none = tier.heralded(None)?;
    outputs.extend(write_map(&out.join("no_eraser.pfm"), &none, meta(&[("tier", tier_tag.clone()), ("idler_deg", Value::Null)]))?);
    for (&deg, phi) in cfg.idler_angles_deg.iter().zip(cfg.idler_angles()) {
        let map = tier.heralded(Some(phi))?;
        let extra = meta(&[("tier", tier_tag.clone()), ("idler_deg", json!(deg))]);
        outputs.extend(write_map(&out.join(heralded_name(deg)), &map, extra)?);
    }
    write_manifest(cfg, "herald", &outputs, json!({"aliasing_warning": tier.aliasing_warning}))?;
    Ok(Outcome::Done)
}

fn fits_for(samples: &[SweepSample], target: &TargetHologram) -> Result<Vec<(Letter, f64, qholo_core::metrics::VisibilityFit)>> {
    if samples.len() < 8 {
        return Ok(Vec::new());
    }
    target
        .letters_present()
        .into_iter()
        .map(|l| {
            let theta = target.letter_theta(l).unwrap_or(0.0);
            Ok((l, theta, visibility_fit(samples, l, theta)?))
        })
        .collect()
}

pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<Outcome> {
    if cfg.signal_angles_deg.is_empty() {
        bail!("signal_angles_deg must not be empty for a sweep");
    }
    let out = out_dir(cfg)?;
    let tier = load_tier(cfg)?;
    let target = load_target(cfg)?;
    let masks = region_mask(cfg)?;
    let angles = cfg.signal_angles();
    let mut outputs = Vec::new();
    let mut runs = vec![
        ("eraser_on", sweep(&tier, Some(cfg.sweep_idler_deg.to_radians()), &angles, &masks)?),
        ("eraser_off", sweep(&tier, None, &angles, &masks)?),
    ];
    if cfg.sweep_monte_carlo {
        runs.push((
            "eraser_on_measured",
            measured_sweep(&tier, Some(cfg.sweep_idler_deg.to_radians()), &angles, &masks, &cfg.spad)?,
        ));
        runs.push(("eraser_off_measured", measured_sweep(&tier, None, &angles, &masks, &cfg.spad)?));
    }
    let mut reports = Map::new();
    for (name, samples) in &runs {
        let csv = out.join(format!("sweep_{name}.csv"));
        write_sweep_csv(&csv, samples)?;
        let fits = fits_for(samples, &target)?;
        let png = out.join(format!("sweep_{name}.png"));
        write_sweep_png(&png, samples, &fits)?;
        let mut report = MetricsReport::default();
        for (l, _, f) in &fits {
            report.entry(*l).visibility = Some(*f);
        }
        report.provenance.insert("sweep".into(), name.to_string());
        report.provenance.insert("tier".into(), tier_name(cfg.tier).into());
        report.provenance.insert("idler_deg".into(), if name.starts_with("eraser_on") { angle_tag(cfg.sweep_idler_deg) } else { "none".into() });
        reports.insert(name.to_string(), serde_json::to_value(&report)?);
        outputs.extend([csv, png]);
    }
    let metrics = out.join("sweep_metrics.json");
    fs::write(&metrics, serde_json::to_string_pretty(&reports)? + "\n")?;
    outputs.push(metrics);
    write_manifest(cfg, "sweep", &outputs, json!({"samples": angles.len(), "fitted": angles.len() >= 8}))?;
    Ok(Outcome::Done)
}

fn read_intensity(path: &Path) -> Result<IntensityMap> {
    let (grid, values, side) = read_real_map(path).with_context(|| format!("reading {}", path.display()))?;
    if side.extra.get("measured").and_then(Value::as_bool).unwrap_or(false) {
        Ok(IntensityMap::measured(grid, values)?)
    } else {
        Ok(IntensityMap::analytic(grid, values)?)
    }
}

pub fn cmd_frames(cfg: &ExperimentConfig) -> Result<Outcome> {
    let out = out_dir(cfg)?;
    let default = heralded_name(cfg.idler_angles_deg.first().copied().unwrap_or(0.0));
    let input = cfg.input_or_out(&cfg.inputs.intensity_map, &default);
    let map = read_intensity(&input)?;
    let signal = simulate_frames(&map, &cfg.spad)?;
    let background = background_run(map.grid, &cfg.spad)?;
    let recovered = accumulate_subtract(&signal, &background)?;
    let mut outputs = Vec::new();
    for (name, stack) in [("frames.bin", &signal), ("background.bin", &background)] {
        write_frame_stack(&out.join(name), stack)?;
        outputs.extend([out.join(name), pfm::sidecar_path(&out.join(name))]);
    }
    let extra = meta(&[("source", json!(input.display().to_string())), ("frames", json!(cfg.spad.frames))]);
    outputs.extend(write_map(&out.join("recovered.pfm"), &recovered, extra)?);
    write_manifest(
        cfg,
        "frames",
        &outputs,
        json!({"clamped_events": signal.clamped_events + background.clamped_events}),
    )?;
    Ok(Outcome::Done)
}

pub fn cmd_analyze(cfg: &ExperimentConfig) -> Result<Outcome> {
    let out = out_dir(cfg)?;
    let target = load_target(cfg)?;
    let masks = region_mask(cfg)?;
    let reference_path = cfg.input_or_out(&cfg.inputs.reference_image, "no_eraser.pfm");
    let reference = read_intensity(&reference_path)?;
    if !reference.grid.same_shape(&masks.grid) {
        bail!(
            "image {} is {}x{} but the region mask is {}x{}",
            reference_path.display(),
            reference.grid.width,
            reference.grid.height,
            masks.grid.width,
            masks.grid.height
        );
    }
    let reference = IntensityMap { grid: masks.grid, ..reference };
    let erased: Vec<(PathBuf, f64)> = if cfg.inputs.erased_images.is_empty() {
        cfg.idler_angles_deg.iter().map(|&d| (out.join(heralded_name(d)), d)).collect()
    } else {
        cfg.inputs.erased_images.iter().map(|e| (e.path.clone(), e.idler_deg)).collect()
    };
    let mut images = Vec::new();
    let mut worst_drop = f64::NEG_INFINITY;
    for (path, deg) in &erased {
        let img = read_intensity(path)?;
        if !img.grid.same_shape(&masks.grid) {
            bail!("image {} does not match the region mask", path.display());
        }
        let img = IntensityMap { grid: masks.grid, ..img };
        let letter = erased_letter(&target, deg.to_radians());
        let mut report = MetricsReport::default();
        report.provenance.insert("image".into(), path.display().to_string());
        report.provenance.insert("reference".into(), reference_path.display().to_string());
        report.provenance.insert("idler_deg".into(), angle_tag(*deg));
        report.provenance.insert("masks".into(), "letter quadrants within the signal window".into());
        for l in masks.letters() {
            let entry = report.entry(l);
            if Some(l) == letter {
                let d = intensity_drop(&img, &reference, &masks, l)?;
                worst_drop = worst_drop.max(d.db);
                entry.intensity_drop = Some(d);
            } else {
                entry.pearson = Some(pearson(&img, &reference, &masks.letter_with_background(l)?)?);
                entry.contrast_db = contrast(&img, &masks, l).ok();
            }
        }
        images.push(json!({
            "idler_deg": deg,
            "erased_letter": letter.map(|l| l.to_string()),
            "report": report,
        }));
    }
    let path = out.join("metrics.json");
    fs::write(&path, serde_json::to_string_pretty(&json!({ "images": images }))? + "\n")?;
    let summary = if worst_drop.is_finite() { json!({"worst_drop_db": worst_drop}) } else { json!({}) };
    write_manifest(cfg, "analyze", &[path], summary)?;
    Ok(Outcome::Done)
}
