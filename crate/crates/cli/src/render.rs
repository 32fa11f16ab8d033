//! PNG output: grayscale intensity renders and sweep curve plots.

use std::path::Path;

use anyhow::{anyhow, Context, Result};
use image::{GrayImage, RgbImage};
use plotters::prelude::*;
use qholo_core::metrics::{SweepSample, VisibilityFit};
use qholo_core::quantum::IntensityMap;
use qholo_core::target::Letter;

/// Linear grayscale from 0 (or the minimum, if negative) to the maximum.
pub fn write_intensity_png(path: &Path, map: &IntensityMap) -> Result<()> {
    let lo = map.values.iter().cloned().fold(0.0, f64::min);
    let hi = map.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let pixels = map.values.iter().map(|v| (255.0 * (v - lo) / span).round().clamp(0.0, 255.0) as u8).collect();
    let img = GrayImage::from_raw(map.grid.width as u32, map.grid.height as u32, pixels)
        .ok_or_else(|| anyhow!("image buffer size mismatch"))?;
    img.save(path).with_context(|| format!("writing {}", path.display()))
}

pub fn read_gray8(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let img = image::open(path).with_context(|| format!("reading {}", path.display()))?.into_luma8();
    Ok((img.width() as usize, img.height() as usize, img.into_raw()))
}

pub const LETTER_COLORS: [(Letter, RGBColor); 4] =
    [(Letter::H, RED), (Letter::D, GREEN), (Letter::V, BLUE), (Letter::A, BLACK)];

/// Per-letter sweep curves: markers for the samples, lines for the fits.
pub fn write_sweep_png(
    path: &Path,
    samples: &[SweepSample],
    fits: &[(Letter, f64, VisibilityFit)],
) -> Result<()> {
    let (w, h) = (640u32, 400u32);
    let mut buf = vec![0u8; (w * h * 3) as usize];
    let y_max = samples.iter().flat_map(|s| s.intensity).fold(0.0, f64::max).max(f64::MIN_POSITIVE) * 1.1;
    {
        let root = BitMapBackend::with_buffer(&mut buf, (w, h)).into_drawing_area();
        root.fill(&WHITE).map_err(|e| anyhow!("plot: {e}"))?;
        let area = root.margin(20, 20, 20, 20);
        let mut chart = ChartBuilder::on(&area)
            .build_cartesian_2d(0.0..180.0, 0.0..y_max)
            .map_err(|e| anyhow!("plot: {e}"))?;
        chart
            .plotting_area()
            .draw(&Rectangle::new([(0.0, 0.0), (180.0, y_max)], BLACK.stroke_width(1)))
            .map_err(|e| anyhow!("plot: {e}"))?;
        for (letter, color) in LETTER_COLORS {
            let pts: Vec<(f64, f64)> =
                samples.iter().map(|s| (s.phi_s.to_degrees(), s.intensity[letter.index()])).collect();
            chart
                .draw_series(pts.iter().map(|&p| Circle::new(p, 3, color.filled())))
                .map_err(|e| anyhow!("plot: {e}"))?;
            if let Some((_, theta, fit)) = fits.iter().find(|(l, _, _)| *l == letter) {
                let curve = (0..=360).map(|k| {
                    let deg = k as f64 * 0.5;
                    let x = deg.to_radians() - theta / 2.0 + fit.delta;
                    (deg, fit.amplitude * x.sin().powi(2) + fit.offset)
                });
                chart.draw_series(LineSeries::new(curve, color)).map_err(|e| anyhow!("plot: {e}"))?;
            } else {
                chart.draw_series(LineSeries::new(pts, color)).map_err(|e| anyhow!("plot: {e}"))?;
            }
        }
        root.present().map_err(|e| anyhow!("plot: {e}"))?;
    }
    let img = RgbImage::from_raw(w, h, buf).ok_or_else(|| anyhow!("plot buffer size mismatch"))?;
    img.save(path).with_context(|| format!("writing {}", path.display()))
}
