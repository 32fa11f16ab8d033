//! Letter-level image metrics and the sinusoidal visibility fit.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::field::GridSpec;
use crate::quantum::IntensityMap;
use crate::target::{Letter, Region, TargetHologram};

/// Erased intensities at or below this fraction of the reference are floored.
pub const DROP_FLOOR: f64 = 1e-6;

/// Letter regions and their regional backgrounds: the background pixels of
/// the letter's quadrant, excluding pixels outside the signal window.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    pub grid: GridSpec,
    pub letter_pixels: BTreeMap<Letter, Vec<usize>>,
    pub background_pixels: BTreeMap<Letter, Vec<usize>>,
}

impl RegionMask {
    pub fn new(
        grid: GridSpec,
        letter_pixels: BTreeMap<Letter, Vec<usize>>,
        background_pixels: BTreeMap<Letter, Vec<usize>>,
    ) -> Result<Self> {
        let mut letter_set = vec![false; grid.len()];
        for (l, px) in &letter_pixels {
            if px.is_empty() {
                return Err(validation(format!("letter {l} has no pixels")));
            }
            for &k in px {
                if k >= grid.len() {
                    return Err(validation(format!("pixel {k} outside the grid")));
                }
                letter_set[k] = true;
            }
        }
        for (l, px) in &background_pixels {
            if !letter_pixels.contains_key(l) {
                return Err(validation(format!("background given for absent letter {l}")));
            }
            if let Some(&k) = px.iter().find(|&&k| k >= grid.len() || letter_set[k]) {
                return Err(validation(format!("background pixel {k} of {l} is outside the grid or in a letter")));
            }
        }
        Ok(Self { grid, letter_pixels, background_pixels })
    }

    /// Quadrant partition of a target: each letter takes the background
    /// pixels of the quadrant holding its centroid.
    pub fn from_target(target: &TargetHologram) -> Result<Self> {
        let grid = *target.grid();
        let quadrant = |k: usize| {
            let (i, j) = grid.position(k);
            (i >= grid.width / 2, j >= grid.height / 2)
        };
        let mut letters = BTreeMap::new();
        let mut backgrounds = BTreeMap::new();
        for l in target.letters_present() {
            let px = target.letter_pixels(l);
            let (si, sj) = px.iter().fold((0.0, 0.0), |(a, b), &k| {
                let (i, j) = grid.position(k);
                (a + i as f64, b + j as f64)
            });
            let n = px.len() as f64;
            let q = (si / n >= grid.width as f64 / 2.0, sj / n >= grid.height as f64 / 2.0);
            let bg: Vec<usize> = target
                .regions()
                .iter()
                .enumerate()
                .filter(|(k, r)| **r == Region::Background && quadrant(*k) == q)
                .map(|(k, _)| k)
                .collect();
            letters.insert(l, px);
            backgrounds.insert(l, bg);
        }
        Self::new(grid, letters, backgrounds)
    }

    pub fn letters(&self) -> impl Iterator<Item = Letter> + '_ {
        self.letter_pixels.keys().copied()
    }

    fn pixels(&self, letter: Letter) -> Result<(&[usize], &[usize])> {
        let lp = self
            .letter_pixels
            .get(&letter)
            .ok_or_else(|| validation(format!("letter {letter} not in the mask")))?;
        let bp = self.background_pixels.get(&letter).map(Vec::as_slice).unwrap_or(&[]);
        Ok((lp, bp))
    }

    /// Letter pixels followed by the letter's regional background.
    pub fn letter_with_background(&self, letter: Letter) -> Result<Vec<usize>> {
        let (lp, bp) = self.pixels(letter)?;
        Ok(lp.iter().chain(bp).copied().collect())
    }

    fn check(&self, img: &IntensityMap) -> Result<()> {
        self.grid.ensure_same(&img.grid, "image vs region mask")
    }
}

fn mean(values: &[f64], px: &[usize]) -> f64 {
    px.iter().map(|&k| values[k]).sum::<f64>() / px.len() as f64
}

/// Background-subtracted mean letter intensity.
pub fn letter_signal(img: &IntensityMap, masks: &RegionMask, letter: Letter) -> Result<f64> {
    masks.check(img)?;
    let (lp, bp) = masks.pixels(letter)?;
    let b = if bp.is_empty() { 0.0 } else { mean(&img.values, bp) };
    Ok(mean(&img.values, lp) - b)
}

/// An intensity drop in dB; `floored` marks an erased signal at or below
/// the floor, which is reported as an upper bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decibels {
    pub db: f64,
    pub floored: bool,
}

impl fmt::Display for Decibels {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.floored {
            write!(f, "<= {:.0} dB", self.db)
        } else {
            write!(f, "{:.2} dB", self.db)
        }
    }
}

pub fn intensity_drop(
    erased: &IntensityMap,
    reference: &IntensityMap,
    masks: &RegionMask,
    letter: Letter,
) -> Result<Decibels> {
    let iw = letter_signal(reference, masks, letter)?;
    if !(iw > 0.0) {
        return Err(Error::UndefinedMetric(format!(
            "reference intensity of {letter} is not positive ({iw:e})"
        )));
    }
    let ie = letter_signal(erased, masks, letter)?;
    let floor = DROP_FLOOR * iw;
    if ie <= floor {
        return Ok(Decibels { db: 10.0 * DROP_FLOOR.log10(), floored: true });
    }
    Ok(Decibels { db: 10.0 * (ie / iw).log10(), floored: false })
}

/// `10 log10((I_letter - I_bg) / I_bg)`.
pub fn contrast(img: &IntensityMap, masks: &RegionMask, letter: Letter) -> Result<f64> {
    masks.check(img)?;
    let (lp, bp) = masks.pixels(letter)?;
    if bp.is_empty() {
        return Err(Error::UndefinedMetric(format!("{letter} has no background region")));
    }
    let (l, b) = (mean(&img.values, lp), mean(&img.values, bp));
    if !(b > 0.0) {
        return Err(Error::UndefinedMetric(format!("background of {letter} is not positive ({b:e})")));
    }
    if !(l > b) {
        return Err(Error::UndefinedMetric(format!("{letter} is not brighter than its background")));
    }
    Ok(10.0 * ((l - b) / b).log10())
}

/// Centered Pearson correlation over `region`.
pub fn pearson(a: &IntensityMap, b: &IntensityMap, region: &[usize]) -> Result<f64> {
    a.grid.ensure_same(&b.grid, "pearson images")?;
    pearson_values(&a.values, &b.values, region)
}

pub fn pearson_values(a: &[f64], b: &[f64], region: &[usize]) -> Result<f64> {
    if region.is_empty() {
        return Err(validation("empty correlation region"));
    }
    if let Some(&k) = region.iter().find(|&&k| k >= a.len() || k >= b.len()) {
        return Err(validation(format!("pixel {k} outside the images")));
    }
    let (ma, mb) = (mean(a, region), mean(b, region));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for &k in region {
        let (da, db) = (a[k] - ma, b[k] - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return Err(Error::UndefinedMetric("zero variance over the correlation region".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Mean letter intensities at one signal polarizer angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSample {
    pub phi_s: f64,
    /// Indexed by [`Letter::index`].
    pub intensity: [f64; 4],
}

/// Parameters of `I = A sin^2(phi_s - theta/2 + delta) + B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibilityFit {
    pub amplitude: f64,
    pub offset: f64,
    pub delta: f64,
    pub visibility: f64,
}

fn solve3(m: [[f64; 3]; 3], v: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&m);
    let scale = m.iter().flatten().map(|x| x.abs()).fold(0.0, f64::max).powi(3);
    if !(d.abs() > 1e-12 * scale) {
        return None;
    }
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let mut mc = m;
        for r in 0..3 {
            mc[r][c] = v[r];
        }
        *o = det(&mc) / d;
    }
    Some(out)
}

fn wrap_half(d: f64) -> f64 {
    // into (-pi/2, pi/2]
    let mut d = d % PI;
    if d <= -PI / 2.0 {
        d += PI;
    } else if d > PI / 2.0 {
        d -= PI;
    }
    d
}

/// Least-squares fit of the sinusoidal law to `(x, y)` with `x = phi_s - theta/2`.
pub fn fit_sin2(x: &[f64], y: &[f64]) -> Result<VisibilityFit> {
    if x.len() != y.len() {
        return Err(validation("fit inputs differ in length"));
    }
    if x.len() < 8 {
        return Err(Error::FitFailed(format!("need at least 8 samples, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::FitFailed("non-finite sample".into()));
    }
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let n = x.len() as f64;
    if (hi - lo) * n / (n - 1.0) < PI - 1e-9 {
        return Err(Error::FitFailed(format!("samples span {:.3} rad; need a full period", hi - lo)));
    }
    // y = c0 + c1 cos 2x + c2 sin 2x
    let mut m = [[0.0; 3]; 3];
    let mut v = [0.0; 3];
    for (&xi, &yi) in x.iter().zip(y) {
        let b = [1.0, (2.0 * xi).cos(), (2.0 * xi).sin()];
        for r in 0..3 {
            v[r] += b[r] * yi;
            for c in 0..3 {
                m[r][c] += b[r] * b[c];
            }
        }
    }
    let [c0, c1, c2] = solve3(m, v).ok_or_else(|| Error::FitFailed("singular design matrix".into()))?;
    let mut amplitude = 2.0 * c1.hypot(c2);
    let mut delta = wrap_half(c2.atan2(-c1) / 2.0);
    let mut offset = c0 - amplitude / 2.0;
    if offset < 0.0 {
        (amplitude, delta) = fit_without_offset(x, y);
        offset = 0.0;
    }
    let denom = amplitude + 2.0 * offset;
    if !(denom > 0.0) {
        return Err(Error::FitFailed(format!("no signal: A = {amplitude:e}, B = {offset:e}")));
    }
    Ok(VisibilityFit { amplitude, offset, delta, visibility: amplitude / denom })
}

/// `B = 0` branch: coarse grid over `delta` then golden-section refinement,
/// with `A` solved in closed form for each `delta`.
fn fit_without_offset(x: &[f64], y: &[f64]) -> (f64, f64) {
    let sse = |d: f64| {
        let (mut sy, mut ss) = (0.0, 0.0);
        for (&xi, &yi) in x.iter().zip(y) {
            let s = (xi + d).sin().powi(2);
            sy += s * yi;
            ss += s * s;
        }
        let a = if ss > 0.0 { (sy / ss).max(0.0) } else { 0.0 };
        let r: f64 = x.iter().zip(y).map(|(&xi, &yi)| (yi - a * (xi + d).sin().powi(2)).powi(2)).sum();
        (r, a)
    };
    let steps = 720;
    let h = PI / steps as f64;
    let best = (0..steps)
        .map(|k| -PI / 2.0 + (k + 1) as f64 * h)
        .min_by(|a, b| sse(*a).0.total_cmp(&sse(*b).0))
        .expect("non-empty grid");
    let (mut lo, mut hi) = (best - h, best + h);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..60 {
        let (m1, m2) = (hi - g * (hi - lo), lo + g * (hi - lo));
        if sse(m1).0 < sse(m2).0 {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let d = (lo + hi) / 2.0;
    (sse(d).1, wrap_half(d))
}

pub fn visibility_fit(samples: &[SweepSample], letter: Letter, theta: f64) -> Result<VisibilityFit> {
    let x: Vec<f64> = samples.iter().map(|s| s.phi_s - theta / 2.0).collect();
    let y: Vec<f64> = samples.iter().map(|s| s.intensity[letter.index()]).collect();
    fit_sin2(&x, &y).map_err(|e| match e {
        Error::FitFailed(msg) => Error::FitFailed(format!("{letter}: {msg}")),
        other => other,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LetterMetrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intensity_drop: Option<Decibels>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub contrast_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pearson: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub visibility: Option<VisibilityFit>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub letters: BTreeMap<Letter, LetterMetrics>,
    /// Which images and masks the numbers came from.
    pub provenance: BTreeMap<String, String>,
}

impl MetricsReport {
    pub fn entry(&mut self, letter: Letter) -> &mut LetterMetrics {
        self.letters.entry(letter).or_default()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SweepRow {
    phi_s_degrees: f64,
    #[serde(rename = "I_H")]
    h: f64,
    #[serde(rename = "I_D")]
    d: f64,
    #[serde(rename = "I_V")]
    v: f64,
    #[serde(rename = "I_A")]
    a: f64,
}

pub fn write_sweep_csv(path: &Path, samples: &[SweepSample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    for s in samples {
        let [h, d, v, a] = s.intensity;
        w.serialize(SweepRow { phi_s_degrees: s.phi_s.to_degrees(), h, d, v, a })
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepSample>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    r.deserialize::<SweepRow>()
        .map(|row| {
            let row = row.map_err(|e| Error::Format(e.to_string()))?;
            Ok(SweepSample { phi_s: row.phi_s_degrees.to_radians(), intensity: [row.h, row.d, row.v, row.a] })
        })
        .collect()
}
