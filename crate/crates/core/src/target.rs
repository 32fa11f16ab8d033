//! Image-plane targets for the two-channel hologram design.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};
use crate::field::GridSpec;

/// The four lettered regions of the canonical target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Letter {
    H,
    D,
    V,
    A,
}

impl Letter {
    pub const ALL: [Letter; 4] = [Letter::H, Letter::D, Letter::V, Letter::A];

    /// Designed phase difference `Arg(psi_L / psi_R)` of the canonical target.
    pub fn canonical_theta(self) -> f64 {
        match self {
            Letter::H => 0.0,
            Letter::D => 3.0 * PI / 2.0,
            Letter::V => PI,
            Letter::A => PI / 2.0,
        }
    }

    /// Idler polarizer angle that erases this letter on the canonical target.
    pub fn eraser_angle(self) -> f64 {
        match self {
            Letter::H => 0.0,
            Letter::D => PI / 4.0,
            Letter::V => PI / 2.0,
            Letter::A => 3.0 * PI / 4.0,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn parse(s: &str) -> Option<Letter> {
        match s {
            "H" | "h" => Some(Letter::H),
            "D" | "d" => Some(Letter::D),
            "V" | "v" => Some(Letter::V),
            "A" | "a" => Some(Letter::A),
            _ => None,
        }
    }
}

impl fmt::Display for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Letter::H => "H",
            Letter::D => "D",
            Letter::V => "V",
            Letter::A => "A",
        };
        f.write_str(s)
    }
}

/// Role of one image-plane pixel in the design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    Letter(Letter),
    /// Amplitude clamped to zero.
    Background,
    /// Outside the signal window; left unconstrained by the projection.
    Free,
}

impl Region {
    #[inline]
    pub fn letter(self) -> Option<Letter> {
        match self {
            Region::Letter(l) => Some(l),
            _ => None,
        }
    }
}

/// Common target amplitude, target phase difference and region labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetHologram {
    grid: GridSpec,
    amplitude: Vec<f64>,
    theta: Vec<f64>,
    regions: Vec<Region>,
}

impl TargetHologram {
    /// Validates the maps and normalizes the amplitude to unit energy.
    /// Amplitudes outside lettered regions are forced to zero.
    pub fn new(
        grid: GridSpec,
        amplitude: Vec<f64>,
        theta: Vec<f64>,
        regions: Vec<Region>,
    ) -> Result<Self> {
        grid.validate()?;
        let n = grid.len();
        if amplitude.len() != n || theta.len() != n || regions.len() != n {
            return Err(validation("target maps must all match the grid size"));
        }
        let mut amplitude = amplitude;
        let mut region_theta: [Option<f64>; 4] = [None; 4];
        for k in 0..n {
            let a = amplitude[k];
            if !a.is_finite() || a < 0.0 {
                return Err(validation(format!("target amplitude must be finite and >= 0 (pixel {k})")));
            }
            if !theta[k].is_finite() {
                return Err(validation(format!("target theta not finite at pixel {k}")));
            }
            match regions[k] {
                Region::Letter(l) => {
                    if a <= 0.0 {
                        return Err(validation(format!("letter pixel {k} has zero amplitude")));
                    }
                    match region_theta[l.index()] {
                        None => region_theta[l.index()] = Some(theta[k]),
                        Some(t) if t == theta[k] => {}
                        Some(_) => {
                            return Err(validation(format!("theta is not constant within letter {l}")))
                        }
                    }
                }
                Region::Background | Region::Free => amplitude[k] = 0.0,
            }
        }
        let energy: f64 = amplitude.iter().map(|a| a * a).sum();
        if energy <= 0.0 {
            return Err(validation("target amplitude is zero everywhere"));
        }
        let scale = 1.0 / energy.sqrt();
        amplitude.iter_mut().for_each(|a| *a *= scale);
        Ok(Self { grid, amplitude, theta, regions })
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn amplitude(&self) -> &[f64] {
        &self.amplitude
    }

    #[inline]
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    #[inline]
    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    /// Indices of lettered (non-background) pixels.
    pub fn signal_pixels(&self) -> impl Iterator<Item = usize> + '_ {
        self.regions
            .iter()
            .enumerate()
            .filter(|(_, r)| matches!(r, Region::Letter(_)))
            .map(|(k, _)| k)
    }

    pub fn letter_pixels(&self, letter: Letter) -> Vec<usize> {
        self.regions
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == Region::Letter(letter))
            .map(|(k, _)| k)
            .collect()
    }

    /// Phase difference assigned to a letter, if the letter is present.
    pub fn letter_theta(&self, letter: Letter) -> Option<f64> {
        self.regions
            .iter()
            .position(|r| *r == Region::Letter(letter))
            .map(|k| self.theta[k])
    }

    pub fn letters_present(&self) -> Vec<Letter> {
        Letter::ALL
            .into_iter()
            .filter(|l| self.regions.iter().any(|r| *r == Region::Letter(*l)))
            .collect()
    }

    /// The same target on a grid of equal shape but different pitch.
    pub fn relabelled(&self, grid: GridSpec) -> Result<Self> {
        grid.validate()?;
        if !grid.same_shape(&self.grid) {
            return Err(validation("relabelled grid must keep the target shape"));
        }
        Ok(Self { grid, ..self.clone() })
    }

    pub fn has_free_pixels(&self) -> bool {
        self.regions.iter().any(|r| *r == Region::Free)
    }

    /// Same target with every free pixel turned into clamped background.
    pub fn without_window(&self) -> Self {
        let mut t = self.clone();
        for r in &mut t.regions {
            if *r == Region::Free {
                *r = Region::Background;
            }
        }
        t
    }

    /// Builds a target from 8-bit rasters: an amplitude image and a label
    /// image whose gray values are mapped to regions by `descriptor`.
    pub fn from_gray8(
        grid: GridSpec,
        amplitude: &[u8],
        labels: &[u8],
        descriptor: &TargetDescriptor,
    ) -> Result<Self> {
        let n = grid.len();
        if amplitude.len() != n || labels.len() != n {
            return Err(validation(format!(
                "target images must be {}x{}",
                grid.width, grid.height
            )));
        }
        let mut lookup: BTreeMap<u8, (Letter, f64)> = BTreeMap::new();
        for (name, spec) in &descriptor.letters {
            let letter = Letter::parse(name)
                .ok_or_else(|| validation(format!("unknown letter '{name}' in descriptor")))?;
            if Some(spec.label) == descriptor.free_label || spec.label == descriptor.background_label {
                return Err(validation(format!("label {} of letter {name} is reserved", spec.label)));
            }
            if lookup.insert(spec.label, (letter, spec.theta_deg.to_radians())).is_some() {
                return Err(validation(format!("label {} used twice", spec.label)));
            }
        }
        let mut amp = vec![0.0; n];
        let mut theta = vec![0.0; n];
        let mut regions = vec![Region::Background; n];
        for k in 0..n {
            let label = labels[k];
            if let Some(&(letter, t)) = lookup.get(&label) {
                regions[k] = Region::Letter(letter);
                theta[k] = t;
                amp[k] = f64::from(amplitude[k]) / 255.0;
            } else if Some(label) == descriptor.free_label {
                regions[k] = Region::Free;
            } else if label != descriptor.background_label {
                return Err(validation(format!("label value {label} at pixel {k} is not described")));
            }
        }
        Self::new(grid, amp, theta, regions)
    }
}

/// Region/theta descriptor accompanying an 8-bit target image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetDescriptor {
    pub letters: BTreeMap<String, LetterSpec>,
    #[serde(default)]
    pub background_label: u8,
    #[serde(default)]
    pub free_label: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LetterSpec {
    pub label: u8,
    pub theta_deg: f64,
}

/// Geometry of the generated "HDVA" raster, as fractions of the grid size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CanonicalLayout {
    /// Side of the central square holding the four letter quadrants.
    pub letter_area: f64,
    /// Side of the central square inside which the background is clamped
    /// to zero; pixels outside are free. `>= 1` disables the free margin.
    pub signal_window: f64,
    /// Stroke width relative to the quadrant size.
    pub stroke: f64,
}

impl Default for CanonicalLayout {
    fn default() -> Self {
        Self { letter_area: 0.5, signal_window: 0.6, stroke: 0.12 }
    }
}

/// Block-letter glyph rasterized into a `w x h` box.
fn glyph(letter: Letter, w: usize, h: usize, s: usize) -> Vec<bool> {
    let mut m = vec![false; w * h];
    let mut set = |x: usize, y: usize| {
        if x < w && y < h {
            m[y * w + x] = true;
        }
    };
    // x of the left edge of a diagonal stroke descending from the top-left
    // corner (t = 0) to the bottom center (t = 1).
    let diag = |t: f64| ((w - s) as f64 * t / 2.0).round() as usize;
    match letter {
        Letter::H => {
            let mid = h / 2 - s / 2;
            for y in 0..h {
                for x in 0..w {
                    if x < s || x >= w - s || (y >= mid && y < mid + s) {
                        set(x, y);
                    }
                }
            }
        }
        Letter::D => {
            for y in 0..h {
                for x in 0..w {
                    let left = x < s;
                    let bars = (y < s || y >= h - s) && x < w - s;
                    let right = x >= w - s && y >= s && y < h - s;
                    if left || bars || right {
                        set(x, y);
                    }
                }
            }
        }
        Letter::V | Letter::A => {
            for y in 0..h {
                let t = y as f64 / (h - 1) as f64;
                let t = if letter == Letter::V { t } else { 1.0 - t };
                let l = diag(t);
                let r = w - s - l;
                for x in l..l + s {
                    set(x, y);
                }
                for x in r..r + s {
                    set(x, y);
                }
            }
            if letter == Letter::A {
                let y0 = (h as f64 * 0.6) as usize;
                for y in y0..(y0 + s).min(h) {
                    let t = 1.0 - y as f64 / (h - 1) as f64;
                    let l = diag(t);
                    for x in l..w - l {
                        set(x, y);
                    }
                }
            }
        }
    }
    m
}

/// Generates the canonical "HDVA" target: H top-left, D top-right, V
/// bottom-left, A bottom-right, with phase differences 0, 3pi/2, pi, pi/2.
pub fn canonical_hdva(grid: GridSpec, layout: CanonicalLayout) -> Result<TargetHologram> {
    grid.validate()?;
    let n = grid.width.min(grid.height);
    let area = (n as f64 * layout.letter_area).round() as usize;
    let quad = area / 2;
    let h = (quad as f64 * 0.8) as usize;
    let w = (quad as f64 * 0.65) as usize;
    let s = ((quad as f64 * layout.stroke).round() as usize).max(1);
    if h < 3 || w < 2 * s + 1 {
        return Err(validation(format!("grid {}x{} too small for the HDVA layout", grid.width, grid.height)));
    }
    let (cx, cy) = (grid.width / 2, grid.height / 2);
    let half_window = layout.signal_window * n as f64 / 2.0;
    let mut regions: Vec<Region> = (0..grid.len())
        .map(|k| {
            let (i, j) = grid.position(k);
            let dx = (i as f64 - cx as f64).abs();
            let dy = (j as f64 - cy as f64).abs();
            if layout.signal_window < 1.0 && (dx > half_window || dy > half_window) {
                Region::Free
            } else {
                Region::Background
            }
        })
        .collect();
    let origin_x = cx - area / 2;
    let origin_y = cy - area / 2;
    let placement = [
        (Letter::H, 0, 0),
        (Letter::D, 1, 0),
        (Letter::V, 0, 1),
        (Letter::A, 1, 1),
    ];
    for (letter, qx, qy) in placement {
        let x0 = origin_x + qx * quad + (quad - w) / 2;
        let y0 = origin_y + qy * quad + (quad - h) / 2;
        let mask = glyph(letter, w, h, s);
        for y in 0..h {
            for x in 0..w {
                if mask[y * w + x] {
                    regions[grid.index(x0 + x, y0 + y)] = Region::Letter(letter);
                }
            }
        }
    }
    let amplitude = regions
        .iter()
        .map(|r| if matches!(r, Region::Letter(_)) { 1.0 } else { 0.0 })
        .collect();
    let theta = regions
        .iter()
        .map(|r| r.letter().map_or(0.0, Letter::canonical_theta))
        .collect();
    TargetHologram::new(grid, amplitude, theta, regions)
}
