//! Complex scalar fields on a sampled plane, centered unitary DFTs, lens
//! profiles and angular-spectrum propagation.
//!
//! Every grid uses a centered coordinate convention: pixel `(i, j)` sits at
//! `x = (i - width/2) * pitch`, `y = (j - height/2) * pitch` (integer
//! division), and the zero spatial frequency of a transformed field lives at
//! the same center pixel.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};

/// Wraps an angle into `(-pi, pi]`.
#[inline]
pub fn wrap_phase(angle: f64) -> f64 {
    let y = angle.rem_euclid(2.0 * PI);
    if y > PI {
        y - 2.0 * PI
    } else {
        y
    }
}

/// Sampling geometry of a plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    /// Meters per pixel.
    pub pitch: f64,
}

impl GridSpec {
    pub fn new(width: usize, height: usize, pitch: f64) -> Result<Self> {
        let grid = Self { width, height, pitch };
        grid.validate()?;
        Ok(grid)
    }

    pub fn square(n: usize, pitch: f64) -> Result<Self> {
        Self::new(n, n, pitch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || self.height < 2 {
            return Err(validation(format!(
                "grid must be at least 2x2, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.pitch.is_finite() && self.pitch > 0.0) {
            return Err(validation(format!("grid pitch must be positive, got {}", self.pitch)));
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.width + i
    }

    /// Column and row of a row-major index.
    #[inline]
    pub fn position(&self, index: usize) -> (usize, usize) {
        (index % self.width, index / self.width)
    }

    /// Physical coordinates of pixel `(i, j)` in meters.
    #[inline]
    pub fn coords(&self, i: usize, j: usize) -> (f64, f64) {
        (
            (i as f64 - (self.width / 2) as f64) * self.pitch,
            (j as f64 - (self.height / 2) as f64) * self.pitch,
        )
    }

    /// Spatial frequency (cycles per meter) of column `i` and row `j` of a
    /// centered spectrum on this grid.
    #[inline]
    pub fn frequency(&self, i: usize, j: usize) -> (f64, f64) {
        (
            (i as f64 - (self.width / 2) as f64) / (self.width as f64 * self.pitch),
            (j as f64 - (self.height / 2) as f64) / (self.height as f64 * self.pitch),
        )
    }

    pub fn same_shape(&self, other: &GridSpec) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn ensure_same(&self, other: &GridSpec, what: &str) -> Result<()> {
        if self.width != other.width || self.height != other.height || self.pitch != other.pitch {
            return Err(Error::GridMismatch(format!(
                "{what}: {}x{} @ {:e} m vs {}x{} @ {:e} m",
                self.width, self.height, self.pitch, other.width, other.height, other.pitch
            )));
        }
        Ok(())
    }
}

/// Row-major grid of complex amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    grid: GridSpec,
    samples: Vec<Complex64>,
}

impl ComplexField {
    pub fn new(grid: GridSpec, samples: Vec<Complex64>) -> Result<Self> {
        grid.validate()?;
        if samples.len() != grid.len() {
            return Err(validation(format!(
                "expected {} samples for a {}x{} grid, got {}",
                grid.len(),
                grid.width,
                grid.height,
                samples.len()
            )));
        }
        if let Some(index) = samples.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { grid, samples })
    }

    /// Builds a field without the finiteness scan; callers guarantee it.
    pub(crate) fn from_parts(grid: GridSpec, samples: Vec<Complex64>) -> Self {
        debug_assert_eq!(samples.len(), grid.len());
        Self { grid, samples }
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self::from_parts(grid, vec![Complex64::new(0.0, 0.0); grid.len()])
    }

    pub fn uniform(grid: GridSpec, value: Complex64) -> Self {
        Self::from_parts(grid, vec![value; grid.len()])
    }

    /// Uniform real field normalized to unit total energy.
    pub fn uniform_unit_energy(grid: GridSpec) -> Self {
        Self::uniform(grid, Complex64::new(1.0 / (grid.len() as f64).sqrt(), 0.0))
    }

    /// Builds a field from a function of physical coordinates `(x, y)`.
    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> Complex64) -> Result<Self> {
        let samples = (0..grid.len())
            .map(|k| {
                let (i, j) = grid.position(k);
                let (x, y) = grid.coords(i, j);
                f(x, y)
            })
            .collect();
        Self::new(grid, samples)
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Relabels the samples with a grid of the same shape (e.g. a DFT output
    /// moved to its image-plane pitch).
    pub fn with_grid(self, grid: GridSpec) -> Result<Self> {
        if !grid.same_shape(&self.grid) {
            return Err(Error::GridMismatch(format!(
                "cannot relabel {}x{} samples as {}x{}",
                self.grid.width, self.grid.height, grid.width, grid.height
            )));
        }
        grid.validate()?;
        Ok(Self { grid, samples: self.samples })
    }

    #[inline]
    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    #[inline]
    pub fn samples_mut(&mut self) -> &mut [Complex64] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.samples[self.grid.index(i, j)]
    }

    /// Total energy `sum |z|^2`.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn intensity(&self) -> Vec<f64> {
        self.samples.iter().map(|z| z.norm_sqr()).collect()
    }

    pub fn amplitude(&self) -> Vec<f64> {
        self.samples.iter().map(|z| z.norm()).collect()
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        Self::from_parts(self.grid, self.samples.iter().map(|z| z * factor).collect())
    }

    /// `sum conj(self) * other` over all pixels.
    pub fn inner(&self, other: &ComplexField) -> Result<Complex64> {
        self.grid.ensure_same(&other.grid, "inner product")?;
        Ok(self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    pub fn validate_finite(&self) -> Result<()> {
        match self.samples.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
            Some(index) => Err(Error::NonFinite { index }),
            None => Ok(()),
        }
    }
}

/// Row-major phase map stored wrapped to `(-pi, pi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMask {
    grid: GridSpec,
    phase: Vec<f64>,
}

impl PhaseMask {
    /// Wraps every entry; rejects non-finite values.
    pub fn new(grid: GridSpec, phase: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if phase.len() != grid.len() {
            return Err(validation(format!(
                "expected {} phase values, got {}",
                grid.len(),
                phase.len()
            )));
        }
        if let Some(index) = phase.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            grid,
            phase: phase.into_iter().map(wrap_phase).collect(),
        })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self { grid, phase: vec![0.0; grid.len()] }
    }

    /// Phase of every sample of `field`; `Arg(0)` is taken as 0.
    pub fn from_field_arg(field: &ComplexField) -> Self {
        Self {
            grid: field.grid,
            phase: field.samples.iter().map(|z| wrap_phase(z.arg())).collect(),
        }
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.phase
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.phase[self.grid.index(i, j)]
    }

    /// `amplitude * exp(i * phase)` pixelwise.
    pub fn modulate(&self, amplitude: &ComplexField) -> Result<ComplexField> {
        self.grid.ensure_same(amplitude.grid(), "phase modulation")?;
        Ok(ComplexField::from_parts(
            self.grid,
            self.phase
                .iter()
                .zip(amplitude.samples())
                .map(|(&p, a)| a * Complex64::from_polar(1.0, p))
                .collect(),
        ))
    }

    pub fn negated(&self) -> Self {
        Self {
            grid: self.grid,
            phase: self.phase.iter().map(|&p| wrap_phase(-p)).collect(),
        }
    }
}

/// Cached row/column FFT plans for repeated centered unitary transforms on
/// one grid shape.
pub struct Dft2Plan {
    width: usize,
    height: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Dft2Plan {
    pub fn new(width: usize, height: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            width,
            height,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    pub fn for_grid(grid: &GridSpec) -> Self {
        Self::new(grid.width, grid.height)
    }

    /// In-place centered unitary forward transform of row-major data.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, true);
    }

    /// In-place centered unitary inverse transform of row-major data.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, false);
    }

    fn transform(&self, data: &mut [Complex64], forward: bool) {
        let (w, h) = (self.width, self.height);
        assert_eq!(data.len(), w * h, "buffer does not match plan shape");
        // Move the center pixel to index 0 so the DFT kernel sees the
        // centered coordinate n - n/2.
        roll(data, w, h, w - w / 2, h - h / 2);
        let (row, col) = if forward {
            (&self.row_fwd, &self.col_fwd)
        } else {
            (&self.row_inv, &self.col_inv)
        };
        data.par_chunks_mut(w).for_each(|r| row.process(r));
        let mut t = transpose(data, w, h);
        t.par_chunks_mut(h).for_each(|c| col.process(c));
        let back = transpose(&t, h, w);
        data.copy_from_slice(&back);
        roll(data, w, h, w / 2, h / 2);
        let scale = 1.0 / ((w * h) as f64).sqrt();
        data.par_iter_mut().for_each(|z| *z *= scale);
    }
}

fn transpose(data: &[Complex64], w: usize, h: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); w * h];
    out.par_chunks_mut(h).enumerate().for_each(|(i, col)| {
        for (j, v) in col.iter_mut().enumerate() {
            *v = data[j * w + i];
        }
    });
    out
}

/// Circular shift so that element `(i, j)` moves to `(i + dx, j + dy)`.
fn roll(data: &mut [Complex64], w: usize, h: usize, dx: usize, dy: usize) {
    let dx = dx % w;
    let dy = dy % h;
    if dx != 0 {
        data.par_chunks_mut(w).for_each(|r| r.rotate_right(dx));
    }
    if dy != 0 {
        data.rotate_right(dy * w);
    }
}

/// Centered, unitary 2-D DFT.
pub fn dft2(field: &ComplexField) -> Result<ComplexField> {
    field.validate_finite()?;
    let mut data = field.samples.clone();
    Dft2Plan::for_grid(&field.grid).forward(&mut data);
    Ok(ComplexField::from_parts(field.grid, data))
}

/// Exact inverse of [`dft2`].
pub fn idft2(field: &ComplexField) -> Result<ComplexField> {
    field.validate_finite()?;
    let mut data = field.samples.clone();
    Dft2Plan::for_grid(&field.grid).inverse(&mut data);
    Ok(ComplexField::from_parts(field.grid, data))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LensKind {
    Converging,
    Diverging,
}

/// Unwrapped hyperbolic lens phase at radius `r`:
/// `-(2 pi / lambda) (sqrt(r^2 + f^2) - f)` for a converging lens.
#[inline]
pub fn lens_phase_at(r: f64, focal_length: f64, wavelength: f64, kind: LensKind) -> f64 {
    // sqrt(r^2 + f^2) - f rewritten to avoid cancellation near the axis.
    let sag = r * r / ((r * r + focal_length * focal_length).sqrt() + focal_length);
    let phase = -2.0 * PI / wavelength * sag;
    match kind {
        LensKind::Converging => phase,
        LensKind::Diverging => -phase,
    }
}

/// Hyperbolic lens profile on `grid`, wrapped to `(-pi, pi]`.
pub fn lens_phase(
    grid: GridSpec,
    focal_length: f64,
    wavelength: f64,
    kind: LensKind,
) -> Result<PhaseMask> {
    grid.validate()?;
    if !(focal_length.is_finite() && focal_length > 0.0) {
        return Err(validation(format!("focal length must be positive, got {focal_length}")));
    }
    if !(wavelength.is_finite() && wavelength > 0.0) {
        return Err(validation(format!("wavelength must be positive, got {wavelength}")));
    }
    let phase = (0..grid.len())
        .map(|k| {
            let (i, j) = grid.position(k);
            let (x, y) = grid.coords(i, j);
            lens_phase_at(x.hypot(y), focal_length, wavelength, kind)
        })
        .collect();
    PhaseMask::new(grid, phase)
}

/// Result of an angular-spectrum propagation.
#[derive(Debug, Clone)]
pub struct Propagation {
    pub field: ComplexField,
    /// Set when the grid window is too small to sample the transfer
    /// function chirp at the requested distance.
    pub aliasing_warning: bool,
}

/// True when the transfer function phase changes by more than pi between
/// adjacent frequency samples somewhere in the propagating band.
pub fn transfer_function_aliased(grid: &GridSpec, distance: f64, wavelength: f64) -> bool {
    if distance == 0.0 {
        return false;
    }
    let nyquist = 1.0 / (2.0 * grid.pitch);
    let f_max = nyquist.min(1.0 / wavelength);
    let s = wavelength * f_max;
    if s >= 1.0 {
        return true;
    }
    // d(phase)/df = 2 pi z lambda f / sqrt(1 - (lambda f)^2); sampled at
    // df = 1 / (n p) this must stay below pi.
    let slope = distance.abs() * s / (1.0 - s * s).sqrt();
    let window = (grid.width.min(grid.height) as f64) * grid.pitch;
    slope > window / 2.0
}

/// Free-space propagation by `distance` meters with the angular-spectrum
/// transfer function. Evanescent components are dropped.
pub fn propagate(field: &ComplexField, distance: f64, wavelength: f64) -> Result<Propagation> {
    if !(wavelength.is_finite() && wavelength > 0.0) {
        return Err(validation(format!("wavelength must be positive, got {wavelength}")));
    }
    if !distance.is_finite() {
        return Err(validation("propagation distance must be finite"));
    }
    field.validate_finite()?;
    let grid = *field.grid();
    if distance == 0.0 {
        return Ok(Propagation { field: field.clone(), aliasing_warning: false });
    }
    let plan = Dft2Plan::for_grid(&grid);
    let mut spectrum = field.samples.clone();
    plan.forward(&mut spectrum);
    let inv_l2 = 1.0 / (wavelength * wavelength);
    spectrum.par_iter_mut().enumerate().for_each(|(k, z)| {
        let (i, j) = grid.position(k);
        let (fx, fy) = grid.frequency(i, j);
        let arg = inv_l2 - fx * fx - fy * fy;
        if arg > 0.0 {
            *z *= Complex64::from_polar(1.0, 2.0 * PI * distance * arg.sqrt());
        } else {
            *z = Complex64::new(0.0, 0.0);
        }
    });
    plan.inverse(&mut spectrum);
    Ok(Propagation {
        field: ComplexField::from_parts(grid, spectrum),
        aliasing_warning: transfer_function_aliased(&grid, distance, wavelength),
    })
}
