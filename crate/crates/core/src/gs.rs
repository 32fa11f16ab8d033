//! Two-channel Gerchberg–Saxton design with a phase-difference constraint.
//!
//! Both channels share one source amplitude `U` and one target amplitude.
//! Each iteration transforms `U e^{i phi}` to the image plane for both
//! channels, projects the pair onto the set of fields with the target
//! amplitude and the target phase difference `theta`, transforms back and
//! keeps only the source phases.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};
use crate::field::{dft2, wrap_phase, ComplexField, Dft2Plan, GridSpec, PhaseMask};
use crate::target::{Region, TargetHologram};

/// Source-plane phase masks for the LCP and RCP holograms.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMaskPair {
    pub phi_l: PhaseMask,
    pub phi_r: PhaseMask,
}

impl PhaseMaskPair {
    pub fn new(phi_l: PhaseMask, phi_r: PhaseMask) -> Result<Self> {
        phi_l.grid().ensure_same(phi_r.grid(), "phase mask pair")?;
        Ok(Self { phi_l, phi_r })
    }

    pub fn grid(&self) -> &GridSpec {
        self.phi_l.grid()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub iterations_run: usize,
    /// Scale-free relative RMS amplitude error over lettered pixels, both
    /// channels pooled.
    pub amplitude_error_history: Vec<f64>,
    /// RMS of the wrapped phase-difference error over lettered pixels.
    pub phase_error_history: Vec<f64>,
    /// Euclidean distance of the image-plane pair to the constraint set.
    pub constraint_distance_history: Vec<f64>,
    pub converged: bool,
    /// Pixels where the joint phase projection was undefined, summed over
    /// all iterations.
    pub degenerate_pixel_events: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InitialPhase {
    /// Uniform pseudo-random phases in `(-pi, pi]`, ChaCha8 stream per seed.
    Random { seed: u64 },
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GsParams {
    pub max_iterations: usize,
    pub amp_tolerance: f64,
    pub phase_tolerance: f64,
    pub initial: InitialPhase,
    /// When false the channels are projected independently (plain GS).
    pub phase_constraint: bool,
}

impl Default for GsParams {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            amp_tolerance: 0.05,
            phase_tolerance: 0.05,
            initial: InitialPhase::Random { seed: 0 },
            phase_constraint: true,
        }
    }
}

impl GsParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(validation("max_iterations must be >= 1"));
        }
        if !(self.amp_tolerance > 0.0 && self.phase_tolerance > 0.0) {
            return Err(validation("tolerances must be positive"));
        }
        Ok(())
    }
}

/// `dft2(source * e^{i phi})`, on the source grid.
pub fn reconstruct(phi: &PhaseMask, source_amplitude: &ComplexField) -> Result<ComplexField> {
    dft2(&phi.modulate(source_amplitude)?)
}

/// [`reconstruct`] relabelled onto an image-plane grid of the same shape.
pub fn reconstruct_on(
    image_grid: GridSpec,
    phi: &PhaseMask,
    source_amplitude: &ComplexField,
) -> Result<ComplexField> {
    reconstruct(phi, source_amplitude)?.with_grid(image_grid)
}

/// Output of [`constrain_image`].
#[derive(Debug, Clone)]
pub struct ConstrainedPair {
    pub psi_l: ComplexField,
    pub psi_r: ComplexField,
    /// Pixels where `psi_L e^{-i theta/2} + psi_R e^{i theta/2}` vanished.
    pub degenerate_pixels: Vec<usize>,
}

/// Projects one pixel pair onto `{|a|, |b| = amp, Arg(a/b) = theta}`.
#[inline]
fn project_joint(l: Complex64, r: Complex64, amp: f64, theta: f64) -> (Complex64, Complex64, bool) {
    let half = Complex64::from_polar(1.0, theta / 2.0);
    let s = l * half.conj() + r * half;
    let degenerate = s.re == 0.0 && s.im == 0.0;
    let chi = if degenerate { 0.0 } else { s.arg() };
    (
        Complex64::from_polar(amp, chi + theta / 2.0),
        Complex64::from_polar(amp, chi - theta / 2.0),
        degenerate,
    )
}

#[inline]
fn project_amplitude(z: Complex64, amp: f64) -> Complex64 {
    if z.re == 0.0 && z.im == 0.0 {
        Complex64::new(amp, 0.0)
    } else {
        z * (amp / z.norm())
    }
}

/// Image-plane projection: target amplitude and exact phase difference on
/// lettered pixels, zero on background, free pixels untouched.
pub fn constrain_image(
    psi_l: &ComplexField,
    psi_r: &ComplexField,
    target: &TargetHologram,
) -> Result<ConstrainedPair> {
    psi_l.grid().ensure_same(target.grid(), "constrain_image psi_L")?;
    psi_r.grid().ensure_same(target.grid(), "constrain_image psi_R")?;
    let mut out_l = psi_l.samples().to_vec();
    let mut out_r = psi_r.samples().to_vec();
    let degenerate = apply_image_constraint(&mut out_l, &mut out_r, target, true);
    Ok(ConstrainedPair {
        psi_l: ComplexField::from_parts(*target.grid(), out_l),
        psi_r: ComplexField::from_parts(*target.grid(), out_r),
        degenerate_pixels: degenerate,
    })
}

fn apply_image_constraint(
    l: &mut [Complex64],
    r: &mut [Complex64],
    target: &TargetHologram,
    joint: bool,
) -> Vec<usize> {
    let amp = target.amplitude();
    let theta = target.theta();
    let regions = target.regions();
    let zero = Complex64::new(0.0, 0.0);
    let flags: Vec<bool> = l
        .par_iter_mut()
        .zip(r.par_iter_mut())
        .enumerate()
        .map(|(k, (a, b))| match regions[k] {
            Region::Letter(_) => {
                if joint {
                    let (na, nb, deg) = project_joint(*a, *b, amp[k], theta[k]);
                    *a = na;
                    *b = nb;
                    deg
                } else {
                    *a = project_amplitude(*a, amp[k]);
                    *b = project_amplitude(*b, amp[k]);
                    false
                }
            }
            Region::Background => {
                *a = zero;
                *b = zero;
                false
            }
            Region::Free => false,
        })
        .collect();
    flags.iter().enumerate().filter(|(_, &f)| f).map(|(k, _)| k).collect()
}

/// Best-scale relative RMS amplitude error of one channel over the
/// lettered pixels: `min_s ||s|psi| - a|| / ||a||`.
pub fn amplitude_error(psi: &[Complex64], target: &TargetHologram) -> f64 {
    let amp = target.amplitude();
    let (mut pa, mut pp, mut aa) = (0.0, 0.0, 0.0);
    for k in target.signal_pixels() {
        let m = psi[k].norm();
        pa += m * amp[k];
        pp += m * m;
        aa += amp[k] * amp[k];
    }
    if pp == 0.0 {
        return 1.0;
    }
    let s = pa / pp;
    // ||s m - a||^2 = s^2 pp - 2 s pa + aa
    let err2 = (s * s * pp - 2.0 * s * pa + aa).max(0.0);
    (err2 / aa).sqrt()
}

/// RMS of `wrap(Arg(psi_L / psi_R) - theta)` over the lettered pixels.
pub fn phase_difference_error(psi_l: &[Complex64], psi_r: &[Complex64], target: &TargetHologram) -> f64 {
    let theta = target.theta();
    let (mut sum, mut n) = (0.0, 0usize);
    for k in target.signal_pixels() {
        let z = psi_l[k] * psi_r[k].conj() * Complex64::from_polar(1.0, -theta[k]);
        let d = if z.re == 0.0 && z.im == 0.0 { wrap_phase(-theta[k]) } else { z.arg() };
        sum += d * d;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

fn initial_phases(grid: &GridSpec, initial: InitialPhase) -> (Vec<f64>, Vec<f64>) {
    match initial {
        InitialPhase::Zero => (vec![0.0; grid.len()], vec![0.0; grid.len()]),
        InitialPhase::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // -(uniform in [-pi, pi)) lands in (-pi, pi]
            let mut draw = |_| -rng.random_range(-PI..PI);
            let l: Vec<f64> = (0..grid.len()).map(&mut draw).collect();
            let r: Vec<f64> = (0..grid.len()).map(&mut draw).collect();
            (l, r)
        }
    }
}

fn modulate_into(buf: &mut [Complex64], source: &[Complex64], phase: &[f64]) {
    buf.par_iter_mut()
        .zip(source.par_iter().zip(phase.par_iter()))
        .for_each(|(b, (u, &p))| *b = u * Complex64::from_polar(1.0, p));
}

fn keep_phase(phase: &mut [f64], field: &[Complex64]) {
    phase
        .par_iter_mut()
        .zip(field.par_iter())
        .for_each(|(p, z)| *p = if z.re == 0.0 && z.im == 0.0 { 0.0 } else { wrap_phase(z.arg()) });
}

/// Runs the modified Gerchberg–Saxton loop.
///
/// The source amplitude must be uniform and nonzero. Iteration `k` evaluates
/// the forward fields of the current masks and records their errors; the
/// loop stops as soon as both errors are within tolerance, otherwise it
/// projects and updates the masks. Non-convergence is reported, not raised.
pub fn modified_gs(
    target: &TargetHologram,
    source_amplitude: &ComplexField,
    params: &GsParams,
) -> Result<(PhaseMaskPair, ConvergenceReport)> {
    params.validate()?;
    let grid = *source_amplitude.grid();
    if !grid.same_shape(target.grid()) {
        return Err(validation(format!(
            "source grid {}x{} does not match target grid {}x{}",
            grid.width,
            grid.height,
            target.grid().width,
            target.grid().height
        )));
    }
    source_amplitude.validate_finite()?;
    let u0 = source_amplitude.samples()[0].norm();
    if u0 == 0.0 || source_amplitude.samples().iter().any(|z| (z.norm() - u0).abs() > 1e-12 * u0) {
        return Err(validation("source amplitude must be uniform and nonzero"));
    }

    let plan = Dft2Plan::for_grid(&grid);
    let source = source_amplitude.samples();
    let (mut phi_l, mut phi_r) = initial_phases(&grid, params.initial);
    let mut buf_l = vec![Complex64::new(0.0, 0.0); grid.len()];
    let mut buf_r = buf_l.clone();
    let mut report = ConvergenceReport {
        iterations_run: 0,
        amplitude_error_history: Vec::new(),
        phase_error_history: Vec::new(),
        constraint_distance_history: Vec::new(),
        converged: false,
        degenerate_pixel_events: 0,
    };

    for iteration in 1..=params.max_iterations {
        modulate_into(&mut buf_l, source, &phi_l);
        modulate_into(&mut buf_r, source, &phi_r);
        plan.forward(&mut buf_l);
        plan.forward(&mut buf_r);

        let ae = (0.5 * (amplitude_error(&buf_l, target).powi(2) + amplitude_error(&buf_r, target).powi(2))).sqrt();
        let pe = phase_difference_error(&buf_l, &buf_r, target);
        report.iterations_run = iteration;
        report.amplitude_error_history.push(ae);
        report.phase_error_history.push(pe);

        let before_l = buf_l.clone();
        let before_r = buf_r.clone();
        let degenerate = apply_image_constraint(&mut buf_l, &mut buf_r, target, params.phase_constraint);
        report.degenerate_pixel_events += degenerate.len();
        let dist: f64 = before_l
            .iter()
            .zip(&buf_l)
            .chain(before_r.iter().zip(&buf_r))
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        report.constraint_distance_history.push(dist);

        let phase_ok = !params.phase_constraint || pe <= params.phase_tolerance;
        if ae <= params.amp_tolerance && phase_ok {
            report.converged = true;
            break;
        }
        if iteration == params.max_iterations {
            break;
        }
        plan.inverse(&mut buf_l);
        plan.inverse(&mut buf_r);
        keep_phase(&mut phi_l, &buf_l);
        keep_phase(&mut phi_r, &buf_r);
    }

    let masks = PhaseMaskPair::new(PhaseMask::new(grid, phi_l)?, PhaseMask::new(grid, phi_r)?)?;
    Ok((masks, report))
}
