//! Two-photon polarization/hologram state algebra.
//!
//! States are short lists of product terms `w |idler> |signal pol> |field>`.
//! A slot that has been contracted with a polarizer bra is `None`; the
//! incident spatial mode before the metasurface is [`SpatialMode::Incident`].
//! Circular basis throughout, with `|H> = (|L> + |R>)/sqrt 2` and the linear
//! polarizer at angle `phi` written `(|L> + e^{i 2 phi} |R>)/sqrt 2`.

use std::f64::consts::FRAC_1_SQRT_2;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::field::{ComplexField, GridSpec};

const NORM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarizationKet {
    pub amp_l: Complex64,
    pub amp_r: Complex64,
}

impl PolarizationKet {
    pub const fn new(amp_l: Complex64, amp_r: Complex64) -> Self {
        Self { amp_l, amp_r }
    }

    pub fn left() -> Self {
        Self::new(Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0))
    }

    pub fn right() -> Self {
        Self::new(Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0))
    }

    /// Linear polarization at `angle` radians from horizontal.
    pub fn linear(angle: f64) -> Self {
        Self::new(
            Complex64::new(FRAC_1_SQRT_2, 0.0),
            Complex64::from_polar(FRAC_1_SQRT_2, 2.0 * angle),
        )
    }

    pub fn horizontal() -> Self {
        Self::linear(0.0)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amp_l.norm_sqr() + self.amp_r.norm_sqr()
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm_sqr() - 1.0).abs() <= NORM_TOL
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &PolarizationKet) -> Complex64 {
        self.amp_l.conj() * other.amp_l + self.amp_r.conj() * other.amp_r
    }

    /// A unit ket orthogonal to `self` (for normalized `self`).
    pub fn orthogonal(&self) -> Self {
        Self::new(-self.amp_r.conj(), self.amp_l.conj())
    }
}

/// Spatial part of the signal photon.
#[derive(Debug, Clone)]
pub enum SpatialMode {
    /// The single collimated mode incident on the metasurface.
    Incident,
    Field(Arc<ComplexField>),
}

impl SpatialMode {
    fn inner(&self, other: &SpatialMode) -> Result<Complex64> {
        match (self, other) {
            (SpatialMode::Incident, SpatialMode::Incident) => Ok(Complex64::new(1.0, 0.0)),
            (SpatialMode::Field(a), SpatialMode::Field(b)) => a.inner(b),
            _ => Err(Error::State("mixed incident and hologram modes".into())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Term {
    pub weight: Complex64,
    pub idler: Option<PolarizationKet>,
    pub signal: Option<PolarizationKet>,
    pub mode: SpatialMode,
}

#[derive(Debug, Clone)]
pub struct TwoPhotonState {
    terms: Vec<Term>,
}

impl TwoPhotonState {
    /// Checks that all terms share one slot structure and one field grid.
    pub fn from_terms(terms: Vec<Term>) -> Result<Self> {
        let first = terms.first().ok_or_else(|| Error::State("state has no terms".into()))?;
        let idler = first.idler.is_some();
        let signal = first.signal.is_some();
        let grid = match &first.mode {
            SpatialMode::Incident => None,
            SpatialMode::Field(f) => Some(*f.grid()),
        };
        for t in &terms {
            if t.idler.is_some() != idler || t.signal.is_some() != signal {
                return Err(Error::State("terms disagree on which slots are projected".into()));
            }
            match (&t.mode, &grid) {
                (SpatialMode::Incident, None) => {}
                (SpatialMode::Field(f), Some(g)) => f.grid().ensure_same(g, "state term fields")?,
                _ => return Err(Error::State("terms mix incident and hologram modes".into())),
            }
            if !(t.weight.re.is_finite() && t.weight.im.is_finite()) {
                return Err(Error::State("non-finite term weight".into()));
            }
        }
        Ok(Self { terms })
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn has_idler(&self) -> bool {
        self.terms[0].idler.is_some()
    }

    pub fn has_signal_polarization(&self) -> bool {
        self.terms[0].signal.is_some()
    }

    pub fn grid(&self) -> Option<GridSpec> {
        match &self.terms[0].mode {
            SpatialMode::Incident => None,
            SpatialMode::Field(f) => Some(*f.grid()),
        }
    }

    /// Squared norm from the Gram matrix of the terms.
    pub fn norm_sqr(&self) -> Result<f64> {
        let mut total = Complex64::new(0.0, 0.0);
        for a in &self.terms {
            for b in &self.terms {
                let mut g = a.weight.conj() * b.weight;
                if let (Some(x), Some(y)) = (&a.idler, &b.idler) {
                    g *= x.inner(y);
                }
                if let (Some(x), Some(y)) = (&a.signal, &b.signal) {
                    g *= x.inner(y);
                }
                g *= a.mode.inner(&b.mode)?;
                total += g;
            }
        }
        Ok(total.re)
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|t| Term { weight: t.weight * factor, ..t.clone() })
            .collect();
        Self { terms }
    }
}

/// `(|L>_i |L>_s - |R>_i |R>_s) / sqrt 2` with the incident spatial mode.
pub fn bell_state() -> TwoPhotonState {
    let w = Complex64::new(FRAC_1_SQRT_2, 0.0);
    TwoPhotonState {
        terms: vec![
            Term {
                weight: w,
                idler: Some(PolarizationKet::left()),
                signal: Some(PolarizationKet::left()),
                mode: SpatialMode::Incident,
            },
            Term {
                weight: -w,
                idler: Some(PolarizationKet::right()),
                signal: Some(PolarizationKet::right()),
                mode: SpatialMode::Incident,
            },
        ],
    }
}

fn check_hologram_pair(psi_l: &ComplexField, psi_r: &ComplexField) -> Result<()> {
    psi_l.grid().ensure_same(psi_r.grid(), "hologram pair")?;
    psi_l.validate_finite()?;
    psi_r.validate_finite()
}

fn metasurface_terms(
    state: &TwoPhotonState,
    psi_l: &Arc<ComplexField>,
    psi_r: &Arc<ComplexField>,
    keep_polarization: bool,
) -> Result<TwoPhotonState> {
    check_hologram_pair(psi_l, psi_r)?;
    let mut terms = Vec::with_capacity(2 * state.terms.len());
    for t in &state.terms {
        let s = t
            .signal
            .ok_or_else(|| Error::State("signal polarization already projected".into()))?;
        if !matches!(t.mode, SpatialMode::Incident) {
            return Err(Error::State("metasurface already applied to this state".into()));
        }
        // |L> -> |R, psi_L>, |R> -> |L, psi_R>
        let routes = [
            (s.amp_l, PolarizationKet::right(), psi_l),
            (s.amp_r, PolarizationKet::left(), psi_r),
        ];
        for (amp, out, psi) in routes {
            if amp == Complex64::new(0.0, 0.0) {
                continue;
            }
            terms.push(Term {
                weight: t.weight * amp,
                idler: t.idler,
                signal: keep_polarization.then_some(out),
                mode: SpatialMode::Field(Arc::clone(psi)),
            });
        }
    }
    if terms.is_empty() {
        return Err(Error::State("metasurface output vanished".into()));
    }
    TwoPhotonState::from_terms(terms)
}

/// Cross-polarizing metasurface `|R, psi_L><L| + |L, psi_R><R|` on the
/// signal photon. The result is not renormalized.
pub fn apply_metasurface(
    state: &TwoPhotonState,
    psi_l: Arc<ComplexField>,
    psi_r: Arc<ComplexField>,
) -> Result<TwoPhotonState> {
    metasurface_terms(state, &psi_l, &psi_r, true)
}

/// Reduced operator `|psi_L><L| + |psi_R><R|` with the output polarization
/// and the global factor of the trailing horizontal polarizer dropped.
pub fn apply_hologram_operator(
    state: &TwoPhotonState,
    psi_l: Arc<ComplexField>,
    psi_r: Arc<ComplexField>,
) -> Result<TwoPhotonState> {
    metasurface_terms(state, &psi_l, &psi_r, false)
}

/// The hybrid entangled state `(|L>_i |psi_L> - |R>_i |psi_R>) / sqrt 2`.
pub fn quantum_hologram(psi_l: Arc<ComplexField>, psi_r: Arc<ComplexField>) -> Result<TwoPhotonState> {
    apply_hologram_operator(&bell_state(), psi_l, psi_r)
}

/// Contracts the idler slot with `<polarizer|`; returns the unnormalized
/// heralded state and its squared norm. `None` means the idler is detected
/// without polarization selection: the state is returned unchanged.
pub fn project_idler(
    state: &TwoPhotonState,
    polarizer: Option<&PolarizationKet>,
) -> Result<(TwoPhotonState, f64)> {
    let Some(p) = polarizer else {
        return Ok((state.clone(), 1.0));
    };
    if !p.is_normalized() {
        return Err(validation(format!("idler polarizer not normalized (|k|^2 = {})", p.norm_sqr())));
    }
    if !state.has_idler() {
        return Err(Error::State("idler already projected".into()));
    }
    let terms = state
        .terms
        .iter()
        .map(|t| Term {
            weight: t.weight * p.inner(t.idler.as_ref().expect("checked")),
            idler: None,
            signal: t.signal,
            mode: t.mode.clone(),
        })
        .collect();
    let out = TwoPhotonState::from_terms(terms)?;
    let prob = out.norm_sqr()?;
    Ok((out, prob))
}

/// Contracts the signal polarization with a linear polarizer at `angle`.
pub fn project_signal_polarizer(state: &TwoPhotonState, angle: f64) -> Result<TwoPhotonState> {
    if !state.has_signal_polarization() {
        return Err(Error::State("signal polarization already projected".into()));
    }
    let bra = PolarizationKet::linear(angle);
    let terms = state
        .terms
        .iter()
        .map(|t| Term {
            weight: t.weight * bra.inner(t.signal.as_ref().expect("checked")),
            idler: t.idler,
            signal: None,
            mode: t.mode.clone(),
        })
        .collect();
    TwoPhotonState::from_terms(terms)
}

/// Per-pixel detection probability map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityMap {
    pub grid: GridSpec,
    pub values: Vec<f64>,
    pub total_weight: f64,
    /// Measured maps (background-subtracted counts) may hold negative values.
    pub measured: bool,
}

impl IntensityMap {
    pub fn analytic(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(validation("intensity map size does not match grid"));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(validation(format!("analytic intensity must be finite and >= 0 (pixel {k})")));
        }
        let total_weight = values.iter().sum();
        Ok(Self { grid, values, total_weight, measured: false })
    }

    pub fn measured(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(validation("intensity map size does not match grid"));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(validation(format!("measured intensity not finite at pixel {k}")));
        }
        let total_weight = values.iter().sum();
        Ok(Self { grid, values, total_weight, measured: true })
    }

    pub fn mean_over(&self, pixels: &[usize]) -> f64 {
        if pixels.is_empty() {
            return 0.0;
        }
        pixels.iter().map(|&k| self.values[k]).sum::<f64>() / pixels.len() as f64
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let values: Vec<f64> = self.values.iter().map(|v| v * factor).collect();
        Self { grid: self.grid, total_weight: self.total_weight * factor, values, measured: self.measured }
    }

    /// Pixelwise sum of two maps on the same grid.
    pub fn plus(&self, other: &IntensityMap) -> Result<Self> {
        self.grid.ensure_same(&other.grid, "intensity sum")?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Ok(Self {
            grid: self.grid,
            values,
            total_weight: self.total_weight + other.total_weight,
            measured: self.measured || other.measured,
        })
    }
}

fn field_terms(state: &TwoPhotonState) -> Result<Vec<(Complex64, &ComplexField, &Term)>> {
    state
        .terms
        .iter()
        .map(|t| match &t.mode {
            SpatialMode::Field(f) => Ok((t.weight, f.as_ref(), t)),
            SpatialMode::Incident => Err(Error::State("state carries no hologram field".into())),
        })
        .collect()
}

fn coherent_sum_into(acc: &mut [f64], parts: &[(Complex64, &ComplexField)]) {
    acc.par_iter_mut().enumerate().for_each(|(p, v)| {
        let z: Complex64 = parts.iter().map(|(w, f)| w * f.samples()[p]).sum();
        *v += z.norm_sqr();
    });
}

/// `|sum_k w_k psi_k(r)|^2` for a state with every polarization slot
/// projected.
pub fn heralded_intensity(state: &TwoPhotonState) -> Result<IntensityMap> {
    if state.has_idler() || state.has_signal_polarization() {
        return Err(Error::State("heralded intensity needs every polarization slot projected".into()));
    }
    let terms = field_terms(state)?;
    let grid = *terms[0].1.grid();
    let parts: Vec<_> = terms.iter().map(|(w, f, _)| (*w, *f)).collect();
    let mut values = vec![0.0; grid.len()];
    coherent_sum_into(&mut values, &parts);
    IntensityMap::analytic(grid, values)
}

/// Partial trace over the idler (and over a remaining signal polarization
/// slot, i.e. detection without a signal polarizer).
pub fn unheralded_intensity(state: &TwoPhotonState) -> Result<IntensityMap> {
    if !state.has_idler() {
        return Err(Error::State("idler already projected; use heralded_intensity".into()));
    }
    let terms = field_terms(state)?;
    let grid = *terms[0].1.grid();
    let basis = [PolarizationKet::left(), PolarizationKet::right()];
    let signal_basis: Vec<Option<PolarizationKet>> = if state.has_signal_polarization() {
        basis.iter().copied().map(Some).collect()
    } else {
        vec![None]
    };
    let mut values = vec![0.0; grid.len()];
    for b in &basis {
        for c in &signal_basis {
            let parts: Vec<(Complex64, &ComplexField)> = terms
                .iter()
                .map(|(w, f, t)| {
                    let mut a = w * b.inner(t.idler.as_ref().expect("checked"));
                    if let (Some(c), Some(s)) = (c, &t.signal) {
                        a *= c.inner(s);
                    }
                    (a, *f)
                })
                .collect();
            coherent_sum_into(&mut values, &parts);
        }
    }
    IntensityMap::analytic(grid, values)
}

/// `sin^2(phi_s - theta / 2)`.
pub fn letter_intensity_law(phi_s: f64, theta_letter: f64) -> f64 {
    (phi_s - theta_letter / 2.0).sin().powi(2)
}
