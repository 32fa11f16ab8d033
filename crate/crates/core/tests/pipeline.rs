use std::sync::OnceLock;

use qholo_core::field::{ComplexField, GridSpec};
use qholo_core::gs::{modified_gs, GsParams};
use qholo_core::metasurface::synthesize;
use qholo_core::metrics::{contrast, pearson, RegionMask};
use qholo_core::pipeline::{background_run, design_canonical, measure, Design, DesignConfig, ImageTier};
use qholo_core::spad::SpadConfig;
use qholo_core::target::{canonical_hdva, CanonicalLayout, Letter};

struct Fixture {
    config: DesignConfig,
    design: Design,
    tier: ImageTier,
    masks: RegionMask,
}

fn fixture() -> &'static Fixture {
    static CELL: OnceLock<Fixture> = OnceLock::new();
    CELL.get_or_init(|| {
        let config = DesignConfig::default();
        let design = design_canonical(&config).unwrap();
        let tier = ImageTier::ideal(design.ideal.clone());
        let masks = RegionMask::from_target(&design.target).unwrap();
        Fixture { config, design, tier, masks }
    })
}

fn max_rise(history: &[f64]) -> f64 {
    history.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max)
}

fn long_run(phase_constraint: bool) -> Vec<f64> {
    let grid = GridSpec::square(256, 0.7e-6).unwrap();
    let target = canonical_hdva(grid, CanonicalLayout::default()).unwrap();
    let source = ComplexField::uniform_unit_energy(grid);
    let params = GsParams { amp_tolerance: 1e-12, phase_tolerance: 1e-12, phase_constraint, ..GsParams::default() };
    let (_, report) = modified_gs(&target, &source, &params).unwrap();
    assert_eq!(report.iterations_run, 200);
    report.amplitude_error_history
}

#[test]
fn plain_gs_error_never_rises_on_canonical_target() {
    let h = long_run(false);
    let rise = max_rise(&h);
    println!("plain GS: final amplitude error {:.4}, max rise {rise:.2e}", h.last().unwrap());
    assert!(rise <= 1e-9);
}

#[test]
fn constrained_gs_error_never_rises_on_canonical_target() {
    let h = long_run(true);
    let rise = max_rise(&h);
    println!("constrained GS: final amplitude error {:.4}, max rise {rise:.2e}", h.last().unwrap());
    assert!(rise <= 1e-9);
}

#[test]
fn remaining_letters_keep_their_shape_under_erasure() {
    let f = fixture();
    let off = f.tier.heralded(None).unwrap();
    let mut rs = Vec::new();
    for erased in Letter::ALL {
        let on = f.tier.heralded(Some(erased.eraser_angle())).unwrap();
        for l in Letter::ALL.into_iter().filter(|&l| l != erased) {
            let region = f.masks.letter_with_background(l).unwrap();
            rs.push(pearson(&on, &off, &region).unwrap());
        }
    }
    let mean = rs.iter().sum::<f64>() / rs.len() as f64;
    println!("eraser-on vs eraser-off Pearson: mean {mean:.4}, min {:.4}", rs.iter().cloned().fold(1.0, f64::min));
    assert!(mean >= 0.64);
}

#[test]
fn measured_remaining_letters_stand_out_from_background() {
    let f = fixture();
    let config = SpadConfig::default();
    let mut values = Vec::new();
    for erased in Letter::ALL {
        let truth = f.tier.heralded(Some(erased.eraser_angle())).unwrap();
        let cfg = SpadConfig { seed: erased.index() as u64 + 11, ..config };
        let background = background_run(truth.grid, &cfg).unwrap();
        let measured = measure(&truth, &cfg, &background).unwrap();
        for l in Letter::ALL.into_iter().filter(|&l| l != erased) {
            values.push(contrast(&measured, &f.masks, l).unwrap());
        }
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    println!("Monte Carlo contrast over remaining letters: mean {mean:.2} dB");
    assert!(mean >= 7.5);
}

#[test]
#[ignore = "50 photons per frame over 65k pixels is buried under 1 dark count per pixel per frame"]
fn low_budget_recovery_matches_analytic_map() {
    let f = fixture();
    let truth = f.tier.heralded(Some(Letter::H.eraser_angle())).unwrap();
    let cfg = SpadConfig { signal_photon_budget: 50.0, ..SpadConfig::default() };
    let background = background_run(truth.grid, &cfg).unwrap();
    let measured = measure(&truth, &cfg, &background).unwrap();
    let letters: Vec<usize> = f.masks.letter_pixels.values().flatten().copied().collect();
    let r = pearson(&measured, &truth, &letters).unwrap();
    println!("budget 50: letter Pearson {r:.4}");
    assert!(r >= 0.95);
}

#[test]
fn canonical_profile_has_few_degenerate_pixels() {
    let f = fixture();
    let profile = synthesize(&f.design.masks, &f.config.optics).unwrap();
    let fraction = profile.degenerate_pixels.len() as f64 / profile.grid.len() as f64;
    assert!(fraction < 1e-4);
}
