//! Analytic gradients against central finite differences.

mod common;

use common::*;
use tie_core::encoder::ScaleMode;

/// Roundoff in a loss of order one, divided by `2ε`, stays below this.
const DIFFERENCE_NOISE: f64 = 1e-9;

#[test]
fn pinned_instance_matches_elementwise() {
    let report = finite_difference_check(&grad_config(PINNED_SEED), PINNED_SCALE);
    assert!(report.checked > 3000);
    assert!(
        report.mismatches.is_empty(),
        "{} mismatches, first {:?}",
        report.mismatches.len(),
        report.mismatches.first()
    );
    assert!(report.worst_rel < REL_TOL);
}

/// Across other seeds and layouts, every disagreement is a gradient too
/// small for a step of `ε` to resolve.
#[test]
fn other_instances_differ_only_by_difference_noise() {
    let cases = [
        (ScaleMode::FullDim, false, 0.5, 1),
        (ScaleMode::PerHead, false, 0.5, 11),
        (ScaleMode::PerHead, false, 1.0, 3),
        (ScaleMode::FullDim, true, 0.5, 11),
        (ScaleMode::FullDim, true, 1.0, 2),
    ];
    for (scale_mode, residual, init, seed) in cases {
        let cfg = tie_core::encoder::EncoderConfig {
            scale_mode,
            residual,
            ..grad_config(seed)
        };
        let report = finite_difference_check(&cfg, init);
        let large = report
            .mismatches
            .iter()
            .filter(|m| m.abs_diff() >= DIFFERENCE_NOISE)
            .count();
        assert_eq!(
            large, 0,
            "{scale_mode:?} residual={residual} seed={seed}: {:?}",
            report.mismatches
        );
        assert!(report.mismatches.len() * 20 < report.checked);
    }
}
