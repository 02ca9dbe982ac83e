use proptest::prelude::*;
use snaflow::bifurcation::{
    estimate_beta_bounds, locate_beta_c, trace_violations, BetaBoundsConfig, BisectionConfig,
};
use snaflow::field::{FieldKind, ForcedFieldFamily};
use snaflow::flow::{IntegratorConfig, SkewFlow};
use snaflow::graphs::GraphConfig;
use snaflow::return_map::SectionMap;
use snaflow::torus::RotationVector;

fn section(fam: ForcedFieldFamily) -> SectionMap {
    let flow = SkewFlow::new(fam.clone(), RotationVector::golden_pi(), IntegratorConfig::for_family(&fam)).unwrap();
    SectionMap::new(flow, 0.0).unwrap()
}

fn bisection(grid_n: usize, n_iter: usize, tol_beta: f64) -> BisectionConfig {
    BisectionConfig {
        tol_beta,
        graph: GraphConfig { grid_n, n_iter, tol: 1e-12, ..Default::default() },
        ..Default::default()
    }
}

fn assert_halving(tr: &snaflow::bifurcation::BisectionTrace) {
    for w in tr.brackets.windows(2) {
        let (w0, w1) = (w[0].1 - w[0].0, w[1].1 - w[1].0);
        assert!((w1 - 0.5 * w0).abs() <= 1e-12 * w0, "{w1} vs {w0}");
        assert!(w[1].0 >= w[0].0 && w[1].1 <= w[0].1);
    }
    let (lo, hi) = *tr.brackets.last().unwrap();
    assert!(hi - lo <= tr.tol);
    for r in &tr.records {
        if r.beta == lo {
            assert!(r.graphs_exist);
        }
        if r.beta == hi {
            assert!(!r.graphs_exist);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    // x' = -x^2 + a0 + s*beta collides at beta = a0 / |s|
    #[test]
    fn autonomous_collision_moves_with_reparameterisation(a0 in 0.5..2.0f64, s in -4.0..-0.5f64) {
        let bc = a0 / -s;
        let fam = ForcedFieldFamily::autonomous(-1.0, a0, s, (0.0, 2.0 * bc)).unwrap();
        let tr = locate_beta_c(&section(fam), (0.0, 2.0 * bc), &bisection(16, 200_000, 1e-3 * bc)).unwrap();
        prop_assert!((tr.beta_c - bc).abs() <= 1e-3 * bc, "{} vs {}", tr.beta_c, bc);
        let v = trace_violations(&tr);
        prop_assert!(v.is_empty(), "{:?}", v);
        assert_halving(&tr);
    }
}

#[test]
fn collision_at_unit_forcing() {
    // x' = -x^2 + 1 - beta^2
    let kind = FieldKind::AutonomousRiccati { a2: -1.0, a0: 1.0, beta_slope: -1.0, beta_power: 2 };
    let fam = ForcedFieldFamily::new(kind, (0.0, 2.0)).unwrap();
    let tr = locate_beta_c(&section(fam), (0.0, 2.0), &bisection(16, 200_000, 1e-4)).unwrap();
    assert!((tr.beta_c - 1.0).abs() <= 1e-4, "{}", tr.beta_c);
}

#[test]
fn radial_trace_is_monotone_with_signed_exponents() {
    let fam = ForcedFieldFamily::radial_logistic(6.0, 0.3, vec![0.4, 0.5])
        .unwrap()
        .with_beta_range((0.0, 3.0))
        .unwrap();
    let tr = locate_beta_c(&section(fam), (0.0, 3.0), &bisection(32, 20_000, 1e-2)).unwrap();
    let v = trace_violations(&tr);
    assert!(v.is_empty(), "{v:?}");
    assert_halving(&tr);
    let with_exponents = tr.records.iter().filter(|r| r.graphs_exist && r.lambda_attractor.is_some()).count();
    assert!(with_exponents >= 2);
    assert!(tr.beta_c > 0.0 && tr.beta_c < 3.0);
}

#[test]
fn beta_bounds_ordering() {
    let fam = ForcedFieldFamily::radial_logistic(4.0, 0.3, vec![0.4, 0.5]).unwrap();
    let bb = estimate_beta_bounds(&section(fam), &BetaBoundsConfig { grid_n: 64, ..Default::default() }).unwrap();
    assert!(bb.beta_minus > 0.0, "{bb:?}");
    assert!(bb.beta_minus <= bb.beta_plus, "{bb:?}");
    assert!(bb.beta_plus <= 1.0 && bb.beta_minus >= 0.0);
}

// the crossing needs the orbit to dwell near the bump peak for longer than
// b^{-1/2}; at R = 0.3 that takes b in the hundreds
#[test]
fn large_b_crosses_before_unit_forcing() {
    let fam = ForcedFieldFamily::radial_logistic(400.0, 0.3, vec![0.4, 0.5]).unwrap();
    let bb = estimate_beta_bounds(&section(fam), &BetaBoundsConfig { grid_n: 64, ..Default::default() }).unwrap();
    assert!(bb.plus_fired && bb.beta_plus < 1.0, "{bb:?}");
    assert!(bb.beta_minus <= bb.beta_plus, "{bb:?}");
}
