use proptest::prelude::*;
use snaflow::field::ForcedFieldFamily;
use snaflow::flow::{IntegratorConfig, SkewFlow};
use snaflow::graphs::{
    graph_defect, lyapunov_relation_check, pullback_attractor, pushforward_repeller, GraphConfig, GraphSample,
};
use snaflow::return_map::SectionMap;
use snaflow::torus::{wrap, RotationVector, TorusPoint};

fn radial(b: f64) -> SectionMap {
    let fam = ForcedFieldFamily::radial_logistic(b, 0.3, vec![0.4, 0.5]).unwrap();
    let flow = SkewFlow::new(fam.clone(), RotationVector::golden_pi(), IntegratorConfig::for_family(&fam)).unwrap();
    SectionMap::new(flow, 0.0).unwrap()
}

fn cfg(grid_n: usize, n_iter: usize, tol: f64) -> GraphConfig {
    GraphConfig { grid_n, n_iter, tol, ..Default::default() }
}

fn sup_diff(a: &GraphSample, b: &GraphSample) -> f64 {
    a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn return_map_is_increasing_and_invertible(t in 0.0..1.0f64, x in -1.0..1.2f64, dx in 1e-7..0.2f64, beta in 0.0..1.0f64) {
        let m = radial(4.0);
        let th = TorusPoint::new(vec![t]);
        let a = m.return_map(beta, &th, x).unwrap();
        let b = m.return_map(beta, &th, x + dx).unwrap();
        prop_assume!(!a.escaped() && !b.escaped());
        prop_assert!(a.x_next < b.x_next);
        let next = TorusPoint::new(vec![wrap(t + m.omega()[0])]);
        let back = m.inverse_return_map(beta, &next, a.x_next).unwrap();
        prop_assume!(!back.escaped());
        prop_assert!((back.x_next - x).abs() <= 1e-8, "{} vs {}", back.x_next, x);
    }

    #[test]
    fn return_map_is_the_flow_at_the_return_time(t in 0.0..1.0f64, x in -1.0..1.2f64, beta in 0.0..1.0f64) {
        let m = radial(4.0);
        let th = TorusPoint::new(vec![t]);
        let r = m.return_map(beta, &th, x).unwrap();
        let s = m.flow.integrate(beta, &TorusPoint::new(vec![t, 0.0]), x, m.return_time(), &[1.0, 0.0]).unwrap();
        prop_assert_eq!(r.x_next, s.x);
        prop_assert_eq!(r.log_dx, s.log_dx);
        prop_assert_eq!(r.dxx_ratio, s.dxx_ratio);
        prop_assert_eq!(&r.dtheta, &vec![s.dtheta]);
        prop_assert_eq!(&r.dtheta2, &vec![s.dtheta2]);
        prop_assert_eq!(&r.dtheta_dx_ratio, &vec![s.dtheta_dx_ratio]);
        let along = m.along(beta, &th, x, &[1.0], false).unwrap();
        prop_assert_eq!(along, s);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn graphs_are_ordered_monotone_and_honest(beta1 in 0.0..0.5f64, step in 0.01..0.3f64) {
        let m = radial(4.0);
        let c = cfg(64, 20_000, 1e-12);
        let beta2 = beta1 + step;
        let a1 = pullback_attractor(&m, beta1, &c).unwrap().graph();
        let r1 = pushforward_repeller(&m, beta1, &c).unwrap().graph();
        let a2 = pullback_attractor(&m, beta2, &c).unwrap().graph();
        let r2 = pushforward_repeller(&m, beta2, &c).unwrap().graph();
        for (a, r) in [(&a1, &r1), (&a2, &r2)] {
            if let (Some(a), Some(r)) = (a, r) {
                for (x, y) in a.values.iter().zip(&r.values) {
                    prop_assert!(y <= &(x + 1e-9));
                }
            }
        }
        if let (Some(a1), Some(a2)) = (&a1, &a2) {
            for (x1, x2) in a1.values.iter().zip(&a2.values) {
                prop_assert!(*x2 <= x1 + 1e-8);
            }
        }
        if let (Some(r1), Some(r2)) = (&r1, &r2) {
            for (y1, y2) in r1.values.iter().zip(&r2.values) {
                prop_assert!(*y2 >= y1 - 1e-8);
            }
        }
        for g in [&a1, &r1, &a2, &r2].into_iter().flatten() {
            let d = graph_defect(&m, g).unwrap();
            prop_assert!(d <= 2.0 * g.defect && g.defect <= 2.0 * d, "{} vs {}", d, g.defect);
        }
    }
}

#[test]
fn pullback_independent_of_iteration_budget() {
    let m = radial(4.0);
    for beta in [0.2, 0.6] {
        let a = pullback_attractor(&m, beta, &cfg(64, 20_000, 1e-12)).unwrap().graph().unwrap();
        let b = pullback_attractor(&m, beta, &cfg(64, 40_000, 1e-13)).unwrap().graph().unwrap();
        assert!(sup_diff(&a, &b) <= 1e-10, "beta {beta}: {}", sup_diff(&a, &b));
        let r = pushforward_repeller(&m, beta, &cfg(64, 20_000, 1e-12)).unwrap().graph().unwrap();
        let s = pushforward_repeller(&m, beta, &cfg(64, 40_000, 1e-13)).unwrap().graph().unwrap();
        assert!(sup_diff(&r, &s) <= 1e-10, "beta {beta}: {}", sup_diff(&r, &s));
    }
}

#[test]
fn lyapunov_relation_on_forced_graphs() {
    let m = radial(4.0);
    for beta in [0.2, 0.4, 0.6] {
        let c = cfg(2048, 20_000, 1e-12);
        for g in [
            pullback_attractor(&m, beta, &c).unwrap().graph().unwrap(),
            pushforward_repeller(&m, beta, &c).unwrap().graph().unwrap(),
        ] {
            let rel = lyapunov_relation_check(&m, &g).unwrap();
            assert!(rel.residual <= 1e-8, "beta {beta} {:?}: {:e}", g.role, rel.residual);
        }
    }
}
