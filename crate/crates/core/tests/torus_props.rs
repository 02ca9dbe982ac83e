use proptest::prelude::*;
use snaflow::torus::{
    certify_diophantine, induce_frequency, torus_distance, wrap, LatticeTarget, RotationVector, TorusPoint,
};

fn coords(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1.0f64, dim)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn distance_triangle_inequality((a, b, c) in (2usize..5).prop_flat_map(|d| (coords(d), coords(d), coords(d)))) {
        let (a, b, c) = (TorusPoint::new(a), TorusPoint::new(b), TorusPoint::new(c));
        let ab = torus_distance(&a, &b).unwrap();
        let bc = torus_distance(&b, &c).unwrap();
        let ac = torus_distance(&a, &c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-12);
        prop_assert!((ab - torus_distance(&b, &a).unwrap()).abs() == 0.0);
        prop_assert!(ab <= (a.dim() as f64).sqrt() / 2.0 + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn certificate_monotone_in_radius(r1 in 0.1..0.9f64, r2 in 1.0..4.0f64, c in 1e-4..0.5f64, k in 1u64..20) {
        let rho = RotationVector::new(vec![r1, r2]).unwrap();
        let small = certify_diophantine(LatticeTarget::Flow(&rho), c, 2.0, k).unwrap();
        let big = certify_diophantine(LatticeTarget::Flow(&rho), c, 2.0, 2 * k).unwrap();
        prop_assert!(!(big.passed && !small.passed));
        prop_assert!(big.effective_constant <= small.effective_constant);
    }

    #[test]
    fn section_returns_follow_the_drive(r1 in 0.05..0.95f64, r2 in 0.05..0.95f64, rd in 1.0..5.0f64) {
        let rho = RotationVector::new(vec![r1, r2, rd]).unwrap();
        let f = induce_frequency(&rho).unwrap();
        for n in 0..=1000u32 {
            let t = n as f64 / f.rho_d;
            for i in 0..2 {
                let flow = wrap(t * rho.components()[i]);
                let section = wrap(n as f64 * f.omega[i]);
                let diff = (flow - section).abs();
                prop_assert!(diff.min(1.0 - diff) <= 1e-12, "n = {} axis {}: {} vs {}", n, i, flow, section);
            }
        }
    }
}
