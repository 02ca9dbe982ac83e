use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snaflow::field::{radial_to_harvest, FieldEval, ForcedFieldFamily};
use snaflow::torus::{torus_distance, wrap, TorusPoint};

const H: f64 = 1e-5;

fn families() -> Vec<ForcedFieldFamily> {
    let radial = ForcedFieldFamily::radial_logistic(4.0, 0.3, vec![0.4, 0.5]).unwrap();
    vec![
        radial.clone(),
        ForcedFieldFamily::radial_logistic(6.0, 0.2, vec![0.1, 0.9, 0.5]).unwrap(),
        ForcedFieldFamily::cos11(100.0, (0.0, 200.0)).unwrap(),
        radial_to_harvest(&radial, 3.0).unwrap(),
        ForcedFieldFamily::autonomous(-1.0, 1.0, -2.0, (0.0, 1.0)).unwrap(),
    ]
}

fn near_bump_edge(f: &ForcedFieldFamily, theta: &[f64]) -> bool {
    use snaflow::field::FieldKind::*;
    let (bump, center) = match &f.kind {
        RadialLogistic { bump, center, .. } | LogisticHarvest { bump, center, .. } => (bump, center),
        _ => return false,
    };
    let r = torus_distance(&TorusPoint::new(theta.to_vec()), &TorusPoint::new(center.clone())).unwrap();
    (r - bump.radius).abs() < 1e-3 || r < 1e-3
}

fn close(fd: f64, an: f64, scale: f64) -> bool {
    (fd - an).abs() <= 1e-6 * an.abs().max(scale)
}

fn shifted(theta: &[f64], dir: &[f64], s: f64) -> Vec<f64> {
    theta.iter().zip(dir).map(|(t, v)| wrap(t + s * v)).collect()
}

#[test]
fn analytic_partials_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for f in families() {
        let dim = f.base_dim().unwrap_or(2);
        let (blo, bhi) = f.beta_range;
        let mut checked = 0;
        while checked < 1000 {
            let theta: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
            if near_bump_edge(&f, &theta) {
                continue;
            }
            let mut dir: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() - 0.5).collect();
            let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            dir.iter_mut().for_each(|v| *v /= n);
            let x = rng.gen_range(-1.5..1.5);
            let beta = rng.gen_range(blo + 2.0 * H..bhi - 2.0 * H);
            let e = f.eval(beta, &theta, x, &dir);
            let at = |b: f64, th: &[f64], x: f64| -> FieldEval { f.eval(b, th, x, &dir) };
            let scale = 1.0 + e.value.abs();
            let dx = (at(beta, &theta, x + H).value - at(beta, &theta, x - H).value) / (2.0 * H);
            let dxx = (at(beta, &theta, x + H).dx - at(beta, &theta, x - H).dx) / (2.0 * H);
            let tp = shifted(&theta, &dir, H);
            let tm = shifted(&theta, &dir, -H);
            let dth = (at(beta, &tp, x).value - at(beta, &tm, x).value) / (2.0 * H);
            let dth2 = (at(beta, &tp, x).dtheta - at(beta, &tm, x).dtheta) / (2.0 * H);
            let dthx = (at(beta, &theta, x + H).dtheta - at(beta, &theta, x - H).dtheta) / (2.0 * H);
            let db = (at(beta + H, &theta, x).value - at(beta - H, &theta, x).value) / (2.0 * H);
            let ctx = format!("{} theta {theta:?} x {x} beta {beta}", f.name());
            assert!(close(dx, e.dx, scale), "dx {dx} vs {} at {ctx}", e.dx);
            assert!(close(dxx, e.dxx, scale), "dxx {dxx} vs {} at {ctx}", e.dxx);
            assert!(close(dth, e.dtheta, scale), "dtheta {dth} vs {} at {ctx}", e.dtheta);
            assert!(close(dth2, e.dtheta2, scale.max(e.dtheta.abs())), "dtheta2 {dth2} vs {} at {ctx}", e.dtheta2);
            assert!(close(dthx, e.dtheta_dx, scale), "dtheta_dx {dthx} vs {} at {ctx}", e.dtheta_dx);
            assert!(close(db, e.dbeta, scale), "dbeta {db} vs {} at {ctx}", e.dbeta);
            checked += 1;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn radial_second_x_derivative_is_exact(b in 1.5..200.0f64, t1 in 0.0..1.0f64, t2 in 0.0..1.0f64, x in -3.0..3.0f64, beta in 0.0..1.0f64) {
        let f = ForcedFieldFamily::radial_logistic(b, 0.3, vec![0.4, 0.5]).unwrap();
        let e = f.eval(beta, &[t1, t2], x, &[1.0, 0.0]);
        prop_assert_eq!(e.dxx, -2.0 * b);
    }

    #[test]
    fn parameter_derivative_is_non_positive(t1 in 0.0..1.0f64, t2 in 0.0..1.0f64, x in -3.0..3.0f64, beta in 0.0..1.0f64) {
        for f in families() {
            let dim = f.base_dim().unwrap_or(2);
            let theta: Vec<f64> = [t1, t2, 0.5].iter().take(dim).copied().collect();
            let mut dir = vec![0.0; dim];
            dir[0] = 1.0;
            let e = f.eval(beta.max(f.beta_range.0), &theta, x, &dir);
            prop_assert!(e.dbeta <= 0.0, "{}: {}", f.name(), e.dbeta);
        }
    }

    #[test]
    fn radial_field_is_rotation_invariant(eps in 0.0..0.35f64, a in 0.0..std::f64::consts::TAU, b in 0.0..std::f64::consts::TAU, x in -2.0..2.0f64, beta in 0.0..1.0f64) {
        let centre = [0.4, 0.5];
        let f = ForcedFieldFamily::radial_logistic(4.0, 0.3, centre.to_vec()).unwrap();
        let at = |phi: f64| {
            let u = [phi.cos(), phi.sin()];
            let th = [wrap(centre[0] + eps * u[0]), wrap(centre[1] + eps * u[1])];
            f.eval(beta, &th, x, &u)
        };
        let (p, q) = (at(a), at(b));
        prop_assert!((p.value - q.value).abs() <= 1e-12 * (1.0 + p.value.abs()));
        prop_assert!((p.dtheta - q.dtheta).abs() <= 1e-9 * (1.0 + p.dtheta.abs()));
        prop_assert!((p.dtheta2 - q.dtheta2).abs() <= 1e-9 * (1.0 + p.dtheta2.abs()));
    }
}

#[test]
fn parameter_derivative_strict_at_bump_centre() {
    let f = ForcedFieldFamily::radial_logistic(4.0, 0.3, vec![0.4, 0.5]).unwrap();
    for x in [-1.0, 0.0, 0.7, 1.2] {
        assert!(f.eval(0.5, &[0.4, 0.5], x, &[1.0, 0.0]).dbeta < 0.0);
    }
    let c = ForcedFieldFamily::cos11(100.0, (0.0, 200.0)).unwrap();
    assert!(c.eval(1.0, &[0.25, 0.25], 0.0, &[1.0, 0.0]).dbeta < 0.0);
}
