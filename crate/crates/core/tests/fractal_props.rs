use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snaflow::field::ForcedFieldFamily;
use snaflow::flow::{IntegratorConfig, SkewFlow};
use snaflow::fractal::{
    box_count, default_epsilons, default_fit_window, graph_point_cloud, lifted_point_cloud, CloudConfig, PointCloud,
};
use snaflow::graphs::{pullback_attractor, GraphConfig};
use snaflow::return_map::SectionMap;
use snaflow::torus::{wrap, RotationVector};

fn segment(n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = (0..n).flat_map(|_| [rng.gen::<f64>(), 0.0]).collect();
    PointCloud::new(2, c).unwrap()
}

fn square(n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = (0..n).flat_map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect();
    PointCloud::new(2, c).unwrap()
}

/// Both endpoints of every interval at the given depth.
fn cantor(depth: u32) -> PointCloud {
    let mut left = vec![0.0f64];
    let mut len = 1.0;
    for _ in 0..depth {
        len /= 3.0;
        left = left.iter().flat_map(|a| [*a, a + 2.0 * len]).collect();
    }
    let c = left.iter().flat_map(|a| [*a, a + len]).collect();
    PointCloud::new(1, c).unwrap()
}

fn slope(p: &PointCloud, eps: &[f64]) -> f64 {
    box_count(p, eps, None).unwrap().slope
}

/// Shifts by `h` along each axis; the first `periodic` axes wrap.
fn with_neighbours(p: &PointCloud, h: f64, periodic: usize) -> PointCloud {
    let mut c = p.coords.clone();
    for i in 0..p.len() {
        let q = p.point(i);
        for axis in 0..p.dim {
            for s in [-h, h] {
                let mut r = q.to_vec();
                r[axis] += s;
                if axis < periodic {
                    r[axis] = wrap(r[axis]);
                }
                c.extend(r);
            }
        }
    }
    PointCloud::new(p.dim, c).unwrap()
}

fn radial(b: f64) -> SectionMap {
    let fam = ForcedFieldFamily::radial_logistic(b, 0.3, vec![0.4, 0.5]).unwrap();
    let flow = SkewFlow::new(fam.clone(), RotationVector::golden_pi(), IntegratorConfig::for_family(&fam)).unwrap();
    SectionMap::new(flow, 0.0).unwrap()
}

fn cloud_cfg() -> CloudConfig {
    CloudConfig { settle: 10, ..Default::default() }
}

#[test]
fn calibration_sets() {
    let s = slope(&segment(100_000, 1), &default_epsilons(1));
    assert!((s - 1.0).abs() <= 0.05, "segment {s}");
    let q = slope(&square(100_000, 2), &default_epsilons(2));
    assert!((q - 2.0).abs() <= 0.05, "square {q}");
    let c = slope(&cantor(12), &default_epsilons(1));
    let target = 2f64.ln() / 3f64.ln();
    assert!((c - target).abs() <= 0.02, "cantor {c} vs {target}");
}

#[test]
fn doubling_the_sample_is_stable() {
    let e1 = default_epsilons(1);
    let e2 = default_epsilons(2);
    let d = (slope(&segment(100_000, 3), &e1) - slope(&segment(200_000, 3), &e1)).abs();
    assert!(d <= 0.05, "segment {d}");
    let d = (slope(&square(100_000, 4), &e2) - slope(&square(200_000, 4), &e2)).abs();
    assert!(d <= 0.05, "square {d}");
    let d = (slope(&cantor(12), &e1) - slope(&cantor(13), &e1)).abs();
    assert!(d <= 0.05, "cantor {d}");
}

#[test]
fn constant_graph_has_flat_local_slopes() {
    let m = radial(4.0);
    let g = pullback_attractor(&m, 0.0, &GraphConfig { grid_n: 64, ..Default::default() })
        .unwrap()
        .graph()
        .unwrap();
    let eps = default_epsilons(1);
    let l = box_count(&graph_point_cloud(&m, &g, &cloud_cfg()).unwrap(), &eps, None).unwrap();
    assert!((l.slope - 1.0).abs() <= 0.05, "{}", l.slope);
    let (a, b) = l.fit_window;
    for i in a + 1..=b {
        let s = l.local_slopes[i].unwrap();
        assert!((s - 1.0).abs() <= 0.1, "scale {}: {s}", l.epsilons[i]);
    }
    let lift = lifted_point_cloud(&m, &g, 256, &cloud_cfg()).unwrap();
    let s = slope(&lift, &default_epsilons(2));
    assert!((s - 2.0).abs() <= 0.1, "lift {s}");
}

#[test]
fn closure_at_resolution() {
    let m = radial(4.0);
    let eps = default_epsilons(1);
    let h = 0.25 * eps.last().unwrap();
    for beta in [0.0, 0.6] {
        let g = pullback_attractor(&m, beta, &GraphConfig { grid_n: 256, ..Default::default() })
            .unwrap()
            .graph()
            .unwrap();
        let p = graph_point_cloud(&m, &g, &cloud_cfg()).unwrap();
        let d = (slope(&p, &eps) - slope(&with_neighbours(&p, h, 1), &eps)).abs();
        assert!(d <= 0.02, "beta {beta}: {d}");
    }
    let s = square(100_000, 5);
    let eps2 = default_epsilons(2);
    let d = (slope(&s, &eps2) - slope(&with_neighbours(&s, 0.25 * eps2.last().unwrap(), 2), &eps2)).abs();
    assert!(d <= 0.02, "square {d}");
}

#[test]
fn default_ladders_and_window() {
    assert_eq!(default_epsilons(1).len(), 10);
    assert_eq!(default_epsilons(2).len(), 7);
    assert_eq!(*default_epsilons(1).last().unwrap(), 2f64.powi(-12));
    assert_eq!(default_fit_window(10), (2, 7));
}
