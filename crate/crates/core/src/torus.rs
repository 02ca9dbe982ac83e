//! Torus geometry, rotation vectors and their reduction to a section frequency.
//!
//! All coordinates live in `[0, 1)`; reduction goes through `floor` so the
//! same real input always lands on the same representative.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lattice points scanned by default before a certificate request is refused.
pub const DEFAULT_SCAN_BUDGET: u64 = 200_000_000;

/// Reduce a real number into `[0, 1)`.
#[inline]
pub fn wrap(x: f64) -> f64 {
    let r = x - x.floor();
    // x slightly below an integer can round up to exactly 1.0
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Representative of `a - b` with the smallest absolute value, in `[-1/2, 1/2]`.
#[inline]
pub fn wrap_diff(a: f64, b: f64) -> f64 {
    let d = a - b;
    d - d.round()
}

/// A point on the torus, each coordinate reduced into `[0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorusPoint(Vec<f64>);

impl TorusPoint {
    pub fn new(coords: impl Into<Vec<f64>>) -> Self {
        TorusPoint(coords.into().into_iter().map(wrap).collect())
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Translate by `v` and reduce.
    pub fn shifted(&self, v: &[f64], scale: f64) -> Self {
        TorusPoint(
            self.0
                .iter()
                .zip(v)
                .map(|(a, b)| wrap(a + scale * b))
                .collect(),
        )
    }
}

/// Euclidean distance between the nearest lifts of two torus points.
pub fn torus_distance(a: &TorusPoint, b: &TorusPoint) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(a.0
        .iter()
        .zip(&b.0)
        .map(|(x, y)| wrap_diff(*x, *y).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// The drive `rho` of a skew product flow on the `D`-torus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct RotationVector {
    rho: Vec<f64>,
}

impl RotationVector {
    pub fn new(rho: impl Into<Vec<f64>>) -> Result<Self> {
        let rho = rho.into();
        if rho.len() < 2 {
            return Err(Error::param("rho", "need at least two components"));
        }
        if rho.iter().any(|r| !r.is_finite()) || rho.iter().all(|r| *r == 0.0) {
            return Err(Error::ZeroRotation);
        }
        let v = RotationVector { rho };
        let j = v.dominant_index();
        let max = v.rho[j].abs();
        if v.rho.iter().filter(|r| r.abs() == max).count() > 1 {
            log::warn!("rotation vector has tied dominant components; using index {j}");
        }
        if j != v.dim() - 1 {
            log::warn!("dominant component of rho is at index {j}, not the last; the section still uses the last coordinate");
        }
        Ok(v)
    }

    /// The drive of the Figure-style example, `((sqrt 5 - 1)/2, pi)`.
    pub fn golden_pi() -> Self {
        RotationVector {
            rho: vec![(5f64.sqrt() - 1.0) / 2.0, std::f64::consts::PI],
        }
    }

    pub fn components(&self) -> &[f64] {
        &self.rho
    }

    pub fn dim(&self) -> usize {
        self.rho.len()
    }

    /// Component used as the section direction.
    pub fn rho_d(&self) -> f64 {
        self.rho[self.rho.len() - 1]
    }

    /// Index of the largest `|rho_j|`, lowest index on ties.
    pub fn dominant_index(&self) -> usize {
        let mut best = 0;
        for (j, r) in self.rho.iter().enumerate() {
            if r.abs() > self.rho[best].abs() {
                best = j;
            }
        }
        best
    }

    pub fn norm(&self) -> f64 {
        self.rho.iter().map(|r| r * r).sum::<f64>().sqrt()
    }
}

impl TryFrom<Vec<f64>> for RotationVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        RotationVector::new(v)
    }
}

impl From<RotationVector> for Vec<f64> {
    fn from(r: RotationVector) -> Self {
        r.rho
    }
}

/// Rotation of the first-return map on the section `theta_D = const`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InducedFrequency {
    pub omega: Vec<f64>,
    pub return_time: f64,
    pub rho_d: f64,
}

impl InducedFrequency {
    pub fn d(&self) -> usize {
        self.omega.len()
    }
}

pub fn induce_frequency(rho: &RotationVector) -> Result<InducedFrequency> {
    let rho_d = rho.rho_d();
    if !(rho_d > 0.0) {
        return Err(Error::BadDominantComponent(rho_d));
    }
    let d = rho.dim() - 1;
    let omega = rho.rho[..d].iter().map(|r| wrap(r / rho_d)).collect();
    Ok(InducedFrequency {
        omega,
        return_time: 1.0 / rho_d,
        rho_d,
    })
}

/// Which small-divisor problem a certificate is about.
#[derive(Debug, Clone, Copy)]
pub enum LatticeTarget<'a> {
    /// `|sum rho_i k_i|` over `k` in `Z^D`.
    Flow(&'a RotationVector),
    /// distance of `sum omega_i k_i` to the nearest integer, `k` in `Z^d`.
    Section(&'a InducedFrequency),
}

/// Finite-radius Diophantine certificate.
///
/// `worst_k`/`worst_value` are the raw smallest divisor found. The pass
/// decision uses the binding lattice vector, the one minimizing
/// `value * |k|^eta`, whose scaled value is `effective_constant`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiophantineCertificate {
    pub c_const: f64,
    pub eta: f64,
    pub k_max: u64,
    pub worst_k: Vec<i64>,
    pub worst_value: f64,
    pub binding_k: Vec<i64>,
    pub effective_constant: f64,
    pub passed: bool,
}

pub fn certify_diophantine(
    target: LatticeTarget<'_>,
    c_const: f64,
    eta: f64,
    k_max: u64,
) -> Result<DiophantineCertificate> {
    certify_diophantine_with_budget(target, c_const, eta, k_max, DEFAULT_SCAN_BUDGET)
}

pub fn certify_diophantine_with_budget(
    target: LatticeTarget<'_>,
    c_const: f64,
    eta: f64,
    k_max: u64,
    budget: u64,
) -> Result<DiophantineCertificate> {
    if k_max < 1 {
        return Err(Error::param("k_max", "must be at least 1"));
    }
    if !(c_const > 0.0) {
        return Err(Error::param("c_const", "must be positive"));
    }
    let (freq, integer_part): (&[f64], bool) = match target {
        LatticeTarget::Flow(r) => (r.components(), false),
        LatticeTarget::Section(w) => (&w.omega, true),
    };
    let n = freq.len();
    if n == 0 {
        return Err(Error::param("omega", "empty frequency vector"));
    }
    let points = |k: u64| (2 * k + 1).checked_pow(n as u32).map(|p| p / 2);
    if points(k_max).is_none_or(|p| p > budget) {
        let mut feasible = 0;
        while points(feasible + 1).is_some_and(|p| p <= budget) {
            feasible += 1;
        }
        return Err(Error::ScanBudget {
            requested: k_max,
            feasible,
        });
    }

    let k = k_max as i64;
    let mut idx = vec![-k; n];
    let mut worst = (f64::INFINITY, i64::MAX, Vec::new());
    let mut binding = (f64::INFINITY, Vec::new());
    loop {
        // half lattice: first non-zero coordinate positive
        if let Some(first) = idx.iter().find(|c| **c != 0) {
            if *first > 0 {
                let s: f64 = idx.iter().zip(freq).map(|(c, f)| *c as f64 * f).sum();
                let value = if integer_part {
                    (s - s.round()).abs()
                } else {
                    s.abs()
                };
                let norm = idx.iter().map(|c| c.abs()).max().unwrap_or(0);
                if value < worst.0 || (value == worst.0 && norm < worst.1) {
                    worst = (value, norm, idx.clone());
                }
                let scaled = value * (norm as f64).powf(eta);
                if scaled < binding.0 {
                    binding = (scaled, idx.clone());
                }
            }
        }
        // odometer
        let mut pos = n;
        loop {
            if pos == 0 {
                let passed = binding.0 >= c_const;
                return Ok(DiophantineCertificate {
                    c_const,
                    eta,
                    k_max,
                    worst_k: worst.2,
                    worst_value: worst.0,
                    binding_k: binding.1,
                    effective_constant: binding.0,
                    passed,
                });
            }
            pos -= 1;
            if idx[pos] < k {
                idx[pos] += 1;
                break;
            }
            idx[pos] = -k;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_reduces_into_unit_interval() {
        assert_eq!(wrap(1.25), 0.25);
        assert_eq!(wrap(-0.25), 0.75);
        assert_eq!(wrap(-1e-18), 0.0);
        assert_eq!(wrap(3.0), 0.0);
    }

    #[test]
    fn distance_examples() {
        let d = |a: &[f64], b: &[f64]| {
            torus_distance(&TorusPoint::new(a.to_vec()), &TorusPoint::new(b.to_vec())).unwrap()
        };
        assert!((d(&[0.1], &[0.9]) - 0.2).abs() < 1e-15);
        assert_eq!(d(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!((d(&[0.25, 0.0], &[0.75, 0.5]) - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(torus_distance(&TorusPoint::new(vec![0.0]), &TorusPoint::new(vec![0.0, 0.0])).is_err());
    }

    #[test]
    fn induced_frequency_examples() {
        let w = induce_frequency(&RotationVector::new(vec![0.5, 1.0]).unwrap()).unwrap();
        assert_eq!(w.omega, vec![0.5]);
        assert_eq!(w.return_time, 1.0);

        let rho = RotationVector::golden_pi();
        let w = induce_frequency(&rho).unwrap();
        let expected = wrap((5f64.sqrt() - 1.0) / (2.0 * std::f64::consts::PI));
        assert!((w.omega[0] - expected).abs() < 1e-15);
        assert!((w.return_time - 1.0 / std::f64::consts::PI).abs() < 1e-15);

        let w = induce_frequency(&RotationVector::new(vec![1.0, 1.0]).unwrap()).unwrap();
        assert_eq!(w.omega, vec![0.0]);
        assert_eq!(w.return_time, 1.0);
    }

    #[test]
    fn rotation_vector_rejects_degenerate_input() {
        assert_eq!(RotationVector::new(vec![0.0, 0.0]), Err(Error::ZeroRotation));
        assert!(RotationVector::new(vec![1.0]).is_err());
        assert!(RotationVector::new(vec![f64::NAN, 1.0]).is_err());
        let r = RotationVector::new(vec![1.0, 0.0]).unwrap();
        assert!(induce_frequency(&r).is_err());
    }

    #[test]
    fn dominant_index_breaks_ties_low() {
        let r = RotationVector::new(vec![2.0, -2.0, 1.0]).unwrap();
        assert_eq!(r.dominant_index(), 0);
    }

    #[test]
    fn rational_resonance_fails_at_k2() {
        let w = InducedFrequency {
            omega: vec![0.5],
            return_time: 1.0,
            rho_d: 1.0,
        };
        let c = certify_diophantine(LatticeTarget::Section(&w), 0.1, 1.0, 4).unwrap();
        assert!(!c.passed);
        assert_eq!(c.worst_k, vec![2]);
        assert_eq!(c.worst_value, 0.0);
    }

    #[test]
    fn budget_reports_feasible_radius() {
        let rho = RotationVector::golden_pi();
        let err = certify_diophantine_with_budget(LatticeTarget::Flow(&rho), 0.1, 2.0, 100, 1000).unwrap_err();
        // (2k+1)^2/2 <= 1000  <=>  k <= 21
        assert_eq!(err, Error::ScanBudget { requested: 100, feasible: 21 });
    }

    #[test]
    fn rejects_bad_arguments() {
        let rho = RotationVector::golden_pi();
        assert!(certify_diophantine(LatticeTarget::Flow(&rho), 0.1, 1.0, 0).is_err());
        assert!(certify_diophantine(LatticeTarget::Flow(&rho), 0.0, 1.0, 3).is_err());
    }
}
