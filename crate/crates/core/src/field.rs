//! Parameterized non-autonomous vector fields `F_beta(theta, x)` with exact
//! partial derivatives up to second order.
//!
//! Directional derivatives in `theta` are taken along a caller-supplied
//! vector of the full base torus. Families are immutable; `beta` is an
//! argument of every evaluation.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::torus::{wrap_diff, TorusPoint};

/// Compactly supported bump `h(y) = (1 - (y/R)^2)^3` on `[0, R)`, zero beyond.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BumpProfile {
    pub radius: f64,
}

/// `(h, h', h'')` at one radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BumpValue {
    pub h: f64,
    pub dh: f64,
    pub d2h: f64,
}

impl BumpProfile {
    pub fn new(radius: f64) -> Result<Self> {
        let b = BumpProfile { radius };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::param("radius", "bump radius must be positive"));
        }
        Ok(())
    }

    /// On the torus the support must stay inside the injectivity radius of
    /// the nearest-lift metric.
    pub fn validate_on_torus(&self) -> Result<()> {
        self.validate()?;
        if !(self.radius < 0.5) {
            return Err(Error::param("radius", "bump radius on the torus must lie in (0, 1/2)"));
        }
        Ok(())
    }

    #[inline]
    pub fn eval(&self, y: f64) -> BumpValue {
        let r2 = self.radius * self.radius;
        let u = y * y / r2;
        if u >= 1.0 {
            return BumpValue { h: 0.0, dh: 0.0, d2h: 0.0 };
        }
        let w = 1.0 - u;
        BumpValue {
            h: w * w * w,
            dh: -6.0 * y / r2 * w * w,
            d2h: -6.0 / r2 * w * (1.0 - 5.0 * u),
        }
    }
}

pub fn bump_value(h: &BumpProfile, y: f64) -> Result<BumpValue> {
    if !(y >= 0.0) {
        return Err(Error::param("y", "bump argument must be non-negative"));
    }
    Ok(h.eval(y))
}

/// Value and partials of a field at one point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FieldEval {
    pub value: f64,
    pub dx: f64,
    pub dxx: f64,
    pub dtheta: f64,
    pub dtheta2: f64,
    pub dtheta_dx: f64,
    pub dbeta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldKind {
    /// `-b x^2 + b - beta b/(1 - b^{-1/2}) h(|theta - center|)`
    RadialLogistic {
        b: f64,
        bump: BumpProfile,
        center: Vec<f64>,
    },
    /// `-x^2 + b - beta (2 - cos^11(2 pi theta_1) - cos^11(2 pi theta_2))/4`, two-torus only
    Cos11 { b: f64 },
    /// `(2/r) b x (r - x) - beta b/(1 - b^{-1/2}) h(|theta - center|)`
    LogisticHarvest {
        b: f64,
        r: f64,
        bump: BumpProfile,
        center: Vec<f64>,
    },
    /// `a2 x^2 + a0 + beta_slope beta^beta_power`, independent of theta
    AutonomousRiccati {
        a2: f64,
        a0: f64,
        beta_slope: f64,
        #[serde(default = "one")]
        beta_power: u32,
    },
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcedFieldFamily {
    #[serde(flatten)]
    pub kind: FieldKind,
    pub beta_range: (f64, f64),
}

impl ForcedFieldFamily {
    pub fn radial_logistic(b: f64, radius: f64, center: Vec<f64>) -> Result<Self> {
        Self::new(
            FieldKind::RadialLogistic {
                b,
                bump: BumpProfile { radius },
                center,
            },
            (0.0, 1.0),
        )
    }

    pub fn cos11(b: f64, beta_range: (f64, f64)) -> Result<Self> {
        Self::new(FieldKind::Cos11 { b }, beta_range)
    }

    pub fn autonomous(a2: f64, a0: f64, beta_slope: f64, beta_range: (f64, f64)) -> Result<Self> {
        Self::new(
            FieldKind::AutonomousRiccati {
                a2,
                a0,
                beta_slope,
                beta_power: 1,
            },
            beta_range,
        )
    }

    pub fn new(kind: FieldKind, beta_range: (f64, f64)) -> Result<Self> {
        let f = ForcedFieldFamily { kind, beta_range };
        f.validate()?;
        Ok(f)
    }

    pub fn with_beta_range(mut self, beta_range: (f64, f64)) -> Result<Self> {
        self.beta_range = beta_range;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.beta_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::param("beta_range", "need finite lo < hi"));
        }
        match &self.kind {
            FieldKind::RadialLogistic { b, bump, center }
            | FieldKind::LogisticHarvest { b, bump, center, .. } => {
                if !(*b > 1.0) || !b.is_finite() {
                    return Err(Error::param("b", "radial families need b > 1"));
                }
                bump.validate_on_torus()?;
                if center.len() < 2 || center.iter().any(|c| !c.is_finite()) {
                    return Err(Error::param("center", "need a finite point of a torus of dimension >= 2"));
                }
                if let FieldKind::LogisticHarvest { r, .. } = &self.kind {
                    if !(*r > 0.0) {
                        return Err(Error::param("r", "carrying capacity must be positive"));
                    }
                }
            }
            FieldKind::Cos11 { b } => {
                if !b.is_finite() {
                    return Err(Error::param("b", "must be finite"));
                }
            }
            FieldKind::AutonomousRiccati { a2, a0, beta_slope, beta_power } => {
                if ![a2, a0, beta_slope].iter().all(|v| v.is_finite()) {
                    return Err(Error::param("a2/a0/beta_slope", "must be finite"));
                }
                if *beta_power == 0 {
                    return Err(Error::param("beta_power", "must be at least 1"));
                }
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            FieldKind::RadialLogistic { .. } => "radial_logistic",
            FieldKind::Cos11 { .. } => "cos11",
            FieldKind::LogisticHarvest { .. } => "logistic_harvest",
            FieldKind::AutonomousRiccati { .. } => "autonomous_riccati",
        }
    }

    /// Base dimension the family is defined on, if it is fixed.
    pub fn base_dim(&self) -> Option<usize> {
        match &self.kind {
            FieldKind::RadialLogistic { center, .. } | FieldKind::LogisticHarvest { center, .. } => {
                Some(center.len())
            }
            FieldKind::Cos11 { .. } => Some(2),
            FieldKind::AutonomousRiccati { .. } => None,
        }
    }

    /// `b / (1 - b^{-1/2})` for the bump families.
    pub fn forcing_amplitude(&self) -> Option<f64> {
        match &self.kind {
            FieldKind::RadialLogistic { b, .. } | FieldKind::LogisticHarvest { b, .. } => {
                Some(b / (1.0 - b.powf(-0.5)))
            }
            _ => None,
        }
    }

    /// Default compact section `[gamma-, gamma+]`; `c` is the margin above the
    /// unforced attractor.
    pub fn section_bounds(&self, c: f64) -> (f64, f64) {
        match &self.kind {
            FieldKind::RadialLogistic { .. } => (-1.0, 1.0 + c),
            FieldKind::LogisticHarvest { r, .. } => (0.0, r * (2.0 + c) / 2.0),
            FieldKind::Cos11 { b } => {
                let s = b.max(0.0).sqrt();
                (-s, s * (1.0 + c))
            }
            FieldKind::AutonomousRiccati { a2, a0, .. } => {
                let s = if *a2 < 0.0 && *a0 > 0.0 {
                    (a0 / -a2).sqrt()
                } else {
                    1.0
                };
                (-s, s * (1.0 + c))
            }
        }
    }

    /// Default escape window for trajectories of this family.
    pub fn escape_window(&self) -> (f64, f64) {
        match &self.kind {
            FieldKind::RadialLogistic { .. } => (-10.0, 10.0),
            FieldKind::LogisticHarvest { r, .. } => (-4.5 * r, 5.5 * r),
            _ => {
                let (lo, hi) = self.section_bounds(0.0);
                let w = (hi - lo).max(1.0);
                (lo - 5.0 * w, hi + 5.0 * w)
            }
        }
    }

    fn check_beta(&self, beta: f64) -> Result<()> {
        let (lo, hi) = self.beta_range;
        if !(beta >= lo && beta <= hi) {
            return Err(Error::BetaOutOfRange { beta, lo, hi });
        }
        Ok(())
    }

    /// Checks the family against a base point dimension.
    pub fn check_dim(&self, dim: usize) -> Result<()> {
        match self.base_dim() {
            Some(d) if d != dim => Err(Error::DimensionMismatch { expected: d, got: dim }),
            _ => Ok(()),
        }
    }

    /// Unchecked evaluation used inside integrators. `theta` and `dir` have
    /// the base dimension; `dir` need not be normalized.
    #[inline]
    pub fn eval(&self, beta: f64, theta: &[f64], x: f64, dir: &[f64]) -> FieldEval {
        match &self.kind {
            FieldKind::RadialLogistic { b, bump, center } => {
                let amp = b / (1.0 - b.powf(-0.5));
                let g = radial_bump(bump, center, theta, dir);
                FieldEval {
                    value: -b * x * x + b - beta * amp * g.h,
                    dx: -2.0 * b * x,
                    dxx: -2.0 * b,
                    dtheta: -beta * amp * g.dv,
                    dtheta2: -beta * amp * g.dvv,
                    dtheta_dx: 0.0,
                    dbeta: -amp * g.h,
                }
            }
            FieldKind::LogisticHarvest { b, r, bump, center } => {
                let amp = b / (1.0 - b.powf(-0.5));
                let g = radial_bump(bump, center, theta, dir);
                let k = 2.0 * b / r;
                FieldEval {
                    value: k * x * (r - x) - beta * amp * g.h,
                    dx: k * (r - 2.0 * x),
                    dxx: -2.0 * k,
                    dtheta: -beta * amp * g.dv,
                    dtheta2: -beta * amp * g.dvv,
                    dtheta_dx: 0.0,
                    dbeta: -amp * g.h,
                }
            }
            FieldKind::Cos11 { b } => {
                let mut f = 0.0;
                let mut df = 0.0;
                let mut d2f = 0.0;
                for i in 0..2 {
                    let (s, c) = (2.0 * PI * theta[i]).sin_cos();
                    let c2 = c * c;
                    let c9 = c * c2 * c2 * c2 * c2;
                    let c10 = c9 * c;
                    let c11 = c10 * c;
                    f += c11;
                    df += dir[i] * (-22.0 * PI * c10 * s);
                    d2f += dir[i] * dir[i] * (44.0 * PI * PI * (10.0 * c9 * s * s - c11));
                }
                let g = (2.0 - f) / 4.0;
                FieldEval {
                    value: -x * x + b - beta * g,
                    dx: -2.0 * x,
                    dxx: -2.0,
                    dtheta: beta * df / 4.0,
                    dtheta2: beta * d2f / 4.0,
                    dtheta_dx: 0.0,
                    dbeta: -g,
                }
            }
            FieldKind::AutonomousRiccati { a2, a0, beta_slope, beta_power } => {
                let p = *beta_power as i32;
                FieldEval {
                    value: a2 * x * x + a0 + beta_slope * beta.powi(p),
                    dx: 2.0 * a2 * x,
                    dxx: 2.0 * a2,
                    dtheta: 0.0,
                    dtheta2: 0.0,
                    dtheta_dx: 0.0,
                    dbeta: beta_slope * p as f64 * beta.powi(p - 1),
                }
            }
        }
    }
}

struct RadialBump {
    h: f64,
    dv: f64,
    dvv: f64,
}

/// `h(|theta - center|)` and its first two derivatives along `v`.
///
/// With `u = (y/R)^2` the directional derivatives reduce to polynomials in
/// `u` and `<delta, v>`, so the center needs no special case.
#[inline]
fn radial_bump(bump: &BumpProfile, center: &[f64], theta: &[f64], v: &[f64]) -> RadialBump {
    let r2 = bump.radius * bump.radius;
    let mut y2 = 0.0;
    let mut p = 0.0;
    let mut v2 = 0.0;
    for i in 0..center.len() {
        let d = wrap_diff(theta[i], center[i]);
        y2 += d * d;
        p += d * v[i];
        v2 += v[i] * v[i];
    }
    let u = y2 / r2;
    if u >= 1.0 {
        return RadialBump { h: 0.0, dv: 0.0, dvv: 0.0 };
    }
    let w = 1.0 - u;
    RadialBump {
        h: w * w * w,
        dv: -6.0 / r2 * w * w * p,
        dvv: -6.0 / r2 * w * w * v2 + 24.0 / (r2 * r2) * w * p * p,
    }
}

impl ForcedFieldFamily {
    /// Times `|s|` in `(0, |t_final|)` at which the base orbit `theta0 + s rho`
    /// crosses the boundary of the bump support, where the field is only C^2.
    /// Empty for families without a bump.
    pub(crate) fn support_crossings(&self, theta0: &[f64], rho: &[f64], t_final: f64) -> Vec<f64> {
        let (bump, center) = match &self.kind {
            FieldKind::RadialLogistic { bump, center, .. } | FieldKind::LogisticHarvest { bump, center, .. } => (bump, center),
            _ => return Vec::new(),
        };
        let (s0, s1) = if t_final < 0.0 { (t_final, 0.0) } else { (0.0, t_final) };
        let a: Vec<f64> = theta0.iter().zip(center).map(|(t, c)| t - c).collect();
        let mut out = Vec::new();
        let mut shift = vec![0.0; a.len()];
        crossings_rec(&a, rho, bump.radius, 0, (s0, s1), &mut shift, &mut out);
        let mut out: Vec<f64> = out.into_iter().filter(|s| *s > s0 && *s < s1).map(f64::abs).collect();
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }
}

/// Lattice shifts whose ball meets the orbit segment, pruned coordinate by
/// coordinate; each surviving shift contributes the roots of one quadratic.
/// Roots are filtered against the full segment by the caller.
fn crossings_rec(a: &[f64], rho: &[f64], r: f64, i: usize, win: (f64, f64), shift: &mut [f64], out: &mut Vec<f64>) {
    if i == a.len() {
        let (mut qa, mut qb, mut qc) = (0.0, 0.0, -r * r);
        for j in 0..a.len() {
            let p = a[j] - shift[j];
            qa += rho[j] * rho[j];
            qb += 2.0 * p * rho[j];
            qc += p * p;
        }
        let disc = qb * qb - 4.0 * qa * qc;
        if qa > 0.0 && disc > 0.0 {
            let sq = disc.sqrt();
            out.push((-qb - sq) / (2.0 * qa));
            out.push((-qb + sq) / (2.0 * qa));
        }
        return;
    }
    let (lo, hi) = {
        let (u, v) = (a[i] + win.0 * rho[i], a[i] + win.1 * rho[i]);
        (u.min(v), u.max(v))
    };
    let mut k = (lo - r).ceil();
    while k <= (hi + r).floor() {
        let w = if rho[i] == 0.0 {
            if (a[i] - k).abs() < r { Some(win) } else { None }
        } else {
            let (p, q) = ((k - r - a[i]) / rho[i], (k + r - a[i]) / rho[i]);
            let (p, q) = (p.min(q).max(win.0), p.max(q).min(win.1));
            (p < q).then_some((p, q))
        };
        if let Some(w) = w {
            shift[i] = k;
            crossings_rec(a, rho, r, i + 1, w, shift, out);
        }
        k += 1.0;
    }
}

/// Checked evaluation at a torus point along a unit direction.
pub fn eval_field(
    family: &ForcedFieldFamily,
    beta: f64,
    theta: &TorusPoint,
    x: f64,
    direction: &[f64],
) -> Result<FieldEval> {
    family.check_beta(beta)?;
    family.check_dim(theta.dim())?;
    if direction.len() != theta.dim() {
        return Err(Error::DimensionMismatch {
            expected: theta.dim(),
            got: direction.len(),
        });
    }
    let n = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (n - 1.0).abs() > 1e-12 {
        return Err(Error::NotUnitDirection(n));
    }
    Ok(family.eval(beta, theta.coords(), x, direction))
}

/// The logistic-harvest family built from the same bump as a radial family.
///
/// Under `y = r (x + 1)/2` the harvest flow at `beta` equals the radial
/// flow at [`harvest_conjugate_beta`]`(r, beta)`; for `r = 2` the parameters agree.
pub fn radial_to_harvest(family: &ForcedFieldFamily, r: f64) -> Result<ForcedFieldFamily> {
    if !(r > 0.0) {
        return Err(Error::param("r", "must be positive"));
    }
    match &family.kind {
        FieldKind::RadialLogistic { b, bump, center } => ForcedFieldFamily::new(
            FieldKind::LogisticHarvest {
                b: *b,
                r,
                bump: *bump,
                center: center.clone(),
            },
            family.beta_range,
        ),
        _ => Err(Error::WrongFamily("radial_logistic")),
    }
}

/// Radial parameter whose flow is conjugate to the harvest flow at `beta`.
pub fn harvest_conjugate_beta(r: f64, beta: f64) -> f64 {
    2.0 * beta / r
}

/// `x -> r (x + 1)/2`, radial coordinates to harvest coordinates.
pub fn harvest_coordinate(r: f64, x: f64) -> f64 {
    r * (x + 1.0) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn radial() -> ForcedFieldFamily {
        ForcedFieldFamily::radial_logistic(4.0, 0.3, vec![0.4, 0.5]).unwrap()
    }

    #[test]
    fn bump_examples() {
        let h = BumpProfile::new(1.0).unwrap();
        assert_eq!(bump_value(&h, 0.0).unwrap(), BumpValue { h: 1.0, dh: 0.0, d2h: -6.0 });
        assert_eq!(bump_value(&h, 1.0).unwrap(), BumpValue { h: 0.0, dh: 0.0, d2h: 0.0 });
        let half = bump_value(&h, 0.5).unwrap();
        assert_eq!(half.h, 0.421875);
        assert!((half.dh + 1.6875).abs() < 1e-15);
        assert!(bump_value(&h, -0.1).is_err());
        let h3 = BumpProfile::new(0.3).unwrap();
        assert!((h3.eval(0.0).d2h + 6.0 / 0.09).abs() < 1e-12);
        assert!((h3.eval(0.15).dh + 6.0 * 0.5 / 0.3 * 0.5625).abs() < 1e-12);
    }

    #[test]
    fn bump_is_c2_at_support_edge() {
        let h = BumpProfile::new(0.3).unwrap();
        let v = h.eval(0.3 - 1e-7);
        assert!(v.h.abs() < 1e-18 && v.dh.abs() < 1e-10 && v.d2h.abs() < 1e-3);
    }

    #[test]
    fn radial_examples() {
        let f = radial();
        let t = TorusPoint::new(vec![0.1, 0.7]);
        let e = eval_field(&f, 0.0, &t, 1.0, &[1.0, 0.0]).unwrap();
        assert_eq!(e.value, 0.0);
        assert_eq!(e.dx, -8.0);
        let e = eval_field(&f, 0.0, &t, 0.0, &[1.0, 0.0]).unwrap();
        assert_eq!(e.value, 4.0);
        assert_eq!(e.dxx, -8.0);
    }

    #[test]
    fn support_crossings_along_an_axis() {
        let f = ForcedFieldFamily::radial_logistic(4.0, 0.3, vec![0.4, 0.5]).unwrap();
        let close = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
        let s = f.support_crossings(&[0.0, 0.5], &[1.0, 0.0], 1.0);
        assert!(close(&s, &[0.1, 0.7]), "{s:?}");
        // wraps once around the torus, backwards
        let s = f.support_crossings(&[0.0, 0.5], &[1.0, 0.0], -1.5);
        assert!(close(&s, &[0.3, 0.9, 1.3]), "{s:?}");
        assert!(f.support_crossings(&[0.0, 0.0], &[1.0, 0.0], 1.0).is_empty());
        let c = ForcedFieldFamily::cos11(100.0, (0.0, 200.0)).unwrap();
        assert!(c.support_crossings(&[0.0, 0.5], &[1.0, 0.0], 1.0).is_empty());
    }

    #[test]
    fn cos11_vanishes_at_maximum() {
        let f = ForcedFieldFamily::cos11(100.0, (0.0, 400.0)).unwrap();
        let e = eval_field(&f, 176.01538, &TorusPoint::new(vec![0.0, 0.0]), 0.0, &[1.0, 0.0]).unwrap();
        assert_eq!(e.value, 100.0);
        assert_eq!(e.dbeta, 0.0);
    }

    #[test]
    fn checked_eval_errors() {
        let f = radial();
        let t = TorusPoint::new(vec![0.1, 0.7]);
        assert!(matches!(eval_field(&f, 1.5, &t, 0.0, &[1.0, 0.0]), Err(Error::BetaOutOfRange { .. })));
        assert!(matches!(eval_field(&f, 0.5, &t, 0.0, &[1.0, 1.0]), Err(Error::NotUnitDirection(_))));
        assert!(ForcedFieldFamily::radial_logistic(1.0, 0.3, vec![0.0, 0.0]).is_err());
        assert!(ForcedFieldFamily::radial_logistic(4.0, 0.6, vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn radial_axiom_shapes() {
        let f = radial();
        let center = TorusPoint::new(vec![0.4, 0.5]);
        for x in [-1.0, 0.0, 1.2] {
            let e = eval_field(&f, 0.5, &center, x, &[0.0, 1.0]).unwrap();
            assert!(e.dbeta < 0.0);
            assert_eq!(e.dxx, -8.0);
            assert_eq!(e.dtheta_dx, 0.0);
        }
        let far = TorusPoint::new(vec![0.9, 0.0]);
        assert_eq!(eval_field(&f, 0.5, &far, 0.3, &[1.0, 0.0]).unwrap().dbeta, 0.0);
    }

    #[test]
    fn harvest_conjugacy_at_r2_and_general_r() {
        let f = radial();
        let b = 4.0;
        let h2 = radial_to_harvest(&f, 2.0).unwrap();
        let t = [0.1, 0.7];
        let e = h2.eval(0.0, &t, 0.0, &[1.0, 0.0]);
        assert_eq!(e.value, 0.0);
        assert_eq!(h2.eval(0.0, &t, 2.0, &[1.0, 0.0]).value, 0.0);
        assert!(radial_to_harvest(&f, 0.0).is_err());
        // y' = (r/2) x' under y = r(x+1)/2, with beta rescaled
        let r = 3.0;
        let h = radial_to_harvest(&f, r).unwrap().with_beta_range((0.0, 2.0)).unwrap();
        let theta = [0.45, 0.52];
        for (x, beta) in [(0.0, 0.3), (0.7, 0.9), (-0.4, 0.1)] {
            let y = harvest_coordinate(r, x);
            let lhs = h.eval(beta, &theta, y, &[1.0, 0.0]).value;
            let rhs = r / 2.0 * f.eval(harvest_conjugate_beta(r, beta), &theta, x, &[1.0, 0.0]).value;
            assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
        }
        // midpoint value b r / 2
        assert!((h.eval(0.0, &[0.9, 0.9], r / 2.0, &[1.0, 0.0]).value - b * r / 2.0).abs() < 1e-12);
        // forcing term identical at the same theta
        let df = h.eval(0.7, &theta, 1.0, &[1.0, 0.0]).dbeta;
        assert_eq!(df, f.eval(0.7, &theta, 1.0, &[1.0, 0.0]).dbeta);
    }
}
