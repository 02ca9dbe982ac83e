//! First return map to the section `theta_D = section_offset`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{AugmentedFlowState, SkewFlow, MAX_DIM};
use crate::torus::{induce_frequency, wrap, InducedFrequency, TorusPoint};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReturnMapEval {
    pub x_next: f64,
    pub log_dx: f64,
    pub dxx_ratio: f64,
    /// One entry per coordinate direction of the section.
    pub dtheta: Vec<f64>,
    pub dtheta2: Vec<f64>,
    pub dtheta_dx_ratio: Vec<f64>,
    pub escape_time: Option<f64>,
}

impl ReturnMapEval {
    pub fn escaped(&self) -> bool {
        self.escape_time.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectionMap {
    pub flow: SkewFlow,
    pub freq: InducedFrequency,
    pub section_offset: f64,
}

impl SectionMap {
    pub fn new(flow: SkewFlow, section_offset: f64) -> Result<Self> {
        let freq = induce_frequency(&flow.rho)?;
        if !section_offset.is_finite() {
            return Err(Error::param("section_offset", "must be finite"));
        }
        Ok(SectionMap {
            flow,
            freq,
            section_offset: wrap(section_offset),
        })
    }

    /// Section dimension `d = D - 1`.
    pub fn d(&self) -> usize {
        self.freq.d()
    }

    pub fn return_time(&self) -> f64 {
        self.freq.return_time
    }

    pub fn rho_d(&self) -> f64 {
        self.freq.rho_d
    }

    pub fn omega(&self) -> &[f64] {
        &self.freq.omega
    }

    /// Section point as a point of the full torus.
    #[inline]
    pub(crate) fn embed(&self, theta: &[f64]) -> [f64; MAX_DIM] {
        let mut out = [0.0; MAX_DIM];
        out[..theta.len()].copy_from_slice(theta);
        out[theta.len()] = self.section_offset;
        out
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.d() {
            return Err(Error::DimensionMismatch { expected: self.d(), got: theta.len() });
        }
        Ok(())
    }

    fn eval_signed(&self, beta: f64, theta: &TorusPoint, x: f64, sign: f64) -> Result<ReturnMapEval> {
        self.check_theta(theta.coords())?;
        let d = self.d();
        let base = self.embed(theta.coords());
        let base = TorusPoint::new(base[..=d].to_vec());
        let t = sign * self.return_time();
        let mut out = ReturnMapEval {
            x_next: x,
            log_dx: 0.0,
            dxx_ratio: 0.0,
            dtheta: Vec::with_capacity(d),
            dtheta2: Vec::with_capacity(d),
            dtheta_dx_ratio: Vec::with_capacity(d),
            escape_time: None,
        };
        for i in 0..d {
            let mut dir = vec![0.0; d + 1];
            dir[i] = 1.0;
            let s = self.flow.integrate(beta, &base, x, t, &dir)?;
            out.x_next = s.x;
            out.log_dx = s.log_dx;
            out.dxx_ratio = s.dxx_ratio;
            out.escape_time = s.escape_time;
            out.dtheta.push(s.dtheta);
            out.dtheta2.push(s.dtheta2);
            out.dtheta_dx_ratio.push(s.dtheta_dx_ratio);
        }
        Ok(out)
    }

    /// `xi~_theta(x)` over one return, with derivatives along each section axis.
    pub fn return_map(&self, beta: f64, theta: &TorusPoint, x: f64) -> Result<ReturnMapEval> {
        self.eval_signed(beta, theta, x, 1.0)
    }

    /// Backward over one return from the fibre over `theta`; lands over `theta - omega`.
    pub fn inverse_return_map(&self, beta: f64, theta: &TorusPoint, x: f64) -> Result<ReturnMapEval> {
        self.eval_signed(beta, theta, x, -1.0)
    }

    /// All channels along one unit section direction (forward if `inverse` is false).
    pub fn along(&self, beta: f64, theta: &TorusPoint, x: f64, dir: &[f64], inverse: bool) -> Result<AugmentedFlowState> {
        self.check_theta(theta.coords())?;
        if dir.len() != self.d() {
            return Err(Error::DimensionMismatch { expected: self.d(), got: dir.len() });
        }
        let d = self.d();
        let base = self.embed(theta.coords());
        let mut full = dir.to_vec();
        full.push(0.0);
        let t = if inverse { -self.return_time() } else { self.return_time() };
        self.flow.integrate(beta, &TorusPoint::new(base[..=d].to_vec()), x, t, &full)
    }

    /// Position after one return, `None` on escape. Unchecked.
    #[inline]
    pub(crate) fn step(&self, beta: f64, theta: &[f64], x: f64, sign: f64) -> Result<Option<f64>> {
        let base = self.embed(theta);
        let s = self.flow.position(beta, &base[..theta.len() + 1], x, sign * self.return_time())?;
        Ok(if s.escape.is_some() { None } else { Some(s.y[0]) })
    }

    /// As [`Self::step`], with the step sizes (empty for fixed-step methods).
    pub(crate) fn step_recorded(&self, beta: f64, theta: &[f64], x: f64, sign: f64) -> Result<(Option<f64>, Vec<f64>)> {
        let base = self.embed(theta);
        let (s, steps) = self.flow.position_recorded(beta, &base[..theta.len() + 1], x, sign * self.return_time())?;
        Ok((if s.escape.is_some() { None } else { Some(s.y[0]) }, steps))
    }

    /// One return replayed on a recorded schedule.
    pub(crate) fn step_on_schedule(&self, beta: f64, theta: &[f64], x: f64, sign: f64, schedule: &[f64]) -> Result<Option<f64>> {
        let base = self.embed(theta);
        let s = self.flow.position_on_schedule(beta, &base[..theta.len() + 1], x, sign * self.return_time(), schedule)?;
        Ok(if s.escape.is_some() { None } else { Some(s.y[0]) })
    }

    /// Position and log derivative after one return, `None` on escape. Unchecked.
    #[inline]
    pub(crate) fn step_log(&self, beta: f64, theta: &[f64], x: f64, sign: f64) -> Result<Option<(f64, f64)>> {
        let base = self.embed(theta);
        let s = self.flow.position_log_dx(beta, &base[..theta.len() + 1], x, sign * self.return_time())?;
        Ok(if s.escape.is_some() { None } else { Some((s.y[0], s.y[1])) })
    }

    /// Section point advanced by `k` returns (negative `k` goes back).
    pub(crate) fn advance(&self, theta: &[f64], k: f64) -> Vec<f64> {
        theta
            .iter()
            .zip(self.omega())
            .map(|(t, w)| wrap(t + k * w))
            .collect()
    }
}

pub use crate::graphs::{lyapunov_relation_check, LyapunovRelation};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::ForcedFieldFamily;
    use crate::flow::IntegratorConfig;
    use crate::torus::RotationVector;

    fn radial(b: f64, rho: Vec<f64>) -> SectionMap {
        let fam = ForcedFieldFamily::radial_logistic(b, 0.3, vec![0.4, 0.5]).unwrap();
        let cfg = IntegratorConfig::for_family(&fam);
        let flow = SkewFlow::new(fam, RotationVector::new(rho).unwrap(), cfg).unwrap();
        SectionMap::new(flow, 0.0).unwrap()
    }

    #[test]
    fn unforced_equilibria() {
        let m = radial(4.0, vec![(5f64.sqrt() - 1.0) / 2.0, std::f64::consts::PI]);
        let th = TorusPoint::new(vec![0.3]);
        let up = m.return_map(0.0, &th, 1.0).unwrap();
        assert!((up.x_next - 1.0).abs() < 1e-12);
        assert!((up.log_dx + 8.0 / std::f64::consts::PI).abs() < 1e-9);
        assert_eq!(up.dtheta, vec![0.0]);
        let down = m.return_map(0.0, &th, -1.0).unwrap();
        assert!((down.x_next + 1.0).abs() < 1e-12);
        assert!((down.log_dx - 8.0 / std::f64::consts::PI).abs() < 1e-9);
        assert!((m.inverse_return_map(0.0, &th, 1.0).unwrap().x_next - 1.0).abs() < 1e-12);
        assert!((m.inverse_return_map(0.0, &th, -1.0).unwrap().x_next + 1.0).abs() < 1e-12);
    }

    #[test]
    fn unforced_tanh_return() {
        // b = 1 only fails the `b > 1` family check, so use the autonomous form of the same ODE
        let fam = ForcedFieldFamily::autonomous(-1.0, 1.0, 0.0, (0.0, 1.0)).unwrap();
        let flow = SkewFlow::new(fam.clone(), RotationVector::new(vec![0.3, 1.0]).unwrap(), IntegratorConfig::for_family(&fam)).unwrap();
        let m = SectionMap::new(flow, 0.0).unwrap();
        let r = m.return_map(0.0, &TorusPoint::new(vec![0.0]), 0.0).unwrap();
        assert!((r.x_next - 1f64.tanh()).abs() < 1e-10);
    }

    #[test]
    fn inverse_composes_to_identity() {
        let m = radial(4.0, vec![(5f64.sqrt() - 1.0) / 2.0, std::f64::consts::PI]);
        let th = TorusPoint::new(vec![0.37]);
        let fwd = m.return_map(0.3, &th, 0.3).unwrap();
        let next = TorusPoint::new(m.advance(th.coords(), 1.0));
        let back = m.inverse_return_map(0.3, &next, fwd.x_next).unwrap();
        assert!((back.x_next - 0.3).abs() < 1e-8);
        assert!((back.log_dx + fwd.log_dx).abs() < 1e-7);
    }

    #[test]
    fn dimension_checked() {
        let m = radial(4.0, vec![0.6, 3.0]);
        assert!(m.return_map(0.0, &TorusPoint::new(vec![0.1, 0.2]), 0.0).is_err());
    }
}
