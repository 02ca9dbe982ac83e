//! The fibre ODE `x' = F_beta(theta0 + t rho, x)` and its variational
//! equations along a direction of the base torus.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ForcedFieldFamily;
use crate::ode::{solve, solve_on_schedule, solve_recorded, OdeSystem, Solution, Stepper};
use crate::torus::{RotationVector, TorusPoint};

/// Largest base dimension handled without heap allocation in the inner loop.
pub const MAX_DIM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rk45Adaptive,
    Rk4Fixed { step: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub escape_low: f64,
    pub escape_high: f64,
    pub method: Method,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_step: 0.05,
            escape_low: -10.0,
            escape_high: 10.0,
            method: Method::Rk45Adaptive,
        }
    }
}

impl IntegratorConfig {
    /// Default tolerances with the family's escape window.
    pub fn for_family(family: &ForcedFieldFamily) -> Self {
        let (lo, hi) = family.escape_window();
        IntegratorConfig {
            escape_low: lo,
            escape_high: hi,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::param("rel_tol/abs_tol", "tolerances must be positive"));
        }
        if !(self.max_step > 0.0) {
            return Err(Error::param("max_step", "must be positive"));
        }
        if !(self.escape_low < self.escape_high) {
            return Err(Error::param("escape_low/escape_high", "need escape_low < escape_high"));
        }
        if let Method::Rk4Fixed { step } = self.method {
            if !(step > 0.0) {
                return Err(Error::param("method.step", "must be positive"));
            }
        }
        Ok(())
    }

    pub(crate) fn stepper(&self) -> Stepper {
        match self.method {
            Method::Rk45Adaptive => Stepper::Dopri5 {
                rel_tol: self.rel_tol,
                abs_tol: self.abs_tol,
                max_step: self.max_step,
            },
            Method::Rk4Fixed { step } => Stepper::Rk4 { step },
        }
    }

    pub(crate) fn window(&self) -> (f64, f64) {
        (self.escape_low, self.escape_high)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AugmentedFlowState {
    pub t: f64,
    pub x: f64,
    pub log_dx: f64,
    pub dtheta: f64,
    pub dxx_ratio: f64,
    pub dtheta_dx_ratio: f64,
    pub dtheta2: f64,
    /// First time the orbit left the escape window.
    pub escape_time: Option<f64>,
    /// Extrapolated time of blow-up past the window, from the local Riccati shape.
    pub blowup_estimate: Option<f64>,
}

impl AugmentedFlowState {
    pub fn initial(x0: f64) -> Self {
        AugmentedFlowState { x: x0, ..Default::default() }
    }

    pub fn escaped(&self) -> bool {
        self.escape_time.is_some()
    }

    pub fn dx(&self) -> f64 {
        self.log_dx.exp()
    }
}

/// One fibre with its base orbit; `N` selects how many channels are carried
/// (1: position, 2: plus log derivative, 6: everything).
pub(crate) struct Fibre<'a> {
    pub family: &'a ForcedFieldFamily,
    pub beta: f64,
    pub theta0: &'a [f64],
    pub rho: &'a [f64],
    pub dir: &'a [f64],
}

impl Fibre<'_> {
    #[inline]
    fn base(&self, t: f64) -> ([f64; MAX_DIM], usize) {
        let n = self.theta0.len();
        let mut th = [0.0; MAX_DIM];
        for (t_i, (a, r)) in th.iter_mut().zip(self.theta0.iter().zip(self.rho.iter())) {
            *t_i = a + t * r;
        }
        (th, n)
    }
}

// Steps end where the base orbit crosses the edge of the bump support. The
// field is only C^2 there and the embedded error estimate of a step across
// it is far too optimistic.
impl OdeSystem<1> for Fibre<'_> {
    fn breakpoints(&self, t_final: f64) -> Vec<f64> {
        self.family.support_crossings(self.theta0, self.rho, t_final)
    }

    #[inline]
    fn rhs(&self, t: f64, y: &[f64; 1]) -> [f64; 1] {
        let (th, n) = self.base(t);
        [self.family.eval(self.beta, &th[..n], y[0], self.dir).value]
    }
}

impl OdeSystem<2> for Fibre<'_> {
    fn breakpoints(&self, t_final: f64) -> Vec<f64> {
        self.family.support_crossings(self.theta0, self.rho, t_final)
    }

    #[inline]
    fn rhs(&self, t: f64, y: &[f64; 2]) -> [f64; 2] {
        let (th, n) = self.base(t);
        let e = self.family.eval(self.beta, &th[..n], y[0], self.dir);
        [e.value, e.dx]
    }
}

impl OdeSystem<6> for Fibre<'_> {
    fn breakpoints(&self, t_final: f64) -> Vec<f64> {
        self.family.support_crossings(self.theta0, self.rho, t_final)
    }

    #[inline]
    fn rhs(&self, t: f64, y: &[f64; 6]) -> [f64; 6] {
        let (th, n) = self.base(t);
        let e = self.family.eval(self.beta, &th[..n], y[0], self.dir);
        let a = y[2];
        [
            e.value,
            e.dx,
            e.dtheta + e.dx * a,
            e.dxx * y[1].exp(),
            e.dtheta_dx + e.dxx * a,
            e.dxx * a * a + e.dtheta2 + 2.0 * e.dtheta_dx * a + e.dx * y[5],
        ]
    }
}

/// A family driven by a fixed rotation vector, integrated with a fixed config.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewFlow {
    pub family: ForcedFieldFamily,
    pub rho: RotationVector,
    pub cfg: IntegratorConfig,
}

impl SkewFlow {
    pub fn new(family: ForcedFieldFamily, rho: RotationVector, cfg: IntegratorConfig) -> Result<Self> {
        family.validate()?;
        cfg.validate()?;
        family.check_dim(rho.dim())?;
        if rho.dim() > MAX_DIM {
            return Err(Error::param("rho", format!("at most {MAX_DIM} base dimensions are supported")));
        }
        Ok(SkewFlow { family, rho, cfg })
    }

    pub fn dim(&self) -> usize {
        self.rho.dim()
    }

    fn check_inputs(&self, beta: f64, theta: &[f64], x0: f64, dir: &[f64]) -> Result<()> {
        let (lo, hi) = self.family.beta_range;
        if !(beta >= lo && beta <= hi) {
            return Err(Error::BetaOutOfRange { beta, lo, hi });
        }
        for (len, _) in [(theta.len(), "theta"), (dir.len(), "direction")] {
            if len != self.dim() {
                return Err(Error::DimensionMismatch { expected: self.dim(), got: len });
            }
        }
        let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (n - 1.0).abs() > 1e-12 {
            return Err(Error::NotUnitDirection(n));
        }
        if !x0.is_finite() {
            return Err(Error::param("x0", "must be finite"));
        }
        Ok(())
    }

    pub(crate) fn fibre<'a>(&'a self, beta: f64, theta0: &'a [f64], dir: &'a [f64]) -> Fibre<'a> {
        Fibre {
            family: &self.family,
            beta,
            theta0,
            rho: self.rho.components(),
            dir,
        }
    }

    /// Position only; no validation.
    pub(crate) fn position(&self, beta: f64, theta0: &[f64], x0: f64, t: f64) -> Result<Solution<1>> {
        let dir = [0.0; MAX_DIM];
        let f = self.fibre(beta, theta0, &dir[..theta0.len()]);
        solve(&f, [x0], t, self.cfg.stepper(), self.cfg.window())
    }

    /// Position with the accepted step sizes; no validation.
    pub(crate) fn position_recorded(&self, beta: f64, theta0: &[f64], x0: f64, t: f64) -> Result<(Solution<1>, Vec<f64>)> {
        let dir = [0.0; MAX_DIM];
        let f = self.fibre(beta, theta0, &dir[..theta0.len()]);
        solve_recorded(&f, [x0], t, self.cfg.stepper(), self.cfg.window())
    }

    /// Position replayed on a recorded schedule; no validation.
    pub(crate) fn position_on_schedule(&self, beta: f64, theta0: &[f64], x0: f64, t: f64, schedule: &[f64]) -> Result<Solution<1>> {
        let dir = [0.0; MAX_DIM];
        let f = self.fibre(beta, theta0, &dir[..theta0.len()]);
        solve_on_schedule(&f, [x0], t, schedule, self.cfg.window())
    }

    /// Position and log derivative; no validation.
    pub(crate) fn position_log_dx(&self, beta: f64, theta0: &[f64], x0: f64, t: f64) -> Result<Solution<2>> {
        let dir = [0.0; MAX_DIM];
        let f = self.fibre(beta, theta0, &dir[..theta0.len()]);
        solve(&f, [x0, 0.0], t, self.cfg.stepper(), self.cfg.window())
    }

    /// All channels; no validation.
    pub(crate) fn full(&self, beta: f64, theta0: &[f64], x0: f64, t: f64, dir: &[f64]) -> Result<AugmentedFlowState> {
        let f = self.fibre(beta, theta0, dir);
        let s = solve(&f, [x0, 0.0, 0.0, 0.0, 0.0, 0.0], t, self.cfg.stepper(), self.cfg.window())?;
        let y = s.y;
        let mut out = AugmentedFlowState {
            t: s.t,
            x: y[0],
            log_dx: y[1],
            dtheta: y[2],
            dxx_ratio: y[3],
            dtheta_dx_ratio: y[4],
            dtheta2: y[5],
            escape_time: None,
            blowup_estimate: None,
        };
        if let Some(e) = s.escape {
            out.escape_time = Some(e.time);
            let (th, n) = f.base(e.time);
            let curv = self.family.eval(beta, &th[..n], e.x, dir).dxx.abs();
            if curv > 0.0 && e.x != 0.0 {
                out.blowup_estimate = Some(e.time + t.signum() * 2.0 / (curv * e.x.abs()));
            }
        }
        Ok(out)
    }

    /// Integrate the fibre ODE with all variational channels along the unit
    /// base direction `direction`. Negative `t_final` runs the reversed flow.
    pub fn integrate(
        &self,
        beta: f64,
        theta0: &TorusPoint,
        x0: f64,
        t_final: f64,
        direction: &[f64],
    ) -> Result<AugmentedFlowState> {
        self.check_inputs(beta, theta0.coords(), x0, direction)?;
        if !t_final.is_finite() {
            return Err(Error::param("t_final", "must be finite"));
        }
        self.full(beta, theta0.coords(), x0, t_final, direction)
    }

    /// States at `n_samples + 1` equally spaced times in `[0, t_final]`,
    /// stopping at the first escape.
    pub fn trajectory(
        &self,
        beta: f64,
        theta0: &TorusPoint,
        x0: f64,
        t_final: f64,
        n_samples: usize,
        direction: &[f64],
    ) -> Result<Vec<AugmentedFlowState>> {
        self.check_inputs(beta, theta0.coords(), x0, direction)?;
        if n_samples == 0 {
            return Err(Error::param("n_samples", "must be positive"));
        }
        // integrating each sample from t = 0 keeps every row independent of the sampling
        let mut out = Vec::with_capacity(n_samples + 1);
        for i in 0..=n_samples {
            let t = t_final * i as f64 / n_samples as f64;
            let s = self.full(beta, theta0.coords(), x0, t, direction)?;
            let stop = s.escaped();
            out.push(s);
            if stop {
                break;
            }
        }
        Ok(out)
    }

    fn unescaped(&self, beta: f64, theta: &[f64], x: f64, t: f64) -> Result<f64> {
        let s = self.position(beta, theta, x, t)?;
        match s.escape {
            Some(e) => Err(Error::Escaped { time: e.time, x: e.x }),
            None => Ok(s.y[0]),
        }
    }

    /// `|xi(t + tau, theta, x) - xi(t, theta + tau rho, xi(tau, theta, x))|`.
    pub fn check_cocycle(&self, beta: f64, theta: &TorusPoint, x: f64, t: f64, tau: f64) -> Result<f64> {
        let zero = vec![0.0; self.dim()];
        let mut e1 = zero.clone();
        e1[0] = 1.0;
        self.check_inputs(beta, theta.coords(), x, &e1)?;
        if t == 0.0 {
            return Ok(0.0);
        }
        let whole = self.unescaped(beta, theta.coords(), x, t + tau)?;
        let mid = self.unescaped(beta, theta.coords(), x, tau)?;
        let shifted = theta.shifted(self.rho.components(), tau);
        let parts = self.unescaped(beta, shifted.coords(), mid, t)?;
        Ok((whole - parts).abs())
    }

    /// Forward by `t`, then back along the reversed flow from the moved base point.
    pub fn inverse_check(&self, beta: f64, theta: &TorusPoint, x: f64, t: f64) -> Result<f64> {
        let mut e1 = vec![0.0; self.dim()];
        e1[0] = 1.0;
        self.check_inputs(beta, theta.coords(), x, &e1)?;
        if t == 0.0 {
            return Ok(0.0);
        }
        let y = self.unescaped(beta, theta.coords(), x, t)?;
        let moved = theta.shifted(self.rho.components(), t);
        let back = self.unescaped(beta, moved.coords(), y, -t)?;
        Ok((back - x).abs())
    }
}

/// CSV rows `t,x,log_dx,dtheta,dtheta2`.
pub fn trajectory_csv(states: &[AugmentedFlowState]) -> String {
    let mut s = String::from("t,x,log_dx,dtheta,dtheta2\n");
    for st in states {
        s.push_str(&format!(
            "{:e},{:e},{:e},{:e},{:e}\n",
            st.t, st.x, st.log_dx, st.dtheta, st.dtheta2
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn riccati(a0: f64) -> SkewFlow {
        let fam = ForcedFieldFamily::autonomous(-1.0, a0, 0.0, (0.0, 1.0)).unwrap();
        let cfg = IntegratorConfig { escape_low: -1e8, escape_high: 1e8, ..Default::default() };
        SkewFlow::new(fam, RotationVector::golden_pi(), cfg).unwrap()
    }

    #[test]
    fn tanh_oracle() {
        let f = riccati(1.0);
        let s = f.integrate(0.0, &TorusPoint::new(vec![0.0, 0.0]), 0.0, 1.0, &[1.0, 0.0]).unwrap();
        assert!((s.x - 0.7615941559557649).abs() < 1e-10);
        assert!((s.log_dx + 2.0 * 1f64.cosh().ln()).abs() < 1e-9);
        // dxx_ratio = int -2 exp(log_dx) = -2 int sech^2 = -2 tanh
        assert!((s.dxx_ratio + 2.0 * 1f64.tanh()).abs() < 1e-9);
    }

    #[test]
    fn tan_blowup_escape() {
        let f = riccati(-1.0);
        let s = f.integrate(0.0, &TorusPoint::new(vec![0.0, 0.0]), 0.0, 3.0, &[1.0, 0.0]).unwrap();
        let te = s.escape_time.unwrap();
        assert!((te - std::f64::consts::FRAC_PI_2).abs() < 1e-6, "{te}");
        assert!((s.blowup_estimate.unwrap() - std::f64::consts::FRAC_PI_2).abs() < 1e-6);
    }

    #[test]
    fn zero_time_identity() {
        let f = riccati(1.0);
        let s = f.integrate(0.0, &TorusPoint::new(vec![0.3, 0.1]), 0.4, 0.0, &[0.0, 1.0]).unwrap();
        assert_eq!(s, AugmentedFlowState::initial(0.4));
        assert_eq!(f.check_cocycle(0.0, &TorusPoint::new(vec![0.3, 0.1]), 0.4, 0.0, 0.5).unwrap(), 0.0);
        assert_eq!(f.inverse_check(0.0, &TorusPoint::new(vec![0.3, 0.1]), 0.4, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn input_errors() {
        let f = riccati(1.0);
        let th = TorusPoint::new(vec![0.0, 0.0]);
        assert!(matches!(f.integrate(2.0, &th, 0.0, 1.0, &[1.0, 0.0]), Err(Error::BetaOutOfRange { .. })));
        assert!(matches!(f.integrate(0.0, &th, 0.0, 1.0, &[1.0, 1.0]), Err(Error::NotUnitDirection(_))));
        assert!(f.integrate(0.0, &TorusPoint::new(vec![0.0]), 0.0, 1.0, &[1.0]).is_err());
        let bad = IntegratorConfig { escape_low: 1.0, escape_high: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn escaped_leg_is_an_error_in_checks() {
        let f = riccati(-1.0);
        let th = TorusPoint::new(vec![0.0, 0.0]);
        assert!(matches!(f.check_cocycle(0.0, &th, 0.0, 1.0, 1.0), Err(Error::Escaped { .. })));
    }

    #[test]
    fn trajectory_rows() {
        let f = riccati(1.0);
        let tr = f.trajectory(0.0, &TorusPoint::new(vec![0.0, 0.0]), 0.0, 1.0, 4, &[1.0, 0.0]).unwrap();
        assert_eq!(tr.len(), 5);
        assert!((tr[2].x - 0.5f64.tanh()).abs() < 1e-10);
        let csv = trajectory_csv(&tr);
        assert_eq!(csv.lines().count(), 6);
    }
}
