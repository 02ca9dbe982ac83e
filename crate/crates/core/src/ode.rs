//! Explicit Runge-Kutta steppers for small fixed-size systems.
//!
//! Dormand-Prince 5(4) with the standard 4th-order continuous extension for
//! the adaptive path, classic RK4 for convergence-order checks. The first
//! component is watched against an escape window; a crossing is located on
//! the dense output by bisection.

use crate::error::{Error, Result};

pub trait OdeSystem<const N: usize> {
    fn rhs(&self, t: f64, y: &[f64; N]) -> [f64; N];

    /// Sorted times `|t|` in `(0, |t_final|)` where the right-hand side loses
    /// smoothness; adaptive steps end exactly on them.
    fn breakpoints(&self, _t_final: f64) -> Vec<f64> {
        Vec::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stepper {
    Dopri5 {
        rel_tol: f64,
        abs_tol: f64,
        max_step: f64,
    },
    Rk4 {
        step: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Escape {
    pub time: f64,
    pub x: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Solution<const N: usize> {
    pub t: f64,
    pub y: [f64; N],
    pub escape: Option<Escape>,
    pub steps: usize,
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    -71.0 / 57600.0,
    0.0,
    71.0 / 16695.0,
    -71.0 / 1920.0,
    17253.0 / 339200.0,
    -22.0 / 525.0,
    1.0 / 40.0,
];
// dense output: y(t + s h) = y + h * sum_i k_i * sum_j P[i][j] s^(j+1)
const P: [[f64; 4]; 7] = [
    [1.0, -8048581381.0 / 2820520608.0, 8663915743.0 / 2820520608.0, -12715105075.0 / 11282082432.0],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200.0 / 32700410799.0, -68118460800.0 / 10900136933.0, 87487479700.0 / 32700410799.0],
    [0.0, -1754552775.0 / 470086768.0, 14199869525.0 / 1410260304.0, -10690763975.0 / 1880347072.0],
    [0.0, 127303824393.0 / 49829197408.0, -318862633887.0 / 49829197408.0, 701980252875.0 / 199316789632.0],
    [0.0, -282668133.0 / 205662961.0, 2019193451.0 / 616988883.0, -1453857185.0 / 822651844.0],
    [0.0, 40617522.0 / 29380423.0, -110615467.0 / 29380423.0, 69997945.0 / 29380423.0],
];

#[inline]
fn axpy<const N: usize>(y: &[f64; N], h: f64, ks: &[[f64; N]; 7], coef: &[f64], n: usize) -> [f64; N] {
    let mut out = *y;
    for (i, o) in out.iter_mut().enumerate() {
        let mut s = 0.0;
        for j in 0..n {
            s += coef[j] * ks[j][i];
        }
        *o += h * s;
    }
    out
}

fn dense<const N: usize>(y: &[f64; N], h: f64, ks: &[[f64; N]; 7], s: f64) -> [f64; N] {
    let pw = [s, s * s, s * s * s, s * s * s * s];
    let mut coef = [0.0; 7];
    for i in 0..7 {
        coef[i] = (0..4).map(|j| P[i][j] * pw[j]).sum();
    }
    axpy(y, h, ks, &coef, 7)
}

#[inline]
fn outside(x: f64, window: (f64, f64)) -> bool {
    !(x >= window.0 && x <= window.1)
}

/// Adaptive solve that also returns the accepted signed step sizes, for
/// replay with [`solve_on_schedule`]. Fixed-step methods record nothing.
pub fn solve_recorded<const N: usize, S: OdeSystem<N>>(
    sys: &S,
    y0: [f64; N],
    t_final: f64,
    stepper: Stepper,
    window: (f64, f64),
) -> Result<(Solution<N>, Vec<f64>)> {
    let mut steps = Vec::new();
    let sol = match stepper {
        Stepper::Dopri5 { rel_tol, abs_tol, max_step } if t_final != 0.0 && !outside(y0[0], window) => {
            dopri5(sys, y0, t_final, rel_tol, abs_tol, max_step, window, Some(&mut steps))?
        }
        _ => solve(sys, y0, t_final, stepper, window)?,
    };
    Ok((sol, steps))
}

/// Dormand-Prince steps of prescribed sizes, without error control. The
/// result is a smooth function of `y0`, which adaptive stepping is not.
pub fn solve_on_schedule<const N: usize, S: OdeSystem<N>>(
    sys: &S,
    y0: [f64; N],
    t_final: f64,
    schedule: &[f64],
    window: (f64, f64),
) -> Result<Solution<N>> {
    if outside(y0[0], window) {
        return Ok(Solution { t: 0.0, y: y0, escape: Some(Escape { time: 0.0, x: y0[0] }), steps: 0 });
    }
    let mut t = 0.0;
    let mut y = y0;
    let mut k: [[f64; N]; 7] = [[0.0; N]; 7];
    k[0] = sys.rhs(t, &y);
    for (i, &hs) in schedule.iter().enumerate() {
        for s in 1..7 {
            let ys = axpy(&y, hs, &k, &A[s], s);
            k[s] = sys.rhs(t + C[s] * hs, &ys);
        }
        let y_new = axpy(&y, hs, &k, &A[6], 6);
        if y_new.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { t_low: t, t_high: t + hs });
        }
        if let Some(sol) = locate_escape(&y, y_new[0], hs, &k, t, window, i + 1) {
            return Ok(sol);
        }
        t = if i + 1 == schedule.len() { t_final } else { t + hs };
        y = y_new;
        k[0] = k[6];
    }
    Ok(Solution { t: t_final, y, escape: None, steps: schedule.len() })
}

fn locate_escape<const N: usize>(
    y: &[f64; N],
    x_new: f64,
    hs: f64,
    k: &[[f64; N]; 7],
    t: f64,
    window: (f64, f64),
    steps: usize,
) -> Option<Solution<N>> {
    if !outside(x_new, window) {
        return None;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if outside(dense(y, hs, k, mid)[0], window) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let yc = dense(y, hs, k, hi);
    Some(Solution {
        t: t + hi * hs,
        y: yc,
        escape: Some(Escape { time: t + hi * hs, x: yc[0] }),
        steps,
    })
}

/// Integrate from `t = 0` to `t_final` (either sign).
pub fn solve<const N: usize, S: OdeSystem<N>>(
    sys: &S,
    y0: [f64; N],
    t_final: f64,
    stepper: Stepper,
    window: (f64, f64),
) -> Result<Solution<N>> {
    if t_final == 0.0 {
        return Ok(Solution { t: 0.0, y: y0, escape: None, steps: 0 });
    }
    if outside(y0[0], window) {
        return Ok(Solution {
            t: 0.0,
            y: y0,
            escape: Some(Escape { time: 0.0, x: y0[0] }),
            steps: 0,
        });
    }
    match stepper {
        Stepper::Dopri5 { rel_tol, abs_tol, max_step } => {
            dopri5(sys, y0, t_final, rel_tol, abs_tol, max_step, window, None)
        }
        Stepper::Rk4 { step } => rk4(sys, y0, t_final, step, window),
    }
}

fn rk4<const N: usize, S: OdeSystem<N>>(
    sys: &S,
    y0: [f64; N],
    t_final: f64,
    step: f64,
    window: (f64, f64),
) -> Result<Solution<N>> {
    let n = (t_final.abs() / step).ceil().max(1.0) as usize;
    let h = t_final / n as f64;
    let mut y = y0;
    for i in 0..n {
        let t = i as f64 * h;
        let k1 = sys.rhs(t, &y);
        let k2 = sys.rhs(t + h / 2.0, &add(&y, h / 2.0, &k1));
        let k3 = sys.rhs(t + h / 2.0, &add(&y, h / 2.0, &k2));
        let k4 = sys.rhs(t + h, &add(&y, h, &k3));
        let mut next = y;
        for j in 0..N {
            next[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { t_low: t, t_high: t + h });
        }
        if outside(next[0], window) {
            // linear location is all a fixed-step method offers
            let (a, b) = (y[0], next[0]);
            let edge = if b < window.0 { window.0 } else { window.1 };
            let s = ((edge - a) / (b - a)).clamp(0.0, 1.0);
            return Ok(Solution {
                t: t + s * h,
                y: next,
                escape: Some(Escape { time: t + s * h, x: edge }),
                steps: i + 1,
            });
        }
        y = next;
    }
    Ok(Solution { t: t_final, y, escape: None, steps: n })
}

#[inline]
fn add<const N: usize>(y: &[f64; N], h: f64, k: &[f64; N]) -> [f64; N] {
    let mut o = *y;
    for i in 0..N {
        o[i] += h * k[i];
    }
    o
}

fn error_norm<const N: usize>(y: &[f64; N], y1: &[f64; N], err: &[f64; N], rtol: f64, atol: f64) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..N {
        let sc = atol + rtol * y[i].abs().max(y1[i].abs());
        m = m.max((err[i] / sc).abs());
    }
    m
}

fn dopri5<const N: usize, S: OdeSystem<N>>(
    sys: &S,
    y0: [f64; N],
    t_final: f64,
    rtol: f64,
    atol: f64,
    max_step: f64,
    window: (f64, f64),
    mut record: Option<&mut Vec<f64>>,
) -> Result<Solution<N>> {
    let dir = t_final.signum();
    let span = t_final.abs();
    let min_step = 1e-14 * span;
    let mut t = 0.0;
    let mut y = y0;
    let mut k: [[f64; N]; 7] = [[0.0; N]; 7];
    k[0] = sys.rhs(t, &y);

    // starting step from the usual two-derivative estimate
    let mut h = {
        let d0 = error_norm(&y, &y, &y, rtol, atol).max(1e-300);
        let d1 = error_norm(&y, &y, &k[0], rtol, atol);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min(span).min(max_step);
        let y1 = add(&y, dir * h0, &k[0]);
        let f1 = sys.rhs(dir * h0, &y1);
        let mut diff = [0.0; N];
        for i in 0..N {
            diff[i] = f1[i] - k[0][i];
        }
        let d2 = error_norm(&y, &y, &diff, rtol, atol) / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(span).min(max_step)
    };

    let stops = sys.breakpoints(t_final);
    let mut next_stop = 0;
    let mut steps = 0usize;
    let mut rejected_last = false;
    loop {
        let remaining = span - t.abs();
        if remaining <= 0.0 {
            break;
        }
        while next_stop < stops.len() && stops[next_stop] - t.abs() <= min_step {
            next_stop += 1;
        }
        let mut last = false;
        let mut at_stop = false;
        if h >= remaining {
            h = remaining;
            last = true;
        } else if next_stop < stops.len() && h >= stops[next_stop] - t.abs() {
            h = stops[next_stop] - t.abs();
            at_stop = true;
        }
        let hs = dir * h;
        for s in 1..7 {
            let ys = axpy(&y, hs, &k, &A[s], s);
            k[s] = sys.rhs(t + C[s] * hs, &ys);
        }
        let y_new = axpy(&y, hs, &k, &A[6], 6);
        let mut err = [0.0; N];
        for i in 0..N {
            err[i] = hs * (0..7).map(|j| E[j] * k[j][i]).sum::<f64>();
        }
        let en = error_norm(&y, &y_new, &err, rtol, atol);
        let finite = y_new.iter().all(|v| v.is_finite()) && en.is_finite();

        if finite && en <= 1.0 {
            steps += 1;
            let t_new = if last {
                t_final
            } else if at_stop {
                dir * stops[next_stop]
            } else {
                t + hs
            };
            if let Some(rec) = record.as_deref_mut() {
                rec.push(hs);
            }
            if let Some(sol) = locate_escape(&y, y_new[0], hs, &k, t, window, steps) {
                return Ok(sol);
            }
            t = t_new;
            y = y_new;
            k[0] = k[6];
            if last {
                break;
            }
            let mut fac = if en == 0.0 { 5.0 } else { (0.9 * en.powf(-0.2)).clamp(0.2, 5.0) };
            if rejected_last {
                fac = fac.min(1.0);
            }
            h = (h * fac).min(max_step);
            rejected_last = false;
        } else {
            let fac = if finite { (0.9 * en.powf(-0.2)).clamp(0.1, 0.9) } else { 0.1 };
            h *= fac;
            rejected_last = true;
        }
        if h < min_step {
            return Err(Error::BlowUp {
                t_low: t,
                t_high: t + dir * h,
            });
        }
    }
    Ok(Solution { t: t_final, y, escape: None, steps })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Riccati(f64);
    impl OdeSystem<1> for Riccati {
        fn rhs(&self, _t: f64, y: &[f64; 1]) -> [f64; 1] {
            [-y[0] * y[0] + self.0]
        }
    }

    const TIGHT: Stepper = Stepper::Dopri5 { rel_tol: 1e-12, abs_tol: 1e-14, max_step: 1.0 };

    #[test]
    fn tanh_forward_and_backward() {
        let s = solve(&Riccati(1.0), [0.0], 2.0, TIGHT, (-1e3, 1e3)).unwrap();
        assert!((s.y[0] - 2f64.tanh()).abs() < 1e-11);
        let s = solve(&Riccati(1.0), [0.0], -0.5, TIGHT, (-1e3, 1e3)).unwrap();
        assert!((s.y[0] + 0.5f64.tanh()).abs() < 1e-11);
    }

    #[test]
    fn escape_located_on_dense_output() {
        // x = -tan t leaves [-10, 10] at atan(10)
        let s = solve(&Riccati(-1.0), [0.0], 3.0, TIGHT, (-10.0, 10.0)).unwrap();
        let e = s.escape.unwrap();
        assert!((e.time - 10f64.atan()).abs() < 1e-8, "{}", e.time);
    }

    #[test]
    fn zero_time_is_identity() {
        let s = solve(&Riccati(1.0), [0.3], 0.0, TIGHT, (-1.0, 1.0)).unwrap();
        assert_eq!(s.y, [0.3]);
        assert!(s.escape.is_none());
    }

    #[test]
    fn schedule_replay_matches_recording() {
        let (s, steps) = solve_recorded(&Riccati(1.0), [0.2], 1.5, TIGHT, (-9.0, 9.0)).unwrap();
        assert!(!steps.is_empty());
        let r = solve_on_schedule(&Riccati(1.0), [0.2], 1.5, &steps, (-9.0, 9.0)).unwrap();
        assert_eq!(r.y, s.y);
        let nearby = solve_on_schedule(&Riccati(1.0), [0.2 + 1e-9], 1.5, &steps, (-9.0, 9.0)).unwrap();
        assert!((nearby.y[0] - s.y[0]).abs() < 1e-9);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let err = |h: f64| {
            let s = solve(&Riccati(1.0), [0.0], 1.0, Stepper::Rk4 { step: h }, (-9.0, 9.0)).unwrap();
            (s.y[0] - 1f64.tanh()).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!(ratio > 8.0 && ratio < 32.0, "ratio {ratio}");
    }
}
