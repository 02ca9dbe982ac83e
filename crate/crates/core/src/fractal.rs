//! Box-counting dimension of point clouds in `T^k x R` with the max metric.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphs::{orbit_start, GraphSample, Role};
use crate::return_map::SectionMap;
use crate::torus::wrap;

/// Flat point storage, `dim` coordinates per point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub dim: usize,
    pub coords: Vec<f64>,
}

impl PointCloud {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || dim > 4 || !coords.len().is_multiple_of(dim) {
            return Err(Error::param("dim", "need 1..=4 coordinates per point and a whole number of points"));
        }
        Ok(PointCloud { dim, coords })
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxCountLadder {
    pub epsilons: Vec<f64>,
    pub counts: Vec<u64>,
    /// `log(N_i / N_{i-1}) / log(eps_{i-1} / eps_i)`; `None` at the coarsest scale.
    pub local_slopes: Vec<Option<f64>>,
    /// Inclusive index range used for the fit.
    pub fit_window: (usize, usize),
    pub slope: f64,
    pub slope_stderr: f64,
}

/// `2^-3 .. 2^-12` for one-dimensional sections, `2^-3 .. 2^-9` otherwise.
pub fn default_epsilons(base_dim: usize) -> Vec<f64> {
    let finest = if base_dim <= 1 { 12 } else { 9 };
    (3..=finest).map(|k| 0.5f64.powi(k)).collect()
}

/// Window dropping the two coarsest and two finest scales.
pub fn default_fit_window(n_eps: usize) -> (usize, usize) {
    (2, n_eps.saturating_sub(3))
}

fn check_ladder(eps: &[f64]) -> Result<()> {
    if eps.len() < 6 {
        return Err(Error::param("epsilons", "need at least 6 scales"));
    }
    if !(eps[0] > 0.0 && eps[0] <= 0.25) {
        return Err(Error::param("epsilons", "scales must lie in (0, 1/4]"));
    }
    for w in eps.windows(2) {
        if ((w[1] / w[0]) - 0.5).abs() > 1e-9 {
            return Err(Error::param("epsilons", "ladder must be geometric with ratio 1/2"));
        }
    }
    Ok(())
}

/// Number of occupied boxes `prod [k_i eps, (k_i + 1) eps)` at each scale,
/// with a least-squares slope of `log N` against `-log eps` over `fit_window`.
pub fn box_count(points: &PointCloud, epsilons: &[f64], fit_window: Option<(usize, usize)>) -> Result<BoxCountLadder> {
    if points.is_empty() {
        return Err(Error::param("points", "empty point set"));
    }
    if points.len() < 1000 {
        return Err(Error::param("points", "need at least 1000 points"));
    }
    check_ladder(epsilons)?;
    let (lo, hi) = fit_window.unwrap_or_else(|| default_fit_window(epsilons.len()));
    if !(lo < hi && hi < epsilons.len()) {
        return Err(Error::param("fit_window", "need lo < hi < number of scales"));
    }
    if points.coords.iter().any(|c| !c.is_finite()) {
        return Err(Error::param("points", "coordinates must be finite"));
    }
    let counts: Vec<u64> = epsilons
        .iter()
        .map(|&eps| {
            let mut keys: Vec<u128> = (0..points.len())
                .into_par_iter()
                .map(|i| {
                    let mut key = 0u128;
                    for &c in points.point(i) {
                        let k = (c / eps).floor() as i64 as i32;
                        key = (key << 32) | (k as u32 as u128);
                    }
                    key
                })
                .collect();
            keys.par_sort_unstable();
            keys.dedup();
            keys.len() as u64
        })
        .collect();

    let local_slopes = (0..epsilons.len())
        .map(|i| {
            (i > 0).then(|| (counts[i] as f64 / counts[i - 1] as f64).ln() / (epsilons[i - 1] / epsilons[i]).ln())
        })
        .collect();

    let xs: Vec<f64> = epsilons[lo..=hi].iter().map(|e| -e.ln()).collect();
    let ys: Vec<f64> = counts[lo..=hi].iter().map(|&n| (n as f64).ln()).collect();
    let (slope, stderr) = least_squares(&xs, &ys);
    Ok(BoxCountLadder {
        epsilons: epsilons.to_vec(),
        counts,
        local_slopes,
        fit_window: (lo, hi),
        slope,
        slope_stderr: stderr,
    })
}

fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - icpt - slope * x).powi(2)).sum();
    let stderr = if xs.len() > 2 {
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    (slope, stderr)
}

/// How fibre values are mapped before counting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FibreScale {
    /// Raw fibre coordinate.
    Raw,
    /// `(x - gamma-) / (gamma+ - gamma-)`, the section mapped onto `[0, 1]`.
    Section,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CloudConfig {
    pub n_points: usize,
    /// Independent orbit segments.
    pub chains: usize,
    /// Returns run before recording, pulling each chain onto the true graph.
    pub settle: usize,
    pub scale: FibreScale,
    pub section_c: f64,
}

impl Default for CloudConfig {
    fn default() -> Self {
        CloudConfig {
            n_points: 100_000,
            chains: 64,
            settle: 50,
            scale: FibreScale::Section,
            section_c: 0.2,
        }
    }
}

fn scaler(map: &SectionMap, cfg: &CloudConfig) -> impl Fn(f64) -> f64 {
    let (lo, hi) = map.flow.family.section_bounds(cfg.section_c);
    let scale = cfg.scale;
    move |x| match scale {
        FibreScale::Raw => x,
        FibreScale::Section => (x - lo) / (hi - lo),
    }
}

fn check_cloud(cfg: &CloudConfig) -> Result<()> {
    if cfg.n_points < 100_000 {
        return Err(Error::param("n_points", "orbit clouds need at least 1e5 points"));
    }
    if cfg.chains == 0 || cfg.chains > cfg.n_points {
        return Err(Error::param("chains", "need 1 <= chains <= n_points"));
    }
    Ok(())
}

/// Points `(theta_n, phi(theta_n))` along exact orbits `theta_n = theta_0 + n omega`
/// (backward orbits for the repeller), started on the outer side of the graph
/// and settled onto it.
pub fn graph_point_cloud(map: &SectionMap, g: &GraphSample, cfg: &CloudConfig) -> Result<PointCloud> {
    check_cloud(cfg)?;
    let d = g.d;
    let sign = if g.role == Role::Attractor { 1.0 } else { -1.0 };
    let per = cfg.n_points.div_ceil(cfg.chains);
    let f = scaler(map, cfg);
    let chunks: Vec<Result<Vec<f64>>> = (0..cfg.chains)
        .into_par_iter()
        .map(|c| {
            let start = map.advance(&vec![0.0; d], sign * (c * per) as f64);
            let mut th = map.advance(&start, -sign * cfg.settle as f64);
            let mut x = orbit_start(g);
            for _ in 0..cfg.settle {
                x = map.step(g.beta, &th, x, sign)?.ok_or(Error::Escaped { time: f64::NAN, x })?;
                th = map.advance(&th, sign);
            }
            let mut out = Vec::with_capacity(per * (d + 1));
            for k in 0..per {
                out.extend_from_slice(&th);
                out.push(f(x));
                if k + 1 < per {
                    x = map.step(g.beta, &th, x, sign)?.ok_or(Error::Escaped { time: f64::NAN, x })?;
                    th = map.advance(&th, sign);
                }
            }
            Ok(out)
        })
        .collect();
    let mut coords = Vec::with_capacity(cfg.n_points * (d + 1));
    for ch in chunks {
        coords.extend(ch?);
    }
    coords.truncate(cfg.n_points * (d + 1));
    PointCloud::new(d + 1, coords)
}

/// Points `(theta(t), x(t))` in `T^D x R` along flow orbits on the lifted
/// graph, sampled `per_return` times per return. The last base coordinate
/// only takes `per_return` distinct values, so it must exceed `1 / eps` for
/// the finest counted scale.
pub fn lifted_point_cloud(map: &SectionMap, g: &GraphSample, per_return: usize, cfg: &CloudConfig) -> Result<PointCloud> {
    check_cloud(cfg)?;
    if per_return == 0 {
        return Err(Error::param("per_return", "must be positive"));
    }
    let d = g.d;
    let dim = d + 1;
    let sign = if g.role == Role::Attractor { 1.0 } else { -1.0 };
    let returns = cfg.n_points.div_ceil(cfg.chains * per_return);
    let h = map.return_time() / per_return as f64;
    let rho = map.flow.rho.components().to_vec();
    let f = scaler(map, cfg);
    // chains start at Halton points: consecutive returns from one start hug a
    // nearby closed orbit for a long time
    let chunks: Vec<Result<Vec<f64>>> = (0..cfg.chains)
        .into_par_iter()
        .map(|c| {
            let start = crate::audit::halton(c, d);
            let mut th = map.advance(&start, -sign * cfg.settle as f64);
            let mut x = orbit_start(g);
            for _ in 0..cfg.settle {
                x = map.step(g.beta, &th, x, sign)?.ok_or(Error::Escaped { time: f64::NAN, x })?;
                th = map.advance(&th, sign);
            }
            let mut out = Vec::with_capacity(returns * per_return * (dim + 1));
            for _ in 0..returns {
                let emb = map.embed(&th);
                let mut full = emb[..dim].to_vec();
                let mut y = x;
                for k in 0..per_return {
                    out.extend(full.iter().map(|t| wrap(*t)));
                    out.push(f(y));
                    if k + 1 < per_return {
                        let s = map.flow.position(g.beta, &full, y, sign * h)?;
                        if let Some(e) = s.escape {
                            return Err(Error::Escaped { time: e.time, x: e.x });
                        }
                        y = s.y[0];
                        for (t, r) in full.iter_mut().zip(&rho) {
                            *t += sign * h * r;
                        }
                    }
                }
                x = map.step(g.beta, &th, x, sign)?.ok_or(Error::Escaped { time: f64::NAN, x })?;
                th = map.advance(&th, sign);
            }
            Ok(out)
        })
        .collect();
    let mut coords = Vec::new();
    for ch in chunks {
        coords.extend(ch?);
    }
    coords.truncate(cfg.n_points * (dim + 1));
    PointCloud::new(dim + 1, coords)
}

/// Rows `epsilon,count,local_slope`.
pub fn ladder_csv(l: &BoxCountLadder) -> String {
    let mut s = String::from("epsilon,count,local_slope\n");
    for i in 0..l.epsilons.len() {
        let ls = l.local_slopes[i].map(|v| format!("{v}")).unwrap_or_default();
        s.push_str(&format!("{:e},{},{}\n", l.epsilons[i], l.counts[i], ls));
    }
    s
}
