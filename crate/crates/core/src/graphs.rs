//! Attracting and repelling invariant graphs of the return map on a regular
//! section grid, their gaps, Lyapunov exponents, and the lift to the full torus.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::return_map::SectionMap;
use crate::torus::{wrap, TorusPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Attractor,
    Repeller,
}

impl Role {
    /// Direction of time in which the graph attracts.
    fn sign(self) -> f64 {
        match self {
            Role::Attractor => 1.0,
            Role::Repeller => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphConfig {
    /// Nodes per section axis.
    pub grid_n: usize,
    pub n_iter: usize,
    /// Stop when the sup change of one sweep falls below this.
    pub tol: f64,
    /// Margin `c` of the section `[gamma-, gamma+]` above the unforced attractor.
    pub section_c: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            grid_n: 512,
            n_iter: 20_000,
            tol: 1e-12,
            section_c: 0.2,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_n < 16 {
            return Err(Error::param("grid_n", "need at least 16 nodes per axis"));
        }
        if self.n_iter < 1 {
            return Err(Error::param("n_iter", "must be at least 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::param("tol", "must be positive"));
        }
        if !(self.section_c > 0.0) {
            return Err(Error::param("section_c", "must be positive"));
        }
        Ok(())
    }
}

/// Graph values on the regular grid `i / n` of the `d`-torus, first axis fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSample {
    pub d: usize,
    pub n: usize,
    pub values: Vec<f64>,
    pub role: Role,
    pub beta: f64,
    pub defect: f64,
    pub iterations_used: usize,
    pub last_change: f64,
}

impl GraphSample {
    pub fn constant(d: usize, n: usize, value: f64, role: Role, beta: f64) -> Self {
        GraphSample {
            d,
            n,
            values: vec![value; n.pow(d as u32)],
            role,
            beta,
            defect: 0.0,
            iterations_used: 0,
            last_change: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn node(&self, idx: usize) -> Vec<f64> {
        node_coords(idx, self.n, self.d)
    }

    /// Periodic multilinear interpolation.
    pub fn interp(&self, theta: &[f64]) -> f64 {
        let (idx, w) = stencil(theta, self.n);
        idx.iter().zip(&w).map(|(&i, &wi)| wi * self.values[i]).sum()
    }

    fn same_grid(&self, other: &GraphSample) -> bool {
        self.d == other.d && self.n == other.n
    }
}

/// Coordinates of grid node `idx` on the `n^d` section grid, first axis fastest.
pub fn node_coords(mut idx: usize, n: usize, d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(d);
    for _ in 0..d {
        out.push((idx % n) as f64 / n as f64);
        idx /= n;
    }
    out
}

/// Corner indices and weights of the cell containing `theta`.
fn stencil(theta: &[f64], n: usize) -> (Vec<usize>, Vec<f64>) {
    let d = theta.len();
    let mut lo = Vec::with_capacity(d);
    let mut fr = Vec::with_capacity(d);
    for &t in theta {
        let u = wrap(t) * n as f64;
        let i = u.floor();
        lo.push((i as usize) % n);
        fr.push(u - i);
    }
    let corners = 1usize << d;
    let mut idx = Vec::with_capacity(corners);
    let mut w = Vec::with_capacity(corners);
    for c in 0..corners {
        let mut k = 0usize;
        let mut stride = 1usize;
        let mut wc = 1.0;
        for a in 0..d {
            let up = (c >> a) & 1 == 1;
            let i = if up { (lo[a] + 1) % n } else { lo[a] };
            wc *= if up { fr[a] } else { 1.0 - fr[a] };
            k += i * stride;
            stride *= n;
        }
        idx.push(k);
        w.push(wc);
    }
    (idx, w)
}

#[derive(Debug, Clone, PartialEq)]
pub enum PullbackOutcome {
    Converged(GraphSample),
    /// Some node left the window or the section in `iteration`; no graph of
    /// this role lies in the section at this parameter.
    Escaped { iteration: usize, node: usize },
}

impl PullbackOutcome {
    pub fn graph(self) -> Option<GraphSample> {
        match self {
            PullbackOutcome::Converged(g) => Some(g),
            PullbackOutcome::Escaped { .. } => None,
        }
    }
}

/// Sweep change below which step schedules are frozen.
const FREEZE_BELOW: f64 = 1e-8;

/// Pullback of the upper section boundary under the return map.
pub fn pullback_attractor(map: &SectionMap, beta: f64, cfg: &GraphConfig) -> Result<PullbackOutcome> {
    pullback_from(map, beta, Role::Attractor, None, cfg)
}

/// Pullback of the lower section boundary under the inverse return map.
pub fn pushforward_repeller(map: &SectionMap, beta: f64, cfg: &GraphConfig) -> Result<PullbackOutcome> {
    pullback_from(map, beta, Role::Repeller, None, cfg)
}

/// Pullback from `start` (or the section boundary). A start above the
/// attractor, or below the repeller, converges to the same graph as the boundary.
pub fn pullback_from(
    map: &SectionMap,
    beta: f64,
    role: Role,
    start: Option<&GraphSample>,
    cfg: &GraphConfig,
) -> Result<PullbackOutcome> {
    cfg.validate()?;
    let (lo, hi) = map.flow.family.beta_range;
    if !(beta >= lo && beta <= hi) {
        return Err(Error::BetaOutOfRange { beta, lo, hi });
    }
    let d = map.d();
    let n = cfg.grid_n;
    let (g_lo, g_hi) = map.flow.family.section_bounds(cfg.section_c);
    let slack = 1e-6 * (g_hi - g_lo);
    let sign = role.sign();
    let n_nodes = n.pow(d as u32);

    let mut values = match start {
        Some(s) => {
            if s.d != d || s.n != n || s.role != role {
                return Err(Error::GraphMismatch);
            }
            s.values.clone()
        }
        None => {
            let v = if role == Role::Attractor { g_hi } else { g_lo };
            vec![v; n_nodes]
        }
    };

    // node j receives the image of the point one return before it (after, for the repeller)
    let sources: Vec<(Vec<f64>, Vec<usize>, Vec<f64>)> = (0..n_nodes)
        .map(|j| {
            let src = map.advance(&node_coords(j, n, d), -sign);
            let (idx, w) = stencil(&src, n);
            (src, idx, w)
        })
        .collect();

    // Adaptive step selection makes the map jump at the tolerance level, so
    // once sweeps settle each node keeps the step sizes of one adaptive pass.
    let mut schedules: Option<Vec<Vec<f64>>> = None;
    let mut record_next = false;
    let mut last_change = f64::INFINITY;
    for it in 1..=cfg.n_iter {
        let start = |j: usize| -> f64 {
            let (_, idx, w) = &sources[j];
            idx.iter().zip(w).map(|(&i, &wi)| wi * values[i]).sum()
        };
        let next: Vec<Result<Option<f64>>> = if let Some(sch) = &schedules {
            (0..n_nodes)
                .into_par_iter()
                .map(|j| map.step_on_schedule(beta, &sources[j].0, start(j), sign, &sch[j]))
                .collect()
        } else if record_next {
            let rec: Vec<Result<(Option<f64>, Vec<f64>)>> = (0..n_nodes)
                .into_par_iter()
                .map(|j| map.step_recorded(beta, &sources[j].0, start(j), sign))
                .collect();
            let mut vals = Vec::with_capacity(n_nodes);
            let mut sch = Vec::with_capacity(n_nodes);
            for r in rec {
                match r {
                    Ok((v, s)) => {
                        vals.push(Ok(v));
                        sch.push(s);
                    }
                    Err(e) => vals.push(Err(e)),
                }
            }
            if sch.len() == n_nodes && sch.iter().all(|s| !s.is_empty()) {
                schedules = Some(sch);
            }
            vals
        } else {
            (0..n_nodes)
                .into_par_iter()
                .map(|j| map.step(beta, &sources[j].0, start(j), sign))
                .collect()
        };
        let mut change: f64 = 0.0;
        let mut new_values = Vec::with_capacity(n_nodes);
        for (j, r) in next.into_iter().enumerate() {
            let v = match r? {
                Some(v) => v,
                None => return Ok(PullbackOutcome::Escaped { iteration: it, node: j }),
            };
            if v < g_lo - slack || v > g_hi + slack {
                return Ok(PullbackOutcome::Escaped { iteration: it, node: j });
            }
            change = change.max((v - values[j]).abs());
            new_values.push(v);
        }
        values = new_values;
        last_change = change;
        if schedules.is_none() && change < FREEZE_BELOW {
            record_next = true;
        }
        if change < cfg.tol {
            let mut g = GraphSample {
                d,
                n,
                values,
                role,
                beta,
                defect: 0.0,
                iterations_used: it,
                last_change,
            };
            g.defect = graph_defect(map, &g)?;
            log::debug!("{role:?} at beta={beta} converged in {it} sweeps, defect {:e}", g.defect);
            return Ok(PullbackOutcome::Converged(g));
        }
    }
    Err(Error::NotConverged {
        iterations: cfg.n_iter,
        last_change,
    })
}

/// Sup over nodes of `|xi~(theta, phi(theta)) - phi(theta + omega)|`, with the
/// inverse map and `theta - omega` for the repeller.
pub fn graph_defect(map: &SectionMap, g: &GraphSample) -> Result<f64> {
    let sign = g.role.sign();
    let res: Vec<Result<f64>> = (0..g.len())
        .into_par_iter()
        .map(|j| {
            let th = g.node(j);
            let img = map.step(g.beta, &th, g.values[j], sign)?;
            let target = g.interp(&map.advance(&th, sign));
            Ok(match img {
                Some(v) => (v - target).abs(),
                None => f64::INFINITY,
            })
        })
        .collect();
    let mut m: f64 = 0.0;
    for r in res {
        m = m.max(r?);
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphPair {
    pub attractor: GraphSample,
    pub repeller: GraphSample,
    pub gap_min: f64,
    pub gap_median: f64,
    pub gap_max: f64,
    pub argmin_theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapStats {
    pub gap_min: f64,
    pub gap_median: f64,
    pub gap_max: f64,
    pub argmin_theta: TorusPoint,
}

pub fn gap_stats(attractor: &GraphSample, repeller: &GraphSample) -> Result<GapStats> {
    if attractor.role != Role::Attractor || repeller.role != Role::Repeller || !attractor.same_grid(repeller) {
        return Err(Error::GraphMismatch);
    }
    let gaps: Vec<f64> = attractor
        .values
        .iter()
        .zip(&repeller.values)
        .map(|(a, r)| a - r)
        .collect();
    let mut argmin = 0;
    for (i, g) in gaps.iter().enumerate() {
        if *g < gaps[argmin] {
            argmin = i;
        }
    }
    let mut sorted = gaps.clone();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let median = if m % 2 == 1 {
        sorted[m / 2]
    } else {
        0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
    };
    Ok(GapStats {
        gap_min: sorted[0],
        gap_median: median,
        gap_max: sorted[m - 1],
        argmin_theta: TorusPoint::new(attractor.node(argmin)),
    })
}

impl GraphPair {
    pub fn new(attractor: GraphSample, repeller: GraphSample) -> Result<Self> {
        let s = gap_stats(&attractor, &repeller)?;
        Ok(GraphPair {
            attractor,
            repeller,
            gap_min: s.gap_min,
            gap_median: s.gap_median,
            gap_max: s.gap_max,
            argmin_theta: s.argmin_theta.coords().to_vec(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GraphLyapunov {
    /// Per return of the section map.
    pub lambda_map: f64,
    /// Per unit flow time, `rho_D * lambda_map`.
    pub lambda_flow: f64,
}

fn check_invariant(g: &GraphSample, limit: f64) -> Result<()> {
    if !(g.defect <= limit) {
        return Err(Error::NotInvariant { defect: g.defect, limit });
    }
    Ok(())
}

/// Grid average of the log fibre derivative over one return. The repeller
/// is evaluated backward, where it is contracting.
pub fn lyapunov_of_graph(map: &SectionMap, g: &GraphSample) -> Result<GraphLyapunov> {
    check_invariant(g, 1e-6)?;
    let sign = g.role.sign();
    let res: Vec<Result<f64>> = (0..g.len())
        .into_par_iter()
        .map(|j| {
            let th = g.node(j);
            match map.step_log(g.beta, &th, g.values[j], sign)? {
                Some((_, l)) => Ok(sign * l),
                None => Err(Error::Escaped { time: f64::NAN, x: g.values[j] }),
            }
        })
        .collect();
    let mut sum = 0.0;
    for r in res {
        sum += r?;
    }
    let lambda_map = sum / g.len() as f64;
    Ok(GraphLyapunov {
        lambda_map,
        lambda_flow: map.rho_d() * lambda_map,
    })
}

/// Fibre value on the far side of `g` from the other graph: the top of the
/// attractor or the bottom of the repeller. Orbits started there stay on that
/// side (the map is increasing), so they cannot cross the other graph even
/// where the interpolated graphs do.
pub(crate) fn orbit_start(g: &GraphSample) -> f64 {
    match g.role {
        Role::Attractor => g.values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Role::Repeller => g.values.iter().copied().fold(f64::INFINITY, f64::min),
    }
}

/// Birkhoff average of the log fibre derivative along exact orbits. Each of
/// `chains` orbits starts at [`orbit_start`], runs `settle` returns, which
/// pulls it onto the true graph, then accumulates `per_chain` returns. No
/// invariance precondition, so usable near collision.
pub fn lyapunov_along_orbit(
    map: &SectionMap,
    g: &GraphSample,
    chains: usize,
    per_chain: usize,
    settle: usize,
) -> Result<GraphLyapunov> {
    if chains == 0 || per_chain == 0 {
        return Err(Error::param("chains/per_chain", "must be positive"));
    }
    let sign = g.role.sign();
    let res: Vec<Result<f64>> = (0..chains)
        .into_par_iter()
        .map(|c| {
            let start = map.advance(&vec![0.0; g.d], (c * per_chain) as f64);
            let mut th = map.advance(&start, -sign * settle as f64);
            let mut x = orbit_start(g);
            let mut acc = 0.0;
            for k in 0..settle + per_chain {
                let (xn, l) = map
                    .step_log(g.beta, &th, x, sign)?
                    .ok_or(Error::Escaped { time: f64::NAN, x })?;
                if k >= settle {
                    acc += sign * l;
                }
                x = xn;
                th = map.advance(&th, sign);
            }
            Ok(acc)
        })
        .collect();
    let mut sum = 0.0;
    for r in res {
        sum += r?;
    }
    let lambda_map = sum / (chains * per_chain) as f64;
    Ok(GraphLyapunov {
        lambda_map,
        lambda_flow: map.rho_d() * lambda_map,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovRelation {
    pub lambda_flow: f64,
    pub lambda_map: f64,
    pub residual: f64,
}

/// Intervals of the composite Simpson rule along each lifted orbit.
pub const ORBIT_QUADRATURE_INTERVALS: usize = 256;

/// Flow exponent by quadrature of `d_x F` along the lifted graph, against
/// `rho_D` times the map exponent from the variational channel.
pub fn lyapunov_relation_check(map: &SectionMap, g: &GraphSample) -> Result<LyapunovRelation> {
    let lm = lyapunov_of_graph(map, g)?;
    let m = ORBIT_QUADRATURE_INTERVALS;
    let h = map.return_time() / m as f64;
    let sign = g.role.sign();
    let d = map.d();
    let res: Vec<Result<f64>> = (0..g.len())
        .into_par_iter()
        .map(|j| {
            let emb = map.embed(&g.node(j));
            let rho = map.flow.rho.components();
            let mut theta = emb[..=d].to_vec();
            let dir = vec![0.0; d + 1];
            let mut x = g.values[j];
            let mut acc = 0.0;
            for k in 0..=m {
                let dx = map.flow.family.eval(g.beta, &theta, x, &dir).dx;
                let w = if k == 0 || k == m {
                    1.0
                } else if k % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                acc += w * dx;
                if k < m {
                    let s = map.flow.position(g.beta, &theta, x, sign * h)?;
                    if let Some(e) = s.escape {
                        return Err(Error::Escaped { time: e.time, x: e.x });
                    }
                    x = s.y[0];
                    for (t, r) in theta.iter_mut().zip(rho) {
                        *t += sign * h * r;
                    }
                }
            }
            Ok(acc * h / 3.0)
        })
        .collect();
    let mut sum = 0.0;
    for r in res {
        sum += r?;
    }
    let lambda_flow = map.rho_d() * sum / g.len() as f64;
    Ok(LyapunovRelation {
        lambda_flow,
        lambda_map: lm.lambda_map,
        residual: (lambda_flow - map.rho_d() * lm.lambda_map).abs(),
    })
}

/// Graph values on the regular `n^D` grid of the full torus, first axis fastest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LiftedGraph {
    pub dim: usize,
    pub n: usize,
    pub values: Vec<f64>,
    pub role: Role,
    pub beta: f64,
}

impl LiftedGraph {
    pub fn node(&self, idx: usize) -> Vec<f64> {
        node_coords(idx, self.n, self.dim)
    }

    /// Values along the last axis with the first axis fixed at node `i0`
    /// (two-torus lifts).
    pub fn slice_first_axis(&self, i0: usize) -> Vec<(f64, f64)> {
        assert_eq!(self.dim, 2);
        (0..self.n)
            .map(|k| (k as f64 / self.n as f64, self.values[i0 + k * self.n]))
            .collect()
    }
}

/// Flow each section value over the part of a return needed to reach every
/// node of an `n^D` grid. `settle` extra returns start from the interpolated
/// graph further back (ahead, for the repeller), which washes out the
/// interpolation error in the attracting direction, so near-critical graphs
/// with a large interpolation defect can still be lifted.
pub fn lift_graph(map: &SectionMap, g: &GraphSample, grid_n: usize, settle: usize) -> Result<LiftedGraph> {
    if grid_n < 2 {
        return Err(Error::param("grid_n", "need at least 2 nodes per axis"));
    }
    let dim = map.d() + 1;
    let d = map.d();
    let rho = map.flow.rho.components().to_vec();
    let rho_d = map.rho_d();
    let period = map.return_time();
    let sign = g.role.sign();
    let total = grid_n.pow(dim as u32);
    let res: Vec<Result<f64>> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let th = node_coords(idx, grid_n, dim);
            let t_theta = wrap(th[d] - map.section_offset) / rho_d;
            // time to flow from the section point to th (negative for the repeller)
            let tau = match g.role {
                Role::Attractor => t_theta,
                Role::Repeller if t_theta == 0.0 => 0.0,
                Role::Repeller => t_theta - period,
            };
            let s: Vec<f64> = (0..d).map(|i| wrap(th[i] - tau * rho[i])).collect();
            let mut base = map.advance(&s, -sign * settle as f64);
            let mut x = g.interp(&base);
            for _ in 0..settle {
                x = map
                    .step(g.beta, &base, x, sign)?
                    .ok_or(Error::Escaped { time: f64::NAN, x })?;
                base = map.advance(&base, sign);
            }
            if tau == 0.0 {
                return Ok(x);
            }
            let emb = map.embed(&s);
            let st = map.flow.position(g.beta, &emb[..=d], x, tau)?;
            match st.escape {
                Some(e) => Err(Error::Escaped { time: e.time, x: e.x }),
                None => Ok(st.y[0]),
            }
        })
        .collect();
    let values = res.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(LiftedGraph {
        dim,
        n: grid_n,
        values,
        role: g.role,
        beta: g.beta,
    })
}

fn coord_header(dim: usize) -> String {
    (1..=dim).map(|i| format!("theta{i}")).collect::<Vec<_>>().join(",")
}

fn fmt_row(coords: &[f64], vals: &[f64]) -> String {
    let mut parts: Vec<String> = coords.iter().map(|c| format!("{c}")).collect();
    parts.extend(vals.iter().map(|v| format!("{v:e}")));
    parts.join(",")
}

/// Rows `theta1..,value`.
pub fn graph_csv(g: &GraphSample) -> String {
    let mut s = format!("{},value\n", coord_header(g.d));
    for (j, v) in g.values.iter().enumerate() {
        s.push_str(&fmt_row(&g.node(j), &[*v]));
        s.push('\n');
    }
    s
}

/// Rows `theta1..,attractor,repeller,gap`.
pub fn pair_csv(p: &GraphPair) -> String {
    let mut s = format!("{},attractor,repeller,gap\n", coord_header(p.attractor.d));
    for j in 0..p.attractor.len() {
        let a = p.attractor.values[j];
        let r = p.repeller.values[j];
        s.push_str(&fmt_row(&p.attractor.node(j), &[a, r, a - r]));
        s.push('\n');
    }
    s
}

pub fn lifted_csv(g: &LiftedGraph) -> String {
    let mut s = format!("{},value\n", coord_header(g.dim));
    for (j, v) in g.values.iter().enumerate() {
        s.push_str(&fmt_row(&g.node(j), &[*v]));
        s.push('\n');
    }
    s
}
