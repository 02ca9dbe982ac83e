//! Numerical audit of the hypothesis list for radially forced logistic
//! families: derivative bounds, the critical region, and the gate
//! inequalities of the existence theorem.
//!
//! Magnitudes are compared in log scale; `ln 0` is floored at `ln 1e-300`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bifurcation::{estimate_beta_bounds, BetaBounds, BetaBoundsConfig};
use crate::error::{Error, Result};
use crate::field::FieldKind;
use crate::graphs::node_coords;
use crate::return_map::{ReturnMapEval, SectionMap};
use crate::torus::{wrap, TorusPoint};

const LOG_FLOOR: f64 = -690.7755278982137;

fn log_abs(v: f64) -> f64 {
    if v == 0.0 {
        LOG_FLOOR
    } else {
        v.abs().ln().max(LOG_FLOOR)
    }
}

/// `ln v` for positive `v`; non-positive values map below `LOG_FLOOR`,
/// keeping their order.
fn signed_log(v: f64) -> f64 {
    if v > 0.0 {
        v.ln().max(LOG_FLOOR)
    } else {
        LOG_FLOOR - (-v).ln_1p()
    }
}

/// The derivative bounds, all as natural logs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogConstants {
    pub b: f64,
    pub c: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub rho_d: f64,
    pub log_alpha_c: f64,
    pub log_alpha_e: f64,
    pub log_alpha_l: f64,
    pub log_alpha_u: f64,
    pub log_r_b: f64,
    pub log_s: f64,
    #[serde(rename = "log_S")]
    pub log_big_s: f64,
}

/// Formula evaluation without the parameter inequalities.
pub fn log_constants(b: f64, c: f64, delta1: f64, delta2: f64, rho_d: f64) -> LogConstants {
    let t = 1.0 / rho_d;
    let log_alpha_e = 2.0 * b * (1.0 - c) * (t - delta1) - 10.0 * b * delta1;
    let log_alpha_u = 2.0 * b * (1.0 + c) * t;
    LogConstants {
        b,
        c,
        delta1,
        delta2,
        rho_d,
        log_alpha_c: -log_alpha_e,
        log_alpha_e,
        log_alpha_l: -log_alpha_u,
        log_alpha_u,
        log_r_b: -9.0 * b * delta1,
        log_s: b * delta2 / 4.0,
        log_big_s: 9.0 * b * delta1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditConstants {
    #[serde(flatten)]
    pub logs: LogConstants,
    pub r_support: f64,
    pub section_offset: f64,
    pub theta_bar: TorusPoint,
    pub theta0: TorusPoint,
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    /// Bump starts within `delta1` of the next section crossing.
    pub delta1_clear: bool,
    /// Bump ends at least `delta2` before the next section crossing.
    pub delta2_clear: bool,
}

/// Offset placing the bump's end `delta2` (in time) before the section.
pub fn suggest_section_offset(theta_bar_d: f64, r: f64, delta2: f64, rho_d: f64) -> f64 {
    wrap(theta_bar_d + r + delta2 * rho_d)
}

pub fn compute_constants(
    b: f64,
    c: f64,
    delta1: f64,
    delta2: f64,
    r_support: f64,
    rho: &crate::torus::RotationVector,
    theta_bar: &TorusPoint,
    section_offset: f64,
) -> Result<AuditConstants> {
    let rho_d = rho.rho_d();
    if !(b > 1.0) {
        return Err(Error::param("b", "must exceed 1"));
    }
    if !(c > 0.0 && c < 0.25) {
        return Err(Error::param("c", "need 0 < c < 1/4"));
    }
    let d1_max = (1.0 / 18.0f64).min(1.0 / (36.0 * rho_d));
    if !(delta1 < d1_max) {
        return Err(Error::param("delta1", format!("need delta1 < {d1_max}")));
    }
    if !(delta2 > 0.0 && delta2 < delta1) {
        return Err(Error::param("delta2", "need 0 < delta2 < delta1"));
    }
    if !(r_support > 0.0) {
        return Err(Error::param("R_support", "must be positive"));
    }
    if theta_bar.dim() != rho.dim() {
        return Err(Error::DimensionMismatch { expected: rho.dim(), got: theta_bar.dim() });
    }
    let d = rho.dim() - 1;
    let bar = theta_bar.coords();
    let offset = wrap(section_offset);
    // phase of the section relative to the start of the bump, in theta_D units
    let start_to_section = wrap(offset - (bar[d] - r_support));
    if 2.0 * r_support >= 1.0 || start_to_section < 2.0 * r_support {
        if 2.0 * r_support >= 1.0 {
            return Err(Error::param("R_support", "bump covers every section"));
        }
        return Err(Error::BumpStraddlesSection {
            suggested_offset: suggest_section_offset(bar[d], r_support, delta2, rho_d),
        });
    }
    let end_to_section = start_to_section - 2.0 * r_support;
    let tau = wrap(bar[d] - offset) / rho_d;
    let theta0 = TorusPoint::new((0..d).map(|i| wrap(bar[i] - tau * rho.components()[i])).collect::<Vec<_>>());
    Ok(AuditConstants {
        logs: log_constants(b, c, delta1, delta2, rho_d),
        r_support,
        section_offset: offset,
        theta_bar: theta_bar.clone(),
        theta0,
        t1: 1.0 / (4.0 * rho_d),
        t2: wrap(bar[d] + r_support - offset) / rho_d,
        t3: 1.0 / rho_d - delta2 / 4.0,
        delta1_clear: start_to_section <= delta1 * rho_d,
        delta2_clear: end_to_section >= delta2 * rho_d,
    })
}

/// Smallest torus distance from the segment `{theta + s rho : 0 <= s <= 1/rho_D}`
/// (started on the section) to `centre`.
pub fn segment_distance(map: &SectionMap, theta: &[f64], centre: &[f64]) -> f64 {
    let rho = map.flow.rho.components();
    let dim = rho.len();
    let t_end = map.return_time();
    let mut p0 = theta.to_vec();
    p0.push(map.section_offset);
    let norm2: f64 = rho.iter().map(|r| r * r).sum();
    // candidate lattice shifts per coordinate
    let ranges: Vec<Vec<f64>> = (0..dim)
        .map(|i| {
            let (a, b) = (p0[i] - centre[i], p0[i] - centre[i] + rho[i] * t_end);
            let (lo, hi) = (a.min(b), a.max(b));
            ((lo - 1.0).floor() as i64..=(hi + 1.0).ceil() as i64).map(|k| k as f64).collect()
        })
        .collect();
    let mut best = f64::INFINITY;
    let mut idx = vec![0usize; dim];
    loop {
        let a: Vec<f64> = (0..dim).map(|i| p0[i] - centre[i] - ranges[i][idx[i]]).collect();
        let dot: f64 = a.iter().zip(rho).map(|(x, r)| x * r).sum();
        let s = (-dot / norm2).clamp(0.0, t_end);
        let d2: f64 = a.iter().zip(rho).map(|(x, r)| (x + s * r).powi(2)).sum();
        best = best.min(d2);
        let mut k = 0;
        loop {
            if k == dim {
                return best.sqrt();
            }
            idx[k] += 1;
            if idx[k] < ranges[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct J0Set {
    pub beta: f64,
    pub nodes: Vec<usize>,
    /// Every axis-aligned grid line meets the set in at most one arc.
    pub convex: bool,
    pub within_i0: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalRegion {
    pub grid_n: usize,
    pub i0_nodes: Vec<usize>,
    pub i0_fraction: f64,
    pub j0: Vec<J0Set>,
}

struct Geometry<'a> {
    map: &'a SectionMap,
    centre: Vec<f64>,
    r: f64,
}

impl Geometry<'_> {
    fn in_i0(&self, theta: &[f64]) -> bool {
        segment_distance(self.map, theta, &self.centre) <= self.r
    }

    fn in_i0_plus_omega(&self, theta: &[f64]) -> bool {
        self.in_i0(&self.map.advance(theta, -1.0))
    }
}

fn single_arc(flags: &[bool]) -> bool {
    let n = flags.len();
    let starts = (0..n).filter(|&i| flags[i] && !flags[(i + n - 1) % n]).count();
    starts <= 1
}

fn line_convex(members: &[bool], n: usize, d: usize) -> bool {
    let total = n.pow(d as u32);
    for axis in 0..d {
        let stride = n.pow(axis as u32);
        for base in 0..total {
            if !(base / stride).is_multiple_of(n) {
                continue;
            }
            let line: Vec<bool> = (0..n).map(|k| members[base + k * stride]).collect();
            if !single_arc(&line) {
                return false;
            }
        }
    }
    true
}

/// `J_{0,beta}` at grid resolution: nodes whose image of `1 - c` lands at or
/// below the top of the expansion interval (escapes included).
pub fn j0_set(map: &SectionMap, beta: f64, c: f64, grid_n: usize, i0: &[bool]) -> Result<J0Set> {
    let d = map.d();
    let e_top = expansion_top(map)?;
    let members: Vec<bool> = (0..grid_n.pow(d as u32))
        .into_par_iter()
        .map(|j| {
            let th = node_coords(j, grid_n, d);
            Ok(map.step(beta, &th, 1.0 - c, 1.0)?.is_none_or(|y| y <= e_top))
        })
        .collect::<Result<_>>()?;
    let nodes: Vec<usize> = (0..members.len()).filter(|&j| members[j]).collect();
    Ok(J0Set {
        beta,
        convex: line_convex(&members, grid_n, d),
        within_i0: nodes.iter().all(|&j| i0[j]),
        nodes,
    })
}

fn radial_parts(map: &SectionMap) -> Result<(f64, f64, Vec<f64>)> {
    match &map.flow.family.kind {
        FieldKind::RadialLogistic { b, bump, center } => Ok((*b, bump.radius, center.clone())),
        _ => Err(Error::WrongFamily("radial_logistic")),
    }
}

fn expansion_top(map: &SectionMap) -> Result<f64> {
    let (b, _, _) = radial_parts(map)?;
    Ok(-1.0 + (-b / (2.0 * map.rho_d())).exp())
}

/// I0 and J0 across `betas` on a `grid_n^d` grid.
pub fn critical_region(map: &SectionMap, c: f64, grid_n: usize, betas: &[f64]) -> Result<CriticalRegion> {
    let (_, r, centre) = radial_parts(map)?;
    let geo = Geometry { map, centre, r };
    let d = map.d();
    let total = grid_n.pow(d as u32);
    let i0: Vec<bool> = (0..total).into_par_iter().map(|j| geo.in_i0(&node_coords(j, grid_n, d))).collect();
    let mut j0 = Vec::with_capacity(betas.len());
    for &beta in betas {
        j0.push(j0_set(map, beta, c, grid_n, &i0)?);
    }
    let i0_nodes: Vec<usize> = (0..total).filter(|&j| i0[j]).collect();
    Ok(CriticalRegion {
        grid_n,
        i0_fraction: i0_nodes.len() as f64 / total as f64,
        i0_nodes,
        j0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Status {
    Pass,
    Fail,
    NotApplicable,
}

/// Quantity evaluated at a witness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Channel {
    LogDx,
    LogAbsDxx,
    LogAbsDtheta { axis: usize },
    LogAbsDtheta2 { axis: usize },
    LogAbsDthetaDx { axis: usize },
    /// Second theta derivative through `signed_log`.
    LogDtheta2 { axis: usize },
    InverseLogAbsDxx,
    InverseLogAbsDthetaDx { axis: usize },
    Image,
    /// Image at `beta_next` minus image at the witness parameter.
    BetaDifference { beta_next: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub theta: Vec<f64>,
    pub x: f64,
    pub beta: f64,
    pub channel: Channel,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditEntry {
    pub id: String,
    pub statement: String,
    pub status: Status,
    pub log_scale: bool,
    pub measured: Option<f64>,
    pub bound: Option<f64>,
    /// Positive when the inequality holds with room to spare.
    pub margin: Option<f64>,
    pub witness: Option<Witness>,
    pub samples: usize,
    pub excluded: usize,
    pub notes: Vec<String>,
}

impl AuditEntry {
    fn new(id: &str, statement: &str, log_scale: bool) -> Self {
        AuditEntry {
            id: id.to_string(),
            statement: statement.to_string(),
            status: Status::NotApplicable,
            log_scale,
            measured: None,
            bound: None,
            margin: None,
            witness: None,
            samples: 0,
            excluded: 0,
            notes: Vec::new(),
        }
    }

    /// Keep the candidate if it has the smallest margin so far; ties go to
    /// the lexicographically smallest witness.
    fn offer(&mut self, measured: f64, bound: f64, margin: f64, w: Witness) {
        let better = match (self.margin, &self.witness) {
            (None, _) => true,
            (Some(m), Some(old)) => margin < m || (margin == m && witness_key(&w) < witness_key(old)),
            (Some(m), None) => margin < m,
        };
        if better {
            self.measured = Some(measured);
            self.bound = Some(bound);
            self.margin = Some(margin);
            self.witness = Some(w);
        }
    }

    fn settle(&mut self) {
        if let Some(m) = self.margin {
            self.status = if m > 0.0 { Status::Pass } else { Status::Fail };
        }
    }

    fn fail(&mut self, note: String) {
        self.status = Status::Fail;
        self.notes.push(note);
    }
}

fn witness_key(w: &Witness) -> (u64, Vec<u64>, u64) {
    let k = |v: f64| v.to_bits() ^ ((v.to_bits() >> 63).wrapping_neg() >> 1);
    (k(w.beta), w.theta.iter().map(|t| k(*t)).collect(), k(w.x))
}

fn channel_value(map: &SectionMap, channel: Channel, theta: &[f64], x: f64, beta: f64) -> Result<Option<f64>> {
    let th = TorusPoint::new(theta.to_vec());
    let fwd = |m: &SectionMap| -> Result<Option<ReturnMapEval>> {
        let e = m.return_map(beta, &th, x)?;
        Ok(if e.escaped() { None } else { Some(e) })
    };
    let inv = |m: &SectionMap| -> Result<Option<ReturnMapEval>> {
        let e = m.inverse_return_map(beta, &th, x)?;
        Ok(if e.escaped() { None } else { Some(e) })
    };
    Ok(match channel {
        Channel::LogDx => fwd(map)?.map(|e| e.log_dx),
        Channel::LogAbsDxx => fwd(map)?.map(|e| log_abs(e.dxx_ratio) + e.log_dx),
        Channel::LogAbsDtheta { axis } => fwd(map)?.map(|e| log_abs(e.dtheta[axis])),
        Channel::LogAbsDtheta2 { axis } => fwd(map)?.map(|e| log_abs(e.dtheta2[axis])),
        Channel::LogAbsDthetaDx { axis } => fwd(map)?.map(|e| log_abs(e.dtheta_dx_ratio[axis]) + e.log_dx),
        Channel::LogDtheta2 { axis } => fwd(map)?.map(|e| signed_log(e.dtheta2[axis])),
        Channel::InverseLogAbsDxx => inv(map)?.map(|e| log_abs(e.dxx_ratio) + e.log_dx),
        Channel::InverseLogAbsDthetaDx { axis } => inv(map)?.map(|e| log_abs(e.dtheta_dx_ratio[axis]) + e.log_dx),
        Channel::Image => map.step(beta, theta, x, 1.0)?,
        Channel::BetaDifference { beta_next } => {
            let a = map.step(beta, theta, x, 1.0)?;
            let b = map.step(beta_next, theta, x, 1.0)?;
            match (a, b) {
                (Some(a), Some(b)) => Some(b - a),
                _ => None,
            }
        }
    })
}

/// Re-evaluates the quantity recorded at a witness.
pub fn remeasure(map: &SectionMap, w: &Witness) -> Result<Option<f64>> {
    channel_value(map, w.channel, &w.theta, w.x, w.beta)
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base) as f64 * inv;
        i /= base;
        inv /= base as f64;
    }
    out
}

const PRIMES: [u64; 9] = [2, 3, 5, 7, 11, 13, 17, 19, 23];

/// Halton point `k` in `[0,1)^{dim}`.
pub(crate) fn halton(k: usize, dim: usize) -> Vec<f64> {
    (0..dim).map(|j| radical_inverse(k as u64 + 1, PRIMES[j])).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateParams {
    pub k: u32,
    pub m: u32,
    pub p: f64,
    pub c_prime: f64,
    pub eta: f64,
}

impl Default for GateParams {
    fn default() -> Self {
        GateParams {
            k: 50,
            m: 2,
            p: 2.0,
            c_prime: 0.1,
            eta: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GateReport {
    pub params: GateParams,
    pub log_alpha: f64,
    pub q: f64,
    pub exponent: f64,
    /// `log alpha_e - (2/p) log alpha`
    pub contraction_margin: f64,
    /// `p log alpha - log alpha_u`
    pub expansion_margin: f64,
    pub sandwich_holds: bool,
    pub i0_size: f64,
    /// `ln C' - eta ln(2KM) - ln(3 |I0|)`
    pub smallness_log_margin: f64,
    pub smallness_holds: bool,
    pub nu_log_s: f64,
    pub nu_log_competitor: f64,
    /// `log s - (2 log S - exponent log alpha)`; positive means `nu > 0` once the
    /// unknown factor is bounded.
    pub nu_log_margin: f64,
    pub kappa: String,
    pub alpha0: String,
}

/// Checkable inequalities of the existence theorem, with `alpha = exp(b(1+c)/rho_D)`.
pub fn gate_report(k: &LogConstants, i0_size: f64, params: &GateParams) -> Result<GateReport> {
    let GateParams { k: kk, m, p, c_prime, eta } = *params;
    if !(p >= std::f64::consts::SQRT_2) {
        return Err(Error::GatePrecondition(format!("p = {p} < sqrt 2")));
    }
    if m < 2 {
        return Err(Error::GatePrecondition(format!("M = {m} < 2")));
    }
    if kk < 1 {
        return Err(Error::GatePrecondition("K must be at least 1".into()));
    }
    if !(c_prime > 0.0 && eta > 0.0) {
        return Err(Error::GatePrecondition("Diophantine constants must be positive".into()));
    }
    if !(i0_size > 0.0 && i0_size <= 1.0) {
        return Err(Error::GatePrecondition(format!("|I0| = {i0_size} outside (0, 1]")));
    }
    let q = 1.0 - 1.0 / kk as f64;
    let exponent = 2.0 * q * q / p - 5.0 * (1.0 - q * q) * p;
    if !(exponent > 0.0) {
        return Err(Error::GatePrecondition(format!(
            "2q^2/p - 5(1-q^2)p = {exponent} is not positive for K = {kk}"
        )));
    }
    let log_alpha = k.b * (1.0 + k.c) / k.rho_d;
    let contraction_margin = k.log_alpha_e - 2.0 / p * log_alpha;
    let expansion_margin = p * log_alpha - k.log_alpha_u;
    let smallness_log_margin = c_prime.ln() - eta * (2.0 * kk as f64 * m as f64).ln() - (3.0 * i0_size).ln();
    let competitor = 2.0 * k.log_big_s - exponent * log_alpha;
    Ok(GateReport {
        params: *params,
        log_alpha,
        q,
        exponent,
        contraction_margin,
        expansion_margin,
        // equality is allowed on both sides; allow rounding in the p = 2 identity
        sandwich_holds: contraction_margin >= -1e-12 * log_alpha && expansion_margin >= -1e-12 * log_alpha,
        i0_size,
        smallness_log_margin,
        smallness_holds: smallness_log_margin > 0.0,
        nu_log_s: k.log_s,
        nu_log_competitor: competitor,
        nu_log_margin: k.log_s - competitor,
        kappa: "UNKNOWN".into(),
        alpha0: "UNKNOWN".into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditConfig {
    pub c: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub sample_n: usize,
    pub grid_n: usize,
    /// Defaults to `n_beta` evenly spaced points in `[0, beta+]`.
    pub beta_grid: Option<Vec<f64>>,
    pub n_beta: usize,
    pub bounds_tol: f64,
    /// Slack for the parameter-monotonicity comparison.
    pub monotone_tol: f64,
    pub gate: GateParams,
    /// Offset into the Halton sequence; set from the experiment seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            c: 0.2,
            delta1: 0.008,
            delta2: 0.004,
            sample_n: 1000,
            grid_n: 256,
            beta_grid: None,
            n_beta: 5,
            bounds_tol: 1e-6,
            monotone_tol: 1e-9,
            gate: GateParams::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub constants: AuditConstants,
    pub bounds: BetaBounds,
    pub beta_grid: Vec<f64>,
    pub critical_region: CriticalRegion,
    pub entries: Vec<AuditEntry>,
    pub gate: GateReport,
}

const STATEMENTS: [(&str, &str); 16] = [
    ("A1", "0 < d_x xi(x) < alpha_c on T^d x C"),
    ("A2", "d_x xi(x) > alpha_e on (T^d minus I0) x E, image in E"),
    ("A3", "alpha_l < d_x xi(x) < alpha_u on Gamma, image in Gamma"),
    ("A4", "xi(1+c) <= 1+c and xi(-1) <= -1"),
    ("A5", "xi(x) in C for x in [-1+exp(-b/(2 rho_D)), 1+c], theta not in I0"),
    ("A6", "J0 closed, convex, nested increasing in beta"),
    ("A7", "d_v^2 xi(x) > s on J0 x C"),
    ("A8", "xi_0(1-c) >= 1-c for all theta"),
    ("A9", "xi_{beta+}(1+c) <= -1 for some theta"),
    ("A10", "beta -> xi_beta(theta, x) non-increasing on Gamma"),
    ("A11", "|d_v xi(x)| < S on Gamma, image in Gamma"),
    ("A12", "|d_v^2 xi(x)| < S^2 on Gamma, image in Gamma"),
    ("A13", "|d_v d_x xi(x)| < S alpha_c on T^d x C, < S alpha_u^2 on Gamma"),
    ("A14", "|d_x^2 xi(x)| < alpha_c on T^d x C, < alpha_u^2 on Gamma"),
    ("A15", "|d_x^2 xi^-1(x)| < 1/alpha_e for theta not in I0+omega, x in E"),
    ("A16", "|d_v d_x xi^-1(x)| < S/alpha_e for theta not in I0+omega, x in E"),
];

struct Sample {
    theta: Vec<f64>,
    x: f64,
}

/// Low-discrepancy `(theta, x)` samples; `accept` filters theta, `x_of` maps
/// the last coordinate into the interval.
fn samples(d: usize, n: usize, start: usize, accept: impl Fn(&[f64]) -> bool + Sync, x_of: impl Fn(f64) -> f64 + Sync) -> Vec<Sample> {
    let mut out = Vec::with_capacity(n);
    let mut k = start;
    // rejection sampling of theta when a region is excluded
    while out.len() < n && k < start + 100 * n {
        let h = halton(k, d + 1);
        k += 1;
        if accept(&h[..d]) {
            out.push(Sample { theta: h[..d].to_vec(), x: x_of(h[d]) });
        }
    }
    out
}

fn forward_evals(map: &SectionMap, beta: f64, s: &[Sample]) -> Result<Vec<Option<ReturnMapEval>>> {
    s.par_iter()
        .map(|p| {
            let e = map.return_map(beta, &TorusPoint::new(p.theta.clone()), p.x)?;
            Ok(if e.escaped() { None } else { Some(e) })
        })
        .collect()
}

fn inverse_evals(map: &SectionMap, beta: f64, s: &[Sample]) -> Result<Vec<Option<ReturnMapEval>>> {
    s.par_iter()
        .map(|p| {
            let e = map.inverse_return_map(beta, &TorusPoint::new(p.theta.clone()), p.x)?;
            Ok(if e.escaped() { None } else { Some(e) })
        })
        .collect()
}

fn w(p: &Sample, beta: f64, channel: Channel) -> Witness {
    Witness {
        theta: p.theta.clone(),
        x: p.x,
        beta,
        channel,
    }
}

/// Runs every check; the family must be radially forced logistic.
pub fn run_audit(map: &SectionMap, cfg: &AuditConfig) -> Result<AuditReport> {
    let (b, r, centre) = radial_parts(map)?;
    if cfg.sample_n == 0 || cfg.grid_n < 4 || cfg.n_beta == 0 {
        return Err(Error::param("audit", "need sample_n > 0, grid_n >= 4, n_beta > 0"));
    }
    let constants = compute_constants(
        b,
        cfg.c,
        cfg.delta1,
        cfg.delta2,
        r,
        &map.flow.rho,
        &TorusPoint::new(centre.clone()),
        map.section_offset,
    )?;
    let k = constants.logs;
    let bounds = estimate_beta_bounds(map, &BetaBoundsConfig { c: cfg.c, grid_n: cfg.grid_n, tol: cfg.bounds_tol })?;
    let mut beta_grid = match &cfg.beta_grid {
        Some(g) => g.clone(),
        None if cfg.n_beta == 1 => vec![0.0],
        None => {
            let mut g: Vec<f64> = (0..cfg.n_beta).map(|i| bounds.beta_plus * i as f64 / (cfg.n_beta - 1) as f64).collect();
            if bounds.minus_fired && bounds.beta_minus <= bounds.beta_plus {
                g.push(bounds.beta_minus);
            }
            g
        }
    };
    beta_grid.sort_by(f64::total_cmp);
    beta_grid.dedup();
    let (blo, bhi) = map.flow.family.beta_range;
    if beta_grid.iter().any(|x| !(*x >= blo && *x <= bhi)) {
        return Err(Error::param("beta_grid", "entries must lie in the family's parameter range"));
    }
    let region = critical_region(map, cfg.c, cfg.grid_n, &beta_grid)?;
    let geo = Geometry { map, centre, r };
    let d = map.d();
    let c = cfg.c;
    let e_top = expansion_top(map)?;
    let e_len = e_top + 1.0;
    let n = cfg.sample_n;
    let start = cfg.seed as usize;

    let mut e: Vec<AuditEntry> = STATEMENTS
        .iter()
        .enumerate()
        .map(|(i, (id, st))| AuditEntry::new(id, st, !matches!(i, 3 | 4 | 5 | 7 | 8 | 9)))
        .collect();

    let s_c = samples(d, n, start, |_| true, |u| 1.0 - c + 2.0 * c * u);
    let s_g = samples(d, n, start, |_| true, |u| -1.0 + (2.0 + c) * u);
    // images in E need x within about |E| exp(-2b/rho_D) of -1: sample the distance log-uniformly
    let lo_e = (e_len * (-4.0 * b / map.rho_d()).exp()).max(1e-15);
    // the fixed point -1 itself gets a tenth of the samples
    let s_e = samples(d, n, start, |th| !geo.in_i0(th), |u| if u < 0.1 { -1.0 } else { -1.0 + lo_e * (e_len / lo_e).powf((u - 0.1) / 0.9) });
    let s_einv = samples(d, n, start, |th| !geo.in_i0_plus_omega(th), |u| -1.0 + e_len * u);
    let s_a5 = samples(d, n, start, |th| !geo.in_i0(th), |u| e_top + (1.0 + c - e_top) * u);
    let in_gamma = |y: f64| (-1.0..=1.0 + c).contains(&y);
    let in_c = |y: f64| (1.0 - c..=1.0 + c).contains(&y);

    let (mut inverse_zero, mut inverse_total) = (0usize, 0usize);
    for &beta in &beta_grid {
        // T^d x C: A1, A13 and A14 contraction parts
        for (p, ev) in s_c.iter().zip(forward_evals(map, beta, &s_c)?) {
            for id in [0, 12, 13] {
                e[id].samples += 1;
            }
            let Some(ev) = ev else {
                e[0].fail(format!("escape from C at theta = {:?}, x = {}, beta = {beta}", p.theta, p.x));
                continue;
            };
            e[0].offer(ev.log_dx, k.log_alpha_c, k.log_alpha_c - ev.log_dx, w(p, beta, Channel::LogDx));
            let bd = k.log_big_s + k.log_alpha_c;
            for a in 0..d {
                let m = log_abs(ev.dtheta_dx_ratio[a]) + ev.log_dx;
                e[12].offer(m, bd, bd - m, w(p, beta, Channel::LogAbsDthetaDx { axis: a }));
            }
            let m = log_abs(ev.dxx_ratio) + ev.log_dx;
            e[13].offer(m, k.log_alpha_c, k.log_alpha_c - m, w(p, beta, Channel::LogAbsDxx));
        }
        // (T^d minus I0) x E with image in E: A2
        for (p, ev) in s_e.iter().zip(forward_evals(map, beta, &s_e)?) {
            match ev {
                Some(ev) if ev.x_next >= -1.0 && ev.x_next <= e_top => {
                    e[1].samples += 1;
                    e[1].offer(ev.log_dx, k.log_alpha_e, ev.log_dx - k.log_alpha_e, w(p, beta, Channel::LogDx));
                }
                _ => e[1].excluded += 1,
            }
        }
        // Gamma with image in Gamma: A3, A11, A12, A13, A14
        for (p, ev) in s_g.iter().zip(forward_evals(map, beta, &s_g)?) {
            let Some(ev) = ev.filter(|ev| in_gamma(ev.x_next)) else {
                for id in [2, 10, 11, 12, 13] {
                    e[id].excluded += 1;
                }
                continue;
            };
            for id in [2, 10, 11, 12, 13] {
                e[id].samples += 1;
            }
            let lo = ev.log_dx - k.log_alpha_l;
            let hi = k.log_alpha_u - ev.log_dx;
            if lo < hi {
                e[2].offer(ev.log_dx, k.log_alpha_l, lo, w(p, beta, Channel::LogDx));
            } else {
                e[2].offer(ev.log_dx, k.log_alpha_u, hi, w(p, beta, Channel::LogDx));
            }
            for a in 0..d {
                let m = log_abs(ev.dtheta[a]);
                e[10].offer(m, k.log_big_s, k.log_big_s - m, w(p, beta, Channel::LogAbsDtheta { axis: a }));
                let m = log_abs(ev.dtheta2[a]);
                let bd = 2.0 * k.log_big_s;
                e[11].offer(m, bd, bd - m, w(p, beta, Channel::LogAbsDtheta2 { axis: a }));
                let m = log_abs(ev.dtheta_dx_ratio[a]) + ev.log_dx;
                let bd = k.log_big_s + 2.0 * k.log_alpha_u;
                e[12].offer(m, bd, bd - m, w(p, beta, Channel::LogAbsDthetaDx { axis: a }));
            }
            let m = log_abs(ev.dxx_ratio) + ev.log_dx;
            let bd = 2.0 * k.log_alpha_u;
            e[13].offer(m, bd, bd - m, w(p, beta, Channel::LogAbsDxx));
        }
        // inverse map off I0 + omega on E: A15, A16
        for (p, ev) in s_einv.iter().zip(inverse_evals(map, beta, &s_einv)?) {
            let Some(ev) = ev else {
                e[14].excluded += 1;
                e[15].excluded += 1;
                continue;
            };
            e[14].samples += 1;
            e[15].samples += 1;
            inverse_zero += ev.dtheta_dx_ratio.iter().filter(|v| **v == 0.0).count();
            inverse_total += d;
            let m = log_abs(ev.dxx_ratio) + ev.log_dx;
            e[14].offer(m, -k.log_alpha_e, -k.log_alpha_e - m, w(p, beta, Channel::InverseLogAbsDxx));
            let bd = k.log_big_s - k.log_alpha_e;
            for a in 0..d {
                let m = log_abs(ev.dtheta_dx_ratio[a]) + ev.log_dx;
                e[15].offer(m, bd, bd - m, w(p, beta, Channel::InverseLogAbsDthetaDx { axis: a }));
            }
        }
        // A5
        let imgs: Vec<Option<f64>> = s_a5.par_iter().map(|p| map.step(beta, &p.theta, p.x, 1.0)).collect::<Result<_>>()?;
        for (p, y) in s_a5.iter().zip(imgs) {
            e[4].samples += 1;
            match y {
                Some(y) => {
                    let (m, bd) = if y - (1.0 - c) < 1.0 + c - y { (y - (1.0 - c), 1.0 - c) } else { (1.0 + c - y, 1.0 + c) };
                    e[4].offer(y, bd, m, w(p, beta, Channel::Image));
                    if !in_c(y) {
                        e[4].status = Status::Fail;
                    }
                }
                None => e[4].fail(format!("escape off I0 at theta = {:?}, x = {}, beta = {beta}", p.theta, p.x)),
            }
        }
        // A4 on grid nodes
        let nodes: Vec<Vec<f64>> = (0..cfg.grid_n.pow(d as u32)).map(|j| node_coords(j, cfg.grid_n, d)).collect();
        let res: Vec<(Option<f64>, Option<f64>)> = nodes
            .par_iter()
            .map(|th| Ok((map.step(beta, th, 1.0 + c, 1.0)?, map.step(beta, th, -1.0, 1.0)?)))
            .collect::<Result<_>>()?;
        for (th, (up, down)) in nodes.iter().zip(res) {
            e[3].samples += 2;
            let p = |x: f64| Sample { theta: th.clone(), x };
            // escapes run to -infinity and satisfy both inequalities
            if let Some(y) = up {
                e[3].offer(y, 1.0 + c, 1.0 + c - y, w(&p(1.0 + c), beta, Channel::Image));
            }
            if let Some(y) = down {
                e[3].offer(y, -1.0, -1.0 - y, w(&p(-1.0), beta, Channel::Image));
            }
        }
    }

    // A4 equalities at the equilibria hold up to integration error
    if let Some(m) = e[3].margin {
        e[3].status = if m >= -1e-9 { Status::Pass } else { Status::Fail };
        e[3].notes.push("equality at the equilibria accepted to 1e-9".into());
    }
    for id in [0, 1, 2, 4, 10, 11, 12, 13, 14, 15] {
        if e[id].status != Status::Fail {
            e[id].settle();
        }
    }
    e[15].notes.push(format!("mixed derivative exactly zero on {inverse_zero} of {inverse_total} evaluations"));
    if e[1].samples == 0 {
        e[1].notes.push("no sample kept its image in E".into());
    }

    // A6: nesting, convexity, subset of I0
    {
        let a6 = &mut e[5];
        a6.status = Status::Pass;
        let mut any = false;
        let mut violations = 0usize;
        for (i, j) in region.j0.iter().enumerate() {
            a6.samples += 1;
            if let Some(prev) = i.checked_sub(1).map(|p| &region.j0[p]) {
                let missing = prev.nodes.iter().filter(|n| j.nodes.binary_search(n).is_err()).count();
                violations += missing;
                if missing > 0 {
                    a6.fail(format!("{missing} nodes of J0({}) missing from J0({})", prev.beta, j.beta));
                }
            }
            if j.nodes.is_empty() {
                continue;
            }
            any = true;
            if !j.convex {
                a6.fail(format!("J0 not convex at beta = {}", j.beta));
            }
            if !j.within_i0 {
                a6.fail(format!("J0 leaves I0 at beta = {}", j.beta));
            }
        }
        a6.measured = Some(violations as f64);
        a6.bound = Some(0.0);
        if !any {
            a6.notes.push("J0 empty on the whole parameter grid; nesting holds vacuously".into());
        } else {
            a6.notes.push("closedness holds trivially at grid resolution".into());
        }
    }

    // A7: second theta derivative on J0 x C
    {
        let mut positive = true;
        let mut min_raw = f64::INFINITY;
        for j in &region.j0 {
            if j.nodes.is_empty() {
                continue;
            }
            let s: Vec<Sample> = (0..n)
                .map(|i| {
                    let h = halton(start + i, 2);
                    let node = j.nodes[((h[0] * j.nodes.len() as f64) as usize).min(j.nodes.len() - 1)];
                    Sample {
                        theta: node_coords(node, cfg.grid_n, d),
                        x: 1.0 - c + 2.0 * c * h[1],
                    }
                })
                .collect();
            for (p, ev) in s.iter().zip(forward_evals(map, j.beta, &s)?) {
                let Some(ev) = ev else {
                    e[6].excluded += 1;
                    continue;
                };
                e[6].samples += 1;
                for a in 0..d {
                    let v = ev.dtheta2[a];
                    positive &= v > 0.0;
                    min_raw = min_raw.min(v);
                    let m = signed_log(v);
                    e[6].offer(m, k.log_s, m - k.log_s, w(p, j.beta, Channel::LogDtheta2 { axis: a }));
                }
            }
        }
        e[6].settle();
        if e[6].samples > 0 {
            e[6].notes.push(format!("second theta derivative positive on all samples: {positive} (min {min_raw:e})"));
        } else {
            e[6].notes.push("J0 empty on the whole parameter grid".into());
        }
    }

    // A8 at beta = 0
    {
        let nodes: Vec<Vec<f64>> = (0..cfg.grid_n.pow(d as u32)).map(|j| node_coords(j, cfg.grid_n, d)).collect();
        let ys: Vec<Option<f64>> = nodes.par_iter().map(|th| map.step(0.0, th, 1.0 - c, 1.0)).collect::<Result<_>>()?;
        for (th, y) in nodes.iter().zip(ys) {
            e[7].samples += 1;
            let p = Sample { theta: th.clone(), x: 1.0 - c };
            match y {
                Some(y) => e[7].offer(y, 1.0 - c, y - (1.0 - c), w(&p, 0.0, Channel::Image)),
                None => e[7].fail(format!("escape at beta = 0, theta = {th:?}")),
            }
        }
        if e[7].status != Status::Fail {
            e[7].settle();
        }
    }

    // A9 just above beta+
    if bounds.plus_fired {
        let beta = (bounds.beta_plus + cfg.bounds_tol).min(bhi);
        let nodes: Vec<Vec<f64>> = (0..cfg.grid_n.pow(d as u32)).map(|j| node_coords(j, cfg.grid_n, d)).collect();
        let ys: Vec<Option<f64>> = nodes.par_iter().map(|th| map.step(beta, th, 1.0 + c, 1.0)).collect::<Result<_>>()?;
        let mut escaped = None;
        for (th, y) in nodes.iter().zip(ys) {
            e[8].samples += 1;
            let p = Sample { theta: th.clone(), x: 1.0 + c };
            match y {
                // smallest image wins, so rank by y + 1 and restate the margin afterwards
                Some(y) => e[8].offer(y, -1.0, y + 1.0, w(&p, beta, Channel::Image)),
                None => {
                    escaped.get_or_insert(th.clone());
                }
            }
        }
        e[8].notes.push(format!("evaluated at beta = {beta}, one bisection tolerance above beta+"));
        e[8].margin = e[8].measured.map(|y| -1.0 - y);
        if let Some(th) = escaped {
            e[8].status = Status::Pass;
            e[8].notes.push(format!("fibre over {th:?} escapes to -infinity"));
        } else {
            e[8].status = if e[8].measured.is_some_and(|m| m <= -1.0) { Status::Pass } else { Status::Fail };
        }
    } else {
        e[8].fail(format!("no fibre crosses -1 on the parameter range; beta+ is the range end {bhi}"));
    }

    // A10 across consecutive grid parameters
    {
        e[9].notes.push("forcing coefficient -b/(1-b^-1/2) h is non-positive".into());
        for pair in beta_grid.windows(2) {
            let (b1, b2) = (pair[0], pair[1]);
            let res: Vec<(Option<f64>, Option<f64>)> = s_g
                .par_iter()
                .map(|p| Ok((map.step(b1, &p.theta, p.x, 1.0)?, map.step(b2, &p.theta, p.x, 1.0)?)))
                .collect::<Result<_>>()?;
            for (p, r) in s_g.iter().zip(res) {
                e[9].samples += 1;
                match r {
                    (Some(y1), Some(y2)) => {
                        let diff = y2 - y1;
                        let tol = cfg.monotone_tol * (1.0 + y1.abs());
                        e[9].offer(diff, 0.0, tol - diff, w(p, b1, Channel::BetaDifference { beta_next: b2 }));
                    }
                    (Some(_), None) => e[9].excluded += 1,
                    (None, Some(_)) => e[9].fail(format!("escape at beta = {b1} but not at {b2}, theta = {:?}", p.theta)),
                    (None, None) => e[9].excluded += 1,
                }
            }
        }
        if e[9].status != Status::Fail {
            e[9].settle();
        }
        if beta_grid.len() < 2 {
            e[9].notes.push("single parameter value; nothing to compare".into());
        }
    }

    let gate = gate_report(&k, region.i0_fraction.max(f64::MIN_POSITIVE), &cfg.gate)?;
    Ok(AuditReport {
        constants,
        bounds,
        beta_grid,
        critical_region: region,
        entries: e,
        gate,
    })
}

/// Plain-text table of the report.
pub fn report_table(r: &AuditReport) -> String {
    use std::fmt::Write;
    let mut s = String::new();
    let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6e}"));
    let _ = writeln!(s, "{:<4} {:<14} {:>14} {:>14} {:>14}  statement", "id", "status", "measured", "bound", "margin");
    for e in &r.entries {
        let _ = writeln!(
            s,
            "{:<4} {:<14} {:>14} {:>14} {:>14}  {}",
            e.id,
            format!("{:?}", e.status),
            f(e.measured),
            f(e.bound),
            f(e.margin),
            e.statement
        );
    }
    let g = &r.gate;
    let _ = writeln!(s, "gate: sandwich {} (margins {:.4}, {:.4})", g.sandwich_holds, g.contraction_margin, g.expansion_margin);
    let _ = writeln!(s, "gate: |I0| = {:.6}, smallness {} (log margin {:.4})", g.i0_size, g.smallness_holds, g.smallness_log_margin);
    let _ = writeln!(s, "gate: nu exponent margin {:.4}, kappa {}, alpha0 {}", g.nu_log_margin, g.kappa, g.alpha0);
    s
}
