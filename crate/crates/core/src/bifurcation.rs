//! Locating the collision parameter of the invariant graphs and telling
//! smooth from non-smooth collisions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::FieldKind;
use crate::fractal::{box_count, default_epsilons, graph_point_cloud, CloudConfig};
use crate::graphs::{gap_stats, lyapunov_along_orbit, pullback_from, GraphConfig, GraphSample, PullbackOutcome, Role};
use crate::return_map::SectionMap;
use crate::torus::TorusPoint;

/// Orbit lengths for the Lyapunov estimates along a trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrbitLyapunovConfig {
    pub chains: usize,
    pub per_chain: usize,
    pub settle: usize,
}

impl Default for OrbitLyapunovConfig {
    fn default() -> Self {
        OrbitLyapunovConfig {
            chains: 16,
            per_chain: 128,
            settle: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BisectionConfig {
    pub tol_beta: f64,
    /// Attractor may sit this far below the repeller and still count as ordered.
    pub order_tol: f64,
    /// Interior points, at multiples of a quarter of the bracket, checked
    /// for monotonicity before bisecting.
    pub probe_quarters: bool,
    pub graph: GraphConfig,
    pub lyapunov: OrbitLyapunovConfig,
}

impl Default for BisectionConfig {
    fn default() -> Self {
        BisectionConfig {
            tol_beta: 1e-6,
            order_tol: 1e-9,
            probe_quarters: true,
            graph: GraphConfig::default(),
            lyapunov: OrbitLyapunovConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaRecord {
    pub beta: f64,
    pub graphs_exist: bool,
    /// Why the predicate failed.
    pub reason: Option<String>,
    pub gap_min: Option<f64>,
    pub gap_median: Option<f64>,
    pub lambda_attractor: Option<f64>,
    pub lambda_repeller: Option<f64>,
    pub sweeps_attractor: Option<usize>,
    pub sweeps_repeller: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BisectionTrace {
    pub brackets: Vec<(f64, f64)>,
    /// In evaluation order.
    pub records: Vec<BetaRecord>,
    pub beta_c: f64,
    pub tol: f64,
}

/// Graphs at one parameter, with the predicate outcome.
#[derive(Debug, Clone)]
pub struct BetaEvaluation {
    pub record: BetaRecord,
    pub attractor: Option<GraphSample>,
    pub repeller: Option<GraphSample>,
}

fn pull(
    map: &SectionMap,
    beta: f64,
    role: Role,
    warm: Option<&GraphSample>,
    cfg: &GraphConfig,
) -> Result<std::result::Result<GraphSample, String>> {
    match pullback_from(map, beta, role, warm, cfg) {
        Ok(PullbackOutcome::Converged(g)) => Ok(Ok(g)),
        Ok(PullbackOutcome::Escaped { iteration, node }) => {
            Ok(Err(format!("{role:?} pullback left the section at sweep {iteration}, node {node}")))
        }
        Err(Error::NotConverged { iterations, last_change }) => Ok(Err(format!(
            "{role:?} pullback not converged after {iterations} sweeps (change {last_change:e})"
        ))),
        Err(e) => Err(e),
    }
}

/// Both graphs and the existence predicate at `beta`. `warm` must come from
/// a smaller parameter: attractors only move down and repellers only up.
pub fn evaluate_beta(
    map: &SectionMap,
    beta: f64,
    warm: Option<(&GraphSample, &GraphSample)>,
    cfg: &BisectionConfig,
) -> Result<BetaEvaluation> {
    let mut rec = BetaRecord {
        beta,
        graphs_exist: false,
        reason: None,
        gap_min: None,
        gap_median: None,
        lambda_attractor: None,
        lambda_repeller: None,
        sweeps_attractor: None,
        sweeps_repeller: None,
    };
    let a = pull(map, beta, Role::Attractor, warm.map(|w| w.0), &cfg.graph)?;
    let a = match a {
        Ok(g) => g,
        Err(why) => {
            rec.reason = Some(why);
            return Ok(BetaEvaluation { record: rec, attractor: None, repeller: None });
        }
    };
    rec.sweeps_attractor = Some(a.iterations_used);
    let r = pull(map, beta, Role::Repeller, warm.map(|w| w.1), &cfg.graph)?;
    let r = match r {
        Ok(g) => g,
        Err(why) => {
            rec.reason = Some(why);
            return Ok(BetaEvaluation { record: rec, attractor: Some(a), repeller: None });
        }
    };
    rec.sweeps_repeller = Some(r.iterations_used);
    let st = gap_stats(&a, &r)?;
    rec.gap_min = Some(st.gap_min);
    rec.gap_median = Some(st.gap_median);
    let l = cfg.lyapunov;
    // orbits started on an interpolated graph may still leave near a collision
    let orbit = |g: &GraphSample| match lyapunov_along_orbit(map, g, l.chains, l.per_chain, l.settle) {
        Ok(v) => Ok(Some(v.lambda_flow)),
        Err(e) if e.is_numerical() => {
            log::warn!("orbit exponent at beta = {beta}: {e}");
            Ok(None)
        }
        Err(e) => Err(e),
    };
    rec.lambda_attractor = orbit(&a)?;
    rec.lambda_repeller = orbit(&r)?;
    if st.gap_min < -cfg.order_tol {
        rec.reason = Some(format!("graphs cross (min gap {:e})", st.gap_min));
    } else {
        rec.graphs_exist = true;
    }
    Ok(BetaEvaluation { record: rec, attractor: Some(a), repeller: Some(r) })
}

/// Bisection on the existence of ordered attractor and repeller graphs.
///
/// Parameters are dyadic points `lo + (hi - lo) j / 2^k` of the starting
/// bracket, so every step halves the bracket exactly and probe results are
/// reused.
pub fn locate_beta_c(map: &SectionMap, range: (f64, f64), cfg: &BisectionConfig) -> Result<BisectionTrace> {
    let (lo, hi) = range;
    if !(lo < hi) {
        return Err(Error::Bracket(format!("need lo < hi, got [{lo}, {hi}]")));
    }
    if !(cfg.tol_beta > 0.0) {
        return Err(Error::param("tol_beta", "must be positive"));
    }
    let width = hi - lo;
    let at = |j: u64, k: u32| lo + width * (j as f64) / ((1u64 << k) as f64);

    let mut records = Vec::new();
    // results keyed by position in units of the finest level used so far
    let mut seen: BTreeMap<(u64, u32), bool> = BTreeMap::new();
    let mut warm: Option<(f64, GraphSample, GraphSample)> = None;

    let mut eval = |j: u64, k: u32, records: &mut Vec<BetaRecord>, warm: &mut Option<(f64, GraphSample, GraphSample)>| -> Result<bool> {
        // reduce to lowest terms so probes and bisection points coincide
        let (mut j, mut k) = (j, k);
        while k > 0 && j % 2 == 0 {
            j /= 2;
            k -= 1;
        }
        if let Some(&v) = seen.get(&(j, k)) {
            return Ok(v);
        }
        let beta = at(j, k);
        let w = warm.as_ref().filter(|w| w.0 < beta).map(|w| (&w.1, &w.2));
        let ev = evaluate_beta(map, beta, w, cfg)?;
        let ok = ev.record.graphs_exist;
        log::info!("beta = {beta}: graphs exist = {ok}");
        records.push(ev.record);
        if ok
            && warm.as_ref().is_none_or(|w| w.0 < beta) {
                *warm = Some((beta, ev.attractor.unwrap(), ev.repeller.unwrap()));
            }
        seen.insert((j, k), ok);
        Ok(ok)
    };

    if !eval(0, 0, &mut records, &mut warm)? {
        return Err(Error::Bracket(format!("no ordered graphs at range start {lo}")));
    }
    if cfg.probe_quarters {
        let mut failed_at: Option<f64> = None;
        for q in 1..4 {
            let ok = eval(q, 2, &mut records, &mut warm)?;
            let beta = at(q, 2);
            match (ok, failed_at) {
                (false, None) => failed_at = Some(beta),
                (true, Some(f)) => {
                    return Err(Error::NonMonotone(format!("graphs fail at {f} but exist at {beta}")));
                }
                _ => {}
            }
        }
    }
    if eval(1, 0, &mut records, &mut warm)? {
        return Err(Error::Bracket(format!("ordered graphs still exist at range end {hi}")));
    }

    let (mut a, mut b, mut k) = (0u64, 1u64, 0u32);
    let mut brackets = vec![(lo, hi)];
    while at(b, k) - at(a, k) > cfg.tol_beta && k < 60 {
        a *= 2;
        b *= 2;
        k += 1;
        let mid = a + 1;
        if eval(mid, k, &mut records, &mut warm)? {
            a = mid;
        } else {
            b = mid;
        }
        brackets.push((at(a, k), at(b, k)));
    }
    let (bl, bh) = *brackets.last().unwrap();
    Ok(BisectionTrace {
        brackets,
        records,
        beta_c: 0.5 * (bl + bh),
        tol: cfg.tol_beta,
    })
}

/// Trace checks: monotone predicate in `beta`, signs of the exponents where
/// graphs exist, exact halving. Returns human-readable violations.
pub fn trace_violations(trace: &BisectionTrace) -> Vec<String> {
    let mut out = Vec::new();
    let mut sorted: Vec<&BetaRecord> = trace.records.iter().collect();
    sorted.sort_by(|a, b| a.beta.total_cmp(&b.beta));
    let mut first_fail: Option<f64> = None;
    for r in &sorted {
        match (r.graphs_exist, first_fail) {
            (false, None) => first_fail = Some(r.beta),
            (true, Some(f)) => out.push(format!("graphs exist at {} above failure at {f}", r.beta)),
            _ => {}
        }
        if let (true, Some(la), Some(lr)) = (r.graphs_exist, r.lambda_attractor, r.lambda_repeller) {
            if !(la < 0.0 && lr > 0.0) {
                out.push(format!("exponent signs wrong at {}: attractor {la}, repeller {lr}", r.beta));
            }
        }
    }
    for w in trace.brackets.windows(2) {
        let (w0, w1) = (w[0].1 - w[0].0, w[1].1 - w[1].0);
        if (w1 - 0.5 * w0).abs() > 1e-12 * w0.abs().max(1.0) {
            out.push(format!("bracket width {w1} is not half of {w0}"));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BetaBoundsConfig {
    pub c: f64,
    pub grid_n: usize,
    pub tol: f64,
}

impl Default for BetaBoundsConfig {
    fn default() -> Self {
        BetaBoundsConfig {
            c: 0.2,
            grid_n: 256,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BetaBounds {
    pub beta_minus: f64,
    pub beta_plus: f64,
    /// False when the predicate never fired in the range; the bound is then the range end.
    pub minus_fired: bool,
    pub plus_fired: bool,
}

/// Bisection on the two defining predicates over the section grid:
/// `beta-` is the first sampled parameter where some fibre sends `1 - c`
/// into `E`, `beta+` the last sampled one where every fibre keeps `1 + c`
/// above `-1`. Both are within `tol` of the true values.
pub fn estimate_beta_bounds(map: &SectionMap, cfg: &BetaBoundsConfig) -> Result<BetaBounds> {
    let b = match &map.flow.family.kind {
        FieldKind::RadialLogistic { b, .. } => *b,
        _ => return Err(Error::WrongFamily("radial_logistic")),
    };
    if !(cfg.c > 0.0 && cfg.c < 1.0) || cfg.grid_n == 0 || !(cfg.tol > 0.0) {
        return Err(Error::param("beta_bounds", "need 0 < c < 1, grid_n > 0, tol > 0"));
    }
    let e_top = -1.0 + (-b / (2.0 * map.rho_d())).exp();
    let d = map.d();
    let nodes: Vec<Vec<f64>> = (0..cfg.grid_n.pow(d as u32))
        .map(|j| crate::graphs::node_coords(j, cfg.grid_n, d))
        .collect();
    let image = |beta: f64, x: f64| -> Result<Vec<f64>> {
        use rayon::prelude::*;
        nodes
            .par_iter()
            .map(|th| Ok(map.step(beta, th, x, 1.0)?.unwrap_or(f64::NEG_INFINITY)))
            .collect()
    };
    let minus_pred = |beta: f64| -> Result<bool> { Ok(image(beta, 1.0 - cfg.c)?.iter().any(|v| *v <= e_top)) };
    let plus_pred = |beta: f64| -> Result<bool> { Ok(image(beta, 1.0 + cfg.c)?.iter().all(|v| *v >= -1.0)) };

    let (lo, hi) = map.flow.family.beta_range;
    // bracket (last false, first true) of an increasing predicate; None if it never fires
    let first_true = |p: &dyn Fn(f64) -> Result<bool>| -> Result<Option<(f64, f64)>> {
        if p(lo)? {
            return Ok(Some((lo, lo)));
        }
        if !p(hi)? {
            return Ok(None);
        }
        let (mut a, mut c) = (lo, hi);
        while c - a > cfg.tol {
            let m = 0.5 * (a + c);
            if p(m)? {
                c = m;
            } else {
                a = m;
            }
        }
        Ok(Some((a, c)))
    };
    let halve = |p: &dyn Fn(f64) -> Result<bool>, (a, c): (f64, f64)| -> Result<(f64, f64)> {
        let m = 0.5 * (a + c);
        Ok(if p(m)? { (a, m) } else { (m, c) })
    };
    let not_plus = |beta: f64| -> Result<bool> { Ok(!plus_pred(beta)?) };
    let mut minus = first_true(&minus_pred)?;
    let mut plus = first_true(&not_plus)?;
    // failing the second predicate implies the first fires, so the true bounds
    // are ordered; shrink both brackets until the estimates agree with that
    if let (Some(mut m), Some(mut q)) = (minus, plus) {
        while m.1 > q.0 && q.1 - q.0 > 1e-12 * q.1.abs().max(1.0) {
            m = halve(&minus_pred, m)?;
            q = halve(&not_plus, q)?;
        }
        // below that width the order is integrator noise: the thresholds coincide
        m.1 = m.1.min(q.0);
        minus = Some(m);
        plus = Some(q);
    }
    let (beta_minus, minus_fired) = minus.map_or((hi, false), |m| (m.1, true));
    let (beta_plus, plus_fired) = plus.map_or((hi, false), |q| (q.0, true));
    Ok(BetaBounds {
        beta_minus,
        beta_plus,
        minus_fired,
        plus_fired,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Smooth,
    NonSmoothSignature,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifyConfig {
    /// Ladder offsets below `beta_c`, as fractions of `scale`.
    pub ladder: Vec<f64>,
    /// Bracket scale; the width of the bisection range.
    pub scale: f64,
    pub gap_ratio_min: f64,
    pub dim_excess: f64,
    pub lambda_fraction: f64,
    pub n_points: usize,
    pub settle: usize,
    pub graph: GraphConfig,
    pub lyapunov: OrbitLyapunovConfig,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        ClassifyConfig {
            ladder: vec![1e-2, 1e-3, 1e-4],
            scale: 1.0,
            gap_ratio_min: 10.0,
            dim_excess: 0.3,
            lambda_fraction: 0.05,
            n_points: 100_000,
            settle: 50,
            graph: GraphConfig::default(),
            lyapunov: OrbitLyapunovConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LadderPoint {
    pub epsilon: f64,
    pub beta: f64,
    pub gap_min: f64,
    pub gap_median: f64,
    pub gap_ratio: f64,
    pub argmin_theta: TorusPoint,
    pub lambda_attractor: f64,
    pub lambda_repeller: f64,
    pub box_dimension: f64,
    pub box_dimension_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BifurcationClassification {
    pub verdict: Verdict,
    pub beta_c: f64,
    pub beta_reference: f64,
    pub lambda_reference: f64,
    pub points: Vec<LadderPoint>,
    pub gap_ratio_met: bool,
    pub dimension_met: bool,
    pub lambda_bounded_away: bool,
}

/// Evidence at `beta_c - eps * scale` for each ladder entry (coarsest first)
/// and the verdict from the finest one.
pub fn classify(map: &SectionMap, beta_c: f64, cfg: &ClassifyConfig) -> Result<BifurcationClassification> {
    if cfg.ladder.is_empty() || cfg.ladder.iter().any(|e| !(*e > 0.0)) || !(cfg.scale > 0.0) {
        return Err(Error::param("ladder/scale", "need positive ladder entries and scale"));
    }
    let mut ladder = cfg.ladder.clone();
    ladder.sort_by(|a, b| b.total_cmp(a));
    let bc = BisectionConfig {
        graph: cfg.graph,
        lyapunov: cfg.lyapunov,
        order_tol: f64::INFINITY,
        ..Default::default()
    };
    let (lo, _) = map.flow.family.beta_range;
    let beta_ref = if lo <= 0.0 { 0.0 } else { lo };
    let reference = evaluate_beta(map, beta_ref, None, &bc)?;
    let lambda_reference = reference
        .record
        .lambda_attractor
        .ok_or(Error::NotConverged { iterations: cfg.graph.n_iter, last_change: f64::NAN })?;

    let d = map.d();
    let eps_box = default_epsilons(d);
    let cloud = CloudConfig {
        n_points: cfg.n_points,
        settle: cfg.settle,
        section_c: cfg.graph.section_c,
        ..Default::default()
    };
    let mut points = Vec::new();
    let mut warm: Option<(GraphSample, GraphSample)> = None;
    for &eps in &ladder {
        let beta = beta_c - eps * cfg.scale;
        let ev = evaluate_beta(map, beta, warm.as_ref().map(|w| (&w.0, &w.1)), &bc)?;
        let (a, r) = match (ev.attractor, ev.repeller) {
            (Some(a), Some(r)) => (a, r),
            _ => {
                return Err(Error::NotConverged {
                    iterations: cfg.graph.n_iter,
                    last_change: f64::NAN,
                })
            }
        };
        let st = gap_stats(&a, &r)?;
        let pc = graph_point_cloud(map, &a, &cloud)?;
        let bx = box_count(&pc, &eps_box, None)?;
        points.push(LadderPoint {
            epsilon: eps,
            beta,
            gap_min: st.gap_min,
            gap_median: st.gap_median,
            gap_ratio: if st.gap_min > 0.0 { st.gap_median / st.gap_min } else { f64::INFINITY },
            argmin_theta: st.argmin_theta,
            lambda_attractor: ev.record.lambda_attractor.unwrap_or(f64::NAN),
            lambda_repeller: ev.record.lambda_repeller.unwrap_or(f64::NAN),
            box_dimension: bx.slope,
            box_dimension_stderr: bx.slope_stderr,
        });
        warm = Some((a, r));
    }
    let fin = points.last().unwrap();
    let gap_ratio_met = fin.gap_ratio >= cfg.gap_ratio_min;
    let dimension_met = fin.box_dimension >= d as f64 + cfg.dim_excess;
    let lambda_bounded_away = fin.lambda_attractor.abs() >= cfg.lambda_fraction * lambda_reference.abs();
    let verdict = if gap_ratio_met && dimension_met && lambda_bounded_away {
        Verdict::NonSmoothSignature
    } else if !gap_ratio_met && !lambda_bounded_away {
        Verdict::Smooth
    } else {
        Verdict::Inconclusive
    };
    Ok(BifurcationClassification {
        verdict,
        beta_c,
        beta_reference: beta_ref,
        lambda_reference,
        points,
        gap_ratio_met,
        dimension_met,
        lambda_bounded_away,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::ForcedFieldFamily;
    use crate::flow::{IntegratorConfig, SkewFlow};
    use crate::torus::RotationVector;

    fn autonomous() -> SectionMap {
        let fam = ForcedFieldFamily::autonomous(-1.0, 1.0, -2.0, (0.0, 1.0)).unwrap();
        let flow = SkewFlow::new(fam.clone(), RotationVector::golden_pi(), IntegratorConfig::for_family(&fam)).unwrap();
        SectionMap::new(flow, 0.0).unwrap()
    }

    #[test]
    fn autonomous_collision_coarse() {
        let cfg = BisectionConfig {
            tol_beta: 1e-3,
            graph: GraphConfig { grid_n: 16, n_iter: 200_000, ..Default::default() },
            ..Default::default()
        };
        let tr = locate_beta_c(&autonomous(), (0.0, 1.0), &cfg).unwrap();
        assert!((tr.beta_c - 0.5).abs() <= 1e-3, "{}", tr.beta_c);
        assert!(trace_violations(&tr).is_empty(), "{:?}", trace_violations(&tr));
        for w in tr.brackets.windows(2) {
            assert!(w[1].0 >= w[0].0 && w[1].1 <= w[0].1);
        }
    }

    #[test]
    fn bracket_errors() {
        let cfg = BisectionConfig {
            tol_beta: 1e-2,
            graph: GraphConfig { grid_n: 16, n_iter: 100_000, ..Default::default() },
            ..Default::default()
        };
        assert!(matches!(locate_beta_c(&autonomous(), (0.0, 0.3), &cfg), Err(Error::Bracket(_))));
        assert!(matches!(locate_beta_c(&autonomous(), (0.7, 1.0), &cfg), Err(Error::Bracket(_))));
    }

    #[test]
    fn beta_bounds_need_radial_family() {
        assert!(matches!(
            estimate_beta_bounds(&autonomous(), &BetaBoundsConfig::default()),
            Err(Error::WrongFamily(_))
        ));
    }
}
