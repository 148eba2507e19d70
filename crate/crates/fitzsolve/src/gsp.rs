//! Generalized Skorohod problem `dx + A(x)(dt) ∋ dm`, `x(0) = x0`, on a grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitzpatrick::{default_mode, fitz_sampled, path_fitz_terms, PathGapMode};
use crate::linalg::{dist, dot, norm, pairwise_sum};
use crate::operators::{GraphPair, OperatorSpec};
use crate::paths::{BVPath, GridPath};

/// Largest admissible distance of `x0` from the closed domain.
pub const DOMAIN_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum Scheme {
    CatchingUp,
    YosidaPenalization { eps: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GspDiagnostics {
    pub sup_norm: f64,
    pub total_variation: f64,
    /// Largest per-step Fitzpatrick gap; `None` without a closed form.
    pub max_step_gap: Option<f64>,
    pub scheme: Scheme,
    pub max_dt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GspSolution {
    pub x: GridPath,
    pub k: BVPath,
    pub diagnostics: GspDiagnostics,
}

fn check_driver(m: &GridPath, dim: usize) -> Result<()> {
    if m.dim() != dim {
        return Err(Error::Dimension {
            expected: dim,
            got: m.dim(),
        });
    }
    if norm(m.value(0)) > 1e-12 {
        return Err(Error::Constraint("driver must start at 0".into()));
    }
    if m.values().iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("driver".into()));
    }
    Ok(())
}

fn diagnostics(a: &OperatorSpec, x: &GridPath, k: &BVPath, scheme: Scheme) -> GspDiagnostics {
    let max_step_gap = path_fitz_terms(a, x, k, default_mode(a), None)
        .ok()
        .map(|t| t.into_iter().fold(f64::NEG_INFINITY, f64::max).max(0.0));
    let max_dt = (0..x.steps()).map(|i| x.dt(i)).fold(0.0, f64::max);
    GspDiagnostics {
        sup_norm: x.sup_norm(),
        total_variation: k.total_variation(),
        max_step_gap,
        scheme,
        max_dt,
    }
}

/// Solves the problem on the grid of `m`.
///
/// Catching-up: `x_{i+1} = J_dt(z_i)` with `z_i = x0 + m_{i+1} - k_i`, and
/// `dk_i = z_i - x_{i+1}`, which lies in `dt * A(x_{i+1})` exactly.
/// Yosida penalization: `x_{i+1} + dt A_eps(x_{i+1}) = z_i`, solved in closed
/// form through `J_{eps + dt}`.
pub fn solve_gsp(
    a: &OperatorSpec,
    x0: &[f64],
    m: &GridPath,
    scheme: Scheme,
) -> Result<GspSolution> {
    check_driver(m, a.dim)?;
    let distance = a.domain_distance(x0)?;
    if distance > DOMAIN_TOL {
        return Err(Error::OutsideDomain { distance });
    }
    if let Scheme::YosidaPenalization { eps } = scheme {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::InvalidParameter(
                "penalization eps must be positive".into(),
            ));
        }
    }
    let d = a.dim;
    let n = m.steps();
    let mut xs = Vec::with_capacity(n + 1);
    let mut incs = Vec::with_capacity(n);
    xs.push(x0.to_vec());
    let mut k = vec![0.0; d];
    for i in 0..n {
        let dt = m.dt(i);
        let z: Vec<f64> = (0..d).map(|c| x0[c] + m.value(i + 1)[c] - k[c]).collect();
        let y = match scheme {
            Scheme::CatchingUp => a.resolvent(dt, &z)?,
            Scheme::YosidaPenalization { eps } => {
                let j = a.resolvent(eps + dt, &z)?;
                let s = dt / (eps + dt);
                z.iter()
                    .zip(&j)
                    .map(|(zc, jc)| zc - s * (zc - jc))
                    .collect()
            }
        };
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("state at step {i}")));
        }
        let dk: Vec<f64> = z.iter().zip(&y).map(|(p, q)| p - q).collect();
        for (kc, v) in k.iter_mut().zip(&dk) {
            *kc += v;
        }
        incs.push(dk);
        xs.push(y);
    }
    let x = GridPath::new(m.grid().to_vec(), xs)?;
    let k = BVPath::new(m.grid().to_vec(), incs)?;
    let diagnostics = diagnostics(a, &x, &k, scheme);
    Ok(GspSolution { x, k, diagnostics })
}

/// Reflection-map solution on `[0, inf)`:
/// `k(t_i) = -max(0, max_{j <= i} -(x0 + m_j))`.
pub fn skorohod_1d_oracle(x0: f64, m: &GridPath) -> Result<GspSolution> {
    if !(x0 >= 0.0) {
        return Err(Error::OutsideDomain { distance: -x0 });
    }
    check_driver(m, 1)?;
    let mut run: f64 = 0.0;
    let mut kv = Vec::with_capacity(m.grid().len());
    let mut xv = Vec::with_capacity(m.grid().len());
    for v in m.values() {
        let free = x0 + v[0];
        run = run.max(-free);
        let k = -run;
        kv.push(k);
        xv.push(vec![free - k]);
    }
    let incs = kv.windows(2).map(|w| vec![w[1] - w[0]]).collect();
    let x = GridPath::new(m.grid().to_vec(), xv)?;
    let k = BVPath::new(m.grid().to_vec(), incs)?;
    let a = OperatorSpec::half_space(1);
    let diagnostics = diagnostics(&a, &x, &k, Scheme::CatchingUp);
    Ok(GspSolution { x, k, diagnostics })
}

/// Location of the most negative windowed integral.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegralWitness {
    pub probe: usize,
    /// Window `(t_s, t_t]` given by node indices `s <= t`.
    pub s: usize,
    pub t: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GspReport {
    pub node_defect: f64,
    pub min_integral: f64,
    pub witness: Option<IntegralWitness>,
    pub path_gap: f64,
    pub path_gap_exact: bool,
    pub tolerance: f64,
    pub defect_ok: bool,
    pub integral_ok: bool,
    pub gap_ok: bool,
}

impl GspReport {
    pub fn passed(&self) -> bool {
        self.defect_ok && self.integral_ok && self.gap_ok
    }
}

/// Most negative contiguous window sum (the empty window counts as 0).
pub(crate) fn min_window(terms: &[f64]) -> (f64, usize, usize) {
    let mut best = 0.0;
    let (mut bs, mut bt) = (0, 0);
    let mut cur = 0.0;
    let mut start = 0;
    for (r, &c) in terms.iter().enumerate() {
        if cur > 0.0 {
            cur = 0.0;
            start = r;
        }
        cur += c;
        if cur < best {
            best = cur;
            bs = start;
            bt = r + 1;
        }
    }
    (best, bs, bt)
}

/// Min over probes `(z, z*)` and windows of
/// `sum_{s <= r < t} <x_{r+1} - z, dk_r - z* dt_r>`.
pub fn probe_integrals(x: &GridPath, k: &BVPath, probes: &[GraphPair]) -> Option<IntegralWitness> {
    let mut best: Option<IntegralWitness> = None;
    for (p, pair) in probes.iter().enumerate() {
        let terms: Vec<f64> = (0..k.steps())
            .map(|r| {
                let dt = x.dt(r);
                let xr = x.value(r + 1);
                let dk = k.increment(r);
                (0..xr.len())
                    .map(|c| (xr[c] - pair.u[c]) * (dk[c] - pair.ustar[c] * dt))
                    .sum()
            })
            .collect();
        let (v, s, t) = min_window(&terms);
        if best.as_ref().is_none_or(|b| v < b.value) {
            best = Some(IntegralWitness {
                probe: p,
                s,
                t,
                value: v,
            });
        }
    }
    best
}

/// Checks a candidate `(x, k)` against the node identity, the windowed
/// monotonicity integrals over `probes`, and the discrete path gap. When the
/// operator has no closed form the gap is the sampled sup over `probes`.
pub fn verify_gsp(
    a: &OperatorSpec,
    x0: &[f64],
    m: &GridPath,
    x: &GridPath,
    k: &BVPath,
    probes: &[GraphPair],
) -> Result<GspReport> {
    if probes.is_empty() {
        return Err(Error::InvalidParameter("verify_gsp needs probes".into()));
    }
    check_driver(m, a.dim)?;
    x.check_same_grid(m.grid())?;
    x.check_same_grid(k.grid())?;
    let kv = k.values();
    let mut defect: f64 = 0.0;
    for i in 0..m.grid().len() {
        let xi = x.value(i);
        let lhs: Vec<f64> = (0..a.dim).map(|c| xi[c] + kv[i][c]).collect();
        let rhs: Vec<f64> = (0..a.dim).map(|c| x0[c] + m.value(i)[c]).collect();
        defect = defect.max(dist(&lhs, &rhs));
    }
    let witness = probe_integrals(x, k, probes);
    let min_integral = witness.as_ref().map_or(0.0, |w| w.value);
    let (path_gap, exact) = path_gap_over(a, x, k, probes)?;
    let tolerance = 1e-7 * (1.0 + m.sup_norm() + k.total_variation());
    Ok(GspReport {
        node_defect: defect,
        min_integral,
        witness,
        path_gap,
        path_gap_exact: exact,
        tolerance,
        defect_ok: defect <= tolerance,
        integral_ok: min_integral >= -tolerance,
        gap_ok: path_gap <= tolerance,
    })
}

/// Discrete path gap in the default mode, exact when a closed form exists and
/// otherwise the sampled sup over `probes` (floored at `<x, x*>` per step).
pub fn path_gap_over(
    a: &OperatorSpec,
    x: &GridPath,
    k: &BVPath,
    probes: &[GraphPair],
) -> Result<(f64, bool)> {
    let mode = default_mode(a);
    match path_fitz_terms(a, x, k, mode, None) {
        Ok(t) => Ok((sum_ext(&t), true)),
        Err(Error::SamplingRequired(tag)) => {
            if probes.is_empty() {
                return Err(Error::SamplingRequired(tag));
            }
            let mut t = Vec::with_capacity(k.steps());
            for i in 0..k.steps() {
                let xi = x.value(i + 1);
                let dt = x.dt(i);
                let g: Vec<f64> = k.increment(i).iter().map(|v| v / dt).collect();
                let h = fitz_sampled(probes, xi, &g).0.max(dot(xi, &g));
                let term = h - dot(xi, &g);
                t.push(if mode == PathGapMode::Density {
                    term * dt
                } else {
                    term
                });
            }
            Ok((sum_ext(&t), false))
        }
        Err(e) => Err(e),
    }
}

fn sum_ext(t: &[f64]) -> f64 {
    if t.contains(&f64::INFINITY) {
        f64::INFINITY
    } else {
        pairwise_sum(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    /// `max (|x|_T^2 + TV(k)) / (1 + |x0|^2)`.
    pub c_apriori: f64,
    /// `max |x - x'|_T / ((1 + |x0| + |x0'|)(|x0 - x0'| + |m - m'|_T^{1/2}))`;
    /// `None` for a family with fewer than two distinguishable cases.
    pub c_holder: Option<f64>,
}

fn has_interior(a: &OperatorSpec) -> bool {
    match a.box_bounds() {
        Some((lo, hi)) => lo.iter().zip(&hi).all(|(l, h)| l < h),
        None => matches!(
            a.kind,
            crate::operators::OperatorKind::NormalConeBall { .. }
        ),
    }
}

/// Empirical constants of the a priori and Hölder estimates over a family of
/// `(x0, m)` cases sharing one grid, solved by catching-up.
pub fn estimate_probe(a: &OperatorSpec, cases: &[(Vec<f64>, GridPath)]) -> Result<EstimateReport> {
    if !has_interior(a) {
        return Err(Error::InvalidParameter(
            "estimate harness needs a box or ball with nonempty interior".into(),
        ));
    }
    if cases.is_empty() {
        return Err(Error::InvalidParameter("no cases".into()));
    }
    let sols: Vec<GspSolution> = cases
        .par_iter()
        .map(|(x0, m)| solve_gsp(a, x0, m, Scheme::CatchingUp))
        .collect::<Result<_>>()?;
    let mut c_apriori: f64 = 0.0;
    for ((x0, _), s) in cases.iter().zip(&sols) {
        let sup = s.x.sup_norm();
        c_apriori = c_apriori.max((sup * sup + s.k.total_variation()) / (1.0 + dot(x0, x0)));
    }
    let mut c_holder: Option<f64> = None;
    for i in 0..cases.len() {
        for j in (i + 1)..cases.len() {
            let (x0, m) = &cases[i];
            let (y0, n) = &cases[j];
            let dm = m.sup_dist(n)?;
            let d0 = dist(x0, y0);
            let denom = (1.0 + norm(x0) + norm(y0)) * (d0 + dm.sqrt());
            if denom == 0.0 {
                continue;
            }
            let r = sols[i].x.sup_dist(&sols[j].x)? / denom;
            c_holder = Some(c_holder.map_or(r, |c| c.max(r)));
        }
    }
    Ok(EstimateReport {
        c_apriori,
        c_holder,
    })
}

/// Least-squares slope of `log |x - x_eps|_T` against `log |m - m_eps|_T` for
/// drivers `m + eps * w`, all from the same `x0`.
pub fn holder_slope(
    a: &OperatorSpec,
    x0: &[f64],
    m: &GridPath,
    w: &GridPath,
    eps: &[f64],
) -> Result<f64> {
    let base = solve_gsp(a, x0, m, Scheme::CatchingUp)?;
    let pts: Vec<(f64, f64)> = eps
        .par_iter()
        .map(|&e| {
            let mp = m.combine(1.0, w, e)?;
            let s = solve_gsp(a, x0, &mp, Scheme::CatchingUp)?;
            Ok((m.sup_dist(&mp)?.ln(), base.x.sup_dist(&s.x)?.ln()))
        })
        .collect::<Result<_>>()?;
    let pts: Vec<(f64, f64)> = pts
        .into_iter()
        .filter(|(u, v)| u.is_finite() && v.is_finite())
        .collect();
    if pts.len() < 2 {
        return Err(Error::InvalidParameter(
            "need two nondegenerate perturbations".into(),
        ));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Ok(sxy / sxx)
}
