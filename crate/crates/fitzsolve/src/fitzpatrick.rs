//! Fitzpatrick functions, gaps and path-level residuals.
//!
//! `H(x, x*) = sup { <u, x*> + <x, u*> - <u, u*> : (u, u*) in gr A }`.
//! Closed forms are used where they exist; otherwise a finite graph sample
//! gives a lower bound, flagged as inexact.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, pairwise_sum, sub};
use crate::operators::{GraphPair, OperatorKind, OperatorSpec};
use crate::paths::{fmt_f64, BVPath, GridPath};

/// Relative slack on dual feasibility tests (`|x*_i| <= w_i`, `x* = 0`).
const DUAL_TOL: f64 = 1e-11;

/// Sampling budget for sup-defined quantities without closed form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub n: usize,
    pub seed: u64,
    /// Yosida parameter used to push box samples onto the graph.
    pub eps: f64,
}

impl Sampling {
    pub fn cube(dim: usize, half_width: f64, n: usize, seed: u64) -> Self {
        Sampling {
            lo: vec![-half_width; dim],
            hi: vec![half_width; dim],
            n,
            seed,
            eps: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitzValue {
    pub value: f64,
    pub exact: bool,
    pub witness: Option<GraphPair>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    pub gap: f64,
    pub exact: bool,
    pub witness: Option<GraphPair>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathGapMode {
    Homogeneous,
    Density,
}

/// Closed-form Fitzpatrick function, or `None` if the kind has none.
pub fn fitz_closed_form(a: &OperatorSpec, x: &[f64], xstar: &[f64]) -> Option<f64> {
    match &a.kind {
        OperatorKind::NormalConeBox { .. }
        | OperatorKind::NormalConeBall { .. }
        | OperatorKind::SubdiffIndicatorInterval { .. } => {
            if a.contains(x) {
                a.support(xstar)
            } else {
                Some(f64::INFINITY)
            }
        }
        OperatorKind::SubdiffAbsSum { weights } => {
            let mut s = 0.0;
            for ((xi, si), w) in x.iter().zip(xstar).zip(weights) {
                if si.abs() > w * (1.0 + DUAL_TOL) {
                    return Some(f64::INFINITY);
                }
                s += w * xi.abs();
            }
            Some(s)
        }
        OperatorKind::ScaledIdentity { c } => {
            if *c > 0.0 {
                let v: Vec<f64> = x.iter().zip(xstar).map(|(xi, si)| si + c * xi).collect();
                Some(dot(&v, &v) / (4.0 * c))
            } else if norm(xstar) <= DUAL_TOL {
                Some(0.0)
            } else {
                Some(f64::INFINITY)
            }
        }
        OperatorKind::LinearMonotone { matrix } => {
            let d = a.dim;
            let m = DMatrix::from_fn(d, d, |i, j| matrix[i][j]);
            let s = (&m + m.transpose()) * 0.5;
            let chol = s.cholesky()?;
            let v = nalgebra::DVector::from_iterator(
                d,
                (0..d).map(|i| xstar[i] + (0..d).map(|j| matrix[j][i] * x[j]).sum::<f64>()),
            );
            let w = chol.solve(&v);
            Some(0.25 * v.dot(&w))
        }
        OperatorKind::Sum { .. } => None,
    }
}

/// Sampled sup over graph pairs, with the maximizing pair.
pub fn fitz_sampled(pairs: &[GraphPair], x: &[f64], xstar: &[f64]) -> (f64, Option<GraphPair>) {
    let mut best = f64::NEG_INFINITY;
    let mut arg = None;
    for p in pairs {
        let v = dot(&p.u, xstar) + dot(x, &p.ustar) - dot(&p.u, &p.ustar);
        if v > best {
            best = v;
            arg = Some(p);
        }
    }
    (best, arg.cloned())
}

fn check_dims(a: &OperatorSpec, x: &[f64], xstar: &[f64]) -> Result<()> {
    for v in [x, xstar] {
        if v.len() != a.dim {
            return Err(Error::Dimension {
                expected: a.dim,
                got: v.len(),
            });
        }
    }
    Ok(())
}

/// `H_A(x, x*)`. Exact when a closed form exists; otherwise the sampled sup,
/// floored at `<x, x*>` (itself a lower bound of `H`), with `exact = false`.
pub fn fitz_pointwise(
    a: &OperatorSpec,
    x: &[f64],
    xstar: &[f64],
    sampling: Option<&Sampling>,
) -> Result<FitzValue> {
    check_dims(a, x, xstar)?;
    if let Some(value) = fitz_closed_form(a, x, xstar) {
        return Ok(FitzValue {
            value,
            exact: true,
            witness: None,
        });
    }
    let s = sampling.ok_or_else(|| Error::SamplingRequired(a.tag().into()))?;
    let pairs = a.graph_sample(&s.lo, &s.hi, s.n, s.eps, s.seed)?;
    let (sup, witness) = fitz_sampled(&pairs, x, xstar);
    Ok(FitzValue {
        value: sup.max(dot(x, xstar)),
        exact: false,
        witness,
    })
}

pub fn fitz_gap(
    a: &OperatorSpec,
    x: &[f64],
    xstar: &[f64],
    sampling: Option<&Sampling>,
) -> Result<GapReport> {
    let h = fitz_pointwise(a, x, xstar, sampling)?;
    Ok(GapReport {
        gap: h.value - dot(x, xstar),
        exact: h.exact,
        witness: h.witness,
    })
}

/// Graph membership through the gap. A sampled gap alone never certifies
/// membership; the resolvent fixed point `x = J_1(x + x*)` must hold as well.
pub fn membership_test(
    a: &OperatorSpec,
    x: &[f64],
    xstar: &[f64],
    tol: f64,
    sampling: Option<&Sampling>,
) -> Result<(bool, GapReport)> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter("tolerance must be positive".into()));
    }
    let report = fitz_gap(a, x, xstar, sampling)?;
    let ok = if report.exact {
        report.gap <= tol
    } else {
        let z: Vec<f64> = x.iter().zip(xstar).map(|(p, q)| p + q).collect();
        let j = a.resolvent(1.0, &z)?;
        report.gap <= tol && norm(&sub(x, &j)) <= tol
    };
    Ok((ok, report))
}

/// `H(x, x*) + H*(x*, x) - 2 <x, x*>`, with `H*` estimated by a sampled sup
/// over graph pairs, uniform pairs of the sampling box, and `(x, x*)` itself.
pub fn fenchel_gap(a: &OperatorSpec, x: &[f64], xstar: &[f64], sampling: &Sampling) -> Result<f64> {
    check_dims(a, x, xstar)?;
    let h = fitz_closed_form(a, x, xstar).ok_or_else(|| Error::SamplingRequired(a.tag().into()))?;
    if h == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    let mut cands: Vec<(Vec<f64>, Vec<f64>)> = a
        .graph_sample(
            &sampling.lo,
            &sampling.hi,
            sampling.n,
            sampling.eps,
            sampling.seed,
        )?
        .into_iter()
        .map(|p| (p.u, p.ustar))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed ^ 0x9e37_79b9_7f4a_7c15);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        sampling
            .lo
            .iter()
            .zip(&sampling.hi)
            .map(|(l, h)| l + (h - l) * rng.random::<f64>())
            .collect()
    };
    for _ in 0..sampling.n {
        let y = draw(&mut rng);
        let ys = draw(&mut rng);
        cands.push((y, ys));
    }
    cands.push((x.to_vec(), xstar.to_vec()));
    let mut conj = f64::NEG_INFINITY;
    for (y, ys) in &cands {
        let hy = fitz_closed_form(a, y, ys).unwrap_or(f64::INFINITY);
        if hy.is_finite() {
            conj = conj.max(dot(y, xstar) + dot(x, ys) - hy);
        }
    }
    Ok(h + conj - 2.0 * dot(x, xstar))
}

/// Per-step terms of the discrete path gap. The state is read at the right
/// end `x_{i+1}` of each step.
pub fn path_fitz_terms(
    a: &OperatorSpec,
    x: &GridPath,
    k: &BVPath,
    mode: PathGapMode,
    sampling: Option<&Sampling>,
) -> Result<Vec<f64>> {
    x.check_same_grid(k.grid())?;
    if x.dim() != a.dim || (k.steps() > 0 && k.dim() != a.dim) {
        return Err(Error::Dimension {
            expected: a.dim,
            got: x.dim(),
        });
    }
    if mode == PathGapMode::Homogeneous && !a.is_cone() {
        return Err(Error::NotACone);
    }
    let pairs = match (fitz_closed_form(a, x.value(0), x.value(0)), sampling) {
        (Some(_), _) => None,
        (None, Some(s)) => Some(a.graph_sample(&s.lo, &s.hi, s.n, s.eps, s.seed)?),
        (None, None) => return Err(Error::SamplingRequired(a.tag().into())),
    };
    let h = |u: &[f64], v: &[f64]| -> f64 {
        match &pairs {
            None => fitz_closed_form(a, u, v).unwrap(),
            Some(p) => fitz_sampled(p, u, v).0.max(dot(u, v)),
        }
    };
    let mut terms = Vec::with_capacity(k.steps());
    for i in 0..k.steps() {
        let xi = x.value(i + 1);
        let dk = k.increment(i);
        let t = match mode {
            PathGapMode::Homogeneous => h(xi, dk) - dot(xi, dk),
            PathGapMode::Density => {
                let dt = x.dt(i);
                let g: Vec<f64> = dk.iter().map(|v| v / dt).collect();
                (h(xi, &g) - dot(xi, &g)) * dt
            }
        };
        terms.push(t);
    }
    Ok(terms)
}

fn sum_extended(terms: &[f64]) -> f64 {
    if terms.contains(&f64::INFINITY) {
        f64::INFINITY
    } else {
        pairwise_sum(terms)
    }
}

/// Discrete Fitzpatrick residual of the pair `(x, k)`; `+inf` if any step is
/// infeasible.
pub fn path_fitz_gap(a: &OperatorSpec, x: &GridPath, k: &BVPath, mode: PathGapMode) -> Result<f64> {
    path_fitz_gap_with(a, x, k, mode, None)
}

pub fn path_fitz_gap_with(
    a: &OperatorSpec,
    x: &GridPath,
    k: &BVPath,
    mode: PathGapMode,
    sampling: Option<&Sampling>,
) -> Result<f64> {
    Ok(sum_extended(&path_fitz_terms(a, x, k, mode, sampling)?))
}

/// Default mode: homogeneous for cones, density otherwise.
pub fn default_mode(a: &OperatorSpec) -> PathGapMode {
    if a.is_cone() {
        PathGapMode::Homogeneous
    } else {
        PathGapMode::Density
    }
}

/// One row of a gap export.
#[derive(Debug, Clone, PartialEq)]
pub struct GapRecord {
    pub operator: String,
    pub x: Vec<f64>,
    pub xstar: Vec<f64>,
    pub report: GapReport,
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(";")
}

/// CSV with header `operator,x,xstar,gap,exact,witness_u,witness_ustar`;
/// vector fields are `;`-separated.
pub fn write_gap_csv<W: Write>(w: W, rows: &[GapRecord]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "operator",
        "x",
        "xstar",
        "gap",
        "exact",
        "witness_u",
        "witness_ustar",
    ])?;
    for r in rows {
        let (wu, ws) = match &r.report.witness {
            Some(p) => (join(&p.u), join(&p.ustar)),
            None => (String::new(), String::new()),
        };
        wr.write_record([
            r.operator.clone(),
            join(&r.x),
            join(&r.xstar),
            fmt_f64(r.report.gap),
            r.report.exact.to_string(),
            wu,
            ws,
        ])?;
    }
    wr.flush()?;
    Ok(())
}
